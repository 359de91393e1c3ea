#include <doctest.h>

#include <numbers>

#include "helpers.hpp"
#include "rei/error.hpp"
#include "rei/pipeline.hpp"
#include "rei/synth_gen.hpp"

using namespace rei;
using namespace rei::synth;

namespace {

double image_sum(const std::vector<double>& img) {
  double s = 0.0;
  for (double v : img) s += v;
  return s;
}

SyntheticScanConfig roomy(std::uint64_t seed) {
  SyntheticScanConfig c;
  c.scan_id = "roomy";
  c.width = c.height = 160;
  c.n_frames = 360;
  c.omega_step = 1.0;
  c.n_spots = 40;
  c.ring_radii = {30.0, 45.0};
  c.seed = seed;
  return c;
}

}  // namespace

TEST_CASE("same seed gives bit-identical scans") {
  const auto cfg = testutil::small_config(5);
  const auto a = generate_scan(cfg);
  const auto b = generate_scan(cfg);
  REQUIRE(a.scan.size() == b.scan.size());
  for (std::size_t i = 0; i < a.scan.size(); ++i) CHECK(a.scan.raw_frame(i).image.pixels == b.scan.raw_frame(i).image.pixels);
  CHECK(a.truth.to_json() == b.truth.to_json());

  auto other = cfg;
  other.noise_seed += 1;
  const auto c = generate_scan(other);
  CHECK(c.truth.to_json() == a.truth.to_json());
  bool differs = false;
  for (std::size_t i = 0; i < a.scan.size() && !differs; ++i)
    differs = a.scan.raw_frame(i).image.pixels != c.scan.raw_frame(i).image.pixels;
  CHECK(differs);
}

TEST_CASE("flux scale 2 doubles every rendered amplitude") {
  auto cfg = testutil::small_config(6);
  const auto a = generate_scan(cfg);
  cfg.flux_scale = {2.0};
  const auto b = generate_scan(cfg);
  std::size_t n = 0;
  for (std::size_t f = 0; f < a.truth.frames.size(); ++f) {
    const auto& sa = a.truth.frames[f].spots;
    const auto& sb = b.truth.frames[f].spots;
    REQUIRE(sa.size() == sb.size());
    for (std::size_t i = 0; i < sa.size(); ++i) {
      CHECK(sb[i].spot_id == sa[i].spot_id);
      CHECK(sb[i].amplitude == doctest::Approx(2.0 * sa[i].amplitude).epsilon(1e-12));
      ++n;
    }
  }
  CHECK(n > 100);
}

TEST_CASE("rendered intensity matches the 2-D Gaussian integral within 2%") {
  for (double smear : {1.0, 2.0}) {
    auto cfg = roomy(8);
    cfg.smear_factor = {smear};
    const auto spots = sample_spots(cfg);
    for (std::size_t f = 0; f < 360; f += 7) {
      FrameTruth truth;
      const auto img = render_clean(cfg, spots, f, &truth);
      double expect = 0.0;
      for (const auto& s : truth.spots) expect += 2.0 * std::numbers::pi * s.sigma_radial * s.sigma_azimuthal * s.amplitude;
      if (expect == 0.0) continue;
      CHECK(image_sum(img) == doctest::Approx(expect).epsilon(0.02));
    }
  }
}

TEST_CASE("fragmentation conserves total intensity within 1%") {
  auto cfg = roomy(9);
  const auto spots = sample_spots(cfg);
  auto frag = cfg;
  frag.fragment_factor = {1.0};
  double intact = 0.0, shattered = 0.0;
  std::size_t shards = 0;
  for (std::size_t f = 0; f < cfg.n_frames; ++f) {
    intact += image_sum(render_clean(cfg, spots, f));
    FrameTruth t;
    shattered += image_sum(render_clean(frag, spots, f, &t));
    for (const auto& s : t.spots) shards += s.shard >= 0;
  }
  CHECK(shards > 0);
  CHECK(shattered == doctest::Approx(intact).epsilon(0.01));
}

TEST_CASE("ground truth survives a JSON round trip") {
  const auto g = generate_scan(testutil::small_config(10));
  const auto text = g.truth.to_json();
  const auto back = GroundTruth::from_json(text);
  CHECK(back.to_json() == text);
  CHECK(back.rendered_count() == g.truth.rendered_count());
  REQUIRE(back.spots.size() == g.truth.spots.size());
  CHECK(back.spots[3].amplitude == g.truth.spots[3].amplitude);
  CHECK_THROWS_AS(GroundTruth::from_json("{\"scan_id\": 3}"), Error);
}

TEST_CASE("invalid configs name the field") {
  auto cfg = testutil::small_config();
  cfg.flux_scale = {1.0, 2.0};
  try {
    cfg.validate();
    FAIL("bad schedule accepted");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::config_invalid);
    CHECK(std::string(e.what()).find("flux_scale") != std::string::npos);
  }
  cfg = testutil::small_config();
  cfg.fragment_factor = {-0.1};
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg = testutil::small_config();
  cfg.n_frames = 400;
  CHECK_THROWS_AS(generate_scan(cfg), Error);
}

TEST_CASE("slip ladder labels") {
  Protocol p;
  p.scenario = "slip";
  p.base = testutil::small_config();
  const auto plan = plan_experiment(p);
  REQUIRE(plan.size() == 6);
  const std::vector<std::string> labels = {"baseline", "elastic", "transition", "transition", "plastic", "plastic"};
  const std::vector<double> ladder = {1.0, 1.0, 1.2, 1.5, 2.0, 3.0};
  for (std::size_t i = 0; i < 6; ++i) {
    CHECK(plan[i].label == labels[i]);
    CHECK(plan[i].config.smear_factor == std::vector<double>{ladder[i]});
    CHECK(plan[i].config.seed == p.base.seed);
    CHECK(plan[i].config.tags.at("state_label") == labels[i]);
  }
}

TEST_CASE("fracture series: more spots, lower amplitudes, same azimuthal width") {
  Protocol p;
  p.scenario = "fracture";
  p.base = testutil::small_config(12);
  p.levels = {0.0, 0.3, 0.6, 1.0};
  std::size_t prev_count = 0;
  double prev_amp = std::numeric_limits<double>::infinity();
  for (const auto& ps : plan_experiment(p)) {
    const auto spots = sample_spots(ps.config);
    std::size_t count = 0;
    double amp = 0.0;
    for (std::size_t f = 0; f < ps.config.n_frames; ++f) {
      FrameTruth t;
      render_clean(ps.config, spots, f, &t);
      for (const auto& s : t.spots) {
        ++count;
        amp += s.amplitude;
        const auto& spec = spots[s.spot_id];
        CHECK(s.sigma_azimuthal == spec.sigma_azimuthal);
      }
    }
    CHECK(count > prev_count);
    CHECK(amp / double(count) < prev_amp);
    prev_count = count;
    prev_amp = amp / double(count);
  }
}

TEST_CASE("start-angle scenario: eight scans differing in omega_start") {
  Protocol p;
  p.scenario = "start_angle";
  p.base = testutil::small_config(13);
  const auto plan = plan_experiment(p);
  REQUIRE(plan.size() == 8);
  const std::vector<double> offsets = {0.125, -0.125, 0.25, -0.25, 0.314, -0.314, 0.628, -0.628};
  const auto base_spots = sample_spots(p.base);
  for (std::size_t i = 0; i < 8; ++i) {
    const auto& c = plan[i].config;
    CHECK(c.omega_start == doctest::Approx(offsets[i]));
    auto same = c;
    same.omega_start = p.base.omega_start;
    same.noise_seed = p.base.noise_seed;
    same.scan_id = p.base.scan_id;
    same.tags = p.base.tags;
    CHECK(config_to_json(same) == config_to_json(p.base));
    const auto spots = sample_spots(c);
    REQUIRE(spots.size() == base_spots.size());
    CHECK(spots.back().omega_center == base_spots.back().omega_center);
  }
}

TEST_CASE("instrument and stream scenarios") {
  Protocol p;
  p.base = testutil::small_config(14);
  p.scenario = "step";
  for (const auto& ps : plan_experiment(p)) {
    CHECK(double(ps.config.n_frames) * ps.config.omega_step == doctest::Approx(360.0).epsilon(0.01));
  }
  p.scenario = "beam_size";
  for (const auto& ps : plan_experiment(p)) CHECK(ps.config.beam_fraction < 1.0);

  p.scenario = "stream_loading";
  auto plan = plan_experiment(p);
  REQUIRE(plan.size() == 1);
  const auto& c = plan[0].config;
  REQUIRE(c.smear_factor.size() == c.n_frames);
  CHECK(c.smear_at(35) == 1.0);
  CHECK(c.smear_at(36) > 1.0);
  CHECK(c.smear_at(71) == p.ramp_to);
  CHECK(c.tags.at("onset_frame") == "36");

  p.scenario = "stream_flux";
  plan = plan_experiment(p);
  CHECK(plan[0].config.flux_at(35) == 1.0);
  CHECK(plan[0].config.flux_at(36) == 0.35);

  p.scenario = "bogus";
  try {
    plan_experiment(p);
    FAIL("unknown scenario accepted");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::unknown_scenario);
  }
}

TEST_CASE("written experiment reloads through the frame store") {
  testutil::TempDir dir("experiment");
  Protocol p;
  p.scenario = "flux_drift";
  p.base = testutil::small_config(15);
  p.base.n_frames = 12;
  p.levels = {1.0, 0.5};
  const auto dirs = write_experiment(dir.path(), p);
  REQUIRE(dirs.size() == 2);
  CHECK(std::filesystem::exists(dir.path() / "scenario.json"));
  const auto g = generate_scan(plan_experiment(p)[1].config);
  const auto scan = load_scan(resolve_manifest(dirs[1]));
  REQUIRE(scan.size() == 12);
  for (std::size_t i = 0; i < 12; ++i) CHECK(scan.raw_frame(i).image.pixels == g.scan.raw_frame(i).image.pixels);
  CHECK(std::filesystem::exists(dirs[1] / "truth.json"));
}
