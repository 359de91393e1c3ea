#include "rei/synth_gen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <optional>
#include <random>

#include <json.hpp>

#include "rei/error.hpp"
#include "rei/util.hpp"

namespace rei::synth {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;
constexpr std::uint64_t kDetectorSeed = 0xDA4C0FF5E7ULL;

[[noreturn]] void invalid(const std::string& field, const std::string& why) {
  throw Error(Errc::config_invalid, field + ": " + why);
}

double schedule_at(const std::vector<double>& s, std::size_t frame) {
  return s.size() == 1 ? s.front() : s.at(frame);
}

double circular_delta(double a, double b) {
  double d = std::fmod(std::abs(a - b), 360.0);
  return d > 180.0 ? 360.0 - d : d;
}

// Mean of exp(-(w - c)^2 / (2 s^2)) over [a, b].
double gaussian_mean(double a, double b, double c, double s) {
  const double k = s * std::sqrt(std::numbers::pi / 2.0);
  const double r = std::numbers::sqrt2 * s;
  return k * (std::erf((b - c) / r) - std::erf((a - c) / r)) / (b - a);
}

struct Shard {
  double d_radial = 0.0;
  double d_azimuthal = 0.0;
  double d_omega = 0.0;
  double fraction = 0.0;
};

std::vector<Shard> shards_of(const SyntheticScanConfig& cfg, const SpotSpec& spot) {
  auto rng = substream(cfg.seed, 0x5A4D, spot.id);
  const int n = std::uniform_int_distribution<int>(2, 5)(rng);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<Shard> out(static_cast<std::size_t>(n));
  const double sigma = 0.5 * (spot.sigma_radial + spot.sigma_azimuthal);
  double total = 0.0;
  for (auto& s : out) {
    const double rad = 1.5 * sigma * std::sqrt(u(rng));
    const double ang = 2.0 * std::numbers::pi * u(rng);
    s.d_radial = rad * std::cos(ang);
    s.d_azimuthal = rad * std::sin(ang);
    s.d_omega = (2.0 * u(rng) - 1.0) * 1.5 * spot.omega_width;
    s.fraction = 0.5 + u(rng);
    total += s.fraction;
  }
  for (auto& s : out) s.fraction /= total;
  return out;
}

double illumination(const SyntheticScanConfig& cfg, const SpotSpec& spot) {
  if (cfg.beam_fraction >= 1.0) return 1.0;
  const double g = cfg.grain_extent;
  const double lo = std::max(spot.height - g / 2, 0.5 - cfg.beam_fraction / 2);
  const double hi = std::min(spot.height + g / 2, 0.5 + cfg.beam_fraction / 2);
  return std::max(0.0, hi - lo) / g;
}

void draw_gaussian(std::vector<double>& img, int width, int height, const RenderedSpot& s) {
  const double cphi = std::cos(s.azimuth * kDeg);
  const double sphi = std::sin(s.azimuth * kDeg);
  const double reach = 4.5 * std::max(s.sigma_radial, s.sigma_azimuthal);
  const int r0 = std::max(0, int(std::floor(s.row - reach)));
  const int r1 = std::min(height - 1, int(std::ceil(s.row + reach)));
  const int c0 = std::max(0, int(std::floor(s.col - reach)));
  const int c1 = std::min(width - 1, int(std::ceil(s.col + reach)));
  const double ir = 1.0 / (2.0 * s.sigma_radial * s.sigma_radial);
  const double ia = 1.0 / (2.0 * s.sigma_azimuthal * s.sigma_azimuthal);
  for (int r = r0; r <= r1; ++r) {
    for (int c = c0; c <= c1; ++c) {
      const double dx = c - s.col;
      const double dy = r - s.row;
      const double dr = dx * cphi + dy * sphi;
      const double da = -dx * sphi + dy * cphi;
      img[std::size_t(r) * width + c] += s.amplitude * std::exp(-dr * dr * ir - da * da * ia);
    }
  }
}

json spot_json(const SpotSpec& s) {
  return json{{"id", s.id},
              {"ring_radius", s.ring_radius},
              {"azimuth", s.azimuth},
              {"omega_center", s.omega_center},
              {"omega_width", s.omega_width},
              {"amplitude", s.amplitude},
              {"sigma_radial", s.sigma_radial},
              {"sigma_azimuthal", s.sigma_azimuthal},
              {"height", s.height},
              {"fracture_draw", s.fracture_draw}};
}

}  // namespace

void SpotSpec::validate() const {
  if (!(sigma_radial > 0.0 && sigma_azimuthal > 0.0 && omega_width > 0.0)) {
    throw Error(Errc::config_invalid, "spot " + std::to_string(id) + ": sigmas must be > 0");
  }
  if (!(amplitude > 0.0)) throw Error(Errc::config_invalid, "spot " + std::to_string(id) + ": amplitude must be > 0");
}

std::size_t GroundTruth::rendered_count() const {
  std::size_t n = 0;
  for (const auto& f : frames) n += f.spots.size();
  return n;
}

std::string GroundTruth::to_json() const {
  json j;
  j["scan_id"] = scan_id;
  j["spots"] = json::array();
  for (const auto& s : spots) j["spots"].push_back(spot_json(s));
  j["frames"] = json::array();
  for (const auto& f : frames) {
    json jf{{"frame_index", f.frame_index},
            {"omega", f.omega},
            {"smear", f.smear},
            {"fragment", f.fragment},
            {"flux", f.flux},
            {"spots", json::array()}};
    for (const auto& s : f.spots) {
      jf["spots"].push_back(json{{"spot_id", s.spot_id},
                                 {"shard", s.shard},
                                 {"row", s.row},
                                 {"col", s.col},
                                 {"amplitude", s.amplitude},
                                 {"sigma_radial", s.sigma_radial},
                                 {"sigma_azimuthal", s.sigma_azimuthal},
                                 {"azimuth", s.azimuth}});
    }
    j["frames"].push_back(std::move(jf));
  }
  return j.dump();
}

GroundTruth GroundTruth::from_json(const std::string& text) {
  GroundTruth t;
  try {
    const json j = json::parse(text);
    t.scan_id = j.at("scan_id").get<std::string>();
    for (const auto& js : j.at("spots")) {
      SpotSpec s;
      s.id = js.at("id").get<std::size_t>();
      s.ring_radius = js.at("ring_radius").get<double>();
      s.azimuth = js.at("azimuth").get<double>();
      s.omega_center = js.at("omega_center").get<double>();
      s.omega_width = js.at("omega_width").get<double>();
      s.amplitude = js.at("amplitude").get<double>();
      s.sigma_radial = js.at("sigma_radial").get<double>();
      s.sigma_azimuthal = js.at("sigma_azimuthal").get<double>();
      s.height = js.at("height").get<double>();
      s.fracture_draw = js.at("fracture_draw").get<double>();
      t.spots.push_back(s);
    }
    for (const auto& jf : j.at("frames")) {
      FrameTruth f;
      f.frame_index = jf.at("frame_index").get<std::size_t>();
      f.omega = jf.at("omega").get<double>();
      f.smear = jf.at("smear").get<double>();
      f.fragment = jf.at("fragment").get<double>();
      f.flux = jf.at("flux").get<double>();
      for (const auto& js : jf.at("spots")) {
        RenderedSpot s;
        s.spot_id = js.at("spot_id").get<std::size_t>();
        s.shard = js.at("shard").get<int>();
        s.row = js.at("row").get<double>();
        s.col = js.at("col").get<double>();
        s.amplitude = js.at("amplitude").get<double>();
        s.sigma_radial = js.at("sigma_radial").get<double>();
        s.sigma_azimuthal = js.at("sigma_azimuthal").get<double>();
        s.azimuth = js.at("azimuth").get<double>();
        f.spots.push_back(s);
      }
      t.frames.push_back(std::move(f));
    }
  } catch (const json::exception& e) {
    throw Error(Errc::format_error, std::string("truth.json: ") + e.what());
  }
  return t;
}

void SyntheticScanConfig::validate() const {
  if (width <= 0 || height <= 0) invalid("width/height", "must be > 0");
  if (n_frames < 1) invalid("n_frames", "must be >= 1");
  if (!(omega_step > 0.0)) invalid("omega_step", "must be > 0");
  if (double(n_frames) * omega_step > kFullRotation + kRotationTolerance) {
    invalid("n_frames", "n_frames * omega_step exceeds 360 degrees");
  }
  if (ring_radii.empty()) invalid("ring_radii", "must not be empty");
  for (double r : ring_radii) {
    if (!(r > 0.0)) invalid("ring_radii", "radii must be > 0");
  }
  if (!(sigma_radial > 0.0 && sigma_azimuthal > 0.0)) invalid("sigma", "must be > 0");
  if (!(sigma_jitter >= 0.0 && sigma_jitter < 1.0)) invalid("sigma_jitter", "must lie in [0, 1)");
  if (!(omega_width > 0.0)) invalid("omega_width", "must be > 0");
  if (!(amplitude_min > 0.0 && amplitude_max >= amplitude_min)) invalid("amplitude", "need 0 < min <= max");
  if (!(omega_max > omega_min)) invalid("omega_range", "need omega_min < omega_max");
  if (!(min_separation >= 0.0)) invalid("min_separation", "must be >= 0");
  if (!(background >= 0.0)) invalid("background", "must be >= 0");
  if (!(dark_level >= 0.0 && dark_level < 60000.0)) invalid("dark_level", "out of range");
  if (!(beam_fraction > 0.0 && beam_fraction <= 1.0)) invalid("beam_fraction", "must lie in (0, 1]");
  if (!(grain_extent > 0.0 && grain_extent <= 1.0)) invalid("grain_extent", "must lie in (0, 1]");
  auto check = [&](const std::vector<double>& s, const char* name) {
    if (s.size() != 1 && s.size() != n_frames) invalid(name, "schedule length must be 1 or n_frames");
    for (double v : s) {
      if (!(v >= 0.0) || !std::isfinite(v)) invalid(name, "multipliers must be finite and >= 0");
    }
  };
  check(smear_factor, "smear_factor");
  check(fragment_factor, "fragment_factor");
  check(flux_scale, "flux_scale");
  for (double v : smear_factor) {
    if (v == 0.0) invalid("smear_factor", "must be > 0");
  }
}

double SyntheticScanConfig::smear_at(std::size_t f) const { return schedule_at(smear_factor, f); }
double SyntheticScanConfig::fragment_at(std::size_t f) const { return schedule_at(fragment_factor, f); }
double SyntheticScanConfig::flux_at(std::size_t f) const { return schedule_at(flux_scale, f); }

ScanManifest SyntheticScanConfig::manifest() const {
  ScanManifest m;
  m.scan_id = scan_id;
  m.width = width;
  m.height = height;
  m.n_frames = n_frames;
  m.omega_start = omega_start;
  m.omega_step = omega_step;
  if (dark_level > 0.0) m.dark_path = "dark.bin";
  m.tags = tags;
  m.tags["beam_fraction"] = format_double(beam_fraction);
  if (flux_scale.size() == 1) m.tags["flux_scale"] = format_double(flux_scale.front());
  if (smear_factor.size() == 1) m.tags["smear_factor"] = format_double(smear_factor.front());
  if (fragment_factor.size() == 1) m.tags["fragment_factor"] = format_double(fragment_factor.front());
  m.tags["synth_seed"] = std::to_string(seed);
  m.tags["noise_seed"] = std::to_string(noise_seed);
  return m;
}

std::string config_to_json(const SyntheticScanConfig& c) {
  ordered_json j;
  j["scan_id"] = c.scan_id;
  j["width"] = c.width;
  j["height"] = c.height;
  j["n_frames"] = c.n_frames;
  j["omega_start"] = c.omega_start;
  j["omega_step"] = c.omega_step;
  j["n_spots"] = c.n_spots;
  j["ring_radii"] = c.ring_radii;
  j["sigma_radial"] = c.sigma_radial;
  j["sigma_azimuthal"] = c.sigma_azimuthal;
  j["sigma_jitter"] = c.sigma_jitter;
  j["omega_width"] = c.omega_width;
  j["amplitude_min"] = c.amplitude_min;
  j["amplitude_max"] = c.amplitude_max;
  j["omega_min"] = c.omega_min;
  j["omega_max"] = c.omega_max;
  j["min_separation"] = c.min_separation;
  j["seed"] = c.seed;
  j["noise_seed"] = c.noise_seed;
  j["smear_factor"] = c.smear_factor;
  j["fragment_factor"] = c.fragment_factor;
  j["flux_scale"] = c.flux_scale;
  j["background"] = c.background;
  j["dark_level"] = c.dark_level;
  j["beam_fraction"] = c.beam_fraction;
  j["grain_extent"] = c.grain_extent;
  j["tags"] = c.tags;
  return j.dump(2);
}

std::vector<SpotSpec> sample_spots(const SyntheticScanConfig& cfg) {
  cfg.validate();
  auto rng = substream(cfg.seed, 0x5F07);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> ring(0, cfg.ring_radii.size() - 1);
  const double log_lo = std::log(cfg.amplitude_min);
  const double log_hi = std::log(cfg.amplitude_max);
  const double cx = 0.5 * (cfg.width - 1);
  const double cy = 0.5 * (cfg.height - 1);

  std::vector<SpotSpec> spots;
  std::vector<std::pair<double, double>> pos;
  const std::size_t max_attempts = 200 * cfg.n_spots + 1000;
  for (std::size_t attempt = 0; spots.size() < cfg.n_spots; ++attempt) {
    if (attempt >= max_attempts) {
      throw Error(Errc::config_invalid, "n_spots: cannot place " + std::to_string(cfg.n_spots) +
                                            " spots with min_separation " + format_double(cfg.min_separation));
    }
    SpotSpec s;
    s.id = spots.size();
    s.ring_radius = cfg.ring_radii[ring(rng)];
    s.azimuth = 360.0 * u(rng);
    s.omega_center = cfg.omega_min + (cfg.omega_max - cfg.omega_min) * u(rng);
    s.omega_width = cfg.omega_width;
    s.amplitude = std::exp(log_lo + (log_hi - log_lo) * u(rng));
    s.sigma_radial = cfg.sigma_radial * (1.0 + cfg.sigma_jitter * (2.0 * u(rng) - 1.0));
    s.sigma_azimuthal = cfg.sigma_azimuthal * (1.0 + cfg.sigma_jitter * (2.0 * u(rng) - 1.0));
    s.height = cfg.grain_extent / 2 + (1.0 - cfg.grain_extent) * u(rng);
    s.fracture_draw = u(rng);
    const double col = cx + s.ring_radius * std::cos(s.azimuth * kDeg);
    const double row = cy + s.ring_radius * std::sin(s.azimuth * kDeg);
    bool ok = true;
    for (std::size_t i = 0; i < spots.size() && ok; ++i) {
      if (circular_delta(spots[i].omega_center, s.omega_center) >= 3.0 * (spots[i].omega_width + s.omega_width)) {
        continue;
      }
      const double dr = pos[i].first - row;
      const double dc = pos[i].second - col;
      ok = dr * dr + dc * dc >= cfg.min_separation * cfg.min_separation;
    }
    if (!ok) continue;
    spots.push_back(s);
    pos.emplace_back(row, col);
  }
  return spots;
}

namespace {

double weight_for(const SyntheticScanConfig& cfg, double center, double width, std::size_t frame) {
  const double a = cfg.omega_start + double(frame) * cfg.omega_step;
  const double b = a + cfg.omega_step;
  double w = 0.0;
  // Nearest periodic images of the center.
  const double base = center + 360.0 * std::round((0.5 * (a + b) - center) / 360.0);
  for (int k = -1; k <= 1; ++k) w += gaussian_mean(a, b, base + 360.0 * k, width);
  return w;
}

}  // namespace

double frame_weight(const SyntheticScanConfig& cfg, const SpotSpec& spot, std::size_t frame) {
  return weight_for(cfg, spot.omega_center, spot.omega_width, frame);
}

std::vector<double> render_clean(const SyntheticScanConfig& cfg, const std::vector<SpotSpec>& spots,
                                 std::size_t frame, FrameTruth* truth) {
  if (frame >= cfg.n_frames) throw Error(Errc::bad_range, "frame index out of range");
  std::vector<double> img(std::size_t(cfg.width) * cfg.height, 0.0);
  const double smear = cfg.smear_at(frame);
  const double frag = cfg.fragment_at(frame);
  const double flux = cfg.flux_at(frame);
  const double cx = 0.5 * (cfg.width - 1);
  const double cy = 0.5 * (cfg.height - 1);
  const double omega = cfg.omega_start + double(frame) * cfg.omega_step;
  if (truth) {
    truth->frame_index = frame;
    truth->omega = omega;
    truth->smear = smear;
    truth->fragment = frag;
    truth->flux = flux;
    truth->spots.clear();
  }
  constexpr double kMinWeight = 1e-4;
  auto emit = [&](const SpotSpec& s, int shard, double d_rad, double d_az, double amplitude) {
    const double phi = s.azimuth * kDeg;
    RenderedSpot r;
    r.spot_id = s.id;
    r.shard = shard;
    // Radial offset along the ring normal, azimuthal offset along the tangent.
    r.col = cx + (s.ring_radius + d_rad) * std::cos(phi) - d_az * std::sin(phi);
    r.row = cy + (s.ring_radius + d_rad) * std::sin(phi) + d_az * std::cos(phi);
    r.amplitude = amplitude / smear;  // smearing conserves integrated intensity
    r.sigma_radial = s.sigma_radial;
    r.sigma_azimuthal = s.sigma_azimuthal * smear;
    r.azimuth = s.azimuth;
    draw_gaussian(img, cfg.width, cfg.height, r);
    if (truth) truth->spots.push_back(r);
  };
  for (const auto& s : spots) {
    const double illum = illumination(cfg, s);
    if (illum <= 0.0) continue;
    if (circular_delta(s.omega_center, omega) >
        8.0 * s.omega_width + cfg.omega_step + 1.0) {
      continue;
    }
    const double amp = s.amplitude * flux * illum;
    if (s.fracture_draw < frag) {
      const auto shards = shards_of(cfg, s);
      for (std::size_t k = 0; k < shards.size(); ++k) {
        const double w = weight_for(cfg, s.omega_center + shards[k].d_omega, s.omega_width, frame);
        if (w < kMinWeight) continue;
        emit(s, int(k), shards[k].d_radial, shards[k].d_azimuthal, amp * shards[k].fraction * w);
      }
    } else {
      const double w = frame_weight(cfg, s, frame);
      if (w < kMinWeight) continue;
      emit(s, -1, 0.0, 0.0, amp * w);
    }
  }
  return img;
}

DarkFrame make_dark(int width, int height, double level) {
  DarkFrame d(width, height);
  auto rng = substream(kDetectorSeed, std::uint64_t(width), std::uint64_t(height));
  std::uniform_int_distribution<int> pattern(0, 8);
  for (auto& p : d.pixels) p = static_cast<std::uint16_t>(std::lround(level) + pattern(rng));
  return d;
}

GeneratedScan generate_scan(const SyntheticScanConfig& cfg) {
  cfg.validate();
  GroundTruth truth;
  truth.scan_id = cfg.scan_id;
  truth.spots = sample_spots(cfg);
  truth.frames.resize(cfg.n_frames);
  std::optional<DarkFrame> dark;
  if (cfg.dark_level > 0.0) dark = make_dark(cfg.width, cfg.height, cfg.dark_level);
  std::vector<Image> frames(cfg.n_frames);
  const auto n = static_cast<std::ptrdiff_t>(cfg.n_frames);
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t f = 0; f < n; ++f) {
    const auto fi = std::size_t(f);
    const auto clean = render_clean(cfg, truth.spots, fi, &truth.frames[fi]);
    auto rng = substream(cfg.noise_seed, 0x401E, fi);
    std::poisson_distribution<int> bg(cfg.background > 0.0 ? cfg.background : 1.0);
    Image img(cfg.width, cfg.height);
    for (std::size_t i = 0; i < clean.size(); ++i) {
      long counts = 0;
      if (clean[i] < 1e-6) {
        counts = cfg.background > 0.0 ? bg(rng) : 0;
      } else {
        counts = std::poisson_distribution<long>(cfg.background + clean[i])(rng);
      }
      if (dark) counts += dark->pixels[i];
      img.pixels[i] = static_cast<std::uint16_t>(std::min<long>(counts, 65535));
    }
    frames[fi] = std::move(img);
  }
  return GeneratedScan{"", make_memory_scan(cfg.manifest(), std::move(frames), std::move(dark)), std::move(truth),
                       cfg};
}

void write_generated(const std::filesystem::path& dir, const GeneratedScan& g) {
  write_scan(dir, g.scan);
  std::ofstream out(dir / "truth.json", std::ios::trunc);
  if (!out) throw Error(Errc::io_error, "cannot write " + (dir / "truth.json").string());
  out << g.truth.to_json() << '\n';
}

const std::vector<std::string>& scenario_names() {
  static const std::vector<std::string> names = {"slip",     "fracture",  "flux_drift",     "start_angle",
                                                 "position", "flux",      "beam_size",      "step",
                                                 "stream_loading", "stream_flux"};
  return names;
}

std::vector<double> default_levels(const std::string& scenario) {
  if (scenario == "slip") return {1.0, 1.0, 1.2, 1.5, 2.0, 3.0};
  if (scenario == "fracture") return {0.0, 0.2, 0.4, 0.6, 0.8, 1.0};
  if (scenario == "flux_drift") return {1.0, 0.9, 0.8, 0.7, 0.6, 0.5};
  if (scenario == "start_angle") return {0.125, -0.125, 0.25, -0.25, 0.314, -0.314, 0.628, -0.628};
  if (scenario == "position") return {1, 2, 3, 4};
  if (scenario == "flux") return {0.8, 0.65, 0.5, 0.35};
  if (scenario == "beam_size") return {0.75, 0.5, 0.375, 0.25};
  if (scenario == "step") return {0.5, 0.75, 1.5, 2.0};
  if (scenario == "stream_loading") return {};
  if (scenario == "stream_flux") return {0.35};
  throw Error(Errc::unknown_scenario, "'" + scenario + "'");
}

namespace {

std::string slip_label(std::size_t i, double smear) {
  if (i == 0) return "baseline";
  if (smear <= 1.0) return "elastic";
  if (smear < 2.0) return "transition";
  return "plastic";
}

}  // namespace

std::vector<PlannedScan> plan_experiment(const Protocol& p) {
  const std::string& sc = p.scenario;
  std::vector<double> levels = p.levels.empty() ? default_levels(sc) : p.levels;
  p.base.validate();
  std::vector<PlannedScan> plan;
  auto make = [&](std::size_t i, double level, std::string label) {
    PlannedScan ps;
    ps.label = std::move(label);
    ps.level = level;
    ps.config = p.base;
    ps.config.noise_seed = p.base.noise_seed + i;
    ps.config.scan_id = p.base.scan_id + "_" + sc + "_" + std::to_string(i);
    ps.config.tags["scenario"] = sc;
    ps.config.tags["level"] = format_double(level);
    return ps;
  };
  auto finish = [&](PlannedScan ps) {
    ps.config.tags["state_label"] = ps.label;
    ps.config.validate();
    plan.push_back(std::move(ps));
  };

  if (sc == "slip" || sc == "fracture" || sc == "flux_drift") {
    for (std::size_t i = 0; i < levels.size(); ++i) {
      const double v = levels[i];
      if (sc == "slip") {
        auto ps = make(i, v, slip_label(i, v));
        ps.config.smear_factor = {v};
        finish(std::move(ps));
      } else if (sc == "fracture") {
        auto ps = make(i, v, i == 0 ? "baseline" : "fracture");
        ps.config.fragment_factor = {v};
        finish(std::move(ps));
      } else {
        auto ps = make(i, v, i == 0 ? "baseline" : "flux_drift");
        ps.config.flux_scale = {v};
        finish(std::move(ps));
      }
    }
  } else if (sc == "start_angle" || sc == "position" || sc == "flux" || sc == "beam_size" || sc == "step") {
    for (std::size_t i = 0; i < levels.size(); ++i) {
      const double v = levels[i];
      auto ps = make(i, v, "instrument_" + sc);
      auto& c = ps.config;
      if (sc == "start_angle") {
        c.omega_start = p.base.omega_start + v;
      } else if (sc == "position") {
        c.seed = p.base.seed + static_cast<std::uint64_t>(std::llround(v)) * 7919;
      } else if (sc == "flux" || sc == "beam_size") {
        // Acquired at a different sample position as well.
        c.seed = p.base.seed + (i + 1) * 7919;
        if (sc == "flux") {
          c.flux_scale = {v};
        } else {
          c.beam_fraction = v;
        }
      } else {
        c.omega_step = p.base.omega_step * v;
        c.n_frames = static_cast<std::size_t>(std::llround(double(p.base.n_frames) / v));
        if (c.smear_factor.size() != 1 || c.fragment_factor.size() != 1 || c.flux_scale.size() != 1) {
          invalid("step", "per-frame schedules cannot be resampled");
        }
      }
      finish(std::move(ps));
    }
  } else if (sc == "stream_loading" || sc == "stream_flux") {
    const std::size_t n = p.base.n_frames;
    const std::size_t onset = p.onset_frame ? p.onset_frame : n / 2;
    if (onset >= n) invalid("onset_frame", "must lie inside the scan");
    auto ps = make(0, sc == "stream_flux" ? levels.at(0) : p.ramp_to, sc == "stream_flux" ? "flux_step" : "transition");
    std::vector<double> sched(n);
    for (std::size_t f = 0; f < n; ++f) {
      if (sc == "stream_flux") {
        sched[f] = f < onset ? 1.0 : levels.at(0);
      } else if (f < onset) {
        sched[f] = 1.0;
      } else {
        const double x = p.ramp_frames ? std::min(1.0, double(f - onset + 1) / double(p.ramp_frames)) : 1.0;
        sched[f] = 1.0 + (p.ramp_to - 1.0) * x;
      }
    }
    if (sc == "stream_flux") {
      ps.config.flux_scale = std::move(sched);
    } else {
      ps.config.smear_factor = std::move(sched);
    }
    ps.config.tags["onset_frame"] = std::to_string(onset);
    finish(std::move(ps));
  } else {
    throw Error(Errc::unknown_scenario, "'" + sc + "'");
  }
  return plan;
}

std::vector<GeneratedScan> generate_experiment(const Protocol& protocol) {
  std::vector<GeneratedScan> out;
  for (auto& ps : plan_experiment(protocol)) {
    auto g = generate_scan(ps.config);
    g.label = ps.label;
    out.push_back(std::move(g));
  }
  return out;
}

std::string scenario_json(const Protocol& protocol, const std::vector<PlannedScan>& plan) {
  ordered_json j;
  j["scenario"] = protocol.scenario;
  j["levels"] = protocol.levels.empty() ? default_levels(protocol.scenario) : protocol.levels;
  if (protocol.scenario.starts_with("stream_")) {
    j["onset_frame"] = plan.front().config.tags.at("onset_frame");
    j["ramp_frames"] = protocol.ramp_frames;
    j["ramp_to"] = protocol.ramp_to;
  }
  j["scans"] = ordered_json::array();
  for (const auto& ps : plan) {
    ordered_json s;
    s["scan_id"] = ps.config.scan_id;
    s["label"] = ps.label;
    s["level"] = ps.level;
    s["config"] = ordered_json::parse(config_to_json(ps.config));
    j["scans"].push_back(std::move(s));
  }
  return j.dump(2);
}

std::vector<std::filesystem::path> write_experiment(const std::filesystem::path& dir, const Protocol& protocol) {
  const auto plan = plan_experiment(protocol);
  std::filesystem::create_directories(dir);
  std::vector<std::filesystem::path> dirs;
  for (const auto& ps : plan) {
    auto g = generate_scan(ps.config);
    g.label = ps.label;
    const auto sub = dir / ps.config.scan_id;
    write_generated(sub, g);
    dirs.push_back(sub);
  }
  std::ofstream out(dir / "scenario.json", std::ios::trunc);
  if (!out) throw Error(Errc::io_error, "cannot write " + (dir / "scenario.json").string());
  out << scenario_json(protocol, plan) << '\n';
  return dirs;
}

}  // namespace rei::synth
