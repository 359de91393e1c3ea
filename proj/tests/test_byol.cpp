#include <doctest.h>

#include <fstream>
#include <omp.h>

#include "grad_check.hpp"
#include "helpers.hpp"
#include "rei/byol.hpp"
#include "rei/error.hpp"
#include "rei/peak_extract.hpp"

using namespace rei;

namespace {

std::vector<float> random_patch(int size, std::mt19937_64& rng) {
  std::vector<float> p(std::size_t(size) * size);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  for (auto& v : p) v = u(rng);
  p[std::size_t(size) * size / 2] = 1.0f;
  return p;
}

const PatchDataset& small_dataset() {
  static const PatchDataset ds = [] {
    const auto g = synth::generate_scan(testutil::small_config(21));
    auto d = extract_dataset(g.scan, ExtractionConfig{});
    d.id = "small21";
    return d;
  }();
  return ds;
}

}  // namespace

TEST_CASE("identity augmentation returns the patch unchanged") {
  std::mt19937_64 rng(1);
  const auto p = random_patch(15, rng);
  for (int i = 0; i < 20; ++i) CHECK(augment(p, 15, AugmentationConfig::identity(), rng) == p);
}

TEST_CASE("two half turns restore the patch") {
  std::mt19937_64 rng(2);
  const auto p = random_patch(15, rng);
  CHECK(rot90(rot90(p, 15, 2), 15, 2) == p);
  CHECK(rot90(p, 15, 4) == p);
  CHECK(rot90(rot90(p, 15, 1), 15, 3) == p);
}

TEST_CASE("augmented views stay in [0,1] with max 1 before noise") {
  std::mt19937_64 rng(3);
  AugmentationConfig cfg;
  for (int i = 0; i < 200; ++i) {
    const auto p = random_patch(15, rng);
    const auto v = augment(p, 15, cfg, rng);
    REQUIRE(v.size() == p.size());
    for (float x : v) {
      CHECK(x >= 0.0f);
      CHECK(x <= 1.0f);
    }
  }
  cfg.noise_sigma = 0.0;
  for (int i = 0; i < 50; ++i) {
    const auto v = augment(random_patch(15, rng), 15, cfg, rng);
    CHECK(*std::max_element(v.begin(), v.end()) == 1.0f);
  }
}

TEST_CASE("each transform fires at its configured rate (binomial, 3 sigma)") {
  std::mt19937_64 rng(4);
  AugmentationConfig cfg;
  cfg.flip_h = 0.3;
  cfg.flip_v = 0.7;
  cfg.max_shift = 2;
  const auto p = random_patch(9, rng);
  constexpr int n = 10000;
  int fh = 0, fv = 0;
  int turns[4] = {0, 0, 0, 0};
  int shifts[5] = {0, 0, 0, 0, 0};
  double scale_min = 10, scale_max = 0;
  for (int i = 0; i < n; ++i) {
    AugmentRecord r;
    augment(p, 9, cfg, rng, &r);
    fh += r.flip_h;
    fv += r.flip_v;
    ++turns[r.quarter_turns];
    ++shifts[r.shift_row + 2];
    scale_min = std::min(scale_min, r.scale);
    scale_max = std::max(scale_max, r.scale);
  }
  auto within = [&](int count, double prob) {
    const double sd = std::sqrt(n * prob * (1 - prob));
    return std::abs(count - n * prob) <= 3.0 * sd;
  };
  CHECK(within(fh, 0.3));
  CHECK(within(fv, 0.7));
  for (int t : turns) CHECK(within(t, 0.25));
  for (int s : shifts) CHECK(within(s, 0.2));
  CHECK(scale_min >= 0.8);
  CHECK(scale_max <= 1.2);
}

TEST_CASE("BYOL loss examples") {
  const std::vector<float> a = {1.0f, 2.0f, -0.5f};
  const std::vector<float> neg = {-1.0f, -2.0f, 0.5f};
  CHECK(byol_loss(a, a, a, a) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(byol_pair_loss(a, neg) == doctest::Approx(4.0));
  // two views each contributing 2 in the symmetrized sum
  CHECK(byol_pair_loss(a, neg) + byol_pair_loss(neg, a) == doctest::Approx(8.0));
  CHECK(byol_loss(a, a, neg, neg) == doctest::Approx(4.0));
  const std::vector<float> zero(3, 0.0f);
  try {
    byol_pair_loss(a, zero);
    FAIL("zero vector accepted");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::zero_vector);
  }
}

TEST_CASE("BYOL graph: online gradients match finite differences, target gets zero") {
  const auto st = BYOLState::init(11);
  const auto enc = st.online_encoder.cast<double>();
  const auto proj = st.online_projector.cast<double>();
  const auto pred = st.predictor.cast<double>();
  auto tenc = st.target_encoder.cast<double>();
  auto tproj = st.target_projector.cast<double>();
  std::mt19937_64 rng(12);
  // decouple the target from the online weights so the check is not degenerate
  for (auto& t : tproj.tensors)
    for (std::size_t i = 0; i < t.size(); ++i) t[i] += std::uniform_real_distribution<double>(-0.1, 0.1)(rng);
  const auto v1 = testutil::random_tensor({1, 7, 7}, rng, 0.0, 1.0);
  const auto v2 = testutil::random_tensor({1, 7, 7}, rng, 0.0, 1.0);

  {
    tensor::Tape<double> tape;
    const auto g = build_byol_graph(tape, enc, proj, pred, tenc, tproj, v1, v2);
    const double loss = tape.value(g.loss)[0];
    CHECK(loss >= 0.0);
    CHECK(loss <= 4.0);
    tape.backward(g.loss);
    for (const auto* grp : {&g.target_encoder, &g.target_projector}) {
      for (auto v : *grp) {
        for (double x : tape.grad(v).values()) CHECK(x == 0.0);
      }
    }
  }

  // Finite differences on the library graph's own loss.
  std::vector<net::Params<double>> online = {enc, proj, pred};
  for (auto& grp : online)
    for (auto& t : grp.tensors)
      for (std::size_t i = 0; i < t.size(); ++i) t[i] += std::uniform_real_distribution<double>(-0.05, 0.05)(rng);
  auto loss_of = [&](const std::vector<net::Params<double>>& p) {
    tensor::Tape<double> tape;
    return tape.value(build_byol_graph(tape, p[0], p[1], p[2], tenc, tproj, v1, v2).loss)[0];
  };
  tensor::Tape<double> tape;
  const auto g = build_byol_graph(tape, online[0], online[1], online[2], tenc, tproj, v1, v2);
  tape.backward(g.loss);
  const std::vector<const std::vector<tensor::Var>*> vars = {&g.online_encoder, &g.online_projector, &g.predictor};
  double worst = 0.0;
  std::size_t checked = 0;
  const double h = 1e-6;
  for (std::size_t grp = 0; grp < 3; ++grp) {
    for (std::size_t ti = 0; ti < online[grp].size(); ++ti) {
      const auto& analytic = tape.grad((*vars[grp])[ti]);
      const std::size_t n = analytic.size();
      for (std::size_t i = 0; i < n; i += std::max<std::size_t>(1, n / 12)) {
        auto p = online;
        p[grp][ti][i] += h;
        const double fp = loss_of(p);
        p[grp][ti][i] -= 2 * h;
        const double fm = loss_of(p);
        const double num = (fp - fm) / (2 * h);
        const double ana = analytic[i];
        worst = std::max(worst, std::abs(ana - num) / std::max({std::abs(ana), std::abs(num), 1e-4}));
        ++checked;
      }
    }
  }
  CHECK(checked > 150);
  CHECK(worst < 1e-4);
}

TEST_CASE("EMA update") {
  auto online = net::init_encoder(1);
  auto target = net::init_encoder(2);
  const auto start = target;

  auto t1 = target;
  ema_update(t1, online, 1.0f);
  CHECK(t1.tensors[0].values()[0] == start.tensors[0].values()[0]);
  auto t0 = target;
  ema_update(t0, online, 0.0f);
  for (std::size_t i = 0; i < online.size(); ++i) {
    for (std::size_t j = 0; j < online[i].size(); ++j) CHECK(t0[i][j] == online[i][j]);
  }

  // target_n - online = tau^n (target_0 - online)
  const float tau = 0.9f;
  auto t = target;
  for (int n = 1; n <= 60; ++n) {
    ema_update(t, online, tau);
    if (n % 20 == 0) {
      const double f = std::pow(double(tau), n);
      for (std::size_t i = 0; i < online.size(); ++i) {
        for (std::size_t j = 0; j < online[i].size(); j += 7) {
          const double expect = online[i][j] + f * (double(start[i][j]) - online[i][j]);
          CHECK(t[i][j] == doctest::Approx(expect).epsilon(1e-4).scale(1e-3));
        }
      }
    }
  }
  auto wrong = net::init_mlp("x", 3, 4, 5, 1);
  CHECK_THROWS_AS(ema_update(wrong, online, 0.5f), Error);
}

TEST_CASE("confidence examples") {
  const std::vector<double> d = {2.0, 4.0, 7.0};
  CHECK(probe_confidence(d, 0) == 0.5);
  CHECK(probe_confidence(d, 1) == -1.0);
  const std::vector<double> tie = {3.0, 3.0};
  CHECK(probe_confidence(tie, 0) == 0.0);
}

TEST_CASE("zero epochs returns the initial encoder") {
  TrainConfig cfg;
  cfg.epochs = 0;
  cfg.seed = 5;
  const auto res = train_encoder(small_dataset(), cfg);
  CHECK(res.encoder.epochs_trained == 0);
  CHECK(res.log.empty());
  CHECK(res.encoder.checksum() == net::checksum(BYOLState::init(5).online_encoder));
}

TEST_CASE("empty baseline raises EmptyDataset") {
  PatchDataset empty;
  try {
    train_encoder(empty, TrainConfig{});
    FAIL("empty dataset accepted");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::empty_dataset);
  }
}

TEST_CASE("training is deterministic and independent of the worker count") {
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.steps_per_epoch = 96;
  cfg.seed = 77;
  const int before = omp_get_max_threads();
  omp_set_num_threads(1);
  const auto a = train_encoder(small_dataset(), cfg);
  const auto b = train_encoder(small_dataset(), cfg);
  omp_set_num_threads(4);
  const auto c = train_encoder(small_dataset(), cfg);
  omp_set_num_threads(before);
  CHECK(a.encoder.checksum() == b.encoder.checksum());
  CHECK(a.encoder.checksum() == c.encoder.checksum());
  REQUIRE(a.log.size() == 2);
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(a.log[i].loss_mean == b.log[i].loss_mean);
    CHECK(a.log[i].confidence_sum == b.log[i].confidence_sum);
    CHECK(a.log[i].loss_mean == c.log[i].loss_mean);
    CHECK(std::isfinite(a.log[i].loss_mean));
    CHECK(a.log[i].loss_mean >= 0.0);
    CHECK(a.log[i].loss_mean <= 4.0);
  }
}

TEST_CASE("trained encoder beats a random encoder on confidence_sum") {
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.steps_per_epoch = 384;
  cfg.seed = 8;
  const auto trained = train_encoder(small_dataset(), cfg);
  const auto random = random_encoder(8);
  const double cs_trained = confidence_sum(trained.encoder, small_dataset(), 1234);
  const double cs_random = confidence_sum(random, small_dataset(), 1234);
  MESSAGE("confidence_sum trained " << cs_trained << " random " << cs_random);
  CHECK(cs_trained > cs_random);
  CHECK(cs_trained <= 100.0);
  CHECK(cs_random >= -100.0);
}

TEST_CASE("encoder checkpoint round trip") {
  testutil::TempDir dir("enc");
  auto m = random_encoder(3);
  m.epochs_trained = 7;
  m.training_set = "abc";
  m.config_hash = 0x1234abcdULL;
  save_encoder(dir.path() / "e.bin", m);
  const auto back = load_encoder(dir.path() / "e.bin");
  CHECK(back.checksum() == m.checksum());
  CHECK(back.epochs_trained == 7);
  CHECK(back.training_set == "abc");
  CHECK(back.config_hash == m.config_hash);
  CHECK(back.params.names == m.params.names);

  std::ofstream(dir.path() / "junk.bin") << "not a model";
  CHECK_THROWS_AS(load_encoder(dir.path() / "junk.bin"), Error);
}

TEST_CASE("training log CSV round trip") {
  testutil::TempDir dir("log");
  std::vector<EpochLog> log = {{1, 1.5, 20.25, 3.0}, {2, 0.5, 22.0, 4.0}};
  write_training_log(dir.path() / "log.csv", log);
  const auto back = read_training_log(dir.path() / "log.csv");
  REQUIRE(back.size() == 2);
  CHECK(back[1].epoch == 2);
  CHECK(back[1].confidence_sum == 22.0);
  CHECK(back[0].loss_mean == 1.5);
}
