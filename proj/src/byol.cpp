#include "rei/byol.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "rei/error.hpp"
#include "rei/hyper_tune.hpp"
#include "rei/util.hpp"

namespace rei {

using tensor::Tape;
using tensor::Tensor;
using tensor::Var;

namespace {

constexpr char kEncoderMagic[8] = {'R', 'E', 'I', 'E', 'N', 'C', 'D', 'R'};
constexpr std::uint32_t kEncoderVersion = 1;
constexpr std::uint64_t kProbeStream = 0xC0F1D3;

std::vector<float> flatten(std::span<const PeakPatch> patches) {
  std::vector<float> flat;
  if (patches.empty()) return flat;
  flat.reserve(patches.size() * patches.front().pixels.size());
  for (const auto& p : patches) flat.insert(flat.end(), p.pixels.begin(), p.pixels.end());
  return flat;
}

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  const std::size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + mid, v.end());
  double m = v[mid];
  if (v.size() % 2 == 0) m = 0.5 * (m + *std::max_element(v.begin(), v.begin() + mid));
  return m;
}

}  // namespace

// ---- encoder model ---------------------------------------------------------

std::vector<float> EncoderModel::embed(std::span<const PeakPatch> patches) const {
  std::vector<float> out(patches.size() * net::kEmbedDim);
  if (patches.empty()) return out;
  if (patches.front().size != patch_size) {
    throw Error(Errc::model_mismatch, "patch size " + std::to_string(patches.front().size) +
                                          " does not match encoder patch size " + std::to_string(patch_size));
  }
  const auto flat = flatten(patches);
  net::embed_batch(params, patch_size, flat, out);
  return out;
}

std::vector<float> EncoderModel::embed(const PatchDataset& ds) const { return embed(std::span(ds.patches)); }

EncoderModel random_encoder(std::uint64_t seed, int patch_size) {
  EncoderModel m;
  m.params = net::init_encoder(seed);
  m.patch_size = patch_size;
  m.seed = seed;
  return m;
}

void save_encoder(const std::filesystem::path& path, const EncoderModel& model) {
  nlohmann::json arch;
  arch["encoder"] = "conv3x3(1->8)+leaky_relu, conv3x3(8->16)+leaky_relu, conv3x3(16->32)+leaky_relu, global_avg_pool";
  arch["embed_dim"] = net::kEmbedDim;
  arch["patch_size"] = model.patch_size;
  arch["seed"] = model.seed;
  arch["epochs_trained"] = model.epochs_trained;
  arch["training_set"] = model.training_set;
  arch["config_hash"] = hex64(model.config_hash);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::io_error, "cannot write " + path.string());
  out.write(kEncoderMagic, sizeof kEncoderMagic);
  binio::put<std::uint32_t>(out, kEncoderVersion);
  binio::put_string(out, arch.dump());
  binio::put<std::uint32_t>(out, static_cast<std::uint32_t>(model.params.size()));
  for (std::size_t i = 0; i < model.params.size(); ++i) {
    const auto& t = model.params[i];
    binio::put_string(out, model.params.names[i]);
    binio::put<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) binio::put<std::uint64_t>(out, d);
    out.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(float)));
  }
  if (!out) throw Error(Errc::io_error, "failed writing " + path.string());
}

EncoderModel load_encoder(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::missing_file, path.string());
  char magic[8];
  in.read(magic, sizeof magic);
  if (!in || !std::equal(magic, magic + 8, kEncoderMagic)) {
    throw Error(Errc::format_error, path.string() + " is not an encoder checkpoint");
  }
  if (binio::get<std::uint32_t>(in) != kEncoderVersion) {
    throw Error(Errc::format_error, "unsupported checkpoint version");
  }
  const auto arch = nlohmann::json::parse(binio::get_string(in), nullptr, false);
  if (arch.is_discarded()) throw Error(Errc::format_error, "bad architecture descriptor");
  EncoderModel m;
  m.patch_size = arch.value("patch_size", 15);
  m.seed = arch.value("seed", std::uint64_t{0});
  m.epochs_trained = arch.value("epochs_trained", std::size_t{0});
  m.training_set = arch.value("training_set", std::string{});
  m.config_hash = std::stoull(arch.value("config_hash", std::string("0")), nullptr, 16);
  const auto n = binio::get<std::uint32_t>(in);
  const auto reference = net::init_encoder(0);
  if (n != reference.size()) throw Error(Errc::model_mismatch, "checkpoint tensor count differs from encoder");
  for (std::uint32_t i = 0; i < n; ++i) {
    std::string name = binio::get_string(in);
    const auto rank = binio::get<std::uint32_t>(in);
    if (!in || rank > 8) throw Error(Errc::format_error, "bad tensor header");
    tensor::Shape shape(rank);
    for (auto& d : shape) d = binio::get<std::uint64_t>(in);
    if (name != reference.names[i] || shape != reference[i].shape()) {
      throw Error(Errc::model_mismatch, "checkpoint tensor " + name + " " + tensor::shape_str(shape) +
                                            " does not match encoder architecture");
    }
    Tensor<float> t(shape);
    in.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(float)));
    if (!in) throw Error(Errc::size_mismatch, path.string() + " is truncated");
    m.params.add(std::move(name), std::move(t));
  }
  return m;
}

// ---- augmentation ----------------------------------------------------------

AugmentationConfig AugmentationConfig::identity() {
  AugmentationConfig c;
  c.flip_h = 0.0;
  c.flip_v = 0.0;
  c.rot90 = false;
  c.max_shift = 0;
  c.scale_lo = 1.0;
  c.scale_hi = 1.0;
  c.noise_sigma = 0.0;
  return c;
}

void AugmentationConfig::validate() const {
  auto prob = [](double p) { return p >= 0.0 && p <= 1.0; };
  if (!prob(flip_h) || !prob(flip_v)) throw Error(Errc::config_invalid, "flip probabilities must lie in [0,1]");
  if (max_shift < 0) throw Error(Errc::config_invalid, "max_shift must be >= 0");
  if (!(scale_lo > 0.0) || scale_hi < scale_lo) throw Error(Errc::config_invalid, "bad intensity scale range");
  if (!(noise_sigma >= 0.0)) throw Error(Errc::config_invalid, "noise_sigma must be >= 0");
}

std::vector<float> rot90(std::span<const float> patch, int size, int quarter_turns) {
  const int q = ((quarter_turns % 4) + 4) % 4;
  std::vector<float> out(patch.begin(), patch.end());
  const auto s = static_cast<std::size_t>(size);
  for (int t = 0; t < q; ++t) {
    std::vector<float> next(out.size());
    // counter-clockwise: new[r][c] = old[c][s-1-r]
    for (std::size_t r = 0; r < s; ++r) {
      for (std::size_t c = 0; c < s; ++c) next[r * s + c] = out[c * s + (s - 1 - r)];
    }
    out.swap(next);
  }
  return out;
}

std::vector<float> augment(std::span<const float> patch, int size, const AugmentationConfig& cfg,
                           std::mt19937_64& rng, AugmentRecord* record) {
  const auto s = static_cast<std::size_t>(size);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  AugmentRecord rec;
  rec.flip_h = unit(rng) < cfg.flip_h;
  rec.flip_v = unit(rng) < cfg.flip_v;
  rec.quarter_turns = cfg.rot90 ? std::uniform_int_distribution<int>(0, 3)(rng) : 0;
  if (cfg.max_shift > 0) {
    std::uniform_int_distribution<int> sh(-cfg.max_shift, cfg.max_shift);
    rec.shift_row = sh(rng);
    rec.shift_col = sh(rng);
  }
  rec.scale = cfg.scale_hi > cfg.scale_lo ? std::uniform_real_distribution<double>(cfg.scale_lo, cfg.scale_hi)(rng)
                                          : cfg.scale_lo;

  std::vector<float> out(patch.begin(), patch.end());
  if (rec.flip_h) {
    for (std::size_t r = 0; r < s; ++r) std::reverse(out.begin() + r * s, out.begin() + (r + 1) * s);
  }
  if (rec.flip_v) {
    for (std::size_t r = 0; r < s / 2; ++r) {
      std::swap_ranges(out.begin() + r * s, out.begin() + (r + 1) * s, out.begin() + (s - 1 - r) * s);
    }
  }
  if (rec.quarter_turns) out = rot90(out, size, rec.quarter_turns);
  if (rec.shift_row || rec.shift_col) {
    std::vector<float> shifted(out.size(), 0.0f);
    for (int r = 0; r < size; ++r) {
      const int src_r = r - rec.shift_row;
      if (src_r < 0 || src_r >= size) continue;
      for (int c = 0; c < size; ++c) {
        const int src_c = c - rec.shift_col;
        if (src_c < 0 || src_c >= size) continue;
        shifted[std::size_t(r) * s + c] = out[std::size_t(src_r) * s + src_c];
      }
    }
    out.swap(shifted);
  }
  if (rec.scale != 1.0) {
    for (auto& v : out) v = static_cast<float>(v * rec.scale);
  }
  const float mx = *std::max_element(out.begin(), out.end());
  if (mx > 0.0f && mx != 1.0f) {
    for (auto& v : out) v /= mx;
  }
  if (cfg.noise_sigma > 0.0) {
    std::normal_distribution<double> noise(0.0, cfg.noise_sigma);
    for (auto& v : out) v = static_cast<float>(std::clamp(double(v) + noise(rng), 0.0, 1.0));
  }
  if (record) *record = rec;
  return out;
}

PeakPatch augment(const PeakPatch& patch, const AugmentationConfig& cfg, std::mt19937_64& rng) {
  PeakPatch out = patch;
  out.pixels = augment(patch.pixels, patch.size, cfg, rng);
  return out;
}

// ---- loss ------------------------------------------------------------------

double cosine_distance(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size()) throw Error(Errc::dimension_mismatch, "cosine_distance dimension mismatch");
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += double(a[i]) * b[i];
    aa += double(a[i]) * a[i];
    bb += double(b[i]) * b[i];
  }
  if (std::sqrt(aa) < 1e-12 || std::sqrt(bb) < 1e-12) throw Error(Errc::zero_vector, "cosine of zero vector");
  return 1.0 - std::clamp(ab / (std::sqrt(aa) * std::sqrt(bb)), -1.0, 1.0);
}

double byol_pair_loss(std::span<const float> online_pred, std::span<const float> target_proj) {
  return 2.0 * cosine_distance(online_pred, target_proj);
}

double byol_loss(std::span<const float> pred1, std::span<const float> pred2, std::span<const float> proj1,
                 std::span<const float> proj2) {
  return 0.5 * (byol_pair_loss(pred1, proj2) + byol_pair_loss(pred2, proj1));
}

// ---- BYOL state ------------------------------------------------------------

BYOLState BYOLState::init(std::uint64_t seed, float tau) {
  BYOLState s;
  s.seed = seed;
  s.tau = tau;
  s.online_encoder = net::init_encoder(seed);
  s.online_projector = net::init_mlp("projector", net::kEmbedDim, net::kProjectorHidden, net::kProjectorDim, seed);
  s.predictor = net::init_mlp("predictor", net::kProjectorDim, net::kPredictorHidden, net::kPredictorDim, seed);
  s.target_encoder = s.online_encoder;
  s.target_projector = s.online_projector;
  return s;
}

void ema_update(net::Params<float>& target, const net::Params<float>& online, float tau) {
  if (!target.same_layout(online)) throw Error(Errc::shape_mismatch, "ema_update: parameter layouts differ");
  const float keep = tau, mix = 1.0f - tau;
  for (std::size_t i = 0; i < target.size(); ++i) {
    auto t = target[i].values();
    auto o = online[i].values();
    for (std::size_t j = 0; j < t.size(); ++j) t[j] = keep * t[j] + mix * o[j];
  }
}

template <class T>
ByolGraph<T> build_byol_graph(Tape<T>& tape, const net::Params<T>& enc, const net::Params<T>& proj,
                              const net::Params<T>& pred, const net::Params<T>& target_enc,
                              const net::Params<T>& target_proj, const Tensor<T>& view1, const Tensor<T>& view2) {
  ByolGraph<T> g;
  g.online_encoder = net::bind(tape, enc, true);
  g.online_projector = net::bind(tape, proj, true);
  g.predictor = net::bind(tape, pred, true);
  g.target_encoder = net::bind(tape, target_enc, true);
  g.target_projector = net::bind(tape, target_proj, true);

  const Var x1 = tape.leaf(view1, false);
  const Var x2 = tape.leaf(view2, false);
  auto online = [&](Var x) {
    Var e = net::encoder_forward(tape, std::span<const Var>(g.online_encoder), x);
    Var z = net::mlp_forward(tape, std::span<const Var>(g.online_projector), e);
    return net::mlp_forward(tape, std::span<const Var>(g.predictor), z);
  };
  auto target = [&](Var x) {
    Var e = net::encoder_forward(tape, std::span<const Var>(g.target_encoder), x);
    return tape.stop_gradient(net::mlp_forward(tape, std::span<const Var>(g.target_projector), e));
  };
  auto pair = [&](Var q, Var z) {
    return tape.scale(tape.cosine_distance(tape.l2_normalize(q), tape.l2_normalize(z)), T(2));
  };
  const Var q1 = online(x1), q2 = online(x2);
  const Var z1 = target(x1), z2 = target(x2);
  g.loss = tape.scale(tape.add(pair(q1, z2), pair(q2, z1)), T(0.5));
  return g;
}

template ByolGraph<float> build_byol_graph<float>(Tape<float>&, const net::Params<float>&, const net::Params<float>&,
                                                  const net::Params<float>&, const net::Params<float>&,
                                                  const net::Params<float>&, const Tensor<float>&,
                                                  const Tensor<float>&);
template ByolGraph<double> build_byol_graph<double>(Tape<double>&, const net::Params<double>&,
                                                    const net::Params<double>&, const net::Params<double>&,
                                                    const net::Params<double>&, const net::Params<double>&,
                                                    const Tensor<double>&, const Tensor<double>&);

// ---- training --------------------------------------------------------------

void TrainConfig::validate() const {
  if (batch_size < 1) throw Error(Errc::config_invalid, "batch_size must be >= 1");
  if (!(lr >= 0.0f) || !std::isfinite(lr)) throw Error(Errc::config_invalid, "lr must be finite and >= 0");
  if (!(tau > 0.0f && tau < 1.0f)) throw Error(Errc::config_invalid, "tau must lie in (0,1)");
  if (n_candidates < 2) throw Error(Errc::config_invalid, "n_candidates must be >= 2");
  if (n_probe < 1) throw Error(Errc::config_invalid, "n_probe must be >= 1");
  if (plateau_window < 1) throw Error(Errc::config_invalid, "plateau_window must be >= 1");
  augmentation.validate();
}

std::size_t TrainConfig::resolved_steps(std::size_t dataset_size) const {
  if (steps_per_epoch > 0) return steps_per_epoch;
  return std::min<std::size_t>(dataset_size, 5000);
}

namespace {

struct SampleResult {
  std::vector<Tensor<float>> grads;  // online encoder, projector, predictor concatenated
  double loss = 0.0;
};

Tensor<float> as_input(const std::vector<float>& pixels, int size) {
  return Tensor<float>({1, std::size_t(size), std::size_t(size)}, pixels);
}

EncoderModel snapshot(const BYOLState& s, const PatchDataset& ds, const TrainConfig& cfg, std::size_t epochs) {
  EncoderModel m;
  m.params = s.online_encoder;
  m.patch_size = ds.patch_size;
  m.seed = cfg.seed;
  m.epochs_trained = epochs;
  m.training_set = ds.id;
  return m;
}

}  // namespace

TrainResult train_encoder(const PatchDataset& baseline, const TrainConfig& cfg, const EpochCallback& on_epoch) {
  cfg.validate();
  if (baseline.empty()) throw Error(Errc::empty_dataset, "baseline dataset '" + baseline.id + "' has no patches");
  TrainResult result;
  result.state = BYOLState::init(cfg.seed, cfg.tau);
  BYOLState& st = result.state;
  const std::size_t n = baseline.size();
  const int psize = baseline.patch_size;
  const std::size_t steps = cfg.resolved_steps(n);
  const bool can_probe = n >= cfg.n_candidates + 1;
  std::vector<double> curve;

  std::size_t epoch = 0;
  for (epoch = 1; epoch <= cfg.epochs; ++epoch) {
    Stopwatch sw;
    double loss_total = 0.0;
    for (std::size_t start = 0; start < steps; start += cfg.batch_size) {
      const std::size_t bsz = std::min(cfg.batch_size, steps - start);
      std::vector<SampleResult> samples(bsz);
      std::exception_ptr failure;
#pragma omp parallel for schedule(dynamic, 1)
      for (std::ptrdiff_t b = 0; b < std::ptrdiff_t(bsz); ++b) {
        try {
          auto rng = substream(cfg.seed, epoch, start + std::size_t(b));
          const auto idx = std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
          const auto& patch = baseline.patches[idx];
          auto v1 = augment(patch.pixels, psize, cfg.augmentation, rng);
          auto v2 = augment(patch.pixels, psize, cfg.augmentation, rng);
          Tape<float> tape;
          auto g = build_byol_graph(tape, st.online_encoder, st.online_projector, st.predictor,
                                    st.target_encoder, st.target_projector, as_input(v1, psize),
                                    as_input(v2, psize));
          tape.backward(g.loss);
          auto& out = samples[std::size_t(b)];
          out.loss = tape.value(g.loss)[0];
          for (const auto* group : {&g.online_encoder, &g.online_projector, &g.predictor}) {
            for (Var v : *group) out.grads.push_back(tape.grad(v));
          }
        } catch (const Error& e) {
#pragma omp critical(rei_train_failure)
          if (!failure) failure = std::make_exception_ptr(Error(Errc::diverged_loss, e.what()));
        }
      }
      if (failure) std::rethrow_exception(failure);

      // Ordered reduction keeps results independent of the worker count.
      std::vector<Tensor<float>> total = samples.front().grads;
      double batch_loss = samples.front().loss;
      for (std::size_t b = 1; b < bsz; ++b) {
        batch_loss += samples[b].loss;
        for (std::size_t k = 0; k < total.size(); ++k) {
          auto dst = total[k].values();
          auto src = samples[b].grads[k].values();
          for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += src[j];
        }
      }
      if (!std::isfinite(batch_loss)) {
        throw Error(Errc::diverged_loss, "non-finite loss at epoch " + std::to_string(epoch));
      }
      loss_total += batch_loss;
      // Summed per-pair gradients: each pair contributes a step of size lr.
      const float step = cfg.lr;
      std::size_t k = 0;
      for (auto* group : {&st.online_encoder, &st.online_projector, &st.predictor}) {
        for (std::size_t i = 0; i < group->size(); ++i) tensor::sgd_step((*group)[i], total[k++], step);
      }
      ema_update(st.target_encoder, st.online_encoder, st.tau);
      ema_update(st.target_projector, st.online_projector, st.tau);
    }

    EpochLog row;
    row.epoch = epoch;
    row.loss_mean = loss_total / double(steps);
    if (can_probe) {
      row.confidence_sum = confidence_sum(snapshot(st, baseline, cfg, epoch), baseline,
                                          splitmix64(cfg.seed ^ kProbeStream), cfg.n_probe, cfg.n_candidates,
                                          cfg.augmentation);
    }
    row.wall_ms = sw.seconds() * 1000.0;
    result.log.push_back(row);
    curve.push_back(row.confidence_sum);
    if (on_epoch) on_epoch(row);
    if (cfg.early_stop && can_probe && curve.size() >= cfg.plateau_window &&
        plateau_reached(curve, cfg.plateau_window, cfg.plateau_frac)) {
      break;
    }
  }
  result.encoder = snapshot(st, baseline, cfg, result.log.size());
  return result;
}

void write_training_log(const std::filesystem::path& path, const std::vector<EpochLog>& log) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(Errc::io_error, "cannot write " + path.string());
  out << "epoch,loss_mean,confidence_sum,wall_ms\n";
  for (const auto& r : log) {
    out << r.epoch << ',' << format_double(r.loss_mean) << ',' << format_double(r.confidence_sum) << ','
        << format_double(r.wall_ms) << '\n';
  }
}

std::vector<EpochLog> read_training_log(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::missing_file, path.string());
  std::vector<EpochLog> log;
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string f[4];
    for (auto& s : f) std::getline(ss, s, ',');
    try {
      log.push_back({std::stoull(f[0]), std::stod(f[1]), std::stod(f[2]), std::stod(f[3])});
    } catch (const std::exception&) {
      throw Error(Errc::format_error, "bad training log row: " + line);
    }
  }
  return log;
}

// ---- confidence summation --------------------------------------------------

double probe_confidence(std::span<const double> distances, std::size_t true_index) {
  if (distances.size() < 2) throw Error(Errc::too_few_vectors, "need at least two candidates");
  std::size_t best = 0;
  for (std::size_t i = 1; i < distances.size(); ++i) {
    if (distances[i] < distances[best]) best = i;
  }
  if (best != true_index) return -1.0;
  double second = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < distances.size(); ++i) {
    if (i != best) second = std::min(second, distances[i]);
  }
  if (second <= 0.0) return 0.0;
  return std::abs(distances[best] - second) / second;
}

double confidence_sum(const EncoderModel& encoder, const PatchDataset& dataset, std::uint64_t seed,
                      std::size_t n_probe, std::size_t n_candidates, const AugmentationConfig& aug) {
  if (n_candidates < 2) throw Error(Errc::config_invalid, "n_candidates must be >= 2");
  if (dataset.size() < n_candidates + 1) {
    throw Error(Errc::empty_dataset, "confidence_sum needs at least n_candidates + 1 patches");
  }
  auto rng = substream(seed, 0x9A0B);
  // Probe pool of distinct random patches; distractors are drawn from the pool.
  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const std::size_t pool_size = std::max(std::min(dataset.size(), n_probe), n_candidates);
  for (std::size_t i = 0; i < pool_size; ++i) {
    const auto j = std::uniform_int_distribution<std::size_t>(i, order.size() - 1)(rng);
    std::swap(order[i], order[j]);
  }
  order.resize(pool_size);

  std::vector<PeakPatch> originals, views;
  for (auto idx : order) originals.push_back(dataset.patches[idx]);
  for (std::size_t p = 0; p < n_probe; ++p) {
    auto vrng = substream(seed, 0x51EE, p);
    views.push_back(augment(originals[p % pool_size], aug, vrng));
  }
  const auto e_orig = encoder.embed(originals);
  const auto e_view = encoder.embed(views);
  constexpr std::size_t d = net::kEmbedDim;
  auto dist = [&](const float* a, const float* b) {
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) s += (double(a[j]) - b[j]) * (double(a[j]) - b[j]);
    return std::sqrt(s);
  };

  double total = 0.0;
  std::vector<std::size_t> others;
  for (std::size_t p = 0; p < n_probe; ++p) {
    const std::size_t self = p % pool_size;
    others.resize(pool_size);
    std::iota(others.begin(), others.end(), std::size_t{0});
    others.erase(others.begin() + std::ptrdiff_t(self));
    for (std::size_t i = 0; i + 1 < n_candidates; ++i) {
      const auto j = std::uniform_int_distribution<std::size_t>(i, others.size() - 1)(rng);
      std::swap(others[i], others[j]);
    }
    std::vector<double> distances;
    distances.push_back(dist(&e_view[p * d], &e_orig[self * d]));
    for (std::size_t i = 0; i + 1 < n_candidates; ++i) {
      distances.push_back(dist(&e_view[p * d], &e_orig[others[i] * d]));
    }
    total += probe_confidence(distances, 0);
  }
  return total;
}

DistanceProbe distance_probe(const EncoderModel& encoder, const PatchDataset& dataset, std::uint64_t seed,
                             std::size_t n_pairs, const AugmentationConfig& aug) {
  if (dataset.size() < 2) throw Error(Errc::empty_dataset, "distance probe needs at least two patches");
  auto rng = substream(seed, 0xD157);
  std::uniform_int_distribution<std::size_t> pick(0, dataset.size() - 1);
  std::vector<PeakPatch> anchors, views, randoms;
  for (std::size_t i = 0; i < n_pairs; ++i) {
    const auto a = pick(rng);
    auto b = pick(rng);
    while (b == a) b = pick(rng);
    anchors.push_back(dataset.patches[a]);
    views.push_back(augment(dataset.patches[a], aug, rng));
    randoms.push_back(dataset.patches[b]);
  }
  const auto ea = encoder.embed(anchors), ev = encoder.embed(views), er = encoder.embed(randoms);
  constexpr std::size_t d = net::kEmbedDim;
  std::vector<double> aug_d, rnd_d;
  for (std::size_t i = 0; i < n_pairs; ++i) {
    std::span<const float> a(&ea[i * d], d);
    aug_d.push_back(cosine_distance(a, std::span<const float>(&ev[i * d], d)));
    rnd_d.push_back(cosine_distance(a, std::span<const float>(&er[i * d], d)));
  }
  return {median(aug_d), median(rnd_d)};
}

}  // namespace rei
