#include "rei/cluster_rei.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <fstream>
#include <limits>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "rei/bounded_queue.hpp"
#include "rei/error.hpp"
#include "rei/util.hpp"

namespace rei {

namespace {

constexpr char kClusterMagic[8] = {'R', 'E', 'I', 'C', 'L', 'U', 'S', 'T'};
constexpr std::uint32_t kClusterVersion = 1;

double sq_dist(const double* a, const double* b, std::size_t dim) {
  double s = 0.0;
  for (std::size_t j = 0; j < dim; ++j) {
    const double d = a[j] - b[j];
    s += d * d;
  }
  return s;
}

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t mid = v.size() / 2;
  return v.size() % 2 ? v[mid] : 0.5 * (v[mid - 1] + v[mid]);
}

}  // namespace

// ---- k-means ---------------------------------------------------------------

KMeansResult kmeans_fit(std::span<const double> vectors, std::size_t dim, std::size_t k, std::mt19937_64& rng,
                        std::size_t max_iter, double tol) {
  if (dim == 0 || vectors.size() % dim != 0) throw Error(Errc::dimension_mismatch, "kmeans: bad vector layout");
  const std::size_t n = vectors.size() / dim;
  if (k < 1 || n < k) {
    throw Error(Errc::too_few_vectors, "kmeans needs N >= K (N=" + std::to_string(n) + ", K=" + std::to_string(k) + ")");
  }
  const double* x = vectors.data();
  KMeansResult res;
  res.k = k;
  res.dim = dim;
  res.centers.resize(k * dim);

  // k-means++ seeding
  std::vector<double> d2(n, std::numeric_limits<double>::infinity());
  std::vector<char> chosen(n, 0);
  std::size_t first = std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
  std::copy_n(x + first * dim, dim, res.centers.begin());
  chosen[first] = 1;
  for (std::size_t c = 1; c < k; ++c) {
    const double* prev = res.centers.data() + (c - 1) * dim;
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      d2[i] = std::min(d2[i], sq_dist(x + i * dim, prev, dim));
      if (!chosen[i]) total += d2[i];
    }
    std::size_t pick = n;
    if (total > 0.0) {
      double r = std::uniform_real_distribution<double>(0.0, total)(rng);
      for (std::size_t i = 0; i < n; ++i) {
        if (chosen[i]) continue;
        r -= d2[i];
        if (r <= 0.0) {
          pick = i;
          break;
        }
      }
      if (pick == n) {
        for (std::size_t i = n; i-- > 0;) {
          if (!chosen[i] && d2[i] > 0.0) {
            pick = i;
            break;
          }
        }
      }
    }
    if (pick == n) {
      // Remaining points coincide with existing centers.
      std::vector<std::size_t> free;
      for (std::size_t i = 0; i < n; ++i) {
        if (!chosen[i]) free.push_back(i);
      }
      pick = free[std::uniform_int_distribution<std::size_t>(0, free.size() - 1)(rng)];
    }
    chosen[pick] = 1;
    std::copy_n(x + pick * dim, dim, res.centers.begin() + std::ptrdiff_t(c * dim));
  }

  std::vector<std::uint32_t> assign(n, 0);
  std::vector<double> dist(n, 0.0);
  std::vector<double> sums(k * dim);
  std::vector<std::size_t> counts(k);
  for (std::size_t iter = 0; iter < max_iter; ++iter) {
    const auto ni = static_cast<std::ptrdiff_t>(n);
    const double* ctr = res.centers.data();
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < ni; ++i) {
      double best = std::numeric_limits<double>::infinity();
      std::uint32_t best_c = 0;
      for (std::size_t c = 0; c < k; ++c) {
        const double s = sq_dist(x + std::size_t(i) * dim, ctr + c * dim, dim);
        if (s < best) {
          best = s;
          best_c = static_cast<std::uint32_t>(c);
        }
      }
      assign[std::size_t(i)] = best_c;
      dist[std::size_t(i)] = best;
    }
    double inertia = 0.0;
    for (double v : dist) inertia += v;
    res.inertia_history.push_back(inertia);
    ++res.iterations;

    std::fill(sums.begin(), sums.end(), 0.0);
    std::fill(counts.begin(), counts.end(), 0);
    for (std::size_t i = 0; i < n; ++i) {
      ++counts[assign[i]];
      double* s = sums.data() + assign[i] * dim;
      for (std::size_t j = 0; j < dim; ++j) s[j] += x[i * dim + j];
    }
    double shift = 0.0;
    for (std::size_t c = 0; c < k; ++c) {
      double* ctr_c = res.centers.data() + c * dim;
      std::vector<double> next(dim);
      if (counts[c] == 0) {
        std::size_t far = 0;
        for (std::size_t i = 1; i < n; ++i) {
          if (dist[i] > dist[far]) far = i;
        }
        std::copy_n(x + far * dim, dim, next.begin());
        dist[far] = 0.0;
      } else {
        for (std::size_t j = 0; j < dim; ++j) next[j] = sums[c * dim + j] / double(counts[c]);
      }
      shift = std::max(shift, std::sqrt(sq_dist(next.data(), ctr_c, dim)));
      std::copy(next.begin(), next.end(), ctr_c);
    }
    if (shift < tol) {
      res.converged = true;
      break;
    }
  }
  return res;
}

// ---- cluster model ---------------------------------------------------------

void ClusterModel::validate() const {
  if (k < 1) throw Error(Errc::config_invalid, "cluster model needs K >= 1");
  if (dim < 1 || centers.size() != k * dim) throw Error(Errc::format_error, "cluster centers have wrong size");
  if (!(threshold >= 0.0 && threshold <= 1.0)) throw Error(Errc::config_invalid, "threshold t must lie in [0,1]");
  for (float c : centers) {
    if (!std::isfinite(c)) throw Error(Errc::diverged_loss, "non-finite cluster center");
  }
}

ClusterModel cluster_from_embeddings(std::span<const float> embeddings, std::size_t dim, std::size_t k,
                                     double threshold, std::uint64_t seed) {
  std::vector<double> v(embeddings.begin(), embeddings.end());
  auto rng = substream(seed, 0xC1A5);
  const KMeansResult km = kmeans_fit(v, dim, k, rng);
  ClusterModel m;
  m.k = k;
  m.dim = dim;
  m.centers.assign(km.centers.begin(), km.centers.end());
  m.threshold = double(static_cast<float>(threshold));  // same value the f32 file field holds
  m.seed = seed;
  m.validate();
  return m;
}

ClusterModel fit_cluster_model(const EncoderModel& encoder, const PatchDataset& reference, std::size_t k,
                               double threshold, std::uint64_t seed) {
  if (reference.empty()) throw Error(Errc::empty_dataset, "reference dataset '" + reference.id + "' is empty");
  const auto emb = encoder.embed(reference);
  ClusterModel m = cluster_from_embeddings(emb, net::kEmbedDim, k, threshold, seed);
  m.reference_id = reference.id;
  m.encoder_checksum = encoder.checksum();
  return m;
}

void save_cluster_model(const std::filesystem::path& path, const ClusterModel& m) {
  m.validate();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::io_error, "cannot write " + path.string());
  out.write(kClusterMagic, sizeof kClusterMagic);
  binio::put<std::uint32_t>(out, kClusterVersion);
  binio::put<std::uint32_t>(out, static_cast<std::uint32_t>(m.k));
  binio::put<std::uint32_t>(out, static_cast<std::uint32_t>(m.dim));
  binio::put<float>(out, static_cast<float>(m.threshold));
  binio::put<std::uint64_t>(out, m.encoder_checksum);
  out.write(reinterpret_cast<const char*>(m.centers.data()),
            static_cast<std::streamsize>(m.centers.size() * sizeof(float)));
  binio::put_string(out, m.reference_id);
  binio::put<std::uint64_t>(out, m.seed);
  binio::put<std::uint64_t>(out, m.config_hash);
  if (!out) throw Error(Errc::io_error, "failed writing " + path.string());
}

ClusterModel load_cluster_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::missing_file, path.string());
  char magic[8];
  in.read(magic, sizeof magic);
  if (!in || !std::equal(magic, magic + 8, kClusterMagic)) {
    throw Error(Errc::format_error, path.string() + " is not a cluster model");
  }
  if (binio::get<std::uint32_t>(in) != kClusterVersion) throw Error(Errc::format_error, "unsupported version");
  ClusterModel m;
  m.k = binio::get<std::uint32_t>(in);
  m.dim = binio::get<std::uint32_t>(in);
  // Stored as f32; widen through float so save/load is idempotent.
  m.threshold = double(binio::get<float>(in));
  m.encoder_checksum = binio::get<std::uint64_t>(in);
  if (!in || m.k == 0 || m.dim == 0 || m.k * m.dim > (1u << 26)) throw Error(Errc::format_error, "bad header");
  m.centers.resize(m.k * m.dim);
  in.read(reinterpret_cast<char*>(m.centers.data()), static_cast<std::streamsize>(m.centers.size() * sizeof(float)));
  if (!in) throw Error(Errc::size_mismatch, path.string() + " is truncated");
  m.reference_id = binio::get_string(in);
  m.seed = binio::get<std::uint64_t>(in);
  m.config_hash = binio::get<std::uint64_t>(in);
  if (!in) throw Error(Errc::size_mismatch, path.string() + " is truncated");
  m.validate();
  return m;
}

// ---- confidence and REI ----------------------------------------------------

double margin_confidence(const kernels::NearestTwo& nt) {
  if (!std::isfinite(nt.d2)) return 1.0;  // single center
  if (nt.d2 <= 0.0) return 0.0;
  return std::clamp((nt.d2 - nt.d1) / nt.d2, 0.0, 1.0);
}

Assignment assignment_confidence(std::span<const float> vector, std::span<const float> centers, std::size_t dim) {
  if (vector.size() != dim || dim == 0 || centers.size() % dim != 0 || centers.empty()) {
    throw Error(Errc::dimension_mismatch, "vector of dim " + std::to_string(vector.size()) +
                                              " against centers of dim " + std::to_string(dim));
  }
  const auto nt = kernels::nearest_two_one(vector.data(), centers, dim);
  return {nt.nearest, margin_confidence(nt)};
}

std::vector<double> confidences(std::span<const float> embeddings, const ClusterModel& model) {
  const std::size_t n = embeddings.size() / model.dim;
  std::vector<kernels::NearestTwo> nt(n);
  kernels::nearest_two(embeddings, model.centers, model.dim, nt);
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = margin_confidence(nt[i]);
  return out;
}

std::size_t count_uncertain(std::span<const double> conf, double threshold) {
  return static_cast<std::size_t>(std::count_if(conf.begin(), conf.end(), [&](double c) { return c < threshold; }));
}

REIReport rei_score(const PatchDataset& dataset, const EncoderModel& encoder, const ClusterModel& cluster) {
  if (encoder.checksum() != cluster.encoder_checksum) {
    throw Error(Errc::model_mismatch, "encoder checksum " + hex64(encoder.checksum()) +
                                          " does not match cluster model (" + hex64(cluster.encoder_checksum) + ")");
  }
  if (dataset.empty()) throw Error(Errc::empty_dataset, "dataset '" + dataset.id + "' has no patches");
  Stopwatch sw;
  const auto emb = encoder.embed(dataset);
  const auto conf = confidences(emb, cluster);
  REIReport r;
  r.dataset_id = dataset.id;
  r.n_patches = dataset.size();
  r.n_uncertain = count_uncertain(conf, cluster.threshold);
  r.rei = double(r.n_uncertain) / double(r.n_patches);
  r.eval_wall_seconds = sw.seconds();
  r.seed = cluster.seed;
  r.config_hash = cluster.config_hash;
  return r;
}

REIReport partial_rei(const ScanSet& scan, const EncoderModel& encoder, const ClusterModel& cluster,
                      const ExtractionConfig& extraction, double delta_omega, std::size_t n_repeats,
                      std::uint64_t seed) {
  if (!(delta_omega > 0.0) || delta_omega > kFullRotation + kRotationTolerance) {
    throw Error(Errc::bad_range, "delta_omega must lie in (0, 360]");
  }
  if (n_repeats < 1) throw Error(Errc::config_invalid, "n_repeats must be >= 1");
  const ScanManifest& m = scan.manifest();
  auto rng = substream(seed, 0x9A27);
  double lo = 0.0, hi = kFullRotation;
  const bool full = m.covers_full_rotation();
  if (!full) {
    const auto count = static_cast<double>(std::llround(delta_omega / m.omega_step));
    lo = m.omega_start;
    hi = m.omega_start + (double(scan.size()) - count) * m.omega_step;
    if (hi < lo) throw Error(Errc::bad_range, "delta_omega exceeds the scan's rotation range");
  }
  PartialBlock block;
  block.delta_omega = delta_omega;
  block.n_repeats = n_repeats;
  std::vector<double> eval_times, extract_times;
  std::size_t total_patches = 0, total_uncertain = 0;
  for (std::size_t rep = 0; rep < n_repeats; ++rep) {
    double start;
    if (full) {
      start = std::uniform_real_distribution<double>(0.0, kFullRotation)(rng);
    } else {
      const auto slots = static_cast<long long>(std::llround((hi - lo) / m.omega_step));
      start = lo + double(std::uniform_int_distribution<long long>(0, slots)(rng)) * m.omega_step;
    }
    const ScanSet seg = slice_segment(scan, start, delta_omega);
    Stopwatch ex;
    PatchDataset ds = extract_dataset(seg, extraction);
    extract_times.push_back(ex.seconds());
    ds.id = m.scan_id;
    const REIReport r = rei_score(ds, encoder, cluster);
    eval_times.push_back(r.eval_wall_seconds);
    block.reis.push_back(r.rei);
    block.start_omegas.push_back(normalize_degrees(start));
    total_patches += r.n_patches;
    total_uncertain += r.n_uncertain;
  }
  double sum = 0.0;
  for (double v : block.reis) sum += v;
  block.rei_mean = sum / double(block.reis.size());
  block.rei_min = *std::min_element(block.reis.begin(), block.reis.end());
  block.rei_max = *std::max_element(block.reis.begin(), block.reis.end());
  block.extract_seconds = median(extract_times);

  REIReport out;
  out.dataset_id = m.scan_id;
  out.n_patches = total_patches;
  out.n_uncertain = total_uncertain;
  out.rei = block.rei_mean;
  out.eval_wall_seconds = median(eval_times);
  out.partial = std::move(block);
  out.seed = cluster.seed;
  out.config_hash = cluster.config_hash;
  return out;
}

// ---- streaming -------------------------------------------------------------

StreamREI::StreamREI(const EncoderModel& encoder, const ClusterModel& cluster, ExtractionConfig extraction,
                     std::size_t window, std::size_t stride)
    : encoder_(encoder), cluster_(cluster), extraction_(std::move(extraction)), window_(window), stride_(stride) {
  if (window_ < 1 || stride_ < 1) throw Error(Errc::config_invalid, "window and stride must be >= 1");
  if (encoder.checksum() != cluster.encoder_checksum) {
    throw Error(Errc::model_mismatch, "encoder does not match cluster model");
  }
  extraction_.validate();
  ring_.assign(window_, {0, 0});
}

std::optional<StreamPoint> StreamREI::push(const Frame& frame) {
  const FramePatches fp = extract_frame(frame, extraction_);
  std::size_t uncertain = 0;
  if (!fp.patches.empty()) {
    const auto emb = encoder_.embed(std::span(fp.patches));
    const auto conf = confidences(emb, cluster_);
    uncertain = count_uncertain(conf, cluster_.threshold);
  }
  auto& slot = ring_[seen_ % window_];
  sum_patches_ -= slot.first;
  sum_uncertain_ -= slot.second;
  slot = {fp.patches.size(), uncertain};
  sum_patches_ += slot.first;
  sum_uncertain_ += slot.second;
  ++seen_;
  if (seen_ < window_ || (seen_ - window_) % stride_ != 0) return std::nullopt;
  StreamPoint p;
  p.frames_seen = seen_;
  p.window_end_index = frame.index;
  p.window_end_omega = frame.omega;
  p.n_patches = sum_patches_;
  p.n_uncertain = sum_uncertain_;
  if (sum_patches_ > 0) p.rei = double(sum_uncertain_) / double(sum_patches_);
  return p;
}

std::vector<StreamPoint> stream_rei(const ScanSet& scan, const EncoderModel& encoder, const ClusterModel& cluster,
                                    const ExtractionConfig& extraction, std::size_t window, std::size_t stride,
                                    std::size_t queue_capacity, const std::function<void(const StreamPoint&)>& on_point) {
  StreamREI stage(encoder, cluster, extraction, window, stride);
  BoundedQueue<Frame> queue(queue_capacity);
  std::exception_ptr producer_error;
  std::thread producer([&] {
    try {
      for (std::size_t i = 0; i < scan.size(); ++i) {
        if (!queue.push(scan.frame(i))) break;
      }
    } catch (...) {
      producer_error = std::current_exception();
    }
    queue.close();
  });
  std::vector<StreamPoint> points;
  try {
    while (auto frame = queue.pop()) {
      if (auto p = stage.push(*frame)) {
        if (on_point) on_point(*p);
        points.push_back(*p);
      }
    }
  } catch (...) {
    queue.close();
    producer.join();
    throw;
  }
  producer.join();
  if (producer_error) std::rethrow_exception(producer_error);
  return points;
}

// ---- reports ---------------------------------------------------------------

std::string report_csv_header() {
  return "dataset_id,n_patches,n_uncertain,rei,wall_s,delta_omega,rei_mean,rei_min,rei_max,seed,config_hash";
}

std::string report_csv_row(const REIReport& r, bool include_timing) {
  std::ostringstream os;
  os << r.dataset_id << ',' << r.n_patches << ',' << r.n_uncertain << ',' << format_double(r.rei) << ',';
  if (include_timing) os << format_double(r.eval_wall_seconds);
  os << ',';
  if (r.partial) {
    os << format_double(r.partial->delta_omega) << ',' << format_double(r.partial->rei_mean) << ','
       << format_double(r.partial->rei_min) << ',' << format_double(r.partial->rei_max);
  } else {
    os << ",,,";
  }
  os << ',' << r.seed << ',' << hex64(r.config_hash);
  return os.str();
}

std::string reports_json(const std::vector<REIReport>& reports, bool include_timing) {
  nlohmann::ordered_json arr = nlohmann::ordered_json::array();
  for (const auto& r : reports) {
    nlohmann::ordered_json j;
    j["dataset_id"] = r.dataset_id;
    j["n_patches"] = r.n_patches;
    j["n_uncertain"] = r.n_uncertain;
    j["rei"] = r.rei;
    j["wall_s"] = include_timing ? nlohmann::ordered_json(r.eval_wall_seconds) : nlohmann::ordered_json(nullptr);
    if (r.partial) {
      j["delta_omega"] = r.partial->delta_omega;
      j["rei_mean"] = r.partial->rei_mean;
      j["rei_min"] = r.partial->rei_min;
      j["rei_max"] = r.partial->rei_max;
    } else {
      j["delta_omega"] = nullptr;
      j["rei_mean"] = nullptr;
      j["rei_min"] = nullptr;
      j["rei_max"] = nullptr;
    }
    j["seed"] = r.seed;
    j["config_hash"] = hex64(r.config_hash);
    arr.push_back(std::move(j));
  }
  return arr.dump(2) + "\n";
}

void write_reports(const std::filesystem::path& csv_path, const std::filesystem::path& json_path,
                   const std::vector<REIReport>& reports, bool include_timing) {
  {
    std::ofstream out(csv_path, std::ios::trunc);
    if (!out) throw Error(Errc::io_error, "cannot write " + csv_path.string());
    out << report_csv_header() << '\n';
    for (const auto& r : reports) out << report_csv_row(r, include_timing) << '\n';
  }
  std::ofstream out(json_path, std::ios::trunc);
  if (!out) throw Error(Errc::io_error, "cannot write " + json_path.string());
  out << reports_json(reports, include_timing);
}

}  // namespace rei
