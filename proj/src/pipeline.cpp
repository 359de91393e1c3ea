#include "rei/pipeline.hpp"

#include <omp.h>

#include <fstream>
#include <json.hpp>
#include <sstream>

#include "rei/error.hpp"
#include "rei/frame_store.hpp"
#include "rei/hyper_tune.hpp"
#include "rei/util.hpp"

namespace rei {

namespace fs = std::filesystem;
using nlohmann::json;

std::string mode_name(EvalMode m) {
  switch (m) {
    case EvalMode::batch: return "batch";
    case EvalMode::partial: return "partial";
    case EvalMode::stream: return "stream";
  }
  return "batch";
}

EvalMode parse_mode(const std::string& s) {
  if (s == "batch") return EvalMode::batch;
  if (s == "partial") return EvalMode::partial;
  if (s == "stream") return EvalMode::stream;
  throw Error(Errc::config_invalid, "mode: expected batch, partial or stream, got '" + s + "'");
}

fs::path resolve_manifest(const fs::path& scan) {
  if (fs::is_directory(scan)) return scan / "manifest.json";
  return scan;
}

namespace {

void require_path(const fs::path& p, const std::string& field) {
  if (p.empty()) throw Error(Errc::config_invalid, field + ": path is required");
  if (!fs::exists(resolve_manifest(p))) {
    throw Error(Errc::config_invalid, field + ": '" + p.string() + "' does not exist");
  }
}

json paths_json(const std::vector<fs::path>& ps) {
  json a = json::array();
  for (const auto& p : ps) a.push_back(p.generic_string());
  return a;
}

std::uint64_t file_checksum(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error(Errc::io_error, "cannot read '" + p.string() + "'");
  Fnv1a h;
  char buf[1 << 16];
  while (in.read(buf, sizeof buf) || in.gcount() > 0) h.update(buf, std::size_t(in.gcount()));
  return h.digest();
}

std::string dataset_id(const ScanSet& scan) { return scan.manifest().scan_id; }

PatchDataset extract_scan(const fs::path& path, const ExtractionConfig& ex) {
  const ScanSet scan = load_scan(resolve_manifest(path));
  PatchDataset ds = extract_dataset(scan, ex);
  ds.id = dataset_id(scan);
  return ds;
}

}  // namespace

void RunConfig::validate(bool check_paths) const {
  if (check_paths) {
    require_path(baseline, "baseline");
    if (!reference.empty()) require_path(reference, "reference");
    for (const auto& p : tests) require_path(p, "tests");
    for (const auto& p : elastic) require_path(p, "elastic");
    for (const auto& p : plastic) require_path(p, "plastic");
  }
  if (tests.empty()) throw Error(Errc::config_invalid, "tests: at least one test scan is required");
  if (output_dir.empty()) throw Error(Errc::config_invalid, "output_dir: path is required");
  if (!seed) throw Error(Errc::config_invalid, "seed: a seed is mandatory");
  if (k < 1) throw Error(Errc::config_invalid, "k: must be >= 1");
  if (!(t >= 0.0 && t <= 1.0)) throw Error(Errc::config_invalid, "t: must lie in [0, 1]");
  if (mode == EvalMode::partial) {
    if (!(delta_omega > 0.0 && delta_omega <= 360.0)) throw Error(Errc::config_invalid, "delta_omega: must lie in (0, 360]");
    if (repeats < 1) throw Error(Errc::config_invalid, "repeats: must be >= 1");
  }
  if (mode == EvalMode::stream && (window < 1 || stride < 1)) {
    throw Error(Errc::config_invalid, "window/stride: must be >= 1");
  }
  if (!elastic.empty() || !plastic.empty()) {
    if (elastic.empty() || plastic.size() < 2) {
      throw Error(Errc::config_invalid, "elastic/plastic: tuning needs one elastic and two plastic scans");
    }
    if (tune_k.empty() || tune_t.empty()) throw Error(Errc::config_invalid, "tune_k/tune_t: grid is empty");
  }
  if (use_tuned && elastic.empty()) throw Error(Errc::config_invalid, "use_tuned: no tuning groups given");
  extraction.validate();
  training.validate();
}

std::string RunConfig::canonical_json() const {
  json j;
  j["baseline"] = baseline.generic_string();
  j["reference"] = reference.generic_string();
  j["tests"] = paths_json(tests);
  j["elastic"] = paths_json(elastic);
  j["plastic"] = paths_json(plastic);
  j["extraction"] = {{"threshold", extraction.threshold ? json(*extraction.threshold) : json(nullptr)},
                     {"mad_factor", extraction.mad_factor},
                     {"min_area", extraction.gates.min_area},
                     {"max_area", extraction.gates.max_area},
                     {"patch_size", extraction.patch_size}};
  const auto& a = training.augmentation;
  j["training"] = {{"epochs", training.epochs},
                   {"steps_per_epoch", training.steps_per_epoch},
                   {"batch_size", training.batch_size},
                   {"lr", training.lr},
                   {"tau", training.tau},
                   {"n_probe", training.n_probe},
                   {"n_candidates", training.n_candidates},
                   {"early_stop", training.early_stop},
                   {"plateau_window", training.plateau_window},
                   {"plateau_frac", training.plateau_frac},
                   {"augmentation",
                    {{"flip_h", a.flip_h},
                     {"flip_v", a.flip_v},
                     {"rot90", a.rot90},
                     {"max_shift", a.max_shift},
                     {"scale_lo", a.scale_lo},
                     {"scale_hi", a.scale_hi},
                     {"noise_sigma", a.noise_sigma}}}};
  j["k"] = k;
  j["t"] = t;
  j["tune_k"] = tune_k;
  j["tune_t"] = tune_t;
  j["use_tuned"] = use_tuned;
  j["mode"] = mode_name(mode);
  j["delta_omega"] = delta_omega;
  j["repeats"] = repeats;
  j["window"] = window;
  j["stride"] = stride;
  j["seed"] = seed ? json(*seed) : json(nullptr);
  j["include_timing"] = include_timing;
  return j.dump();
}

std::uint64_t RunConfig::hash() const {
  Fnv1a h;
  h.update(canonical_json());
  return h.digest();
}

std::string stream_csv(const std::vector<StreamPoint>& points) {
  std::ostringstream os;
  os << "frames_seen,window_end_index,window_end_omega,n_patches,n_uncertain,rei\n";
  for (const auto& p : points) {
    os << p.frames_seen << ',' << p.window_end_index << ',' << format_double(p.window_end_omega) << ','
       << p.n_patches << ',' << p.n_uncertain << ',' << (p.rei ? format_double(*p.rei) : std::string()) << '\n';
  }
  return os.str();
}

RunSummary run_pipeline(const RunConfig& cfg, std::ostream* log) {
  cfg.validate(true);
  Stopwatch total;
  const std::uint64_t seed = *cfg.seed;
  const std::uint64_t chash = cfg.hash();
  fs::create_directories(cfg.output_dir);
  auto say = [&](const std::string& s) {
    if (log) *log << s << '\n';
  };
  json timings = json::object();

  Stopwatch sw;
  const PatchDataset baseline = extract_scan(cfg.baseline, cfg.extraction);
  timings["extract_baseline_s"] = sw.seconds();
  say("baseline " + baseline.id + ": " + std::to_string(baseline.size()) + " patches");

  sw = Stopwatch();
  TrainConfig tc = cfg.training;
  tc.seed = seed;
  TrainResult trained = train_encoder(baseline, tc, [&](const EpochLog& e) {
    say("epoch " + std::to_string(e.epoch) + " loss " + format_double(e.loss_mean) + " confidence_sum " +
        format_double(e.confidence_sum));
  });
  EncoderModel encoder = std::move(trained.encoder);
  encoder.config_hash = chash;
  timings["train_s"] = sw.seconds();
  const fs::path enc_path = cfg.output_dir / "encoder.bin";
  save_encoder(enc_path, encoder);
  write_training_log(cfg.output_dir / "training_log.csv", trained.log);

  sw = Stopwatch();
  const PatchDataset reference =
      cfg.reference.empty() ? baseline : extract_scan(cfg.reference, cfg.extraction);
  std::size_t k = cfg.k;
  double t = cfg.t;
  std::optional<SensitivityGrid> grid;
  if (!cfg.elastic.empty()) {
    std::vector<PatchDataset> el, pl;
    for (const auto& p : cfg.elastic) el.push_back(extract_scan(p, cfg.extraction));
    for (const auto& p : cfg.plastic) pl.push_back(extract_scan(p, cfg.extraction));
    grid = tune_grid(encoder, reference, el, pl, cfg.tune_k, cfg.tune_t, seed);
    write_grid(cfg.output_dir / "grid.csv", cfg.output_dir / "grid.json", *grid);
    say("tuned K=" + std::to_string(grid->best_k) + " t=" + format_double(grid->best_t) +
        " sensitivity=" + format_double(grid->best_value));
    if (cfg.use_tuned) {
      k = grid->best_k;
      t = grid->best_t;
    }
    timings["tune_s"] = sw.seconds();
    sw = Stopwatch();
  }
  ClusterModel cluster = fit_cluster_model(encoder, reference, k, t, seed);
  cluster.config_hash = chash;
  const fs::path cl_path = cfg.output_dir / "cluster.bin";
  save_cluster_model(cl_path, cluster);
  timings["cluster_s"] = sw.seconds();

  sw = Stopwatch();
  std::vector<REIReport> reports;
  json stream_files = json::array();
  for (const auto& p : cfg.tests) {
    const ScanSet scan = load_scan(resolve_manifest(p));
    REIReport r;
    switch (cfg.mode) {
      case EvalMode::batch: {
        PatchDataset ds = extract_dataset(scan, cfg.extraction);
        ds.id = dataset_id(scan);
        r = rei_score(ds, encoder, cluster);
        break;
      }
      case EvalMode::partial:
        r = partial_rei(scan, encoder, cluster, cfg.extraction, cfg.delta_omega, cfg.repeats, seed);
        break;
      case EvalMode::stream: {
        const auto points = stream_rei(scan, encoder, cluster, cfg.extraction, cfg.window, cfg.stride);
        const std::string name = "stream_" + dataset_id(scan) + ".csv";
        std::ofstream(cfg.output_dir / name) << stream_csv(points);
        stream_files.push_back(name);
        PatchDataset ds = extract_dataset(scan, cfg.extraction);
        ds.id = dataset_id(scan);
        r = rei_score(ds, encoder, cluster);
        break;
      }
    }
    r.seed = seed;
    r.config_hash = chash;
    say(r.dataset_id + " rei " + format_double(r.rei));
    reports.push_back(std::move(r));
  }
  timings["eval_s"] = sw.seconds();
  write_reports(cfg.output_dir / "reports.csv", cfg.output_dir / "reports.json", reports, cfg.include_timing);
  timings["total_s"] = total.seconds();

  json m;
  m["version"] = kVersion;
  m["compiler"] = __VERSION__;
  m["openmp"] = _OPENMP;
  m["workers"] = omp_get_max_threads();
  m["config"] = json::parse(cfg.canonical_json());
  m["config_hash"] = hex64(chash);
  m["seed"] = seed;
  m["encoder_checksum"] = hex64(encoder.checksum());
  m["k"] = k;
  m["t"] = t;
  m["baseline_patches"] = baseline.size();
  m["reference_patches"] = reference.size();
  m["files"] = {{"encoder.bin", hex64(file_checksum(enc_path))},
                {"cluster.bin", hex64(file_checksum(cl_path))},
                {"reports.csv", hex64(file_checksum(cfg.output_dir / "reports.csv"))},
                {"reports.json", hex64(file_checksum(cfg.output_dir / "reports.json"))}};
  if (!stream_files.empty()) m["stream_files"] = stream_files;
  if (grid) m["tuning"] = {{"best_k", grid->best_k}, {"best_t", grid->best_t}, {"best_value", grid->best_value}};
  m["wall_seconds"] = timings;
  json eval_times = json::array();
  for (const auto& r : reports) eval_times.push_back({{"dataset_id", r.dataset_id}, {"eval_wall_s", r.eval_wall_seconds}});
  m["eval_wall_seconds"] = eval_times;

  RunSummary s;
  s.manifest_path = cfg.output_dir / "run_manifest.json";
  std::ofstream(s.manifest_path) << m.dump(2) << '\n';
  s.config_hash = chash;
  s.encoder_checksum = encoder.checksum();
  s.k = k;
  s.t = t;
  s.reports = std::move(reports);
  return s;
}

}  // namespace rei
