// rei: rare-event indicator workflow for diffraction scans.

#include <omp.h>

#include <CLI11.hpp>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <sstream>

#include "rei/byol.hpp"
#include "rei/cluster_rei.hpp"
#include "rei/error.hpp"
#include "rei/frame_store.hpp"
#include "rei/hyper_tune.hpp"
#include "rei/peak_extract.hpp"
#include "rei/pipeline.hpp"
#include "rei/synth_gen.hpp"
#include "rei/util.hpp"

namespace fs = std::filesystem;
using namespace rei;

namespace {

struct ExtractFlags {
  std::optional<double> threshold;
  double mad_factor = 5.0;
  std::size_t min_area = 4;
  std::size_t max_area = 2000;
  int patch_size = 15;

  void add(CLI::App* app) {
    app->add_option("--threshold", threshold, "absolute threshold in counts (default: median + k*MAD)");
    app->add_option("--mad-factor", mad_factor, "MAD multiplier for the automatic threshold");
    app->add_option("--min-area", min_area, "smallest retained component (pixels)");
    app->add_option("--max-area", max_area, "largest retained component (pixels)");
    app->add_option("--patch-size", patch_size, "patch edge length (odd)");
  }
  ExtractionConfig config() const {
    ExtractionConfig c;
    c.threshold = threshold;
    c.mad_factor = mad_factor;
    c.gates = {min_area, max_area};
    c.patch_size = patch_size;
    c.validate();
    return c;
  }
};

struct TrainFlags {
  TrainConfig cfg;
  void add(CLI::App* app) {
    app->add_option("--epochs", cfg.epochs, "training epochs");
    app->add_option("--steps", cfg.steps_per_epoch, "patch pairs per epoch (0: dataset size, capped at 5000)");
    app->add_option("--batch", cfg.batch_size, "pairs per optimizer step");
    app->add_option("--lr", cfg.lr, "SGD learning rate");
    app->add_option("--tau", cfg.tau, "target EMA decay");
    app->add_option("--n-probe", cfg.n_probe, "confidence-sum probes per epoch");
    app->add_option("--n-candidates", cfg.n_candidates, "candidates per probe");
    app->add_flag("--early-stop", cfg.early_stop, "stop once confidence_sum plateaus");
    app->add_option("--plateau-window", cfg.plateau_window, "plateau window (epochs)");
    app->add_option("--plateau-frac", cfg.plateau_frac, "plateau fraction of total rise");
  }
};

PatchDataset load_dataset_or_scan(const fs::path& p, const ExtractionConfig& ex) {
  if (fs::is_directory(p) || p.extension() == ".json") {
    const ScanSet scan = load_scan(resolve_manifest(p));
    PatchDataset ds = extract_dataset(scan, ex);
    ds.id = scan.manifest().scan_id;
    return ds;
  }
  return read_patch_dataset(p);
}

void print_stats(const PatchDataset& ds) {
  std::cout << ds.id << ": " << ds.size() << " patches from " << ds.stats.frames << " frames ("
            << ds.stats.border_discarded << " border-discarded, " << ds.stats.saturated_pixels
            << " saturated pixels), " << format_double(ds.stats.frames_per_second) << " frames/s\n";
}

void apply_workers() {
  if (const char* w = std::getenv("REI_WORKERS")) {
    char* end = nullptr;
    const long n = std::strtol(w, &end, 10);
    if (end == w || *end != '\0' || n < 1) {
      throw Error(Errc::config_invalid, "REI_WORKERS: expected a positive integer, got '" + std::string(w) + "'");
    }
    omp_set_num_threads(int(n));
  }
}

int fail(ExitClass c, const std::string& msg) {
  std::cerr << "error: " << msg << '\n';
  return static_cast<int>(c);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Rare-event indicator workflow for diffraction scans"};
  app.set_config("--config", "", "TOML/INI file with option values; flags override it");
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);

  // synth
  auto* synth = app.add_subcommand("synth", "generate a synthetic scan series");
  std::string scenario = "slip";
  fs::path synth_out;
  synth::SyntheticScanConfig base;
  synth::Protocol proto;
  std::vector<double> levels;
  bool single = false;
  synth->add_option("--scenario", scenario, "scenario family")->check(CLI::IsMember(synth::scenario_names()));
  synth->add_option("--out", synth_out, "output directory")->required();
  synth->add_flag("--single", single, "write one scan from the base config instead of a series");
  synth->add_option("--levels", levels, "scenario ladder (default per scenario)");
  synth->add_option("--scan-id", base.scan_id, "base scan id");
  synth->add_option("--seed", base.seed, "spot population seed");
  synth->add_option("--noise-seed", base.noise_seed, "noise seed");
  synth->add_option("--width", base.width);
  synth->add_option("--height", base.height);
  synth->add_option("--frames", base.n_frames);
  synth->add_option("--omega-step", base.omega_step);
  synth->add_option("--n-spots", base.n_spots);
  synth->add_option("--rings", base.ring_radii, "ring radii in pixels");
  synth->add_option("--background", base.background, "Poisson background mean");
  synth->add_option("--amplitude-min", base.amplitude_min);
  synth->add_option("--amplitude-max", base.amplitude_max);
  synth->add_option("--onset", proto.onset_frame, "stream scenarios: onset frame (0: middle)");
  synth->add_option("--ramp-frames", proto.ramp_frames, "stream_loading: ramp length in frames");
  synth->add_option("--ramp-to", proto.ramp_to, "stream_loading: final smear factor");

  // extract
  auto* extract = app.add_subcommand("extract", "extract peak patches from a scan");
  fs::path ex_scan, ex_out;
  ExtractFlags exf;
  extract->add_option("--scan", ex_scan, "scan directory or manifest.json")->required();
  extract->add_option("--out", ex_out, "patch dataset file")->required();
  exf.add(extract);

  // train
  auto* train = app.add_subcommand("train", "train the encoder on a baseline dataset");
  fs::path tr_data, tr_out, tr_log;
  TrainFlags trf;
  ExtractFlags tr_exf;
  std::optional<std::uint64_t> tr_seed;
  train->add_option("--dataset", tr_data, "patch dataset file or scan directory")->required();
  train->add_option("--out", tr_out, "encoder checkpoint")->required();
  train->add_option("--log", tr_log, "training log CSV (default: <out>.log.csv)");
  train->add_option("--seed", tr_seed, "training seed")->required();
  trf.add(train);
  tr_exf.add(train);

  // cluster
  auto* cluster = app.add_subcommand("cluster", "fit reference centers");
  fs::path cl_data, cl_enc, cl_out;
  std::size_t cl_k = 20;
  double cl_t = 0.35;
  std::optional<std::uint64_t> cl_seed;
  ExtractFlags cl_exf;
  cluster->add_option("--dataset", cl_data, "reference dataset file or scan directory")->required();
  cluster->add_option("--encoder", cl_enc, "encoder checkpoint")->required();
  cluster->add_option("--out", cl_out, "cluster model file")->required();
  cluster->add_option("-k,--k", cl_k, "number of centers");
  cluster->add_option("-t,--t", cl_t, "confidence threshold");
  cluster->add_option("--seed", cl_seed, "k-means seed")->required();
  cl_exf.add(cluster);

  // eval
  auto* eval = app.add_subcommand("eval", "compute REI for test scans");
  std::vector<fs::path> ev_inputs;
  fs::path ev_enc, ev_cl, ev_csv, ev_json, ev_stream_dir;
  std::string ev_mode = "batch";
  double ev_delta = 40.0;
  std::size_t ev_repeats = 20, ev_window = 30, ev_stride = 10;
  std::optional<std::uint64_t> ev_seed;
  bool ev_timing = false;
  ExtractFlags ev_exf;
  eval->add_option("inputs", ev_inputs, "test scans (directories) or patch dataset files")->required();
  eval->add_option("--encoder", ev_enc, "encoder checkpoint")->required();
  eval->add_option("--cluster", ev_cl, "cluster model file")->required();
  eval->add_option("--mode", ev_mode, "batch | partial | stream")->check(CLI::IsMember({"batch", "partial", "stream"}));
  eval->add_option("--delta-omega", ev_delta, "partial mode: segment width (degrees)");
  eval->add_option("--repeats", ev_repeats, "partial mode: random starts");
  eval->add_option("--window", ev_window, "stream mode: window (frames)");
  eval->add_option("--stride", ev_stride, "stream mode: stride (frames)");
  eval->add_option("--seed", ev_seed, "partial mode seed");
  eval->add_option("--csv", ev_csv, "report CSV");
  eval->add_option("--json", ev_json, "report JSON");
  eval->add_option("--stream-dir", ev_stream_dir, "stream mode: directory for per-scan series");
  eval->add_flag("--timing", ev_timing, "include wall_s in reports");
  ev_exf.add(eval);

  // tune
  auto* tune = app.add_subcommand("tune", "REI-sensitivity grid over (K, t), or epoch selection");
  fs::path tu_enc, tu_ref, tu_out, tu_log;
  std::vector<fs::path> tu_el, tu_pl;
  std::vector<std::size_t> tu_k = {10, 20, 40};
  std::vector<double> tu_t = {0.3, 0.5, 0.7};
  std::optional<std::uint64_t> tu_seed;
  std::size_t tu_window = 20;
  double tu_frac = 0.05;
  ExtractFlags tu_exf;
  tune->add_option("--encoder", tu_enc, "encoder checkpoint");
  tune->add_option("--reference", tu_ref, "reference dataset or scan");
  tune->add_option("--elastic", tu_el, "elastic-state datasets or scans");
  tune->add_option("--plastic", tu_pl, "plastic-state datasets or scans");
  tune->add_option("-k,--k", tu_k, "K values");
  tune->add_option("-t,--t", tu_t, "t values");
  tune->add_option("--seed", tu_seed, "k-means seed");
  tune->add_option("--out", tu_out, "output prefix (writes <out>.csv and <out>.json)");
  tune->add_option("--training-log", tu_log, "select epochs from a training log instead");
  tune->add_option("--plateau-window", tu_window);
  tune->add_option("--plateau-frac", tu_frac);
  tu_exf.add(tune);

  // pipeline
  auto* pipe = app.add_subcommand("pipeline", "extract, train, cluster and evaluate end to end");
  RunConfig rc;
  std::string rc_mode = "batch";
  ExtractFlags pi_exf;
  TrainFlags pi_trf;
  pipe->add_option("--baseline", rc.baseline, "baseline scan")->required();
  pipe->add_option("--reference", rc.reference, "reference scan (default: baseline)");
  pipe->add_option("--tests", rc.tests, "test scans")->required();
  pipe->add_option("--out", rc.output_dir, "output directory")->required();
  pipe->add_option("-k,--k", rc.k, "number of centers");
  pipe->add_option("-t,--t", rc.t, "confidence threshold");
  pipe->add_option("--elastic", rc.elastic, "elastic-state scans for tuning");
  pipe->add_option("--plastic", rc.plastic, "plastic-state scans for tuning");
  pipe->add_option("--tune-k", rc.tune_k, "K grid");
  pipe->add_option("--tune-t", rc.tune_t, "t grid");
  pipe->add_flag("--use-tuned", rc.use_tuned, "evaluate with the tuned (K, t)");
  pipe->add_option("--mode", rc_mode, "batch | partial | stream")->check(CLI::IsMember({"batch", "partial", "stream"}));
  pipe->add_option("--delta-omega", rc.delta_omega);
  pipe->add_option("--repeats", rc.repeats);
  pipe->add_option("--window", rc.window);
  pipe->add_option("--stride", rc.stride);
  pipe->add_option("--seed", rc.seed, "seed for training, clustering and partial draws")->required();
  pipe->add_flag("--timing", rc.include_timing, "include wall_s in reports");
  pi_exf.add(pipe);
  pi_trf.add(pipe);

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return static_cast<int>(ExitClass::config);
  }

  try {
    apply_workers();

    if (*synth) {
      base.validate();
      if (single) {
        auto g = synth::generate_scan(base);
        synth::write_generated(synth_out / base.scan_id, g);
        std::cout << (synth_out / base.scan_id).string() << '\n';
      } else {
        proto.scenario = scenario;
        proto.base = base;
        proto.levels = levels;
        for (const auto& d : synth::write_experiment(synth_out, proto)) std::cout << d.string() << '\n';
      }
    } else if (*extract) {
      const ScanSet scan = load_scan(resolve_manifest(ex_scan));
      PatchDataset ds = extract_dataset(scan, exf.config());
      ds.id = scan.manifest().scan_id;
      write_patch_dataset(ex_out, ds);
      print_stats(ds);
    } else if (*train) {
      const PatchDataset ds = load_dataset_or_scan(tr_data, tr_exf.config());
      TrainConfig tc = trf.cfg;
      tc.seed = *tr_seed;
      auto res = train_encoder(ds, tc, [](const EpochLog& e) {
        std::cout << "epoch " << e.epoch << " loss " << format_double(e.loss_mean) << " confidence_sum "
                  << format_double(e.confidence_sum) << '\n';
      });
      Fnv1a h;
      h.update(ds.id);
      h.update_value(tc.seed);
      h.update_value(tc.epochs);
      h.update_value(tc.lr);
      res.encoder.config_hash = h.digest();
      save_encoder(tr_out, res.encoder);
      write_training_log(tr_log.empty() ? fs::path(tr_out.string() + ".log.csv") : tr_log, res.log);
      std::cout << "encoder " << hex64(res.encoder.checksum()) << " -> " << tr_out.string() << '\n';
    } else if (*cluster) {
      const EncoderModel enc = load_encoder(cl_enc);
      const PatchDataset ds = load_dataset_or_scan(cl_data, cl_exf.config());
      ClusterModel m = fit_cluster_model(enc, ds, cl_k, cl_t, *cl_seed);
      m.config_hash = enc.config_hash;
      save_cluster_model(cl_out, m);
      std::cout << "cluster K=" << m.k << " t=" << format_double(m.threshold) << " -> " << cl_out.string() << '\n';
    } else if (*eval) {
      const EncoderModel enc = load_encoder(ev_enc);
      const ClusterModel cm = load_cluster_model(ev_cl);
      if (enc.checksum() != cm.encoder_checksum) {
        throw Error(Errc::model_mismatch, "encoder " + hex64(enc.checksum()) + " does not match cluster model (" +
                                              hex64(cm.encoder_checksum) + ")");
      }
      const ExtractionConfig ex = ev_exf.config();
      const EvalMode mode = parse_mode(ev_mode);
      if (mode == EvalMode::partial && !ev_seed) throw Error(Errc::config_invalid, "seed: required in partial mode");
      std::vector<REIReport> reports;
      for (const auto& in : ev_inputs) {
        REIReport r;
        if (mode == EvalMode::batch) {
          r = rei_score(load_dataset_or_scan(in, ex), enc, cm);
        } else {
          const ScanSet scan = load_scan(resolve_manifest(in));
          if (mode == EvalMode::partial) {
            r = partial_rei(scan, enc, cm, ex, ev_delta, ev_repeats, *ev_seed);
          } else {
            const auto pts = stream_rei(scan, enc, cm, ex, ev_window, ev_stride, 8, [](const StreamPoint& p) {
              std::cout << "stream omega " << format_double(p.window_end_omega) << " rei "
                        << (p.rei ? format_double(*p.rei) : std::string("gap")) << '\n';
            });
            if (!ev_stream_dir.empty()) {
              fs::create_directories(ev_stream_dir);
              std::ofstream(ev_stream_dir / ("stream_" + scan.manifest().scan_id + ".csv")) << stream_csv(pts);
            }
            PatchDataset ds = extract_dataset(scan, ex);
            ds.id = scan.manifest().scan_id;
            r = rei_score(ds, enc, cm);
          }
        }
        if (ev_seed) r.seed = *ev_seed;
        std::cout << r.dataset_id << " rei " << format_double(r.rei) << " (" << r.n_uncertain << "/" << r.n_patches
                  << ")\n";
        reports.push_back(std::move(r));
      }
      if (!ev_csv.empty() || !ev_json.empty()) {
        const fs::path csv = ev_csv.empty() ? fs::path(ev_json).replace_extension(".csv") : ev_csv;
        const fs::path js = ev_json.empty() ? fs::path(ev_csv).replace_extension(".json") : ev_json;
        write_reports(csv, js, reports, ev_timing);
      }
    } else if (*tune) {
      if (!tu_log.empty()) {
        const auto log = read_training_log(tu_log);
        std::cout << "epochs " << select_epochs(log, tu_window, tu_frac) << '\n';
      } else {
        if (tu_enc.empty() || tu_ref.empty() || tu_out.empty() || !tu_seed) {
          throw Error(Errc::config_invalid, "tune: --encoder, --reference, --out and --seed are required for a grid");
        }
        const ExtractionConfig ex = tu_exf.config();
        const EncoderModel enc = load_encoder(tu_enc);
        const PatchDataset ref = load_dataset_or_scan(tu_ref, ex);
        std::vector<PatchDataset> el, pl;
        for (const auto& p : tu_el) el.push_back(load_dataset_or_scan(p, ex));
        for (const auto& p : tu_pl) pl.push_back(load_dataset_or_scan(p, ex));
        auto grid = tune_grid(enc, ref, el, pl, tu_k, tu_t, *tu_seed);
        write_grid(tu_out.string() + ".csv", tu_out.string() + ".json", grid);
        std::cout << "best K=" << grid.best_k << " t=" << format_double(grid.best_t)
                  << " sensitivity=" << format_double(grid.best_value) << (grid.all_negative ? " (all negative)" : "")
                  << '\n';
      }
    } else if (*pipe) {
      rc.mode = parse_mode(rc_mode);
      rc.extraction = pi_exf.config();
      rc.training = pi_trf.cfg;
      const auto s = run_pipeline(rc, &std::cout);
      std::cout << "manifest " << s.manifest_path.string() << '\n';
    }
  } catch (const Error& e) {
    return fail(exit_class(e.code()), e.what());
  } catch (const nlohmann::json::exception& e) {
    return fail(ExitClass::data, e.what());
  } catch (const fs::filesystem_error& e) {
    return fail(ExitClass::io, e.what());
  } catch (const std::exception& e) {
    return fail(ExitClass::data, e.what());
  }
  return 0;
}
