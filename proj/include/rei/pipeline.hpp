#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "rei/byol.hpp"
#include "rei/cluster_rei.hpp"
#include "rei/peak_extract.hpp"

namespace rei {

inline constexpr const char* kVersion = "0.4.0";

enum class EvalMode { batch, partial, stream };

std::string mode_name(EvalMode m);
EvalMode parse_mode(const std::string& s);

struct RunConfig {
  std::filesystem::path baseline;   // scan manifest or directory
  std::filesystem::path reference;  // defaults to the baseline when empty
  std::vector<std::filesystem::path> tests;
  std::filesystem::path output_dir;

  ExtractionConfig extraction;
  TrainConfig training;
  std::size_t k = 20;
  double t = 0.35;

  // Optional (K, t) tuning over labelled test scans.
  std::vector<std::filesystem::path> elastic;
  std::vector<std::filesystem::path> plastic;
  std::vector<std::size_t> tune_k;
  std::vector<double> tune_t;
  bool use_tuned = false;

  EvalMode mode = EvalMode::batch;
  double delta_omega = 40.0;
  std::size_t repeats = 20;
  std::size_t window = 30;
  std::size_t stride = 10;

  std::optional<std::uint64_t> seed;
  bool include_timing = false;

  // ConfigInvalid naming the field; paths are checked when check_paths is set.
  void validate(bool check_paths = true) const;
  // Canonical JSON of every field that influences results (output_dir excluded).
  std::string canonical_json() const;
  std::uint64_t hash() const;
};

std::filesystem::path resolve_manifest(const std::filesystem::path& scan);

struct RunSummary {
  std::uint64_t config_hash = 0;
  std::uint64_t encoder_checksum = 0;
  std::size_t k = 0;
  double t = 0.0;
  std::vector<REIReport> reports;
  std::filesystem::path manifest_path;
};

// Runs extract -> train -> cluster -> (tune) -> evaluate and writes into
// output_dir: encoder.bin, training_log.csv, cluster.bin, reports.csv,
// reports.json, optional grid.csv/grid.json, stream_<id>.csv and
// run_manifest.json.
RunSummary run_pipeline(const RunConfig& cfg, std::ostream* log = nullptr);

std::string stream_csv(const std::vector<StreamPoint>& points);

}  // namespace rei
