#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "rei/byol.hpp"
#include "rei/frame_store.hpp"
#include "rei/kernels.hpp"
#include "rei/peak_extract.hpp"

namespace rei {

struct KMeansResult {
  std::size_t k = 0;
  std::size_t dim = 0;
  std::vector<double> centers;  // k x dim
  std::vector<double> inertia_history;  // after each assignment step
  std::size_t iterations = 0;
  bool converged = false;
};

// Lloyd's algorithm with k-means++ seeding. Empty clusters are reseeded to
// the point farthest from its assigned center.
KMeansResult kmeans_fit(std::span<const double> vectors, std::size_t dim, std::size_t k, std::mt19937_64& rng,
                        std::size_t max_iter = 300, double tol = 1e-6);

struct ClusterModel {
  std::size_t k = 0;
  std::size_t dim = 0;
  std::vector<float> centers;  // k x dim
  double threshold = 0.5;
  std::string reference_id;
  std::uint64_t encoder_checksum = 0;
  std::uint64_t seed = 0;
  std::uint64_t config_hash = 0;

  void validate() const;
};

ClusterModel fit_cluster_model(const EncoderModel& encoder, const PatchDataset& reference, std::size_t k,
                               double threshold, std::uint64_t seed);
ClusterModel cluster_from_embeddings(std::span<const float> embeddings, std::size_t dim, std::size_t k,
                                     double threshold, std::uint64_t seed);

void save_cluster_model(const std::filesystem::path& path, const ClusterModel& model);
ClusterModel load_cluster_model(const std::filesystem::path& path);

struct Assignment {
  std::uint32_t center = 0;
  double confidence = 0.0;
};

// Margin (D2 - D1) / D2 over the two nearest centers; 1 when K = 1.
double margin_confidence(const kernels::NearestTwo& nt);
Assignment assignment_confidence(std::span<const float> vector, std::span<const float> centers, std::size_t dim);

std::vector<double> confidences(std::span<const float> embeddings, const ClusterModel& model);

struct PartialBlock {
  double delta_omega = 0.0;
  std::size_t n_repeats = 0;
  double rei_mean = 0.0;
  double rei_min = 0.0;
  double rei_max = 0.0;
  std::vector<double> reis;
  std::vector<double> start_omegas;
  double extract_seconds = 0.0;  // median per repeat
};

struct REIReport {
  std::string dataset_id;
  std::size_t n_patches = 0;
  std::size_t n_uncertain = 0;
  double rei = 0.0;
  double eval_wall_seconds = 0.0;
  std::optional<PartialBlock> partial;
  std::uint64_t seed = 0;
  std::uint64_t config_hash = 0;
};

std::size_t count_uncertain(std::span<const double> conf, double threshold);

REIReport rei_score(const PatchDataset& dataset, const EncoderModel& encoder, const ClusterModel& cluster);

REIReport partial_rei(const ScanSet& scan, const EncoderModel& encoder, const ClusterModel& cluster,
                      const ExtractionConfig& extraction, double delta_omega, std::size_t n_repeats,
                      std::uint64_t seed);

struct StreamPoint {
  std::size_t frames_seen = 0;
  std::size_t window_end_index = 0;  // source index of the newest frame
  double window_end_omega = 0.0;
  std::size_t n_patches = 0;
  std::size_t n_uncertain = 0;
  std::optional<double> rei;  // empty marks a gap (window produced no patches)
};

// Incremental sliding-window REI. Memory is bounded by the window length.
class StreamREI {
 public:
  StreamREI(const EncoderModel& encoder, const ClusterModel& cluster, ExtractionConfig extraction,
            std::size_t window, std::size_t stride);

  std::optional<StreamPoint> push(const Frame& frame);
  std::size_t frames_seen() const { return seen_; }

 private:
  const EncoderModel& encoder_;
  const ClusterModel& cluster_;
  ExtractionConfig extraction_;
  std::size_t window_;
  std::size_t stride_;
  std::size_t seen_ = 0;
  std::vector<std::pair<std::size_t, std::size_t>> ring_;  // (patches, uncertain) per frame
  std::size_t sum_patches_ = 0;
  std::size_t sum_uncertain_ = 0;
};

// Frames are decoded by a producer thread and handed over a bounded queue.
std::vector<StreamPoint> stream_rei(const ScanSet& scan, const EncoderModel& encoder, const ClusterModel& cluster,
                                    const ExtractionConfig& extraction, std::size_t window, std::size_t stride,
                                    std::size_t queue_capacity = 8,
                                    const std::function<void(const StreamPoint&)>& on_point = {});

// CSV / JSON report writers share field names.
std::string report_csv_header();
std::string report_csv_row(const REIReport& r, bool include_timing);
std::string reports_json(const std::vector<REIReport>& reports, bool include_timing);
void write_reports(const std::filesystem::path& csv_path, const std::filesystem::path& json_path,
                   const std::vector<REIReport>& reports, bool include_timing);

}  // namespace rei
