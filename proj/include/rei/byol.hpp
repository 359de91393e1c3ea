#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "rei/network.hpp"
#include "rei/peak_extract.hpp"

namespace rei {

struct EncoderModel {
  net::Params<float> params;
  int patch_size = 15;
  std::uint64_t seed = 0;
  std::size_t epochs_trained = 0;
  std::string training_set;
  std::uint64_t config_hash = 0;

  std::uint64_t checksum() const { return net::checksum(params); }
  // n x kEmbedDim, row-major
  std::vector<float> embed(const PatchDataset& ds) const;
  std::vector<float> embed(std::span<const PeakPatch> patches) const;
};

EncoderModel random_encoder(std::uint64_t seed, int patch_size = 15);

// Checkpoint: magic, version, architecture descriptor (JSON text), then
// named tensors as (name, rank, dims, f32 values).
void save_encoder(const std::filesystem::path& path, const EncoderModel& model);
EncoderModel load_encoder(const std::filesystem::path& path);

struct AugmentationConfig {
  double flip_h = 0.5;
  double flip_v = 0.5;
  bool rot90 = true;
  int max_shift = 2;
  double scale_lo = 0.8;
  double scale_hi = 1.2;
  double noise_sigma = 0.01;

  static AugmentationConfig identity();
  void validate() const;
};

struct AugmentRecord {
  bool flip_h = false;
  bool flip_v = false;
  int quarter_turns = 0;
  int shift_row = 0;
  int shift_col = 0;
  double scale = 1.0;
};

std::vector<float> rot90(std::span<const float> patch, int size, int quarter_turns);

std::vector<float> augment(std::span<const float> patch, int size, const AugmentationConfig& cfg,
                           std::mt19937_64& rng, AugmentRecord* record = nullptr);
PeakPatch augment(const PeakPatch& patch, const AugmentationConfig& cfg, std::mt19937_64& rng);

// 2 - 2 cos(a, b); ZeroVector if either norm < 1e-12.
double byol_pair_loss(std::span<const float> online_pred, std::span<const float> target_proj);
// Mean of the two cross-view terms, in [0, 4].
double byol_loss(std::span<const float> pred1, std::span<const float> pred2, std::span<const float> proj1,
                 std::span<const float> proj2);

struct BYOLState {
  net::Params<float> online_encoder;
  net::Params<float> online_projector;
  net::Params<float> predictor;
  net::Params<float> target_encoder;
  net::Params<float> target_projector;
  float tau = 0.99f;
  std::uint64_t seed = 0;

  static BYOLState init(std::uint64_t seed, float tau = 0.99f);
};

// target <- tau * target + (1 - tau) * online
void ema_update(net::Params<float>& target, const net::Params<float>& online, float tau);

template <class T>
struct ByolGraph {
  std::vector<tensor::Var> online_encoder, online_projector, predictor;
  std::vector<tensor::Var> target_encoder, target_projector;
  tensor::Var loss;
};

// Builds the symmetrized BYOL objective for one pair of views on `tape`.
// Target parameters are bound as differentiable leaves behind a stop-gradient
// so that their zero gradient is observable.
template <class T>
ByolGraph<T> build_byol_graph(tensor::Tape<T>& tape, const net::Params<T>& enc, const net::Params<T>& proj,
                              const net::Params<T>& pred, const net::Params<T>& target_enc,
                              const net::Params<T>& target_proj, const tensor::Tensor<T>& view1,
                              const tensor::Tensor<T>& view2);

struct TrainConfig {
  std::size_t epochs = 100;
  std::size_t steps_per_epoch = 0;  // 0: dataset size capped at 5000
  std::size_t batch_size = 64;
  float lr = 5e-4f;
  float tau = 0.99f;
  AugmentationConfig augmentation;
  std::uint64_t seed = 0;
  std::size_t n_probe = 100;
  std::size_t n_candidates = 10;
  bool early_stop = false;
  std::size_t plateau_window = 20;
  double plateau_frac = 0.05;

  void validate() const;
  std::size_t resolved_steps(std::size_t dataset_size) const;
};

struct EpochLog {
  std::size_t epoch = 0;
  double loss_mean = 0.0;
  double confidence_sum = 0.0;
  double wall_ms = 0.0;
};

struct TrainResult {
  EncoderModel encoder;
  std::vector<EpochLog> log;
  BYOLState state;
};

using EpochCallback = std::function<void(const EpochLog&)>;

TrainResult train_encoder(const PatchDataset& baseline, const TrainConfig& cfg, const EpochCallback& on_epoch = {});

void write_training_log(const std::filesystem::path& path, const std::vector<EpochLog>& log);
std::vector<EpochLog> read_training_log(const std::filesystem::path& path);

// Per-probe confidence from the distances between an anchor and the candidate
// set: -1 if candidate `true_index` is not the nearest, else |D1 - D2| / D2.
double probe_confidence(std::span<const double> distances, std::size_t true_index);

double confidence_sum(const EncoderModel& encoder, const PatchDataset& dataset, std::uint64_t seed,
                      std::size_t n_probe = 100, std::size_t n_candidates = 10,
                      const AugmentationConfig& aug = {});

struct DistanceProbe {
  double median_augmented = 0.0;
  double median_random = 0.0;
};

// Median cosine distance between patches and their augmented views, and
// between patches and randomly chosen other patches.
DistanceProbe distance_probe(const EncoderModel& encoder, const PatchDataset& dataset, std::uint64_t seed,
                             std::size_t n_pairs = 100, const AugmentationConfig& aug = {});

double cosine_distance(std::span<const float> a, std::span<const float> b);

}  // namespace rei
