#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "rei/frame_store.hpp"

namespace rei {

struct Mask {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> bits;
};

struct ComponentStats {
  std::uint32_t label = 0;
  std::size_t area = 0;
  int row_min = 0, row_max = 0, col_min = 0, col_max = 0;
  double centroid_row = 0.0;  // intensity weighted
  double centroid_col = 0.0;
  double total_intensity = 0.0;
};

struct ComponentMask {
  int width = 0;
  int height = 0;
  std::vector<std::uint32_t> labels;  // 0 = background, retained components are 1..n
  std::vector<ComponentStats> components;
  std::size_t discarded_small = 0;
  std::size_t discarded_large = 0;

  std::size_t n_components() const { return components.size(); }
};

struct AreaGates {
  std::size_t min_area = 4;
  std::size_t max_area = 2000;
};

struct PeakPatch {
  int size = 0;
  std::vector<float> pixels;  // size*size, row-major, max == 1
  std::size_t frame_index = 0;
  double omega = 0.0;
  double centroid_row = 0.0;
  double centroid_col = 0.0;
  double raw_max = 0.0;
  std::size_t component_area = 0;
};

struct ExtractionConfig {
  // Absolute threshold in counts; when unset the per-frame rule
  // median + mad_factor * MAD is used.
  std::optional<double> threshold;
  double mad_factor = 5.0;
  AreaGates gates;
  int patch_size = 15;

  void validate() const;
};

struct ExtractionStats {
  std::size_t frames = 0;
  std::size_t components = 0;
  std::size_t border_discarded = 0;
  std::size_t saturated_pixels = 0;
  double seconds = 0.0;
  double frames_per_second = 0.0;
};

struct PatchDataset {
  std::string id;
  int patch_size = 15;
  std::vector<PeakPatch> patches;
  ExtractionStats stats;

  std::size_t size() const { return patches.size(); }
  bool empty() const { return patches.empty(); }
};

struct FramePatches {
  std::vector<PeakPatch> patches;
  std::size_t components = 0;
  std::size_t border_discarded = 0;
  std::size_t saturated_pixels = 0;
};

double auto_threshold(const Image& image, double mad_factor = 5.0);

Mask threshold_mask(const Image& image, double threshold);

// 8-connected labeling of the mask with area gates; statistics are taken
// from `image` intensities.
ComponentMask connected_components(const Mask& mask, const Image& image, const AreaGates& gates = {});

struct PatchExtraction {
  std::vector<PeakPatch> patches;
  std::size_t border_discarded = 0;
};

PatchExtraction extract_patches(const Frame& frame, const ComponentMask& comps, int patch_size);

FramePatches extract_frame(const Frame& frame, const ExtractionConfig& cfg);

PatchDataset extract_dataset(const ScanSet& scan, const ExtractionConfig& cfg);
PatchDataset extract_dataset_serial(const ScanSet& scan, const ExtractionConfig& cfg);

// Binary patches file plus "<path>.provenance.csv" sidecar.
void write_patch_dataset(const std::filesystem::path& path, const PatchDataset& ds);
PatchDataset read_patch_dataset(const std::filesystem::path& path);

}  // namespace rei
