#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "rei/frame_store.hpp"

namespace rei::synth {

struct SpotSpec {
  std::size_t id = 0;
  double ring_radius = 0.0;      // pixels from the detector center
  double azimuth = 0.0;          // degrees
  double omega_center = 0.0;     // degrees, absolute rotation angle
  double omega_width = 0.0;      // degrees, Gaussian sigma in omega
  double amplitude = 0.0;        // peak counts at smear 1, flux 1
  double sigma_radial = 0.0;     // pixels
  double sigma_azimuthal = 0.0;  // pixels
  double height = 0.5;           // grain position along the sample, in [0, 1]
  double fracture_draw = 1.0;    // fragmented when below the fragment factor

  void validate() const;
};

// One emitter drawn into one frame.
struct RenderedSpot {
  std::size_t spot_id = 0;
  int shard = -1;  // -1 for an intact spot
  double row = 0.0;
  double col = 0.0;
  double amplitude = 0.0;  // peak counts in this frame before noise and clipping
  double sigma_radial = 0.0;
  double sigma_azimuthal = 0.0;
  double azimuth = 0.0;
};

struct FrameTruth {
  std::size_t frame_index = 0;
  double omega = 0.0;
  double smear = 1.0;
  double fragment = 0.0;
  double flux = 1.0;
  std::vector<RenderedSpot> spots;
};

struct GroundTruth {
  std::string scan_id;
  std::vector<SpotSpec> spots;
  std::vector<FrameTruth> frames;

  std::string to_json() const;
  static GroundTruth from_json(const std::string& text);
  std::size_t rendered_count() const;
};

struct SyntheticScanConfig {
  std::string scan_id = "synthetic";
  int width = 160;
  int height = 160;
  std::size_t n_frames = 360;
  double omega_start = 0.0;
  double omega_step = 1.0;

  std::size_t n_spots = 1300;
  std::vector<double> ring_radii = {30.0, 45.0, 60.0, 72.0};
  double sigma_radial = 1.1;
  double sigma_azimuthal = 1.3;
  double sigma_jitter = 0.2;  // relative, uniform
  double omega_width = 0.7;
  double amplitude_min = 60.0;
  double amplitude_max = 1500.0;
  double omega_min = 0.0;  // range the spot omega centers are drawn from
  double omega_max = 360.0;
  double min_separation = 12.0;  // pixels, between spots that overlap in omega

  std::uint64_t seed = 1;        // spot population
  std::uint64_t noise_seed = 1;  // Poisson realisation

  // Per-frame multipliers: one value (constant) or n_frames values.
  std::vector<double> smear_factor = {1.0};
  std::vector<double> fragment_factor = {0.0};
  std::vector<double> flux_scale = {1.0};

  double background = 2.0;
  double dark_level = 100.0;  // 0 disables the dark frame
  double beam_fraction = 1.0;  // illuminated fraction of the sample height
  double grain_extent = 0.15;

  std::map<std::string, std::string> tags;

  void validate() const;
  double smear_at(std::size_t frame) const;
  double fragment_at(std::size_t frame) const;
  double flux_at(std::size_t frame) const;
  ScanManifest manifest() const;
};

std::string config_to_json(const SyntheticScanConfig& cfg);

std::vector<SpotSpec> sample_spots(const SyntheticScanConfig& cfg);

// Fraction of a spot's ideal intensity falling into frame `frame`.
double frame_weight(const SyntheticScanConfig& cfg, const SpotSpec& spot, std::size_t frame);

// Noise-free expected counts (no dark, no background) for one frame.
std::vector<double> render_clean(const SyntheticScanConfig& cfg, const std::vector<SpotSpec>& spots,
                                 std::size_t frame, FrameTruth* truth = nullptr);

DarkFrame make_dark(int width, int height, double level);

struct GeneratedScan {
  std::string label;
  ScanSet scan;
  GroundTruth truth;
  SyntheticScanConfig config;
};

GeneratedScan generate_scan(const SyntheticScanConfig& cfg);

// Scan directory plus truth.json.
void write_generated(const std::filesystem::path& dir, const GeneratedScan& g);

struct Protocol {
  std::string scenario = "slip";
  SyntheticScanConfig base;
  std::vector<double> levels;  // scenario ladder; defaults when empty
  // stream scenarios
  std::size_t onset_frame = 0;  // 0: middle of the scan
  std::size_t ramp_frames = 6;
  double ramp_to = 3.0;
};

struct PlannedScan {
  std::string label;
  double level = 0.0;
  SyntheticScanConfig config;
};

const std::vector<std::string>& scenario_names();
std::vector<double> default_levels(const std::string& scenario);

std::vector<PlannedScan> plan_experiment(const Protocol& protocol);
std::vector<GeneratedScan> generate_experiment(const Protocol& protocol);

// Renders and writes one scan at a time: dir/<scan_id>/ for each scan, then
// dir/scenario.json. Returns the scan directories in order.
std::vector<std::filesystem::path> write_experiment(const std::filesystem::path& dir, const Protocol& protocol);

std::string scenario_json(const Protocol& protocol, const std::vector<PlannedScan>& plan);

}  // namespace rei::synth
