#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rei/byol.hpp"
#include "rei/cluster_rei.hpp"

namespace rei {

// (min(plastic) - max(elastic)) / (max(plastic) - min(plastic)).
// Negative values mean the onset was not separated and are returned as-is.
double rei_sensitivity(std::span<const double> rei_elastic, std::span<const double> rei_plastic);

struct SensitivityGrid {
  std::vector<std::size_t> k_values;
  std::vector<double> t_values;
  std::vector<double> cells;  // |K| x |t|, row-major; NaN where the plastic spread was zero
  std::vector<std::string> elastic_ids;
  std::vector<std::string> plastic_ids;
  std::size_t best_k = 0;
  double best_t = 0.0;
  double best_value = 0.0;
  bool all_negative = false;

  double at(std::size_t ki, std::size_t ti) const { return cells[ki * t_values.size() + ti]; }
};

// Argmax over a filled grid; ties go to the smaller K, then the smaller t.
void select_grid_argmax(SensitivityGrid& grid);

SensitivityGrid tune_grid(const EncoderModel& encoder, const PatchDataset& reference,
                          const std::vector<PatchDataset>& elastic, const std::vector<PatchDataset>& plastic,
                          const std::vector<std::size_t>& k_values, const std::vector<double>& t_values,
                          std::uint64_t seed);

void write_grid(const std::filesystem::path& csv_path, const std::filesystem::path& json_path,
                const SensitivityGrid& grid);

// True when the trailing `window` values of `curve` span no more than
// frac * (max(curve) - min(curve)).
bool plateau_reached(std::span<const double> curve, std::size_t window, double frac);

// First epoch whose trailing window satisfies the plateau rule against the
// whole curve's rise; the final epoch when none does.
std::size_t select_epochs(const std::vector<EpochLog>& log, std::size_t window = 20, double frac = 0.05);

}  // namespace rei
