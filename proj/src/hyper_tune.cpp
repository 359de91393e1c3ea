#include "rei/hyper_tune.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include <json.hpp>

#include "rei/error.hpp"
#include "rei/util.hpp"

namespace rei {

double rei_sensitivity(std::span<const double> rei_elastic, std::span<const double> rei_plastic) {
  if (rei_elastic.empty() || rei_plastic.empty()) throw Error(Errc::empty_group, "both REI groups must be non-empty");
  if (rei_plastic.size() < 2) throw Error(Errc::empty_group, "plastic group needs at least two volumes");
  const auto [pmin, pmax] = std::minmax_element(rei_plastic.begin(), rei_plastic.end());
  const double emax = *std::max_element(rei_elastic.begin(), rei_elastic.end());
  const double spread = *pmax - *pmin;
  if (spread == 0.0) throw Error(Errc::plastic_spread_zero, "plastic REI spread is zero");
  return (*pmin - emax) / spread;
}

void select_grid_argmax(SensitivityGrid& grid) {
  bool found = false;
  bool any_positive = false;
  for (std::size_t ki = 0; ki < grid.k_values.size(); ++ki) {
    for (std::size_t ti = 0; ti < grid.t_values.size(); ++ti) {
      const double v = grid.at(ki, ti);
      if (std::isnan(v)) continue;
      if (v > 0.0) any_positive = true;
      const bool better = !found || v > grid.best_value ||
                          (v == grid.best_value && (grid.k_values[ki] < grid.best_k ||
                                                    (grid.k_values[ki] == grid.best_k && grid.t_values[ti] < grid.best_t)));
      if (better) {
        found = true;
        grid.best_value = v;
        grid.best_k = grid.k_values[ki];
        grid.best_t = grid.t_values[ti];
      }
    }
  }
  if (!found) grid.best_value = std::numeric_limits<double>::quiet_NaN();
  grid.all_negative = !any_positive;
}

SensitivityGrid tune_grid(const EncoderModel& encoder, const PatchDataset& reference,
                          const std::vector<PatchDataset>& elastic, const std::vector<PatchDataset>& plastic,
                          const std::vector<std::size_t>& k_values, const std::vector<double>& t_values,
                          std::uint64_t seed) {
  if (elastic.empty() || plastic.empty()) throw Error(Errc::empty_group, "need elastic and plastic groups");
  if (plastic.size() < 2) throw Error(Errc::empty_group, "plastic group needs at least two volumes");
  if (k_values.empty() || t_values.empty()) throw Error(Errc::config_invalid, "empty K or t list");
  for (double t : t_values) {
    if (!(t >= 0.0 && t <= 1.0)) throw Error(Errc::config_invalid, "t values must lie in [0,1]");
  }
  if (reference.empty()) throw Error(Errc::empty_dataset, "reference dataset is empty");
  SensitivityGrid grid;
  grid.k_values = k_values;
  grid.t_values = t_values;
  grid.cells.assign(k_values.size() * t_values.size(), std::numeric_limits<double>::quiet_NaN());
  for (const auto& d : elastic) grid.elastic_ids.push_back(d.id);
  for (const auto& d : plastic) grid.plastic_ids.push_back(d.id);

  const auto ref_emb = encoder.embed(reference);
  std::vector<std::vector<float>> el_emb, pl_emb;
  for (const auto& d : elastic) {
    if (d.empty()) throw Error(Errc::empty_dataset, "dataset '" + d.id + "' is empty");
    el_emb.push_back(encoder.embed(d));
  }
  for (const auto& d : plastic) {
    if (d.empty()) throw Error(Errc::empty_dataset, "dataset '" + d.id + "' is empty");
    pl_emb.push_back(encoder.embed(d));
  }

  for (std::size_t ki = 0; ki < k_values.size(); ++ki) {
    // One fit per K; t only thresholds the confidences.
    const ClusterModel model = cluster_from_embeddings(ref_emb, net::kEmbedDim, k_values[ki], 0.5, seed);
    std::vector<std::vector<double>> el_conf, pl_conf;
    for (const auto& e : el_emb) el_conf.push_back(confidences(e, model));
    for (const auto& e : pl_emb) pl_conf.push_back(confidences(e, model));
    for (std::size_t ti = 0; ti < t_values.size(); ++ti) {
      auto group_rei = [&](const std::vector<std::vector<double>>& confs) {
        std::vector<double> out;
        for (const auto& c : confs) out.push_back(double(count_uncertain(c, t_values[ti])) / double(c.size()));
        return out;
      };
      try {
        grid.cells[ki * t_values.size() + ti] = rei_sensitivity(group_rei(el_conf), group_rei(pl_conf));
      } catch (const Error& e) {
        if (e.code() != Errc::plastic_spread_zero) throw;
      }
    }
  }
  select_grid_argmax(grid);
  return grid;
}

void write_grid(const std::filesystem::path& csv_path, const std::filesystem::path& json_path,
                const SensitivityGrid& grid) {
  {
    std::ofstream out(csv_path, std::ios::trunc);
    if (!out) throw Error(Errc::io_error, "cannot write " + csv_path.string());
    out << "K,t,rei_sensitivity\n";
    for (std::size_t ki = 0; ki < grid.k_values.size(); ++ki) {
      for (std::size_t ti = 0; ti < grid.t_values.size(); ++ti) {
        const double v = grid.at(ki, ti);
        out << grid.k_values[ki] << ',' << format_double(grid.t_values[ti]) << ','
            << (std::isnan(v) ? std::string() : format_double(v)) << '\n';
      }
    }
  }
  nlohmann::ordered_json j;
  j["k_values"] = grid.k_values;
  j["t_values"] = grid.t_values;
  j["elastic"] = grid.elastic_ids;
  j["plastic"] = grid.plastic_ids;
  j["best_k"] = grid.best_k;
  j["best_t"] = grid.best_t;
  j["best_rei_sensitivity"] = std::isnan(grid.best_value) ? nlohmann::ordered_json(nullptr)
                                                           : nlohmann::ordered_json(grid.best_value);
  j["all_negative"] = grid.all_negative;
  std::ofstream out(json_path, std::ios::trunc);
  if (!out) throw Error(Errc::io_error, "cannot write " + json_path.string());
  out << j.dump(2) << '\n';
}

bool plateau_reached(std::span<const double> curve, std::size_t window, double frac) {
  if (window == 0 || curve.size() < window) return false;
  const auto [lo, hi] = std::minmax_element(curve.begin(), curve.end());
  const auto tail = curve.subspan(curve.size() - window);
  const auto [tlo, thi] = std::minmax_element(tail.begin(), tail.end());
  return (*thi - *tlo) <= frac * (*hi - *lo);
}

std::size_t select_epochs(const std::vector<EpochLog>& log, std::size_t window, double frac) {
  if (window < 1 || log.size() < window) {
    throw Error(Errc::short_log, "training log has " + std::to_string(log.size()) + " epochs, window is " +
                                     std::to_string(window));
  }
  std::vector<double> curve;
  for (const auto& r : log) curve.push_back(r.confidence_sum);
  const auto [lo, hi] = std::minmax_element(curve.begin(), curve.end());
  const double rise = *hi - *lo;
  for (std::size_t e = window; e <= curve.size(); ++e) {
    const auto first = curve.begin() + std::ptrdiff_t(e - window);
    const auto [tlo, thi] = std::minmax_element(first, first + std::ptrdiff_t(window));
    if (*thi - *tlo <= frac * rise) return log[e - 1].epoch;
  }
  return log.back().epoch;
}

}  // namespace rei
