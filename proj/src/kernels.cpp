#include "rei/kernels.hpp"

#include <cmath>
#include <limits>

namespace rei::kernels {

std::size_t subtract_dark(std::span<const std::uint16_t> raw, std::span<const std::uint16_t> dark,
                          std::span<std::uint16_t> out) {
  const auto n = static_cast<std::ptrdiff_t>(raw.size());
  std::size_t clamped = 0;
#pragma omp parallel for simd reduction(+ : clamped) schedule(static)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    const int d = int(raw[i]) - int(dark[i]);
    clamped += d < 0 ? 1 : 0;
    out[i] = static_cast<std::uint16_t>(d < 0 ? 0 : d);
  }
  return clamped;
}

std::size_t subtract_dark_serial(std::span<const std::uint16_t> raw,
                                 std::span<const std::uint16_t> dark,
                                 std::span<std::uint16_t> out) {
  std::size_t clamped = 0;
  for (std::size_t i = 0; i < raw.size(); ++i) {
    if (raw[i] < dark[i]) {
      out[i] = 0;
      ++clamped;
    } else {
      out[i] = static_cast<std::uint16_t>(raw[i] - dark[i]);
    }
  }
  return clamped;
}

void threshold(std::span<const std::uint16_t> pixels, double threshold, std::span<std::uint8_t> mask) {
  const auto n = static_cast<std::ptrdiff_t>(pixels.size());
#pragma omp parallel for simd schedule(static)
  for (std::ptrdiff_t i = 0; i < n; ++i) mask[i] = double(pixels[i]) > threshold ? 1 : 0;
}

void threshold_serial(std::span<const std::uint16_t> pixels, double threshold,
                      std::span<std::uint8_t> mask) {
  for (std::size_t i = 0; i < pixels.size(); ++i) mask[i] = double(pixels[i]) > threshold;
}

NearestTwo nearest_two_one(const float* v, std::span<const float> centers, std::size_t dim) {
  const std::size_t k = centers.size() / dim;
  double best = std::numeric_limits<double>::infinity();
  double second = std::numeric_limits<double>::infinity();
  std::uint32_t best_id = 0;
  for (std::size_t c = 0; c < k; ++c) {
    const float* ctr = centers.data() + c * dim;
    double s = 0.0;
    for (std::size_t j = 0; j < dim; ++j) {
      const double d = double(v[j]) - double(ctr[j]);
      s += d * d;
    }
    if (s < best) {
      second = best;
      best = s;
      best_id = static_cast<std::uint32_t>(c);
    } else if (s < second) {
      second = s;
    }
  }
  return {best_id, std::sqrt(best), std::sqrt(second)};
}

void nearest_two(std::span<const float> vectors, std::span<const float> centers, std::size_t dim,
                 std::span<NearestTwo> out) {
  const auto n = static_cast<std::ptrdiff_t>(vectors.size() / dim);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < n; ++i) out[i] = nearest_two_one(vectors.data() + i * dim, centers, dim);
}

void nearest_two_serial(std::span<const float> vectors, std::span<const float> centers,
                        std::size_t dim, std::span<NearestTwo> out) {
  const std::size_t n = vectors.size() / dim;
  const std::size_t k = centers.size() / dim;
  for (std::size_t i = 0; i < n; ++i) {
    // Full sort-free scan written independently of nearest_two_one.
    std::uint32_t best_id = 0;
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < k; ++c) {
      double s = 0.0;
      for (std::size_t j = 0; j < dim; ++j) {
        const double d = double(vectors[i * dim + j]) - double(centers[c * dim + j]);
        s += d * d;
      }
      if (s < best) {
        best = s;
        best_id = static_cast<std::uint32_t>(c);
      }
    }
    double second = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < k; ++c) {
      if (c == best_id) continue;
      double s = 0.0;
      for (std::size_t j = 0; j < dim; ++j) {
        const double d = double(vectors[i * dim + j]) - double(centers[c * dim + j]);
        s += d * d;
      }
      if (s < second) second = s;
    }
    out[i] = {best_id, std::sqrt(best), std::sqrt(second)};
  }
}

}  // namespace rei::kernels
