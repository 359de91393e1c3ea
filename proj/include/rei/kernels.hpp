#pragma once

// Data-parallel inner loops. Each OpenMP kernel has a serial twin with the
// same signature; the serial versions are the reference the tests compare
// against and the baseline the benchmark measures.

#include <cstddef>
#include <cstdint>
#include <span>

namespace rei::kernels {

// out = max(0, raw - dark); returns the number of clamped pixels.
std::size_t subtract_dark(std::span<const std::uint16_t> raw, std::span<const std::uint16_t> dark,
                          std::span<std::uint16_t> out);
std::size_t subtract_dark_serial(std::span<const std::uint16_t> raw,
                                 std::span<const std::uint16_t> dark,
                                 std::span<std::uint16_t> out);

// mask[i] = pixels[i] > threshold
void threshold(std::span<const std::uint16_t> pixels, double threshold, std::span<std::uint8_t> mask);
void threshold_serial(std::span<const std::uint16_t> pixels, double threshold,
                      std::span<std::uint8_t> mask);

struct NearestTwo {
  std::uint32_t nearest = 0;
  double d1 = 0.0;  // Euclidean, not squared
  double d2 = 0.0;  // +inf when only one center
};

// For each row of `vectors` (n x dim), the two smallest Euclidean distances
// to the rows of `centers` (k x dim). Ties resolve to the lower center index.
void nearest_two(std::span<const float> vectors, std::span<const float> centers, std::size_t dim,
                 std::span<NearestTwo> out);
void nearest_two_serial(std::span<const float> vectors, std::span<const float> centers,
                        std::size_t dim, std::span<NearestTwo> out);

NearestTwo nearest_two_one(const float* v, std::span<const float> centers, std::size_t dim);

}  // namespace rei::kernels
