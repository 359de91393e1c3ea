#pragma once

#include <filesystem>
#include <random>
#include <string>
#include <unistd.h>

#include "rei/frame_store.hpp"
#include "rei/synth_gen.hpp"

namespace testutil {

// Fresh scratch directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("rei_test_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

inline rei::Image random_image(int w, int h, std::mt19937_64& rng, int hi = 1000) {
  rei::Image img(w, h);
  std::uniform_int_distribution<int> d(0, hi);
  for (auto& p : img.pixels) p = static_cast<std::uint16_t>(d(rng));
  return img;
}

// Small scan for fast tests: 64 frames of 96x96.
inline rei::synth::SyntheticScanConfig small_config(std::uint64_t seed = 3) {
  rei::synth::SyntheticScanConfig c;
  c.scan_id = "small";
  c.width = 96;
  c.height = 96;
  c.n_frames = 72;
  c.omega_step = 5.0;
  c.n_spots = 220;
  c.ring_radii = {18.0, 28.0, 38.0};
  c.seed = seed;
  c.noise_seed = seed + 100;
  return c;
}

}  // namespace testutil
