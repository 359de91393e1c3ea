#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace rei {

namespace fs = std::filesystem;

inline constexpr double kFullRotation = 360.0;
inline constexpr double kRotationTolerance = 1e-9;

struct ScanManifest {
  std::string scan_id;
  int width = 0;
  int height = 0;
  std::size_t n_frames = 0;
  double omega_start = 0.0;
  double omega_step = 0.0;
  std::string pixel_encoding = "u16le";
  std::optional<std::string> dark_path;
  std::map<std::string, std::string> tags;

  // Throws BadManifestField naming the first offending field.
  void validate() const;
  bool covers_full_rotation() const;
  std::size_t frame_bytes() const { return static_cast<std::size_t>(width) * height * 2; }

  std::string to_json() const;
  static ScanManifest from_json(const std::string& text);
};

// Row-major u16 image. Used for raw frames, dark frames and dark-subtracted frames.
struct Image {
  int width = 0;
  int height = 0;
  std::vector<std::uint16_t> pixels;

  Image() = default;
  Image(int w, int h) : width(w), height(h), pixels(static_cast<std::size_t>(w) * h, 0) {}

  std::uint16_t& at(int row, int col) { return pixels[static_cast<std::size_t>(row) * width + col]; }
  std::uint16_t at(int row, int col) const {
    return pixels[static_cast<std::size_t>(row) * width + col];
  }
  std::size_t size() const { return pixels.size(); }
};

struct Frame {
  std::size_t index = 0;  // index within the source scan file
  double omega = 0.0;     // degrees, start of the frame's rotation interval
  Image image;
};

using DarkFrame = Image;

struct DarkSubtraction {
  Frame frame;
  std::size_t clamped = 0;  // pixels where dark > raw
};

DarkSubtraction subtract_dark(const Frame& frame, const DarkFrame& dark);

// Random access to raw frames. Implementations must be safe for concurrent reads.
class FrameSource {
 public:
  virtual ~FrameSource() = default;
  virtual std::size_t size() const = 0;
  virtual Image read(std::size_t index) const = 0;
};

class MemoryFrameSource final : public FrameSource {
 public:
  explicit MemoryFrameSource(std::vector<Image> frames) : frames_(std::move(frames)) {}
  std::size_t size() const override { return frames_.size(); }
  Image read(std::size_t index) const override { return frames_.at(index); }

 private:
  std::vector<Image> frames_;
};

// Immutable view onto an ordered sequence of frames of one scan. Slices share
// the underlying source and keep the source frame indices.
class ScanSet {
 public:
  ScanSet(ScanManifest manifest, std::shared_ptr<const FrameSource> source,
          std::shared_ptr<const DarkFrame> dark = nullptr);

  const ScanManifest& manifest() const { return manifest_; }
  std::size_t size() const { return indices_.size(); }
  bool has_dark() const { return dark_ != nullptr; }
  const DarkFrame* dark() const { return dark_.get(); }

  // Position within this view -> index in the source scan.
  std::size_t source_index(std::size_t pos) const { return indices_.at(pos); }
  double omega_of(std::size_t pos) const;

  Frame raw_frame(std::size_t pos) const;
  // Dark-subtracted when a dark frame is present, raw otherwise.
  Frame frame(std::size_t pos) const;

  // Full rotation range of the parent scan, used for wrap-around.
  std::size_t source_frames() const { return source_->size(); }

  ScanSet with_indices(std::vector<std::size_t> indices, ScanManifest manifest) const;

 private:
  ScanManifest manifest_;
  std::shared_ptr<const FrameSource> source_;
  std::shared_ptr<const DarkFrame> dark_;
  std::vector<std::size_t> indices_;
  double source_omega_start_ = 0.0;
  double source_omega_step_ = 0.0;
  bool source_full_rotation_ = false;
  friend ScanSet slice_segment(const ScanSet&, double, double);
};

ScanSet load_scan(const fs::path& manifest_path);

// Writes manifest.json, frames.bin and (if present) dark.bin into `dir`.
void write_scan(const fs::path& dir, const ScanSet& scan);

ScanSet make_memory_scan(ScanManifest manifest, std::vector<Image> frames,
                         std::optional<DarkFrame> dark = std::nullopt);

// Contiguous rotation segment starting at omega_begin covering delta_omega,
// wrapping across 360 degrees when the scan covers a full rotation.
ScanSet slice_segment(const ScanSet& scan, double omega_begin, double delta_omega);

double normalize_degrees(double deg);

}  // namespace rei
