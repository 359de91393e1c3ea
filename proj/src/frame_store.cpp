#include "rei/frame_store.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "rei/error.hpp"
#include "rei/kernels.hpp"

namespace rei {

using nlohmann::json;

namespace {

[[noreturn]] void bad_field(const std::string& field, const std::string& why) {
  throw Error(Errc::bad_manifest_field, field + ": " + why);
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::missing_file, path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::uintmax_t file_size_or_throw(const fs::path& path) {
  std::error_code ec;
  const auto size = fs::file_size(path, ec);
  if (ec) throw Error(Errc::missing_file, path.string());
  return size;
}

// pread-based reader: O(1) seek per frame, safe for concurrent readers.
class FileFrameSource final : public FrameSource {
 public:
  FileFrameSource(const fs::path& path, std::size_t n_frames, int width, int height)
      : path_(path), n_frames_(n_frames), width_(width), height_(height) {
    fd_ = ::open(path.c_str(), O_RDONLY);
    if (fd_ < 0) throw Error(Errc::missing_file, path.string());
  }
  ~FileFrameSource() override {
    if (fd_ >= 0) ::close(fd_);
  }
  FileFrameSource(const FileFrameSource&) = delete;
  FileFrameSource& operator=(const FileFrameSource&) = delete;

  std::size_t size() const override { return n_frames_; }

  Image read(std::size_t index) const override {
    if (index >= n_frames_) throw Error(Errc::bad_range, "frame index out of range");
    Image img(width_, height_);
    const std::size_t bytes = img.size() * 2;
    const auto offset = static_cast<off_t>(index * bytes);
    std::size_t done = 0;
    auto* dst = reinterpret_cast<char*>(img.pixels.data());
    while (done < bytes) {
      const ssize_t r = ::pread(fd_, dst + done, bytes - done, offset + static_cast<off_t>(done));
      if (r <= 0) throw Error(Errc::io_error, "short read from " + path_.string());
      done += static_cast<std::size_t>(r);
    }
    return img;
  }

 private:
  fs::path path_;
  int fd_ = -1;
  std::size_t n_frames_;
  int width_;
  int height_;
};

Image read_dark(const fs::path& path, int width, int height) {
  const auto expected = static_cast<std::uintmax_t>(width) * height * 2;
  const auto size = file_size_or_throw(path);
  if (size != expected) {
    throw Error(Errc::size_mismatch, path.string() + " has " + std::to_string(size) +
                                         " bytes, expected " + std::to_string(expected));
  }
  Image img(width, height);
  std::ifstream in(path, std::ios::binary);
  in.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(expected));
  if (!in) throw Error(Errc::io_error, "failed reading " + path.string());
  return img;
}

}  // namespace

double normalize_degrees(double deg) {
  double r = std::fmod(deg, kFullRotation);
  if (r < 0) r += kFullRotation;
  if (r >= kFullRotation) r = 0.0;
  return r;
}

void ScanManifest::validate() const {
  if (scan_id.empty()) bad_field("scan_id", "must be non-empty");
  if (width <= 0) bad_field("width", "must be > 0");
  if (height <= 0) bad_field("height", "must be > 0");
  if (n_frames < 1) bad_field("n_frames", "must be >= 1");
  if (!(omega_step > 0.0) || !std::isfinite(omega_step)) bad_field("omega_step", "must be > 0");
  if (!std::isfinite(omega_start)) bad_field("omega_start", "must be finite");
  if (double(n_frames) * omega_step > kFullRotation + kRotationTolerance) {
    bad_field("n_frames", "n_frames * omega_step exceeds 360 degrees");
  }
  if (pixel_encoding != "u16le") bad_field("pixel_encoding", "only u16le is supported");
}

bool ScanManifest::covers_full_rotation() const {
  return std::abs(double(n_frames) * omega_step - kFullRotation) <= 1e-6;
}

std::string ScanManifest::to_json() const {
  json j;
  j["scan_id"] = scan_id;
  j["width"] = width;
  j["height"] = height;
  j["n_frames"] = n_frames;
  j["omega_start"] = omega_start;
  j["omega_step"] = omega_step;
  j["pixel_encoding"] = pixel_encoding;
  if (dark_path) j["dark_path"] = *dark_path;
  j["tags"] = json(tags);
  return j.dump(2) + "\n";
}

ScanManifest ScanManifest::from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    bad_field("<document>", e.what());
  }
  ScanManifest m;
  auto req = [&](const char* key) -> const json& {
    if (!j.contains(key)) bad_field(key, "missing");
    return j.at(key);
  };
  try {
    m.scan_id = req("scan_id").get<std::string>();
    m.width = req("width").get<int>();
    m.height = req("height").get<int>();
    const auto n = req("n_frames").get<long long>();
    if (n < 1) bad_field("n_frames", "must be >= 1");
    m.n_frames = static_cast<std::size_t>(n);
    m.omega_start = req("omega_start").get<double>();
    m.omega_step = req("omega_step").get<double>();
    if (j.contains("pixel_encoding")) m.pixel_encoding = j.at("pixel_encoding").get<std::string>();
    if (j.contains("dark_path") && !j.at("dark_path").is_null()) {
      m.dark_path = j.at("dark_path").get<std::string>();
    }
    if (j.contains("tags")) {
      for (const auto& [k, v] : j.at("tags").items()) {
        m.tags[k] = v.is_string() ? v.get<std::string>() : v.dump();
      }
    }
  } catch (const json::type_error& e) {
    bad_field("<type>", e.what());
  }
  m.validate();
  return m;
}

DarkSubtraction subtract_dark(const Frame& frame, const DarkFrame& dark) {
  if (frame.image.width != dark.width || frame.image.height != dark.height) {
    throw Error(Errc::dimension_mismatch,
                "frame " + std::to_string(frame.image.width) + "x" +
                    std::to_string(frame.image.height) + " vs dark " + std::to_string(dark.width) +
                    "x" + std::to_string(dark.height));
  }
  DarkSubtraction out;
  out.frame.index = frame.index;
  out.frame.omega = frame.omega;
  out.frame.image = Image(frame.image.width, frame.image.height);
  out.clamped = kernels::subtract_dark(frame.image.pixels, dark.pixels, out.frame.image.pixels);
  return out;
}

ScanSet::ScanSet(ScanManifest manifest, std::shared_ptr<const FrameSource> source,
                 std::shared_ptr<const DarkFrame> dark)
    : manifest_(std::move(manifest)), source_(std::move(source)), dark_(std::move(dark)) {
  manifest_.validate();
  if (source_->size() != manifest_.n_frames) {
    throw Error(Errc::size_mismatch, "frame source holds " + std::to_string(source_->size()) +
                                         " frames, manifest says " +
                                         std::to_string(manifest_.n_frames));
  }
  if (dark_ && (dark_->width != manifest_.width || dark_->height != manifest_.height)) {
    throw Error(Errc::dimension_mismatch, "dark frame dimensions differ from manifest");
  }
  indices_.resize(manifest_.n_frames);
  for (std::size_t i = 0; i < indices_.size(); ++i) indices_[i] = i;
  source_omega_start_ = manifest_.omega_start;
  source_omega_step_ = manifest_.omega_step;
  source_full_rotation_ = manifest_.covers_full_rotation();
}

double ScanSet::omega_of(std::size_t pos) const {
  return source_omega_start_ + double(indices_.at(pos)) * source_omega_step_;
}

Frame ScanSet::raw_frame(std::size_t pos) const {
  Frame f;
  f.index = indices_.at(pos);
  f.omega = omega_of(pos);
  f.image = source_->read(f.index);
  return f;
}

Frame ScanSet::frame(std::size_t pos) const {
  Frame raw = raw_frame(pos);
  if (!dark_) return raw;
  return subtract_dark(raw, *dark_).frame;
}

ScanSet ScanSet::with_indices(std::vector<std::size_t> indices, ScanManifest manifest) const {
  ScanSet out = *this;
  out.indices_ = std::move(indices);
  out.manifest_ = std::move(manifest);
  return out;
}

ScanSet load_scan(const fs::path& manifest_path) {
  fs::path mpath = manifest_path;
  if (fs::is_directory(mpath)) mpath /= "manifest.json";
  if (!fs::exists(mpath)) throw Error(Errc::missing_file, mpath.string());
  ScanManifest m = ScanManifest::from_json(read_text(mpath));
  const fs::path dir = mpath.parent_path();
  const fs::path frames = dir / "frames.bin";
  if (!fs::exists(frames)) throw Error(Errc::missing_file, frames.string());
  const auto expected = static_cast<std::uintmax_t>(m.n_frames) * m.frame_bytes();
  const auto size = file_size_or_throw(frames);
  if (size != expected) {
    throw Error(Errc::size_mismatch, frames.string() + " has " + std::to_string(size) +
                                         " bytes, expected " + std::to_string(expected));
  }
  std::shared_ptr<const DarkFrame> dark;
  if (m.dark_path) {
    const fs::path dpath = dir / *m.dark_path;
    if (!fs::exists(dpath)) throw Error(Errc::missing_file, dpath.string());
    dark = std::make_shared<const DarkFrame>(read_dark(dpath, m.width, m.height));
  }
  auto source = std::make_shared<const FileFrameSource>(frames, m.n_frames, m.width, m.height);
  return ScanSet(std::move(m), std::move(source), std::move(dark));
}

void write_scan(const fs::path& dir, const ScanSet& scan) {
  fs::create_directories(dir);
  ScanManifest m = scan.manifest();
  m.dark_path = scan.has_dark() ? std::optional<std::string>("dark.bin") : std::nullopt;
  {
    std::ofstream out(dir / "frames.bin", std::ios::binary | std::ios::trunc);
    if (!out) throw Error(Errc::io_error, "cannot write " + (dir / "frames.bin").string());
    for (std::size_t i = 0; i < scan.size(); ++i) {
      const Frame f = scan.raw_frame(i);
      out.write(reinterpret_cast<const char*>(f.image.pixels.data()),
                static_cast<std::streamsize>(f.image.size() * 2));
    }
    if (!out) throw Error(Errc::io_error, "failed writing frames.bin");
  }
  if (scan.has_dark()) {
    std::ofstream out(dir / "dark.bin", std::ios::binary | std::ios::trunc);
    const auto& px = scan.dark()->pixels;
    out.write(reinterpret_cast<const char*>(px.data()), static_cast<std::streamsize>(px.size() * 2));
    if (!out) throw Error(Errc::io_error, "failed writing dark.bin");
  }
  std::ofstream out(dir / "manifest.json", std::ios::trunc);
  out << m.to_json();
  if (!out) throw Error(Errc::io_error, "failed writing manifest.json");
}

ScanSet make_memory_scan(ScanManifest manifest, std::vector<Image> frames,
                         std::optional<DarkFrame> dark) {
  for (const auto& f : frames) {
    if (f.width != manifest.width || f.height != manifest.height) {
      throw Error(Errc::dimension_mismatch, "frame dimensions differ from manifest");
    }
  }
  manifest.n_frames = frames.size();
  auto source = std::make_shared<const MemoryFrameSource>(std::move(frames));
  std::shared_ptr<const DarkFrame> d;
  if (dark) d = std::make_shared<const DarkFrame>(std::move(*dark));
  return ScanSet(std::move(manifest), std::move(source), std::move(d));
}

ScanSet slice_segment(const ScanSet& scan, double omega_begin, double delta_omega) {
  if (!(delta_omega > 0.0) || delta_omega > kFullRotation + kRotationTolerance) {
    throw Error(Errc::bad_range, "delta_omega must lie in (0, 360], got " + std::to_string(delta_omega));
  }
  const ScanManifest& m = scan.manifest();
  const double step = m.omega_step;
  const auto count = static_cast<std::size_t>(std::llround(delta_omega / step));
  if (count < 1 || count > scan.size()) {
    throw Error(Errc::bad_range, "segment of " + std::to_string(count) + " frames does not fit a scan of " +
                                     std::to_string(scan.size()));
  }
  const double offset = normalize_degrees(normalize_degrees(omega_begin) - m.omega_start);
  const auto n = static_cast<long long>(scan.size());
  long long start = std::llround(offset / step);
  std::vector<std::size_t> idx(count);
  if (m.covers_full_rotation()) {
    start %= n;
    for (std::size_t i = 0; i < count; ++i) idx[i] = scan.source_index(static_cast<std::size_t>((start + i) % n));
  } else {
    if (start + static_cast<long long>(count) > n) {
      throw Error(Errc::bad_range, "segment exceeds the partial scan's rotation range");
    }
    for (std::size_t i = 0; i < count; ++i) idx[i] = scan.source_index(static_cast<std::size_t>(start) + i);
  }
  ScanManifest out = m;
  out.n_frames = count;
  out.omega_start = scan.source_omega_start_ + double(idx.front()) * scan.source_omega_step_;
  out.tags["segment_begin"] = std::to_string(normalize_degrees(omega_begin));
  out.tags["segment_delta"] = std::to_string(delta_omega);
  return scan.with_indices(std::move(idx), std::move(out));
}

}  // namespace rei
