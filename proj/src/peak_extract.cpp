#include "rei/peak_extract.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include "rei/error.hpp"
#include "rei/kernels.hpp"
#include "rei/util.hpp"

namespace rei {

namespace {

constexpr char kPatchMagic[8] = {'R', 'E', 'I', 'P', 'A', 'T', 'C', 'H'};
constexpr std::uint32_t kPatchVersion = 1;

std::uint32_t find_root(std::vector<std::uint32_t>& parent, std::uint32_t x) {
  while (parent[x] != x) {
    parent[x] = parent[parent[x]];
    x = parent[x];
  }
  return x;
}

void unite(std::vector<std::uint32_t>& parent, std::uint32_t a, std::uint32_t b) {
  a = find_root(parent, a);
  b = find_root(parent, b);
  if (a == b) return;
  if (a < b) parent[b] = a;
  else parent[a] = b;
}

}  // namespace

void ExtractionConfig::validate() const {
  if (patch_size < 5 || patch_size % 2 == 0) {
    throw Error(Errc::config_invalid, "patch_size must be odd and >= 5");
  }
  if (threshold && !(*threshold >= 0.0)) throw Error(Errc::config_invalid, "threshold must be >= 0");
  if (!(mad_factor >= 0.0)) throw Error(Errc::config_invalid, "mad_factor must be >= 0");
  if (gates.min_area > gates.max_area) throw Error(Errc::config_invalid, "min_area > max_area");
}

double auto_threshold(const Image& image, double mad_factor) {
  if (image.pixels.empty()) return 0.0;
  // Histogram median: pixels are bounded u16 counts.
  std::vector<std::uint32_t> hist(65536, 0);
  for (auto p : image.pixels) ++hist[p];
  const std::size_t n = image.pixels.size();
  auto quantile_lower = [&](const std::vector<std::uint32_t>& h, std::size_t rank) {
    std::size_t acc = 0;
    for (std::size_t v = 0; v < h.size(); ++v) {
      acc += h[v];
      if (acc > rank) return static_cast<double>(v);
    }
    return static_cast<double>(h.size() - 1);
  };
  auto median_of = [&](const std::vector<std::uint32_t>& h) {
    if (n % 2 == 1) return quantile_lower(h, n / 2);
    return 0.5 * (quantile_lower(h, n / 2 - 1) + quantile_lower(h, n / 2));
  };
  const double med = median_of(hist);
  // |x - med| takes half-integer values when med is a half-integer; doubling keeps them integral.
  std::vector<std::uint32_t> dev(2 * 65536, 0);
  for (std::size_t v = 0; v < hist.size(); ++v) {
    if (hist[v] == 0) continue;
    dev[static_cast<std::size_t>(std::llround(std::abs(2.0 * double(v) - 2.0 * med)))] += hist[v];
  }
  const double mad = median_of(dev) / 2.0;
  return med + mad_factor * mad;
}

Mask threshold_mask(const Image& image, double threshold) {
  Mask m{image.width, image.height, std::vector<std::uint8_t>(image.size(), 0)};
  kernels::threshold(image.pixels, threshold, m.bits);
  return m;
}

ComponentMask connected_components(const Mask& mask, const Image& image, const AreaGates& gates) {
  if (mask.width != image.width || mask.height != image.height) {
    throw Error(Errc::dimension_mismatch, "mask and image dimensions differ");
  }
  const int w = mask.width;
  const int h = mask.height;
  ComponentMask out;
  out.width = w;
  out.height = h;
  out.labels.assign(static_cast<std::size_t>(w) * h, 0);

  std::vector<std::uint32_t> parent{0};
  auto& lab = out.labels;
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      const std::size_t i = static_cast<std::size_t>(r) * w + c;
      if (!mask.bits[i]) continue;
      std::uint32_t nb[4];
      int k = 0;
      if (c > 0 && lab[i - 1]) nb[k++] = lab[i - 1];
      if (r > 0) {
        const std::size_t up = i - w;
        if (c > 0 && lab[up - 1]) nb[k++] = lab[up - 1];
        if (lab[up]) nb[k++] = lab[up];
        if (c + 1 < w && lab[up + 1]) nb[k++] = lab[up + 1];
      }
      if (k == 0) {
        const auto id = static_cast<std::uint32_t>(parent.size());
        parent.push_back(id);
        lab[i] = id;
      } else {
        std::uint32_t m = nb[0];
        for (int j = 1; j < k; ++j) m = std::min(m, nb[j]);
        lab[i] = m;
        for (int j = 0; j < k; ++j) unite(parent, m, nb[j]);
      }
    }
  }

  // Resolve roots, accumulate stats per provisional root.
  const std::size_t n_prov = parent.size();
  std::vector<ComponentStats> stats(n_prov);
  std::vector<double> wr(n_prov, 0.0), wc(n_prov, 0.0);
  std::vector<std::uint32_t> first_seen(n_prov, std::numeric_limits<std::uint32_t>::max());
  for (auto& s : stats) {
    s.row_min = h;
    s.col_min = w;
    s.row_max = -1;
    s.col_max = -1;
  }
  std::uint32_t order = 0;
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      const std::size_t i = static_cast<std::size_t>(r) * w + c;
      if (!lab[i]) continue;
      const std::uint32_t root = find_root(parent, lab[i]);
      lab[i] = root;
      auto& s = stats[root];
      if (first_seen[root] == std::numeric_limits<std::uint32_t>::max()) first_seen[root] = order++;
      ++s.area;
      s.row_min = std::min(s.row_min, r);
      s.row_max = std::max(s.row_max, r);
      s.col_min = std::min(s.col_min, c);
      s.col_max = std::max(s.col_max, c);
      const double v = image.pixels[i];
      s.total_intensity += v;
      wr[root] += v * r;
      wc[root] += v * c;
    }
  }

  // Final labels follow raster order of first appearance among retained components.
  std::vector<std::uint32_t> roots;
  for (std::uint32_t id = 1; id < n_prov; ++id) {
    if (first_seen[id] != std::numeric_limits<std::uint32_t>::max()) roots.push_back(id);
  }
  std::sort(roots.begin(), roots.end(),
            [&](std::uint32_t a, std::uint32_t b) { return first_seen[a] < first_seen[b]; });
  std::vector<std::uint32_t> remap(n_prov, 0);
  for (auto root : roots) {
    auto& s = stats[root];
    if (s.area < gates.min_area) {
      ++out.discarded_small;
      continue;
    }
    if (s.area > gates.max_area) {
      ++out.discarded_large;
      continue;
    }
    const auto label = static_cast<std::uint32_t>(out.components.size() + 1);
    remap[root] = label;
    s.label = label;
    if (s.total_intensity > 0.0) {
      s.centroid_row = wr[root] / s.total_intensity;
      s.centroid_col = wc[root] / s.total_intensity;
    } else {
      s.centroid_row = 0.5 * (s.row_min + s.row_max);
      s.centroid_col = 0.5 * (s.col_min + s.col_max);
    }
    out.components.push_back(s);
  }
  for (auto& l : lab) l = l ? remap[l] : 0;
  return out;
}

PatchExtraction extract_patches(const Frame& frame, const ComponentMask& comps, int patch_size) {
  if (patch_size < 5 || patch_size % 2 == 0) {
    throw Error(Errc::config_invalid, "patch_size must be odd and >= 5");
  }
  const Image& img = frame.image;
  const int half = patch_size / 2;
  PatchExtraction out;
  for (const auto& c : comps.components) {
    const int cr = static_cast<int>(std::lround(c.centroid_row));
    const int cc = static_cast<int>(std::lround(c.centroid_col));
    if (cr - half < 0 || cc - half < 0 || cr + half >= img.height || cc + half >= img.width) {
      ++out.border_discarded;
      continue;
    }
    PeakPatch p;
    p.size = patch_size;
    p.pixels.assign(static_cast<std::size_t>(patch_size) * patch_size, 0.0f);
    // Only the component's own pixels are kept; neighbours and background are zero.
    auto own = [&](int r, int k) {
      return comps.labels[static_cast<std::size_t>(r) * img.width + k] == c.label;
    };
    std::uint16_t raw_max = 0;
    for (int r = cr - half; r <= cr + half; ++r) {
      for (int k = cc - half; k <= cc + half; ++k) {
        if (own(r, k)) raw_max = std::max(raw_max, img.at(r, k));
      }
    }
    if (raw_max == 0) continue;  // cannot happen for thresholded components
    const float inv = 1.0f / float(raw_max);
    for (int r = 0; r < patch_size; ++r) {
      for (int k = 0; k < patch_size; ++k) {
        const int ir = cr - half + r, ik = cc - half + k;
        if (!own(ir, ik)) continue;
        const std::uint16_t v = img.at(ir, ik);
        p.pixels[static_cast<std::size_t>(r) * patch_size + k] = v == raw_max ? 1.0f : float(v) * inv;
      }
    }
    p.frame_index = frame.index;
    p.omega = frame.omega;
    p.centroid_row = c.centroid_row;
    p.centroid_col = c.centroid_col;
    p.raw_max = raw_max;
    p.component_area = c.area;
    out.patches.push_back(std::move(p));
  }
  return out;
}

FramePatches extract_frame(const Frame& frame, const ExtractionConfig& cfg) {
  const double thr = cfg.threshold ? *cfg.threshold : auto_threshold(frame.image, cfg.mad_factor);
  const Mask mask = threshold_mask(frame.image, thr);
  const ComponentMask comps = connected_components(mask, frame.image, cfg.gates);
  PatchExtraction ex = extract_patches(frame, comps, cfg.patch_size);
  FramePatches fp;
  fp.patches = std::move(ex.patches);
  fp.components = comps.n_components();
  fp.border_discarded = ex.border_discarded;
  fp.saturated_pixels = static_cast<std::size_t>(
      std::count(frame.image.pixels.begin(), frame.image.pixels.end(), std::uint16_t{65535}));
  return fp;
}

namespace {

PatchDataset assemble(const ScanSet& scan, const ExtractionConfig& cfg,
                      std::vector<FramePatches>&& per_frame, double seconds) {
  PatchDataset ds;
  ds.id = scan.manifest().scan_id;
  ds.patch_size = cfg.patch_size;
  ds.stats.frames = per_frame.size();
  for (auto& fp : per_frame) {
    ds.stats.components += fp.components;
    ds.stats.border_discarded += fp.border_discarded;
    ds.stats.saturated_pixels += fp.saturated_pixels;
    for (auto& p : fp.patches) ds.patches.push_back(std::move(p));
  }
  ds.stats.seconds = seconds;
  ds.stats.frames_per_second = seconds > 0 ? double(ds.stats.frames) / seconds : 0.0;
  return ds;
}

}  // namespace

PatchDataset extract_dataset(const ScanSet& scan, const ExtractionConfig& cfg) {
  cfg.validate();
  Stopwatch sw;
  std::vector<FramePatches> per_frame(scan.size());
  const auto n = static_cast<std::ptrdiff_t>(scan.size());
  std::exception_ptr failure;
#pragma omp parallel for schedule(dynamic, 4)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    try {
      per_frame[i] = extract_frame(scan.frame(static_cast<std::size_t>(i)), cfg);
    } catch (...) {
#pragma omp critical(rei_extract_failure)
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);
  return assemble(scan, cfg, std::move(per_frame), sw.seconds());
}

PatchDataset extract_dataset_serial(const ScanSet& scan, const ExtractionConfig& cfg) {
  cfg.validate();
  Stopwatch sw;
  std::vector<FramePatches> per_frame;
  per_frame.reserve(scan.size());
  for (std::size_t i = 0; i < scan.size(); ++i) per_frame.push_back(extract_frame(scan.frame(i), cfg));
  return assemble(scan, cfg, std::move(per_frame), sw.seconds());
}

void write_patch_dataset(const std::filesystem::path& path, const PatchDataset& ds) {
  {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(Errc::io_error, "cannot write " + path.string());
    out.write(kPatchMagic, sizeof kPatchMagic);
    binio::put<std::uint32_t>(out, kPatchVersion);
    binio::put<std::uint64_t>(out, ds.patches.size());
    binio::put<std::uint32_t>(out, static_cast<std::uint32_t>(ds.patch_size));
    for (const auto& p : ds.patches) {
      out.write(reinterpret_cast<const char*>(p.pixels.data()),
                static_cast<std::streamsize>(p.pixels.size() * sizeof(float)));
    }
    if (!out) throw Error(Errc::io_error, "failed writing " + path.string());
  }
  std::ofstream csv(path.string() + ".provenance.csv", std::ios::trunc);
  csv << "frame_index,omega,centroid_row,centroid_col,raw_max,area\n";
  for (const auto& p : ds.patches) {
    csv << p.frame_index << ',' << format_double(p.omega) << ',' << format_double(p.centroid_row)
        << ',' << format_double(p.centroid_col) << ',' << format_double(p.raw_max) << ','
        << p.component_area << '\n';
  }
  if (!csv) throw Error(Errc::io_error, "failed writing provenance sidecar");
}

PatchDataset read_patch_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::missing_file, path.string());
  char magic[8];
  in.read(magic, sizeof magic);
  if (!in || !std::equal(magic, magic + 8, kPatchMagic)) {
    throw Error(Errc::format_error, path.string() + " is not a patch dataset");
  }
  const auto version = binio::get<std::uint32_t>(in);
  if (version != kPatchVersion) throw Error(Errc::format_error, "unsupported patch dataset version");
  const auto count = binio::get<std::uint64_t>(in);
  const auto psize = binio::get<std::uint32_t>(in);
  if (!in || psize < 1 || psize > 1024) throw Error(Errc::format_error, "bad patch dataset header");
  PatchDataset ds;
  ds.id = path.stem().string();
  ds.patch_size = static_cast<int>(psize);
  ds.patches.resize(count);
  for (auto& p : ds.patches) {
    p.size = ds.patch_size;
    p.pixels.resize(std::size_t{psize} * psize);
    in.read(reinterpret_cast<char*>(p.pixels.data()),
            static_cast<std::streamsize>(p.pixels.size() * sizeof(float)));
    if (!in) throw Error(Errc::size_mismatch, path.string() + " is truncated");
  }
  std::ifstream csv(path.string() + ".provenance.csv");
  if (!csv) throw Error(Errc::missing_file, path.string() + ".provenance.csv");
  std::string line;
  std::getline(csv, line);
  for (auto& p : ds.patches) {
    if (!std::getline(csv, line)) throw Error(Errc::size_mismatch, "provenance sidecar is short");
    std::istringstream ss(line);
    std::string f;
    std::vector<std::string> fields;
    while (std::getline(ss, f, ',')) fields.push_back(f);
    if (fields.size() != 6) throw Error(Errc::format_error, "bad provenance row: " + line);
    p.frame_index = std::stoull(fields[0]);
    p.omega = std::stod(fields[1]);
    p.centroid_row = std::stod(fields[2]);
    p.centroid_col = std::stod(fields[3]);
    p.raw_max = std::stod(fields[4]);
    p.component_area = std::stoull(fields[5]);
  }
  return ds;
}

}  // namespace rei
