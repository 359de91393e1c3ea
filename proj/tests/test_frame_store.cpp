#include <doctest.h>

#include <functional>

#include <fstream>

#include "helpers.hpp"
#include "rei/error.hpp"
#include "rei/frame_store.hpp"
#include "rei/kernels.hpp"

using namespace rei;
using testutil::TempDir;

namespace {

ScanManifest tiny_manifest(std::size_t n, double step) {
  ScanManifest m;
  m.scan_id = "tiny";
  m.width = 4;
  m.height = 3;
  m.n_frames = n;
  m.omega_step = step;
  return m;
}

ScanSet tiny_scan(std::size_t n, double step) {
  std::vector<Image> frames;
  for (std::size_t i = 0; i < n; ++i) {
    Image img(4, 3);
    img.pixels[0] = static_cast<std::uint16_t>(i);
    frames.push_back(img);
  }
  return make_memory_scan(tiny_manifest(n, step), std::move(frames));
}

Errc code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an Error");
  return Errc::io_error;
}

}  // namespace

TEST_CASE("manifest with 1440 frames of 0.25 degrees spans one rotation") {
  TempDir dir("fs1440");
  const ScanSet scan = tiny_scan(1440, 0.25);
  write_scan(dir.path(), scan);
  const ScanSet back = load_scan(dir.path() / "manifest.json");
  CHECK(back.size() == 1440);
  CHECK(back.manifest().covers_full_rotation());
  CHECK(back.omega_of(0) == doctest::Approx(0.0));
  CHECK(back.omega_of(1439) + 0.25 == doctest::Approx(360.0));
}

TEST_CASE("manifest validation names the offending field") {
  auto m = tiny_manifest(0, 1.0);
  try {
    m.validate();
    FAIL("n_frames = 0 accepted");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::bad_manifest_field);
    CHECK(std::string(e.what()).find("n_frames") != std::string::npos);
  }
  m = tiny_manifest(10, 0.0);
  CHECK(code_of([&] { m.validate(); }) == Errc::bad_manifest_field);
  m = tiny_manifest(361, 1.0);
  CHECK(code_of([&] { m.validate(); }) == Errc::bad_manifest_field);
  m = tiny_manifest(10, 1.0);
  m.width = 0;
  CHECK(code_of([&] { m.validate(); }) == Errc::bad_manifest_field);
  CHECK_NOTHROW(tiny_manifest(360, 1.0).validate());
}

TEST_CASE("manifest JSON round trip keeps tags and dark path") {
  auto m = tiny_manifest(8, 2.5);
  m.omega_start = 12.5;
  m.tags["state_label"] = "elastic";
  m.dark_path = "dark.bin";
  const auto back = ScanManifest::from_json(m.to_json());
  CHECK(back.scan_id == m.scan_id);
  CHECK(back.n_frames == 8);
  CHECK(back.omega_start == 12.5);
  CHECK(back.tags.at("state_label") == "elastic");
  REQUIRE(back.dark_path);
  CHECK(*back.dark_path == "dark.bin");
}

TEST_CASE("truncated frame file raises SizeMismatch naming the file") {
  TempDir dir("fstrunc");
  write_scan(dir.path(), tiny_scan(5, 1.0));
  std::filesystem::resize_file(dir.path() / "frames.bin", 4 * 3 * 2 * 5 - 7);
  try {
    load_scan(dir.path() / "manifest.json");
    FAIL("truncated file accepted");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::size_mismatch);
    CHECK(std::string(e.what()).find("frames.bin") != std::string::npos);
  }
}

TEST_CASE("missing manifest raises MissingFile") {
  TempDir dir("fsmissing");
  CHECK(code_of([&] { load_scan(dir.path() / "manifest.json"); }) == Errc::missing_file);
}

TEST_CASE("write then load reproduces pixels bit-exactly") {
  TempDir dir("fsrt");
  std::mt19937_64 rng(7);
  std::vector<Image> frames;
  for (int i = 0; i < 6; ++i) frames.push_back(testutil::random_image(17, 9, rng, 65535));
  auto m = tiny_manifest(6, 1.0);
  m.width = 17;
  m.height = 9;
  const Image dark = testutil::random_image(17, 9, rng, 200);
  const ScanSet scan = make_memory_scan(m, frames, dark);
  write_scan(dir.path(), scan);
  const ScanSet back = load_scan(dir.path());
  REQUIRE(back.size() == 6);
  REQUIRE(back.has_dark());
  CHECK(back.dark()->pixels == dark.pixels);
  for (std::size_t i = 0; i < 6; ++i) CHECK(back.raw_frame(i).image.pixels == frames[i].pixels);
}

TEST_CASE("subtract_dark examples") {
  Frame f;
  std::mt19937_64 rng(11);
  f.image = testutil::random_image(64, 64, rng);

  SUBCASE("frame equal to dark gives zeros") {
    const auto out = subtract_dark(f, f.image);
    for (auto p : out.frame.image.pixels) CHECK(p == 0);
    CHECK(out.clamped == 0);
  }
  SUBCASE("clamps negative values") {
    Frame g;
    g.image = Image(1, 1);
    g.image.pixels[0] = 5;
    Image d(1, 1);
    d.pixels[0] = 9;
    const auto out = subtract_dark(g, d);
    CHECK(out.frame.image.pixels[0] == 0);
    CHECK(out.clamped == 1);
  }
  SUBCASE("random pair matches a scalar loop") {
    const Image dark = testutil::random_image(64, 64, rng);
    const auto out = subtract_dark(f, dark);
    std::size_t clamped = 0;
    for (int r = 0; r < 64; ++r) {
      for (int c = 0; c < 64; ++c) {
        const int v = int(f.image.at(r, c)) - int(dark.at(r, c));
        if (v < 0) ++clamped;
        CHECK(out.frame.image.at(r, c) == std::max(v, 0));
      }
    }
    CHECK(out.clamped == clamped);
  }
  SUBCASE("dimension mismatch") {
    CHECK(code_of([&] { subtract_dark(f, Image(63, 64)); }) == Errc::dimension_mismatch);
  }
}

TEST_CASE("parallel dark kernel equals serial kernel") {
  std::mt19937_64 rng(5);
  const Image a = testutil::random_image(301, 77, rng);
  const Image b = testutil::random_image(301, 77, rng);
  std::vector<std::uint16_t> o1(a.size()), o2(a.size());
  const auto c1 = kernels::subtract_dark(a.pixels, b.pixels, o1);
  const auto c2 = kernels::subtract_dark_serial(a.pixels, b.pixels, o2);
  CHECK(c1 == c2);
  CHECK(o1 == o2);
}

TEST_CASE("slice_segment") {
  const ScanSet scan = tiny_scan(1440, 0.25);

  SUBCASE("360 degrees is the whole scan") {
    const ScanSet s = slice_segment(scan, 0.0, 360.0);
    REQUIRE(s.size() == scan.size());
    for (std::size_t i = 0; i < s.size(); ++i) CHECK(s.source_index(i) == i);
  }
  SUBCASE("wraps across 360") {
    const ScanSet s = slice_segment(scan, 350.0, 20.0);
    REQUIRE(s.size() == 80);
    for (std::size_t i = 0; i < 40; ++i) CHECK(s.source_index(i) == 1400 + i);
    for (std::size_t i = 40; i < 80; ++i) CHECK(s.source_index(i) == i - 40);
    CHECK(s.frame(45).image.pixels[0] == 5);
  }
  SUBCASE("40 degrees at 0.25 is 160 frames") {
    const ScanSet s = slice_segment(scan, 123.0, 40.0);
    CHECK(s.size() == 160);
  }
  SUBCASE("negative start is normalized") {
    const ScanSet s = slice_segment(scan, -10.0, 20.0);
    CHECK(s.source_index(0) == 1400);
  }
  SUBCASE("bad ranges") {
    CHECK(code_of([&] { slice_segment(scan, 0.0, 0.0); }) == Errc::bad_range);
    CHECK(code_of([&] { slice_segment(scan, 0.0, 361.0); }) == Errc::bad_range);
  }
  SUBCASE("frame count times step equals delta within one step") {
    for (double d : {0.3, 5.0, 10.1, 33.3, 90.0, 359.9}) {
      const ScanSet s = slice_segment(scan, 17.0, d);
      CHECK(std::abs(double(s.size()) * 0.25 - d) <= 0.25);
    }
  }
}
