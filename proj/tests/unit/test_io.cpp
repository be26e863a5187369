#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <unistd.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>

#include "doctest.h"
#include "fga/io.hpp"
#include "test_util.hpp"

using fga::Tensor;

namespace {

struct TempDir {
  std::filesystem::path path;
  TempDir() {
    path = std::filesystem::temp_directory_path() /
           ("fga_io_test_" + std::to_string(static_cast<unsigned long>(::getpid())));
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

// Quantize to float32 so FGAT round trips are exact.
Tensor to_f32(Tensor t) {
  for (double& v : t.values()) v = static_cast<double>(static_cast<float>(v));
  return t;
}

}  // namespace

TEST_CASE("FGAT round trips tensors of every rank exactly") {
  TempDir dir;
  fga::Rng rng(3);
  int idx = 0;
  for (const auto& shape : std::vector<std::vector<std::int64_t>>{
           {7}, {3, 4}, {2, 3, 5}, {2, 1, 4, 3}}) {
    const Tensor t = to_f32(testutil::random_tensor(shape, rng));
    const std::string path = dir.file("t" + std::to_string(idx++) + ".fgat");
    fga::write_fgat(path, t);
    const Tensor back = fga::read_fgat(path);
    REQUIRE(back.shape() == t.shape());
    CHECK(back.values() == t.values());
  }
}

TEST_CASE("FGAT files carry the documented header") {
  TempDir dir;
  Tensor t({2, 3});
  t.values() = {1, 2, 3, 4, 5, 6};
  const std::string path = dir.file("hdr.fgat");
  fga::write_fgat(path, t);
  std::ifstream f(path, std::ios::binary);
  REQUIRE(f.good());
  char magic[4];
  f.read(magic, 4);
  CHECK(std::string(magic, 4) == "FGAT");
  unsigned char rest[6];
  f.read(reinterpret_cast<char*>(rest), 6);
  CHECK(rest[0] == 1);  // version 1, little endian
  CHECK(rest[1] == 0);
  CHECK(rest[2] == 0);
  CHECK(rest[3] == 0);
  CHECK(rest[4] == 0);  // dtype f32
  CHECK(rest[5] == 2);  // ndim
  // 2 x u64 extents + 6 floats
  CHECK(std::filesystem::file_size(path) == 4 + 4 + 1 + 1 + 16 + 24);
}

TEST_CASE("FGAT rejects truncated and malformed files") {
  TempDir dir;
  const std::string path = dir.file("bad.fgat");
  {
    std::ofstream f(path, std::ios::binary);
    f << "FGAT";
  }
  CHECK_THROWS_AS(fga::read_fgat(path), fga::IoError);
  {
    std::ofstream f(path, std::ios::binary);
    f << "NOPE" << std::string(32, '\0');
  }
  CHECK_THROWS_AS(fga::read_fgat(path), fga::IoError);
  CHECK_THROWS_AS(fga::read_fgat(dir.file("missing.fgat")), fga::IoError);
}

TEST_CASE("PNG round trips 8-bit-exact gray and RGB images") {
  TempDir dir;
  fga::Rng rng(5);
  for (std::int64_t channels : {1, 3}) {
    Tensor img({channels, 6, 5});
    for (double& v : img.values()) {
      v = std::floor(rng.uniform(0.0, 256.0)) / 255.0;  // exactly representable levels
    }
    const std::string path = dir.file("img" + std::to_string(channels) + ".png");
    fga::write_png(path, img);
    const Tensor back = fga::read_png(path);
    REQUIRE(back.shape() == img.shape());
    CHECK(testutil::max_abs_diff(back, img) < 1e-12);
  }
}

TEST_CASE("PNG writing clamps out-of-range and non-finite values") {
  TempDir dir;
  Tensor img({1, 1, 4});
  img.values() = {-0.5, 1.5, std::nan(""), 0.5};
  const std::string path = dir.file("clamp.png");
  fga::write_png(path, img);
  const Tensor back = fga::read_png(path);
  CHECK(back.values()[0] == 0.0);
  CHECK(back.values()[1] == 1.0);
  CHECK(back.values()[2] == 0.0);
  CHECK(back.values()[3] == doctest::Approx(0.5).epsilon(1e-2));
}

TEST_CASE("luminance uses BT.601 weights") {
  Tensor img({3, 1, 1});
  img.values() = {1.0, 0.5, 0.25};
  const Tensor y = fga::luminance(img);
  REQUIRE(y.shape() == std::vector<std::int64_t>{1, 1});
  CHECK(y.at(0, 0) == doctest::Approx(0.299 * 1.0 + 0.587 * 0.5 + 0.114 * 0.25).epsilon(1e-12));

  // Single-channel input passes through.
  Tensor gray({1, 2, 2});
  gray.values() = {0.1, 0.2, 0.3, 0.4};
  const Tensor yg = fga::luminance(gray);
  CHECK(yg.values() == gray.values());
  Tensor plane({2, 2});
  plane.values() = {0.1, 0.2, 0.3, 0.4};
  CHECK(fga::luminance(plane).values() == plane.values());
}

TEST_CASE("fnv1a64 matches the published test vectors") {
  TempDir dir;
  const std::string empty_path = dir.file("empty.bin");
  std::ofstream(empty_path, std::ios::binary).close();
  CHECK(fga::fnv1a64_file_hex(empty_path) == "cbf29ce484222325");

  const std::string a_path = dir.file("a.bin");
  {
    std::ofstream f(a_path, std::ios::binary);
    f << "a";
  }
  CHECK(fga::fnv1a64_file_hex(a_path) == "af63dc4c8601ec8c");

  const std::string foobar_path = dir.file("foobar.bin");
  {
    std::ofstream f(foobar_path, std::ios::binary);
    f << "foobar";
  }
  CHECK(fga::fnv1a64_file_hex(foobar_path) == "85944171f73967e8");

  CHECK_THROWS_AS(fga::fnv1a64_file_hex(dir.file("absent.bin")), fga::IoError);
}

TEST_CASE("read_png reports unreadable files as IoError") {
  TempDir dir;
  CHECK_THROWS_AS(fga::read_png(dir.file("missing.png")), fga::IoError);
  const std::string not_png = dir.file("not.png");
  {
    std::ofstream f(not_png, std::ios::binary);
    f << "this is not a png";
  }
  CHECK_THROWS_AS(fga::read_png(not_png), fga::IoError);
}
