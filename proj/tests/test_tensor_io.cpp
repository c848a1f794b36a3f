#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "flowface/tensor_io.hpp"

using namespace flowface;
namespace fs = std::filesystem;

namespace {
fs::path temp_dir() {
  auto d = fs::temp_directory_path() / "flowface_tio_test";
  fs::create_directories(d);
  return d;
}
}  // namespace

TEST_SUITE_BEGIN("tensor_io");

TEST_CASE("round trip preserves shape and bits") {
  Rng rng(7);
  Tensor<float> t = Tensor<float>::random_normal({3, 4, 5}, rng);
  t[0] = 0.1f;  // a value with no exact binary representation
  auto path = temp_dir() / "rt.oftk";
  write_oftk(path, t);
  Tensor<float> u = read_oftk(path);
  REQUIRE(u.shape() == t.shape());
  for (size_t i = 0; i < t.numel(); ++i) CHECK(u[i] == t[i]);
}

TEST_CASE("zero-length tensors survive") {
  auto path = temp_dir() / "rank0.oftk";
  Tensor<float> e({0});
  write_oftk(path, e);
  Tensor<float> u = read_oftk(path);
  CHECK(u.rank() == 1);
  CHECK(u.numel() == 0);
}

TEST_CASE("truncated payload raises a format error naming the file") {
  Rng rng(3);
  Tensor<float> t = Tensor<float>::random_normal({8, 8}, rng);
  auto path = temp_dir() / "trunc.oftk";
  write_oftk(path, t);
  auto size = fs::file_size(path);
  fs::resize_file(path, size - 9);
  CHECK_THROWS_AS(read_oftk(path), FormatError);
  try {
    read_oftk(path);
  } catch (const FormatError& e) {
    CHECK(std::string(e.what()).find("trunc.oftk") != std::string::npos);
  }
}

TEST_CASE("bad magic rejected") {
  auto path = temp_dir() / "magic.oftk";
  std::ofstream os(path, std::ios::binary);
  os << "NOPE" << std::string(16, '\0');
  os.close();
  CHECK_THROWS_AS(read_oftk(path), FormatError);
}

TEST_CASE("trailing bytes rejected") {
  Tensor<float> t({2, 2}, std::vector<float>{1, 2, 3, 4});
  auto path = temp_dir() / "trail.oftk";
  write_oftk(path, t);
  std::ofstream os(path, std::ios::binary | std::ios::app);
  os << 'x';
  os.close();
  CHECK_THROWS_AS(read_oftk(path), FormatError);
}

TEST_CASE("missing file names the path") {
  CHECK_THROWS_AS(read_oftk(temp_dir() / "absent.oftk"), FormatError);
}

TEST_SUITE_END();
