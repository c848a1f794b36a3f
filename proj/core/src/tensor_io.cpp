#include "flowface/tensor_io.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>

namespace flowface {

namespace {

constexpr char kMagic[4] = {'O', 'F', 'T', 'K'};
constexpr uint32_t kMaxRank = 8;

void put_u32le(std::ostream& os, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

bool get_u32le(std::istream& is, uint32_t& v) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) return false;
  v = uint32_t(b[0]) | uint32_t(b[1]) << 8 | uint32_t(b[2]) << 16 | uint32_t(b[3]) << 24;
  return true;
}

void put_f32le(std::ostream& os, float f) {
  uint32_t v;
  std::memcpy(&v, &f, 4);
  put_u32le(os, v);
}

}  // namespace

void write_oftk(const std::filesystem::path& path, const Tensor<float>& t) {
  std::ofstream os(path, std::ios::binary);
  require_format(bool(os), "cannot open " + path.string() + " for writing");
  os.write(kMagic, 4);
  put_u32le(os, uint32_t(t.rank()));
  for (int i = 0; i < t.rank(); ++i) put_u32le(os, uint32_t(t.dim(i)));
  static_assert(sizeof(float) == 4);
  if constexpr (std::endian::native == std::endian::little) {
    os.write(reinterpret_cast<const char*>(t.data()),
             std::streamsize(t.numel() * 4));
  } else {
    for (size_t i = 0; i < t.numel(); ++i) put_f32le(os, t[i]);
  }
  require_format(bool(os), "short write to " + path.string());
}

Tensor<float> read_oftk(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  require_format(bool(is), "cannot open tensor file " + path.string());

  char magic[4];
  require_format(bool(is.read(magic, 4)) && std::memcmp(magic, kMagic, 4) == 0,
                 path.string() + ": bad magic, expected OFTK");

  uint32_t rank = 0;
  require_format(get_u32le(is, rank), path.string() + ": truncated header (rank)");
  require_format(rank <= kMaxRank,
                 path.string() + ": rank " + std::to_string(rank) + " exceeds limit");

  std::vector<int> shape(rank);
  size_t numel = 1;
  for (uint32_t i = 0; i < rank; ++i) {
    uint32_t d = 0;
    require_format(get_u32le(is, d),
                   path.string() + ": truncated header (dim " + std::to_string(i) + ")");
    require_format(d <= (1u << 28), path.string() + ": implausible dimension");
    shape[i] = int(d);
    numel *= d;
  }

  Tensor<float> t(shape);
  if constexpr (std::endian::native == std::endian::little) {
    is.read(reinterpret_cast<char*>(t.data()), std::streamsize(numel * 4));
    require_format(size_t(is.gcount()) == numel * 4,
                   path.string() + ": truncated payload, expected " +
                       std::to_string(numel) + " float32 values");
  } else {
    for (size_t i = 0; i < numel; ++i) {
      uint32_t v = 0;
      require_format(get_u32le(is, v), path.string() + ": truncated payload");
      float f;
      std::memcpy(&f, &v, 4);
      t[i] = f;
    }
  }
  // Reject trailing garbage so appended/duplicated payloads are caught.
  char extra;
  require_format(!is.read(&extra, 1),
                 path.string() + ": trailing bytes after payload");
  return t;
}

}  // namespace flowface
