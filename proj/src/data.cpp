#include "hvi/data.hpp"

#include <fstream>
#include <iterator>

#include "hvi/error.hpp"

namespace hvi {

namespace {

std::uint32_t read_be32(const std::vector<std::uint8_t>& bytes, std::size_t at) {
  return (std::uint32_t{bytes[at]} << 24) | (std::uint32_t{bytes[at + 1]} << 16) | (std::uint32_t{bytes[at + 2]} << 8) |
         std::uint32_t{bytes[at + 3]};
}

}  // namespace

IdxArray read_idx(const std::string& path, std::uint32_t expected_magic) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(path, 0, "cannot open file");
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < 4) throw DataError(path, bytes.size(), "file ends inside the magic number");
  const std::uint32_t magic = read_be32(bytes, 0);
  if (magic != expected_magic) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "bad magic 0x%08x, expected 0x%08x", magic, expected_magic);
    throw DataError(path, 0, buf);
  }
  IdxArray out;
  const std::size_t rank = bytes[3];
  std::size_t at = 4;
  std::size_t total = 1;
  for (std::size_t d = 0; d < rank; ++d, at += 4) {
    if (bytes.size() < at + 4) throw DataError(path, bytes.size(), "file ends inside the dimension header");
    out.dims.push_back(read_be32(bytes, at));
    total *= out.dims.back();
  }
  if (bytes.size() < at + total)
    throw DataError(path, bytes.size(), "payload truncated, expected " + std::to_string(at + total) + " bytes");
  out.data.assign(bytes.begin() + static_cast<std::ptrdiff_t>(at),
                  bytes.begin() + static_cast<std::ptrdiff_t>(at + total));
  return out;
}

Matrix load_idx_images(const std::string& path, Index count) {
  const IdxArray a = read_idx(path, kIdxImagesMagic);
  if (a.dims.size() != 3) throw DataError(path, 3, "image file must have 3 dimensions");
  const Index n = a.dims[0];
  const Index pixels = static_cast<Index>(a.dims[1]) * a.dims[2];
  if (count == 0) count = n;
  if (count > n) throw DataError(path, 4, "asked for " + std::to_string(count) + " images, file has " + std::to_string(n));
  Matrix out(count, pixels);
  for (Index i = 0; i < count; ++i)
    for (Index j = 0; j < pixels; ++j) out(i, j) = a.data[static_cast<std::size_t>(i * pixels + j)] / 255.0;
  return out;
}

std::vector<int> load_idx_labels(const std::string& path, Index count) {
  const IdxArray a = read_idx(path, kIdxLabelsMagic);
  if (a.dims.size() != 1) throw DataError(path, 3, "label file must have 1 dimension");
  if (count == 0) count = a.dims[0];
  if (count > static_cast<Index>(a.dims[0])) throw DataError(path, 4, "not enough labels");
  return std::vector<int>(a.data.begin(), a.data.begin() + count);
}

Matrix binarize(const Matrix& images, RngStream& rng) {
  Matrix out(images.rows(), images.cols());
  for (Index i = 0; i < images.rows(); ++i)
    for (Index j = 0; j < images.cols(); ++j) out(i, j) = rng.uniform() < images(i, j) ? 1.0 : 0.0;
  return out;
}

}  // namespace hvi
