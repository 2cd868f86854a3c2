#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hvi/autodiff.hpp"
#include "hvi/rng.hpp"

namespace hvi {

/// A parsed IDX file: big-endian u32 dimensions and a u8 payload.
struct IdxArray {
  std::vector<std::uint32_t> dims;
  std::vector<std::uint8_t> data;
};

inline constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

/// Throws DataError (with the byte offset) for a missing file, wrong magic or short payload.
IdxArray read_idx(const std::string& path, std::uint32_t expected_magic);

/// First `count` images (0 = all) as rows of pixels scaled to [0, 1].
Matrix load_idx_images(const std::string& path, Index count = 0);
std::vector<int> load_idx_labels(const std::string& path, Index count = 0);

/// Bernoulli draw per pixel with the pixel intensity as probability.
Matrix binarize(const Matrix& images, RngStream& rng);

}  // namespace hvi
