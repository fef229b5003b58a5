#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "volfreq/volume.hpp"

namespace volfreq {

/// 8-bit grayscale image, row-major.
struct Graymap {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> pixels;
  /// Normalisation note written into the header comment.
  std::string note;
};

/// Slice orthogonal to `axis` (0 = H, 1 = W, 2 = D) at `index`; the two
/// remaining axes become rows and columns in order. Intensities are min-max
/// normalised per image; a constant slice renders as mid gray.
Graymap render_slice(const Volume& v, int axis, std::size_t index);
/// Classes map to evenly spaced gray levels, class 0 black.
Graymap render_slice(const LabelField& f, int axis, std::size_t index);

/// Binary PGM (P5) with the note as a header comment.
std::string encode_pgm(const Graymap& g);
Graymap decode_pgm(const std::string& bytes);

}  // namespace volfreq
