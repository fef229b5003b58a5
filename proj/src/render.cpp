#include "volfreq/render.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "volfreq/synth.hpp"

namespace volfreq {

namespace {

// Calls fn(row, col, flat voxel index) over the slice.
template <typename F>
void for_slice(const Extent& e, int axis, std::size_t index, F&& fn) {
  const std::size_t dims[3] = {e.h, e.w, e.d};
  if (axis < 0 || axis > 2) throw std::invalid_argument("slice axis must be 0, 1 or 2");
  if (index >= dims[axis]) {
    throw std::out_of_range("slice index " + std::to_string(index) + " outside axis of length " +
                            std::to_string(dims[axis]));
  }
  const int ra = axis == 0 ? 1 : 0;
  const int ca = axis == 2 ? 1 : 2;
  for (std::size_t r = 0; r < dims[ra]; ++r)
    for (std::size_t c = 0; c < dims[ca]; ++c) {
      std::size_t ijk[3];
      ijk[axis] = index;
      ijk[ra] = r;
      ijk[ca] = c;
      fn(r, c, e.index(ijk[0], ijk[1], ijk[2]));
    }
}

Graymap blank(const Extent& e, int axis) {
  const std::size_t dims[3] = {e.h, e.w, e.d};
  Graymap g;
  g.height = dims[axis == 0 ? 1 : 0];
  g.width = dims[axis == 2 ? 1 : 2];
  g.pixels.resize(g.width * g.height);
  return g;
}

}  // namespace

Graymap render_slice(const Volume& v, int axis, std::size_t index) {
  if (axis < 0 || axis > 2) throw std::invalid_argument("slice axis must be 0, 1 or 2");
  auto g = blank(v.extent(), axis);
  std::vector<double> vals(g.pixels.size());
  for_slice(v.extent(), axis, index, [&](std::size_t r, std::size_t c, std::size_t i) { vals[r * g.width + c] = v.data()[i]; });
  const auto [mn, mx] = std::minmax_element(vals.begin(), vals.end());
  const double lo = *mn, hi = *mx;
  for (std::size_t i = 0; i < vals.size(); ++i) {
    g.pixels[i] = hi > lo ? static_cast<std::uint8_t>(std::lround(255.0 * (vals[i] - lo) / (hi - lo))) : 128;
  }
  std::ostringstream note;
  note.precision(17);
  note << "minmax " << lo << ' ' << hi;
  g.note = note.str();
  return g;
}

Graymap render_slice(const LabelField& f, int axis, std::size_t index) {
  if (axis < 0 || axis > 2) throw std::invalid_argument("slice axis must be 0, 1 or 2");
  auto g = blank(f.extent(), axis);
  const int top = f.num_class() - 1;
  for_slice(f.extent(), axis, index, [&](std::size_t r, std::size_t c, std::size_t i) {
    g.pixels[r * g.width + c] = static_cast<std::uint8_t>(std::lround(255.0 * f.classes()[i] / top));
  });
  g.note = "labels 0.." + std::to_string(top) + " evenly spaced";
  return g;
}

std::string encode_pgm(const Graymap& g) {
  if (g.pixels.size() != g.width * g.height) throw ShapeError("graymap pixel count does not match its size");
  std::ostringstream out;
  out << "P5\n# " << g.note << '\n' << g.width << ' ' << g.height << "\n255\n";
  std::string s = out.str();
  s.append(reinterpret_cast<const char*>(g.pixels.data()), g.pixels.size());
  return s;
}

Graymap decode_pgm(const std::string& bytes) {
  std::size_t pos = 0;
  auto skip_space_and_comments = [&] {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        const auto nl = bytes.find('\n', pos);
        pos = nl == std::string::npos ? bytes.size() : nl + 1;
      } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto number = [&] {
    skip_space_and_comments();
    const std::size_t start = pos;
    while (pos < bytes.size() && std::isdigit(static_cast<unsigned char>(bytes[pos]))) ++pos;
    if (pos == start) throw FormatError("expected a number in PGM header", start);
    return static_cast<std::size_t>(std::stoull(bytes.substr(start, pos - start)));
  };
  if (bytes.compare(0, 2, "P5") != 0) throw FormatError("not a binary PGM", 0);
  pos = 2;
  Graymap g;
  {
    const auto hash = bytes.find('#', pos);
    const auto first_digit = bytes.find_first_of("0123456789", pos);
    if (hash != std::string::npos && hash < first_digit) {
      const auto nl = bytes.find('\n', hash);
      g.note = bytes.substr(hash + 2, nl - hash - 2);
    }
  }
  g.width = number();
  g.height = number();
  const auto maxval = number();
  if (maxval != 255) throw FormatError("only 8-bit PGM is supported", pos);
  ++pos;  // single whitespace before the raster
  if (bytes.size() - pos != g.width * g.height) {
    throw FormatError("raster holds " + std::to_string(bytes.size() - pos) + " bytes, expected " +
                          std::to_string(g.width * g.height),
                      pos);
  }
  g.pixels.assign(bytes.begin() + static_cast<std::ptrdiff_t>(pos), bytes.end());
  return g;
}

}  // namespace volfreq
