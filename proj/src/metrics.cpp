#include "volfreq/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace volfreq {

namespace {

void require_same(const LabelField& a, const LabelField& b) {
  if (a.extent() != b.extent()) throw ShapeError("label fields differ in extent");
  if (a.num_class() != b.num_class()) throw std::invalid_argument("label fields differ in class count");
}

// 1-D squared distance transform of sampled function f (lower envelope of parabolas).
void edt_1d(const double* f, double* d, std::size_t n, std::size_t stride, std::vector<double>& buf_f,
            std::vector<std::size_t>& v, std::vector<double>& z) {
  constexpr double inf = std::numeric_limits<double>::infinity();
  buf_f.resize(n);
  for (std::size_t i = 0; i < n; ++i) buf_f[i] = f[i * stride];
  v.resize(n);
  z.resize(n + 1);
  std::size_t k = 0;
  std::size_t first = n;
  for (std::size_t q = 0; q < n; ++q) {
    if (buf_f[q] < inf) {
      first = q;
      break;
    }
  }
  if (first == n) {
    for (std::size_t q = 0; q < n; ++q) d[q * stride] = inf;
    return;
  }
  v[0] = first;
  z[0] = -inf;
  z[1] = inf;
  for (std::size_t q = first + 1; q < n; ++q) {
    if (!(buf_f[q] < inf)) continue;
    const auto qd = static_cast<double>(q);
    double s;
    while (true) {
      const auto vk = static_cast<double>(v[k]);
      s = ((buf_f[q] + qd * qd) - (buf_f[v[k]] + vk * vk)) / (2.0 * qd - 2.0 * vk);
      if (s <= z[k] && k > 0) {
        --k;
      } else {
        break;
      }
    }
    if (s <= z[k]) {
      // k == 0 and the new parabola dominates everywhere.
      v[0] = q;
      z[0] = -inf;
      z[1] = inf;
      continue;
    }
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = inf;
  }
  k = 0;
  for (std::size_t q = 0; q < n; ++q) {
    const auto qd = static_cast<double>(q);
    while (z[k + 1] < qd) ++k;
    const auto dv = qd - static_cast<double>(v[k]);
    d[q * stride] = dv * dv + buf_f[v[k]];
  }
}

}  // namespace

std::vector<double> dice_per_class(const LabelField& pred, const LabelField& truth) {
  require_same(pred, truth);
  const auto nc = static_cast<std::size_t>(pred.num_class());
  std::vector<std::size_t> inter(nc), np(nc), ng(nc);
  const auto p = pred.classes();
  const auto g = truth.classes();
  for (std::size_t v = 0; v < p.size(); ++v) {
    ++np[p[v]];
    ++ng[g[v]];
    if (p[v] == g[v]) ++inter[p[v]];
  }
  std::vector<double> out(nc);
  for (std::size_t c = 0; c < nc; ++c) {
    const std::size_t denom = np[c] + ng[c];
    out[c] = denom == 0 ? 1.0 : 2.0 * static_cast<double>(inter[c]) / static_cast<double>(denom);
  }
  return out;
}

std::vector<std::size_t> surface_voxels(const LabelField& f, int cls) {
  const auto& e = f.extent();
  const auto c = static_cast<std::uint8_t>(cls);
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < e.h; ++i) {
    for (std::size_t j = 0; j < e.w; ++j) {
      for (std::size_t k = 0; k < e.d; ++k) {
        if (f.at(i, j, k) != c) continue;
        const bool border = i == 0 || j == 0 || k == 0 || i + 1 == e.h || j + 1 == e.w || k + 1 == e.d;
        if (border || f.at(i - 1, j, k) != c || f.at(i + 1, j, k) != c || f.at(i, j - 1, k) != c ||
            f.at(i, j + 1, k) != c || f.at(i, j, k - 1) != c || f.at(i, j, k + 1) != c) {
          out.push_back(e.index(i, j, k));
        }
      }
    }
  }
  return out;
}

std::vector<double> distance_to_marked(const Extent& e, const std::vector<std::size_t>& marked) {
  constexpr double inf = std::numeric_limits<double>::infinity();
  std::vector<double> g(e.voxels(), inf);
  for (auto m : marked) g[m] = 0.0;
  if (marked.empty()) return g;
  std::vector<double> out(e.voxels());
  std::vector<double> buf;
  std::vector<std::size_t> v;
  std::vector<double> z;
  // Axis d (stride 1), then w (stride d), then h (stride w*d).
  for (std::size_t i = 0; i < e.h; ++i)
    for (std::size_t j = 0; j < e.w; ++j) {
      const std::size_t base = e.index(i, j, 0);
      edt_1d(g.data() + base, out.data() + base, e.d, 1, buf, v, z);
    }
  g.swap(out);
  for (std::size_t i = 0; i < e.h; ++i)
    for (std::size_t k = 0; k < e.d; ++k) {
      const std::size_t base = e.index(i, 0, k);
      edt_1d(g.data() + base, out.data() + base, e.w, e.d, buf, v, z);
    }
  g.swap(out);
  for (std::size_t j = 0; j < e.w; ++j)
    for (std::size_t k = 0; k < e.d; ++k) {
      const std::size_t base = e.index(0, j, k);
      edt_1d(g.data() + base, out.data() + base, e.h, e.w * e.d, buf, v, z);
    }
  for (auto& x : out) x = std::sqrt(x);
  return out;
}

double percentile(std::vector<double> values, double q) {
  if (values.empty()) throw std::invalid_argument("percentile of an empty set");
  std::sort(values.begin(), values.end());
  const double pos = q / 100.0 * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, values.size() - 1);
  const double t = pos - static_cast<double>(lo);
  // numpy's lerp: anchored at whichever end is nearer, for symmetric rounding.
  const double diff = values[hi] - values[lo];
  return t >= 0.5 ? values[hi] - diff * (1 - t) : values[lo] + diff * t;
}

Hd95Result hd95(const LabelField& pred, const LabelField& truth) {
  require_same(pred, truth);
  const auto& e = pred.extent();
  Hd95Result r;
  double total = 0.0;
  std::size_t defined = 0;
  for (int c = 0; c < pred.num_class(); ++c) {
    const auto sp = surface_voxels(pred, c);
    const auto sg = surface_voxels(truth, c);
    if (sp.empty() && sg.empty()) {
      r.per_class.emplace_back(0.0);
    } else if (sp.empty() || sg.empty()) {
      r.per_class.emplace_back(std::nullopt);
      ++r.undefined;
      continue;
    } else {
      const auto to_g = distance_to_marked(e, sg);
      const auto to_p = distance_to_marked(e, sp);
      std::vector<double> dpg, dgp;
      dpg.reserve(sp.size());
      dgp.reserve(sg.size());
      for (auto v : sp) dpg.push_back(to_g[v]);
      for (auto v : sg) dgp.push_back(to_p[v]);
      r.per_class.emplace_back(std::max(percentile(std::move(dpg), 95.0), percentile(std::move(dgp), 95.0)));
    }
    total += *r.per_class.back();
    ++defined;
  }
  r.mean = defined ? total / static_cast<double>(defined) : 0.0;
  return r;
}

MetricsReport evaluate_segmentation(const LabelField& pred, const LabelField& truth) {
  MetricsReport m;
  m.per_class_dsc = dice_per_class(pred, truth);
  m.mean_dsc = std::accumulate(m.per_class_dsc.begin(), m.per_class_dsc.end(), 0.0) /
               static_cast<double>(m.per_class_dsc.size());
  auto h = hd95(pred, truth);
  m.mean_hd95 = h.mean;
  m.per_class_hd95 = std::move(h.per_class);
  m.hd95_undefined = h.undefined;
  return m;
}

}  // namespace volfreq
