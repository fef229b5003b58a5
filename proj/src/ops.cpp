#include "volfreq/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <Eigen/Core>

namespace volfreq::ad {

namespace {

template <typename T>
void require_same(Var<T> a, Var<T> b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
}

template <typename T>
std::size_t trailing_repeat(Var<T> a, Var<T> b, const char* op) {
  const auto& sa = a.shape();
  const auto& sb = b.shape();
  if (sb.size() > sa.size() || !std::equal(sb.begin(), sb.end(), sa.end() - static_cast<std::ptrdiff_t>(sb.size()))) {
    throw ShapeError(std::string(op) + ": " + shape_string(sb) + " is not a trailing shape of " + shape_string(sa));
  }
  return a.value().size() / b.value().size();
}

// Accumulates f(i) into the gradient of v when v carries one.
template <typename T, typename F>
void accumulate(Tape<T>& t, Var<T> v, F&& f) {
  if (!t.requires_grad(v)) return;
  auto& g = t.grad_buffer(v).data;
  for (std::size_t i = 0; i < g.size(); ++i) g[i] += f(i);
}

template <typename T, typename F>
Tensor<T> map(const Tensor<T>& x, F&& f) {
  Tensor<T> out(x.shape);
  for (std::size_t i = 0; i < x.size(); ++i) out.data[i] = f(x.data[i]);
  return out;
}

}  // namespace

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  require_same(a, b, "add");
  const auto& x = a.value();
  const auto& y = b.value();
  Tensor<T> out(x.shape);
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = x.data[i] + y.data[i];
  return a.tape->record("add", std::move(out), {a, b}, [a, b](Tape<T>& t, const Tensor<T>& g) {
    accumulate(t, a, [&](std::size_t i) { return g.data[i]; });
    accumulate(t, b, [&](std::size_t i) { return g.data[i]; });
  });
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
  require_same(a, b, "sub");
  const auto& x = a.value();
  const auto& y = b.value();
  Tensor<T> out(x.shape);
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = x.data[i] - y.data[i];
  return a.tape->record("sub", std::move(out), {a, b}, [a, b](Tape<T>& t, const Tensor<T>& g) {
    accumulate(t, a, [&](std::size_t i) { return g.data[i]; });
    accumulate(t, b, [&](std::size_t i) { return -g.data[i]; });
  });
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  require_same(a, b, "mul");
  const auto& x = a.value();
  const auto& y = b.value();
  Tensor<T> out(x.shape);
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = x.data[i] * y.data[i];
  return a.tape->record("mul", std::move(out), {a, b}, [a, b](Tape<T>& t, const Tensor<T>& g) {
    const auto& x = t.value(a);
    const auto& y = t.value(b);
    accumulate(t, a, [&](std::size_t i) { return g.data[i] * y.data[i]; });
    accumulate(t, b, [&](std::size_t i) { return g.data[i] * x.data[i]; });
  });
}

template <typename T>
Var<T> div(Var<T> a, Var<T> b) {
  require_same(a, b, "div");
  const auto& x = a.value();
  const auto& y = b.value();
  Tensor<T> out(x.shape);
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = x.data[i] / y.data[i];
  return a.tape->record("div", std::move(out), {a, b}, [a, b](Tape<T>& t, const Tensor<T>& g) {
    const auto& x = t.value(a);
    const auto& y = t.value(b);
    accumulate(t, a, [&](std::size_t i) { return g.data[i] / y.data[i]; });
    accumulate(t, b, [&](std::size_t i) { return -g.data[i] * x.data[i] / (y.data[i] * y.data[i]); });
  });
}

template <typename T>
Var<T> add_scalar(Var<T> a, T s) {
  auto out = map(a.value(), [s](T v) { return v + s; });
  return a.tape->record("add_scalar", std::move(out), {a}, [a](Tape<T>& t, const Tensor<T>& g) {
    accumulate(t, a, [&](std::size_t i) { return g.data[i]; });
  });
}

template <typename T>
Var<T> mul_scalar(Var<T> a, T s) {
  auto out = map(a.value(), [s](T v) { return v * s; });
  return a.tape->record("mul_scalar", std::move(out), {a}, [a, s](Tape<T>& t, const Tensor<T>& g) {
    accumulate(t, a, [&](std::size_t i) { return g.data[i] * s; });
  });
}

template <typename T>
Var<T> mul_leading(Var<T> a, Var<T> b) {
  const std::size_t reps = trailing_repeat(a, b, "mul_leading");
  const auto& x = a.value();
  const auto& y = b.value();
  const std::size_t m = y.size();
  Tensor<T> out(x.shape);
  for (std::size_t r = 0; r < reps; ++r) {
    for (std::size_t i = 0; i < m; ++i) out.data[r * m + i] = x.data[r * m + i] * y.data[i];
  }
  return a.tape->record("mul_leading", std::move(out), {a, b}, [a, b, reps, m](Tape<T>& t, const Tensor<T>& g) {
    const auto& x = t.value(a);
    const auto& y = t.value(b);
    accumulate(t, a, [&](std::size_t i) { return g.data[i] * y.data[i % m]; });
    if (t.requires_grad(b)) {
      auto& gb = t.grad_buffer(b).data;
      for (std::size_t r = 0; r < reps; ++r) {
        for (std::size_t i = 0; i < m; ++i) gb[i] += g.data[r * m + i] * x.data[r * m + i];
      }
    }
  });
}

template <typename T>
Var<T> div_leading(Var<T> a, Var<T> b) {
  const std::size_t reps = trailing_repeat(a, b, "div_leading");
  const auto& x = a.value();
  const auto& y = b.value();
  const std::size_t m = y.size();
  Tensor<T> out(x.shape);
  for (std::size_t r = 0; r < reps; ++r) {
    for (std::size_t i = 0; i < m; ++i) out.data[r * m + i] = x.data[r * m + i] / y.data[i];
  }
  return a.tape->record("div_leading", std::move(out), {a, b}, [a, b, reps, m](Tape<T>& t, const Tensor<T>& g) {
    const auto& x = t.value(a);
    const auto& y = t.value(b);
    accumulate(t, a, [&](std::size_t i) { return g.data[i] / y.data[i % m]; });
    if (t.requires_grad(b)) {
      auto& gb = t.grad_buffer(b).data;
      for (std::size_t r = 0; r < reps; ++r) {
        for (std::size_t i = 0; i < m; ++i) gb[i] -= g.data[r * m + i] * x.data[r * m + i] / (y.data[i] * y.data[i]);
      }
    }
  });
}

template <typename T>
Var<T> expand_trailing(Var<T> a, std::size_t k) {
  const auto& x = a.value();
  Shape s = x.shape;
  s.push_back(k);
  Tensor<T> out(s);
  for (std::size_t i = 0; i < x.size(); ++i) std::fill_n(out.data.begin() + static_cast<std::ptrdiff_t>(i * k), k, x.data[i]);
  return a.tape->record("expand_trailing", std::move(out), {a}, [a, k](Tape<T>& t, const Tensor<T>& g) {
    accumulate(t, a, [&](std::size_t i) {
      T s = 0;
      for (std::size_t j = 0; j < k; ++j) s += g.data[i * k + j];
      return s;
    });
  });
}

template <typename T>
Var<T> sum(Var<T> a) {
  T s = 0;
  for (T v : a.value().data) s += v;
  return a.tape->record("sum", Tensor<T>({1}, {s}), {a}, [a](Tape<T>& t, const Tensor<T>& g) {
    accumulate(t, a, [&](std::size_t) { return g.data[0]; });
  });
}

template <typename T>
Var<T> mean(Var<T> a) {
  const auto n = static_cast<T>(a.value().size());
  T s = 0;
  for (T v : a.value().data) s += v;
  return a.tape->record("mean", Tensor<T>({1}, {s / n}), {a}, [a, n](Tape<T>& t, const Tensor<T>& g) {
    accumulate(t, a, [&](std::size_t) { return g.data[0] / n; });
  });
}

template <typename T>
Var<T> sum_inner(Var<T> a) {
  const auto& x = a.value();
  if (x.rank() < 1) throw ShapeError("sum_inner needs rank >= 1");
  const std::size_t c = x.shape[0];
  const std::size_t inner = x.size() / c;
  Tensor<T> out({c});
  for (std::size_t k = 0; k < c; ++k) {
    T s = 0;
    for (std::size_t i = 0; i < inner; ++i) s += x.data[k * inner + i];
    out.data[k] = s;
  }
  return a.tape->record("sum_inner", std::move(out), {a}, [a, inner](Tape<T>& t, const Tensor<T>& g) {
    accumulate(t, a, [&](std::size_t i) { return g.data[i / inner]; });
  });
}

template <typename T>
Var<T> reshape(Var<T> a, Shape shape) {
  if (numel(shape) != a.value().size()) {
    throw ShapeError("reshape " + shape_string(a.shape()) + " -> " + shape_string(shape));
  }
  Tensor<T> out(std::move(shape), a.value().data);
  return a.tape->record("reshape", std::move(out), {a}, [a](Tape<T>& t, const Tensor<T>& g) {
    accumulate(t, a, [&](std::size_t i) { return g.data[i]; });
  });
}

template <typename T>
Var<T> abs(Var<T> a) {
  auto out = map(a.value(), [](T v) { return std::abs(v); });
  return a.tape->record("abs", std::move(out), {a}, [a](Tape<T>& t, const Tensor<T>& g) {
    const auto& x = t.value(a);
    accumulate(t, a, [&](std::size_t i) {
      const T v = x.data[i];
      return v > 0 ? g.data[i] : (v < 0 ? -g.data[i] : T{0});
    });
  });
}

template <typename T>
Var<T> relu(Var<T> a) {
  auto out = map(a.value(), [](T v) { return v > 0 ? v : T{0}; });
  return a.tape->record("relu", std::move(out), {a}, [a](Tape<T>& t, const Tensor<T>& g) {
    const auto& x = t.value(a);
    accumulate(t, a, [&](std::size_t i) { return x.data[i] > 0 ? g.data[i] : T{0}; });
  });
}

template <typename T>
Var<T> log(Var<T> a) {
  auto out = map(a.value(), [](T v) { return std::log(v); });
  return a.tape->record("log", std::move(out), {a}, [a](Tape<T>& t, const Tensor<T>& g) {
    const auto& x = t.value(a);
    accumulate(t, a, [&](std::size_t i) { return g.data[i] / x.data[i]; });
  });
}

template <typename T>
Var<T> softmax_classes(Var<T> a) {
  const auto& x = a.value();
  if (x.rank() < 1 || x.shape[0] == 0) throw ShapeError("softmax_classes needs a leading class axis");
  const std::size_t c = x.shape[0];
  const std::size_t n = x.size() / c;
  Tensor<T> p(x.shape);
  for (std::size_t v = 0; v < n; ++v) {
    T mx = x.data[v];
    for (std::size_t k = 1; k < c; ++k) mx = std::max(mx, x.data[k * n + v]);
    T z = 0;
    for (std::size_t k = 0; k < c; ++k) {
      const T e = std::exp(x.data[k * n + v] - mx);
      p.data[k * n + v] = e;
      z += e;
    }
    for (std::size_t k = 0; k < c; ++k) p.data[k * n + v] /= z;
  }
  return a.tape->record("softmax_classes", Tensor<T>(p), {a}, [a, p, c, n](Tape<T>& t, const Tensor<T>& g) {
    if (!t.requires_grad(a)) return;
    auto& ga = t.grad_buffer(a).data;
    for (std::size_t v = 0; v < n; ++v) {
      T dot = 0;
      for (std::size_t k = 0; k < c; ++k) dot += p.data[k * n + v] * g.data[k * n + v];
      for (std::size_t k = 0; k < c; ++k) ga[k * n + v] += p.data[k * n + v] * (g.data[k * n + v] - dot);
    }
  });
}

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
  const auto& x = a.value();
  const auto& y = b.value();
  if (x.rank() != 2 || y.rank() != 2 || x.shape[1] != y.shape[0]) {
    throw ShapeError("matmul " + shape_string(x.shape) + " x " + shape_string(y.shape));
  }
  const std::size_t m = x.shape[0], k = x.shape[1], n = y.shape[1];
  Tensor<T> out({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t l = 0; l < k; ++l) {
      const T xv = x.data[i * k + l];
      for (std::size_t j = 0; j < n; ++j) out.data[i * n + j] += xv * y.data[l * n + j];
    }
  }
  return a.tape->record("matmul", std::move(out), {a, b}, [a, b, m, k, n](Tape<T>& t, const Tensor<T>& g) {
    const auto& x = t.value(a);
    const auto& y = t.value(b);
    if (t.requires_grad(a)) {
      auto& ga = t.grad_buffer(a).data;
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t l = 0; l < k; ++l) {
          T s = 0;
          for (std::size_t j = 0; j < n; ++j) s += g.data[i * n + j] * y.data[l * n + j];
          ga[i * k + l] += s;
        }
    }
    if (t.requires_grad(b)) {
      auto& gb = t.grad_buffer(b).data;
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t l = 0; l < k; ++l) {
          const T xv = x.data[i * k + l];
          for (std::size_t j = 0; j < n; ++j) gb[l * n + j] += xv * g.data[i * n + j];
        }
    }
  });
}

// ---------------------------------------------------------------------------
// conv3d

namespace {

struct ConvDims {
  std::size_t cin, cout, h, w, d, k, r;
  std::size_t hp() const { return h + 2 * r; }
  std::size_t wp() const { return w + 2 * r; }
  std::size_t dp() const { return d + 2 * r; }
};

template <typename T>
std::vector<T> replicate_pad(const Tensor<T>& x, const ConvDims& c) {
  const std::size_t hp = c.hp(), wp = c.wp(), dp = c.dp();
  std::vector<T> p(c.cin * hp * wp * dp);
  for (std::size_t ch = 0; ch < c.cin; ++ch) {
    for (std::size_t i = 0; i < hp; ++i) {
      const std::size_t si = std::min(std::max(i, c.r) - c.r, c.h - 1);
      for (std::size_t j = 0; j < wp; ++j) {
        const std::size_t sj = std::min(std::max(j, c.r) - c.r, c.w - 1);
        const T* src = x.data.data() + ((ch * c.h + si) * c.w + sj) * c.d;
        T* dst = p.data() + ((ch * hp + i) * wp + j) * dp;
        for (std::size_t k = 0; k < c.r; ++k) dst[k] = src[0];
        std::copy_n(src, c.d, dst + c.r);
        for (std::size_t k = 0; k < c.r; ++k) dst[c.r + c.d + k] = src[c.d - 1];
      }
    }
  }
  return p;
}

// Adjoint of replicate_pad.
template <typename T>
void fold_padding(const std::vector<T>& gp, const ConvDims& c, std::vector<T>& gx) {
  const std::size_t hp = c.hp(), wp = c.wp(), dp = c.dp();
  for (std::size_t ch = 0; ch < c.cin; ++ch) {
    for (std::size_t i = 0; i < hp; ++i) {
      const std::size_t si = std::min(std::max(i, c.r) - c.r, c.h - 1);
      for (std::size_t j = 0; j < wp; ++j) {
        const std::size_t sj = std::min(std::max(j, c.r) - c.r, c.w - 1);
        const T* src = gp.data() + ((ch * hp + i) * wp + j) * dp;
        T* dst = gx.data() + ((ch * c.h + si) * c.w + sj) * c.d;
        for (std::size_t k = 0; k < c.r; ++k) dst[0] += src[k];
        for (std::size_t k = 0; k < c.d; ++k) dst[k] += src[c.r + k];
        for (std::size_t k = 0; k < c.r; ++k) dst[c.d - 1] += src[c.r + c.d + k];
      }
    }
  }
}

// Lowers the k^3 neighbourhoods of output plane i into a (cin*k^3, w*d) matrix.
template <typename T>
void im2col_plane(const T* padded, const ConvDims& c, std::size_t i, T* col) {
  const std::size_t hp = c.hp(), wp = c.wp(), dp = c.dp(), kk = c.k, plane = c.w * c.d;
  std::size_t row = 0;
  for (std::size_t ci = 0; ci < c.cin; ++ci)
    for (std::size_t a = 0; a < kk; ++a)
      for (std::size_t e = 0; e < kk; ++e)
        for (std::size_t f = 0; f < kk; ++f, ++row) {
          T* dst = col + row * plane;
          for (std::size_t j = 0; j < c.w; ++j) {
            std::copy_n(padded + ((ci * hp + i + a) * wp + j + e) * dp + f, c.d, dst + j * c.d);
          }
        }
}

// Adjoint of im2col_plane, accumulating into the padded gradient.
template <typename T>
void col2im_plane(const T* col, const ConvDims& c, std::size_t i, T* padded) {
  const std::size_t hp = c.hp(), wp = c.wp(), dp = c.dp(), kk = c.k, plane = c.w * c.d;
  std::size_t row = 0;
  for (std::size_t ci = 0; ci < c.cin; ++ci)
    for (std::size_t a = 0; a < kk; ++a)
      for (std::size_t e = 0; e < kk; ++e)
        for (std::size_t f = 0; f < kk; ++f, ++row) {
          const T* src = col + row * plane;
          for (std::size_t j = 0; j < c.w; ++j) {
            T* __restrict dst = padded + ((ci * hp + i + a) * wp + j + e) * dp + f;
            const T* __restrict s = src + j * c.d;
            for (std::size_t z = 0; z < c.d; ++z) dst[z] += s[z];
          }
        }
}

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using PlaneMap = Eigen::Map<RowMat<T>, 0, Eigen::OuterStride<>>;

}  // namespace

// Each output plane (fixed first spatial index) is one GEMM of the kernel
// matrix (cout, cin*k^3) with the lowered input plane.
template <typename T>
Var<T> conv3d(Var<T> x, Var<T> w, Var<T> b) {
  const auto& xs = x.shape();
  const auto& ws = w.shape();
  if (xs.size() != 4 || ws.size() != 5 || ws[1] != xs[0] || ws[2] != ws[3] || ws[3] != ws[4] || ws[2] % 2 == 0 ||
      b.shape() != Shape{ws[0]}) {
    throw ShapeError("conv3d: input " + shape_string(xs) + ", kernel " + shape_string(ws) + ", bias " +
                     shape_string(b.shape()));
  }
  const ConvDims c{xs[0], ws[0], xs[1], xs[2], xs[3], ws[2], ws[2] / 2};
  const auto taps = static_cast<Eigen::Index>(c.cin * c.k * c.k * c.k);
  const auto plane = static_cast<Eigen::Index>(c.w * c.d);
  const auto vol = static_cast<Eigen::Index>(c.h * c.w * c.d);
  auto padded = replicate_pad(x.value(), c);
  Eigen::Map<const RowMat<T>> kernel(w.value().data.data(), static_cast<Eigen::Index>(c.cout), taps);
  Tensor<T> out({c.cout, c.h, c.w, c.d});
  RowMat<T> col(taps, plane);
  for (std::size_t i = 0; i < c.h; ++i) {
    im2col_plane(padded.data(), c, i, col.data());
    PlaneMap<T> o(out.data.data() + i * plane, static_cast<Eigen::Index>(c.cout), plane, Eigen::OuterStride<>(vol));
    o.noalias() = kernel * col;
  }
  for (std::size_t co = 0; co < c.cout; ++co) {
    const T bias = b.value().data[co];
    for (Eigen::Index v = 0; v < vol; ++v) out.data[co * vol + v] += bias;
  }
  return x.tape->record(
      "conv3d", std::move(out), {x, w, b},
      [x, w, b, c, padded = std::move(padded)](Tape<T>& t, const Tensor<T>& g) {
        const auto taps = static_cast<Eigen::Index>(c.cin * c.k * c.k * c.k);
        const auto plane = static_cast<Eigen::Index>(c.w * c.d);
        const auto vol = static_cast<Eigen::Index>(c.h * c.w * c.d);
        const auto cout = static_cast<Eigen::Index>(c.cout);
        if (t.requires_grad(b)) {
          auto& gb = t.grad_buffer(b).data;
          for (std::size_t co = 0; co < c.cout; ++co) {
            T s = 0;
            for (Eigen::Index v = 0; v < vol; ++v) s += g.data[co * vol + v];
            gb[co] += s;
          }
        }
        const bool need_w = t.requires_grad(w);
        const bool need_x = t.requires_grad(x);
        if (!need_w && !need_x) return;
        Eigen::Map<const RowMat<T>> kernel(t.value(w).data.data(), cout, taps);
        RowMat<T> col(taps, plane);
        RowMat<T> gw = RowMat<T>::Zero(cout, taps);
        std::vector<T> gp(need_x ? c.cin * c.hp() * c.wp() * c.dp() : 0, T{0});
        for (std::size_t i = 0; i < c.h; ++i) {
          Eigen::Map<const RowMat<T>, 0, Eigen::OuterStride<>> go(g.data.data() + i * plane, cout, plane,
                                                                   Eigen::OuterStride<>(vol));
          if (need_w) {
            im2col_plane(padded.data(), c, i, col.data());
            gw.noalias() += go * col.transpose();
          }
          if (need_x) {
            col.noalias() = kernel.transpose() * go;
            col2im_plane(col.data(), c, i, gp.data());
          }
        }
        if (need_w) {
          auto& dst = t.grad_buffer(w).data;
          for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += gw.data()[k];
        }
        if (need_x) fold_padding(gp, c, t.grad_buffer(x).data);
      });
}

// ---------------------------------------------------------------------------
// Linear transforms

namespace {

template <typename T, typename Fwd, typename Adj>
Var<T> linear_op(const char* name, Var<T> x, Fwd fwd, Adj adj) {
  auto out = fwd(x.value());
  return x.tape->record(name, std::move(out), {x}, [x, adj](Tape<T>& t, const Tensor<T>& g) {
    if (!t.requires_grad(x)) return;
    auto gx = adj(g);
    auto& dst = t.grad_buffer(x).data;
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += gx.data[i];
  });
}

}  // namespace

template <typename T>
Var<T> dct3(Var<T> x, const DctPlan& plan) {
  const DctPlan* p = &plan;
  return linear_op<T>(
      "dct3", x, [p](const Tensor<T>& v) { return volfreq::dct3(v, *p); },
      [p](const Tensor<T>& g) { return volfreq::idct3(g, *p); });
}

template <typename T>
Var<T> idct3(Var<T> c, const DctPlan& plan) {
  const DctPlan* p = &plan;
  return linear_op<T>(
      "idct3", c, [p](const Tensor<T>& v) { return volfreq::idct3(v, *p); },
      [p](const Tensor<T>& g) { return volfreq::dct3(g, *p); });
}

template <typename T>
Var<T> dct2_slices(Var<T> x, const DctPlan& plan) {
  const DctPlan* p = &plan;
  return linear_op<T>(
      "dct2_slices", x, [p](const Tensor<T>& v) { return volfreq::dct2_slices(v, *p); },
      [p](const Tensor<T>& g) { return volfreq::idct2_slices(g, *p); });
}

template <typename T>
Var<T> idct2_slices(Var<T> c, const DctPlan& plan) {
  const DctPlan* p = &plan;
  return linear_op<T>(
      "idct2_slices", c, [p](const Tensor<T>& v) { return volfreq::idct2_slices(v, *p); },
      [p](const Tensor<T>& g) { return volfreq::dct2_slices(g, *p); });
}

template <typename T>
Var<T> soft_round(Var<T> u, RoundingGradient rule) {
  auto out = map(u.value(), [](T v) { return std::round(v); });
  return u.tape->record("soft_round", std::move(out), {u}, [u, rule](Tape<T>& t, const Tensor<T>& g) {
    if (rule == RoundingGradient::kStraightThrough) {
      accumulate(t, u, [&](std::size_t i) { return g.data[i]; });
      return;
    }
    if (rule == RoundingGradient::kZero) return;
    const auto& x = t.value(u);
    if (rule == RoundingGradient::kCubic) {
      accumulate(t, u, [&](std::size_t i) {
        const T e = x.data[i] - std::round(x.data[i]);
        return g.data[i] * T{3} * e * e;
      });
      return;
    }
    accumulate(t, u, [&](std::size_t i) {
      return g.data[i] * (T{1} - std::cos(T{2} * std::numbers::pi_v<T> * x.data[i]));
    });
  });
}

template <typename T>
Var<T> clamp(Var<T> x, T lo, T hi) {
  auto out = map(x.value(), [lo, hi](T v) { return std::clamp(v, lo, hi); });
  return x.tape->record("clamp", std::move(out), {x}, [x, lo, hi](Tape<T>& t, const Tensor<T>& g) {
    const auto& v = t.value(x);
    accumulate(t, x, [&](std::size_t i) { return v.data[i] >= lo && v.data[i] <= hi ? g.data[i] : T{0}; });
  });
}

namespace {

// Valid-window sum of length k along one axis of a (outer, n, inner) view.
template <typename T>
Tensor<T> window_sum_axis(const Tensor<T>& x, std::size_t axis, std::size_t k) {
  Shape s = x.shape;
  const std::size_t n = s[axis];
  std::size_t outer = 1, inner = 1;
  for (std::size_t a = 0; a < axis; ++a) outer *= s[a];
  for (std::size_t a = axis + 1; a < s.size(); ++a) inner *= s[a];
  const std::size_t m = n - k + 1;
  s[axis] = m;
  Tensor<T> out(s);
  for (std::size_t o = 0; o < outer; ++o) {
    const T* src = x.data.data() + o * n * inner;
    T* dst = out.data.data() + o * m * inner;
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t l = 0; l < k; ++l) {
        const T* row = src + (i + l) * inner;
        T* drow = dst + i * inner;
        for (std::size_t z = 0; z < inner; ++z) drow[z] += row[z];
      }
    }
  }
  return out;
}

// Adjoint of window_sum_axis: scatter each window sum back onto its k inputs.
template <typename T>
Tensor<T> window_sum_axis_adjoint(const Tensor<T>& g, std::size_t axis, std::size_t k) {
  Shape s = g.shape;
  const std::size_t m = s[axis];
  const std::size_t n = m + k - 1;
  std::size_t outer = 1, inner = 1;
  for (std::size_t a = 0; a < axis; ++a) outer *= s[a];
  for (std::size_t a = axis + 1; a < s.size(); ++a) inner *= s[a];
  s[axis] = n;
  Tensor<T> out(s);
  for (std::size_t o = 0; o < outer; ++o) {
    const T* src = g.data.data() + o * m * inner;
    T* dst = out.data.data() + o * n * inner;
    for (std::size_t i = 0; i < m; ++i) {
      const T* row = src + i * inner;
      for (std::size_t l = 0; l < k; ++l) {
        T* drow = dst + (i + l) * inner;
        for (std::size_t z = 0; z < inner; ++z) drow[z] += row[z];
      }
    }
  }
  return out;
}

}  // namespace

template <typename T>
Var<T> box_mean_valid(Var<T> x, std::size_t k) {
  const auto& s = x.shape();
  if (s.size() != 4 || k == 0 || k > s[1] || k > s[2] || k > s[3]) {
    throw ShapeError("box_mean_valid: window " + std::to_string(k) + " does not fit stack " + shape_string(s));
  }
  const T scale = T{1} / static_cast<T>(k * k * k);
  auto out = window_sum_axis(x.value(), 1, k);
  out = window_sum_axis(out, 2, k);
  out = window_sum_axis(out, 3, k);
  for (auto& v : out.data) v *= scale;
  return x.tape->record("box_mean_valid", std::move(out), {x}, [x, k, scale](Tape<T>& t, const Tensor<T>& g) {
    if (!t.requires_grad(x)) return;
    auto gx = window_sum_axis_adjoint(g, 3, k);
    gx = window_sum_axis_adjoint(gx, 2, k);
    gx = window_sum_axis_adjoint(gx, 1, k);
    auto& dst = t.grad_buffer(x).data;
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += gx.data[i] * scale;
  });
}

template <typename T>
Var<T> split_patches(Var<T> volume, const PatchGrid& grid) {
  if (volume.shape() != grid.original.shape()) throw ShapeError("split_patches: volume does not match grid");
  auto out = volfreq::split_patches<T>(volume.value().data, grid);
  return volume.tape->record("split_patches", std::move(out), {volume}, [volume, grid](Tape<T>& t, const Tensor<T>& g) {
    if (!t.requires_grad(volume)) return;
    auto gv = volfreq::split_patches_adjoint<T>(g.data, grid);
    auto& dst = t.grad_buffer(volume).data;
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += gv.data[i];
  });
}

template <typename T>
Var<T> merge_patches(Var<T> stack, const PatchGrid& grid) {
  auto out = volfreq::merge_patches<T>(stack.value().data, grid);
  return stack.tape->record("merge_patches", std::move(out), {stack}, [stack, grid](Tape<T>& t, const Tensor<T>& g) {
    if (!t.requires_grad(stack)) return;
    auto gs = volfreq::merge_patches_adjoint<T>(g.data, grid);
    auto& dst = t.grad_buffer(stack).data;
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += gs.data[i];
  });
}

#define VOLFREQ_INSTANTIATE_OPS(T)                                        \
  template Var<T> add(Var<T>, Var<T>);                                    \
  template Var<T> sub(Var<T>, Var<T>);                                    \
  template Var<T> mul(Var<T>, Var<T>);                                    \
  template Var<T> div(Var<T>, Var<T>);                                    \
  template Var<T> add_scalar(Var<T>, T);                                  \
  template Var<T> mul_scalar(Var<T>, T);                                  \
  template Var<T> mul_leading(Var<T>, Var<T>);                            \
  template Var<T> div_leading(Var<T>, Var<T>);                            \
  template Var<T> expand_trailing(Var<T>, std::size_t);                   \
  template Var<T> sum(Var<T>);                                            \
  template Var<T> mean(Var<T>);                                           \
  template Var<T> sum_inner(Var<T>);                                      \
  template Var<T> reshape(Var<T>, Shape);                                 \
  template Var<T> abs(Var<T>);                                            \
  template Var<T> relu(Var<T>);                                           \
  template Var<T> log(Var<T>);                                            \
  template Var<T> softmax_classes(Var<T>);                                \
  template Var<T> matmul(Var<T>, Var<T>);                                 \
  template Var<T> conv3d(Var<T>, Var<T>, Var<T>);                         \
  template Var<T> dct3(Var<T>, const DctPlan&);                           \
  template Var<T> idct3(Var<T>, const DctPlan&);                          \
  template Var<T> dct2_slices(Var<T>, const DctPlan&);                    \
  template Var<T> idct2_slices(Var<T>, const DctPlan&);                   \
  template Var<T> soft_round(Var<T>, RoundingGradient);                   \
  template Var<T> clamp(Var<T>, T, T);                                    \
  template Var<T> box_mean_valid(Var<T>, std::size_t);                    \
  template Var<T> split_patches(Var<T>, const PatchGrid&);                \
  template Var<T> merge_patches(Var<T>, const PatchGrid&);

VOLFREQ_INSTANTIATE_OPS(float)
VOLFREQ_INSTANTIATE_OPS(double)

}  // namespace volfreq::ad
