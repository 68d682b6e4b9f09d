// Copyright 2026 The neurodiff Authors
// SPDX-License-Identifier: Apache-2.0

#include "neurodiff/nn/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>

#include "neurodiff/errors.hpp"

namespace neurodiff::nn {

namespace {

using MatR = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapR = Eigen::Map<MatR>;
using CMapR = Eigen::Map<const MatR>;

using Index = Eigen::Index;

CMapR as_matrix(const Tensor& t, std::size_t rows, std::size_t cols) {
  return CMapR(t.ptr(), static_cast<Index>(rows), static_cast<Index>(cols));
}
MapR as_matrix(Tensor& t, std::size_t rows, std::size_t cols) {
  return MapR(t.ptr(), static_cast<Index>(rows), static_cast<Index>(cols));
}

Node& input(Node& self, std::size_t i) { return *self.inputs[i]; }
bool wants(Node& self, std::size_t i) {
  return i < self.inputs.size() && self.inputs[i]->requires_grad;
}

void require_rank(const Var& v, std::size_t rank, const char* op) {
  if (v.value().rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) +
                     " input, got " + shape_str(v.shape()));
  }
}

void require_same(const Var& a, const Var& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shapes " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()) + " differ");
  }
}

std::vector<Var> with_optional(std::vector<Var> inputs, const Var& maybe) {
  if (maybe.node()) inputs.push_back(maybe);
  return inputs;
}

}  // namespace

Var matmul(const Var& a, const Var& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const auto n = a.shape()[0], k = a.shape()[1], m = b.shape()[1];
  if (b.shape()[0] != k) {
    throw ShapeError("matmul: inner dimensions disagree for " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()));
  }
  Tensor out({n, m});
  as_matrix(out, n, m).noalias() = as_matrix(a.value(), n, k) * as_matrix(b.value(), k, m);
  return make_result(std::move(out), {a, b}, [n, k, m](Node& self) {
    auto g = as_matrix(self.grad, n, m);
    if (wants(self, 0)) {
      auto& in = input(self, 0);
      as_matrix(in.grad_buffer(), n, k).noalias() += g * as_matrix(input(self, 1).value, k, m).transpose();
    }
    if (wants(self, 1)) {
      auto& in = input(self, 1);
      as_matrix(in.grad_buffer(), k, m).noalias() += as_matrix(input(self, 0).value, n, k).transpose() * g;
    }
  });
}

Var affine_map(const Var& x, const Var& w, const Var& b) {
  require_rank(x, 2, "affine_map");
  require_rank(w, 2, "affine_map");
  const auto n = x.shape()[0], din = x.shape()[1], dout = w.shape()[1];
  if (w.shape()[0] != din) {
    throw ShapeError("affine_map: input " + shape_str(x.shape()) + " does not match weight " +
                     shape_str(w.shape()));
  }
  const bool has_bias = static_cast<bool>(b.node());
  if (has_bias && b.shape() != Shape{dout}) {
    throw ShapeError("affine_map: bias " + shape_str(b.shape()) + " does not match weight " +
                     shape_str(w.shape()));
  }
  Tensor out({n, dout});
  auto y = as_matrix(out, n, dout);
  y.noalias() = as_matrix(x.value(), n, din) * as_matrix(w.value(), din, dout);
  if (has_bias) {
    y.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(b.value().ptr(), static_cast<Index>(dout));
  }
  return make_result(std::move(out), with_optional({x, w}, b), [n, din, dout](Node& self) {
    auto g = as_matrix(self.grad, n, dout);
    if (wants(self, 0)) {
      as_matrix(input(self, 0).grad_buffer(), n, din).noalias() +=
          g * as_matrix(input(self, 1).value, din, dout).transpose();
    }
    if (wants(self, 1)) {
      as_matrix(input(self, 1).grad_buffer(), din, dout).noalias() +=
          as_matrix(input(self, 0).value, n, din).transpose() * g;
    }
    if (wants(self, 2)) {
      Eigen::Map<Eigen::RowVectorXd>(input(self, 2).grad_buffer().ptr(), static_cast<Index>(dout)) +=
          g.colwise().sum();
    }
  });
}

Var add(const Var& a, const Var& b) {
  require_same(a, b, "add");
  Tensor out = a.value();
  auto o = out.data();
  auto bv = b.value().data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] += bv[i];
  return make_result(std::move(out), {a, b}, [](Node& self) {
    if (wants(self, 0)) input(self, 0).accumulate(self.grad);
    if (wants(self, 1)) input(self, 1).accumulate(self.grad);
  });
}

Var sub(const Var& a, const Var& b) {
  require_same(a, b, "sub");
  Tensor out = a.value();
  auto o = out.data();
  auto bv = b.value().data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] -= bv[i];
  return make_result(std::move(out), {a, b}, [](Node& self) {
    if (wants(self, 0)) input(self, 0).accumulate(self.grad);
    if (wants(self, 1)) {
      auto g = input(self, 1).grad_buffer().data();
      auto s = self.grad.data();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= s[i];
    }
  });
}

Var scale(const Var& a, double factor) {
  Tensor out = a.value();
  for (auto& v : out.data()) v *= factor;
  return make_result(std::move(out), {a}, [factor](Node& self) {
    auto g = input(self, 0).grad_buffer().data();
    auto s = self.grad.data();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += factor * s[i];
  });
}

Var add_channel_bias(const Var& x, const Var& v) {
  require_rank(x, 4, "add_channel_bias");
  const auto& s = x.shape();
  const std::size_t n = s[0], c = s[1], plane = s[2] * s[3];
  if (v.shape() != Shape{n, c}) {
    throw ShapeError("add_channel_bias: bias " + shape_str(v.shape()) + " does not match " +
                     shape_str(s));
  }
  Tensor out = x.value();
  for (std::size_t i = 0; i < n * c; ++i) {
    double* p = out.ptr() + i * plane;
    const double b = v.value()[i];
    for (std::size_t j = 0; j < plane; ++j) p[j] += b;
  }
  return make_result(std::move(out), {x, v}, [n, c, plane](Node& self) {
    if (wants(self, 0)) input(self, 0).accumulate(self.grad);
    if (wants(self, 1)) {
      auto& g = input(self, 1).grad_buffer();
      for (std::size_t i = 0; i < n * c; ++i) {
        const double* p = self.grad.ptr() + i * plane;
        g[i] += std::accumulate(p, p + plane, 0.0);
      }
    }
  });
}

namespace {

struct ConvGeometry {
  std::size_t n, cin, h, w, cout, k, ho, wo;
  int stride, pad_lo;
};

void im2col(const double* x, const ConvGeometry& g, double* cols) {
  const std::size_t plane = g.ho * g.wo;
  for (std::size_t c = 0; c < g.cin; ++c) {
    for (std::size_t ki = 0; ki < g.k; ++ki) {
      for (std::size_t kj = 0; kj < g.k; ++kj) {
        double* row = cols + ((c * g.k + ki) * g.k + kj) * plane;
        for (std::size_t oi = 0; oi < g.ho; ++oi) {
          const long ii = static_cast<long>(oi) * g.stride - g.pad_lo + static_cast<long>(ki);
          for (std::size_t oj = 0; oj < g.wo; ++oj) {
            const long jj = static_cast<long>(oj) * g.stride - g.pad_lo + static_cast<long>(kj);
            const bool inside = ii >= 0 && jj >= 0 && ii < static_cast<long>(g.h) &&
                                jj < static_cast<long>(g.w);
            row[oi * g.wo + oj] = inside ? x[(c * g.h + ii) * g.w + jj] : 0.0;
          }
        }
      }
    }
  }
}

void col2im(const double* cols, const ConvGeometry& g, double* dx) {
  const std::size_t plane = g.ho * g.wo;
  for (std::size_t c = 0; c < g.cin; ++c) {
    for (std::size_t ki = 0; ki < g.k; ++ki) {
      for (std::size_t kj = 0; kj < g.k; ++kj) {
        const double* row = cols + ((c * g.k + ki) * g.k + kj) * plane;
        for (std::size_t oi = 0; oi < g.ho; ++oi) {
          const long ii = static_cast<long>(oi) * g.stride - g.pad_lo + static_cast<long>(ki);
          if (ii < 0 || ii >= static_cast<long>(g.h)) continue;
          for (std::size_t oj = 0; oj < g.wo; ++oj) {
            const long jj = static_cast<long>(oj) * g.stride - g.pad_lo + static_cast<long>(kj);
            if (jj < 0 || jj >= static_cast<long>(g.w)) continue;
            dx[(c * g.h + ii) * g.w + jj] += row[oi * g.wo + oj];
          }
        }
      }
    }
  }
}

std::size_t conv_extent(std::size_t in, std::size_t k, int stride, int pad_lo, int pad_hi) {
  const long span = static_cast<long>(in) + pad_lo + pad_hi - static_cast<long>(k);
  if (span < 0 || span % stride != 0) {
    throw ShapeError("conv2d: output extent (" + std::to_string(in) + " + " +
                     std::to_string(pad_lo + pad_hi) + " - " + std::to_string(k) + ")/" +
                     std::to_string(stride) + " + 1 is not integral");
  }
  return static_cast<std::size_t>(span / stride + 1);
}

}  // namespace

Var conv2d_padded(const Var& x, const Var& kernel, const Var& bias, int stride, int pad_lo,
                  int pad_hi) {
  const bool unbatched = x.value().rank() == 3;
  if (!unbatched) require_rank(x, 4, "conv2d");
  require_rank(kernel, 4, "conv2d");
  const auto& ks = kernel.shape();
  if (ks[2] != ks[3] || ks[2] % 2 == 0) {
    throw ShapeError("conv2d: kernel must be square with odd extent, got " + shape_str(ks));
  }
  if (stride < 1 || pad_lo < 0 || pad_hi < 0) {
    throw ShapeError("conv2d: stride must be >= 1 and padding >= 0");
  }
  const auto& xs = x.shape();
  ConvGeometry g{};
  g.n = unbatched ? 1 : xs[0];
  g.cin = xs[unbatched ? 0 : 1];
  g.h = xs[unbatched ? 1 : 2];
  g.w = xs[unbatched ? 2 : 3];
  g.cout = ks[0];
  g.k = ks[2];
  g.stride = stride;
  g.pad_lo = pad_lo;
  if (ks[1] != g.cin) {
    throw ShapeError("conv2d: input " + shape_str(xs) + " has " + std::to_string(g.cin) +
                     " channels but kernel " + shape_str(ks) + " expects " +
                     std::to_string(ks[1]));
  }
  const bool has_bias = static_cast<bool>(bias.node());
  if (has_bias && bias.shape() != Shape{g.cout}) {
    throw ShapeError("conv2d: bias " + shape_str(bias.shape()) + " does not match kernel " +
                     shape_str(ks));
  }
  g.ho = conv_extent(g.h, g.k, stride, pad_lo, pad_hi);
  g.wo = conv_extent(g.w, g.k, stride, pad_lo, pad_hi);

  const std::size_t patch = g.cin * g.k * g.k;
  const std::size_t plane = g.ho * g.wo;
  Shape out_shape = unbatched ? Shape{g.cout, g.ho, g.wo} : Shape{g.n, g.cout, g.ho, g.wo};
  Tensor out(out_shape, 0.0);
  std::vector<double> cols(patch * plane);
  const auto wmat = as_matrix(kernel.value(), g.cout, patch);
  for (std::size_t b = 0; b < g.n; ++b) {
    im2col(x.value().ptr() + b * g.cin * g.h * g.w, g, cols.data());
    MapR y(out.ptr() + b * g.cout * plane, static_cast<Index>(g.cout), static_cast<Index>(plane));
    y.noalias() = wmat * CMapR(cols.data(), static_cast<Index>(patch), static_cast<Index>(plane));
    if (has_bias) {
      y.colwise() += Eigen::Map<const Eigen::VectorXd>(bias.value().ptr(), static_cast<Index>(g.cout));
    }
  }

  return make_result(std::move(out), with_optional({x, kernel}, bias), [g, patch, plane](Node& self) {
    std::vector<double> cols(patch * plane);
    const Tensor& xv = input(self, 0).value;
    const Tensor& kv = input(self, 1).value;
    const std::size_t in_size = g.cin * g.h * g.w;
    for (std::size_t b = 0; b < g.n; ++b) {
      CMapR gy(self.grad.ptr() + b * g.cout * plane, static_cast<Index>(g.cout),
               static_cast<Index>(plane));
      if (wants(self, 1)) {
        im2col(xv.ptr() + b * in_size, g, cols.data());
        as_matrix(input(self, 1).grad_buffer(), g.cout, patch).noalias() +=
            gy * CMapR(cols.data(), static_cast<Index>(patch), static_cast<Index>(plane)).transpose();
      }
      if (wants(self, 0)) {
        MapR dcols(cols.data(), static_cast<Index>(patch), static_cast<Index>(plane));
        dcols.noalias() = as_matrix(kv, g.cout, patch).transpose() * gy;
        col2im(cols.data(), g, input(self, 0).grad_buffer().ptr() + b * in_size);
      }
      if (wants(self, 2)) {
        Eigen::Map<Eigen::VectorXd>(input(self, 2).grad_buffer().ptr(), static_cast<Index>(g.cout)) +=
            gy.rowwise().sum();
      }
    }
  });
}

Var conv2d(const Var& x, const Var& kernel, const Var& bias, int stride, int pad) {
  return conv2d_padded(x, kernel, bias, stride, pad, pad);
}

std::size_t group_count(std::size_t channels) {
  for (std::size_t g = std::min<std::size_t>(32, channels / 2); g > 1; --g) {
    if (channels % g == 0) return g;
  }
  return 1;
}

Var group_norm(const Var& x, const Var& gamma, const Var& beta, std::size_t groups, double eps) {
  require_rank(x, 4, "group_norm");
  const auto& s = x.shape();
  const std::size_t n = s[0], c = s[1], plane = s[2] * s[3];
  if (groups == 0 || c % groups != 0) {
    throw ShapeError("group_norm: " + std::to_string(c) + " channels not divisible into " +
                     std::to_string(groups) + " groups");
  }
  if (gamma.shape() != Shape{c} || beta.shape() != Shape{c}) {
    throw ShapeError("group_norm: affine parameters must be [" + std::to_string(c) + "]");
  }
  const std::size_t per_group = c / groups;
  const std::size_t m = per_group * plane;
  auto xhat = std::make_shared<std::vector<double>>(x.value().numel());
  auto inv_std = std::make_shared<std::vector<double>>(n * groups);
  Tensor out(s, 0.0);
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t gi = 0; gi < groups; ++gi) {
      const std::size_t off = (b * c + gi * per_group) * plane;
      const double* src = x.value().ptr() + off;
      double mean = 0.0;
      for (std::size_t i = 0; i < m; ++i) mean += src[i];
      mean /= static_cast<double>(m);
      double var = 0.0;
      for (std::size_t i = 0; i < m; ++i) var += (src[i] - mean) * (src[i] - mean);
      var /= static_cast<double>(m);
      const double is = 1.0 / std::sqrt(var + eps);
      (*inv_std)[b * groups + gi] = is;
      for (std::size_t i = 0; i < m; ++i) {
        const std::size_t ch = gi * per_group + i / plane;
        const double xh = (src[i] - mean) * is;
        (*xhat)[off + i] = xh;
        out[off + i] = xh * gamma.value()[ch] + beta.value()[ch];
      }
    }
  }
  return make_result(std::move(out), {x, gamma, beta},
                     [n, c, plane, groups, per_group, m, xhat, inv_std](Node& self) {
    const Tensor& gam = input(self, 1).value;
    const double* gy = self.grad.ptr();
    if (wants(self, 1) || wants(self, 2)) {
      auto& dgam = input(self, 1).grad_buffer();
      auto& dbet = input(self, 2).grad_buffer();
      for (std::size_t b = 0; b < n; ++b) {
        for (std::size_t ch = 0; ch < c; ++ch) {
          const std::size_t off = (b * c + ch) * plane;
          double sg = 0.0, sb = 0.0;
          for (std::size_t i = 0; i < plane; ++i) {
            sg += gy[off + i] * (*xhat)[off + i];
            sb += gy[off + i];
          }
          dgam[ch] += sg;
          dbet[ch] += sb;
        }
      }
    }
    if (!wants(self, 0)) return;
    auto& dx = input(self, 0).grad_buffer();
    std::vector<double> dxh(m);
    for (std::size_t b = 0; b < n; ++b) {
      for (std::size_t gi = 0; gi < groups; ++gi) {
        const std::size_t off = (b * c + gi * per_group) * plane;
        double mean_d = 0.0, mean_dx = 0.0;
        for (std::size_t i = 0; i < m; ++i) {
          const std::size_t ch = gi * per_group + i / plane;
          dxh[i] = gy[off + i] * gam[ch];
          mean_d += dxh[i];
          mean_dx += dxh[i] * (*xhat)[off + i];
        }
        mean_d /= static_cast<double>(m);
        mean_dx /= static_cast<double>(m);
        const double is = (*inv_std)[b * groups + gi];
        for (std::size_t i = 0; i < m; ++i) {
          dx[off + i] += is * (dxh[i] - mean_d - (*xhat)[off + i] * mean_dx);
        }
      }
    }
  });
}

Var silu(const Var& x) {
  Tensor out = x.value();
  for (auto& v : out.data()) v = v / (1.0 + std::exp(-v));
  return make_result(std::move(out), {x}, [](Node& self) {
    const Tensor& xv = input(self, 0).value;
    auto& g = input(self, 0).grad_buffer();
    for (std::size_t i = 0; i < g.numel(); ++i) {
      const double sig = 1.0 / (1.0 + std::exp(-xv[i]));
      g[i] += self.grad[i] * (sig + xv[i] * sig * (1.0 - sig));
    }
  });
}

Tensor softmax_rows(const Tensor& m) {
  if (m.rank() != 2) throw ShapeError("softmax_rows: expected a matrix, got " + shape_str(m.shape()));
  const std::size_t rows = m.dim(0), cols = m.dim(1);
  Tensor out(m.shape(), 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* src = m.ptr() + r * cols;
    double* dst = out.ptr() + r * cols;
    const double mx = *std::max_element(src, src + cols);
    double total = 0.0;
    for (std::size_t j = 0; j < cols; ++j) {
      dst[j] = std::exp(src[j] - mx);
      total += dst[j];
    }
    for (std::size_t j = 0; j < cols; ++j) dst[j] /= total;
  }
  return out;
}

Var softmax_rows(const Var& m) {
  Tensor out = softmax_rows(m.value());
  const std::size_t rows = out.dim(0), cols = out.dim(1);
  return make_result(std::move(out), {m}, [rows, cols](Node& self) {
    auto& g = input(self, 0).grad_buffer();
    for (std::size_t r = 0; r < rows; ++r) {
      const double* y = self.value.ptr() + r * cols;
      const double* gy = self.grad.ptr() + r * cols;
      double dot = 0.0;
      for (std::size_t j = 0; j < cols; ++j) dot += gy[j] * y[j];
      for (std::size_t j = 0; j < cols; ++j) g[r * cols + j] += y[j] * (gy[j] - dot);
    }
  });
}

Var concat_channels(const Var& a, const Var& b) {
  require_rank(a, 4, "concat_channels");
  require_rank(b, 4, "concat_channels");
  const auto& sa = a.shape();
  const auto& sb = b.shape();
  if (sa[0] != sb[0] || sa[2] != sb[2] || sa[3] != sb[3]) {
    throw ShapeError("concat_channels: " + shape_str(sa) + " and " + shape_str(sb) +
                     " differ outside the channel axis");
  }
  const std::size_t n = sa[0], plane = sa[2] * sa[3];
  const std::size_t ca = sa[1] * plane, cb = sb[1] * plane;
  Tensor out({n, sa[1] + sb[1], sa[2], sa[3]});
  for (std::size_t i = 0; i < n; ++i) {
    std::copy_n(a.value().ptr() + i * ca, ca, out.ptr() + i * (ca + cb));
    std::copy_n(b.value().ptr() + i * cb, cb, out.ptr() + i * (ca + cb) + ca);
  }
  return make_result(std::move(out), {a, b}, [n, ca, cb](Node& self) {
    for (std::size_t i = 0; i < n; ++i) {
      const double* g = self.grad.ptr() + i * (ca + cb);
      if (wants(self, 0)) {
        double* d = input(self, 0).grad_buffer().ptr() + i * ca;
        for (std::size_t j = 0; j < ca; ++j) d[j] += g[j];
      }
      if (wants(self, 1)) {
        double* d = input(self, 1).grad_buffer().ptr() + i * cb;
        for (std::size_t j = 0; j < cb; ++j) d[j] += g[ca + j];
      }
    }
  });
}

Var upsample_nearest2x(const Var& x) {
  require_rank(x, 4, "upsample_nearest2x");
  const auto& s = x.shape();
  const std::size_t maps = s[0] * s[1], h = s[2], w = s[3];
  Tensor out({s[0], s[1], 2 * h, 2 * w});
  for (std::size_t m = 0; m < maps; ++m) {
    const double* src = x.value().ptr() + m * h * w;
    double* dst = out.ptr() + m * 4 * h * w;
    for (std::size_t i = 0; i < 2 * h; ++i) {
      for (std::size_t j = 0; j < 2 * w; ++j) dst[i * 2 * w + j] = src[(i / 2) * w + j / 2];
    }
  }
  return make_result(std::move(out), {x}, [maps, h, w](Node& self) {
    auto& g = input(self, 0).grad_buffer();
    for (std::size_t m = 0; m < maps; ++m) {
      const double* src = self.grad.ptr() + m * 4 * h * w;
      double* dst = g.ptr() + m * h * w;
      for (std::size_t i = 0; i < 2 * h; ++i) {
        for (std::size_t j = 0; j < 2 * w; ++j) dst[(i / 2) * w + j / 2] += src[i * 2 * w + j];
      }
    }
  });
}

Var to_tokens(const Var& x) {
  require_rank(x, 4, "to_tokens");
  const auto& s = x.shape();
  const std::size_t n = s[0], c = s[1], l = s[2] * s[3];
  Tensor out({n * l, c});
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const double* src = x.value().ptr() + (b * c + ch) * l;
      for (std::size_t p = 0; p < l; ++p) out[(b * l + p) * c + ch] = src[p];
    }
  }
  return make_result(std::move(out), {x}, [n, c, l](Node& self) {
    auto& g = input(self, 0).grad_buffer();
    for (std::size_t b = 0; b < n; ++b) {
      for (std::size_t ch = 0; ch < c; ++ch) {
        double* dst = g.ptr() + (b * c + ch) * l;
        for (std::size_t p = 0; p < l; ++p) dst[p] += self.grad[(b * l + p) * c + ch];
      }
    }
  });
}

Var from_tokens(const Var& t, const Shape& image_shape) {
  require_rank(t, 2, "from_tokens");
  if (image_shape.size() != 4) throw ShapeError("from_tokens: target must be rank 4");
  const std::size_t n = image_shape[0], c = image_shape[1], l = image_shape[2] * image_shape[3];
  if (t.shape() != Shape{n * l, c}) {
    throw ShapeError("from_tokens: " + shape_str(t.shape()) + " cannot form " +
                     shape_str(image_shape));
  }
  Tensor out(image_shape, 0.0);
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      double* dst = out.ptr() + (b * c + ch) * l;
      for (std::size_t p = 0; p < l; ++p) dst[p] = t.value()[(b * l + p) * c + ch];
    }
  }
  return make_result(std::move(out), {t}, [n, c, l](Node& self) {
    auto& g = input(self, 0).grad_buffer();
    for (std::size_t b = 0; b < n; ++b) {
      for (std::size_t ch = 0; ch < c; ++ch) {
        const double* src = self.grad.ptr() + (b * c + ch) * l;
        for (std::size_t p = 0; p < l; ++p) g[(b * l + p) * c + ch] += src[p];
      }
    }
  });
}

Var attention(const Var& q, const Var& k, const Var& v, std::size_t batch, std::size_t heads) {
  require_rank(q, 2, "attention");
  require_rank(k, 2, "attention");
  require_same(k, v, "attention");
  const std::size_t d = q.shape()[1];
  if (k.shape()[1] != d) {
    throw ShapeError("attention: query width " + std::to_string(d) + " differs from key width " +
                     std::to_string(k.shape()[1]));
  }
  if (batch == 0 || q.shape()[0] % batch != 0 || k.shape()[0] % batch != 0) {
    throw ShapeError("attention: rows not divisible by batch size " + std::to_string(batch));
  }
  if (heads == 0 || d % heads != 0) {
    throw ShapeError("attention: width " + std::to_string(d) + " not divisible by " +
                     std::to_string(heads) + " heads");
  }
  const std::size_t l = q.shape()[0] / batch, s = k.shape()[0] / batch, dk = d / heads;
  const double inv_scale = 1.0 / std::sqrt(static_cast<double>(dk));
  const auto L = static_cast<Index>(l), S = static_cast<Index>(s), DK = static_cast<Index>(dk);

  auto probs = std::make_shared<std::vector<MatR>>(batch * heads);
  Tensor out({batch * l, d});
  const auto Q = as_matrix(q.value(), batch * l, d);
  const auto K = as_matrix(k.value(), batch * s, d);
  const auto V = as_matrix(v.value(), batch * s, d);
  auto O = as_matrix(out, batch * l, d);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t h = 0; h < heads; ++h) {
      const auto r0 = static_cast<Index>(b * l), k0 = static_cast<Index>(b * s);
      const auto c0 = static_cast<Index>(h * dk);
      MatR logits = Q.block(r0, c0, L, DK) * K.block(k0, c0, S, DK).transpose() * inv_scale;
      for (Index r = 0; r < L; ++r) {
        const double mx = logits.row(r).maxCoeff();
        logits.row(r) = (logits.row(r).array() - mx).exp().matrix();
        logits.row(r) /= logits.row(r).sum();
      }
      O.block(r0, c0, L, DK).noalias() = logits * V.block(k0, c0, S, DK);
      (*probs)[b * heads + h] = std::move(logits);
    }
  }
  return make_result(std::move(out), {q, k, v},
                     [batch, heads, l, s, d, dk, inv_scale, probs, L, S, DK](Node& self) {
    const auto Qv = as_matrix(input(self, 0).value, batch * l, d);
    const auto Kv = as_matrix(input(self, 1).value, batch * s, d);
    const auto Vv = as_matrix(input(self, 2).value, batch * s, d);
    const auto G = as_matrix(self.grad, batch * l, d);
    const bool gq = wants(self, 0), gk = wants(self, 1), gv = wants(self, 2);
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t h = 0; h < heads; ++h) {
        const auto r0 = static_cast<Index>(b * l), k0 = static_cast<Index>(b * s);
        const auto c0 = static_cast<Index>(h * dk);
        const MatR& A = (*probs)[b * heads + h];
        const auto gout = G.block(r0, c0, L, DK);
        if (gv) {
          as_matrix(input(self, 2).grad_buffer(), batch * s, d).block(k0, c0, S, DK).noalias() +=
              A.transpose() * gout;
        }
        if (!gq && !gk) continue;
        MatR dA = gout * Vv.block(k0, c0, S, DK).transpose();
        MatR dlogits(L, S);
        for (Index r = 0; r < L; ++r) {
          const double dot = dA.row(r).dot(A.row(r));
          dlogits.row(r) = A.row(r).array() * (dA.row(r).array() - dot);
        }
        dlogits *= inv_scale;
        if (gq) {
          as_matrix(input(self, 0).grad_buffer(), batch * l, d).block(r0, c0, L, DK).noalias() +=
              dlogits * Kv.block(k0, c0, S, DK);
        }
        if (gk) {
          as_matrix(input(self, 1).grad_buffer(), batch * s, d).block(k0, c0, S, DK).noalias() +=
              dlogits.transpose() * Qv.block(r0, c0, L, DK);
        }
      }
    }
  });
}

Var token_mean(const Var& tokens, std::size_t batch) {
  require_rank(tokens, 2, "token_mean");
  if (batch == 0 || tokens.shape()[0] % batch != 0) {
    throw ShapeError("token_mean: " + shape_str(tokens.shape()) + " not divisible into " +
                     std::to_string(batch) + " items");
  }
  const std::size_t s = tokens.shape()[0] / batch, d = tokens.shape()[1];
  Tensor out({batch, d});
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t r = 0; r < s; ++r) {
      for (std::size_t j = 0; j < d; ++j) out[b * d + j] += tokens.value()[(b * s + r) * d + j];
    }
    for (std::size_t j = 0; j < d; ++j) out[b * d + j] /= static_cast<double>(s);
  }
  return make_result(std::move(out), {tokens}, [batch, s, d](Node& self) {
    auto& g = input(self, 0).grad_buffer();
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t r = 0; r < s; ++r) {
        for (std::size_t j = 0; j < d; ++j) {
          g[(b * s + r) * d + j] += self.grad[b * d + j] / static_cast<double>(s);
        }
      }
    }
  });
}

Var broadcast_rows(const Var& v, std::size_t repeats) {
  require_rank(v, 2, "broadcast_rows");
  const std::size_t n = v.shape()[0], d = v.shape()[1];
  Tensor out({n * repeats, d});
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t r = 0; r < repeats; ++r) {
      std::copy_n(v.value().ptr() + b * d, d, out.ptr() + (b * repeats + r) * d);
    }
  }
  return make_result(std::move(out), {v}, [n, d, repeats](Node& self) {
    auto& g = input(self, 0).grad_buffer();
    for (std::size_t b = 0; b < n; ++b) {
      for (std::size_t r = 0; r < repeats; ++r) {
        for (std::size_t j = 0; j < d; ++j) g[b * d + j] += self.grad[(b * repeats + r) * d + j];
      }
    }
  });
}

Var concat_cols(const Var& a, const Var& b) {
  require_rank(a, 2, "concat_cols");
  require_rank(b, 2, "concat_cols");
  if (a.shape()[0] != b.shape()[0]) {
    throw ShapeError("concat_cols: row counts of " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()) + " differ");
  }
  const std::size_t n = a.shape()[0], da = a.shape()[1], db = b.shape()[1];
  Tensor out({n, da + db});
  for (std::size_t r = 0; r < n; ++r) {
    std::copy_n(a.value().ptr() + r * da, da, out.ptr() + r * (da + db));
    std::copy_n(b.value().ptr() + r * db, db, out.ptr() + r * (da + db) + da);
  }
  return make_result(std::move(out), {a, b}, [n, da, db](Node& self) {
    for (std::size_t r = 0; r < n; ++r) {
      const double* g = self.grad.ptr() + r * (da + db);
      if (wants(self, 0)) {
        double* d = input(self, 0).grad_buffer().ptr() + r * da;
        for (std::size_t j = 0; j < da; ++j) d[j] += g[j];
      }
      if (wants(self, 1)) {
        double* d = input(self, 1).grad_buffer().ptr() + r * db;
        for (std::size_t j = 0; j < db; ++j) d[j] += g[da + j];
      }
    }
  });
}

Var mse_loss(const Var& a, const Var& b) {
  require_same(a, b, "mse_loss");
  const std::size_t n = a.value().numel();
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double diff = a.value()[i] - b.value()[i];
    total += diff * diff;
  }
  Tensor out({1}, total / static_cast<double>(n));
  return make_result(std::move(out), {a, b}, [n](Node& self) {
    const double g = self.grad[0] * 2.0 / static_cast<double>(n);
    const Tensor& av = input(self, 0).value;
    const Tensor& bv = input(self, 1).value;
    if (wants(self, 0)) {
      auto& d = input(self, 0).grad_buffer();
      for (std::size_t i = 0; i < n; ++i) d[i] += g * (av[i] - bv[i]);
    }
    if (wants(self, 1)) {
      auto& d = input(self, 1).grad_buffer();
      for (std::size_t i = 0; i < n; ++i) d[i] -= g * (av[i] - bv[i]);
    }
  });
}

Var sum(const Var& x) {
  double total = 0.0;
  for (double v : x.value().data()) total += v;
  return make_result(Tensor({1}, total), {x}, [](Node& self) {
    auto& d = input(self, 0).grad_buffer();
    for (auto& v : d.data()) v += self.grad[0];
  });
}

}  // namespace neurodiff::nn
