#include "mdnet/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>

namespace mdnet::nn {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;
using detail::Buffer;

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + " tensor, got " +
                     to_string(t.shape()));
  }
}

struct ConvGeometry {
  std::size_t n, c, h, w;
  std::size_t f, kh, kw;
  std::size_t stride, padding;
  std::size_t oh, ow;

  std::size_t col_rows() const { return c * kh * kw; }
  std::size_t col_cols() const { return oh * ow; }
};

void im2col(const double* image, const ConvGeometry& g, double* col) {
  const std::size_t cols = g.col_cols();
  const auto pad = static_cast<std::ptrdiff_t>(g.padding);
  for (std::size_t c = 0; c < g.c; ++c) {
    const double* plane = image + c * g.h * g.w;
    for (std::size_t ky = 0; ky < g.kh; ++ky) {
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        double* row = col + ((c * g.kh + ky) * g.kw + kx) * cols;
        for (std::size_t oy = 0; oy < g.oh; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - pad;
          double* dst = row + oy * g.ow;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) {
            std::fill(dst, dst + g.ow, 0.0);
            continue;
          }
          const double* src = plane + static_cast<std::size_t>(iy) * g.w;
          for (std::size_t ox = 0; ox < g.ow; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) - pad;
            dst[ox] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.w))
                          ? 0.0
                          : src[static_cast<std::size_t>(ix)];
          }
        }
      }
    }
  }
}

void col2im_add(const double* col, const ConvGeometry& g, double* image) {
  const std::size_t cols = g.col_cols();
  const auto pad = static_cast<std::ptrdiff_t>(g.padding);
  for (std::size_t c = 0; c < g.c; ++c) {
    double* plane = image + c * g.h * g.w;
    for (std::size_t ky = 0; ky < g.kh; ++ky) {
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        const double* row = col + ((c * g.kh + ky) * g.kw + kx) * cols;
        for (std::size_t oy = 0; oy < g.oh; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - pad;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
          double* dst = plane + static_cast<std::size_t>(iy) * g.w;
          const double* src = row + oy * g.ow;
          for (std::size_t ox = 0; ox < g.ow; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) - pad;
            if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(g.w)) {
              dst[static_cast<std::size_t>(ix)] += src[ox];
            }
          }
        }
      }
    }
  }
}

}  // namespace

std::size_t conv_output_size(std::size_t in, std::size_t kernel, std::size_t stride,
                             std::size_t padding) {
  if (stride == 0) throw ShapeError("conv2d: stride must be >= 1");
  if (in + 2 * padding < kernel) {
    throw ShapeError("conv2d: kernel " + std::to_string(kernel) + " larger than padded input " +
                     std::to_string(in + 2 * padding));
  }
  return (in + 2 * padding - kernel) / stride + 1;
}

Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias, std::size_t stride,
              std::size_t padding) {
  require_rank(input, 4, "conv2d input");
  require_rank(kernel, 4, "conv2d kernel");
  if (kernel.dim(1) != input.dim(1)) {
    throw ShapeError("conv2d: kernel " + to_string(kernel.shape()) + " does not match input " +
                     to_string(input.shape()) + " (channel count)");
  }
  if (bias.rank() != 1 || bias.dim(0) != kernel.dim(0)) {
    throw ShapeError("conv2d: bias " + to_string(bias.shape()) + " does not match kernel " +
                     to_string(kernel.shape()));
  }

  ConvGeometry g{};
  g.n = input.dim(0);
  g.c = input.dim(1);
  g.h = input.dim(2);
  g.w = input.dim(3);
  g.f = kernel.dim(0);
  g.kh = kernel.dim(2);
  g.kw = kernel.dim(3);
  g.stride = stride;
  g.padding = padding;
  g.oh = conv_output_size(g.h, g.kh, stride, padding);
  g.ow = conv_output_size(g.w, g.kw, stride, padding);

  const std::size_t in_plane = g.c * g.h * g.w;
  const std::size_t out_plane = g.f * g.oh * g.ow;
  std::vector<double> out(g.n * out_plane);
  Buffer col(g.col_rows() * g.col_cols());

  ConstMapMat w(kernel.values().data(), static_cast<Eigen::Index>(g.f),
                static_cast<Eigen::Index>(g.col_rows()));
  Eigen::Map<const Eigen::VectorXd> b(bias.values().data(), static_cast<Eigen::Index>(g.f));
  for (std::size_t n = 0; n < g.n; ++n) {
    im2col(input.values().data() + n * in_plane, g, col.data());
    ConstMapMat cm(col.data(), static_cast<Eigen::Index>(g.col_rows()),
                   static_cast<Eigen::Index>(g.col_cols()));
    MapMat om(out.data() + n * out_plane, static_cast<Eigen::Index>(g.f),
              static_cast<Eigen::Index>(g.col_cols()));
    om.noalias() = w * cm;
    om.colwise() += b;
  }

  return Tensor::from_op(
      {g.n, g.f, g.oh, g.ow}, std::move(out), {input, kernel, bias},
      [input, kernel, bias, g, in_plane, out_plane](std::span<const double> grad_out) {
        const bool want_in = input.requires_grad();
        const bool want_w = kernel.requires_grad();
        const bool want_b = bias.requires_grad();
        Buffer col(g.col_rows() * g.col_cols());
        Buffer dcol(want_in ? col.size() : 0);
        std::vector<double> din(want_in ? g.n * in_plane : 0, 0.0);
        RowMat dw = RowMat::Zero(static_cast<Eigen::Index>(g.f),
                                 static_cast<Eigen::Index>(g.col_rows()));
        Eigen::VectorXd db = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(g.f));
        ConstMapMat w(kernel.values().data(), static_cast<Eigen::Index>(g.f),
                      static_cast<Eigen::Index>(g.col_rows()));

        for (std::size_t n = 0; n < g.n; ++n) {
          ConstMapMat go(grad_out.data() + n * out_plane, static_cast<Eigen::Index>(g.f),
                         static_cast<Eigen::Index>(g.col_cols()));
          if (want_b) db += go.rowwise().sum();
          if (want_w) {
            im2col(input.values().data() + n * in_plane, g, col.data());
            ConstMapMat cm(col.data(), static_cast<Eigen::Index>(g.col_rows()),
                           static_cast<Eigen::Index>(g.col_cols()));
            dw.noalias() += go * cm.transpose();
          }
          if (want_in) {
            MapMat dc(dcol.data(), static_cast<Eigen::Index>(g.col_rows()),
                      static_cast<Eigen::Index>(g.col_cols()));
            dc.noalias() = w.transpose() * go;
            col2im_add(dcol.data(), g, din.data() + n * in_plane);
          }
        }
        if (want_in) input.accumulate_grad(din);
        if (want_w) kernel.accumulate_grad(std::span<const double>(dw.data(), dw.size()));
        if (want_b) bias.accumulate_grad(std::span<const double>(db.data(), db.size()));
      });
}

BatchNormState BatchNormState::identity(std::size_t channels) {
  return {Tensor::zeros({channels}), Tensor::filled({channels}, 1.0)};
}

Tensor batch_norm(const Tensor& input, const Tensor& gamma, const Tensor& beta, Mode mode,
                  BatchNormState& state) {
  require_rank(input, 4, "batch_norm input");
  const std::size_t n = input.dim(0), c = input.dim(1), hw = input.dim(2) * input.dim(3);
  auto check_vec = [&](const Tensor& t, const char* what) {
    if (t.rank() != 1 || t.dim(0) != c) {
      throw ShapeError(std::string("batch_norm: ") + what + " " + to_string(t.shape()) +
                       " does not match input " + to_string(input.shape()));
    }
  };
  check_vec(gamma, "gamma");
  check_vec(beta, "beta");
  check_vec(state.running_mean, "running_mean");
  check_vec(state.running_var, "running_var");

  const std::size_t m = n * hw;
  if (mode == Mode::Train && m < 2) {
    throw ShapeError("batch_norm: train mode needs at least 2 values per channel, input is " +
                     to_string(input.shape()));
  }

  const auto x = input.values();
  std::vector<double> mean(c), invstd(c);
  if (mode == Mode::Train) {
    auto rm = state.running_mean.mutable_values();
    auto rv = state.running_var.mutable_values();
    for (std::size_t ch = 0; ch < c; ++ch) {
      double sum = 0.0;
      for (std::size_t b = 0; b < n; ++b) {
        const double* p = x.data() + (b * c + ch) * hw;
        for (std::size_t i = 0; i < hw; ++i) sum += p[i];
      }
      const double mu = sum / static_cast<double>(m);
      double sq = 0.0;
      for (std::size_t b = 0; b < n; ++b) {
        const double* p = x.data() + (b * c + ch) * hw;
        for (std::size_t i = 0; i < hw; ++i) sq += (p[i] - mu) * (p[i] - mu);
      }
      const double var = sq / static_cast<double>(m);
      mean[ch] = mu;
      invstd[ch] = 1.0 / std::sqrt(var + kBatchNormEpsilon);
      rm[ch] = (1.0 - kBatchNormMomentum) * rm[ch] + kBatchNormMomentum * mu;
      rv[ch] = (1.0 - kBatchNormMomentum) * rv[ch] +
               kBatchNormMomentum * sq / static_cast<double>(m - 1);
    }
  } else {
    const auto rm = state.running_mean.values();
    const auto rv = state.running_var.values();
    for (std::size_t ch = 0; ch < c; ++ch) {
      mean[ch] = rm[ch];
      invstd[ch] = 1.0 / std::sqrt(rv[ch] + kBatchNormEpsilon);
    }
  }

  std::vector<double> xhat(x.size()), out(x.size());
  const auto gv = gamma.values(), bv = beta.values();
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const std::size_t off = (b * c + ch) * hw;
      for (std::size_t i = 0; i < hw; ++i) {
        xhat[off + i] = (x[off + i] - mean[ch]) * invstd[ch];
        out[off + i] = gv[ch] * xhat[off + i] + bv[ch];
      }
    }
  }

  return Tensor::from_op(
      input.shape(), std::move(out), {input, gamma, beta},
      [input, gamma, beta, mode, n, c, hw, m, xhat = std::move(xhat),
       invstd = std::move(invstd)](std::span<const double> dy) {
        std::vector<double> dgamma(c, 0.0), dbeta(c, 0.0);
        for (std::size_t b = 0; b < n; ++b) {
          for (std::size_t ch = 0; ch < c; ++ch) {
            const std::size_t off = (b * c + ch) * hw;
            for (std::size_t i = 0; i < hw; ++i) {
              dbeta[ch] += dy[off + i];
              dgamma[ch] += dy[off + i] * xhat[off + i];
            }
          }
        }
        if (input.requires_grad()) {
          const auto gv = gamma.values();
          std::vector<double> dx(dy.size());
          const double md = static_cast<double>(m);
          for (std::size_t b = 0; b < n; ++b) {
            for (std::size_t ch = 0; ch < c; ++ch) {
              const std::size_t off = (b * c + ch) * hw;
              const double scale = gv[ch] * invstd[ch];
              for (std::size_t i = 0; i < hw; ++i) {
                if (mode == Mode::Train) {
                  dx[off + i] = scale / md *
                                (md * dy[off + i] - dbeta[ch] - xhat[off + i] * dgamma[ch]);
                } else {
                  dx[off + i] = scale * dy[off + i];
                }
              }
            }
          }
          input.accumulate_grad(dx);
        }
        gamma.accumulate_grad(dgamma);
        beta.accumulate_grad(dbeta);
      });
}

Tensor relu(const Tensor& input) {
  const auto x = input.values();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] > 0.0 ? x[i] : 0.0;
  return Tensor::from_op(input.shape(), std::move(out), {input},
                         [input](std::span<const double> dy) {
                           const auto x = input.values();
                           std::vector<double> dx(dy.size());
                           for (std::size_t i = 0; i < dy.size(); ++i) {
                             dx[i] = x[i] > 0.0 ? dy[i] : 0.0;
                           }
                           input.accumulate_grad(dx);
                         });
}

Tensor max_pool_2x2(const Tensor& input) {
  require_rank(input, 4, "max_pool_2x2");
  const std::size_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  if (h % 2 != 0 || w % 2 != 0) {
    throw ShapeError("max_pool_2x2: spatial dims must be even, got " + to_string(input.shape()));
  }
  const std::size_t oh = h / 2, ow = w / 2;
  const auto x = input.values();
  std::vector<double> out(n * c * oh * ow);
  std::vector<std::size_t> argmax(out.size());
  for (std::size_t plane = 0; plane < n * c; ++plane) {
    const std::size_t in_off = plane * h * w;
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox) {
        std::size_t best = in_off + (2 * oy) * w + 2 * ox;
        const std::size_t cand[3] = {best + 1, best + w, best + w + 1};
        for (std::size_t k : cand) {
          if (x[k] > x[best]) best = k;
        }
        const std::size_t o = (plane * oh + oy) * ow + ox;
        out[o] = x[best];
        argmax[o] = best;
      }
    }
  }
  return Tensor::from_op({n, c, oh, ow}, std::move(out), {input},
                         [input, argmax = std::move(argmax)](std::span<const double> dy) {
                           std::vector<double> dx(input.numel(), 0.0);
                           for (std::size_t o = 0; o < dy.size(); ++o) dx[argmax[o]] += dy[o];
                           input.accumulate_grad(dx);
                         });
}

Tensor softmax_channel(const Tensor& input) {
  require_rank(input, 4, "softmax_channel");
  const std::size_t n = input.dim(0), c = input.dim(1), hw = input.dim(2) * input.dim(3);
  const auto x = input.values();
  std::vector<double> out(x.size());
  for (std::size_t b = 0; b < n; ++b) {
    const std::size_t base = b * c * hw;
    for (std::size_t i = 0; i < hw; ++i) {
      double mx = x[base + i];
      for (std::size_t ch = 1; ch < c; ++ch) mx = std::max(mx, x[base + ch * hw + i]);
      double sum = 0.0;
      for (std::size_t ch = 0; ch < c; ++ch) {
        const double e = std::exp(x[base + ch * hw + i] - mx);
        out[base + ch * hw + i] = e;
        sum += e;
      }
      for (std::size_t ch = 0; ch < c; ++ch) out[base + ch * hw + i] /= sum;
    }
  }
  std::vector<double> y = out;
  return Tensor::from_op(input.shape(), std::move(out), {input},
                         [input, y = std::move(y), n, c, hw](std::span<const double> dy) {
                           std::vector<double> dx(dy.size());
                           for (std::size_t b = 0; b < n; ++b) {
                             const std::size_t base = b * c * hw;
                             for (std::size_t i = 0; i < hw; ++i) {
                               double dot = 0.0;
                               for (std::size_t ch = 0; ch < c; ++ch) {
                                 const std::size_t k = base + ch * hw + i;
                                 dot += dy[k] * y[k];
                               }
                               for (std::size_t ch = 0; ch < c; ++ch) {
                                 const std::size_t k = base + ch * hw + i;
                                 dx[k] = y[k] * (dy[k] - dot);
                               }
                             }
                           }
                           input.accumulate_grad(dx);
                         });
}

double upsample_source_coord(double output_coord, std::size_t factor) {
  return (output_coord + 0.5) / static_cast<double>(factor) - 0.5;
}

BilinearTap bilinear_tap(double source_coord, std::size_t size) {
  const double hi_limit = static_cast<double>(size - 1);
  const double s = std::clamp(source_coord, 0.0, hi_limit);
  const auto lo = static_cast<std::size_t>(std::floor(s));
  const std::size_t hi = std::min(lo + 1, size - 1);
  return {lo, hi, s - static_cast<double>(lo)};
}

Tensor bilinear_upsample(const Tensor& input, std::size_t factor) {
  require_rank(input, 4, "bilinear_upsample");
  if (factor == 0) throw ShapeError("bilinear_upsample: factor must be >= 1");
  const std::size_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  const std::size_t oh = h * factor, ow = w * factor;
  std::vector<BilinearTap> ytap(oh), xtap(ow);
  for (std::size_t i = 0; i < oh; ++i) {
    ytap[i] = bilinear_tap(upsample_source_coord(static_cast<double>(i), factor), h);
  }
  for (std::size_t i = 0; i < ow; ++i) {
    xtap[i] = bilinear_tap(upsample_source_coord(static_cast<double>(i), factor), w);
  }

  const auto x = input.values();
  std::vector<double> out(n * c * oh * ow);
  for (std::size_t plane = 0; plane < n * c; ++plane) {
    const double* src = x.data() + plane * h * w;
    double* dst = out.data() + plane * oh * ow;
    for (std::size_t oy = 0; oy < oh; ++oy) {
      const auto& ty = ytap[oy];
      for (std::size_t ox = 0; ox < ow; ++ox) {
        dst[oy * ow + ox] = bilinear_sample(src, w, ty, xtap[ox]);
      }
    }
  }
  return Tensor::from_op(
      {n, c, oh, ow}, std::move(out), {input},
      [input, ytap = std::move(ytap), xtap = std::move(xtap), n, c, h, w, oh,
       ow](std::span<const double> dy) {
        std::vector<double> dx(input.numel(), 0.0);
        for (std::size_t plane = 0; plane < n * c; ++plane) {
          double* dst = dx.data() + plane * h * w;
          const double* g = dy.data() + plane * oh * ow;
          for (std::size_t oy = 0; oy < oh; ++oy) {
            const auto& ty = ytap[oy];
            for (std::size_t ox = 0; ox < ow; ++ox) {
              const auto& tx = xtap[ox];
              const double v = g[oy * ow + ox];
              dst[ty.lo * w + tx.lo] += v * (1.0 - ty.frac) * (1.0 - tx.frac);
              dst[ty.lo * w + tx.hi] += v * (1.0 - ty.frac) * tx.frac;
              dst[ty.hi * w + tx.lo] += v * ty.frac * (1.0 - tx.frac);
              dst[ty.hi * w + tx.hi] += v * ty.frac * tx.frac;
            }
          }
        }
        input.accumulate_grad(dx);
      });
}

Tensor crop(const Tensor& input, std::size_t top, std::size_t left, std::size_t height,
            std::size_t width) {
  require_rank(input, 4, "crop");
  const std::size_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  if (height == 0 || width == 0 || top + height > h || left + width > w) {
    throw ShapeError("crop: window out of range for " + to_string(input.shape()));
  }
  const auto x = input.values();
  std::vector<double> out(n * c * height * width);
  for (std::size_t plane = 0; plane < n * c; ++plane) {
    for (std::size_t y = 0; y < height; ++y) {
      const double* src = x.data() + plane * h * w + (top + y) * w + left;
      std::copy(src, src + width, out.data() + (plane * height + y) * width);
    }
  }
  return Tensor::from_op({n, c, height, width}, std::move(out), {input},
                         [input, n, c, h, w, top, left, height, width](std::span<const double> dy) {
                           std::vector<double> dx(input.numel(), 0.0);
                           for (std::size_t plane = 0; plane < n * c; ++plane) {
                             for (std::size_t y = 0; y < height; ++y) {
                               const double* src = dy.data() + (plane * height + y) * width;
                               double* dst = dx.data() + plane * h * w + (top + y) * w + left;
                               for (std::size_t x0 = 0; x0 < width; ++x0) dst[x0] += src[x0];
                             }
                           }
                           input.accumulate_grad(dx);
                         });
}

Tensor l2_normalize_channels(const Tensor& input) {
  require_rank(input, 4, "l2_normalize_channels");
  const std::size_t n = input.dim(0), c = input.dim(1), hw = input.dim(2) * input.dim(3);
  const auto x = input.values();
  std::vector<double> out(x.size()), norms(n * hw);
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t i = 0; i < hw; ++i) {
      double sq = 0.0;
      for (std::size_t ch = 0; ch < c; ++ch) {
        const double v = x[(b * c + ch) * hw + i];
        sq += v * v;
      }
      const double norm = std::sqrt(sq);
      if (!(norm > 0.0)) throw std::domain_error("l2_normalize_channels: zero descriptor");
      norms[b * hw + i] = norm;
      for (std::size_t ch = 0; ch < c; ++ch) {
        out[(b * c + ch) * hw + i] = x[(b * c + ch) * hw + i] / norm;
      }
    }
  }
  std::vector<double> y = out;
  return Tensor::from_op(
      input.shape(), std::move(out), {input},
      [input, y = std::move(y), norms = std::move(norms), n, c, hw](std::span<const double> dy) {
        std::vector<double> dx(dy.size());
        for (std::size_t b = 0; b < n; ++b) {
          for (std::size_t i = 0; i < hw; ++i) {
            double dot = 0.0;
            for (std::size_t ch = 0; ch < c; ++ch) {
              const std::size_t k = (b * c + ch) * hw + i;
              dot += y[k] * dy[k];
            }
            for (std::size_t ch = 0; ch < c; ++ch) {
              const std::size_t k = (b * c + ch) * hw + i;
              dx[k] = (dy[k] - y[k] * dot) / norms[b * hw + i];
            }
          }
        }
        input.accumulate_grad(dx);
      });
}

Tensor weighted_sum(const Tensor& a, double a_weight, const Tensor& b, double b_weight) {
  if (a.shape() != b.shape()) {
    throw ShapeError("weighted_sum: shapes " + to_string(a.shape()) + " and " +
                     to_string(b.shape()) + " differ");
  }
  const auto av = a.values(), bv = b.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = a_weight * av[i] + b_weight * bv[i];
  return Tensor::from_op(a.shape(), std::move(out), {a, b},
                         [a, b, a_weight, b_weight](std::span<const double> dy) {
                           std::vector<double> g(dy.size());
                           if (a.requires_grad()) {
                             for (std::size_t i = 0; i < dy.size(); ++i) g[i] = a_weight * dy[i];
                             a.accumulate_grad(g);
                           }
                           if (b.requires_grad()) {
                             for (std::size_t i = 0; i < dy.size(); ++i) g[i] = b_weight * dy[i];
                             b.accumulate_grad(g);
                           }
                         });
}

Tensor concat_batch(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_batch: no tensors");
  Shape tail(parts.front().shape().begin() + 1, parts.front().shape().end());
  std::size_t total = 0;
  std::vector<double> out;
  for (const auto& p : parts) {
    Shape t(p.shape().begin() + 1, p.shape().end());
    if (t != tail) {
      throw ShapeError("concat_batch: " + to_string(p.shape()) + " does not match " +
                       to_string(parts.front().shape()));
    }
    total += p.dim(0);
    out.insert(out.end(), p.values().begin(), p.values().end());
  }
  Shape shape{total};
  shape.insert(shape.end(), tail.begin(), tail.end());
  return Tensor::from_op(std::move(shape), std::move(out), parts,
                         [parts](std::span<const double> dy) {
                           std::size_t off = 0;
                           for (const auto& p : parts) {
                             p.accumulate_grad(dy.subspan(off, p.numel()));
                             off += p.numel();
                           }
                         });
}

}  // namespace mdnet::nn
