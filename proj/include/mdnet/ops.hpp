#pragma once

#include <cstddef>

#include "mdnet/tensor.hpp"

namespace mdnet::nn {

enum class Mode { Train, Eval };

// Output spatial size of a convolution along one axis.
std::size_t conv_output_size(std::size_t in, std::size_t kernel, std::size_t stride,
                             std::size_t padding);

/// 2-D cross-correlation over an NCHW input with zero padding.
/// kernel is [F,C,kH,kW], bias is [F].
Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias, std::size_t stride,
              std::size_t padding);

inline constexpr double kBatchNormEpsilon = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;

/// Running statistics of one batch-norm layer. Updated in place by train-mode
/// calls; running_var tracks the unbiased batch variance.
struct BatchNormState {
  Tensor running_mean;
  Tensor running_var;

  static BatchNormState identity(std::size_t channels);
};

Tensor batch_norm(const Tensor& input, const Tensor& gamma, const Tensor& beta, Mode mode,
                  BatchNormState& state);

Tensor relu(const Tensor& input);

// 2x2 window, stride 2. Backward routes to the first maximal element in
// row-major window order.
Tensor max_pool_2x2(const Tensor& input);

// Softmax across the channel axis at each (n, y, x).
Tensor softmax_channel(const Tensor& input);

/// Bilinear resize by an integer factor, half-pixel centers (align_corners =
/// false) with border clamping.
Tensor bilinear_upsample(const Tensor& input, std::size_t factor);

// Spatial window [top, top+height) x [left, left+width) of an NCHW tensor.
Tensor crop(const Tensor& input, std::size_t top, std::size_t left, std::size_t height,
            std::size_t width);

// Per-location unit L2 norm across channels. A zero vector is an error.
Tensor l2_normalize_channels(const Tensor& input);

// a_weight * a + b_weight * b for same-shaped tensors.
Tensor weighted_sum(const Tensor& a, double a_weight, const Tensor& b, double b_weight);

// Concatenates tensors along axis 0; all trailing dims must match.
Tensor concat_batch(const std::vector<Tensor>& parts);

// Half-pixel bilinear source coordinate for output index `i` of an upsampling
// by `factor` over `size` input cells. Shared by dense and sparse samplers so
// both paths use identical arithmetic.
struct BilinearTap {
  std::size_t lo;
  std::size_t hi;
  double frac;  // weight of `hi`
};
BilinearTap bilinear_tap(double source_coord, std::size_t size);
double upsample_source_coord(double output_coord, std::size_t factor);

// Interpolates one row-major plane of width `w`.
inline double bilinear_sample(const double* plane, std::size_t w, const BilinearTap& ty,
                              const BilinearTap& tx) {
  const double top = plane[ty.lo * w + tx.lo] * (1.0 - tx.frac) + plane[ty.lo * w + tx.hi] * tx.frac;
  const double bot = plane[ty.hi * w + tx.lo] * (1.0 - tx.frac) + plane[ty.hi * w + tx.hi] * tx.frac;
  return top * (1.0 - ty.frac) + bot * ty.frac;
}

}  // namespace mdnet::nn
