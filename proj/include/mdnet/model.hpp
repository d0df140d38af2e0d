#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "mdnet/ops.hpp"
#include "mdnet/tensor.hpp"

namespace mdnet::model {

using nn::Mode;
using nn::Tensor;

// Backbone: eight 3x3 conv + BN + ReLU layers, 2x2 max-pool after layers 2, 4
// and 6 (output stride 8).
inline constexpr std::array<std::size_t, 8> kBackboneChannels = {64, 64, 64, 64, 128, 128, 128, 128};
inline constexpr std::array<bool, 8> kPoolAfter = {false, true, false, true, false, true, false, false};
inline constexpr std::size_t kHeadHiddenChannels = 256;
inline constexpr std::size_t kDescriptorDim = 128;
inline constexpr std::size_t kStudentStride = 8;

// Teacher: the patch-descriptor network run densely. Six 3x3 layers followed
// by an 8x8 layer padded by 4 and cropped back to the stride-4 grid.
inline constexpr std::array<std::size_t, 7> kTeacherChannels = {32, 32, 64, 64, 128, 128, 128};
inline constexpr std::array<std::size_t, 7> kTeacherStrides = {1, 1, 2, 1, 2, 1, 1};
inline constexpr std::size_t kTeacherFinalKernel = 8;
inline constexpr std::size_t kTeacherFinalPadding = 4;
inline constexpr std::size_t kTeacherStride = 4;

struct ConvLayer {
  Tensor weight;  // [out, in, k, k]
  Tensor bias;    // [out]
  std::size_t stride = 1;
  std::size_t padding = 0;
};

struct NormLayer {
  Tensor gamma;
  Tensor beta;
  nn::BatchNormState stats;
};

struct ConvBnLayer {
  ConvLayer conv;
  NormLayer norm;
};

struct NamedTensor {
  std::string name;
  Tensor tensor;
  bool trainable;
};

struct MdNetParams {
  std::array<ConvBnLayer, 8> backbone;
  ConvBnLayer motion_hidden;
  ConvLayer motion_out;  // 1x1 -> 3 logits
  ConvBnLayer desc_hidden;
  ConvLayer desc_out;  // 1x1 -> 128

  // He-normal conv weights, zero biases, unit BN scale, identity running stats.
  static MdNetParams initialize(std::uint64_t seed);

  // Every persisted tensor, including batch-norm running statistics.
  std::vector<NamedTensor> named_tensors() const;
  std::vector<Tensor> trainable_parameters() const;
  std::vector<Tensor> backbone_parameters() const;
  std::vector<Tensor> motion_head_parameters() const;
  std::vector<Tensor> desc_head_parameters() const;

  MdNetParams clone() const;
};

struct TeacherParams {
  std::array<ConvBnLayer, 7> layers;

  static TeacherParams initialize(std::uint64_t seed);
  std::vector<NamedTensor> named_tensors() const;
  TeacherParams clone() const;
};

// image [N,1,H,W] with H, W multiples of 8 -> features [N,128,H/8,W/8].
// Train mode updates batch-norm running statistics inside `params`.
Tensor backbone_forward(const Tensor& image, MdNetParams& params, Mode mode);

// features -> per-cell probabilities over (unstable, moving, static).
Tensor motion_head_forward(const Tensor& features, MdNetParams& params, Mode mode);

// features -> raw 128-d descriptors per cell (not normalized).
Tensor desc_head_forward(const Tensor& features, MdNetParams& params, Mode mode);

struct MdNetOutput {
  Tensor features;
  Tensor motion_probs;
  Tensor descriptors;
};

MdNetOutput forward(const Tensor& image, MdNetParams& params, Mode mode);

// Eval-mode forward that never touches `params`; safe to share across threads.
MdNetOutput infer(const Tensor& image, const MdNetParams& params);

// image [N,1,H,W] with H, W multiples of 4 -> unit-norm descriptors
// [N,128,H/4,W/4]. Always eval mode.
Tensor teacher_forward(const Tensor& image, const TeacherParams& params);

// Picks, for every student cell, the teacher cell whose receptive-field center
// is nearest the student cell center. Student cell c is centered on pixel
// 8c+3.5; cropped teacher cell t on pixel 4t-2, so the pick is t = 2c+1.
Tensor teacher_targets(const Tensor& teacher_map);

}  // namespace mdnet::model
