#include "mdnet/model.hpp"

#include <cmath>

#include "mdnet/random.hpp"

namespace mdnet::model {

namespace {

ConvLayer make_conv(Rng& rng, std::size_t in, std::size_t out, std::size_t k, std::size_t stride,
                    std::size_t padding) {
  const double std_dev = std::sqrt(2.0 / static_cast<double>(in * k * k));
  std::vector<double> w(out * in * k * k);
  for (auto& v : w) v = std_dev * rng.normal();
  return {Tensor({out, in, k, k}, std::move(w), true), Tensor::zeros({out}, true), stride,
          padding};
}

NormLayer make_norm(std::size_t channels) {
  return {Tensor::filled({channels}, 1.0, true), Tensor::zeros({channels}, true),
          nn::BatchNormState::identity(channels)};
}

ConvBnLayer make_conv_bn(Rng& rng, std::size_t in, std::size_t out, std::size_t k,
                         std::size_t stride, std::size_t padding) {
  return {make_conv(rng, in, out, k, stride, padding), make_norm(out)};
}

Tensor apply_conv(const Tensor& x, const ConvLayer& c) {
  return nn::conv2d(x, c.weight, c.bias, c.stride, c.padding);
}

Tensor apply_conv_bn(const Tensor& x, const ConvBnLayer& l, nn::BatchNormState& stats, Mode mode) {
  return nn::batch_norm(apply_conv(x, l.conv), l.norm.gamma, l.norm.beta, mode, stats);
}

void push_conv(std::vector<NamedTensor>& out, const std::string& prefix, const ConvLayer& c) {
  out.push_back({prefix + ".weight", c.weight, true});
  out.push_back({prefix + ".bias", c.bias, true});
}

void push_norm(std::vector<NamedTensor>& out, const std::string& prefix, const NormLayer& n) {
  out.push_back({prefix + ".gamma", n.gamma, true});
  out.push_back({prefix + ".beta", n.beta, true});
  out.push_back({prefix + ".running_mean", n.stats.running_mean, false});
  out.push_back({prefix + ".running_var", n.stats.running_var, false});
}

ConvLayer clone_conv(const ConvLayer& c) {
  return {c.weight.clone(), c.bias.clone(), c.stride, c.padding};
}

ConvBnLayer clone_conv_bn(const ConvBnLayer& l) {
  return {clone_conv(l.conv),
          {l.norm.gamma.clone(), l.norm.beta.clone(),
           {l.norm.stats.running_mean.clone(), l.norm.stats.running_var.clone()}}};
}

std::vector<Tensor> trainable_of(const std::vector<NamedTensor>& named) {
  std::vector<Tensor> out;
  for (const auto& n : named) {
    if (n.trainable) out.push_back(n.tensor);
  }
  return out;
}

void check_image(const Tensor& image, std::size_t multiple, const char* who) {
  if (image.rank() != 4 || image.dim(1) != 1) {
    throw nn::ShapeError(std::string(who) + ": expected [N,1,H,W] image, got " +
                         nn::to_string(image.shape()));
  }
  const std::size_t h = image.dim(2), w = image.dim(3);
  if (h % multiple != 0 || w % multiple != 0) {
    const std::size_t ph = (h + multiple - 1) / multiple * multiple;
    const std::size_t pw = (w + multiple - 1) / multiple * multiple;
    throw nn::ShapeError(std::string(who) + ": height and width must be multiples of " +
                         std::to_string(multiple) + ", got " + std::to_string(h) + "x" +
                         std::to_string(w) + " (pad to " + std::to_string(ph) + "x" +
                         std::to_string(pw) + ")");
  }
}

template <class Params>
Tensor run_backbone(const Tensor& image, Params& params, Mode mode) {
  check_image(image, kStudentStride, "backbone_forward");
  Tensor x = image;
  for (std::size_t i = 0; i < params.backbone.size(); ++i) {
    auto& layer = params.backbone[i];
    nn::BatchNormState stats = layer.norm.stats;
    x = nn::relu(apply_conv_bn(x, layer, stats, mode));
    if (kPoolAfter[i]) x = nn::max_pool_2x2(x);
  }
  return x;
}

void check_features(const Tensor& features, const char* who) {
  if (features.rank() != 4 || features.dim(1) != kBackboneChannels.back()) {
    throw nn::ShapeError(std::string(who) + ": expected [N," +
                         std::to_string(kBackboneChannels.back()) + ",h,w] features, got " +
                         nn::to_string(features.shape()));
  }
}

template <class Params>
Tensor run_motion_head(const Tensor& features, Params& params, Mode mode) {
  check_features(features, "motion_head_forward");
  nn::BatchNormState stats = params.motion_hidden.norm.stats;
  Tensor h = nn::relu(apply_conv_bn(features, params.motion_hidden, stats, mode));
  return nn::softmax_channel(apply_conv(h, params.motion_out));
}

template <class Params>
Tensor run_desc_head(const Tensor& features, Params& params, Mode mode) {
  check_features(features, "desc_head_forward");
  nn::BatchNormState stats = params.desc_hidden.norm.stats;
  Tensor h = nn::relu(apply_conv_bn(features, params.desc_hidden, stats, mode));
  return apply_conv(h, params.desc_out);
}

}  // namespace

MdNetParams MdNetParams::initialize(std::uint64_t seed) {
  Rng rng(seed);
  MdNetParams p;
  std::size_t in = 1;
  for (std::size_t i = 0; i < p.backbone.size(); ++i) {
    p.backbone[i] = make_conv_bn(rng, in, kBackboneChannels[i], 3, 1, 1);
    in = kBackboneChannels[i];
  }
  p.motion_hidden = make_conv_bn(rng, in, kHeadHiddenChannels, 3, 1, 1);
  p.motion_out = make_conv(rng, kHeadHiddenChannels, 3, 1, 1, 0);
  p.desc_hidden = make_conv_bn(rng, in, kHeadHiddenChannels, 3, 1, 1);
  p.desc_out = make_conv(rng, kHeadHiddenChannels, kDescriptorDim, 1, 1, 0);
  return p;
}

std::vector<NamedTensor> MdNetParams::named_tensors() const {
  std::vector<NamedTensor> out;
  for (std::size_t i = 0; i < backbone.size(); ++i) {
    const std::string idx = std::to_string(i + 1);
    push_conv(out, "backbone.conv" + idx, backbone[i].conv);
    push_norm(out, "backbone.bn" + idx, backbone[i].norm);
  }
  push_conv(out, "motion.conv1", motion_hidden.conv);
  push_norm(out, "motion.bn1", motion_hidden.norm);
  push_conv(out, "motion.conv2", motion_out);
  push_conv(out, "desc.conv1", desc_hidden.conv);
  push_norm(out, "desc.bn1", desc_hidden.norm);
  push_conv(out, "desc.conv2", desc_out);
  return out;
}

std::vector<Tensor> MdNetParams::trainable_parameters() const {
  return trainable_of(named_tensors());
}

std::vector<Tensor> MdNetParams::backbone_parameters() const {
  std::vector<Tensor> out;
  for (const auto& l : backbone) {
    out.insert(out.end(), {l.conv.weight, l.conv.bias, l.norm.gamma, l.norm.beta});
  }
  return out;
}

std::vector<Tensor> MdNetParams::motion_head_parameters() const {
  return {motion_hidden.conv.weight, motion_hidden.conv.bias, motion_hidden.norm.gamma,
          motion_hidden.norm.beta,   motion_out.weight,       motion_out.bias};
}

std::vector<Tensor> MdNetParams::desc_head_parameters() const {
  return {desc_hidden.conv.weight, desc_hidden.conv.bias, desc_hidden.norm.gamma,
          desc_hidden.norm.beta,   desc_out.weight,       desc_out.bias};
}

MdNetParams MdNetParams::clone() const {
  MdNetParams p;
  for (std::size_t i = 0; i < backbone.size(); ++i) p.backbone[i] = clone_conv_bn(backbone[i]);
  p.motion_hidden = clone_conv_bn(motion_hidden);
  p.motion_out = clone_conv(motion_out);
  p.desc_hidden = clone_conv_bn(desc_hidden);
  p.desc_out = clone_conv(desc_out);
  return p;
}

TeacherParams TeacherParams::initialize(std::uint64_t seed) {
  Rng rng(seed);
  TeacherParams p;
  std::size_t in = 1;
  for (std::size_t i = 0; i < p.layers.size(); ++i) {
    const bool last = i + 1 == p.layers.size();
    p.layers[i] = make_conv_bn(rng, in, kTeacherChannels[i], last ? kTeacherFinalKernel : 3,
                               kTeacherStrides[i], last ? kTeacherFinalPadding : 1);
    in = kTeacherChannels[i];
  }
  // The teacher is never trained here.
  for (auto& n : p.named_tensors()) n.tensor.set_requires_grad(false);
  return p;
}

std::vector<NamedTensor> TeacherParams::named_tensors() const {
  std::vector<NamedTensor> out;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const std::string idx = std::to_string(i + 1);
    push_conv(out, "teacher.conv" + idx, layers[i].conv);
    push_norm(out, "teacher.bn" + idx, layers[i].norm);
  }
  return out;
}

TeacherParams TeacherParams::clone() const {
  TeacherParams p;
  for (std::size_t i = 0; i < layers.size(); ++i) p.layers[i] = clone_conv_bn(layers[i]);
  return p;
}

Tensor backbone_forward(const Tensor& image, MdNetParams& params, Mode mode) {
  return run_backbone(image, params, mode);
}

Tensor motion_head_forward(const Tensor& features, MdNetParams& params, Mode mode) {
  return run_motion_head(features, params, mode);
}

Tensor desc_head_forward(const Tensor& features, MdNetParams& params, Mode mode) {
  return run_desc_head(features, params, mode);
}

MdNetOutput forward(const Tensor& image, MdNetParams& params, Mode mode) {
  Tensor f = backbone_forward(image, params, mode);
  return {f, motion_head_forward(f, params, mode), desc_head_forward(f, params, mode)};
}

MdNetOutput infer(const Tensor& image, const MdNetParams& params) {
  Tensor f = run_backbone(image, params, Mode::Eval);
  return {f, run_motion_head(f, params, Mode::Eval), run_desc_head(f, params, Mode::Eval)};
}

Tensor teacher_forward(const Tensor& image, const TeacherParams& params) {
  check_image(image, kTeacherStride, "teacher_forward");
  const std::size_t gh = image.dim(2) / kTeacherStride, gw = image.dim(3) / kTeacherStride;
  Tensor x = image;
  for (std::size_t i = 0; i < params.layers.size(); ++i) {
    const auto& layer = params.layers[i];
    nn::BatchNormState stats = layer.norm.stats;
    x = apply_conv_bn(x, layer, stats, Mode::Eval);
    if (i + 1 < params.layers.size()) x = nn::relu(x);
  }
  // Padding 4 on the 8x8 layer yields one extra row and column; dropping the
  // last keeps output t covering stride-4 cells t-4 .. t+3.
  x = nn::crop(x, 0, 0, gh, gw);
  return nn::l2_normalize_channels(x);
}

Tensor teacher_targets(const Tensor& teacher_map) {
  if (teacher_map.rank() != 4 || teacher_map.dim(2) % 2 != 0 || teacher_map.dim(3) % 2 != 0) {
    throw nn::ShapeError("teacher_targets: expected [N,C,h,w] with even h, w, got " +
                         nn::to_string(teacher_map.shape()));
  }
  const std::size_t n = teacher_map.dim(0), c = teacher_map.dim(1);
  const std::size_t h = teacher_map.dim(2), w = teacher_map.dim(3);
  const std::size_t oh = h / 2, ow = w / 2;
  const auto src = teacher_map.values();
  std::vector<double> out(n * c * oh * ow);
  for (std::size_t plane = 0; plane < n * c; ++plane) {
    for (std::size_t y = 0; y < oh; ++y) {
      for (std::size_t x = 0; x < ow; ++x) {
        out[(plane * oh + y) * ow + x] = src[plane * h * w + (2 * y + 1) * w + (2 * x + 1)];
      }
    }
  }
  return Tensor({n, c, oh, ow}, std::move(out));
}

}  // namespace mdnet::model
