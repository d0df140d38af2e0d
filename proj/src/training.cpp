#include "mdnet/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "mdnet/adam.hpp"
#include "mdnet/metrics.hpp"
#include "mdnet/random.hpp"

namespace mdnet::train {

ClassWeights class_weights(const std::array<double, kNumMotionClasses>& counts) {
  double denom = 0.0;
  for (std::size_t j = 0; j < kNumMotionClasses; ++j) {
    if (!(counts[j] > 0.0) || !std::isfinite(counts[j])) {
      throw TrainingError("class '" + std::string(attribute_name(kMotionClasses[j])) +
                          "' has no labelled cells; merge it into another class or drop it "
                          "from the label mapping");
    }
    denom += 1.0 / counts[j];
  }
  ClassWeights out;
  for (std::size_t j = 0; j < kNumMotionClasses; ++j) out.w[j] = (1.0 / counts[j]) / denom;
  return out;
}

ClassWeights class_weights(const std::array<std::uint64_t, kNumMotionClasses>& counts) {
  std::array<double, kNumMotionClasses> c{};
  for (std::size_t j = 0; j < kNumMotionClasses; ++j) c[j] = static_cast<double>(counts[j]);
  return class_weights(c);
}

namespace {

constexpr double kLogFloor = 1e-300;

}  // namespace

Tensor motion_loss(const Tensor& probs, std::span<const MotionLabelGrid> targets,
                   const ClassWeights& weights) {
  if (probs.rank() != 4 || probs.dim(1) != kNumMotionClasses) {
    throw nn::ShapeError("motion_loss: expected [N,3,h,w] probabilities, got " +
                         nn::to_string(probs.shape()));
  }
  const std::size_t n = probs.dim(0), h = probs.dim(2), w = probs.dim(3), plane = h * w;
  if (targets.size() != n) {
    throw nn::ShapeError("motion_loss: " + std::to_string(targets.size()) + " target grids for " +
                         std::to_string(n) + " predictions");
  }
  std::size_t counted = 0;
  for (const auto& t : targets) {
    if (!t.same_dims(h, w)) {
      throw nn::ShapeError("motion_loss: target grid " + dims_string(t.height, t.width) +
                           " vs prediction grid " + dims_string(h, w));
    }
    counted += static_cast<std::size_t>(std::count_if(t.data.begin(), t.data.end(), is_learnable));
  }
  if (counted == 0) throw TrainingError("motion_loss: every cell is Ignore");

  // Flat index into probs and weight of every counted cell.
  std::vector<std::pair<std::size_t, double>> picks;
  picks.reserve(counted);
  const auto p = probs.values();
  double loss = 0.0;
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t i = 0; i < plane; ++i) {
      const auto a = targets[b].data[i];
      if (!is_learnable(a)) continue;
      const std::size_t c = class_index(a);
      const std::size_t idx = (b * kNumMotionClasses + c) * plane + i;
      loss -= weights.w[c] * std::log(std::max(p[idx], kLogFloor));
      picks.emplace_back(idx, weights.w[c]);
    }
  }
  const double inv = 1.0 / static_cast<double>(counted);
  loss *= inv;

  return Tensor::from_op({1}, {loss}, {probs}, [probs, picks = std::move(picks), inv](auto g) {
    std::vector<double> grad(probs.numel(), 0.0);
    const auto pv = probs.values();
    for (const auto& [idx, wc] : picks) {
      grad[idx] -= g[0] * inv * wc / std::max(pv[idx], kLogFloor);
    }
    probs.accumulate_grad(grad);
  });
}

Tensor distill_loss(const Tensor& student, const Tensor& targets) {
  if (student.shape() != targets.shape() || student.rank() != 4) {
    throw nn::ShapeError("distill_loss: student " + nn::to_string(student.shape()) +
                         " vs targets " + nn::to_string(targets.shape()));
  }
  const std::size_t k = student.dim(1);
  const std::size_t points = student.dim(0) * student.dim(2) * student.dim(3);
  if (points == 0 || k == 0) throw nn::ShapeError("distill_loss: empty input");
  const double scale = 1.0 / (static_cast<double>(points) * static_cast<double>(k));
  const auto s = student.values();
  const auto t = targets.values();
  double loss = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const double d = s[i] - t[i];
    loss += d * d;
  }
  loss *= scale;
  return Tensor::from_op({1}, {loss}, {student, targets}, [student, targets, scale](auto g) {
    const auto sv = student.values();
    const auto tv = targets.values();
    std::vector<double> gs(sv.size());
    for (std::size_t i = 0; i < sv.size(); ++i) gs[i] = 2.0 * scale * g[0] * (sv[i] - tv[i]);
    student.accumulate_grad(gs);
    if (targets.requires_grad()) {
      for (auto& v : gs) v = -v;
      targets.accumulate_grad(gs);
    }
  });
}

Tensor total_loss(const Tensor& l_m, const Tensor& l_d, const TrainConfig& cfg) {
  return nn::weighted_sum(l_m, cfg.lambda_m, l_d, cfg.lambda_d);
}

double total_loss(double l_m, double l_d, const TrainConfig& cfg) {
  return cfg.lambda_m * l_m + cfg.lambda_d * l_d;
}

double lr_at_epoch(std::size_t epoch, const TrainConfig& cfg) {
  if (cfg.epochs == 0) throw TrainingError("lr_at_epoch: E must be positive");
  if (epoch > cfg.epochs) {
    throw TrainingError("lr_at_epoch: epoch " + std::to_string(epoch) + " beyond E = " +
                        std::to_string(cfg.epochs));
  }
  return cfg.l0 * std::pow(cfg.b, static_cast<double>(epoch) / static_cast<double>(cfg.epochs));
}

std::string format_loss_record(const LossRecord& r) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%zu %zu %.9g %.9g %.9g %.9g", r.epoch, r.step, r.lr, r.total,
                r.motion, r.distill);
  return buf;
}

std::string format_loss_report(std::span<const LossRecord> records) {
  std::string out;
  for (const auto& r : records) out += format_loss_record(r) + "\n";
  return out;
}

Tensor distill_targets(const GrayImage& image, const model::TeacherParams& teacher) {
  return model::teacher_targets(model::teacher_forward(data::image_tensor(image), teacher));
}

namespace {

void check_config(const TrainConfig& cfg) {
  if (cfg.batch_size == 0) throw TrainingError("batch_size must be positive");
  if (cfg.epochs == 0) throw TrainingError("E (epochs) must be positive");
  if (!(cfg.l0 > 0.0)) throw TrainingError("l0 must be positive");
  if (!(cfg.b > 0.0)) throw TrainingError("b must be positive");
  if (cfg.weight_decay < 0.0) throw TrainingError("weight_decay must be non-negative");
  if (cfg.lambda_m < 0.0 || cfg.lambda_d < 0.0) throw TrainingError("loss weights must be >= 0");
}

}  // namespace

TrainResult train(std::span<const data::Sample> samples, const model::TeacherParams& teacher,
                  const TrainConfig& cfg, const StepCallback& on_step) {
  check_config(cfg);
  if (samples.empty()) throw TrainingError("training set is empty");

  TrainResult result;
  result.params = model::MdNetParams::initialize(cfg.seed);
  result.weights = cfg.reweight ? class_weights(data::class_histogram(samples))
                                : ClassWeights::uniform();

  std::vector<Tensor> targets;
  targets.reserve(samples.size());
  for (const auto& s : samples) targets.push_back(distill_targets(s.image, teacher));

  auto params = result.params.trainable_parameters();
  nn::AdamState adam(params, nn::AdamOptions{.weight_decay = cfg.weight_decay});
  Rng order_rng(cfg.seed ^ 0x5eed0fba7c4e5ull);
  std::vector<std::size_t> order(samples.size());

  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = lr_at_epoch(epoch, cfg);
    std::iota(order.begin(), order.end(), std::size_t{0});
    order_rng.shuffle(order);
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      if (cfg.max_steps != 0 && step >= cfg.max_steps) return result;
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      std::vector<const GrayImage*> images;
      MotionTargets labels;
      std::vector<Tensor> batch_targets;
      for (std::size_t i = start; i < end; ++i) {
        const auto& s = samples[order[i]];
        images.push_back(&s.image);
        labels.push_back(s.labels);
        batch_targets.push_back(targets[order[i]]);
      }

      for (auto& p : params) p.zero_grad();
      const auto out = model::forward(data::image_batch(images), result.params, nn::Mode::Train);
      const Tensor lm = motion_loss(out.motion_probs, labels, result.weights);
      const Tensor ld = distill_loss(out.descriptors, nn::concat_batch(batch_targets));
      const Tensor loss = total_loss(lm, ld, cfg);

      LossRecord rec{epoch, step, lr, loss.item(), lm.item(), ld.item()};
      if (!std::isfinite(rec.total)) {
        throw TrainingError("loss diverged at epoch " + std::to_string(epoch) + " step " +
                            std::to_string(step) + ": " + format_loss_record(rec));
      }
      loss.backward();
      nn::adam_step(params, adam, lr);
      result.history.push_back(rec);
      if (on_step) on_step(rec);
      ++step;
    }
  }
  return result;
}

double coarse_accuracy(const model::MdNetParams& params, std::span<const data::Sample> samples) {
  metrics::ConfusionMatrix cm;
  for (const auto& s : samples) {
    const auto out = model::infer(data::image_tensor(s.image), params);
    metrics::accumulate(cm, metrics::predict_labels(out.motion_probs, 0), s.labels);
  }
  return metrics::pixel_accuracy(cm);
}

}  // namespace mdnet::train
