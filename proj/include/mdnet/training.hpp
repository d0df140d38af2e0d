#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "mdnet/dataset.hpp"
#include "mdnet/model.hpp"
#include "mdnet/motion.hpp"

namespace mdnet::train {

using nn::Tensor;

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Per-attribute loss weights, indexed Unstable, Moving, Static.
struct ClassWeights {
  std::array<double, kNumMotionClasses> w{1.0, 1.0, 1.0};

  static ClassWeights uniform(double value = 1.0) { return {{value, value, value}}; }
};

// w_j = (1/N_j) / sum_k (1/N_k). Counts may be proportions; every count must be > 0.
ClassWeights class_weights(const std::array<double, kNumMotionClasses>& counts);
ClassWeights class_weights(const std::array<std::uint64_t, kNumMotionClasses>& counts);

// One coarse label grid per batch item.
using MotionTargets = std::vector<MotionLabelGrid>;

// Weighted cross entropy over non-Ignore cells, divided by their count.
// probs is [N,3,h,w] (softmax output); targets.size() == N, each h x w.
Tensor motion_loss(const Tensor& probs, std::span<const MotionLabelGrid> targets,
                   const ClassWeights& weights);

// Mean over points of (1/K) * ||student - target||^2, for [N,K,h,w] inputs.
Tensor distill_loss(const Tensor& student, const Tensor& targets);

struct TrainConfig {
  double lambda_m = 1.0;
  double lambda_d = 1.0;
  std::size_t batch_size = 16;
  double l0 = 0.01;
  std::size_t epochs = 100;  // E: both the decay horizon and the number of epochs run
  double b = 0.01;
  double weight_decay = 1e-6;
  std::uint64_t seed = 0;
  bool reweight = true;       // class-size weights; false uses uniform weights of 1
  std::size_t max_steps = 0;  // stop early after this many optimizer steps (0: no limit)
};

Tensor total_loss(const Tensor& l_m, const Tensor& l_d, const TrainConfig& cfg);
double total_loss(double l_m, double l_d, const TrainConfig& cfg);

// l_e = l0 * b^(e/E) for 0 <= e <= E.
double lr_at_epoch(std::size_t epoch, const TrainConfig& cfg);

struct LossRecord {
  std::size_t epoch = 0;
  std::size_t step = 0;
  double lr = 0.0;
  double total = 0.0;
  double motion = 0.0;
  double distill = 0.0;
};

// `epoch step lr loss_total loss_m loss_d`
std::string format_loss_record(const LossRecord& record);
std::string format_loss_report(std::span<const LossRecord> records);

struct TrainResult {
  model::MdNetParams params;
  std::vector<LossRecord> history;  // one record per optimizer step
  ClassWeights weights;
};

using StepCallback = std::function<void(const LossRecord&)>;

// Mini-batch Adam over `samples` with distillation targets from `teacher`.
// Deterministic for a fixed cfg.seed. Throws TrainingError on a non-finite loss.
TrainResult train(std::span<const data::Sample> samples, const model::TeacherParams& teacher,
                  const TrainConfig& cfg, const StepCallback& on_step = {});

// Precomputed teacher targets [1,128,h/8,w/8] for one padded sample image.
Tensor distill_targets(const GrayImage& image, const model::TeacherParams& teacher);

// Fraction of non-Ignore coarse cells whose eval-mode argmax matches the label.
double coarse_accuracy(const model::MdNetParams& params, std::span<const data::Sample> samples);

}  // namespace mdnet::train
