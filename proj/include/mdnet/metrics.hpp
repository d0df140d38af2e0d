#pragma once

#include <array>
#include <cstdint>
#include <istream>
#include <span>
#include <stdexcept>
#include <string>

#include "mdnet/motion.hpp"
#include "mdnet/tensor.hpp"

namespace mdnet::metrics {

class MetricsError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Rows are ground truth, columns are predictions, both indexed by class_index().
struct ConfusionMatrix {
  std::array<std::array<std::uint64_t, kNumMotionClasses>, kNumMotionClasses> counts{};

  std::uint64_t total() const;
  ConfusionMatrix& operator+=(const ConfusionMatrix& other);
  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;
};

// Adds one count per cell whose truth is not Ignore. A prediction of Ignore on
// such a cell is an error.
void accumulate(ConfusionMatrix& cm, const MotionLabelGrid& predictions,
                const MotionLabelGrid& truth);

struct ClassIou {
  std::array<double, kNumMotionClasses> iou{};
  std::array<bool, kNumMotionClasses> defined{};  // false when the class union is empty
};

ClassIou iou_per_class(const ConfusionMatrix& cm);

// Mean over defined classes; throws when none is defined.
double mean_iou(const ClassIou& iou);
double mean_iou(const ConfusionMatrix& cm);

// Ground-truth share of each class.
std::array<double, kNumMotionClasses> proportions(const ConfusionMatrix& cm);

double pixel_accuracy(const ConfusionMatrix& cm);

// `class iou proportion` per class (iou printed as `undefined` when excluded),
// then `mean <value>`.
std::string format_report(const ConfusionMatrix& cm);

// Per-cell argmax of item `n` of a [N,3,h,w] probability tensor; ties go to
// the earlier class.
MotionLabelGrid predict_labels(const nn::Tensor& probs, std::size_t n);

// Same, after bilinear upsampling of the probabilities by `factor`.
MotionLabelGrid predict_labels_upsampled(const nn::Tensor& probs, std::size_t n,
                                         std::size_t factor);

// Text grids: one row per line, one letter per cell (U, M, S, or '.' for Ignore).
MotionLabelGrid parse_label_grid(std::istream& in, const std::string& source);
std::string format_label_grid(const MotionLabelGrid& grid);

}  // namespace mdnet::metrics
