#include "mdnet/metrics.hpp"

#include <cmath>
#include <cstdio>

#include "mdnet/ops.hpp"

namespace mdnet::metrics {

std::uint64_t ConfusionMatrix::total() const {
  std::uint64_t t = 0;
  for (const auto& row : counts) {
    for (auto v : row) t += v;
  }
  return t;
}

ConfusionMatrix& ConfusionMatrix::operator+=(const ConfusionMatrix& other) {
  for (std::size_t r = 0; r < kNumMotionClasses; ++r) {
    for (std::size_t c = 0; c < kNumMotionClasses; ++c) counts[r][c] += other.counts[r][c];
  }
  return *this;
}

void accumulate(ConfusionMatrix& cm, const MotionLabelGrid& predictions,
                const MotionLabelGrid& truth) {
  if (!predictions.same_dims(truth.height, truth.width)) {
    throw MetricsError("prediction grid " + dims_string(predictions.height, predictions.width) +
                       " does not match truth grid " + dims_string(truth.height, truth.width));
  }
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const auto t = truth.data[i];
    if (!is_learnable(t)) continue;
    const auto p = predictions.data[i];
    if (!is_learnable(p)) throw MetricsError("prediction is Ignore on a labelled cell");
    ++cm.counts[class_index(t)][class_index(p)];
  }
}

ClassIou iou_per_class(const ConfusionMatrix& cm) {
  ClassIou out;
  for (std::size_t j = 0; j < kNumMotionClasses; ++j) {
    const std::uint64_t tp = cm.counts[j][j];
    std::uint64_t row = 0, col = 0;
    for (std::size_t k = 0; k < kNumMotionClasses; ++k) {
      row += cm.counts[j][k];
      col += cm.counts[k][j];
    }
    const std::uint64_t uni = row + col - tp;
    out.defined[j] = uni > 0;
    out.iou[j] = uni > 0 ? static_cast<double>(tp) / static_cast<double>(uni) : 0.0;
  }
  return out;
}

double mean_iou(const ClassIou& iou) {
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t j = 0; j < kNumMotionClasses; ++j) {
    if (!iou.defined[j]) continue;
    sum += iou.iou[j];
    ++n;
  }
  if (n == 0) throw MetricsError("mean IoU undefined: no class has predictions or labels");
  return sum / static_cast<double>(n);
}

double mean_iou(const ConfusionMatrix& cm) { return mean_iou(iou_per_class(cm)); }

std::array<double, kNumMotionClasses> proportions(const ConfusionMatrix& cm) {
  const std::uint64_t total = cm.total();
  if (total == 0) throw MetricsError("proportions of an empty confusion matrix");
  std::array<double, kNumMotionClasses> out{};
  for (std::size_t j = 0; j < kNumMotionClasses; ++j) {
    std::uint64_t row = 0;
    for (auto v : cm.counts[j]) row += v;
    out[j] = static_cast<double>(row) / static_cast<double>(total);
  }
  return out;
}

double pixel_accuracy(const ConfusionMatrix& cm) {
  const std::uint64_t total = cm.total();
  if (total == 0) throw MetricsError("accuracy of an empty confusion matrix");
  std::uint64_t diag = 0;
  for (std::size_t j = 0; j < kNumMotionClasses; ++j) diag += cm.counts[j][j];
  return static_cast<double>(diag) / static_cast<double>(total);
}

std::string format_report(const ConfusionMatrix& cm) {
  const ClassIou iou = iou_per_class(cm);
  const auto prop = proportions(cm);
  std::string out;
  char buf[128];
  for (std::size_t j = 0; j < kNumMotionClasses; ++j) {
    const std::string name(attribute_name(kMotionClasses[j]));
    if (iou.defined[j]) {
      std::snprintf(buf, sizeof buf, "%s %.6f %.6f\n", name.c_str(), iou.iou[j], prop[j]);
    } else {
      std::snprintf(buf, sizeof buf, "%s undefined %.6f\n", name.c_str(), prop[j]);
    }
    out += buf;
  }
  std::snprintf(buf, sizeof buf, "mean %.6f\n", mean_iou(iou));
  out += buf;
  return out;
}

namespace {

MotionLabelGrid argmax_grid(std::span<const double> v, std::size_t n, std::size_t h,
                            std::size_t w) {
  MotionLabelGrid out(h, w);
  const std::size_t plane = h * w;
  const double* base = v.data() + n * kNumMotionClasses * plane;
  for (std::size_t i = 0; i < plane; ++i) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < kNumMotionClasses; ++c) {
      if (base[c * plane + i] > base[best * plane + i]) best = c;
    }
    out.data[i] = kMotionClasses[best];
  }
  return out;
}

void check_probs(const nn::Tensor& probs, std::size_t n) {
  if (probs.rank() != 4 || probs.dim(1) != kNumMotionClasses || n >= probs.dim(0)) {
    throw nn::ShapeError("expected [N,3,h,w] probabilities with item " + std::to_string(n) +
                         ", got " + nn::to_string(probs.shape()));
  }
}

}  // namespace

MotionLabelGrid predict_labels(const nn::Tensor& probs, std::size_t n) {
  check_probs(probs, n);
  return argmax_grid(probs.values(), n, probs.dim(2), probs.dim(3));
}

MotionLabelGrid predict_labels_upsampled(const nn::Tensor& probs, std::size_t n,
                                         std::size_t factor) {
  check_probs(probs, n);
  const nn::Tensor up = nn::bilinear_upsample(probs.detach(), factor);
  return argmax_grid(up.values(), n, up.dim(2), up.dim(3));
}

MotionLabelGrid parse_label_grid(std::istream& in, const std::string& source) {
  MotionLabelGrid grid;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string row;
    for (char c : line) {
      if (c != ' ' && c != '\t' && c != '\r') row.push_back(c);
    }
    if (row.empty() || row.front() == '#') continue;
    const std::string where = source + ":" + std::to_string(lineno);
    if (grid.height == 0) {
      grid.width = row.size();
    } else if (row.size() != grid.width) {
      throw MetricsError(where + ": row has " + std::to_string(row.size()) + " cells, expected " +
                         std::to_string(grid.width));
    }
    for (char c : row) {
      const auto a = attribute_from_letter(c);
      if (!a) throw MetricsError(where + ": unknown attribute letter '" + std::string(1, c) + "'");
      grid.data.push_back(*a);
    }
    ++grid.height;
  }
  if (grid.height == 0) throw MetricsError(source + ": empty label grid");
  return grid;
}

std::string format_label_grid(const MotionLabelGrid& grid) {
  std::string out;
  for (std::size_t y = 0; y < grid.height; ++y) {
    for (std::size_t x = 0; x < grid.width; ++x) out.push_back(attribute_letter(grid(y, x)));
    out.push_back('\n');
  }
  return out;
}

}  // namespace mdnet::metrics
