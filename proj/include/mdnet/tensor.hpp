#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <new>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace mdnet::nn {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

namespace detail {

struct Node;

// Storage is aligned to 64 bytes. Eigen's vectorized reductions peel a
// different number of leading elements depending on where a buffer starts, so
// with malloc's 16-byte alignment two identical runs in one process could
// disagree in the last bits.
template <class T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};

  AlignedAllocator() = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlign); }

  template <class U>
  bool operator==(const AlignedAllocator<U>&) const noexcept { return true; }
};

using Buffer = std::vector<double, AlignedAllocator<double>>;

// Called once during the reverse sweep with the gradient of the node's output.
using BackwardFn = std::function<void(std::span<const double> grad_out)>;

struct Node {
  Shape shape;
  Buffer values;
  Buffer grad;  // empty until the first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  BackwardFn backward;
};

}  // namespace detail

/// Dense row-major array of doubles with optional reverse-mode gradient.
///
/// Tensor is a shared handle: copies alias the same storage, so parameters can
/// be passed to ops by value while gradients accumulate on the original. Use
/// clone() for an independent deep copy.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor filled(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t dim(std::size_t axis) const;
  std::size_t rank() const { return shape().size(); }
  std::size_t numel() const { return values().size(); }

  std::span<const double> values() const;
  // Direct write access; only meaningful on leaves (parameters, inputs).
  std::span<double> mutable_values();
  double item() const;

  bool requires_grad() const;
  void set_requires_grad(bool on);
  bool has_grad() const;
  std::span<const double> grad() const;
  std::span<double> mutable_grad();  // allocates zeros when absent
  void zero_grad();

  // Reverse sweep from a single-element tensor, seeding its gradient with 1.
  void backward() const;

  // Same values, no graph history, no gradient.
  Tensor detach() const;
  Tensor clone() const;

  // Builds an op output. The backward function runs only when some parent
  // requires a gradient; otherwise it is dropped and no graph is retained.
  static Tensor from_op(Shape shape, std::vector<double> values,
                        std::vector<Tensor> parents, detail::BackwardFn backward);

  // Adds `g` into this tensor's gradient buffer (no-op if grad not required).
  void accumulate_grad(std::span<const double> g) const;

  bool same_storage(const Tensor& other) const { return node_ == other.node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  static Tensor leaf(Shape shape, std::span<const double> values, bool requires_grad);
  std::shared_ptr<detail::Node> node_;
};

}  // namespace mdnet::nn
