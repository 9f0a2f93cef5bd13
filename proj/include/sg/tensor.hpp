#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "sg/error.hpp"

namespace sg {

enum class DType : std::uint8_t { F32 = 0, F64 = 1 };

inline std::size_t dtype_size(DType dt) { return dt == DType::F32 ? 4 : 8; }
inline const char* dtype_name(DType dt) { return dt == DType::F32 ? "f32" : "f64"; }

using Shape = std::vector<std::int64_t>;

std::int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

struct TensorImpl {
  Shape shape;
  DType dtype = DType::F32;
  std::vector<std::byte> data;
  // Leaf marker: gradients are requested for this tensor.
  bool requires_grad = false;
  // Set when the tensor participates in the active GradGraph (leaf with
  // requires_grad touched by a recorded op, or output of a recorded op).
  bool tracked = false;
  // Filled by GradGraph::backward. Same dtype/shape as data when present.
  std::vector<std::byte> grad;
  bool has_grad = false;

  std::int64_t numel() const { return shape_numel(shape); }

  template <typename T>
  T* ptr() {
    return reinterpret_cast<T*>(data.data());
  }
  template <typename T>
  const T* ptr() const {
    return reinterpret_cast<const T*>(data.data());
  }
  template <typename T>
  T* grad_ptr() {
    return reinterpret_cast<T*>(grad.data());
  }
  template <typename T>
  const T* grad_ptr() const {
    return reinterpret_cast<const T*>(grad.data());
  }

  void ensure_grad();  // allocate zero-filled gradient buffer
  void clear_grad();
};

}  // namespace detail

class Tensor;

// Ordered record of differentiable operations. Exactly one graph may be
// active at a time; ops record onto it only while it is active and at least
// one input is tracked. `backward` replays the record once, in reverse
// execution order, then marks the graph consumed.
class GradGraph {
 public:
  GradGraph();
  ~GradGraph();
  GradGraph(const GradGraph&) = delete;
  GradGraph& operator=(const GradGraph&) = delete;

  void backward(const Tensor& loss);

  bool consumed() const { return consumed_; }
  std::size_t size() const { return nodes_.size(); }

  static GradGraph* active();

  // Recording interface used by op implementations (and test fixtures that
  // exercise the checker with deliberately wrong derivatives).
  struct Node {
    std::vector<std::shared_ptr<detail::TensorImpl>> inputs;
    std::shared_ptr<detail::TensorImpl> output;
    // Reads output->grad, accumulates into the grads of tracked inputs.
    std::function<void()> backward;
  };
  void record(Node node);

 private:
  std::vector<Node> nodes_;
  bool consumed_ = false;
};

// Dense N-dimensional array. Image batches use NCHW order. Tensors are
// immutable after construction: every operation returns a new tensor, and a
// Tensor value is a cheap shared handle safe to copy across threads.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, DType dtype = DType::F32);
  static Tensor full(Shape shape, double value, DType dtype = DType::F32);
  static Tensor from_data(Shape shape, std::span<const float> values);
  static Tensor from_data(Shape shape, std::span<const double> values);
  // Seeded counter-based uniform draw on [lo, hi). Never grad-tracked.
  static Tensor uniform(Shape shape, double lo, double hi, std::uint64_t seed,
                        DType dtype = DType::F32);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::int64_t rank() const { return static_cast<std::int64_t>(impl_->shape.size()); }
  std::int64_t numel() const { return impl_->numel(); }
  std::int64_t extent(std::int64_t axis) const;
  DType dtype() const { return impl_->dtype; }

  void set_requires_grad(bool value);
  bool requires_grad() const { return impl_->requires_grad; }
  bool tracked() const { return impl_->tracked; }

  // Gradient accumulated by the most recent backward pass. Zero tensor when
  // nothing was accumulated.
  Tensor grad() const;
  bool has_grad() const { return impl_->has_grad; }

  template <typename T>
  std::span<const T> data() const {
    check_dtype_access<T>();
    return {impl_->ptr<T>(), static_cast<std::size_t>(impl_->numel())};
  }

  // Value of a one-element tensor, as double.
  double item() const;
  // Element read by multi-index, as double. Test/IO convenience.
  double at(std::initializer_list<std::int64_t> index) const;
  double at_flat(std::int64_t i) const;

  std::vector<double> to_vector() const;

  Tensor clone() const;          // deep copy, never tracked
  Tensor to(DType dtype) const;  // dtype cast, never tracked
  Tensor reshape(Shape shape) const;  // differentiable view copy

  bool same_bits(const Tensor& other) const;

  std::shared_ptr<detail::TensorImpl> impl() const { return impl_; }
  static Tensor wrap(std::shared_ptr<detail::TensorImpl> impl) {
    Tensor t;
    t.impl_ = std::move(impl);
    return t;
  }

 private:
  template <typename T>
  void check_dtype_access() const;
  std::shared_ptr<detail::TensorImpl> impl_;
};

// ---- elementwise / shape operations (all differentiable) -------------------

// Cyclic shift along `axis`: output index i takes input index (i - shift) mod extent.
Tensor roll(const Tensor& x, std::int64_t shift, std::int64_t axis);
Tensor concat(std::span<const Tensor> parts, std::int64_t axis);
Tensor concat(std::initializer_list<Tensor> parts, std::int64_t axis);
// Channels [lo, hi) of an NCHW tensor.
Tensor slice_channels(const Tensor& x, std::int64_t lo, std::int64_t hi);
// Functional update: copy of x with channels [lo, hi) replaced by v.
Tensor assign_channels(const Tensor& x, std::int64_t lo, std::int64_t hi, const Tensor& v);

Tensor add(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, double s);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, double s);
Tensor sub(double s, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, double s);
Tensor tanh(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor mean(const Tensor& x);  // scalar tensor
Tensor sum(const Tensor& x);   // scalar tensor

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator*(const Tensor& a, double s) { return mul(a, s); }
inline Tensor operator*(double s, const Tensor& a) { return mul(a, s); }

// Backward through the active graph. Loss must be a one-element tensor.
void backward(const Tensor& loss);

// Max over coordinates of |analytic - central difference| /
// max(1e-12, |analytic| + |numeric|). f must map x (f64) to a scalar tensor.
double gradcheck(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                 double step = 1e-5);

// Debug-mode finiteness checking of op outputs. Defaults to on in builds
// without NDEBUG; tests can force it either way.
void set_debug_finite_checks(bool enabled);
bool debug_finite_checks_enabled();

namespace detail {
// Shared by op implementations: validates finiteness when checks are on,
// and records an autodiff node when a graph is active and inputs are tracked.
void finish_op(const char* name, std::span<const Tensor> inputs, Tensor& output,
               std::function<void()> backward_fn);
void accumulate_grad_raw(TensorImpl& t, const void* values);
}  // namespace detail

}  // namespace sg
