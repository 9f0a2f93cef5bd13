#include "sg/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <sstream>

#include "sg/kernels.hpp"
#include "sg/random.hpp"

namespace sg {

using detail::TensorImpl;
using i64 = std::int64_t;

std::int64_t shape_numel(const Shape& shape) {
  i64 n = 1;
  for (i64 e : shape) n *= e;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ",";
    os << shape[i];
  }
  os << ")";
  return os.str();
}

namespace {

template <class F>
void dispatch(DType dt, F&& f) {
  if (dt == DType::F32) {
    f(float{});
  } else {
    f(double{});
  }
}

std::shared_ptr<TensorImpl> make_impl(Shape shape, DType dtype) {
  for (i64 e : shape) {
    if (e <= 0) throw ShapeError("tensor extents must be positive, got " + shape_str(shape));
  }
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->dtype = dtype;
  impl->data.resize(static_cast<std::size_t>(impl->numel()) * dtype_size(dtype));
  return impl;
}

// outer x axis_extent x inner decomposition of a row-major tensor.
void axis_split(const Shape& shape, i64 axis, i64& outer, i64& n, i64& inner) {
  outer = 1;
  for (i64 i = 0; i < axis; ++i) outer *= shape[i];
  n = shape[axis];
  inner = 1;
  for (std::size_t i = static_cast<std::size_t>(axis) + 1; i < shape.size(); ++i)
    inner *= shape[i];
}

bool wants_grad(const TensorImpl& t) { return t.requires_grad || t.tracked; }

thread_local GradGraph* g_active_graph = nullptr;

bool g_finite_checks =
#ifdef NDEBUG
    false;
#else
    true;
#endif

void check_finite(const char* op, const TensorImpl& t) {
  dispatch(t.dtype, [&](auto tag) {
    using T = decltype(tag);
    const T* p = t.ptr<T>();
    const i64 n = t.numel();
    for (i64 i = 0; i < n; ++i) {
      if (!std::isfinite(p[i])) {
        throw NumericError(std::string("non-finite value in output of ") + op);
      }
    }
  });
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                     " vs " + shape_str(b.shape()));
  }
  if (a.dtype() != b.dtype()) {
    throw ShapeError(std::string(op) + ": dtype mismatch");
  }
}

template <typename T>
void accumulate(TensorImpl& t, const T* vals) {
  t.ensure_grad();
  T* g = t.grad_ptr<T>();
  const i64 n = t.numel();
#pragma omp parallel for
  for (i64 i = 0; i < n; ++i) g[i] += vals[i];
}

}  // namespace

namespace detail {

void TensorImpl::ensure_grad() {
  if (!has_grad) {
    grad.assign(data.size(), std::byte{0});
    has_grad = true;
  }
}

void TensorImpl::clear_grad() {
  grad.clear();
  grad.shrink_to_fit();
  has_grad = false;
}

void finish_op(const char* name, std::span<const Tensor> inputs, Tensor& output,
               std::function<void()> backward_fn) {
  if (g_finite_checks) check_finite(name, *output.impl());
  GradGraph* graph = GradGraph::active();
  if (!graph) return;
  bool any = false;
  for (const Tensor& in : inputs) {
    if (wants_grad(*in.impl())) {
      any = true;
      break;
    }
  }
  if (!any) return;
  output.impl()->tracked = true;
  GradGraph::Node node;
  node.inputs.reserve(inputs.size());
  for (const Tensor& in : inputs) node.inputs.push_back(in.impl());
  node.output = output.impl();
  node.backward = std::move(backward_fn);
  graph->record(std::move(node));
}

void accumulate_grad_raw(TensorImpl& t, const void* values) {
  dispatch(t.dtype, [&](auto tag) {
    using T = decltype(tag);
    accumulate<T>(t, static_cast<const T*>(values));
  });
}

}  // namespace detail

// ---- GradGraph --------------------------------------------------------------

GradGraph::GradGraph() {
  if (g_active_graph) {
    throw StateError("a GradGraph is already active; one graph per step");
  }
  g_active_graph = this;
}

GradGraph::~GradGraph() {
  if (g_active_graph == this) g_active_graph = nullptr;
}

GradGraph* GradGraph::active() { return g_active_graph; }

void GradGraph::record(Node node) {
  if (consumed_) {
    throw StateError("recording onto a consumed GradGraph");
  }
  nodes_.push_back(std::move(node));
}

void GradGraph::backward(const Tensor& loss) {
  if (consumed_) throw StateError("backward called twice on the same GradGraph");
  if (!loss.defined() || loss.numel() != 1) {
    throw ArgumentError("backward: loss must have exactly one element");
  }
  // Reset every gradient this graph can touch, then accumulate fresh.
  for (Node& n : nodes_) {
    n.output->clear_grad();
    for (auto& in : n.inputs) in->clear_grad();
  }
  loss.impl()->clear_grad();
  loss.impl()->ensure_grad();
  dispatch(loss.dtype(), [&](auto tag) {
    using T = decltype(tag);
    loss.impl()->grad_ptr<T>()[0] = T(1);
  });
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    if (it->output->has_grad) it->backward();
  }
  nodes_.clear();
  consumed_ = true;
}

void backward(const Tensor& loss) {
  GradGraph* g = GradGraph::active();
  if (!g) throw StateError("backward: no active GradGraph");
  g->backward(loss);
}

// ---- Tensor -----------------------------------------------------------------

Tensor Tensor::zeros(Shape shape, DType dtype) {
  return wrap(make_impl(std::move(shape), dtype));
}

Tensor Tensor::full(Shape shape, double value, DType dtype) {
  auto impl = make_impl(std::move(shape), dtype);
  dispatch(dtype, [&](auto tag) {
    using T = decltype(tag);
    std::fill_n(impl->ptr<T>(), impl->numel(), static_cast<T>(value));
  });
  return wrap(std::move(impl));
}

Tensor Tensor::from_data(Shape shape, std::span<const float> values) {
  auto impl = make_impl(std::move(shape), DType::F32);
  if (static_cast<i64>(values.size()) != impl->numel()) {
    throw ShapeError("from_data: value count does not match shape");
  }
  std::memcpy(impl->data.data(), values.data(), values.size_bytes());
  return wrap(std::move(impl));
}

Tensor Tensor::from_data(Shape shape, std::span<const double> values) {
  auto impl = make_impl(std::move(shape), DType::F64);
  if (static_cast<i64>(values.size()) != impl->numel()) {
    throw ShapeError("from_data: value count does not match shape");
  }
  std::memcpy(impl->data.data(), values.data(), values.size_bytes());
  return wrap(std::move(impl));
}

Tensor Tensor::uniform(Shape shape, double lo, double hi, std::uint64_t seed,
                       DType dtype) {
  if (!(lo < hi)) throw ArgumentError("uniform: requires lo < hi");
  auto impl = make_impl(std::move(shape), dtype);
  const i64 n = impl->numel();
  dispatch(dtype, [&](auto tag) {
    using T = decltype(tag);
    T* p = impl->ptr<T>();
    const T hi_t = static_cast<T>(hi);
    const T lo_t = static_cast<T>(lo);
#pragma omp parallel for
    for (i64 i = 0; i < n; ++i) {
      const double u = counter_rand_unit(seed, static_cast<std::uint64_t>(i));
      T v = static_cast<T>(lo + u * (hi - lo));
      // rounding of the cast may land exactly on hi; keep the interval half-open
      if (v >= hi_t) v = std::nextafter(hi_t, lo_t);
      if (v < lo_t) v = lo_t;
      p[i] = v;
    }
  });
  return wrap(std::move(impl));
}

std::int64_t Tensor::extent(std::int64_t axis) const {
  if (axis < 0 || axis >= rank()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for rank " +
                     std::to_string(rank()));
  }
  return impl_->shape[static_cast<std::size_t>(axis)];
}

void Tensor::set_requires_grad(bool value) { impl_->requires_grad = value; }

Tensor Tensor::grad() const {
  Tensor g = zeros(impl_->shape, impl_->dtype);
  if (impl_->has_grad) {
    std::memcpy(g.impl()->data.data(), impl_->grad.data(), impl_->grad.size());
  }
  return g;
}

template <typename T>
void Tensor::check_dtype_access() const {
  const bool ok = (std::is_same_v<T, float> && impl_->dtype == DType::F32) ||
                  (std::is_same_v<T, double> && impl_->dtype == DType::F64);
  if (!ok) throw ArgumentError("typed data() access does not match tensor dtype");
}
template void Tensor::check_dtype_access<float>() const;
template void Tensor::check_dtype_access<double>() const;

double Tensor::item() const {
  if (numel() != 1) throw ArgumentError("item: tensor has more than one element");
  return at_flat(0);
}

double Tensor::at_flat(std::int64_t i) const {
  if (i < 0 || i >= numel()) throw ArgumentError("at_flat: index out of range");
  double v = 0;
  dispatch(impl_->dtype, [&](auto tag) {
    using T = decltype(tag);
    v = static_cast<double>(impl_->ptr<T>()[i]);
  });
  return v;
}

double Tensor::at(std::initializer_list<std::int64_t> index) const {
  if (static_cast<i64>(index.size()) != rank()) {
    throw ShapeError("at: index rank mismatch");
  }
  i64 flat = 0;
  i64 stride = 1;
  const auto& shape = impl_->shape;
  auto it = index.end();
  for (i64 a = rank() - 1; a >= 0; --a) {
    --it;
    const i64 idx = *it;
    if (idx < 0 || idx >= shape[static_cast<std::size_t>(a)]) {
      throw ShapeError("at: index out of range");
    }
    flat += idx * stride;
    stride *= shape[static_cast<std::size_t>(a)];
  }
  return at_flat(flat);
}

std::vector<double> Tensor::to_vector() const {
  std::vector<double> out(static_cast<std::size_t>(numel()));
  dispatch(impl_->dtype, [&](auto tag) {
    using T = decltype(tag);
    const T* p = impl_->ptr<T>();
    for (i64 i = 0; i < numel(); ++i) out[static_cast<std::size_t>(i)] = p[i];
  });
  return out;
}

Tensor Tensor::clone() const {
  auto impl = make_impl(impl_->shape, impl_->dtype);
  impl->data = impl_->data;
  return wrap(std::move(impl));
}

Tensor Tensor::to(DType dtype) const {
  if (dtype == impl_->dtype) return clone();
  auto impl = make_impl(impl_->shape, dtype);
  const i64 n = numel();
  if (dtype == DType::F64) {
    const float* src = impl_->ptr<float>();
    double* dst = impl->ptr<double>();
    for (i64 i = 0; i < n; ++i) dst[i] = src[i];
  } else {
    const double* src = impl_->ptr<double>();
    float* dst = impl->ptr<float>();
    for (i64 i = 0; i < n; ++i) dst[i] = static_cast<float>(src[i]);
  }
  return wrap(std::move(impl));
}

bool Tensor::same_bits(const Tensor& other) const {
  if (!defined() || !other.defined()) return defined() == other.defined();
  return impl_->dtype == other.impl_->dtype && impl_->shape == other.impl_->shape &&
         impl_->data == other.impl_->data;
}

Tensor Tensor::reshape(Shape shape) const {
  if (shape_numel(shape) != numel()) {
    throw ShapeError("reshape: element count mismatch " + shape_str(impl_->shape) +
                     " -> " + shape_str(shape));
  }
  auto impl = make_impl(std::move(shape), impl_->dtype);
  impl->data = impl_->data;
  Tensor out = wrap(std::move(impl));
  auto in_impl = impl_;
  auto out_impl = out.impl();
  const Tensor self = *this;
  detail::finish_op("reshape", std::span<const Tensor>(&self, 1), out,
                    [in_impl, out_impl]() {
                      if (!wants_grad(*in_impl)) return;
                      detail::accumulate_grad_raw(*in_impl, out_impl->grad.data());
                    });
  return out;
}

// ---- ops --------------------------------------------------------------------

namespace {

template <typename T>
void roll_copy(const T* x, T* y, i64 outer, i64 n, i64 inner, i64 shift) {
  shift = ((shift % n) + n) % n;
#pragma omp parallel for collapse(2)
  for (i64 o = 0; o < outer; ++o) {
    for (i64 j = 0; j < n; ++j) {
      i64 src = j - shift;
      if (src < 0) src += n;
      std::memcpy(y + (o * n + j) * inner, x + (o * n + src) * inner,
                  static_cast<std::size_t>(inner) * sizeof(T));
    }
  }
}

}  // namespace

Tensor roll(const Tensor& x, std::int64_t shift, std::int64_t axis) {
  if (axis < 0 || axis >= x.rank()) {
    throw ShapeError("roll: axis " + std::to_string(axis) + " out of range for rank " +
                     std::to_string(x.rank()));
  }
  i64 outer, n, inner;
  axis_split(x.shape(), axis, outer, n, inner);
  Tensor out = Tensor::zeros(x.shape(), x.dtype());
  dispatch(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    roll_copy<T>(x.impl()->ptr<T>(), out.impl()->ptr<T>(), outer, n, inner, shift);
  });
  auto xi = x.impl();
  auto oi = out.impl();
  detail::finish_op("roll", std::span<const Tensor>(&x, 1), out,
                    [xi, oi, outer, n, inner, shift]() {
                      if (!wants_grad(*xi)) return;
                      dispatch(xi->dtype, [&](auto tag) {
                        using T = decltype(tag);
                        std::vector<T> tmp(static_cast<std::size_t>(xi->numel()));
                        roll_copy<T>(oi->grad_ptr<T>(), tmp.data(), outer, n, inner,
                                     -shift);
                        accumulate<T>(*xi, tmp.data());
                      });
                    });
  return out;
}

Tensor concat(std::span<const Tensor> parts, std::int64_t axis) {
  if (parts.empty()) throw ArgumentError("concat: empty part list");
  const Tensor& first = parts[0];
  if (axis < 0 || axis >= first.rank()) {
    throw ShapeError("concat: axis out of range");
  }
  i64 total = 0;
  for (const Tensor& p : parts) {
    if (p.rank() != first.rank() || p.dtype() != first.dtype()) {
      throw ShapeError("concat: rank/dtype mismatch among parts");
    }
    for (i64 a = 0; a < first.rank(); ++a) {
      if (a == axis) continue;
      if (p.extent(a) != first.extent(a)) {
        throw ShapeError("concat: extent mismatch off the concat axis: " +
                         shape_str(p.shape()) + " vs " + shape_str(first.shape()));
      }
    }
    total += p.extent(axis);
  }
  Shape out_shape = first.shape();
  out_shape[static_cast<std::size_t>(axis)] = total;
  Tensor out = Tensor::zeros(out_shape, first.dtype());

  i64 outer, n_out, inner;
  axis_split(out_shape, axis, outer, n_out, inner);
  dispatch(first.dtype(), [&](auto tag) {
    using T = decltype(tag);
    T* dst = out.impl()->ptr<T>();
    i64 offset = 0;
    for (const Tensor& p : parts) {
      const i64 np = p.extent(axis);
      const T* src = p.impl()->ptr<T>();
      for (i64 o = 0; o < outer; ++o) {
        std::memcpy(dst + (o * n_out + offset) * inner, src + o * np * inner,
                    static_cast<std::size_t>(np * inner) * sizeof(T));
      }
      offset += np;
    }
  });

  std::vector<std::shared_ptr<TensorImpl>> part_impls;
  part_impls.reserve(parts.size());
  for (const Tensor& p : parts) part_impls.push_back(p.impl());
  auto oi = out.impl();
  detail::finish_op("concat", parts, out, [part_impls, oi, outer, n_out, inner, axis]() {
    dispatch(oi->dtype, [&](auto tag) {
      using T = decltype(tag);
      const T* g = oi->grad_ptr<T>();
      i64 offset = 0;
      for (auto& pi : part_impls) {
        const i64 np = pi->shape[static_cast<std::size_t>(axis)];
        if (wants_grad(*pi)) {
          std::vector<T> tmp(static_cast<std::size_t>(pi->numel()));
          for (i64 o = 0; o < outer; ++o) {
            std::memcpy(tmp.data() + o * np * inner, g + (o * n_out + offset) * inner,
                        static_cast<std::size_t>(np * inner) * sizeof(T));
          }
          accumulate<T>(*pi, tmp.data());
        }
        offset += np;
      }
    });
  });
  return out;
}

Tensor concat(std::initializer_list<Tensor> parts, std::int64_t axis) {
  return concat(std::span<const Tensor>(parts.begin(), parts.size()), axis);
}

namespace {

void check_channel_range(const Tensor& x, i64 lo, i64 hi) {
  if (x.rank() < 2) throw ShapeError("channel ops require rank >= 2 (N, C, ...)");
  const i64 c = x.extent(1);
  if (!(0 <= lo && lo < hi && hi <= c)) {
    throw ShapeError("channel range [" + std::to_string(lo) + "," + std::to_string(hi) +
                     ") invalid for " + std::to_string(c) + " channels");
  }
}

}  // namespace

Tensor slice_channels(const Tensor& x, std::int64_t lo, std::int64_t hi) {
  check_channel_range(x, lo, hi);
  Shape out_shape = x.shape();
  out_shape[1] = hi - lo;
  const i64 batch = x.extent(0);
  const i64 c = x.extent(1);
  i64 inner = 1;
  for (i64 a = 2; a < x.rank(); ++a) inner *= x.extent(a);
  Tensor out = Tensor::zeros(out_shape, x.dtype());
  dispatch(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    const T* src = x.impl()->ptr<T>();
    T* dst = out.impl()->ptr<T>();
    for (i64 b = 0; b < batch; ++b) {
      std::memcpy(dst + b * (hi - lo) * inner, src + (b * c + lo) * inner,
                  static_cast<std::size_t>((hi - lo) * inner) * sizeof(T));
    }
  });
  auto xi = x.impl();
  auto oi = out.impl();
  detail::finish_op("slice_channels", std::span<const Tensor>(&x, 1), out,
                    [xi, oi, batch, c, inner, lo, hi]() {
                      if (!wants_grad(*xi)) return;
                      dispatch(xi->dtype, [&](auto tag) {
                        using T = decltype(tag);
                        const T* g = oi->grad_ptr<T>();
                        std::vector<T> tmp(static_cast<std::size_t>(xi->numel()), T(0));
                        for (i64 b = 0; b < batch; ++b) {
                          std::memcpy(tmp.data() + (b * c + lo) * inner,
                                      g + b * (hi - lo) * inner,
                                      static_cast<std::size_t>((hi - lo) * inner) *
                                          sizeof(T));
                        }
                        accumulate<T>(*xi, tmp.data());
                      });
                    });
  return out;
}

Tensor assign_channels(const Tensor& x, std::int64_t lo, std::int64_t hi,
                       const Tensor& v) {
  check_channel_range(x, lo, hi);
  Shape expect = x.shape();
  expect[1] = hi - lo;
  if (v.shape() != expect || v.dtype() != x.dtype()) {
    throw ShapeError("assign_channels: replacement shape " + shape_str(v.shape()) +
                     " does not match " + shape_str(expect));
  }
  const i64 batch = x.extent(0);
  const i64 c = x.extent(1);
  i64 inner = 1;
  for (i64 a = 2; a < x.rank(); ++a) inner *= x.extent(a);
  Tensor out = x.clone();
  dispatch(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    const T* src = v.impl()->ptr<T>();
    T* dst = out.impl()->ptr<T>();
    for (i64 b = 0; b < batch; ++b) {
      std::memcpy(dst + (b * c + lo) * inner, src + b * (hi - lo) * inner,
                  static_cast<std::size_t>((hi - lo) * inner) * sizeof(T));
    }
  });
  auto xi = x.impl();
  auto vi = v.impl();
  auto oi = out.impl();
  const Tensor ins[2] = {x, v};
  detail::finish_op("assign_channels", std::span<const Tensor>(ins, 2), out,
                    [xi, vi, oi, batch, c, inner, lo, hi]() {
                      dispatch(oi->dtype, [&](auto tag) {
                        using T = decltype(tag);
                        const T* g = oi->grad_ptr<T>();
                        if (wants_grad(*xi)) {
                          // gradient passes through everywhere except the
                          // overwritten channel range
                          std::vector<T> tmp(g, g + xi->numel());
                          for (i64 b = 0; b < batch; ++b) {
                            std::fill_n(tmp.data() + (b * c + lo) * inner,
                                        (hi - lo) * inner, T(0));
                          }
                          accumulate<T>(*xi, tmp.data());
                        }
                        if (wants_grad(*vi)) {
                          std::vector<T> tmp(static_cast<std::size_t>(vi->numel()));
                          for (i64 b = 0; b < batch; ++b) {
                            std::memcpy(tmp.data() + b * (hi - lo) * inner,
                                        g + (b * c + lo) * inner,
                                        static_cast<std::size_t>((hi - lo) * inner) *
                                            sizeof(T));
                          }
                          accumulate<T>(*vi, tmp.data());
                        }
                      });
                    });
  return out;
}

// Binary elementwise with hand-written backward rules.
namespace {

enum class BinOp { Add, Sub, Mul };

Tensor binary_op(const char* name, BinOp op, const Tensor& a, const Tensor& b) {
  require_same_shape(name, a, b);
  Tensor out = Tensor::zeros(a.shape(), a.dtype());
  const i64 n = a.numel();
  dispatch(a.dtype(), [&](auto tag) {
    using T = decltype(tag);
    const T* pa = a.impl()->ptr<T>();
    const T* pb = b.impl()->ptr<T>();
    T* po = out.impl()->ptr<T>();
#pragma omp parallel for
    for (i64 i = 0; i < n; ++i) {
      switch (op) {
        case BinOp::Add: po[i] = pa[i] + pb[i]; break;
        case BinOp::Sub: po[i] = pa[i] - pb[i]; break;
        case BinOp::Mul: po[i] = pa[i] * pb[i]; break;
      }
    }
  });
  auto ai = a.impl();
  auto bi = b.impl();
  auto oi = out.impl();
  const Tensor ins[2] = {a, b};
  detail::finish_op(name, std::span<const Tensor>(ins, 2), out, [ai, bi, oi, op, n]() {
    dispatch(oi->dtype, [&](auto tag) {
      using T = decltype(tag);
      const T* g = oi->grad_ptr<T>();
      if (wants_grad(*ai)) {
        if (op == BinOp::Mul) {
          std::vector<T> tmp(static_cast<std::size_t>(n));
          const T* pb = bi->ptr<T>();
#pragma omp parallel for
          for (i64 i = 0; i < n; ++i) tmp[static_cast<std::size_t>(i)] = g[i] * pb[i];
          accumulate<T>(*ai, tmp.data());
        } else {
          accumulate<T>(*ai, g);
        }
      }
      if (wants_grad(*bi)) {
        std::vector<T> tmp(static_cast<std::size_t>(n));
        const T* pa = ai->ptr<T>();
#pragma omp parallel for
        for (i64 i = 0; i < n; ++i) {
          switch (op) {
            case BinOp::Add: tmp[static_cast<std::size_t>(i)] = g[i]; break;
            case BinOp::Sub: tmp[static_cast<std::size_t>(i)] = -g[i]; break;
            case BinOp::Mul: tmp[static_cast<std::size_t>(i)] = g[i] * pa[i]; break;
          }
        }
        accumulate<T>(*bi, tmp.data());
      }
    });
  });
  return out;
}

// out = s0 + s1 * a  (covers all scalar variants)
Tensor affine_op(const char* name, const Tensor& a, double s0, double s1) {
  Tensor out = Tensor::zeros(a.shape(), a.dtype());
  const i64 n = a.numel();
  dispatch(a.dtype(), [&](auto tag) {
    using T = decltype(tag);
    const T* pa = a.impl()->ptr<T>();
    T* po = out.impl()->ptr<T>();
    const T c0 = static_cast<T>(s0);
    const T c1 = static_cast<T>(s1);
#pragma omp parallel for
    for (i64 i = 0; i < n; ++i) po[i] = c0 + c1 * pa[i];
  });
  auto ai = a.impl();
  auto oi = out.impl();
  detail::finish_op(name, std::span<const Tensor>(&a, 1), out, [ai, oi, s1, n]() {
    if (!wants_grad(*ai)) return;
    dispatch(oi->dtype, [&](auto tag) {
      using T = decltype(tag);
      const T* g = oi->grad_ptr<T>();
      std::vector<T> tmp(static_cast<std::size_t>(n));
      const T c1 = static_cast<T>(s1);
#pragma omp parallel for
      for (i64 i = 0; i < n; ++i) tmp[static_cast<std::size_t>(i)] = c1 * g[i];
      accumulate<T>(*ai, tmp.data());
    });
  });
  return out;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary_op("add", BinOp::Add, a, b); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary_op("sub", BinOp::Sub, a, b); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary_op("mul", BinOp::Mul, a, b); }
Tensor add(const Tensor& a, double s) { return affine_op("add_scalar", a, s, 1.0); }
Tensor sub(const Tensor& a, double s) { return affine_op("sub_scalar", a, -s, 1.0); }
Tensor sub(double s, const Tensor& b) { return affine_op("rsub_scalar", b, s, -1.0); }
Tensor mul(const Tensor& a, double s) { return affine_op("mul_scalar", a, 0.0, s); }

namespace {

// Unary pointwise op whose derivative is a function of the output value.
template <class Fwd, class Dydx>
Tensor unary_op(const char* name, const Tensor& x, Fwd fwd, Dydx dydx) {
  Tensor out = Tensor::zeros(x.shape(), x.dtype());
  const i64 n = x.numel();
  dispatch(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    const T* px = x.impl()->ptr<T>();
    T* po = out.impl()->ptr<T>();
#pragma omp parallel for
    for (i64 i = 0; i < n; ++i) po[i] = static_cast<T>(fwd(static_cast<double>(px[i])));
  });
  auto xi = x.impl();
  auto oi = out.impl();
  detail::finish_op(name, std::span<const Tensor>(&x, 1), out, [xi, oi, dydx, n]() {
    if (!wants_grad(*xi)) return;
    dispatch(oi->dtype, [&](auto tag) {
      using T = decltype(tag);
      const T* g = oi->grad_ptr<T>();
      const T* y = oi->ptr<T>();
      std::vector<T> tmp(static_cast<std::size_t>(n));
#pragma omp parallel for
      for (i64 i = 0; i < n; ++i) {
        tmp[static_cast<std::size_t>(i)] =
            g[i] * static_cast<T>(dydx(static_cast<double>(y[i])));
      }
      accumulate<T>(*xi, tmp.data());
    });
  });
  return out;
}

double stable_sigmoid(double t) {
  if (t >= 0) {
    return 1.0 / (1.0 + std::exp(-t));
  }
  const double e = std::exp(t);
  return e / (1.0 + e);
}

}  // namespace

Tensor tanh(const Tensor& x) {
  return unary_op(
      "tanh", x, [](double t) { return std::tanh(t); },
      [](double y) { return 1.0 - y * y; });
}

Tensor sigmoid(const Tensor& x) {
  return unary_op(
      "sigmoid", x, [](double t) { return stable_sigmoid(t); },
      [](double y) { return y * (1.0 - y); });
}

namespace {

Tensor reduction_op(const char* name, const Tensor& x, bool take_mean) {
  Tensor out = Tensor::zeros(Shape{}, x.dtype());
  const i64 n = x.numel();
  dispatch(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    T total = kernels::reduce_sum<T>(x.impl()->ptr<T>(), n);
    if (take_mean) total /= static_cast<T>(n);
    out.impl()->ptr<T>()[0] = total;
  });
  auto xi = x.impl();
  auto oi = out.impl();
  detail::finish_op(name, std::span<const Tensor>(&x, 1), out, [xi, oi, take_mean, n]() {
    if (!wants_grad(*xi)) return;
    dispatch(oi->dtype, [&](auto tag) {
      using T = decltype(tag);
      const T g = oi->grad_ptr<T>()[0];
      const T per = take_mean ? g / static_cast<T>(n) : g;
      xi->ensure_grad();
      T* gx = xi->grad_ptr<T>();
#pragma omp parallel for
      for (i64 i = 0; i < n; ++i) gx[i] += per;
    });
  });
  return out;
}

}  // namespace

Tensor mean(const Tensor& x) { return reduction_op("mean", x, true); }
Tensor sum(const Tensor& x) { return reduction_op("sum", x, false); }

// ---- gradcheck ----------------------------------------------------------------

double gradcheck(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                 double step) {
  if (x.dtype() != DType::F64) {
    throw ArgumentError("gradcheck: x must be f64");
  }
  Tensor xt = x.clone();
  xt.set_requires_grad(true);
  Tensor analytic;
  {
    GradGraph graph;
    Tensor y = f(xt);
    if (y.numel() != 1) {
      throw ArgumentError("gradcheck: f must produce a scalar");
    }
    graph.backward(y);
    analytic = xt.grad();
  }
  const auto base = x.data<double>();
  std::vector<double> probe(base.begin(), base.end());
  const auto ga = analytic.data<double>();
  double max_rel = 0.0;
  for (i64 i = 0; i < x.numel(); ++i) {
    const std::size_t ui = static_cast<std::size_t>(i);
    probe[ui] = base[ui] + step;
    const double fp = f(Tensor::from_data(x.shape(), probe)).item();
    probe[ui] = base[ui] - step;
    const double fm = f(Tensor::from_data(x.shape(), probe)).item();
    probe[ui] = base[ui];
    const double numeric = (fp - fm) / (2.0 * step);
    const double a = ga[ui];
    const double rel =
        std::abs(a - numeric) / std::max(1e-12, std::abs(a) + std::abs(numeric));
    max_rel = std::max(max_rel, rel);
  }
  return max_rel;
}

void set_debug_finite_checks(bool enabled) { g_finite_checks = enabled; }
bool debug_finite_checks_enabled() { return g_finite_checks; }

}  // namespace sg
