#pragma once

// Dense tensors and a reverse-mode tape covering exactly the primitives the
// encoder / projector / predictor networks use. Instantiated for float
// (training) and double (gradient checks).

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace rei::tensor {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& s);
std::size_t shape_count(const Shape& s);

template <class T>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0));
  Tensor(Shape shape, std::vector<T> values);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const { return values_.size(); }
  bool empty() const { return values_.empty(); }

  T* data() { return values_.data(); }
  const T* data() const { return values_.data(); }
  std::span<T> values() { return values_; }
  std::span<const T> values() const { return values_; }
  T& operator[](std::size_t i) { return values_[i]; }
  T operator[](std::size_t i) const { return values_[i]; }

  void fill(T v);
  Tensor reshaped(Shape shape) const;

  template <class U>
  Tensor<U> cast() const {
    Tensor<U> out(shape_);
    for (std::size_t i = 0; i < values_.size(); ++i) out[i] = static_cast<U>(values_[i]);
    return out;
  }

 private:
  Shape shape_;
  std::vector<T> values_;
};

// ---- raw kernels (no tape) -------------------------------------------------

struct ConvGeometry {
  std::size_t channels = 0, height = 0, width = 0;
  std::size_t out_channels = 0, kernel = 3, stride = 1, pad = 1;
  std::size_t out_height() const { return (height + 2 * pad - kernel) / stride + 1; }
  std::size_t out_width() const { return (width + 2 * pad - kernel) / stride + 1; }
  std::size_t col_rows() const { return channels * kernel * kernel; }
  std::size_t col_cols() const { return out_height() * out_width(); }
};

template <class T>
void im2col(const T* in, const ConvGeometry& g, T* cols);
template <class T>
void col2im_add(const T* cols, const ConvGeometry& g, T* in_grad);
// out[O, Ho*Wo] = weight[O, C*k*k] * cols + bias
template <class T>
void conv2d_forward(const T* in, const T* weight, const T* bias, const ConvGeometry& g, T* cols, T* out);

// ---- tape ------------------------------------------------------------------

struct Var {
  std::uint32_t id = 0;
};

enum class Op : std::uint8_t {
  leaf,
  conv2d,
  relu,
  leaky_relu,
  matmul,
  add,
  scale,
  global_avg_pool,
  l2_normalize,
  cosine_distance,
  stop_gradient,
};

template <class T>
class Tape {
 public:
  Var leaf(Tensor<T> value, bool requires_grad = false);

  // in [C,H,W], kernel [O,C,k,k], bias [O] -> [O,Ho,Wo]
  Var conv2d(Var in, Var kernel, Var bias, std::size_t stride = 1, std::size_t pad = 1);
  Var relu(Var x);
  Var leaky_relu(Var x, T slope = T(0.01));
  // [m,k] x [k,n] -> [m,n]; [m,k] x [k] -> [m]
  Var matmul(Var a, Var b);
  Var add(Var a, Var b);
  Var scale(Var x, T factor);
  // [C,H,W] -> [C]
  Var global_avg_pool(Var x);
  // rank-1; ZeroVector when the norm is below 1e-12
  Var l2_normalize(Var x);
  // 1 - <a,b>/(|a||b|), shape [1]
  Var cosine_distance(Var a, Var b);
  Var stop_gradient(Var x);

  void backward(Var root);

  const Tensor<T>& value(Var v) const { return nodes_.at(v.id).value; }
  // Zero-filled when the node received no gradient.
  const Tensor<T>& grad(Var v) const;
  bool needs_grad(Var v) const { return nodes_.at(v.id).needs_grad; }
  Op op(Var v) const { return nodes_.at(v.id).op; }
  std::size_t size() const { return nodes_.size(); }
  std::size_t last_backward_visits() const { return visits_; }

 private:
  struct Node {
    Op op = Op::leaf;
    std::uint32_t in[3] = {0, 0, 0};
    Tensor<T> value;
    Tensor<T> grad;
    bool needs_grad = false;
    T param = T(0);
    ConvGeometry geom;
    std::vector<T> aux;
  };

  Var push(Node n);
  Node& node(Var v) { return nodes_.at(v.id); }
  Tensor<T>& grad_buffer(std::uint32_t id);
  void backprop(std::uint32_t id);

  std::vector<Node> nodes_;
  mutable Tensor<T> zero_grad_;
  std::size_t visits_ = 0;
};

// p <- p - lr * g
template <class T>
void sgd_step(Tensor<T>& param, const Tensor<T>& grad, T lr);

extern template class Tensor<float>;
extern template class Tensor<double>;
extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace rei::tensor
