#include "rei/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "rei/error.hpp"

namespace rei::tensor {

namespace {

[[noreturn]] void shape_error(const char* prim, const Shape& a, const Shape& b) {
  throw Error(Errc::shape_mismatch, std::string(prim) + ": " + shape_str(a) + " vs " + shape_str(b));
}

constexpr double kZeroNorm = 1e-12;

}  // namespace

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

std::size_t shape_count(const Shape& s) {
  std::size_t n = 1;
  for (auto d : s) n *= d;
  return n;
}

template <class T>
Tensor<T>::Tensor(Shape shape, T fill) : shape_(std::move(shape)), values_(shape_count(shape_), fill) {}

template <class T>
Tensor<T>::Tensor(Shape shape, std::vector<T> values) : shape_(std::move(shape)), values_(std::move(values)) {
  if (values_.size() != shape_count(shape_)) {
    throw Error(Errc::shape_mismatch, "tensor: " + std::to_string(values_.size()) +
                                          " values for shape " + shape_str(shape_));
  }
}

template <class T>
void Tensor<T>::fill(T v) {
  std::fill(values_.begin(), values_.end(), v);
}

template <class T>
Tensor<T> Tensor<T>::reshaped(Shape shape) const {
  if (shape_count(shape) != values_.size()) shape_error("reshape", shape_, shape);
  return Tensor<T>(std::move(shape), values_);
}

// ---- kernels ---------------------------------------------------------------

template <class T>
void im2col(const T* in, const ConvGeometry& g, T* cols) {
  const std::size_t ho = g.out_height(), wo = g.out_width(), k = g.kernel;
  const auto pad = static_cast<std::ptrdiff_t>(g.pad);
  for (std::size_t c = 0; c < g.channels; ++c) {
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        T* row = cols + ((c * k + ky) * k + kx) * ho * wo;
        for (std::size_t y = 0; y < ho; ++y) {
          const std::ptrdiff_t iy = std::ptrdiff_t(y * g.stride + ky) - pad;
          T* dst = row + y * wo;
          if (iy < 0 || iy >= std::ptrdiff_t(g.height)) {
            std::fill(dst, dst + wo, T(0));
            continue;
          }
          const T* src = in + (c * g.height + std::size_t(iy)) * g.width;
          for (std::size_t x = 0; x < wo; ++x) {
            const std::ptrdiff_t ix = std::ptrdiff_t(x * g.stride + kx) - pad;
            dst[x] = (ix < 0 || ix >= std::ptrdiff_t(g.width)) ? T(0) : src[ix];
          }
        }
      }
    }
  }
}

template <class T>
void col2im_add(const T* cols, const ConvGeometry& g, T* in_grad) {
  const std::size_t ho = g.out_height(), wo = g.out_width(), k = g.kernel;
  const auto pad = static_cast<std::ptrdiff_t>(g.pad);
  for (std::size_t c = 0; c < g.channels; ++c) {
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        const T* row = cols + ((c * k + ky) * k + kx) * ho * wo;
        for (std::size_t y = 0; y < ho; ++y) {
          const std::ptrdiff_t iy = std::ptrdiff_t(y * g.stride + ky) - pad;
          if (iy < 0 || iy >= std::ptrdiff_t(g.height)) continue;
          T* dst = in_grad + (c * g.height + std::size_t(iy)) * g.width;
          for (std::size_t x = 0; x < wo; ++x) {
            const std::ptrdiff_t ix = std::ptrdiff_t(x * g.stride + kx) - pad;
            if (ix >= 0 && ix < std::ptrdiff_t(g.width)) dst[ix] += row[y * wo + x];
          }
        }
      }
    }
  }
}

template <class T>
void conv2d_forward(const T* in, const T* weight, const T* bias, const ConvGeometry& g, T* cols, T* out) {
  im2col(in, g, cols);
  const std::size_t n = g.col_cols(), kk = g.col_rows();
  for (std::size_t o = 0; o < g.out_channels; ++o) {
    T* dst = out + o * n;
    const T b = bias[o];
    for (std::size_t x = 0; x < n; ++x) dst[x] = b;
    const T* w = weight + o * kk;
    for (std::size_t j = 0; j < kk; ++j) {
      const T wj = w[j];
      const T* src = cols + j * n;
      for (std::size_t x = 0; x < n; ++x) dst[x] += wj * src[x];
    }
  }
}

// ---- tape ------------------------------------------------------------------

template <class T>
Var Tape<T>::push(Node n) {
  nodes_.push_back(std::move(n));
  return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

template <class T>
Var Tape<T>::leaf(Tensor<T> value, bool requires_grad) {
  Node n;
  n.op = Op::leaf;
  n.value = std::move(value);
  n.needs_grad = requires_grad;
  return push(std::move(n));
}

template <class T>
Var Tape<T>::conv2d(Var in, Var kernel, Var bias, std::size_t stride, std::size_t pad) {
  const auto& x = value(in);
  const auto& w = value(kernel);
  const auto& b = value(bias);
  if (x.rank() != 3 || w.rank() != 4 || w.dim(1) != x.dim(0) || w.dim(2) != w.dim(3)) {
    shape_error("conv2d", x.shape(), w.shape());
  }
  if (b.rank() != 1 || b.dim(0) != w.dim(0)) shape_error("conv2d(bias)", b.shape(), w.shape());
  if (stride < 1 || x.dim(1) + 2 * pad < w.dim(2) || x.dim(2) + 2 * pad < w.dim(2)) {
    shape_error("conv2d(geometry)", x.shape(), w.shape());
  }
  Node n;
  n.op = Op::conv2d;
  n.in[0] = in.id;
  n.in[1] = kernel.id;
  n.in[2] = bias.id;
  n.geom = {x.dim(0), x.dim(1), x.dim(2), w.dim(0), w.dim(2), stride, pad};
  n.aux.resize(n.geom.col_rows() * n.geom.col_cols());
  n.value = Tensor<T>({n.geom.out_channels, n.geom.out_height(), n.geom.out_width()});
  conv2d_forward(x.data(), w.data(), b.data(), n.geom, n.aux.data(), n.value.data());
  n.needs_grad = needs_grad(in) || needs_grad(kernel) || needs_grad(bias);
  return push(std::move(n));
}

template <class T>
Var Tape<T>::relu(Var x) {
  Node n;
  n.op = Op::relu;
  n.in[0] = x.id;
  n.value = value(x);
  for (auto& v : n.value.values()) v = v > T(0) ? v : T(0);
  n.needs_grad = needs_grad(x);
  return push(std::move(n));
}

template <class T>
Var Tape<T>::leaky_relu(Var x, T slope) {
  Node n;
  n.op = Op::leaky_relu;
  n.in[0] = x.id;
  n.param = slope;
  n.value = value(x);
  for (auto& v : n.value.values()) v = v > T(0) ? v : slope * v;
  n.needs_grad = needs_grad(x);
  return push(std::move(n));
}

template <class T>
Var Tape<T>::matmul(Var a, Var b) {
  const auto& A = value(a);
  const auto& B = value(b);
  if (A.rank() != 2 || (B.rank() != 1 && B.rank() != 2) || A.dim(1) != B.dim(0)) {
    shape_error("matmul", A.shape(), B.shape());
  }
  const std::size_t m = A.dim(0), k = A.dim(1), ncol = B.rank() == 2 ? B.dim(1) : 1;
  Node n;
  n.op = Op::matmul;
  n.in[0] = a.id;
  n.in[1] = b.id;
  n.value = B.rank() == 2 ? Tensor<T>({m, ncol}) : Tensor<T>({m});
  T* out = n.value.data();
  for (std::size_t i = 0; i < m; ++i) {
    T* dst = out + i * ncol;
    for (std::size_t p = 0; p < k; ++p) {
      const T aip = A[i * k + p];
      const T* src = B.data() + p * ncol;
      for (std::size_t j = 0; j < ncol; ++j) dst[j] += aip * src[j];
    }
  }
  n.needs_grad = needs_grad(a) || needs_grad(b);
  return push(std::move(n));
}

template <class T>
Var Tape<T>::add(Var a, Var b) {
  const auto& A = value(a);
  const auto& B = value(b);
  if (A.shape() != B.shape()) shape_error("add", A.shape(), B.shape());
  Node n;
  n.op = Op::add;
  n.in[0] = a.id;
  n.in[1] = b.id;
  n.value = A;
  for (std::size_t i = 0; i < B.size(); ++i) n.value[i] += B[i];
  n.needs_grad = needs_grad(a) || needs_grad(b);
  return push(std::move(n));
}

template <class T>
Var Tape<T>::scale(Var x, T factor) {
  Node n;
  n.op = Op::scale;
  n.in[0] = x.id;
  n.param = factor;
  n.value = value(x);
  for (auto& v : n.value.values()) v *= factor;
  n.needs_grad = needs_grad(x);
  return push(std::move(n));
}

template <class T>
Var Tape<T>::global_avg_pool(Var x) {
  const auto& X = value(x);
  if (X.rank() != 3) shape_error("global_avg_pool", X.shape(), Shape{0, 0, 0});
  const std::size_t c = X.dim(0), hw = X.dim(1) * X.dim(2);
  Node n;
  n.op = Op::global_avg_pool;
  n.in[0] = x.id;
  n.value = Tensor<T>({c});
  for (std::size_t i = 0; i < c; ++i) {
    T s = T(0);
    for (std::size_t j = 0; j < hw; ++j) s += X[i * hw + j];
    n.value[i] = s / T(hw);
  }
  n.needs_grad = needs_grad(x);
  return push(std::move(n));
}

template <class T>
Var Tape<T>::l2_normalize(Var x) {
  const auto& X = value(x);
  if (X.rank() != 1) shape_error("l2_normalize", X.shape(), Shape{X.size()});
  double ss = 0.0;
  for (auto v : X.values()) ss += double(v) * double(v);
  const double norm = std::sqrt(ss);
  if (norm < kZeroNorm) throw Error(Errc::zero_vector, "l2_normalize of a zero vector");
  Node n;
  n.op = Op::l2_normalize;
  n.in[0] = x.id;
  n.param = T(norm);
  n.value = X;
  for (auto& v : n.value.values()) v = T(double(v) / norm);
  n.needs_grad = needs_grad(x);
  return push(std::move(n));
}

template <class T>
Var Tape<T>::cosine_distance(Var a, Var b) {
  const auto& A = value(a);
  const auto& B = value(b);
  if (A.rank() != 1 || A.shape() != B.shape()) shape_error("cosine_distance", A.shape(), B.shape());
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t i = 0; i < A.size(); ++i) {
    ab += double(A[i]) * double(B[i]);
    aa += double(A[i]) * double(A[i]);
    bb += double(B[i]) * double(B[i]);
  }
  const double na = std::sqrt(aa), nb = std::sqrt(bb);
  if (na < kZeroNorm || nb < kZeroNorm) throw Error(Errc::zero_vector, "cosine_distance with a zero vector");
  Node n;
  n.op = Op::cosine_distance;
  n.in[0] = a.id;
  n.in[1] = b.id;
  n.aux = {T(ab), T(na), T(nb)};
  const double cos = std::clamp(ab / (na * nb), -1.0, 1.0);
  n.value = Tensor<T>({1}, T(1.0 - cos));
  n.needs_grad = needs_grad(a) || needs_grad(b);
  return push(std::move(n));
}

template <class T>
Var Tape<T>::stop_gradient(Var x) {
  Node n;
  n.op = Op::stop_gradient;
  n.in[0] = x.id;
  n.value = value(x);
  n.needs_grad = false;
  return push(std::move(n));
}

template <class T>
const Tensor<T>& Tape<T>::grad(Var v) const {
  const auto& n = nodes_.at(v.id);
  if (!n.grad.empty()) return n.grad;
  zero_grad_ = Tensor<T>(n.value.shape());
  return zero_grad_;
}

template <class T>
Tensor<T>& Tape<T>::grad_buffer(std::uint32_t id) {
  auto& n = nodes_[id];
  if (n.grad.empty()) n.grad = Tensor<T>(n.value.shape());
  return n.grad;
}

template <class T>
void Tape<T>::backward(Var root) {
  auto& r = node(root);
  if (r.value.size() != 1) shape_error("backward(root must be scalar)", r.value.shape(), Shape{1});
  for (auto& n : nodes_) n.grad = Tensor<T>();
  visits_ = 0;
  if (!r.needs_grad) return;
  grad_buffer(root.id)[0] = T(1);
  for (std::uint32_t id = root.id + 1; id-- > 0;) {
    auto& n = nodes_[id];
    if (!n.needs_grad || n.grad.empty()) continue;
    ++visits_;
    if (n.op != Op::leaf) backprop(id);
  }
}

template <class T>
void Tape<T>::backprop(std::uint32_t id) {
  // nodes_ does not grow during backward, so these references stay valid.
  Node& n = nodes_[id];
  const Tensor<T>& g = n.grad;
  auto wants = [&](int slot) { return nodes_[n.in[slot]].needs_grad; };

  switch (n.op) {
    case Op::leaf:
    case Op::stop_gradient:
      break;
    case Op::relu:
    case Op::leaky_relu: {
      if (!wants(0)) break;
      const auto& x = nodes_[n.in[0]].value;
      auto& gx = grad_buffer(n.in[0]);
      const T slope = n.op == Op::relu ? T(0) : n.param;
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += x[i] > T(0) ? g[i] : slope * g[i];
      break;
    }
    case Op::scale: {
      if (!wants(0)) break;
      auto& gx = grad_buffer(n.in[0]);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += n.param * g[i];
      break;
    }
    case Op::add: {
      for (int s = 0; s < 2; ++s) {
        if (!wants(s)) continue;
        auto& gx = grad_buffer(n.in[s]);
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
      }
      break;
    }
    case Op::matmul: {
      const auto& A = nodes_[n.in[0]].value;
      const auto& B = nodes_[n.in[1]].value;
      const std::size_t m = A.dim(0), k = A.dim(1), ncol = B.rank() == 2 ? B.dim(1) : 1;
      if (wants(0)) {
        auto& gA = grad_buffer(n.in[0]);
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t p = 0; p < k; ++p) {
            T s = T(0);
            for (std::size_t j = 0; j < ncol; ++j) s += g[i * ncol + j] * B[p * ncol + j];
            gA[i * k + p] += s;
          }
        }
      }
      if (wants(1)) {
        auto& gB = grad_buffer(n.in[1]);
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t p = 0; p < k; ++p) {
            const T aip = A[i * k + p];
            for (std::size_t j = 0; j < ncol; ++j) gB[p * ncol + j] += aip * g[i * ncol + j];
          }
        }
      }
      break;
    }
    case Op::global_avg_pool: {
      if (!wants(0)) break;
      auto& gx = grad_buffer(n.in[0]);
      const std::size_t c = g.size(), hw = gx.size() / c;
      for (std::size_t i = 0; i < c; ++i) {
        const T v = g[i] / T(hw);
        for (std::size_t j = 0; j < hw; ++j) gx[i * hw + j] += v;
      }
      break;
    }
    case Op::l2_normalize: {
      if (!wants(0)) break;
      // y = x/|x|; dx = (g - y <y,g>) / |x|
      const auto& y = n.value;
      auto& gx = grad_buffer(n.in[0]);
      T yg = T(0);
      for (std::size_t i = 0; i < y.size(); ++i) yg += y[i] * g[i];
      for (std::size_t i = 0; i < y.size(); ++i) gx[i] += (g[i] - y[i] * yg) / n.param;
      break;
    }
    case Op::cosine_distance: {
      // d = 1 - ab/(na nb); dd/da = -(b/(na nb) - ab a/(na^3 nb))
      const auto& A = nodes_[n.in[0]].value;
      const auto& B = nodes_[n.in[1]].value;
      const T ab = n.aux[0], na = n.aux[1], nb = n.aux[2], g0 = g[0];
      if (wants(0)) {
        auto& gA = grad_buffer(n.in[0]);
        for (std::size_t i = 0; i < A.size(); ++i) {
          gA[i] -= g0 * (B[i] / (na * nb) - ab * A[i] / (na * na * na * nb));
        }
      }
      if (wants(1)) {
        auto& gB = grad_buffer(n.in[1]);
        for (std::size_t i = 0; i < B.size(); ++i) {
          gB[i] -= g0 * (A[i] / (na * nb) - ab * B[i] / (nb * nb * nb * na));
        }
      }
      break;
    }
    case Op::conv2d: {
      const ConvGeometry& geo = n.geom;
      const std::size_t cols_n = geo.col_cols(), kk = geo.col_rows();
      const T* cols = n.aux.data();
      if (wants(1)) {
        auto& gw = grad_buffer(n.in[1]);
        for (std::size_t o = 0; o < geo.out_channels; ++o) {
          const T* go = g.data() + o * cols_n;
          for (std::size_t j = 0; j < kk; ++j) {
            const T* src = cols + j * cols_n;
            T s = T(0);
            for (std::size_t x = 0; x < cols_n; ++x) s += go[x] * src[x];
            gw[o * kk + j] += s;
          }
        }
      }
      if (wants(2)) {
        auto& gb = grad_buffer(n.in[2]);
        for (std::size_t o = 0; o < geo.out_channels; ++o) {
          T s = T(0);
          for (std::size_t x = 0; x < cols_n; ++x) s += g[o * cols_n + x];
          gb[o] += s;
        }
      }
      if (wants(0)) {
        const auto& W = nodes_[n.in[1]].value;
        std::vector<T> dcols(kk * cols_n, T(0));
        for (std::size_t o = 0; o < geo.out_channels; ++o) {
          const T* go = g.data() + o * cols_n;
          for (std::size_t j = 0; j < kk; ++j) {
            const T w = W[o * kk + j];
            T* dst = dcols.data() + j * cols_n;
            for (std::size_t x = 0; x < cols_n; ++x) dst[x] += w * go[x];
          }
        }
        col2im_add(dcols.data(), geo, grad_buffer(n.in[0]).data());
      }
      break;
    }
  }
}

template <class T>
void sgd_step(Tensor<T>& param, const Tensor<T>& grad, T lr) {
  if (param.shape() != grad.shape()) shape_error("sgd_step", param.shape(), grad.shape());
  for (std::size_t i = 0; i < param.size(); ++i) param[i] -= lr * grad[i];
}

template class Tensor<float>;
template class Tensor<double>;
template class Tape<float>;
template class Tape<double>;
template void sgd_step<float>(Tensor<float>&, const Tensor<float>&, float);
template void sgd_step<double>(Tensor<double>&, const Tensor<double>&, double);
template void im2col<float>(const float*, const ConvGeometry&, float*);
template void im2col<double>(const double*, const ConvGeometry&, double*);
template void col2im_add<float>(const float*, const ConvGeometry&, float*);
template void col2im_add<double>(const double*, const ConvGeometry&, double*);
template void conv2d_forward<float>(const float*, const float*, const float*, const ConvGeometry&, float*, float*);
template void conv2d_forward<double>(const double*, const double*, const double*, const ConvGeometry&, double*,
                                     double*);

}  // namespace rei::tensor
