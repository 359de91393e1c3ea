#include "rei/network.hpp"

#include <cmath>
#include <random>

#include "rei/error.hpp"
#include "rei/util.hpp"

namespace rei::net {

template <class T>
std::size_t Params<T>::scalar_count() const {
  std::size_t n = 0;
  for (const auto& t : tensors) n += t.size();
  return n;
}

template <class T>
bool Params<T>::same_layout(const Params& other) const {
  if (tensors.size() != other.tensors.size()) return false;
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    if (tensors[i].shape() != other.tensors[i].shape()) return false;
  }
  return true;
}

template struct Params<float>;
template struct Params<double>;

namespace {

Tensor<float> uniform_tensor(tensor::Shape shape, float bound, std::mt19937_64& rng) {
  Tensor<float> t(std::move(shape));
  std::uniform_real_distribution<float> dist(-bound, bound);
  for (auto& v : t.values()) v = dist(rng);
  return t;
}

}  // namespace

Params<float> init_encoder(std::uint64_t seed) {
  auto rng = substream(seed, 0xE5C0DE);
  Params<float> p;
  for (int layer = 0; layer < 3; ++layer) {
    const std::size_t cin = kEncoderChannels[layer], cout = kEncoderChannels[layer + 1];
    const float bound = std::sqrt(6.0f / float(cin * 9));
    const std::string name = "encoder.conv" + std::to_string(layer + 1);
    p.add(name + ".weight", uniform_tensor({cout, cin, 3, 3}, bound, rng));
    p.add(name + ".bias", Tensor<float>({cout}));
  }
  return p;
}

Params<float> init_mlp(const std::string& prefix, std::size_t in, std::size_t hidden, std::size_t out,
                       std::uint64_t seed) {
  Fnv1a h;
  h.update(prefix);
  auto rng = substream(seed, h.digest());
  Params<float> p;
  p.add(prefix + ".fc1.weight", uniform_tensor({hidden, in}, std::sqrt(6.0f / float(in)), rng));
  p.add(prefix + ".fc1.bias", Tensor<float>({hidden}));
  p.add(prefix + ".fc2.weight", uniform_tensor({out, hidden}, std::sqrt(3.0f / float(hidden)), rng));
  p.add(prefix + ".fc2.bias", Tensor<float>({out}));
  return p;
}

template <class T>
std::vector<Var> bind(Tape<T>& tape, const Params<T>& params, bool requires_grad) {
  std::vector<Var> vars;
  vars.reserve(params.size());
  for (const auto& t : params.tensors) vars.push_back(tape.leaf(t, requires_grad));
  return vars;
}

template <class T>
Var encoder_forward(Tape<T>& tape, std::span<const Var> enc, Var input) {
  if (enc.size() != 6) throw Error(Errc::shape_mismatch, "encoder expects 6 parameter tensors");
  Var x = input;
  for (int layer = 0; layer < 3; ++layer) {
    x = tape.conv2d(x, enc[2 * layer], enc[2 * layer + 1], 1, 1);
    x = tape.leaky_relu(x, T(kLeakySlope));
  }
  return tape.global_avg_pool(x);
}

template <class T>
Var mlp_forward(Tape<T>& tape, std::span<const Var> mlp, Var x) {
  if (mlp.size() != 4) throw Error(Errc::shape_mismatch, "mlp expects 4 parameter tensors");
  Var h = tape.add(tape.matmul(mlp[0], x), mlp[1]);
  h = tape.relu(h);
  return tape.add(tape.matmul(mlp[2], h), mlp[3]);
}

template std::vector<Var> bind<float>(Tape<float>&, const Params<float>&, bool);
template std::vector<Var> bind<double>(Tape<double>&, const Params<double>&, bool);
template Var encoder_forward<float>(Tape<float>&, std::span<const Var>, Var);
template Var encoder_forward<double>(Tape<double>&, std::span<const Var>, Var);
template Var mlp_forward<float>(Tape<float>&, std::span<const Var>, Var);
template Var mlp_forward<double>(Tape<double>&, std::span<const Var>, Var);

EncoderRunner::EncoderRunner(const Params<float>& encoder, int patch_size)
    : enc_(&encoder), patch_size_(patch_size) {
  if (encoder.size() != 6) throw Error(Errc::shape_mismatch, "encoder expects 6 parameter tensors");
  const std::size_t hw = std::size_t(patch_size) * patch_size;
  cols_.resize(kEncoderChannels[2] * 9 * hw);
  a_.resize(kEncoderChannels[3] * hw);
  b_.resize(kEncoderChannels[3] * hw);
}

void EncoderRunner::embed(const float* patch, float* out) {
  const auto p = static_cast<std::size_t>(patch_size_);
  const std::size_t hw = p * p;
  const float* in = patch;
  float* bufs[2] = {a_.data(), b_.data()};
  for (int layer = 0; layer < 3; ++layer) {
    tensor::ConvGeometry g{kEncoderChannels[layer], p, p, kEncoderChannels[layer + 1], 3, 1, 1};
    float* dst = bufs[layer % 2];
    tensor::conv2d_forward(in, (*enc_)[2 * layer].data(), (*enc_)[2 * layer + 1].data(), g, cols_.data(), dst);
    const std::size_t n = g.out_channels * hw;
    for (std::size_t i = 0; i < n; ++i) dst[i] = dst[i] > 0.0f ? dst[i] : kLeakySlope * dst[i];
    in = dst;
  }
  for (std::size_t c = 0; c < kEmbedDim; ++c) {
    float s = 0.0f;
    for (std::size_t j = 0; j < hw; ++j) s += in[c * hw + j];
    out[c] = s / float(hw);
  }
}

void embed_batch(const Params<float>& encoder, int patch_size, std::span<const float> patches,
                 std::span<float> out) {
  const std::size_t pp = std::size_t(patch_size) * patch_size;
  const auto n = static_cast<std::ptrdiff_t>(patches.size() / pp);
  if (out.size() != std::size_t(n) * kEmbedDim) {
    throw Error(Errc::shape_mismatch, "embed_batch output size");
  }
#pragma omp parallel
  {
    EncoderRunner runner(encoder, patch_size);
#pragma omp for schedule(static)
    for (std::ptrdiff_t i = 0; i < n; ++i) runner.embed(patches.data() + i * pp, out.data() + i * kEmbedDim);
  }
}

void embed_batch_serial(const Params<float>& encoder, int patch_size, std::span<const float> patches,
                        std::span<float> out) {
  const std::size_t pp = std::size_t(patch_size) * patch_size;
  const std::size_t n = patches.size() / pp;
  if (out.size() != n * kEmbedDim) throw Error(Errc::shape_mismatch, "embed_batch output size");
  EncoderRunner runner(encoder, patch_size);
  for (std::size_t i = 0; i < n; ++i) runner.embed(patches.data() + i * pp, out.data() + i * kEmbedDim);
}

std::uint64_t checksum(const Params<float>& params) {
  Fnv1a h;
  for (std::size_t i = 0; i < params.size(); ++i) {
    h.update(params.names[i]);
    for (auto d : params[i].shape()) h.update_value(static_cast<std::uint64_t>(d));
    h.update(params[i].data(), params[i].size() * sizeof(float));
  }
  return h.digest();
}

}  // namespace rei::net
