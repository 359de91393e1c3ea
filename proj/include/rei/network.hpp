#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "rei/tensor.hpp"

namespace rei::net {

using tensor::Tape;
using tensor::Tensor;
using tensor::Var;

inline constexpr std::size_t kEmbedDim = 32;
inline constexpr std::size_t kProjectorHidden = 64;
inline constexpr std::size_t kProjectorDim = 64;
inline constexpr std::size_t kPredictorHidden = 64;
inline constexpr std::size_t kPredictorDim = 64;
inline constexpr float kLeakySlope = 0.01f;

// Encoder channel progression: 1 -> 8 -> 16 -> 32, 3x3 kernels, pad 1.
inline constexpr std::size_t kEncoderChannels[4] = {1, 8, 16, 32};

// Ordered named parameter tensors.
template <class T>
struct Params {
  std::vector<std::string> names;
  std::vector<Tensor<T>> tensors;

  std::size_t size() const { return tensors.size(); }
  std::size_t scalar_count() const;
  Tensor<T>& operator[](std::size_t i) { return tensors[i]; }
  const Tensor<T>& operator[](std::size_t i) const { return tensors[i]; }
  void add(std::string name, Tensor<T> t) {
    names.push_back(std::move(name));
    tensors.push_back(std::move(t));
  }
  bool same_layout(const Params& other) const;

  template <class U>
  Params<U> cast() const {
    Params<U> out;
    for (std::size_t i = 0; i < tensors.size(); ++i) out.add(names[i], tensors[i].template cast<U>());
    return out;
  }
};

Params<float> init_encoder(std::uint64_t seed);
// Two fully connected layers with a ReLU between them.
Params<float> init_mlp(const std::string& prefix, std::size_t in, std::size_t hidden, std::size_t out,
                       std::uint64_t seed);

template <class T>
std::vector<Var> bind(Tape<T>& tape, const Params<T>& params, bool requires_grad);

// input: [1, P, P] -> [kEmbedDim]
template <class T>
Var encoder_forward(Tape<T>& tape, std::span<const Var> encoder, Var input);

template <class T>
Var mlp_forward(Tape<T>& tape, std::span<const Var> mlp, Var x);

// Tape-free encoder evaluation with reusable scratch buffers.
class EncoderRunner {
 public:
  EncoderRunner(const Params<float>& encoder, int patch_size);
  void embed(const float* patch, float* out);

 private:
  const Params<float>* enc_;
  int patch_size_;
  std::vector<float> cols_, a_, b_;
};

// Embeds `n` patches laid out contiguously (n * P * P) into out (n * kEmbedDim).
void embed_batch(const Params<float>& encoder, int patch_size, std::span<const float> patches,
                 std::span<float> out);
void embed_batch_serial(const Params<float>& encoder, int patch_size, std::span<const float> patches,
                        std::span<float> out);

std::uint64_t checksum(const Params<float>& params);

}  // namespace rei::net
