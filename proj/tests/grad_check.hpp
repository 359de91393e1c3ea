#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "rei/tensor.hpp"

namespace testutil {

using rei::tensor::Tape;
using rei::tensor::Tensor;
using rei::tensor::Var;

using Builder = std::function<Var(Tape<double>&, const std::vector<Var>&)>;

inline Tensor<double> random_tensor(rei::tensor::Shape shape, std::mt19937_64& rng, double lo = -1.0,
                                    double hi = 1.0) {
  Tensor<double> t(std::move(shape));
  std::uniform_real_distribution<double> u(lo, hi);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = u(rng);
  return t;
}

struct GradReport {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
};

// Central differences on every element of every input (or on `max_per_input`
// evenly spread elements). Relative error uses max(|analytic|, |numeric|, 1e-4)
// as the denominator.
inline GradReport finite_difference_check(const std::vector<Tensor<double>>& inputs, const Builder& build,
                                          double h = 1e-6, std::size_t max_per_input = 0) {
  auto evaluate = [&](const std::vector<Tensor<double>>& xs, std::vector<Tensor<double>>* grads) {
    Tape<double> tape;
    std::vector<Var> vars;
    for (const auto& x : xs) vars.push_back(tape.leaf(x, true));
    const Var out = build(tape, vars);
    if (grads) {
      tape.backward(out);
      grads->clear();
      for (Var v : vars) grads->push_back(tape.grad(v));
    }
    return tape.value(out)[0];
  };
  std::vector<Tensor<double>> analytic;
  evaluate(inputs, &analytic);
  GradReport rep;
  auto xs = inputs;
  for (std::size_t a = 0; a < xs.size(); ++a) {
    const std::size_t n = xs[a].size();
    const std::size_t stride = max_per_input && n > max_per_input ? n / max_per_input : 1;
    for (std::size_t i = 0; i < n; i += stride) {
      const double keep = xs[a][i];
      xs[a][i] = keep + h;
      const double fp = evaluate(xs, nullptr);
      xs[a][i] = keep - h;
      const double fm = evaluate(xs, nullptr);
      xs[a][i] = keep;
      const double num = (fp - fm) / (2.0 * h);
      const double ana = analytic[a][i];
      const double denom = std::max({std::abs(ana), std::abs(num), 1e-4});
      rep.max_rel_error = std::max(rep.max_rel_error, std::abs(ana - num) / denom);
      ++rep.checked;
    }
  }
  return rep;
}

}  // namespace testutil
