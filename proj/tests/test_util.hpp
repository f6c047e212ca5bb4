/*
 * Copyright 2026 The refseq Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *    http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#pragma once

#include <functional>
#include <string>
#include <vector>

#include "refseq/finite_diff.hpp"
#include "refseq/rng.hpp"
#include "refseq/tensor.hpp"

namespace refseq::testutil {

inline Tensor rand_tensor(Rng& rng, Shape shape, float lo = -1.f, float hi = 1.f) {
  std::vector<float> v(static_cast<size_t>(numel(shape)));
  for (auto& x : v) x = static_cast<float>(rng.uniform(lo, hi));
  return Tensor::from_data(std::move(shape), std::move(v));
}

struct GradCheckResult {
  bool ok = true;
  std::string detail;
};

// Compares reverse-mode gradients of a scalar loss against central finite
// differences for every input tensor.
inline GradCheckResult check_grads(const std::string& name,
                                   const std::function<Tensor(std::vector<Tensor>&)>& loss_fn,
                                   std::vector<Tensor> inputs, double h = 1e-3,
                                   double rel_tol = 1e-3, double abs_tol = 1e-5) {
  for (auto& t : inputs) t.set_requires_grad(true);
  std::vector<std::vector<float>> analytic;
  {
    TapeScope scope;
    Tensor loss = loss_fn(inputs);
    backward(loss);
    for (auto& t : inputs) analytic.push_back(t.has_grad() ? t.grad() : std::vector<float>(t.size(), 0.f));
  }
  for (size_t i = 0; i < inputs.size(); ++i) {
    auto f = [&](const Tensor& probe) -> double {
      std::vector<Tensor> alt = inputs;
      alt[i] = probe;
      NoGradScope ng;
      return loss_fn(alt).item_double();
    };
    Tensor fd = finite_diff_gradient(f, inputs[i], h);
    const int64_t bad = gradient_mismatch(analytic[i], fd.values(), rel_tol, abs_tol);
    if (bad >= 0) {
      return {false, name + ": input " + std::to_string(i) + " grad mismatch at flat index " +
                         std::to_string(bad) + " (analytic " +
                         std::to_string(analytic[i][static_cast<size_t>(bad)]) + ", fd " +
                         std::to_string(fd.values()[static_cast<size_t>(bad)]) + ")"};
    }
  }
  return {};
}

}  // namespace refseq::testutil
