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
#include <vector>

#include "refseq/tensor.hpp"

namespace refseq {

// Central-difference gradient estimate of a deterministic scalar function.
// Evaluates f only through its forward path, so it stays independent of the
// reverse-mode implementation it is used to check.
inline Tensor finite_diff_gradient(const std::function<double(const Tensor&)>& f,
                                   const Tensor& x, double h) {
  NoGradScope ng;
  Tensor g = Tensor::zeros(x.shape());
  Tensor probe = x.detach();
  float* pv = probe.data();
  float* pg = g.data();
  const int64_t n = x.size();
  for (int64_t i = 0; i < n; ++i) {
    const float orig = pv[i];
    pv[i] = static_cast<float>(orig + h);
    const double fp = f(probe);
    pv[i] = static_cast<float>(orig - h);
    const double fm = f(probe);
    pv[i] = orig;
    pg[i] = static_cast<float>((fp - fm) / (2.0 * h));
  }
  return g;
}

// Relative-error comparison with an absolute floor near zero. Returns the
// first failing flat index, or -1 when every element agrees.
inline int64_t gradient_mismatch(const std::vector<float>& analytic,
                                 const std::vector<float>& estimate, double rel_tol,
                                 double abs_tol) {
  for (size_t i = 0; i < analytic.size(); ++i) {
    const double a = analytic[i], e = estimate[i];
    const double diff = std::abs(a - e);
    const double mag = std::max(std::abs(a), std::abs(e));
    if (diff > abs_tol && diff > rel_tol * mag) return static_cast<int64_t>(i);
  }
  return -1;
}

}  // namespace refseq
