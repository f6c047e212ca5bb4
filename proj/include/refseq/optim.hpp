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

#include <string>
#include <utility>
#include <vector>

#include "refseq/tensor.hpp"

namespace refseq {

// Named parameter list; registration order is the update and checkpoint order.
using ParamList = std::vector<std::pair<std::string, Tensor>>;

struct AdamConfig {
  float lr = 1e-3f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float eps = 1e-8f;
};

// Standard Adam with bias correction. Gradients are zeroed after each step.
class Adam {
 public:
  explicit Adam(AdamConfig cfg) : cfg_(cfg) {}

  void register_params(const ParamList& params);
  void set_lr(float lr) { cfg_.lr = lr; }
  float lr() const { return cfg_.lr; }
  long step_count() const { return step_; }

  // Ensures every registered parameter has a (possibly zero) grad buffer.
  void zero_grad();
  void step();

 private:
  struct Slot {
    std::string name;
    Tensor param;
    std::vector<float> m;
    std::vector<float> v;
  };
  AdamConfig cfg_;
  std::vector<Slot> slots_;
  long step_ = 0;
};

}  // namespace refseq
