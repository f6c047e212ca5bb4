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

#include "refseq/optim.hpp"

#include "refseq/kernels.hpp"

namespace refseq {

void Adam::register_params(const ParamList& params) {
  for (const auto& [name, t] : params) {
    Slot s;
    s.name = name;
    s.param = t;
    s.m.assign(t.values().size(), 0.f);
    s.v.assign(t.values().size(), 0.f);
    slots_.push_back(std::move(s));
  }
}

void Adam::zero_grad() {
  for (auto& s : slots_) {
    s.param.grad_buffer();
    s.param.zero_grad();
  }
}

void Adam::step() {
  ++step_;
  for (auto& s : slots_) {
    if (!s.param.has_grad())
      throw NumericsError("adam: missing grad on registered parameter '" + s.name + "'");
    kernels::adam_update(s.param.data(), s.param.grad().data(), s.m.data(), s.v.data(),
                         s.param.size(), cfg_.lr, cfg_.beta1, cfg_.beta2, cfg_.eps, step_);
  }
  for (auto& s : slots_) s.param.zero_grad();
}

}  // namespace refseq
