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

#include "refseq/tensor.hpp"

#include <sstream>

namespace refseq {

int64_t numel(const Shape& s) {
  int64_t n = 1;
  for (int d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) os << ",";
    os << s[i];
  }
  os << "]";
  return os.str();
}

namespace {
std::shared_ptr<TensorData> make_data(Shape shape, std::vector<float> v) {
  for (int d : shape)
    if (d <= 0) throw ShapeError("tensor: non-positive extent in shape " + shape_str(shape));
  auto p = std::make_shared<TensorData>();
  p->shape = std::move(shape);
  p->v = std::move(v);
  return p;
}

}  // namespace

Tensor Tensor::zeros(Shape shape) {
  const int64_t n = numel(shape);
  return from_data(std::move(shape), std::vector<float>(static_cast<size_t>(n), 0.f));
}

Tensor Tensor::full(Shape shape, float value) {
  const int64_t n = numel(shape);
  return from_data(std::move(shape), std::vector<float>(static_cast<size_t>(n), value));
}

Tensor Tensor::from_data(Shape shape, std::vector<float> data) {
  if (numel(shape) != static_cast<int64_t>(data.size()))
    throw ShapeError("tensor: shape " + shape_str(shape) + " does not match data length " +
                     std::to_string(data.size()));
  Tensor t;
  t.p_ = make_data(std::move(shape), std::move(data));
  return t;
}

float Tensor::item() const {
  if (size() != 1) throw ShapeError("item: tensor " + shape_str(shape()) + " is not scalar");
  return p_->v[0];
}

std::vector<float>& Tensor::grad_buffer() {
  if (!p_->grad) p_->grad = std::make_unique<std::vector<float>>(p_->v.size(), 0.f);
  return *p_->grad;
}

const std::vector<float>& Tensor::grad() const {
  if (!p_->grad)
    throw NumericsError("grad: no gradient present for tensor " + shape_str(shape()));
  return *p_->grad;
}

void Tensor::zero_grad() {
  if (p_->grad) std::fill(p_->grad->begin(), p_->grad->end(), 0.f);
}

Tensor Tensor::detach() const {
  Tensor t = Tensor::from_data(p_->shape, p_->v);
  return t;
}

namespace {
Tape* g_active_tape = nullptr;
}

Tape* Tape::active() { return g_active_tape; }

TapeScope::TapeScope() : prev_(g_active_tape) { g_active_tape = &tape_; }
TapeScope::~TapeScope() { g_active_tape = prev_; }

NoGradScope::NoGradScope() : prev_(g_active_tape) { g_active_tape = nullptr; }
NoGradScope::~NoGradScope() { g_active_tape = prev_; }

void backward(const Tensor& loss) {
  Tape* tape = Tape::active();
  if (!tape) throw NumericsError("backward: no active tape");
  if (!loss.defined() || loss.size() != 1)
    throw NumericsError("backward: loss must be a scalar tensor");
  if (!loss.tracked())
    throw NumericsError("backward: loss is detached from the active tape");

  const_cast<Tensor&>(loss).grad_buffer()[0] = 1.f;
  auto& nodes = tape->nodes();
  for (auto it = nodes.rbegin(); it != nodes.rend(); ++it) {
    if (it->out.has_grad()) it->backfn();
  }
  tape->clear();
}

}  // namespace refseq
