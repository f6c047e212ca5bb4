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

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "refseq/errors.hpp"

namespace refseq {

using Shape = std::vector<int>;

int64_t numel(const Shape& s);
std::string shape_str(const Shape& s);

struct TensorData {
  Shape shape;
  std::vector<float> v;
  std::unique_ptr<std::vector<float>> grad;  // allocated on first demand
  bool requires_grad = false;
  bool tracked = false;  // produced on (or feeding) the active tape
  // Scalar reductions keep their double-precision value alongside the f32
  // cast; finite-difference oracles read this to avoid the cast noise.
  double scalar_f64 = 0.0;
  bool has_scalar_f64 = false;
};

// Dense row-major float32 tensor. Value-semantics handle over shared storage;
// forward ops treat inputs as immutable.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, float value);
  static Tensor from_data(Shape shape, std::vector<float> data);
  static Tensor scalar(float value) { return from_data({1}, {value}); }

  bool defined() const { return static_cast<bool>(p_); }
  const Shape& shape() const { return p_->shape; }
  int rank() const { return static_cast<int>(p_->shape.size()); }
  int dim(int i) const { return p_->shape[static_cast<size_t>(i)]; }
  int64_t size() const { return static_cast<int64_t>(p_->v.size()); }

  const float* data() const { return p_->v.data(); }
  float* data() { return p_->v.data(); }
  const std::vector<float>& values() const { return p_->v; }
  float item() const;
  // Full-precision value for scalar reductions; falls back to the f32 value.
  double item_double() const {
    return p_->has_scalar_f64 ? p_->scalar_f64 : static_cast<double>(item());
  }
  void set_scalar_f64(double v) {
    p_->scalar_f64 = v;
    p_->has_scalar_f64 = true;
  }

  Tensor& set_requires_grad(bool rg) {
    p_->requires_grad = rg;
    return *this;
  }
  bool requires_grad() const { return p_->requires_grad; }
  bool tracked() const { return p_->tracked; }
  void mark_tracked() { p_->tracked = true; }

  bool has_grad() const { return p_->grad != nullptr; }
  // Allocates a zero grad buffer on first use.
  std::vector<float>& grad_buffer();
  const std::vector<float>& grad() const;
  void zero_grad();

  // Untracked copy of the values; gradients never flow through it.
  Tensor detach() const;

  bool same_storage(const Tensor& other) const { return p_ == other.p_; }
  TensorData* raw() const { return p_.get(); }

 private:
  std::shared_ptr<TensorData> p_;
};

// One recorded primitive op: the output it produced and a closure that
// propagates the output's gradient into the inputs' gradients.
struct TapeNode {
  const char* op;
  Tensor out;
  std::function<void()> backfn;
};

// Ordered record of the forward pass. Walking nodes back-to-front visits ops
// in reverse topological order because every op is appended after its inputs.
class Tape {
 public:
  static Tape* active();

  void push(const char* op, Tensor out, std::function<void()> backfn) {
    nodes_.push_back(TapeNode{op, std::move(out), std::move(backfn)});
  }
  size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }
  const std::vector<TapeNode>& nodes() const { return nodes_; }
  std::vector<TapeNode>& nodes() { return nodes_; }

 private:
  friend class TapeScope;
  friend class NoGradScope;
  std::vector<TapeNode> nodes_;
};

// RAII: makes a fresh tape active for the enclosed forward pass.
class TapeScope {
 public:
  TapeScope();
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;
  Tape& tape() { return tape_; }

 private:
  Tape tape_;
  Tape* prev_;
};

// RAII: disables recording (inference / oracle evaluation).
class NoGradScope {
 public:
  NoGradScope();
  ~NoGradScope();
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  Tape* prev_;
};

// Reverse pass over the active tape from a scalar loss. Populates grad for
// every requires_grad ancestor, then clears the tape.
void backward(const Tensor& loss);

}  // namespace refseq
