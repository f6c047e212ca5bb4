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

#include <memory>
#include <vector>

#include "refseq/tensor.hpp"

// Differentiable primitive ops. Every op validates shapes (ShapeError names
// the op and offending shapes), checks its output for NaN/Inf (NumericsError),
// and records itself on the active tape when gradients are being tracked.
namespace refseq::ops {

// [m,k]x[k,n] or batched [B,m,k]x[B,k,n].
Tensor matmul(const Tensor& a, const Tensor& b);
// Batched a x b^T: [B,m,k] x [B,n,k] -> [B,m,n]. Also accepts rank 2.
Tensor matmul_nt(const Tensor& a, const Tensor& b);

// Elementwise; b may broadcast over a's leading dims (trailing-dim rule).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, float s);

// Swap the last two axes (rank >= 2).
Tensor transpose(const Tensor& a);
Tensor reshape(const Tensor& a, Shape shape);
Tensor slice(const Tensor& a, int axis, int start, int len);
Tensor concat(const std::vector<Tensor>& xs, int axis);

// [B,L,H*dh] -> [B*H,L,dh] and back; index permutation for attention heads.
Tensor split_heads(const Tensor& a, int n_heads);
Tensor merge_heads(const Tensor& a, int n_heads, int batch);

Tensor softmax_last(const Tensor& a);
// scores [B,H,Lq,Lk] with one shared boolean mask row set per (B,Lq); the mask
// has Lq*Lk entries per batch item and broadcasts across heads. Masked-out
// attention weights are exactly zero.
Tensor masked_softmax_heads(const Tensor& scores,
                            std::shared_ptr<const std::vector<uint8_t>> mask, int n_heads);

Tensor layer_norm(const Tensor& a, const Tensor& gamma, const Tensor& beta, float eps = 1e-5f);
Tensor gelu(const Tensor& a);
Tensor sigmoid(const Tensor& a);

// table [V,d], ids flat -> [ids.size(), d]
Tensor embedding(const Tensor& table, const std::vector<int>& ids);

// x [B,C,H,W], w [O,C,kh,kw], bias [O]
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, int stride, int pad);
// x [B,C,H,W], w [C,O,kh,kw], bias [O]; output (H-1)*stride+kh-2*pad
Tensor conv_transpose2d(const Tensor& x, const Tensor& w, const Tensor& bias,
                        int stride, int pad);

// logits [N,V]; targets.size()==N; entries equal to ignore_index are skipped.
// Mean negative log-likelihood over the non-ignored rows.
Tensor cross_entropy_logits(const Tensor& logits, const std::vector<int>& targets,
                            int ignore_index = -1);
// probs in (0,1) (clamped internally at 1e-7), targets in {0,1}; mean over elements.
Tensor binary_cross_entropy(const Tensor& probs, const Tensor& targets);
// Numerically stable fused sigmoid + BCE; mean over elements.
Tensor bce_with_logits(const Tensor& logits, const Tensor& targets);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
// mean((a-b)^2)
Tensor mse(const Tensor& a, const Tensor& b);

Tensor detach(const Tensor& a);

}  // namespace refseq::ops
