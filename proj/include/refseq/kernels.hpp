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

// Dense float kernels. The default implementations are OpenMP-parallel over
// independent output elements; every output element is accumulated in a fixed
// order by exactly one thread, so results are bit-identical to the serial
// reference implementations in kernels::serial for any thread count.
// tests/test_kernels_parity.cpp asserts that equality; bench/bench_kernels.cpp
// times the two against each other.
namespace refseq::kernels {

// c[m,n] = a[m,k] * b[k,n]
void matmul_nn(const float* a, const float* b, float* c, int m, int k, int n);
// c[m,n] = a[m,k] * b[n,k]^T  (dot products over contiguous rows)
void matmul_nt(const float* a, const float* b, float* c, int m, int k, int n);
// c[m,n] = a[k,m]^T * b[k,n]
void matmul_tn(const float* a, const float* b, float* c, int m, int k, int n);

// out[outer,inner] = a[outer,inner] op b[inner]  (trailing broadcast)
void add_broadcast(const float* a, const float* b, float* out, int64_t outer, int64_t inner);
void mul_broadcast(const float* a, const float* b, float* out, int64_t outer, int64_t inner);

void gelu_fwd(const float* x, float* y, int64_t n);
// dx += dy * gelu'(x)
void gelu_bwd(const float* x, const float* dy, float* dx, int64_t n);
void sigmoid_fwd(const float* x, float* y, int64_t n);

// Row-wise softmax over the last axis. mask may be null; otherwise mask[r*cols+j]
// nonzero marks an attendable column and each row must keep at least one.
// Masked-out outputs are exactly zero.
void softmax_rows(const float* x, const uint8_t* mask, float* y, int64_t rows, int cols);
// dx += softmax backward given y = softmax(x) and dy.
void softmax_rows_bwd(const float* y, const float* dy, float* dx, int64_t rows, int cols);

// Row-wise layer norm over the last axis; saves per-row mean and reciprocal std.
void layernorm_fwd(const float* x, const float* gamma, const float* beta, float* y,
                   float* mean, float* rstd, int64_t rows, int cols, float eps);
void layernorm_bwd(const float* x, const float* gamma, const float* mean, const float* rstd,
                   const float* dy, float* dx, float* dgamma, float* dbeta,
                   int64_t rows, int cols);

// im2col for NCHW convolution: one image, cols is [c*kh*kw, ho*wo].
void im2col(const float* img, float* cols, int c, int h, int w,
            int kh, int kw, int stride, int pad, int ho, int wo);
// col2im scatter-add, inverse layout of im2col. img must be zeroed by caller.
void col2im(const float* cols, float* img, int c, int h, int w,
            int kh, int kw, int stride, int pad, int ho, int wo);

// out[i,:] = table[ids[i],:]
void gather_rows(const float* table, const int* ids, float* out, int64_t n, int dim);
// dtable[ids[i],:] += dout[i,:]  (serial: duplicate ids must accumulate deterministically)
void scatter_add_rows(float* dtable, const int* ids, const float* dout, int64_t n, int dim);

// Index of first non-finite element, or -1.
int64_t find_nonfinite(const float* x, int64_t n);

// Fixed-order double-precision sum.
double reduce_sum(const float* x, int64_t n);

// In-place Adam with bias correction; t is the 1-based step count.
void adam_update(float* p, const float* g, float* m, float* v, int64_t n,
                 float lr, float beta1, float beta2, float eps, long t);

// Serial reference implementations (kept for parity tests and the benchmark).
namespace serial {
void matmul_nn(const float* a, const float* b, float* c, int m, int k, int n);
void matmul_nt(const float* a, const float* b, float* c, int m, int k, int n);
void matmul_tn(const float* a, const float* b, float* c, int m, int k, int n);
void softmax_rows(const float* x, const uint8_t* mask, float* y, int64_t rows, int cols);
void layernorm_fwd(const float* x, const float* gamma, const float* beta, float* y,
                   float* mean, float* rstd, int64_t rows, int cols, float eps);
void gelu_fwd(const float* x, float* y, int64_t n);
void im2col(const float* img, float* cols, int c, int h, int w,
            int kh, int kw, int stride, int pad, int ho, int wo);
void col2im(const float* cols, float* img, int c, int h, int w,
            int kh, int kw, int stride, int pad, int ho, int wo);
}  // namespace serial

}  // namespace refseq::kernels
