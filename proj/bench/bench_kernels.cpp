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

// Times the OpenMP kernels against the serial references.
// Usage: bench_kernels [repeats]

#include <omp.h>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <vector>

#include "refseq/kernels.hpp"
#include "refseq/rng.hpp"

using namespace refseq;
using Clock = std::chrono::steady_clock;

namespace {

double time_ms(const std::function<void()>& fn, int repeats) {
  fn();  // warm-up
  const auto t0 = Clock::now();
  for (int i = 0; i < repeats; ++i) fn();
  const auto t1 = Clock::now();
  return std::chrono::duration<double, std::milli>(t1 - t0).count() / repeats;
}

std::vector<float> rand_vec(Rng& rng, size_t n) {
  std::vector<float> v(n);
  for (auto& x : v) x = static_cast<float>(rng.uniform(-1, 1));
  return v;
}

void report(const char* name, double serial_ms, double omp_ms, double gflop) {
  std::printf("%-18s serial %8.3f ms (%6.2f GFLOP/s)   omp %8.3f ms (%6.2f GFLOP/s)   speedup %.2fx\n",
              name, serial_ms, gflop / serial_ms, omp_ms, gflop / omp_ms, serial_ms / omp_ms);
}

}  // namespace

int main(int argc, char** argv) {
  const int repeats = argc > 1 ? std::atoi(argv[1]) : 10;
  std::printf("threads: %d, repeats: %d\n", omp_get_max_threads(), repeats);
  Rng rng(7);

  {
    const int m = 384, k = 384, n = 384;
    auto a = rand_vec(rng, static_cast<size_t>(m) * k);
    auto b = rand_vec(rng, static_cast<size_t>(k) * n);
    std::vector<float> c(static_cast<size_t>(m) * n);
    const double gflop = 2.0 * m * k * n / 1e6;  // per-ms scale
    report("matmul_nn",
           time_ms([&] { kernels::serial::matmul_nn(a.data(), b.data(), c.data(), m, k, n); }, repeats),
           time_ms([&] { kernels::matmul_nn(a.data(), b.data(), c.data(), m, k, n); }, repeats),
           gflop);
    report("matmul_nt",
           time_ms([&] { kernels::serial::matmul_nt(a.data(), b.data(), c.data(), m, k, n); }, repeats),
           time_ms([&] { kernels::matmul_nt(a.data(), b.data(), c.data(), m, k, n); }, repeats),
           gflop);
    report("matmul_tn",
           time_ms([&] { kernels::serial::matmul_tn(a.data(), b.data(), c.data(), m, k, n); }, repeats),
           time_ms([&] { kernels::matmul_tn(a.data(), b.data(), c.data(), m, k, n); }, repeats),
           gflop);
  }
  {
    const int rows = 4096, cols = 128;
    auto x = rand_vec(rng, static_cast<size_t>(rows) * cols);
    std::vector<float> y(x.size());
    const double gflop = 4.0 * rows * cols / 1e6;
    report("softmax_rows",
           time_ms([&] { kernels::serial::softmax_rows(x.data(), nullptr, y.data(), rows, cols); }, repeats),
           time_ms([&] { kernels::softmax_rows(x.data(), nullptr, y.data(), rows, cols); }, repeats),
           gflop);
    std::vector<float> mean(rows), rstd(rows);
    auto gamma = rand_vec(rng, cols);
    auto beta = rand_vec(rng, cols);
    report("layernorm_fwd",
           time_ms([&] { kernels::serial::layernorm_fwd(x.data(), gamma.data(), beta.data(),
                                                        y.data(), mean.data(), rstd.data(), rows,
                                                        cols, 1e-5f); }, repeats),
           time_ms([&] { kernels::layernorm_fwd(x.data(), gamma.data(), beta.data(), y.data(),
                                                mean.data(), rstd.data(), rows, cols, 1e-5f); }, repeats),
           gflop);
    report("gelu_fwd",
           time_ms([&] { kernels::serial::gelu_fwd(x.data(), y.data(), static_cast<int64_t>(x.size())); }, repeats),
           time_ms([&] { kernels::gelu_fwd(x.data(), y.data(), static_cast<int64_t>(x.size())); }, repeats),
           gflop);
  }
  {
    const int c = 32, h = 64, w = 64, kh = 3, kw = 3, stride = 1, pad = 1;
    const int ho = (h + 2 * pad - kh) / stride + 1, wo = (w + 2 * pad - kw) / stride + 1;
    auto img = rand_vec(rng, static_cast<size_t>(c) * h * w);
    std::vector<float> cols(static_cast<size_t>(c) * kh * kw * ho * wo);
    const double gflop = static_cast<double>(cols.size()) / 1e6;
    report("im2col",
           time_ms([&] { kernels::serial::im2col(img.data(), cols.data(), c, h, w, kh, kw, stride, pad, ho, wo); }, repeats),
           time_ms([&] { kernels::im2col(img.data(), cols.data(), c, h, w, kh, kw, stride, pad, ho, wo); }, repeats),
           gflop);
  }
  return 0;
}
