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
#include <vector>

#include "refseq/optim.hpp"
#include "refseq/tensor.hpp"

namespace refseq {

// Portable tensor container. Layout, byte-exact across platforms:
//   magic "RSEQ1" (5 bytes), then per-entry records until EOF:
//     u32 name length, name bytes (UTF-8),
//     u32 rank, u32 dims[rank],
//     f32 payload, little-endian, row-major.
struct NamedTensor {
  std::string name;
  Shape shape;
  std::vector<float> data;
};

void write_rseq1(const std::string& path, const std::vector<NamedTensor>& entries);
std::vector<NamedTensor> read_rseq1(const std::string& path);

// Checkpoint helpers over a named parameter list.
void save_params(const std::string& path, const ParamList& params);
// Loads by name; every registered parameter must be present with its shape.
void load_params(const std::string& path, ParamList& params);

}  // namespace refseq
