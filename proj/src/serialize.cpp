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

#include "refseq/serialize.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>

#include "refseq/errors.hpp"

static_assert(std::endian::native == std::endian::little,
              "RSEQ1 writer assumes a little-endian host");
static_assert(sizeof(float) == 4, "RSEQ1 payload requires 32-bit IEEE floats");

namespace refseq {

namespace {
constexpr char kMagic[5] = {'R', 'S', 'E', 'Q', '1'};

void put_u32(std::ostream& os, uint32_t v) {
  os.write(reinterpret_cast<const char*>(&v), 4);
}

uint32_t get_u32(std::istream& is, const std::string& path) {
  uint32_t v = 0;
  if (!is.read(reinterpret_cast<char*>(&v), 4))
    throw IoError("rseq1: truncated record in " + path);
  return v;
}
}  // namespace

void write_rseq1(const std::string& path, const std::vector<NamedTensor>& entries) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("rseq1: cannot open " + path + " for writing");
  os.write(kMagic, 5);
  for (const auto& e : entries) {
    if (numel(e.shape) != static_cast<int64_t>(e.data.size()))
      throw IoError("rseq1: entry '" + e.name + "' shape/data mismatch");
    put_u32(os, static_cast<uint32_t>(e.name.size()));
    os.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
    put_u32(os, static_cast<uint32_t>(e.shape.size()));
    for (int d : e.shape) put_u32(os, static_cast<uint32_t>(d));
    os.write(reinterpret_cast<const char*>(e.data.data()),
             static_cast<std::streamsize>(e.data.size() * 4));
  }
  if (!os) throw IoError("rseq1: write failed for " + path);
}

std::vector<NamedTensor> read_rseq1(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("rseq1: cannot open " + path);
  char magic[5];
  if (!is.read(magic, 5) || std::memcmp(magic, kMagic, 5) != 0)
    throw IoError("rseq1: bad magic in " + path);
  std::vector<NamedTensor> out;
  while (true) {
    if (is.peek() == std::char_traits<char>::eof()) break;
    NamedTensor e;
    const uint32_t name_len = get_u32(is, path);
    e.name.resize(name_len);
    if (!is.read(e.name.data(), name_len)) throw IoError("rseq1: truncated name in " + path);
    const uint32_t rank = get_u32(is, path);
    if (rank > 8) throw IoError("rseq1: implausible rank " + std::to_string(rank) + " in " + path);
    int64_t n = 1;
    for (uint32_t i = 0; i < rank; ++i) {
      const uint32_t d = get_u32(is, path);
      e.shape.push_back(static_cast<int>(d));
      n *= d;
    }
    e.data.resize(static_cast<size_t>(n));
    if (!is.read(reinterpret_cast<char*>(e.data.data()), n * 4))
      throw IoError("rseq1: truncated payload for '" + e.name + "' in " + path);
    out.push_back(std::move(e));
  }
  return out;
}

void save_params(const std::string& path, const ParamList& params) {
  std::vector<NamedTensor> entries;
  entries.reserve(params.size());
  for (const auto& [name, t] : params)
    entries.push_back(NamedTensor{name, t.shape(), t.values()});
  write_rseq1(path, entries);
}

void load_params(const std::string& path, ParamList& params) {
  auto entries = read_rseq1(path);
  std::map<std::string, const NamedTensor*> by_name;
  for (const auto& e : entries) by_name[e.name] = &e;
  for (auto& [name, t] : params) {
    auto it = by_name.find(name);
    if (it == by_name.end())
      throw IoError("checkpoint " + path + " is missing parameter '" + name + "'");
    const NamedTensor& e = *it->second;
    if (e.shape != t.shape())
      throw IoError("checkpoint " + path + ": parameter '" + name + "' has shape " +
                    shape_str(e.shape) + ", expected " + shape_str(t.shape()));
    std::copy(e.data.begin(), e.data.end(), t.data());
  }
}

}  // namespace refseq
