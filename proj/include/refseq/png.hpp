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
#include <optional>
#include <string>
#include <vector>

#include "refseq/codecs.hpp"
#include "refseq/parsing_map.hpp"

namespace refseq::png {

// Minimal RGB8 PNG writer (uncompressed zlib stored blocks). Diagnostic only.
void write_rgb(const std::string& path, int width, int height,
               const std::vector<uint8_t>& rgb);

// Renders a scene image with optional diagnostics: box outline, keypoint
// markers, and a parsing tint; upscales by an integer factor for legibility.
struct Overlay {
  std::optional<codec::Region> box;
  std::optional<codec::KeypointSet> keypoints;
  const ParsingMap* parsing = nullptr;  // full-frame label map
};

void write_overlay(const std::string& path, const std::vector<float>& image_chw, int width,
                   int height, const Overlay& overlay, int upscale = 4);

}  // namespace refseq::png
