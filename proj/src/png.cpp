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

#include "refseq/png.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "refseq/errors.hpp"

namespace refseq::png {

namespace {

uint32_t crc32(const uint8_t* data, size_t n, uint32_t crc = 0xffffffffu) {
  static uint32_t table[256];
  static bool init = false;
  if (!init) {
    for (uint32_t i = 0; i < 256; ++i) {
      uint32_t c = i;
      for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xedb88320u ^ (c >> 1) : c >> 1;
      table[i] = c;
    }
    init = true;
  }
  for (size_t i = 0; i < n; ++i) crc = table[(crc ^ data[i]) & 0xff] ^ (crc >> 8);
  return crc;
}

void put_u32be(std::vector<uint8_t>& out, uint32_t v) {
  out.push_back(static_cast<uint8_t>(v >> 24));
  out.push_back(static_cast<uint8_t>(v >> 16));
  out.push_back(static_cast<uint8_t>(v >> 8));
  out.push_back(static_cast<uint8_t>(v));
}

void chunk(std::vector<uint8_t>& out, const char type[4], const std::vector<uint8_t>& payload) {
  put_u32be(out, static_cast<uint32_t>(payload.size()));
  std::vector<uint8_t> body(type, type + 4);
  body.insert(body.end(), payload.begin(), payload.end());
  out.insert(out.end(), body.begin(), body.end());
  put_u32be(out, crc32(body.data(), body.size()) ^ 0xffffffffu);
}

// zlib stream with stored (uncompressed) deflate blocks.
std::vector<uint8_t> zlib_stored(const std::vector<uint8_t>& raw) {
  std::vector<uint8_t> z{0x78, 0x01};
  size_t off = 0;
  while (off < raw.size()) {
    const size_t n = std::min<size_t>(65535, raw.size() - off);
    const bool final = off + n == raw.size();
    z.push_back(final ? 1 : 0);
    z.push_back(static_cast<uint8_t>(n & 0xff));
    z.push_back(static_cast<uint8_t>(n >> 8));
    z.push_back(static_cast<uint8_t>(~n & 0xff));
    z.push_back(static_cast<uint8_t>((~n >> 8) & 0xff));
    z.insert(z.end(), raw.begin() + static_cast<long>(off), raw.begin() + static_cast<long>(off + n));
    off += n;
  }
  uint32_t a = 1, b = 0;
  for (uint8_t byte : raw) {
    a = (a + byte) % 65521;
    b = (b + a) % 65521;
  }
  put_u32be(z, (b << 16) | a);
  return z;
}

}  // namespace

void write_rgb(const std::string& path, int width, int height, const std::vector<uint8_t>& rgb) {
  if (static_cast<size_t>(width) * height * 3 != rgb.size())
    throw ShapeError("png: buffer does not match dimensions");
  std::vector<uint8_t> out{0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};
  std::vector<uint8_t> ihdr;
  put_u32be(ihdr, static_cast<uint32_t>(width));
  put_u32be(ihdr, static_cast<uint32_t>(height));
  ihdr.push_back(8);   // bit depth
  ihdr.push_back(2);   // color type: truecolor
  ihdr.push_back(0);   // compression
  ihdr.push_back(0);   // filter
  ihdr.push_back(0);   // interlace
  chunk(out, "IHDR", ihdr);

  std::vector<uint8_t> raw;
  raw.reserve(static_cast<size_t>(height) * (1 + static_cast<size_t>(width) * 3));
  for (int y = 0; y < height; ++y) {
    raw.push_back(0);  // filter: none
    raw.insert(raw.end(), rgb.begin() + static_cast<long>(y) * width * 3,
               rgb.begin() + static_cast<long>(y + 1) * width * 3);
  }
  chunk(out, "IDAT", zlib_stored(raw));
  chunk(out, "IEND", {});

  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("png: cannot open " + path);
  os.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
}

namespace {

const uint8_t kTint[5][3] = {
    {0, 0, 0}, {255, 64, 64}, {64, 255, 64}, {64, 64, 255}, {255, 255, 64}};

}  // namespace

void write_overlay(const std::string& path, const std::vector<float>& image_chw, int width,
                   int height, const Overlay& overlay, int upscale) {
  const int W = width * upscale, H = height * upscale;
  std::vector<uint8_t> rgb(static_cast<size_t>(W) * H * 3, 0);
  auto src = [&](int c, int y, int x) {
    return image_chw[(static_cast<size_t>(c) * height + y) * width + x];
  };
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      const int sy = y / upscale, sx = x / upscale;
      for (int c = 0; c < 3; ++c) {
        float v = src(c, sy, sx);
        if (overlay.parsing) {
          const int label = overlay.parsing->label(sy, sx);
          if (label > 0 && label < 5)
            v = 0.55f * v + 0.45f * (kTint[label][c] / 255.f);
        }
        rgb[(static_cast<size_t>(y) * W + x) * 3 + c] =
            static_cast<uint8_t>(std::clamp(v, 0.f, 1.f) * 255.f);
      }
    }
  }
  auto set_px = [&](int x, int y, uint8_t r, uint8_t g, uint8_t b) {
    if (x < 0 || y < 0 || x >= W || y >= H) return;
    uint8_t* p = &rgb[(static_cast<size_t>(y) * W + x) * 3];
    p[0] = r;
    p[1] = g;
    p[2] = b;
  };
  if (overlay.box) {
    const int x1 = static_cast<int>(overlay.box->x1 * upscale);
    const int y1 = static_cast<int>(overlay.box->y1 * upscale);
    const int x2 = static_cast<int>(overlay.box->x2 * upscale);
    const int y2 = static_cast<int>(overlay.box->y2 * upscale);
    for (int x = x1; x <= x2; ++x) {
      set_px(x, y1, 255, 255, 255);
      set_px(x, y2, 255, 255, 255);
    }
    for (int y = y1; y <= y2; ++y) {
      set_px(x1, y, 255, 255, 255);
      set_px(x2, y, 255, 255, 255);
    }
  }
  if (overlay.keypoints) {
    for (const auto& pt : overlay.keypoints->points) {
      if (!pt) continue;
      const int cx = static_cast<int>(pt->first * upscale);
      const int cy = static_cast<int>(pt->second * upscale);
      for (int d = -3; d <= 3; ++d) {
        set_px(cx + d, cy, 255, 0, 255);
        set_px(cx, cy + d, 255, 0, 255);
      }
    }
  }
  write_rgb(path, W, H, rgb);
}

}  // namespace refseq::png
