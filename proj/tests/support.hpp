#pragma once

// Shared fixtures for the unit tests.

#include "dsv/frame.hpp"
#include "dsv/rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>

namespace dsv::test {

inline RawFrame random_frame(int w, int h, std::uint64_t seed) {
  Rng rng(seed);
  RawFrame f(w, h);
  for (auto& v : f.luma()) v = static_cast<std::uint8_t>(rng.below(256));
  for (auto& v : f.chroma_u()) v = static_cast<std::uint8_t>(rng.below(256));
  for (auto& v : f.chroma_v()) v = static_cast<std::uint8_t>(rng.below(256));
  return f;
}

// Smooth content with some texture, closer to what the codec is built for.
inline RawFrame smooth_frame(int w, int h, std::uint64_t seed) {
  Rng rng(seed);
  const double a = rng.uniform(0.02, 0.08);
  const double b = rng.uniform(0.02, 0.08);
  RawFrame f(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double v = 128 + 60 * std::sin(a * x) * std::cos(b * y) + 10 * rng.normal();
      f.y_at(x, y) = static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0));
    }
  for (auto& v : f.chroma_u()) v = static_cast<std::uint8_t>(120 + rng.below(16));
  for (auto& v : f.chroma_v()) v = static_cast<std::uint8_t>(120 + rng.below(16));
  return f;
}

}  // namespace dsv::test
