#pragma once

#include <cstdint>
#include <vector>

namespace dsv {

// Pixel rectangle in luma coordinates.
struct Rect {
  int x = 0;
  int y = 0;
  int width = 0;
  int height = 0;

  bool contains(int px, int py) const { return px >= x && px < x + width && py >= y && py < y + height; }
  int area() const { return width * height; }
  friend bool operator==(const Rect&, const Rect&) = default;
};

// 8-bit 4:2:0 frame. Dimensions are positive multiples of 16 so that every
// 16x16 macroblock carries four luma and two chroma 8x8 blocks.
class RawFrame {
 public:
  RawFrame() = default;
  RawFrame(int width, int height, std::uint8_t luma_fill = 128, std::uint8_t chroma_fill = 128);

  int width() const { return width_; }
  int height() const { return height_; }
  int chroma_width() const { return width_ / 2; }
  int chroma_height() const { return height_ / 2; }
  bool empty() const { return width_ == 0; }

  std::vector<std::uint8_t>& luma() { return luma_; }
  const std::vector<std::uint8_t>& luma() const { return luma_; }
  std::vector<std::uint8_t>& chroma_u() { return u_; }
  const std::vector<std::uint8_t>& chroma_u() const { return u_; }
  std::vector<std::uint8_t>& chroma_v() { return v_; }
  const std::vector<std::uint8_t>& chroma_v() const { return v_; }

  std::uint8_t& y_at(int x, int y) { return luma_[static_cast<std::size_t>(y) * width_ + x]; }
  std::uint8_t y_at(int x, int y) const { return luma_[static_cast<std::size_t>(y) * width_ + x]; }

  bool same_dims(const RawFrame& o) const { return width_ == o.width_ && height_ == o.height_; }
  friend bool operator==(const RawFrame&, const RawFrame&) = default;

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<std::uint8_t> luma_;
  std::vector<std::uint8_t> u_;
  std::vector<std::uint8_t> v_;
};

}  // namespace dsv
