#include "dsv/frame.hpp"

#include "dsv/error.hpp"

#include <string>

namespace dsv {

RawFrame::RawFrame(int width, int height, std::uint8_t luma_fill, std::uint8_t chroma_fill)
    : width_(width), height_(height) {
  require(width > 0 && height > 0 && width % 16 == 0 && height % 16 == 0, ErrorKind::InvalidInput,
          "frame dimensions must be positive multiples of 16, got " + std::to_string(width) + "x" +
              std::to_string(height));
  luma_.assign(static_cast<std::size_t>(width) * height, luma_fill);
  u_.assign(static_cast<std::size_t>(width / 2) * (height / 2), chroma_fill);
  v_.assign(u_.size(), chroma_fill);
}

}  // namespace dsv
