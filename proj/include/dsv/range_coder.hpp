#pragma once

// 32-bit carry-propagating range coder (LZMA-style low/cache scheme) driven
// by cumulative frequencies with totals below 2^16.

#include <cstdint>
#include <span>
#include <vector>

namespace dsv {

class RangeEncoder {
 public:
  void encode(std::uint32_t start, std::uint32_t size, std::uint32_t total);
  // Flushes pending state and returns the byte stream; trailing zero bytes
  // are dropped because the decoder pads with zeros.
  std::vector<std::uint8_t> finish();

 private:
  void shift_low();

  std::uint64_t low_ = 0;
  std::uint32_t range_ = 0xFFFFFFFFu;
  std::uint8_t cache_ = 0;
  std::uint64_t cache_size_ = 1;
  bool skip_first_ = true;  // the first emitted byte is always zero
  std::vector<std::uint8_t> out_;
};

class RangeDecoder {
 public:
  explicit RangeDecoder(std::span<const std::uint8_t> bytes);

  // Returns a cumulative value in [0, total); call update() with the symbol
  // interval that contains it before the next get().
  std::uint32_t get(std::uint32_t total);
  void update(std::uint32_t start, std::uint32_t size);

 private:
  std::uint8_t next_byte();

  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
  std::uint32_t code_ = 0;
  std::uint32_t range_ = 0xFFFFFFFFu;
  std::uint32_t step_ = 1;
};

}  // namespace dsv
