#include "dsv/range_coder.hpp"

#include <algorithm>

namespace dsv {

namespace {
constexpr std::uint32_t kTop = 1u << 24;
}

void RangeEncoder::encode(std::uint32_t start, std::uint32_t size, std::uint32_t total) {
  const std::uint32_t r = range_ / total;
  low_ += static_cast<std::uint64_t>(r) * start;
  range_ = r * size;
  while (range_ < kTop) {
    range_ <<= 8;
    shift_low();
  }
}

void RangeEncoder::shift_low() {
  if (static_cast<std::uint32_t>(low_) < 0xFF000000u || (low_ >> 32) != 0) {
    const auto carry = static_cast<std::uint8_t>(low_ >> 32);
    std::uint8_t temp = cache_;
    do {
      const auto byte = static_cast<std::uint8_t>(temp + carry);
      if (skip_first_)
        skip_first_ = false;
      else
        out_.push_back(byte);
      temp = 0xFF;
    } while (--cache_size_ != 0);
    cache_ = static_cast<std::uint8_t>(static_cast<std::uint32_t>(low_) >> 24);
  }
  ++cache_size_;
  low_ = (low_ & 0x00FFFFFFu) << 8;
}

std::vector<std::uint8_t> RangeEncoder::finish() {
  for (int i = 0; i < 5; ++i) shift_low();
  while (!out_.empty() && out_.back() == 0) out_.pop_back();
  return std::move(out_);
}

RangeDecoder::RangeDecoder(std::span<const std::uint8_t> bytes) : in_(bytes) {
  for (int i = 0; i < 4; ++i) code_ = (code_ << 8) | next_byte();
}

std::uint8_t RangeDecoder::next_byte() { return pos_ < in_.size() ? in_[pos_++] : 0; }

std::uint32_t RangeDecoder::get(std::uint32_t total) {
  step_ = range_ / total;
  return std::min(code_ / step_, total - 1);
}

void RangeDecoder::update(std::uint32_t start, std::uint32_t size) {
  code_ -= step_ * start;
  range_ = step_ * size;
  while (range_ < kTop) {
    code_ = (code_ << 8) | next_byte();
    range_ <<= 8;
  }
}

}  // namespace dsv
