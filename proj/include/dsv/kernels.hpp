#pragma once

// Block-transform kernels. Every kernel has a serial reference and an
// OpenMP variant over macroblocks; both produce bit-identical output because
// each macroblock is transformed independently with the same arithmetic.

#include "dsv/frame.hpp"

#include <array>
#include <cstdint>
#include <span>

namespace dsv::kernels {

enum class Exec { Serial, Parallel };

// Process-wide default used by the codec entry points.
Exec default_exec();
void set_default_exec(Exec exec);

using Block = std::array<double, 64>;

// Orthonormal 8x8 DCT-II and its inverse (row-major, separable).
void forward_dct8x8(const Block& in, Block& out);
void inverse_dct8x8(const Block& in, Block& out);

inline constexpr int kBlocksPerMacroblock = 6;  // 4 luma + U + V
inline constexpr int kChannels = kBlocksPerMacroblock * 64;

// Per-macroblock coding mode: 1 = intra (predict from mid-gray), 0 = inter
// (predict from the reference frame).
struct MacroblockPlan {
  int mb_rows = 0;
  int mb_cols = 0;
  std::span<const std::uint8_t> intra;
};

// Transform + uniform quantization of every macroblock into channel-major
// symbols laid out as (channel, mb_row, mb_col). `reference` may be null only
// when every macroblock is intra.
void encode_macroblocks(const RawFrame& src, const RawFrame* reference, const MacroblockPlan& plan,
                        double quant_step, int symbol_bound, std::span<std::int32_t> symbols, Exec exec);

// Dequantization + inverse transform + prediction; writes every sample of `out`.
void decode_macroblocks(std::span<const std::int32_t> symbols, const RawFrame* reference,
                        const MacroblockPlan& plan, double quant_step, RawFrame& out, Exec exec);

}  // namespace dsv::kernels
