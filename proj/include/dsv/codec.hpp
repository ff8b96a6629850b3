#pragma once

// Deterministic block-transform video codec. A frame becomes a CodedTensor of
// quantized coefficients shaped (384 channels, mb_rows, mb_cols); any subset
// of those symbols can be zeroed and the tensor still decodes to a full frame.

#include "dsv/frame.hpp"
#include "dsv/kernels.hpp"

#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

namespace dsv {

enum class FrameKind : std::uint8_t { I = 0, P = 1, PWithIPatch = 2 };

inline constexpr int kSymbolBound = 1023;
inline constexpr int kMacroblock = 16;

struct TensorDims {
  int channels = 0;
  int rows = 0;
  int cols = 0;

  std::size_t size() const { return static_cast<std::size_t>(channels) * rows * cols; }
  friend bool operator==(const TensorDims&, const TensorDims&) = default;
};

TensorDims tensor_dims_for(int width, int height);

struct QualityLevel {
  int level_id = 0;
  double quant_step = 1.0;
  double nominal_bpp = 0.0;
};

// Nine levels, quant_step geometric from 4 to 64; level 0 is the finest.
std::vector<QualityLevel> default_levels();
const QualityLevel& level_by_id(const std::vector<QualityLevel>& levels, int level_id);

struct CodedTensor {
  FrameKind kind = FrameKind::I;
  TensorDims dims;
  std::vector<std::int32_t> symbols;
  double quant_step = 1.0;
  int level_id = 0;
  std::optional<Rect> ipatch;

  int frame_width() const { return dims.cols * kMacroblock; }
  int frame_height() const { return dims.rows * kMacroblock; }
  std::size_t nonzero_count() const;
  friend bool operator==(const CodedTensor&, const CodedTensor&) = default;
};

// encoder_reference: what the sender assumes was decoded.
// decoder_reference: what the receiver actually decoded.
struct CodecState {
  RawFrame encoder_reference;
  RawFrame decoder_reference;
};

CodedTensor encode_iframe(const RawFrame& frame, const QualityLevel& level,
                          kernels::Exec exec = kernels::default_exec());

// Motion-free residual coding against state.encoder_reference; macroblocks
// inside `ipatch` are intra coded.
CodedTensor encode_pframe(const RawFrame& frame, const CodecState& state, const QualityLevel& level,
                          std::optional<Rect> ipatch, kernels::Exec exec = kernels::default_exec());

// Decodes against state.decoder_reference (P frames only).
RawFrame decode(const CodedTensor& tensor, const CodecState& state,
                kernels::Exec exec = kernels::default_exec());
RawFrame decode(const CodedTensor& tensor, const RawFrame* reference,
                kernels::Exec exec = kernels::default_exec());

// Intra flag per macroblock, row-major.
std::vector<std::uint8_t> intra_plan(const CodedTensor& tensor);

void validate_tensor(const CodedTensor& tensor);

}  // namespace dsv
