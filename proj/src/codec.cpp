#include "dsv/codec.hpp"

#include "dsv/error.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace dsv {
namespace {

void check_frame(const RawFrame& frame) {
  require(!frame.empty() && frame.width() % kMacroblock == 0 && frame.height() % kMacroblock == 0,
          ErrorKind::InvalidInput, "frame dimensions must be positive multiples of 16");
}

void check_patch(const RawFrame& frame, const Rect& r) {
  require(r.width > 0 && r.height > 0 && r.x >= 0 && r.y >= 0 && r.x + r.width <= frame.width() &&
              r.y + r.height <= frame.height(),
          ErrorKind::InvalidInput, "I-patch outside frame bounds");
  require(r.x % kMacroblock == 0 && r.y % kMacroblock == 0 && r.width % kMacroblock == 0 &&
              r.height % kMacroblock == 0,
          ErrorKind::InvalidInput, "I-patch not aligned to 16-pixel macroblocks");
}

kernels::MacroblockPlan make_plan(const TensorDims& dims, const std::vector<std::uint8_t>& intra) {
  return {dims.rows, dims.cols, intra};
}

}  // namespace

TensorDims tensor_dims_for(int width, int height) {
  return {kernels::kChannels, height / kMacroblock, width / kMacroblock};
}

std::vector<QualityLevel> default_levels() {
  std::vector<QualityLevel> levels;
  for (int i = 0; i < 9; ++i) {
    const double step = 4.0 * std::pow(16.0, i / 8.0);
    // Empirical fit of the coder's rate on natural content.
    levels.push_back({i, step, 2.0 * std::pow(4.0 / step, 0.75)});
  }
  return levels;
}

const QualityLevel& level_by_id(const std::vector<QualityLevel>& levels, int level_id) {
  for (const auto& l : levels)
    if (l.level_id == level_id) return l;
  fail(ErrorKind::InvalidInput, "unknown quality level " + std::to_string(level_id));
}

std::size_t CodedTensor::nonzero_count() const {
  return static_cast<std::size_t>(std::count_if(symbols.begin(), symbols.end(), [](auto s) { return s != 0; }));
}

std::vector<std::uint8_t> intra_plan(const CodedTensor& tensor) {
  const int rows = tensor.dims.rows;
  const int cols = tensor.dims.cols;
  std::vector<std::uint8_t> intra(static_cast<std::size_t>(rows) * cols, 0);
  if (tensor.kind == FrameKind::I) {
    std::fill(intra.begin(), intra.end(), 1);
  } else if (tensor.ipatch) {
    const Rect& r = *tensor.ipatch;
    for (int mr = r.y / kMacroblock; mr < (r.y + r.height) / kMacroblock; ++mr)
      for (int mc = r.x / kMacroblock; mc < (r.x + r.width) / kMacroblock; ++mc)
        intra[static_cast<std::size_t>(mr) * cols + mc] = 1;
  }
  return intra;
}

void validate_tensor(const CodedTensor& t) {
  require(t.dims.channels == kernels::kChannels && t.dims.rows > 0 && t.dims.cols > 0, ErrorKind::InvalidInput,
          "tensor dims must be (384, rows, cols)");
  require(t.symbols.size() == t.dims.size(), ErrorKind::InvalidInput, "symbol count does not match dims");
  require(t.quant_step > 0.0, ErrorKind::InvalidInput, "quant_step must be positive");
  for (auto s : t.symbols)
    require(s >= -kSymbolBound && s <= kSymbolBound, ErrorKind::InvalidInput, "symbol outside alphabet");
}

CodedTensor encode_iframe(const RawFrame& frame, const QualityLevel& level, kernels::Exec exec) {
  check_frame(frame);
  require(level.quant_step > 0.0, ErrorKind::InvalidInput, "quant_step must be positive");
  CodedTensor t;
  t.kind = FrameKind::I;
  t.dims = tensor_dims_for(frame.width(), frame.height());
  t.symbols.assign(t.dims.size(), 0);
  t.quant_step = level.quant_step;
  t.level_id = level.level_id;
  const auto intra = intra_plan(t);
  kernels::encode_macroblocks(frame, nullptr, make_plan(t.dims, intra), level.quant_step, kSymbolBound, t.symbols,
                              exec);
  return t;
}

CodedTensor encode_pframe(const RawFrame& frame, const CodecState& state, const QualityLevel& level,
                          std::optional<Rect> ipatch, kernels::Exec exec) {
  check_frame(frame);
  require(!state.encoder_reference.empty(), ErrorKind::State, "P-frame encode without an encoder reference");
  require(state.encoder_reference.same_dims(frame), ErrorKind::InvalidInput, "reference dims differ from frame");
  if (ipatch) check_patch(frame, *ipatch);
  CodedTensor t;
  t.kind = ipatch ? FrameKind::PWithIPatch : FrameKind::P;
  t.dims = tensor_dims_for(frame.width(), frame.height());
  t.symbols.assign(t.dims.size(), 0);
  t.quant_step = level.quant_step;
  t.level_id = level.level_id;
  t.ipatch = ipatch;
  const auto intra = intra_plan(t);
  kernels::encode_macroblocks(frame, &state.encoder_reference, make_plan(t.dims, intra), level.quant_step,
                              kSymbolBound, t.symbols, exec);
  return t;
}

RawFrame decode(const CodedTensor& tensor, const RawFrame* reference, kernels::Exec exec) {
  validate_tensor(tensor);
  RawFrame out(tensor.frame_width(), tensor.frame_height());
  if (tensor.kind != FrameKind::I) {
    require(reference != nullptr && !reference->empty(), ErrorKind::State, "P-frame decode without a reference");
    require(reference->same_dims(out), ErrorKind::InvalidInput, "reference dims differ from tensor");
  }
  const auto intra = intra_plan(tensor);
  kernels::decode_macroblocks(tensor.symbols, tensor.kind == FrameKind::I ? nullptr : reference,
                              make_plan(tensor.dims, intra), tensor.quant_step, out, exec);
  return out;
}

RawFrame decode(const CodedTensor& tensor, const CodecState& state, kernels::Exec exec) {
  return decode(tensor, &state.decoder_reference, exec);
}

}  // namespace dsv
