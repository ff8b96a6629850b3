#include "dsv/kernels.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numbers>

namespace dsv::kernels {
namespace {

std::atomic<Exec> g_exec{Exec::Parallel};

struct CosineTable {
  double c[8][8];
  CosineTable() {
    for (int u = 0; u < 8; ++u) {
      const double a = u == 0 ? std::sqrt(1.0 / 8.0) : std::sqrt(2.0 / 8.0);
      for (int x = 0; x < 8; ++x) c[u][x] = a * std::cos((2 * x + 1) * u * std::numbers::pi / 16.0);
    }
  }
};

const CosineTable& table() {
  static const CosineTable t;
  return t;
}

// Plane geometry of block `b` (0..5) in macroblock (mr, mc).
struct BlockSite {
  const std::uint8_t* src = nullptr;
  const std::uint8_t* ref = nullptr;
  std::uint8_t* dst = nullptr;
  int stride = 0;
};

template <typename FramePtr>
auto plane_ptr(FramePtr& f, int b, int mr, int mc, int& stride) {
  if (b < 4) {
    stride = f.width();
    const int x = mc * 16 + (b % 2) * 8;
    const int y = mr * 16 + (b / 2) * 8;
    return f.luma().data() + static_cast<std::size_t>(y) * stride + x;
  }
  stride = f.chroma_width();
  auto& plane = b == 4 ? f.chroma_u() : f.chroma_v();
  return plane.data() + static_cast<std::size_t>(mr * 8) * stride + mc * 8;
}

std::size_t symbol_index(const MacroblockPlan& plan, int channel, int mr, int mc) {
  return (static_cast<std::size_t>(channel) * plan.mb_rows + mr) * plan.mb_cols + mc;
}

void encode_one(const RawFrame& src, const RawFrame* ref, const MacroblockPlan& plan, double step,
                int bound, std::span<std::int32_t> symbols, int mb) {
  const int mr = mb / plan.mb_cols;
  const int mc = mb % plan.mb_cols;
  const bool intra = plan.intra[mb] != 0;
  Block in{};
  Block out{};
  for (int b = 0; b < kBlocksPerMacroblock; ++b) {
    int stride = 0;
    const std::uint8_t* s = plane_ptr(src, b, mr, mc, stride);
    const std::uint8_t* r = intra ? nullptr : plane_ptr(*ref, b, mr, mc, stride);
    for (int y = 0; y < 8; ++y)
      for (int x = 0; x < 8; ++x) {
        const double pred = intra ? 128.0 : static_cast<double>(r[y * stride + x]);
        in[y * 8 + x] = static_cast<double>(s[y * stride + x]) - pred;
      }
    forward_dct8x8(in, out);
    for (int k = 0; k < 64; ++k) {
      const long q = std::lround(out[k] / step);
      symbols[symbol_index(plan, b * 64 + k, mr, mc)] =
          static_cast<std::int32_t>(std::clamp<long>(q, -bound, bound));
    }
  }
}

void decode_one(std::span<const std::int32_t> symbols, const RawFrame* ref, const MacroblockPlan& plan,
                double step, RawFrame& out_frame, int mb) {
  const int mr = mb / plan.mb_cols;
  const int mc = mb % plan.mb_cols;
  const bool intra = plan.intra[mb] != 0;
  Block in{};
  Block out{};
  for (int b = 0; b < kBlocksPerMacroblock; ++b) {
    for (int k = 0; k < 64; ++k) in[k] = symbols[symbol_index(plan, b * 64 + k, mr, mc)] * step;
    inverse_dct8x8(in, out);
    int stride = 0;
    std::uint8_t* d = plane_ptr(out_frame, b, mr, mc, stride);
    const std::uint8_t* r = intra ? nullptr : plane_ptr(*ref, b, mr, mc, stride);
    for (int y = 0; y < 8; ++y)
      for (int x = 0; x < 8; ++x) {
        const double pred = intra ? 128.0 : static_cast<double>(r[y * stride + x]);
        const double v = std::nearbyint(pred + out[y * 8 + x]);
        d[y * stride + x] = static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0));
      }
  }
}

}  // namespace

Exec default_exec() { return g_exec.load(); }
void set_default_exec(Exec exec) { g_exec.store(exec); }

void forward_dct8x8(const Block& in, Block& out) {
  const auto& c = table().c;
  Block tmp{};
  for (int y = 0; y < 8; ++y)
    for (int u = 0; u < 8; ++u) {
      double s = 0.0;
      for (int x = 0; x < 8; ++x) s += c[u][x] * in[y * 8 + x];
      tmp[y * 8 + u] = s;
    }
  for (int v = 0; v < 8; ++v)
    for (int u = 0; u < 8; ++u) {
      double s = 0.0;
      for (int y = 0; y < 8; ++y) s += c[v][y] * tmp[y * 8 + u];
      out[v * 8 + u] = s;
    }
}

void inverse_dct8x8(const Block& in, Block& out) {
  const auto& c = table().c;
  Block tmp{};
  for (int v = 0; v < 8; ++v)
    for (int x = 0; x < 8; ++x) {
      double s = 0.0;
      for (int u = 0; u < 8; ++u) s += c[u][x] * in[v * 8 + u];
      tmp[v * 8 + x] = s;
    }
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x) {
      double s = 0.0;
      for (int v = 0; v < 8; ++v) s += c[v][y] * tmp[v * 8 + x];
      out[y * 8 + x] = s;
    }
}

void encode_macroblocks(const RawFrame& src, const RawFrame* reference, const MacroblockPlan& plan,
                        double quant_step, int symbol_bound, std::span<std::int32_t> symbols, Exec exec) {
  const int count = plan.mb_rows * plan.mb_cols;
  if (exec == Exec::Serial) {
    for (int mb = 0; mb < count; ++mb) encode_one(src, reference, plan, quant_step, symbol_bound, symbols, mb);
    return;
  }
#pragma omp parallel for schedule(static)
  for (int mb = 0; mb < count; ++mb) encode_one(src, reference, plan, quant_step, symbol_bound, symbols, mb);
}

void decode_macroblocks(std::span<const std::int32_t> symbols, const RawFrame* reference,
                        const MacroblockPlan& plan, double quant_step, RawFrame& out, Exec exec) {
  const int count = plan.mb_rows * plan.mb_cols;
  if (exec == Exec::Serial) {
    for (int mb = 0; mb < count; ++mb) decode_one(symbols, reference, plan, quant_step, out, mb);
    return;
  }
#pragma omp parallel for schedule(static)
  for (int mb = 0; mb < count; ++mb) decode_one(symbols, reference, plan, quant_step, out, mb);
}

}  // namespace dsv::kernels
