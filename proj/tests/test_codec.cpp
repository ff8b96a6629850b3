#include "doctest.h"

#include "dsv/bitrate.hpp"
#include "dsv/codec.hpp"
#include "dsv/entropy.hpp"
#include "dsv/error.hpp"
#include "dsv/metrics.hpp"
#include "dsv/packetize.hpp"
#include "dsv/video_io.hpp"
#include "support.hpp"

#include <cmath>
#include <filesystem>
#include <numbers>

using namespace dsv;

namespace {

// Reference 2-D DCT straight from the definition, no separability.
double basis(int u, int x) {
  const double a = u == 0 ? std::sqrt(1.0 / 8.0) : std::sqrt(2.0 / 8.0);
  return a * std::cos((2 * x + 1) * u * std::numbers::pi / 16.0);
}

// Intra round trip of the luma plane by brute force: level shift, DCT,
// round-to-nearest quantization, dequantize, inverse DCT, round, clamp.
std::vector<std::uint8_t> oracle_intra_luma(const RawFrame& f, double step) {
  std::vector<std::uint8_t> out(f.luma().size());
  for (int by = 0; by < f.height(); by += 8)
    for (int bx = 0; bx < f.width(); bx += 8) {
      double q[8][8];
      for (int v = 0; v < 8; ++v)
        for (int u = 0; u < 8; ++u) {
          double s = 0.0;
          for (int y = 0; y < 8; ++y)
            for (int x = 0; x < 8; ++x) s += basis(u, x) * basis(v, y) * (f.y_at(bx + x, by + y) - 128.0);
          q[v][u] = static_cast<double>(std::lround(s / step)) * step;
        }
      for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x) {
          double s = 0.0;
          for (int v = 0; v < 8; ++v)
            for (int u = 0; u < 8; ++u) s += basis(u, x) * basis(v, y) * q[v][u];
          const double p = std::clamp(std::nearbyint(128.0 + s), 0.0, 255.0);
          out[static_cast<std::size_t>(by + y) * f.width() + bx + x] = static_cast<std::uint8_t>(p);
        }
    }
  return out;
}

double oracle_mse(const std::vector<std::uint8_t>& a, const std::vector<std::uint8_t>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (double(a[i]) - double(b[i])) * (double(a[i]) - double(b[i]));
  return s / static_cast<double>(a.size());
}

RawFrame checkerboard(int side, int square, std::uint8_t lo, std::uint8_t hi) {
  RawFrame f(side, side);
  for (int y = 0; y < side; ++y)
    for (int x = 0; x < side; ++x) f.y_at(x, y) = ((x / square + y / square) % 2) ? hi : lo;
  return f;
}

std::size_t symbol_at(const TensorDims& d, int ch, int r, int c) {
  return (static_cast<std::size_t>(ch) * d.rows + r) * d.cols + c;
}

double coded_bytes(const CodedTensor& t) { return shannon_bytes(t.symbols, fit_model(t)); }

}  // namespace

TEST_CASE("quality levels: nine, geometric 4..64, ordered") {
  const auto levels = default_levels();
  REQUIRE(levels.size() == 9);
  CHECK(levels.front().quant_step == doctest::Approx(4.0));
  CHECK(levels.back().quant_step == doctest::Approx(64.0));
  for (std::size_t i = 1; i < levels.size(); ++i) {
    CHECK(levels[i].quant_step / levels[i - 1].quant_step == doctest::Approx(std::pow(16.0, 1.0 / 8.0)));
    CHECK(levels[i].quant_step > levels[i - 1].quant_step);
    CHECK(levels[i].nominal_bpp < levels[i - 1].nominal_bpp);
    CHECK(levels[i].level_id == static_cast<int>(i));
  }
  CHECK_THROWS_AS(level_by_id(levels, 42), Error);
}

TEST_CASE("constant gray frame: one nonzero symbol per block at most, the DC") {
  for (std::uint8_t gray : {std::uint8_t{128}, std::uint8_t{77}}) {
    const RawFrame f(64, 48, gray, gray);
    for (const auto& level : default_levels()) {
      const CodedTensor t = encode_iframe(f, level);
      const auto d = t.dims;
      for (int ch = 0; ch < d.channels; ++ch)
        for (int r = 0; r < d.rows; ++r)
          for (int c = 0; c < d.cols; ++c) {
            const auto s = t.symbols[symbol_at(d, ch, r, c)];
            if (ch % 64 != 0) CHECK(s == 0);
          }
      if (gray == 128) CHECK(t.nonzero_count() == 0);
      else CHECK(t.nonzero_count() == static_cast<std::size_t>(d.rows * d.cols * 6));
    }
  }
}

TEST_CASE("forward and inverse DCT match the brute-force definition") {
  Rng rng(3);
  kernels::Block in{};
  for (auto& v : in) v = rng.uniform(-128, 128);
  kernels::Block out{};
  kernels::forward_dct8x8(in, out);
  for (int v = 0; v < 8; ++v)
    for (int u = 0; u < 8; ++u) {
      double s = 0.0;
      for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x) s += basis(u, x) * basis(v, y) * in[y * 8 + x];
      CHECK(out[v * 8 + u] == doctest::Approx(s).epsilon(1e-12));
    }
  kernels::Block back{};
  kernels::inverse_dct8x8(out, back);
  for (int i = 0; i < 64; ++i) CHECK(back[i] == doctest::Approx(in[i]).epsilon(1e-12));
}

TEST_CASE("checkerboard at the finest level: PSNR equals the reference DCT round trip") {
  const auto levels = default_levels();
  for (int square : {1, 3, 4}) {
    const RawFrame f = checkerboard(64, square, 40, 215);
    const RawFrame dec = decode(encode_iframe(f, levels.front()), nullptr);
    const auto oracle = oracle_intra_luma(f, levels.front().quant_step);
    CHECK(dec.luma() == oracle);
    const double expect = 10.0 * std::log10(255.0 * 255.0 / oracle_mse(f.luma(), oracle));
    CHECK(psnr(f, dec) == doctest::Approx(std::min(expect, kPsnrCap)));
    CHECK(psnr(f, dec) >= 35.0);
  }
}

TEST_CASE("I-frame symbols equal the oracle quantizer on smooth content") {
  // Exact rounding ties may go either way depending on summation order.
  const auto levels = default_levels();
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    const RawFrame f = test::smooth_frame(96, 64, seed);
    for (int id : {0, 4, 8}) {
      const auto& level = levels[static_cast<std::size_t>(id)];
      const CodedTensor t = encode_iframe(f, level);
      int ties = 0;
      for (int by = 0; by < f.height(); by += 8)
        for (int bx = 0; bx < f.width(); bx += 8) {
          const int block = (by % 16) / 8 * 2 + (bx % 16) / 8;
          for (int v = 0; v < 8; ++v)
            for (int u = 0; u < 8; ++u) {
              double s = 0.0;
              for (int y = 0; y < 8; ++y)
                for (int x = 0; x < 8; ++x) s += basis(u, x) * basis(v, y) * (f.y_at(bx + x, by + y) - 128.0);
              const double r = s / level.quant_step;
              const auto got = t.symbols[symbol_at(t.dims, block * 64 + v * 8 + u, by / 16, bx / 16)];
              if (std::fabs(std::fabs(r - std::trunc(r)) - 0.5) < 1e-9) {
                ++ties;
                CHECK(std::fabs(got - r) <= 0.5 + 1e-9);
              } else {
                CHECK(got == std::lround(r));
              }
            }
        }
      CAPTURE(ties);
      const auto oracle = oracle_intra_luma(f, level.quant_step);
      const double expect = 10.0 * std::log10(255.0 * 255.0 / oracle_mse(f.luma(), oracle));
      CHECK(psnr(f, decode(t, nullptr)) == doctest::Approx(expect).epsilon(5e-4));
    }
  }
  const RawFrame natural = test::smooth_frame(128, 96, 9);
  CHECK(psnr(natural, decode(encode_iframe(natural, levels.front()), nullptr)) >= 35.0);
}

TEST_CASE("encoding is deterministic and serial equals parallel") {
  const RawFrame f = test::random_frame(160, 96, 5);
  const RawFrame g = test::random_frame(160, 96, 6);
  const QualityLevel level = default_levels()[3];
  const CodedTensor a = encode_iframe(f, level);
  CHECK(a == encode_iframe(f, level));
  CHECK(a == encode_iframe(f, level, kernels::Exec::Serial));
  CHECK(a == encode_iframe(f, level, kernels::Exec::Parallel));
  CodecState st{f, f};
  const Rect patch{32, 16, 64, 48};
  const CodedTensor p1 = encode_pframe(g, st, level, patch, kernels::Exec::Serial);
  CHECK(p1 == encode_pframe(g, st, level, patch, kernels::Exec::Parallel));
  CHECK(decode(p1, st, kernels::Exec::Serial) == decode(p1, st, kernels::Exec::Parallel));
}

TEST_CASE("P frame identical to its reference") {
  const RawFrame f = test::smooth_frame(256, 192, 2);
  const QualityLevel level = default_levels()[2];
  CodecState st{f, f};

  SUBCASE("no I-patch: every residual symbol is zero") {
    const CodedTensor t = encode_pframe(f, st, level, std::nullopt);
    CHECK(t.kind == FrameKind::P);
    CHECK(t.nonzero_count() == 0);
    CHECK(decode(t, st) == f);
  }
  SUBCASE("I-patch top-left 128x128: nonzero symbols only inside the patch") {
    const Rect patch{0, 0, 128, 128};
    const CodedTensor t = encode_pframe(f, st, level, patch);
    CHECK(t.kind == FrameKind::PWithIPatch);
    CHECK(t.nonzero_count() > 0);
    const auto d = t.dims;
    for (int ch = 0; ch < d.channels; ++ch)
      for (int r = 0; r < d.rows; ++r)
        for (int c = 0; c < d.cols; ++c)
          if (!patch.contains(c * 16, r * 16)) CHECK(t.symbols[symbol_at(d, ch, r, c)] == 0);
  }
}

TEST_CASE("I-patch symbols decode without any reference") {
  const RawFrame f = test::smooth_frame(256, 128, 4);
  const RawFrame ref = test::smooth_frame(256, 128, 5);
  const QualityLevel level = default_levels()[1];
  const Rect patch{128, 0, 128, 128};
  const CodedTensor t = encode_pframe(f, CodecState{ref, ref}, level, patch);
  const RawFrame with_ref = decode(t, &ref);
  const RawFrame garbage = test::random_frame(256, 128, 77);
  const RawFrame with_garbage = decode(t, &garbage);
  for (int y = 0; y < 128; ++y)
    for (int x = 128; x < 256; ++x) CHECK(with_ref.y_at(x, y) == with_garbage.y_at(x, y));
  const RawFrame intra = decode(encode_iframe(f, level), nullptr);
  for (int y = 0; y < 128; ++y)
    for (int x = 128; x < 256; ++x) CHECK(with_ref.y_at(x, y) == intra.y_at(x, y));
}

TEST_CASE("I-patch cost is about its area share of an I-frame") {
  const QualityLevel level = default_levels()[2];
  const RawFrame ref = test::smooth_frame(512, 256, 11);
  RawFrame f = ref;
  for (auto& v : f.luma()) v = static_cast<std::uint8_t>(std::min(255, v + 1));
  CodecState st{ref, ref};
  const Rect patch{128, 128, 128, 128};
  const double plain = coded_bytes(encode_pframe(f, st, level, std::nullopt));
  const double with_patch = coded_bytes(encode_pframe(f, st, level, patch));
  const double iframe = coded_bytes(encode_iframe(f, level));
  const double share = static_cast<double>(patch.area()) / (512.0 * 256.0);
  const double extra = with_patch - plain;
  CHECK(extra > 0.5 * share * iframe);
  CHECK(extra < 2.0 * share * iframe);
}

TEST_CASE("misaligned or out-of-bounds I-patch and missing reference are rejected") {
  const RawFrame f = test::smooth_frame(128, 128, 1);
  const QualityLevel level = default_levels()[0];
  CodecState st{f, f};
  auto kind_of = [](auto&& fn) {
    try {
      fn();
    } catch (const Error& e) {
      return e.kind();
    }
    return ErrorKind::Io;  // sentinel: nothing thrown
  };
  CHECK(kind_of([&] { encode_pframe(f, st, level, Rect{8, 0, 64, 64}); }) == ErrorKind::InvalidInput);
  CHECK(kind_of([&] { encode_pframe(f, st, level, Rect{96, 0, 64, 64}); }) == ErrorKind::InvalidInput);
  CHECK(kind_of([&] { encode_pframe(f, CodecState{}, level, std::nullopt); }) == ErrorKind::State);
  CHECK(kind_of([&] { encode_iframe(RawFrame{}, level); }) == ErrorKind::InvalidInput);
  CHECK_THROWS_AS(RawFrame(100, 64), Error);
  const CodedTensor p = encode_pframe(f, st, level, std::nullopt);
  CHECK(kind_of([&] { decode(p, nullptr); }) == ErrorKind::State);
  const RawFrame small(64, 64);
  CHECK(kind_of([&] { decode(p, &small); }) == ErrorKind::InvalidInput);
}

TEST_CASE("all-zero I tensor decodes to mid-gray") {
  CodedTensor t;
  t.kind = FrameKind::I;
  t.dims = tensor_dims_for(64, 32);
  t.symbols.assign(t.dims.size(), 0);
  t.quant_step = 7.0;
  const RawFrame out = decode(t, nullptr);
  CHECK(out == RawFrame(64, 32, 128, 128));
}

TEST_CASE("zeroing elements by the random map degrades PSNR gracefully") {
  const RawFrame f = test::smooth_frame(256, 192, 8);
  const QualityLevel level = default_levels()[1];
  const CodedTensor t = encode_iframe(f, level);
  const double lossless = psnr(f, decode(t, nullptr));
  auto mean_psnr = [&](std::size_t drop) {
    double sum = 0.0;
    for (std::uint64_t seed = 1; seed <= 30; ++seed) {
      const auto map = PacketizationMap::make(t.symbols.size(), 10, seed);
      CodedTensor z = t;
      for (std::size_t i = 0; i < z.symbols.size(); ++i)
        if (map.packet_of(i) < drop) z.symbols[i] = 0;
      sum += psnr(f, decode(z, nullptr));
    }
    return sum / 30.0;
  };
  const double p30 = mean_psnr(3);
  const double p80 = mean_psnr(8);
  CHECK(p30 < lossless);
  CHECK(p30 > p80);
}

TEST_CASE("finer quantization: weakly higher PSNR and weakly larger size, per frame") {
  const auto levels = default_levels();
  for (std::uint64_t seed = 1; seed <= 4; ++seed) {
    const RawFrame f = test::smooth_frame(128, 96, seed);
    double prev_psnr = 1e9;
    double prev_bytes = 1e18;
    for (const auto& level : levels) {
      const CodedTensor t = encode_iframe(f, level);
      const double q = psnr(f, decode(t, nullptr));
      const double b = coded_bytes(t);
      CHECK(q <= prev_psnr);
      CHECK(b <= prev_bytes);
      prev_psnr = q;
      prev_bytes = b;
    }
  }
}

TEST_CASE("symbols clamp to the alphabet bound") {
  RawFrame f(16, 16, 255, 255);
  const QualityLevel tiny{0, 0.01, 1.0};
  const CodedTensor t = encode_iframe(f, tiny);
  for (auto s : t.symbols) CHECK(std::abs(s) <= kSymbolBound);
  CHECK(t.symbols[0] == kSymbolBound);
  CHECK_NOTHROW(validate_tensor(t));
  CodedTensor bad = t;
  bad.symbols[1] = kSymbolBound + 1;
  CHECK_THROWS_AS(validate_tensor(bad), Error);
}

TEST_CASE("psnr and ssim closed forms") {
  const RawFrame a = test::random_frame(64, 48, 1);
  CHECK(psnr(a, a) == kPsnrCap);
  CHECK(ssim(a, a) == doctest::Approx(1.0));
  RawFrame b(64, 48, 100);
  RawFrame c(64, 48, 101);
  CHECK(psnr(b, c) == doctest::Approx(10.0 * std::log10(255.0 * 255.0)));
  CHECK(psnr(b, c) == doctest::Approx(48.1308).epsilon(1e-5));
  CHECK_THROWS_AS(psnr(a, RawFrame(64, 64)), Error);
  CHECK_THROWS_AS(ssim(a, RawFrame(64, 64)), Error);
}

TEST_CASE("psnr matches a brute-force MSE loop; ssim matches its definition") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const RawFrame a = test::random_frame(48, 32, seed);
    const RawFrame b = test::random_frame(48, 32, seed + 100);
    double sum = 0.0;
    for (int y = 0; y < 32; ++y)
      for (int x = 0; x < 48; ++x) sum += std::pow(double(a.y_at(x, y)) - double(b.y_at(x, y)), 2);
    CHECK(psnr(a, b) == doctest::Approx(10.0 * std::log10(255.0 * 255.0 / (sum / (48 * 32)))));

    // Windows of 8x8 every 4 pixels, population statistics.
    const double c1 = std::pow(0.01 * 255, 2);
    const double c2 = std::pow(0.03 * 255, 2);
    double total = 0.0;
    int n = 0;
    for (int y0 = 0; y0 + 8 <= 32; y0 += 4)
      for (int x0 = 0; x0 + 8 <= 48; x0 += 4) {
        std::vector<double> va, vb;
        for (int y = y0; y < y0 + 8; ++y)
          for (int x = x0; x < x0 + 8; ++x) {
            va.push_back(a.y_at(x, y));
            vb.push_back(b.y_at(x, y));
          }
        double ma = 0, mb = 0;
        for (int i = 0; i < 64; ++i) ma += va[i] / 64, mb += vb[i] / 64;
        double sa = 0, sb = 0, sab = 0;
        for (int i = 0; i < 64; ++i) {
          sa += (va[i] - ma) * (va[i] - ma) / 64;
          sb += (vb[i] - mb) * (vb[i] - mb) / 64;
          sab += (va[i] - ma) * (vb[i] - mb) / 64;
        }
        total += (2 * ma * mb + c1) * (2 * sab + c2) / ((ma * ma + mb * mb + c1) * (sa + sb + c2));
        ++n;
      }
    CHECK(ssim(a, b) == doctest::Approx(total / n).epsilon(1e-9));
    CHECK(ssim(a, b) < 1.0);
  }
}

TEST_CASE("bitrate_select") {
  const long pixels = 320 * 176;
  const std::vector<QualityLevel> levels{{0, 4.0, 2.0}, {1, 8.0, 1.0}, {2, 16.0, 0.5}};

  SUBCASE("largest prediction under the target") {
    LevelHistory h;
    h.record(levels[0], 14000, pixels);
    h.record(levels[1], 9000, pixels);
    h.record(levels[2], 4000, pixels);
    CHECK(bitrate_select(10000, levels, h, pixels).level_id == 1);
    CHECK(bitrate_select(14000, levels, h, pixels).level_id == 0);
  }
  SUBCASE("nothing fits: coarsest") {
    LevelHistory h;
    h.record(levels[0], 14000, pixels);
    h.record(levels[1], 9000, pixels);
    h.record(levels[2], 4000, pixels);
    CHECK(bitrate_select(1000, levels, h, pixels).level_id == 2);
  }
  SUBCASE("ties go to the lower level id") {
    LevelHistory h;
    h.record(levels[2], 9000, pixels);
    h.record(levels[1], 9000, pixels);
    h.record(levels[0], 20000, pixels);
    CHECK(bitrate_select(9000, levels, h, pixels).level_id == 1);
  }
  SUBCASE("empty history falls back to nominal_bpp x pixels") {
    LevelHistory h;
    CHECK(predicted_bytes(levels[1], h, pixels) == doctest::Approx(1.0 * pixels / 8.0));
    CHECK(bitrate_select(1.0 * pixels / 8.0, levels, h, pixels).level_id == 1);
    CHECK(bitrate_select(1.0 * pixels / 8.0 - 1, levels, h, pixels).level_id == 2);
  }
  SUBCASE("EWMA of recent sizes") {
    LevelHistory h;
    h.record(levels[0], 1000, pixels);
    h.record(levels[0], 2000, pixels);
    CHECK(*h.predicted(0) == doctest::Approx(1000 + LevelHistory::kWeight * 1000));
  }
  SUBCASE("empty level list") {
    LevelHistory h;
    CHECK_THROWS_AS(bitrate_select(1000, {}, h, pixels), Error);
  }
}

TEST_CASE("video sources") {
  const VideoSource a = VideoSource::open("synth:conference:64x48:5:7");
  const VideoSource b = VideoSource::open("synth:conference:64x48:5:7");
  REQUIRE(a.frame_count() == 5);
  CHECK(a.width() == 64);
  CHECK(a.frame(2) == b.frame(2));
  CHECK(a.frame(7) == a.frame(2));  // cyclic
  CHECK_THROWS_AS(VideoSource::open("synth:nope"), Error);

  const auto dir = std::filesystem::temp_directory_path() / "dsv_test_video";
  std::filesystem::create_directories(dir);
  std::vector<RawFrame> frames{test::random_frame(32, 16, 1), test::random_frame(32, 16, 2)};
  write_y4m(dir / "clip.y4m", frames);
  CHECK(read_y4m(dir / "clip.y4m") == frames);
  const VideoSource y = VideoSource::open((dir / "clip.y4m").string());
  CHECK(y.frame(1) == frames[1]);
  write_pgm(dir / "f.pgm", frames[0]);
  const RawFrame g = read_pgm(dir / "f.pgm");
  CHECK(g.luma() == frames[0].luma());
  CHECK_THROWS_AS(VideoSource::open((dir / "missing.y4m").string()), Error);
  std::filesystem::remove_all(dir);
}
