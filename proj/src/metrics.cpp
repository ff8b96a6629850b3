#include "dsv/metrics.hpp"

#include "dsv/error.hpp"

#include <cmath>

namespace dsv {
namespace {

void check_dims(const RawFrame& a, const RawFrame& b) {
  require(!a.empty() && a.same_dims(b), ErrorKind::InvalidInput, "metric inputs must have identical dims");
}

}  // namespace

double luma_mse(const RawFrame& a, const RawFrame& b) {
  check_dims(a, b);
  const auto& la = a.luma();
  const auto& lb = b.luma();
  double sum = 0.0;
  for (std::size_t i = 0; i < la.size(); ++i) {
    const double d = static_cast<double>(la[i]) - lb[i];
    sum += d * d;
  }
  return sum / static_cast<double>(la.size());
}

double psnr(const RawFrame& a, const RawFrame& b) {
  const double mse = luma_mse(a, b);
  if (mse <= 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(255.0 * 255.0 / mse));
}

double ssim(const RawFrame& a, const RawFrame& b) {
  check_dims(a, b);
  constexpr double c1 = (0.01 * 255) * (0.01 * 255);
  constexpr double c2 = (0.03 * 255) * (0.03 * 255);
  constexpr int win = 8;
  constexpr int step = 4;
  double total = 0.0;
  long windows = 0;
  for (int y0 = 0; y0 + win <= a.height(); y0 += step)
    for (int x0 = 0; x0 + win <= a.width(); x0 += step) {
      double sa = 0, sb = 0, saa = 0, sbb = 0, sab = 0;
      for (int y = y0; y < y0 + win; ++y)
        for (int x = x0; x < x0 + win; ++x) {
          const double va = a.y_at(x, y);
          const double vb = b.y_at(x, y);
          sa += va;
          sb += vb;
          saa += va * va;
          sbb += vb * vb;
          sab += va * vb;
        }
      constexpr double n = win * win;
      const double ma = sa / n;
      const double mb = sb / n;
      const double va = saa / n - ma * ma;
      const double vb = sbb / n - mb * mb;
      const double cov = sab / n - ma * mb;
      total += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
      ++windows;
    }
  return total / static_cast<double>(windows);
}

}  // namespace dsv
