#pragma once

#include "dsv/frame.hpp"

namespace dsv {

inline constexpr double kPsnrCap = 99.0;

// Luma mean squared error.
double luma_mse(const RawFrame& a, const RawFrame& b);

// 10*log10(255^2 / MSE) on luma, capped at 99 dB.
double psnr(const RawFrame& a, const RawFrame& b);

// Mean luma SSIM over 8x8 windows placed every 4 pixels.
double ssim(const RawFrame& a, const RawFrame& b);

}  // namespace dsv
