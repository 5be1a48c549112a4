#pragma once

#include "framecast/tensor.hpp"

namespace framecast::eval {

double mse(const Tensor& a, const Tensor& b);

// 10*log10(max_val^2 / MSE); identical images return the documented 100 dB cap.
inline constexpr double kPsnrCap = 100.0;
double psnr(const Tensor& pred, const Tensor& gt, double max_val = 1.0);

// Mean local SSIM over a Gaussian-weighted sliding window (sigma 1.5). The
// window is clipped to the largest odd size fitting the image.
double ssim(const Tensor& pred, const Tensor& gt, int window = 11, double k1 = 0.01,
            double k2 = 0.03, double l = 1.0);

}  // namespace framecast::eval
