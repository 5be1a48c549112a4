#include "framecast/metrics.hpp"

#include <cmath>
#include <stdexcept>
#include <vector>

namespace framecast::eval {

double mse(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) throw std::invalid_argument("mse: shape mismatch");
    double s = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return s / static_cast<double>(a.size());
}

double psnr(const Tensor& pred, const Tensor& gt, double max_val) {
    if (max_val <= 0.0) throw std::invalid_argument("psnr: max_val must be positive");
    const double m = mse(pred, gt);
    if (m == 0.0) return kPsnrCap;
    return 10.0 * std::log10(max_val * max_val / m);
}

namespace {

std::vector<double> gaussian_kernel(int window, double sigma) {
    std::vector<double> k(static_cast<size_t>(window));
    const int half = window / 2;
    double sum = 0.0;
    for (int i = 0; i < window; ++i) {
        const double x = i - half;
        k[static_cast<size_t>(i)] = std::exp(-x * x / (2.0 * sigma * sigma));
        sum += k[static_cast<size_t>(i)];
    }
    for (auto& v : k) v /= sum;
    return k;
}

// Separable valid-mode Gaussian filter of an (H,W) image.
Tensor filter_valid(const Tensor& img, const std::vector<double>& k) {
    const int h = img.dim(0), w = img.dim(1);
    const int win = static_cast<int>(k.size());
    const int ow = w - win + 1, oh = h - win + 1;
    Tensor tmp({h, ow});
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < ow; ++x) {
            double s = 0.0;
            for (int i = 0; i < win; ++i) s += k[static_cast<size_t>(i)] * img.at(y, x + i);
            tmp.at(y, x) = s;
        }
    }
    Tensor out({oh, ow});
    for (int y = 0; y < oh; ++y) {
        for (int x = 0; x < ow; ++x) {
            double s = 0.0;
            for (int i = 0; i < win; ++i) s += k[static_cast<size_t>(i)] * tmp.at(y + i, x);
            out.at(y, x) = s;
        }
    }
    return out;
}

Tensor hadamard(const Tensor& a, const Tensor& b) {
    Tensor out(a.shape());
    for (size_t i = 0; i < a.size(); ++i) out[i] = a[i] * b[i];
    return out;
}

}  // namespace

double ssim(const Tensor& pred, const Tensor& gt, int window, double k1, double k2, double l) {
    if (!pred.same_shape(gt)) throw std::invalid_argument("ssim: shape mismatch");
    if (pred.rank() != 2) throw std::invalid_argument("ssim: want (H,W) images");
    const int h = pred.dim(0), w = pred.dim(1);
    int win = std::min(window, std::min(h, w));
    if (win % 2 == 0) --win;
    if (win < 1) throw std::invalid_argument("ssim: window too large for image");

    const double c1 = (k1 * l) * (k1 * l);
    const double c2 = (k2 * l) * (k2 * l);
    const auto kernel = gaussian_kernel(win, 1.5);

    const Tensor mu_x = filter_valid(pred, kernel);
    const Tensor mu_y = filter_valid(gt, kernel);
    const Tensor xx = filter_valid(hadamard(pred, pred), kernel);
    const Tensor yy = filter_valid(hadamard(gt, gt), kernel);
    const Tensor xy = filter_valid(hadamard(pred, gt), kernel);

    double acc = 0.0;
    for (size_t i = 0; i < mu_x.size(); ++i) {
        const double mx = mu_x[i], my = mu_y[i];
        const double vx = xx[i] - mx * mx;
        const double vy = yy[i] - my * my;
        const double cxy = xy[i] - mx * my;
        acc += ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) /
               ((mx * mx + my * my + c1) * (vx + vy + c2));
    }
    return acc / static_cast<double>(mu_x.size());
}

}  // namespace framecast::eval
