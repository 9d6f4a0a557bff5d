#pragma once

// PSNR / SSIM on luma planes with a peak of 255.

#include "pmrn/image.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace pmrn {

/// Returned by psnr() for identical inputs.
inline constexpr double kPsnrIdentical = std::numeric_limits<double>::infinity();

namespace detail {

inline void require_same_dims(const char* op, const Plane& a, const Plane& b) {
    if (a.width != b.width || a.height != b.height) {
        throw std::invalid_argument(std::string(op) + ": dimension mismatch " + std::to_string(a.width) + "x" +
                                    std::to_string(a.height) + " vs " + std::to_string(b.width) + "x" +
                                    std::to_string(b.height));
    }
}

inline Plane shave_plane(const Plane& p, int shave) {
    if (shave < 0) throw std::invalid_argument("shave must be >= 0");
    const int w = p.width - 2 * shave;
    const int h = p.height - 2 * shave;
    if (w < 1 || h < 1) throw std::invalid_argument("shave " + std::to_string(shave) + " removes the whole image");
    Plane out(w, h);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) out.at(y, x) = p.at(y + shave, x + shave);
    return out;
}

}  // namespace detail

inline double mse(const Plane& a, const Plane& b) {
    detail::require_same_dims("mse", a, b);
    double acc = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        const double d = a.data[i] - b.data[i];
        acc += d * d;
    }
    return acc / static_cast<double>(a.data.size());
}

inline double psnr(const Plane& a, const Plane& b, int shave = 0) {
    detail::require_same_dims("psnr", a, b);
    const double m = mse(detail::shave_plane(a, shave), detail::shave_plane(b, shave));
    if (m == 0.0) return kPsnrIdentical;
    return 10.0 * std::log10(255.0 * 255.0 / m);
}

/// Mean SSIM over all positions where an 11x11 Gaussian window (sigma 1.5)
/// fits entirely inside the shaved planes.
inline double ssim(const Plane& a, const Plane& b, int shave = 0) {
    detail::require_same_dims("ssim", a, b);
    const Plane x = detail::shave_plane(a, shave);
    const Plane y = detail::shave_plane(b, shave);
    constexpr int win = 11;
    if (x.width < win || x.height < win) {
        throw std::invalid_argument("ssim: image smaller than the 11x11 window after shaving");
    }
    const auto kernel = gaussian_kernel(win, 1.5);
    constexpr double L = 255.0;
    constexpr double C1 = (0.01 * L) * (0.01 * L);
    constexpr double C2 = (0.03 * L) * (0.03 * L);

    double total = 0.0;
    std::size_t count = 0;
    for (int oy = 0; oy + win <= x.height; ++oy)
        for (int ox = 0; ox + win <= x.width; ++ox) {
            double mx = 0, my = 0, sxx = 0, syy = 0, sxy = 0;
            for (int ky = 0; ky < win; ++ky)
                for (int kx = 0; kx < win; ++kx) {
                    const double w = kernel[static_cast<std::size_t>(ky) * win + kx];
                    const double vx = x.at(oy + ky, ox + kx);
                    const double vy = y.at(oy + ky, ox + kx);
                    mx += w * vx;
                    my += w * vy;
                    sxx += w * vx * vx;
                    syy += w * vy * vy;
                    sxy += w * vx * vy;
                }
            const double vx = sxx - mx * mx;
            const double vy = syy - my * my;
            const double cxy = sxy - mx * my;
            total += ((2 * mx * my + C1) * (2 * cxy + C2)) / ((mx * mx + my * my + C1) * (vx + vy + C2));
            ++count;
        }
    return total / static_cast<double>(count);
}

/// Both images are first quantized to 8 bits, then compared on BT.601 luma.
inline double psnr_y(const Image& a, const Image& b, int shave) {
    return psnr(rgb_to_y(quantize(a)), rgb_to_y(quantize(b)), shave);
}

inline double ssim_y(const Image& a, const Image& b, int shave) {
    return ssim(rgb_to_y(quantize(a)), rgb_to_y(quantize(b)), shave);
}

}  // namespace pmrn
