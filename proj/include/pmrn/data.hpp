#pragma once

// Training data: aligned LR/HR patch sampling, dihedral augmentation, and a
// procedural image generator used for tests and desk-scale runs.

#include "pmrn/image.hpp"

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <stdexcept>
#include <vector>

namespace pmrn {

/// Deterministic 64-bit stream with a portable uniform mapping.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}
    std::uint64_t next() { return engine_(); }
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    /// Integer in [0, n).
    int below(int n) { return static_cast<int>(uniform() * n); }

private:
    std::mt19937_64 engine_;
};

struct PatchPair {
    Image lr;
    Image hr;
    int source_id = 0;
    int lr_x = 0;
    int lr_y = 0;
    int scale = 1;

    [[nodiscard]] int hr_x() const { return lr_x * scale; }
    [[nodiscard]] int hr_y() const { return lr_y * scale; }
};

/// Aligned crops from a pre-degraded pair (lr must be hr / scale).
inline std::vector<PatchPair> sample_patches(const Image& hr, const Image& lr, int scale, int patch, int count,
                                             Rng& rng, int source_id = 0) {
    if (lr.width * scale != hr.width || lr.height * scale != hr.height) {
        throw std::invalid_argument("sample_patches: LR/HR sizes are not related by the scale factor");
    }
    if (lr.width < patch || lr.height < patch) {
        throw std::invalid_argument("sample_patches: image " + std::to_string(lr.width) + "x" +
                                    std::to_string(lr.height) + " (LR) too small for patch " + std::to_string(patch));
    }
    std::vector<PatchPair> out;
    out.reserve(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) {
        PatchPair p;
        p.scale = scale;
        p.source_id = source_id;
        p.lr_x = rng.below(lr.width - patch + 1);
        p.lr_y = rng.below(lr.height - patch + 1);
        p.lr = crop(lr, p.lr_x, p.lr_y, patch, patch);
        p.hr = crop(hr, p.hr_x(), p.hr_y(), patch * scale, patch * scale);
        out.push_back(std::move(p));
    }
    return out;
}

/// Degrades `hr` (cropped to a multiple of the scale) and samples aligned crops.
inline std::vector<PatchPair> sample_patches(const Image& hr_img, const DegradationSpec& spec, int patch, int count,
                                             std::uint64_t seed, int source_id = 0) {
    const Image hr = crop_to_multiple(hr_img, spec.scale);
    const Image lr = degrade(hr, spec);
    Rng rng(seed);
    return sample_patches(hr, lr, spec.scale, patch, count, rng, source_id);
}

inline Image dihedral(const Image& img, int index) {
    return from_tensor(dihedral(to_tensor(img), index));
}

/// Applies one of the 8 dihedral transforms, drawn from `seed`, to both halves.
inline PatchPair augment(const PatchPair& pair, std::uint64_t seed) {
    Rng rng(seed);
    const int t = rng.below(8);
    PatchPair out = pair;
    out.lr = dihedral(pair.lr, t);
    out.hr = dihedral(pair.hr, t);
    return out;
}

/// Procedural RGB test image: smooth colour field, oriented gratings with
/// periods of 4-8 px (attenuated, but not removed, by x2 bicubic), and
/// antialiased discs/rectangles with hard edges. Deterministic in `seed`.
inline Image synthetic_image(int width, int height, std::uint64_t seed) {
    Rng rng(seed);
    Image img(width, height, 3);
    const double pi = std::numbers::pi;

    double base[3], gx[3], gy[3];
    for (int c = 0; c < 3; ++c) {
        base[c] = rng.uniform(0.2, 0.8);
        gx[c] = rng.uniform(-0.3, 0.3);
        gy[c] = rng.uniform(-0.3, 0.3);
    }
    struct Grating {
        double fx, fy, phase, amp[3];
    };
    std::vector<Grating> gratings(3);
    for (auto& g : gratings) {
        const double period = rng.uniform(4.0, 8.0);
        const double angle = rng.uniform(0.0, pi);
        g.fx = std::cos(angle) * 2 * pi / period;
        g.fy = std::sin(angle) * 2 * pi / period;
        g.phase = rng.uniform(0.0, 2 * pi);
        for (double& a : g.amp) a = rng.uniform(0.0, 0.2);
    }
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x) {
            const double u = static_cast<double>(x) / width - 0.5;
            const double v = static_cast<double>(y) / height - 0.5;
            for (int c = 0; c < 3; ++c) {
                double val = base[c] + gx[c] * u + gy[c] * v;
                for (const auto& g : gratings) val += g.amp[c] * std::sin(g.fx * x + g.fy * y + g.phase);
                img.at(c, y, x) = static_cast<float>(val);
            }
        }

    // Shapes are rasterized with 4x4 supersampling for antialiased edges.
    const int shapes = 4 + rng.below(6);
    for (int s = 0; s < shapes; ++s) {
        const bool disc = rng.uniform() < 0.5;
        const double cx = rng.uniform(0.0, width), cy = rng.uniform(0.0, height);
        const double rx = rng.uniform(2.0, width / 4.0), ry = rng.uniform(2.0, height / 4.0);
        double colour[3];
        for (double& col : colour) col = rng.uniform(0.0, 1.0);
        const int x0 = std::max(0, static_cast<int>(cx - rx) - 1), x1 = std::min(width - 1, static_cast<int>(cx + rx) + 1);
        const int y0 = std::max(0, static_cast<int>(cy - ry) - 1), y1 = std::min(height - 1, static_cast<int>(cy + ry) + 1);
        for (int y = y0; y <= y1; ++y)
            for (int x = x0; x <= x1; ++x) {
                int inside = 0;
                for (int sy = 0; sy < 4; ++sy)
                    for (int sx = 0; sx < 4; ++sx) {
                        const double px = x + (sx + 0.5) / 4.0, py = y + (sy + 0.5) / 4.0;
                        const double dx = (px - cx) / rx, dy = (py - cy) / ry;
                        const bool hit = disc ? dx * dx + dy * dy <= 1.0 : std::abs(dx) <= 1.0 && std::abs(dy) <= 1.0;
                        inside += hit ? 1 : 0;
                    }
                if (inside == 0) continue;
                const double a = inside / 16.0;
                for (int c = 0; c < 3; ++c) {
                    img.at(c, y, x) = static_cast<float>((1 - a) * img.at(c, y, x) + a * colour[c]);
                }
            }
    }
    for (auto& v : img.data) v = std::clamp(v, 0.0f, 1.0f);
    return quantize(img);
}

}  // namespace pmrn
