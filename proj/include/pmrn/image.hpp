#pragma once

// RGB images, PNG/PPM I/O, resampling and the BI/BD degradation models.

#include "pmrn/tensor.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace pmrn {

/// Planar RGB (or single-channel) image with float samples nominally in [0, 1].
struct Image {
    int width = 0;
    int height = 0;
    int channels = 3;
    std::vector<float> data;  // channel-major: data[(c * height + y) * width + x]

    Image() = default;
    Image(int w, int h, int c = 3, float fill = 0.0f)
        : width(w), height(h), channels(c), data(static_cast<std::size_t>(w) * h * c, fill) {
        if (w < 1 || h < 1 || c < 1) throw std::invalid_argument("Image: dimensions must be positive");
    }

    float& at(int c, int y, int x) { return data[(static_cast<std::size_t>(c) * height + y) * width + x]; }
    [[nodiscard]] float at(int c, int y, int x) const {
        return data[(static_cast<std::size_t>(c) * height + y) * width + x];
    }
    bool operator==(const Image&) const = default;
};

inline std::uint8_t to_u8(float v) {
    const float scaled = std::round(v * 255.0f);
    return static_cast<std::uint8_t>(std::clamp(scaled, 0.0f, 255.0f));
}

/// Snaps every sample to the nearest 8-bit level (clamped).
inline Image quantize(const Image& img) {
    Image out = img;
    for (auto& v : out.data) v = static_cast<float>(to_u8(v)) / 255.0f;
    return out;
}

template <class T = float>
Tensor<T> to_tensor(const Image& img) {
    std::vector<T> values(img.data.begin(), img.data.end());
    return Tensor<T>(Shape{1, img.channels, img.height, img.width}, std::move(values));
}

template <class T>
Image from_tensor(const Tensor<T>& t, int batch = 0) {
    const Shape s = t.shape();
    Image img(s.w, s.h, s.c);
    const std::size_t len = static_cast<std::size_t>(s.c) * s.plane();
    const std::size_t off = t.offset(batch, 0, 0, 0);
    for (std::size_t i = 0; i < len; ++i) img.data[i] = static_cast<float>(t[off + i]);
    return img;
}

inline Image crop(const Image& img, int x0, int y0, int w, int h) {
    if (x0 < 0 || y0 < 0 || w < 1 || h < 1 || x0 + w > img.width || y0 + h > img.height) {
        throw std::invalid_argument("crop: region outside image");
    }
    Image out(w, h, img.channels);
    for (int c = 0; c < img.channels; ++c)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) out.at(c, y, x) = img.at(c, y0 + y, x0 + x);
    return out;
}

inline Image crop_to_multiple(const Image& img, int r) {
    const int w = img.width - img.width % r;
    const int h = img.height - img.height % r;
    if (w == img.width && h == img.height) return img;
    return crop(img, 0, 0, w, h);
}

/// Grayscale is replicated into three channels; RGB passes through.
inline Image to_rgb(const Image& img) {
    if (img.channels == 3) return img;
    if (img.channels != 1) throw std::invalid_argument("to_rgb: need 1 or 3 channels");
    Image out(img.width, img.height, 3);
    for (int c = 0; c < 3; ++c)
        std::copy(img.data.begin(), img.data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(c * img.data.size()));
    return out;
}

// ---------------------------------------------------------------------------
// I/O
// ---------------------------------------------------------------------------

inline std::vector<std::uint8_t> to_interleaved_u8(const Image& img) {
    std::vector<std::uint8_t> out(img.data.size());
    std::size_t i = 0;
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
            for (int c = 0; c < img.channels; ++c) out[i++] = to_u8(img.at(c, y, x));
    return out;
}

inline Image from_interleaved_u8(const std::uint8_t* px, int w, int h, int channels) {
    Image img(w, h, channels);
    std::size_t i = 0;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < channels; ++c) img.at(c, y, x) = static_cast<float>(px[i++]) / 255.0f;
    return img;
}

inline Image read_png(const std::string& path) {
    png_image png{};
    png.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&png, path.c_str())) {
        throw std::runtime_error("cannot read PNG " + path + ": " + png.message);
    }
    // Alpha is dropped; grayscale stays single-channel.
    const int channels = (png.format & PNG_FORMAT_FLAG_COLOR) != 0 ? 3 : 1;
    png.format = channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
    std::vector<std::uint8_t> buffer(PNG_IMAGE_SIZE(png));
    if (!png_image_finish_read(&png, nullptr, buffer.data(), 0, nullptr)) {
        const std::string msg = png.message;
        png_image_free(&png);
        throw std::runtime_error("cannot decode PNG " + path + ": " + msg);
    }
    return from_interleaved_u8(buffer.data(), static_cast<int>(png.width), static_cast<int>(png.height), channels);
}

inline void write_png(const std::string& path, const Image& img) {
    if (img.channels != 1 && img.channels != 3) throw std::invalid_argument("write_png: need 1 or 3 channels");
    png_image png{};
    png.version = PNG_IMAGE_VERSION;
    png.width = static_cast<png_uint_32>(img.width);
    png.height = static_cast<png_uint_32>(img.height);
    png.format = img.channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
    const auto px = to_interleaved_u8(img);
    if (!png_image_write_to_file(&png, path.c_str(), 0, px.data(), 0, nullptr)) {
        throw std::runtime_error("cannot write PNG " + path + ": " + png.message);
    }
}

inline Image read_ppm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    auto token = [&]() {
        std::string t;
        while (in) {
            const int ch = in.get();
            if (ch == '#') {
                std::string skip;
                std::getline(in, skip);
            } else if (std::isspace(ch)) {
                if (!t.empty()) return t;
            } else if (ch != EOF) {
                t.push_back(static_cast<char>(ch));
            }
        }
        return t;
    };
    const std::string magic = token();
    if (magic != "P6" && magic != "P5") throw std::runtime_error(path + ": not a binary PPM/PGM file");
    const int w = std::stoi(token());
    const int h = std::stoi(token());
    const int maxval = std::stoi(token());
    if (maxval != 255) throw std::runtime_error(path + ": only 8-bit PPM is supported");
    const int channels = magic == "P6" ? 3 : 1;
    std::vector<std::uint8_t> px(static_cast<std::size_t>(w) * h * channels);
    in.read(reinterpret_cast<char*>(px.data()), static_cast<std::streamsize>(px.size()));
    if (!in) throw std::runtime_error(path + ": truncated pixel data");
    return from_interleaved_u8(px.data(), w, h, channels);
}

inline void write_ppm(const std::string& path, const Image& img) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    out << (img.channels == 3 ? "P6" : "P5") << "\n" << img.width << " " << img.height << "\n255\n";
    const auto px = to_interleaved_u8(img);
    out.write(reinterpret_cast<const char*>(px.data()), static_cast<std::streamsize>(px.size()));
}

inline std::string lower_extension(const std::string& path) {
    std::string ext = std::filesystem::path(path).extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char ch) { return std::tolower(ch); });
    return ext;
}

inline bool is_image_path(const std::filesystem::path& p) {
    const auto ext = lower_extension(p.string());
    return ext == ".png" || ext == ".ppm" || ext == ".pgm";
}

inline Image load_image(const std::string& path) {
    const auto ext = lower_extension(path);
    if (ext == ".png") return read_png(path);
    if (ext == ".ppm" || ext == ".pgm") return read_ppm(path);
    throw std::runtime_error("unsupported image format: " + path);
}

inline void save_image(const std::string& path, const Image& img) {
    const auto ext = lower_extension(path);
    if (ext == ".png") return write_png(path, img);
    if (ext == ".ppm" || ext == ".pgm") return write_ppm(path, img);
    throw std::runtime_error("unsupported image format: " + path);
}

/// Sorted list of image files (png/ppm/pgm) directly inside `dir`.
inline std::vector<std::filesystem::path> list_images(const std::filesystem::path& dir) {
    if (!std::filesystem::is_directory(dir)) throw std::runtime_error("not a directory: " + dir.string());
    std::vector<std::filesystem::path> out;
    for (const auto& e : std::filesystem::directory_iterator(dir)) {
        if (e.is_regular_file() && is_image_path(e.path())) out.push_back(e.path());
    }
    std::sort(out.begin(), out.end());
    return out;
}

// ---------------------------------------------------------------------------
// Resampling
// ---------------------------------------------------------------------------

/// Keys cubic convolution kernel.
inline double cubic_kernel(double x, double a = -0.5) {
    x = std::abs(x);
    if (x <= 1.0) return ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0;
    if (x < 2.0) return ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a;
    return 0.0;
}

namespace detail {

struct ResampleTaps {
    std::vector<int> first;               // first source index per output sample (unclamped)
    std::vector<std::vector<double>> w;   // normalized weights
};

// Pixel-center aligned mapping; the kernel is widened by 1/scale when
// shrinking so that it also acts as the antialiasing filter.
inline ResampleTaps resample_taps(int in_len, int out_len) {
    const double scale = static_cast<double>(out_len) / in_len;
    const double kscale = std::min(scale, 1.0);
    const double support = 2.0 / kscale;
    ResampleTaps taps;
    taps.first.resize(static_cast<std::size_t>(out_len));
    taps.w.resize(static_cast<std::size_t>(out_len));
    for (int i = 0; i < out_len; ++i) {
        const double center = (i + 0.5) / scale - 0.5;
        const int lo = static_cast<int>(std::floor(center - support)) + 1;
        const int hi = static_cast<int>(std::ceil(center + support)) - 1;
        std::vector<double> w;
        double total = 0.0;
        for (int j = lo; j <= hi; ++j) {
            const double v = cubic_kernel((center - j) * kscale);
            w.push_back(v);
            total += v;
        }
        for (auto& v : w) v /= total;
        taps.first[static_cast<std::size_t>(i)] = lo;
        taps.w[static_cast<std::size_t>(i)] = std::move(w);
    }
    return taps;
}

}  // namespace detail

/// Separable bicubic (a = -0.5), antialiased when downscaling, clamp-to-edge borders.
inline Image bicubic_resize(const Image& img, int out_w, int out_h) {
    if (out_w < 1 || out_h < 1) throw std::invalid_argument("bicubic_resize: target dimensions must be positive");
    const auto tx = detail::resample_taps(img.width, out_w);
    const auto ty = detail::resample_taps(img.height, out_h);
    Image tmp(out_w, img.height, img.channels);
    for (int c = 0; c < img.channels; ++c)
        for (int y = 0; y < img.height; ++y)
            for (int x = 0; x < out_w; ++x) {
                double acc = 0.0;
                const auto& w = tx.w[static_cast<std::size_t>(x)];
                for (std::size_t k = 0; k < w.size(); ++k) {
                    const int sx = std::clamp(tx.first[static_cast<std::size_t>(x)] + static_cast<int>(k), 0,
                                              img.width - 1);
                    acc += w[k] * img.at(c, y, sx);
                }
                tmp.at(c, y, x) = static_cast<float>(acc);
            }
    Image out(out_w, out_h, img.channels);
    for (int c = 0; c < img.channels; ++c)
        for (int y = 0; y < out_h; ++y) {
            const auto& w = ty.w[static_cast<std::size_t>(y)];
            for (int x = 0; x < out_w; ++x) {
                double acc = 0.0;
                for (std::size_t k = 0; k < w.size(); ++k) {
                    const int sy = std::clamp(ty.first[static_cast<std::size_t>(y)] + static_cast<int>(k), 0,
                                              img.height - 1);
                    acc += w[k] * tmp.at(c, sy, x);
                }
                out.at(c, y, x) = static_cast<float>(acc);
            }
        }
    return out;
}

// ---------------------------------------------------------------------------
// Degradation
// ---------------------------------------------------------------------------

enum class DegradationKind { bicubic, blur_down };

struct DegradationSpec {
    DegradationKind kind = DegradationKind::bicubic;
    int scale = 4;
    int blur_size = 7;
    double blur_sigma = 1.6;
};

inline std::string to_string(DegradationKind k) { return k == DegradationKind::bicubic ? "BI" : "BD"; }

inline DegradationKind parse_degradation(const std::string& s) {
    if (s == "BI" || s == "bi") return DegradationKind::bicubic;
    if (s == "BD" || s == "bd") return DegradationKind::blur_down;
    throw std::invalid_argument("unknown degradation '" + s + "' (expected BI|BD)");
}

/// Normalized size x size Gaussian, row-major.
inline std::vector<double> gaussian_kernel(int size, double sigma) {
    std::vector<double> k(static_cast<std::size_t>(size) * size);
    const double c = (size - 1) / 2.0;
    double total = 0.0;
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
            const double v = std::exp(-((x - c) * (x - c) + (y - c) * (y - c)) / (2.0 * sigma * sigma));
            k[static_cast<std::size_t>(y) * size + x] = v;
            total += v;
        }
    for (auto& v : k) v /= total;
    return k;
}

/// Mirror index into [0, n) with the edge sample repeated (abc|cba).
inline int reflect_index(int i, int n) {
    if (n == 1) return 0;
    const int period = 2 * n;
    i %= period;
    if (i < 0) i += period;
    return i < n ? i : period - 1 - i;
}

inline Image gaussian_blur(const Image& img, int size, double sigma) {
    const auto k = gaussian_kernel(size, sigma);
    const int half = size / 2;
    Image out(img.width, img.height, img.channels);
    for (int c = 0; c < img.channels; ++c)
        for (int y = 0; y < img.height; ++y)
            for (int x = 0; x < img.width; ++x) {
                double acc = 0.0;
                for (int ky = 0; ky < size; ++ky) {
                    const int sy = reflect_index(y + ky - half, img.height);
                    for (int kx = 0; kx < size; ++kx) {
                        const int sx = reflect_index(x + kx - half, img.width);
                        acc += k[static_cast<std::size_t>(ky) * size + kx] * img.at(c, sy, sx);
                    }
                }
                out.at(c, y, x) = static_cast<float>(acc);
            }
    return out;
}

/// HR -> LR. BI: bicubic shrink by r. BD (x3 only): Gaussian blur, then keep
/// every r-th pixel starting at offset 0.
inline Image degrade(const Image& hr, const DegradationSpec& spec) {
    const int r = spec.scale;
    if (r < 1) throw std::invalid_argument("degrade: scale must be >= 1");
    if (hr.width % r != 0 || hr.height % r != 0) {
        throw std::invalid_argument("degrade: image " + std::to_string(hr.width) + "x" + std::to_string(hr.height) +
                                    " is not a multiple of scale " + std::to_string(r) + "; crop first");
    }
    if (spec.kind == DegradationKind::bicubic) return bicubic_resize(hr, hr.width / r, hr.height / r);
    if (r != 3) throw std::invalid_argument("degrade: BD is only defined for scale 3");
    const Image blurred = gaussian_blur(hr, spec.blur_size, spec.blur_sigma);
    Image out(hr.width / r, hr.height / r, hr.channels);
    for (int c = 0; c < hr.channels; ++c)
        for (int y = 0; y < out.height; ++y)
            for (int x = 0; x < out.width; ++x) out.at(c, y, x) = blurred.at(c, y * r, x * r);
    return out;
}

// ---------------------------------------------------------------------------
// Color
// ---------------------------------------------------------------------------

/// Single-channel double plane, used for luma evaluation.
struct Plane {
    int width = 0;
    int height = 0;
    std::vector<double> data;

    Plane() = default;
    Plane(int w, int h, double fill = 0.0)
        : width(w), height(h), data(static_cast<std::size_t>(w) * h, fill) {}
    double& at(int y, int x) { return data[static_cast<std::size_t>(y) * width + x]; }
    [[nodiscard]] double at(int y, int x) const { return data[static_cast<std::size_t>(y) * width + x]; }
};

/// BT.601 luma on the [16, 235] scale for RGB in [0, 1].
inline double luma(double r, double g, double b) { return 16.0 + 65.481 * r + 128.553 * g + 24.966 * b; }

inline Plane rgb_to_y(const Image& img) {
    if (img.channels != 3) throw std::invalid_argument("rgb_to_y: need a 3-channel image");
    Plane y(img.width, img.height);
    for (int yy = 0; yy < img.height; ++yy)
        for (int x = 0; x < img.width; ++x) y.at(yy, x) = luma(img.at(0, yy, x), img.at(1, yy, x), img.at(2, yy, x));
    return y;
}

}  // namespace pmrn
