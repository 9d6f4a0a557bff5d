#pragma once

// Dense rank-4 tensors in (n, c, h, w) order and the fixed operator set the
// network is built from. Every op here is a pure function; gradients are
// provided as separate *_backward kernels consumed by the tape in autograd.hpp.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdlib>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <type_traits>
#include <vector>

namespace pmrn {

struct Shape {
    int n = 1;
    int c = 1;
    int h = 1;
    int w = 1;

    [[nodiscard]] std::size_t size() const {
        return static_cast<std::size_t>(n) * c * h * w;
    }
    [[nodiscard]] std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
    bool operator==(const Shape&) const = default;

    [[nodiscard]] std::string str() const {
        std::ostringstream os;
        os << '(' << n << ',' << c << ',' << h << ',' << w << ')';
        return os.str();
    }
};

template <class T>
class Tensor {
public:
    using value_type = T;

    Tensor() : data_(1, T(0)) {}

    explicit Tensor(Shape shape, T fill = T(0)) : shape_(shape) {
        validate();
        data_.assign(shape_.size(), fill);
    }

    Tensor(Shape shape, std::vector<T> data) : shape_(shape), data_(std::move(data)) {
        validate();
        if (data_.size() != shape_.size()) {
            throw std::invalid_argument("Tensor: data length " + std::to_string(data_.size()) +
                                        " does not match shape " + shape_.str());
        }
    }

    [[nodiscard]] const Shape& shape() const { return shape_; }
    [[nodiscard]] std::size_t size() const { return data_.size(); }
    [[nodiscard]] std::span<const T> data() const { return data_; }
    [[nodiscard]] std::span<T> data() { return data_; }
    [[nodiscard]] const std::vector<T>& vec() const { return data_; }

    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }

    [[nodiscard]] std::size_t offset(int n, int c, int y, int x) const {
        return ((static_cast<std::size_t>(n) * shape_.c + c) * shape_.h + y) * shape_.w + x;
    }
    T& at(int n, int c, int y, int x) { return data_[offset(n, c, y, x)]; }
    const T& at(int n, int c, int y, int x) const { return data_[offset(n, c, y, x)]; }

    template <class U>
    [[nodiscard]] Tensor<U> cast() const {
        std::vector<U> out(data_.size());
        std::transform(data_.begin(), data_.end(), out.begin(),
                       [](T v) { return static_cast<U>(v); });
        return Tensor<U>(shape_, std::move(out));
    }

    bool operator==(const Tensor&) const = default;

private:
    void validate() const {
        if (shape_.n < 1 || shape_.c < 1 || shape_.h < 1 || shape_.w < 1) {
            throw std::invalid_argument("Tensor: every dimension must be >= 1, got " + shape_.str());
        }
    }

    Shape shape_{};
    std::vector<T> data_;
};

namespace detail {

inline int thread_budget() {
    static const int budget = [] {
        int hw = static_cast<int>(std::thread::hardware_concurrency());
        if (hw < 1) hw = 1;
        if (const char* env = std::getenv("PMRN_THREADS")) {
            const int cap = std::atoi(env);
            if (cap >= 1) hw = std::min(hw, cap);
        }
        return hw;
    }();
    return budget;
}

// Runs fn(i) for i in [0, count). Work assignment is static so results never
// depend on scheduling.
template <class Fn>
void parallel_for(int count, Fn&& fn) {
    const int threads = std::min(thread_budget(), count);
    if (threads <= 1) {
        for (int i = 0; i < count; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(threads);
    for (int t = 0; t < threads; ++t) {
        pool.emplace_back([&, t] {
            for (int i = t; i < count; i += threads) fn(i);
        });
    }
    for (auto& th : pool) th.join();
}

[[noreturn]] inline void shape_error(const std::string& op, const std::string& what) {
    throw std::invalid_argument(op + ": " + what);
}

template <class T>
void require_same_shape(const std::string& op, const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape() != b.shape()) {
        shape_error(op, "shape mismatch " + a.shape().str() + " vs " + b.shape().str());
    }
}

template <class T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MatMap = Eigen::Map<RowMatrix<T>>;
template <class T>
using ConstMatMap = Eigen::Map<const RowMatrix<T>>;

}  // namespace detail

// ---------------------------------------------------------------------------
// conv2d
// ---------------------------------------------------------------------------

struct Conv2dOptions {
    int stride = 1;
    int padding = 0;
    int groups = 1;
};

namespace detail {

struct ConvGeometry {
    int n, ci, h, w;
    int co, kh, kw;
    int stride, pad, groups;
    int oh, ow;
    int ci_g, co_g;

    [[nodiscard]] int patch() const { return ci_g * kh * kw; }
    [[nodiscard]] int pixels() const { return oh * ow; }
    [[nodiscard]] bool pointwise() const {
        return kh == 1 && kw == 1 && stride == 1 && pad == 0;
    }
};

inline ConvGeometry conv_geometry(const Shape& in, const Shape& wt, bool has_bias, int bias_len,
                                  const Conv2dOptions& opt) {
    const std::string op = "conv2d";
    if (opt.stride < 1) shape_error(op, "stride must be >= 1, got " + std::to_string(opt.stride));
    if (opt.padding < 0) shape_error(op, "padding must be >= 0, got " + std::to_string(opt.padding));
    if (opt.groups < 1) shape_error(op, "groups must be >= 1, got " + std::to_string(opt.groups));
    if (in.c % opt.groups != 0) {
        shape_error(op, "groups " + std::to_string(opt.groups) + " does not divide input channels " +
                            std::to_string(in.c));
    }
    if (wt.n % opt.groups != 0) {
        shape_error(op, "groups " + std::to_string(opt.groups) +
                            " does not divide output channels " + std::to_string(wt.n));
    }
    if (wt.c != in.c / opt.groups) {
        shape_error(op, "weight channel-in dimension " + std::to_string(wt.c) +
                            " != input channels / groups = " + std::to_string(in.c / opt.groups));
    }
    if (has_bias && bias_len != wt.n) {
        shape_error(op, "bias length " + std::to_string(bias_len) + " != output channels " +
                            std::to_string(wt.n));
    }
    ConvGeometry g{};
    g.n = in.n;
    g.ci = in.c;
    g.h = in.h;
    g.w = in.w;
    g.co = wt.n;
    g.kh = wt.h;
    g.kw = wt.w;
    g.stride = opt.stride;
    g.pad = opt.padding;
    g.groups = opt.groups;
    const int span_h = in.h + 2 * opt.padding - wt.h;
    const int span_w = in.w + 2 * opt.padding - wt.w;
    if (span_h < 0 || span_w < 0) {
        shape_error(op, "kernel " + std::to_string(wt.h) + "x" + std::to_string(wt.w) +
                            " larger than padded input " + in.str());
    }
    g.oh = span_h / opt.stride + 1;
    g.ow = span_w / opt.stride + 1;
    g.ci_g = in.c / opt.groups;
    g.co_g = wt.n / opt.groups;
    return g;
}

// col[(ci*kh + ky)*kw + kx][oy*ow + ox] = in[ci][oy*s - p + ky][ox*s - p + kx]
template <class T>
void im2col(const T* in, const ConvGeometry& g, T* col) {
    const int pixels = g.pixels();
    for (int c = 0; c < g.ci_g; ++c) {
        const T* plane = in + static_cast<std::size_t>(c) * g.h * g.w;
        for (int ky = 0; ky < g.kh; ++ky) {
            for (int kx = 0; kx < g.kw; ++kx) {
                T* row = col + static_cast<std::size_t>((c * g.kh + ky) * g.kw + kx) * pixels;
                for (int oy = 0; oy < g.oh; ++oy) {
                    const int iy = oy * g.stride - g.pad + ky;
                    T* dst = row + static_cast<std::size_t>(oy) * g.ow;
                    if (iy < 0 || iy >= g.h) {
                        std::fill(dst, dst + g.ow, T(0));
                        continue;
                    }
                    const T* src = plane + static_cast<std::size_t>(iy) * g.w;
                    for (int ox = 0; ox < g.ow; ++ox) {
                        const int ix = ox * g.stride - g.pad + kx;
                        dst[ox] = (ix >= 0 && ix < g.w) ? src[ix] : T(0);
                    }
                }
            }
        }
    }
}

template <class T>
void col2im_add(const T* col, const ConvGeometry& g, T* in) {
    const int pixels = g.pixels();
    for (int c = 0; c < g.ci_g; ++c) {
        T* plane = in + static_cast<std::size_t>(c) * g.h * g.w;
        for (int ky = 0; ky < g.kh; ++ky) {
            for (int kx = 0; kx < g.kw; ++kx) {
                const T* row = col + static_cast<std::size_t>((c * g.kh + ky) * g.kw + kx) * pixels;
                for (int oy = 0; oy < g.oh; ++oy) {
                    const int iy = oy * g.stride - g.pad + ky;
                    if (iy < 0 || iy >= g.h) continue;
                    const T* src = row + static_cast<std::size_t>(oy) * g.ow;
                    T* dst = plane + static_cast<std::size_t>(iy) * g.w;
                    for (int ox = 0; ox < g.ow; ++ox) {
                        const int ix = ox * g.stride - g.pad + kx;
                        if (ix >= 0 && ix < g.w) dst[ix] += src[ox];
                    }
                }
            }
        }
    }
}

}  // namespace detail

/// Grouped 2-D cross-correlation with zero padding. `bias` may be null.
template <class T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weights, const std::type_identity_t<Tensor<T>>* bias,
                 const Conv2dOptions& opt = {}) {
    const auto g = detail::conv_geometry(input.shape(), weights.shape(), bias != nullptr,
                                         bias ? static_cast<int>(bias->size()) : 0, opt);
    Tensor<T> out(Shape{g.n, g.co, g.oh, g.ow});
    const int pixels = g.pixels();
    const int patch = g.patch();

    detail::parallel_for(g.n, [&](int b) {
        std::vector<T> col(g.pointwise() ? 0 : static_cast<std::size_t>(patch) * pixels);
        for (int grp = 0; grp < g.groups; ++grp) {
            const T* in_ptr = input.data().data() + input.offset(b, grp * g.ci_g, 0, 0);
            const T* col_ptr = in_ptr;
            if (!g.pointwise()) {
                detail::im2col(in_ptr, g, col.data());
                col_ptr = col.data();
            }
            detail::ConstMatMap<T> cols(col_ptr, patch, pixels);
            detail::ConstMatMap<T> wmat(weights.data().data() +
                                            static_cast<std::size_t>(grp) * g.co_g * patch,
                                        g.co_g, patch);
            T* out_ptr = out.data().data() + out.offset(b, grp * g.co_g, 0, 0);
            detail::MatMap<T> omat(out_ptr, g.co_g, pixels);
            omat.noalias() = wmat * cols;
            if (bias) {
                for (int o = 0; o < g.co_g; ++o) {
                    omat.row(o).array() += (*bias)[static_cast<std::size_t>(grp * g.co_g + o)];
                }
            }
        }
    });
    return out;
}

template <class T>
struct Conv2dGrads {
    Tensor<T> input;
    Tensor<T> weights;
    Tensor<T> bias;  // shape (1, co, 1, 1)
};

/// Gradients of conv2d with respect to input, weights and bias given dL/d(out).
template <class T>
Conv2dGrads<T> conv2d_backward(const Tensor<T>& input, const Tensor<T>& weights,
                               const Tensor<T>& grad_out, const Conv2dOptions& opt = {}) {
    const auto g = detail::conv_geometry(input.shape(), weights.shape(), false, 0, opt);
    if (grad_out.shape() != Shape{g.n, g.co, g.oh, g.ow}) {
        detail::shape_error("conv2d_backward", "grad_out shape " + grad_out.shape().str() +
                                                   " does not match forward output");
    }
    const int pixels = g.pixels();
    const int patch = g.patch();
    Conv2dGrads<T> grads{Tensor<T>(input.shape()), Tensor<T>(weights.shape()),
                         Tensor<T>(Shape{1, g.co, 1, 1})};

    // Per-sample weight gradients are reduced in sample order afterwards so the
    // result does not depend on the thread count.
    std::vector<std::vector<T>> dw_per_sample(static_cast<std::size_t>(g.n));

    detail::parallel_for(g.n, [&](int b) {
        auto& dw = dw_per_sample[static_cast<std::size_t>(b)];
        dw.assign(weights.size(), T(0));
        std::vector<T> col(g.pointwise() ? 0 : static_cast<std::size_t>(patch) * pixels);
        std::vector<T> dcol(static_cast<std::size_t>(patch) * pixels);
        for (int grp = 0; grp < g.groups; ++grp) {
            const T* in_ptr = input.data().data() + input.offset(b, grp * g.ci_g, 0, 0);
            const T* col_ptr = in_ptr;
            if (!g.pointwise()) {
                detail::im2col(in_ptr, g, col.data());
                col_ptr = col.data();
            }
            detail::ConstMatMap<T> cols(col_ptr, patch, pixels);
            detail::ConstMatMap<T> gout(grad_out.data().data() + grad_out.offset(b, grp * g.co_g, 0, 0),
                                        g.co_g, pixels);
            detail::ConstMatMap<T> wmat(weights.data().data() +
                                            static_cast<std::size_t>(grp) * g.co_g * patch,
                                        g.co_g, patch);
            detail::MatMap<T> dwmat(dw.data() + static_cast<std::size_t>(grp) * g.co_g * patch, g.co_g,
                                    patch);
            dwmat.noalias() += gout * cols.transpose();

            T* din = grads.input.data().data() + grads.input.offset(b, grp * g.ci_g, 0, 0);
            if (g.pointwise()) {
                detail::MatMap<T> dinmat(din, patch, pixels);
                dinmat.noalias() += wmat.transpose() * gout;
            } else {
                detail::MatMap<T> dcolmat(dcol.data(), patch, pixels);
                dcolmat.noalias() = wmat.transpose() * gout;
                detail::col2im_add(dcol.data(), g, din);
            }
        }
    });

    auto dweights = grads.weights.data();
    for (const auto& dw : dw_per_sample) {
        for (std::size_t i = 0; i < dw.size(); ++i) dweights[i] += dw[i];
    }
    for (int b = 0; b < g.n; ++b) {
        for (int o = 0; o < g.co; ++o) {
            const T* row = grad_out.data().data() + grad_out.offset(b, o, 0, 0);
            T acc = T(0);
            for (int p = 0; p < pixels; ++p) acc += row[p];
            grads.bias[static_cast<std::size_t>(o)] += acc;
        }
    }
    return grads;
}

// ---------------------------------------------------------------------------
// Elementwise ops
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> relu(const Tensor<T>& x) {
    Tensor<T> out(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] > T(0) ? x[i] : T(0);
    return out;
}

/// Subgradient at 0 is 0.
template <class T>
Tensor<T> relu_backward(const Tensor<T>& x, const Tensor<T>& grad_out) {
    Tensor<T> out(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] > T(0) ? grad_out[i] : T(0);
    return out;
}

template <class T>
Tensor<T> sigmoid(const Tensor<T>& x) {
    Tensor<T> out(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const T v = x[i];
        // Split on sign so exp never overflows.
        if (v >= T(0)) {
            out[i] = T(1) / (T(1) + std::exp(-v));
        } else {
            const T e = std::exp(v);
            out[i] = e / (T(1) + e);
        }
    }
    return out;
}

template <class T>
Tensor<T> sigmoid_backward(const Tensor<T>& y, const Tensor<T>& grad_out) {
    Tensor<T> out(y.shape());
    for (std::size_t i = 0; i < y.size(); ++i) out[i] = grad_out[i] * y[i] * (T(1) - y[i]);
    return out;
}

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    detail::require_same_shape("add", a, b);
    Tensor<T> out(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
    return out;
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    detail::require_same_shape("sub", a, b);
    Tensor<T> out(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] - b[i];
    return out;
}

template <class T>
Tensor<T> scale(const Tensor<T>& a, T s) {
    Tensor<T> out(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * s;
    return out;
}

/// (gamma + 1) * x + beta, elementwise.
template <class T>
Tensor<T> affine_gate(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta) {
    detail::require_same_shape("affine_gate", x, gamma);
    detail::require_same_shape("affine_gate", x, beta);
    Tensor<T> out(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = (gamma[i] + T(1)) * x[i] + beta[i];
    return out;
}

// ---------------------------------------------------------------------------
// Channel concat / slice
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> concat_channels(std::span<const Tensor<T>> parts) {
    if (parts.empty()) detail::shape_error("concat_channels", "no inputs");
    const Shape first = parts.front().shape();
    int channels = 0;
    for (const auto& p : parts) {
        const Shape s = p.shape();
        if (s.n != first.n || s.h != first.h || s.w != first.w) {
            detail::shape_error("concat_channels",
                                "spatial mismatch " + s.str() + " vs " + first.str());
        }
        channels += s.c;
    }
    Tensor<T> out(Shape{first.n, channels, first.h, first.w});
    const std::size_t plane = first.plane();
    for (int b = 0; b < first.n; ++b) {
        int c0 = 0;
        for (const auto& p : parts) {
            const std::size_t len = static_cast<std::size_t>(p.shape().c) * plane;
            std::copy_n(p.data().data() + p.offset(b, 0, 0, 0), len,
                        out.data().data() + out.offset(b, c0, 0, 0));
            c0 += p.shape().c;
        }
    }
    return out;
}

template <class T>
Tensor<T> concat_channels(const std::vector<Tensor<T>>& parts) {
    return concat_channels(std::span<const Tensor<T>>(parts));
}

template <class T>
Tensor<T> slice_channels(const Tensor<T>& x, int begin, int count) {
    const Shape s = x.shape();
    if (begin < 0 || count < 1 || begin + count > s.c) {
        detail::shape_error("slice_channels", "range [" + std::to_string(begin) + ", " +
                                                  std::to_string(begin + count) +
                                                  ") outside channels " + std::to_string(s.c));
    }
    Tensor<T> out(Shape{s.n, count, s.h, s.w});
    const std::size_t len = static_cast<std::size_t>(count) * s.plane();
    for (int b = 0; b < s.n; ++b) {
        std::copy_n(x.data().data() + x.offset(b, begin, 0, 0), len,
                    out.data().data() + out.offset(b, 0, 0, 0));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Pixel shuffle
// ---------------------------------------------------------------------------

/// out[n, k, r*y+i, r*x+j] = in[n, k*r*r + i*r + j, y, x]
template <class T>
Tensor<T> pixel_shuffle(const Tensor<T>& x, int r) {
    const Shape s = x.shape();
    if (r < 1) detail::shape_error("pixel_shuffle", "factor must be >= 1");
    if (s.c % (r * r) != 0) {
        detail::shape_error("pixel_shuffle", "channels " + std::to_string(s.c) +
                                                 " not divisible by r^2 = " + std::to_string(r * r));
    }
    Tensor<T> out(Shape{s.n, s.c / (r * r), s.h * r, s.w * r});
    const int oc = s.c / (r * r);
    for (int b = 0; b < s.n; ++b)
        for (int k = 0; k < oc; ++k)
            for (int i = 0; i < r; ++i)
                for (int j = 0; j < r; ++j) {
                    const int ic = k * r * r + i * r + j;
                    for (int y = 0; y < s.h; ++y)
                        for (int xx = 0; xx < s.w; ++xx)
                            out.at(b, k, r * y + i, r * xx + j) = x.at(b, ic, y, xx);
                }
    return out;
}

template <class T>
Tensor<T> pixel_unshuffle(const Tensor<T>& x, int r) {
    const Shape s = x.shape();
    if (r < 1) detail::shape_error("pixel_unshuffle", "factor must be >= 1");
    if (s.h % r != 0 || s.w % r != 0) {
        detail::shape_error("pixel_unshuffle", "spatial size " + s.str() + " not divisible by " +
                                                   std::to_string(r));
    }
    Tensor<T> out(Shape{s.n, s.c * r * r, s.h / r, s.w / r});
    for (int b = 0; b < s.n; ++b)
        for (int k = 0; k < s.c; ++k)
            for (int i = 0; i < r; ++i)
                for (int j = 0; j < r; ++j) {
                    const int oc = k * r * r + i * r + j;
                    for (int y = 0; y < s.h / r; ++y)
                        for (int xx = 0; xx < s.w / r; ++xx)
                            out.at(b, oc, y, xx) = x.at(b, k, r * y + i, r * xx + j);
                }
    return out;
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

template <class T>
T sum(const Tensor<T>& x) {
    T acc = T(0);
    for (T v : x.data()) acc += v;
    return acc;
}

template <class T>
T mean(const Tensor<T>& x) {
    return sum(x) / static_cast<T>(x.size());
}

template <class T>
T max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
    detail::require_same_shape("max_abs_diff", a, b);
    T m = T(0);
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

// ---------------------------------------------------------------------------
// Dihedral transforms on the spatial axes
// ---------------------------------------------------------------------------

/// index in [0, 8): bit 2 selects a horizontal flip applied first, the low two
/// bits count counter-clockwise quarter turns applied after the flip.
template <class T>
Tensor<T> rot90(const Tensor<T>& x) {
    const Shape s = x.shape();
    Tensor<T> out(Shape{s.n, s.c, s.w, s.h});
    for (int b = 0; b < s.n; ++b)
        for (int c = 0; c < s.c; ++c)
            for (int y = 0; y < s.h; ++y)
                for (int xx = 0; xx < s.w; ++xx) out.at(b, c, s.w - 1 - xx, y) = x.at(b, c, y, xx);
    return out;
}

template <class T>
Tensor<T> flip_horizontal(const Tensor<T>& x) {
    const Shape s = x.shape();
    Tensor<T> out(s);
    for (int b = 0; b < s.n; ++b)
        for (int c = 0; c < s.c; ++c)
            for (int y = 0; y < s.h; ++y)
                for (int xx = 0; xx < s.w; ++xx) out.at(b, c, y, s.w - 1 - xx) = x.at(b, c, y, xx);
    return out;
}

template <class T>
Tensor<T> dihedral(const Tensor<T>& x, int index) {
    Tensor<T> out = (index & 4) ? flip_horizontal(x) : x;
    for (int k = 0; k < (index & 3); ++k) out = rot90(out);
    return out;
}

template <class T>
Tensor<T> dihedral_inverse(const Tensor<T>& x, int index) {
    Tensor<T> out = x;
    for (int k = 0; k < (4 - (index & 3)) % 4; ++k) out = rot90(out);
    if (index & 4) out = flip_horizontal(out);
    return out;
}

}  // namespace pmrn
