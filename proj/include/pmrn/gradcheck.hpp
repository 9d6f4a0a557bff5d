#pragma once

// Central finite-difference verification of tape gradients, run in 64-bit.

#include "pmrn/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <string>
#include <vector>

namespace pmrn {

struct GradCheckEntry {
    std::string name;
    std::size_t coordinates_checked = 0;
    double max_relative_error = 0.0;
};

struct GradCheckReport {
    std::vector<GradCheckEntry> entries;
    double max_relative_error = 0.0;
    double tolerance = 0.0;
    bool passed = false;
};

struct GradCheckOptions {
    double epsilon = 1e-5;
    double tolerance = 1e-4;
    /// Coordinates sampled per parameter; 0 checks every coordinate.
    std::size_t max_coordinates = 32;
    std::uint64_t seed = 0;
};

struct NamedTensor {
    std::string name;
    Tensor<double> value;
};

inline double relative_error(double analytic, double numeric) {
    const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
    return std::abs(analytic - numeric) / denom;
}

/// `build_loss(tape, vars)` must record a deterministic scalar loss on `tape`
/// using `vars[i]` as the leaf for `params[i]`.
template <class BuildLoss>
GradCheckReport finite_diff_check(BuildLoss&& build_loss, std::vector<NamedTensor> params,
                                  const GradCheckOptions& opt = {}) {
    if (!(opt.epsilon > 0.0)) throw std::invalid_argument("finite_diff_check: epsilon must be > 0");

    auto evaluate = [&](bool with_backward, std::vector<Tensor<double>>* grads) {
        Tape<double> tape;
        std::vector<Var> vars;
        vars.reserve(params.size());
        for (const auto& p : params) vars.push_back(tape.leaf(p.value, true));
        const Var loss = build_loss(tape, vars);
        if (with_backward) {
            tape.backward(loss);
            for (Var v : vars) grads->push_back(tape.grad(v));
        }
        return tape.value(loss)[0];
    };

    std::vector<Tensor<double>> analytic;
    evaluate(true, &analytic);

    GradCheckReport report;
    report.tolerance = opt.tolerance;
    std::mt19937_64 rng(opt.seed);
    for (std::size_t p = 0; p < params.size(); ++p) {
        const std::size_t n = params[p].value.size();
        std::vector<std::size_t> coords(n);
        std::iota(coords.begin(), coords.end(), std::size_t{0});
        if (opt.max_coordinates > 0 && n > opt.max_coordinates) {
            std::shuffle(coords.begin(), coords.end(), rng);
            coords.resize(opt.max_coordinates);
        }
        GradCheckEntry entry{params[p].name, coords.size(), 0.0};
        for (std::size_t i : coords) {
            const double saved = params[p].value[i];
            params[p].value[i] = saved + opt.epsilon;
            const double up = evaluate(false, nullptr);
            params[p].value[i] = saved - opt.epsilon;
            const double down = evaluate(false, nullptr);
            params[p].value[i] = saved;
            const double numeric = (up - down) / (2.0 * opt.epsilon);
            entry.max_relative_error =
                std::max(entry.max_relative_error, relative_error(analytic[p][i], numeric));
        }
        report.max_relative_error = std::max(report.max_relative_error, entry.max_relative_error);
        report.entries.push_back(std::move(entry));
    }
    report.passed = report.max_relative_error <= report.tolerance;
    return report;
}

struct OpCheck {
    std::string op;
    GradCheckReport report;
};

namespace detail {

/// Uniform in [lo, hi), or with |v| in [lo, hi) and random sign when `signed_magnitude`.
inline Tensor<double> draw(const Shape& s, std::mt19937_64& rng, double lo, double hi, bool signed_magnitude = false) {
    Tensor<double> t(s);
    for (auto& v : t.data()) {
        const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
        v = lo + (hi - lo) * u;
        if (signed_magnitude && (rng() & 1U)) v = -v;
    }
    return t;
}

}  // namespace detail

/// Finite-difference check of every differentiable tape op. Each op output is
/// reduced by a fixed random weighting so no output symmetry hides an error.
/// ReLU inputs keep |x| >= 1e-3 and L1 targets stay >= 1e-3 from predictions.
inline std::vector<OpCheck> check_all_ops(std::uint64_t seed, GradCheckOptions opt = {}) {
    std::mt19937_64 rng(seed);
    std::vector<OpCheck> out;
    auto weighted = [](Tape<double>& t, Var y, const Tensor<double>& w) {
        return t.mean(t.affine_gate(y, t.constant(w), t.constant(Tensor<double>(w.shape()))));
    };
    auto run = [&](const std::string& op, const std::vector<Shape>& shapes, const Shape& out_shape, auto&& f,
                   bool away_from_zero = false) {
        std::vector<NamedTensor> params;
        for (std::size_t i = 0; i < shapes.size(); ++i) {
            params.push_back({"in" + std::to_string(i), away_from_zero ? detail::draw(shapes[i], rng, 1e-3, 1.0, true)
                                                                       : detail::draw(shapes[i], rng, -1.0, 1.0)});
        }
        const auto w = detail::draw(out_shape, rng, 0.0, 1.0);
        out.push_back({op, finite_diff_check(
                               [&](Tape<double>& t, const std::vector<Var>& v) { return weighted(t, f(t, v), w); },
                               std::move(params), opt)});
    };

    const Shape x{2, 4, 6, 5};
    for (auto [name, groups, stride, k] : {std::tuple{"conv2d", 1, 1, 3}, {"conv2d.grouped", 2, 1, 3},
                                          {"conv2d.depthwise", 4, 1, 3}, {"conv2d.stride2", 1, 2, 3},
                                          {"conv2d.pointwise", 1, 1, 1}}) {
        const int pad = k / 2;
        const Shape y{2, 4, (6 + 2 * pad - k) / stride + 1, (5 + 2 * pad - k) / stride + 1};
        run(name, {x, Shape{4, 4 / groups, k, k}, Shape{1, 4, 1, 1}}, y,
            [&, groups = groups, stride = stride, pad](Tape<double>& t, const std::vector<Var>& v) {
                return t.conv2d(v[0], v[1], v[2], Conv2dOptions{stride, pad, groups});
            });
    }
    run("relu", {x}, x, [](Tape<double>& t, const std::vector<Var>& v) { return t.relu(v[0]); }, true);
    run("sigmoid", {x}, x, [](Tape<double>& t, const std::vector<Var>& v) { return t.sigmoid(v[0]); });
    run("add", {x, x}, x, [](Tape<double>& t, const std::vector<Var>& v) { return t.add(v[0], v[1]); });
    run("affine_gate", {x, x, x}, x,
        [](Tape<double>& t, const std::vector<Var>& v) { return t.affine_gate(v[0], v[1], v[2]); });
    run("concat_channels", {Shape{2, 3, 4, 4}, Shape{2, 5, 4, 4}}, Shape{2, 8, 4, 4},
        [](Tape<double>& t, const std::vector<Var>& v) { return t.concat_channels({v[0], v[1]}); });
    run("pixel_shuffle", {Shape{1, 12, 3, 4}}, Shape{1, 3, 6, 8},
        [](Tape<double>& t, const std::vector<Var>& v) { return t.pixel_shuffle(v[0], 2); });

    std::vector<NamedTensor> mp{{"in0", detail::draw(x, rng, -1.0, 1.0)}};
    out.push_back({"mean", finite_diff_check([](Tape<double>& t, const std::vector<Var>& v) { return t.mean(v[0]); },
                                             std::move(mp), opt)});

    const auto pred = detail::draw(x, rng, -1.0, 1.0);
    auto target = pred;
    const auto offset = detail::draw(x, rng, 1e-3, 0.5, true);
    for (std::size_t i = 0; i < target.size(); ++i) target[i] += offset[i];
    out.push_back({"mean_abs_error",
                   finite_diff_check([&](Tape<double>& t, const std::vector<Var>& v) {
                       return t.mean_abs_error(v[0], t.constant(target));
                   }, {{"pred", pred}}, opt)});
    return out;
}

}  // namespace pmrn
