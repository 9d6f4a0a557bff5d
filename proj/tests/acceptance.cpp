// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fail.

#include "oracles.hpp"
#include "pmrn/pmrn.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <sstream>
#include <string>

namespace {

using namespace pmrn;
using testing::conv2d_reference;
using testing::random_tensor;

struct Outcome {
    bool pass = false;
    std::string detail;
};

PmrnConfig paper(int r, Multiscale v = Multiscale::combinations) {
    PmrnConfig c;
    c.upscale = r;
    c.multiscale = v;
    return c;
}

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

double rel_diff(double got, double want) { return std::abs(got - want) / std::abs(want); }

/// Eager context that also totals conv multiply-accumulates.
struct MacCounter : EagerContext<float> {
    using EagerContext<float>::EagerContext;
    std::int64_t macs = 0;
    Value conv(const Value& x, const ConvLayer& l) {
        auto y = EagerContext<float>::conv(x, l);
        const Shape s = y.shape();
        macs += static_cast<std::int64_t>(s.n) * s.c * s.h * s.w * (l.in_channels / l.groups) * l.kernel * l.kernel;
        return y;
    }
};

Outcome criterion1() {
    const std::int64_t want[] = {3577548, 3586203, 3598320};
    bool ok = true;
    std::ostringstream os;
    for (int r = 2; r <= 4; ++r) {
        const auto got = analysis::analyze(paper(r)).params;
        ok = ok && got == want[r - 2];
        os << "x" << r << "=" << got << (r < 4 ? " " : "");
    }
    return {ok, os.str()};
}

Outcome criterion2() {
    const auto got = analysis::analyze(paper(4, Multiscale::large_kernels)).params;
    return {got == 6020080, "large-kernels x4=" + std::to_string(got)};
}

Outcome criterion3() {
    struct Row {
        PmrnConfig cfg;
        double paper_g;
    };
    const Row rows[] = {{paper(2), 824.2}, {paper(3), 366.6}, {paper(4), 207.2},
                        {paper(4, Multiscale::large_kernels), 346.7}};
    bool ok = true;
    std::ostringstream os;
    for (const auto& row : rows) {
        const double g = static_cast<double>(analysis::analyze(row.cfg).macs) / 1e9;
        const double d = rel_diff(g, row.paper_g);
        ok = ok && d <= 0.005;
        os << fmt("%.1fG(%.2f%%) ", g, 100 * d);
    }
    const auto cmp = analysis::compare_variants(paper(4), paper(4, Multiscale::large_kernels));
    ok = ok && std::abs(cmp.params_saving_percent - 40.2) < 0.05;
    os << fmt("saving %.2f%% params, %.2f%% MACs", cmp.params_saving_percent, cmp.macs_saving_percent);
    return {ok, os.str()};
}

Outcome criterion4() {
    const auto report = analysis::analyze(paper(4));
    bool ok = report.ensemble_macs() == 8 * report.macs;
    const double g = static_cast<double>(report.ensemble_macs()) / 1e9;
    ok = ok && rel_diff(g, 1657.6) <= 0.005;

    // Measured: count conv MACs of a real forward pass and of the 8-way ensemble.
    const PmrnModel model(paper(4));
    const auto params = model.init_params<float>(InitSpec{.seed = 1});
    std::mt19937_64 rng(4);
    const auto lr = random_tensor<float>({1, 3, 12, 16}, rng, 0.0, 1.0);
    MacCounter single(params);
    (void)model.forward(single, lr);
    const auto predicted = analysis::analyze(paper(4), {64, 48}).macs;
    MacCounter ens(params);
    int passes = 0;
    (void)self_ensemble(
        [&](const Tensor<float>& x) {
            ++passes;
            return model.forward(ens, x);
        },
        lr);
    ok = ok && single.macs == predicted && ens.macs == 8 * single.macs && passes == 8;
    return {ok, fmt("720p ensemble %.1fG = 8 x %.1fG; measured 64x48: single %lld (analyzer %lld), ensemble %lld "
                    "over %d passes",
                    g, static_cast<double>(report.macs) / 1e9, static_cast<long long>(single.macs),
                    static_cast<long long>(predicted), static_cast<long long>(ens.macs), passes)};
}

Outcome criterion5() {
    std::mt19937_64 rng(2024);
    auto pick = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };
    int matched = 0;
    std::string first_miss;
    for (int i = 0; i < 20; ++i) {
        PmrnConfig c;
        c.channels = pick(1, 96);
        c.blocks = pick(1, 12);
        c.largest_scale = 2 * pick(1, 5) + 1;
        c.upscale = pick(2, 4);
        c.attention = pick(0, 1) ? Attention::cpa : Attention::none;
        c.multiscale = pick(0, 1) ? Multiscale::combinations : Multiscale::large_kernels;
        const auto stored = PmrnModel(c).make_params<float>().parameter_count();
        const auto analyzed = analysis::analyze(c, {64, 64}).params;
        if (stored == analyzed) {
            ++matched;
        } else if (first_miss.empty()) {
            first_miss = fmt(" first mismatch: %lld vs %lld", static_cast<long long>(stored),
                             static_cast<long long>(analyzed));
        }
    }
    return {matched == 20, fmt("%d/20 random configs match exactly", matched) + first_miss};
}

Outcome criterion6() {
    GradCheckOptions op_opt;
    op_opt.max_coordinates = 0;
    double worst_op = 0.0;
    std::string worst_name;
    bool ok = true;
    std::size_t ops = 0;
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
        const auto checks = check_all_ops(seed, op_opt);
        ops = checks.size();
        for (const auto& c : checks) {
            ok = ok && c.report.passed && c.report.max_relative_error <= 1e-4;
            if (c.report.max_relative_error > worst_op) worst_op = c.report.max_relative_error, worst_name = c.op;
        }
    }
    PmrnConfig cfg;
    cfg.channels = 4;
    cfg.blocks = 1;
    cfg.largest_scale = 5;
    cfg.upscale = 2;
    const PmrnModel model(cfg);
    double worst_model = 0.0;
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
        std::mt19937_64 rng(seed);
        const auto lr = random_tensor<double>({1, 3, 8, 8}, rng, 0.0, 1.0);
        GradCheckOptions opt;
        opt.seed = seed;
        opt.max_coordinates = 0;
        const auto report = gradcheck_model(model, random_params(model, seed), lr, opt);
        ok = ok && report.passed && report.max_relative_error <= 1e-4;
        worst_model = std::max(worst_model, report.max_relative_error);
    }
    return {ok, fmt("%zu ops x 3 seeds, worst %.2e (%s); full model c=4 K=1 S=5 8x8, all coordinates, worst %.2e",
                    ops, worst_op, worst_name.c_str(), worst_model)};
}

Outcome criterion7() {
    std::mt19937_64 rng(77);
    auto pick = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };
    double worst = 0.0;
    int depthwise = 0, grouped = 0;
    for (int trial = 0; trial < 50; ++trial) {
        const int kind = trial % 3;  // dense, grouped, depthwise
        int groups = 1, ci = pick(1, 8), co = pick(1, 8);
        if (kind == 1) {
            groups = pick(2, 4);
            ci = groups * pick(1, 3);
            co = groups * pick(1, 3);
            ++grouped;
        } else if (kind == 2) {
            groups = ci = co = pick(2, 16);
            ++depthwise;
        }
        const int k = 2 * pick(0, 3) + 1;
        const int stride = pick(1, 2);
        const int pad = pick(0, k / 2);
        const int h = pick(k, 14), w = pick(k, 14);
        const auto x = random_tensor<float>({pick(1, 2), ci, h, w}, rng);
        const auto wt = random_tensor<float>({co, ci / groups, k, k}, rng);
        const auto b = random_tensor<float>({1, co, 1, 1}, rng);
        const auto got = conv2d(x, wt, &b, {stride, pad, groups});
        const auto want = conv2d_reference(x, wt, &b, stride, pad, groups);
        if (got.shape() != want.shape()) return {false, fmt("shape mismatch at trial %d", trial)};
        worst = std::max(worst, static_cast<double>(max_abs_diff(got, want)));
    }
    return {worst <= 1e-5, fmt("50 instances (%d grouped, %d depthwise), max abs diff %.2e", grouped, depthwise, worst)};
}

Outcome criterion8() {
    std::ostringstream os;
    bool ok = true;

    // Gate multiplier gamma + 1 over every position of every block of the full model.
    {
        const PmrnModel model(paper(2));
        const auto params = model.init_params<double>(InitSpec{.seed = 8});
        const auto lr = to_tensor<double>(synthetic_image(24, 24, 8));
        double lo = 2.0, hi = 0.0;
        FeatureObserver<EagerContext<double>> obs = [&](const std::string& tag, const Tensor<double>& v) {
            if (!ends_with(tag, ".gamma")) return;
            for (double g : v.data()) lo = std::min(lo, g + 1.0), hi = std::max(hi, g + 1.0);
        };
        EagerContext<double> ctx(params);
        (void)model.forward(ctx, lr, &obs);
        ok = ok && lo > 1.0 && hi < 2.0;
        os << fmt("gate in [%.4f, %.4f]; ", lo, hi);
    }

    // Zero fusion and attention extractors, gate bias -20: the block passes its input through.
    {
        PmrnConfig cfg = paper(2);
        cfg.blocks = 1;
        cfg.channels = 8;
        const PmrnModel model(cfg);
        auto store = model.init_params<float>(InitSpec{.seed = 9});
        const auto& b = model.blocks()[0];
        auto zero = [&](const ConvLayer& l) {
            std::fill(store.at(l.weight_name()).data().begin(), store.at(l.weight_name()).data().end(), 0.0f);
            std::fill(store.at(l.bias_name()).data().begin(), store.at(l.bias_name()).data().end(), 0.0f);
        };
        zero(b.fusion);
        for (const auto& l : {b.cpa->beta_pw, b.cpa->beta_dw, b.cpa->gamma_pw, b.cpa->gamma_dw}) zero(l);
        std::fill(store.at(b.cpa->gamma_dw.bias_name()).data().begin(),
                  store.at(b.cpa->gamma_dw.bias_name()).data().end(), -20.0f);
        std::mt19937_64 rng(9);
        const auto h = random_tensor<float>({1, 8, 11, 13}, rng);
        EagerContext<float> ctx(store);
        const double d = max_abs_diff(pmrb_forward(ctx, b, h), h);
        ok = ok && d <= 1e-6;
        os << fmt("degenerate block max diff %.1e; ", d);
    }

    // Receptive fields measured with a unit impulse through positive weights.
    {
        os << "RF";
        for (int s : {3, 5, 7, 9}) {
            const auto stack = make_comb_stack("c", s, 2, Multiscale::combinations);
            ParamStore<float> store;
            for (const auto& l : stack.convs) store.declare(l);
            std::mt19937_64 rng(static_cast<std::uint64_t>(s));
            for (auto& [n, t] : store.entries())
                if (ends_with(n, ".weight")) t = random_tensor<float>(t.shape(), rng, 0.1, 1.0);
            Tensor<float> x(Shape{1, 2, 21, 21});
            x.at(0, 0, 10, 10) = 1.0f;
            EagerContext<float> ctx(store);
            const auto y = comb_forward(ctx, stack, x);
            int lo = 21, hi = -1;
            for (int i = 0; i < 21; ++i)
                if (y.at(0, 0, 10, i) != 0.0f) lo = std::min(lo, i), hi = std::max(hi, i);
            const int rf = hi - lo + 1;
            ok = ok && rf == s && analysis::receptive_field(s) == s;
            os << " " << rf;
        }
        os << "; ";
    }

    {
        PmrnConfig cfg = paper(2);
        cfg.largest_scale = 9;
        const auto block = make_pmrb("b", cfg);
        int n = 0;
        for (const auto& s : block.combs) n += static_cast<int>(s.convs.size());
        ok = ok && n == 10;
        os << "PMRB convs at S=9: " << n;
    }
    return {ok, os.str()};
}

Outcome criterion9() {
    const DegradationSpec spec{DegradationKind::bicubic, 2};
    std::vector<Image> train_hr, held_hr;
    for (int i = 0; i < 8; ++i) train_hr.push_back(synthetic_image(96, 96, 100 + static_cast<std::uint64_t>(i)));
    for (int i = 0; i < 4; ++i) held_hr.push_back(synthetic_image(96, 96, 900 + static_cast<std::uint64_t>(i)));
    const auto train_pairs = make_pairs(train_hr, spec);
    const auto held_pairs = make_pairs(held_hr, spec);

    const PmrnConfig mcfg = desk_model_config();
    const TrainConfig tcfg = desk_train_config();
    const PmrnModel model(mcfg);
    auto state = make_train_state(mcfg, tcfg, InitSpec{.seed = tcfg.seed});
    // Fixed probe batch, never drawn during training (step index far past the run).
    const auto probe = sample_batch<float>(train_pairs, mcfg.upscale, tcfg, 1000000);
    const double initial = batch_loss(model, state.params, probe);
    train(model, state, train_pairs, {});
    const double final_loss = batch_loss(model, state.params, probe);
    const double bicubic = mean_bicubic_psnr(held_pairs, 2);
    const double psnr = mean_psnr(model, state.params, held_pairs);
    const bool ok = state.step == 200 && final_loss <= 0.5 * initial && psnr >= bicubic + 0.3;
    return {ok, fmt("c=%d K=%d S=%d r=%d, %lld steps: loss %.4f -> %.4f (%.1f%%), held-out Y-PSNR %.2f dB vs bicubic "
                    "%.2f dB (%+.2f dB)",
                    mcfg.channels, mcfg.blocks, mcfg.largest_scale, mcfg.upscale,
                    static_cast<long long>(state.step), initial, final_loss, 100 * final_loss / initial, psnr, bicubic,
                    psnr - bicubic)};
}

Outcome criterion10() {
    Plane a(32, 32), b(32, 32);
    std::fill(a.data.begin(), a.data.end(), 100.0f);
    std::fill(b.data.begin(), b.data.end(), 101.0f);
    const double p = psnr(a, b);
    const auto y = rgb_to_y(synthetic_image(48, 40, 10));
    const double s = ssim(y, y);
    const double same = psnr(y, y);
    const bool ok = std::abs(p - 48.1308) <= 1e-3 && s == 1.0 && same == kPsnrIdentical && std::isinf(same);
    return {ok, fmt("uniform error 1: %.4f dB; SSIM(x,x) = %.6f; PSNR(x,x) = %f", p, s, same)};
}

}  // namespace

int main() {
    struct Criterion {
        int id;
        const char* name;
        double budget_s;
        std::function<Outcome()> run;
    };
    const Criterion all[] = {
        {1, "parameter counts", 1.0, criterion1},
        {2, "large-kernel ablation parameters", 1.0, criterion2},
        {3, "720p MACs and variant savings", 0.0, criterion3},
        {4, "self-ensemble cost", 0.0, criterion4},
        {5, "parameter store vs analyzer", 30.0, criterion5},
        {6, "64-bit gradient checks", 120.0, criterion6},
        {7, "conv2d vs reference", 60.0, criterion7},
        {8, "structural invariants", 0.0, criterion8},
        {9, "desk-scale training", 600.0, criterion9},
        {10, "metric sanity", 0.0, criterion10},
    };
    int failed = 0;
    for (const auto& c : all) {
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        const bool in_time = c.budget_s <= 0.0 || secs < c.budget_s;
        const bool pass = o.pass && in_time;
        failed += pass ? 0 : 1;
        std::printf("%s criterion %d (%s): %s [%.2fs%s]\n", pass ? "PASS" : "FAIL", c.id, c.name, o.detail.c_str(), secs,
                    in_time ? "" : fmt(", over %.0fs budget", c.budget_s).c_str());
        std::fflush(stdout);
    }
    std::printf("%d/%zu criteria passed\n", static_cast<int>(std::size(all)) - failed, std::size(all));
    return failed == 0 ? 0 : 1;
}
