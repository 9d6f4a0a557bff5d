#pragma once

// The progressive multi-scale residual network.
//
//   H_0   = fem(I_lr)                               3x3 conv 3 -> c
//   H_k   = PMRB_k(H_{k-1}),  k = 1..K
//   H_out = pad(H_K) + H_0                          conv, ReLU, conv
//   I_sr  = shuffle_r(conv(conv(H_out)))            c -> c -> 3r^2
//
// Inside a PMRB with largest scale S:
//   x_3 = Comb_3(h),  x_s = Comb_s(h) + x_{s-2}     s = 5..S
//   Comb_3 = conv,    Comb_s = conv . relu . Comb_{s-2}  (independent weights per scale)
//   out = CPA(fuse1x1([x_3 .. x_S])) + h
//
// CPA: F = st(x); beta = dw(relu(pw(F))); gamma = sigmoid(dw'(relu(pw'(F))));
//      out = (gamma + 1) * x + beta
//
// Forward code is written once against a context type (EagerContext for
// inference, TapeContext for training) that supplies the primitive ops.

#include "pmrn/autograd.hpp"
#include "pmrn/gradcheck.hpp"
#include "pmrn/nn.hpp"
#include "pmrn/weights_io.hpp"

#include <nlohmann/json.hpp>

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace pmrn {

enum class Attention { cpa, none };
enum class Multiscale { combinations, large_kernels };

inline std::string to_string(Attention a) { return a == Attention::cpa ? "cpa" : "none"; }
inline std::string to_string(Multiscale m) {
    return m == Multiscale::combinations ? "combinations" : "large_kernels";
}

inline Attention parse_attention(const std::string& s) {
    if (s == "cpa") return Attention::cpa;
    if (s == "none") return Attention::none;
    throw std::invalid_argument("unknown attention mode '" + s + "' (expected cpa|none)");
}

inline Multiscale parse_multiscale(const std::string& s) {
    if (s == "combinations") return Multiscale::combinations;
    if (s == "large_kernels" || s == "large-kernels") return Multiscale::large_kernels;
    throw std::invalid_argument("unknown multiscale variant '" + s +
                                "' (expected combinations|large_kernels)");
}

struct PmrnConfig {
    int largest_scale = 9;
    int blocks = 8;
    int channels = 64;
    int upscale = 4;
    Attention attention = Attention::cpa;
    Multiscale multiscale = Multiscale::combinations;

    void validate() const {
        if (largest_scale < 3 || largest_scale % 2 == 0) {
            throw std::invalid_argument("largest scale S must be odd and >= 3, got " +
                                        std::to_string(largest_scale));
        }
        if (blocks < 1) throw std::invalid_argument("block count K must be >= 1");
        if (channels < 1) throw std::invalid_argument("channel width c must be >= 1");
        if (upscale < 2 || upscale > 4) {
            throw std::invalid_argument("upscale factor must be 2, 3 or 4, got " + std::to_string(upscale));
        }
    }

    /// {3, 5, ..., S}
    [[nodiscard]] std::vector<int> scales() const {
        std::vector<int> out;
        for (int s = 3; s <= largest_scale; s += 2) out.push_back(s);
        return out;
    }

    bool operator==(const PmrnConfig&) const = default;
};

inline void to_json(nlohmann::json& j, const PmrnConfig& c) {
    j = nlohmann::json{{"largest_scale", c.largest_scale}, {"blocks", c.blocks},
                       {"channels", c.channels},           {"upscale", c.upscale},
                       {"attention", to_string(c.attention)},
                       {"multiscale", to_string(c.multiscale)}};
}

inline void from_json(const nlohmann::json& j, PmrnConfig& c) {
    c.largest_scale = j.value("largest_scale", c.largest_scale);
    c.blocks = j.value("blocks", c.blocks);
    c.channels = j.value("channels", c.channels);
    c.upscale = j.value("upscale", c.upscale);
    if (j.contains("attention")) c.attention = parse_attention(j.at("attention").get<std::string>());
    if (j.contains("multiscale")) c.multiscale = parse_multiscale(j.at("multiscale").get<std::string>());
}

/// Names the first field that differs, or returns an empty string.
inline std::string config_difference(const PmrnConfig& expected, const PmrnConfig& found) {
    auto field = [](const char* name, const auto& a, const auto& b) -> std::string {
        if (a == b) return {};
        nlohmann::json ja = a, jb = b;
        return std::string(name) + ": expected " + ja.dump() + ", found " + jb.dump();
    };
    for (auto s : {field("largest_scale", expected.largest_scale, found.largest_scale),
                   field("blocks", expected.blocks, found.blocks),
                   field("channels", expected.channels, found.channels),
                   field("upscale", expected.upscale, found.upscale),
                   field("attention", to_string(expected.attention), to_string(found.attention)),
                   field("multiscale", to_string(expected.multiscale), to_string(found.multiscale))}) {
        if (!s.empty()) return s;
    }
    return {};
}

// ---------------------------------------------------------------------------
// Structure
// ---------------------------------------------------------------------------

struct CombStack {
    int scale = 3;
    std::vector<ConvLayer> convs;
};

struct CpaBlock {
    ConvLayer st;
    ConvLayer beta_pw, beta_dw;
    ConvLayer gamma_pw, gamma_dw;
};

struct Pmrb {
    std::vector<CombStack> combs;
    ConvLayer fusion;
    std::optional<CpaBlock> cpa;
};

inline CombStack make_comb_stack(const std::string& prefix, int scale, int c, Multiscale variant) {
    CombStack stack{scale, {}};
    if (variant == Multiscale::large_kernels) {
        stack.convs.emplace_back(prefix + ".conv0", c, c, scale);
        return stack;
    }
    for (int i = 0; i < (scale - 1) / 2; ++i) {
        stack.convs.emplace_back(prefix + ".conv" + std::to_string(i), c, c, 3);
    }
    return stack;
}

inline CpaBlock make_cpa_block(const std::string& prefix, int c) {
    return CpaBlock{ConvLayer(prefix + ".st", c, c, 3),
                    ConvLayer(prefix + ".beta.pw", c, c, 1),
                    ConvLayer(prefix + ".beta.dw", c, c, 3, c),
                    ConvLayer(prefix + ".gamma.pw", c, c, 1),
                    ConvLayer(prefix + ".gamma.dw", c, c, 3, c)};
}

inline Pmrb make_pmrb(const std::string& prefix, const PmrnConfig& cfg) {
    Pmrb block;
    const auto scales = cfg.scales();
    for (int s : scales) {
        block.combs.push_back(
            make_comb_stack(prefix + ".comb" + std::to_string(s), s, cfg.channels, cfg.multiscale));
    }
    block.fusion = ConvLayer(prefix + ".fusion", cfg.channels * static_cast<int>(scales.size()),
                             cfg.channels, 1);
    if (cfg.attention == Attention::cpa) block.cpa = make_cpa_block(prefix + ".cpa", cfg.channels);
    return block;
}

// ---------------------------------------------------------------------------
// Execution contexts
// ---------------------------------------------------------------------------

template <class T>
class EagerContext {
public:
    using Value = Tensor<T>;
    using Scalar = T;

    explicit EagerContext(const ParamStore<T>& params) : params_(params) {}

    Value conv(const Value& x, const ConvLayer& layer) { return conv_forward(params_, layer, x); }
    Value relu(const Value& x) { return pmrn::relu(x); }
    Value sigmoid(const Value& x) { return pmrn::sigmoid(x); }
    Value add(const Value& a, const Value& b) { return pmrn::add(a, b); }
    Value affine_gate(const Value& x, const Value& g, const Value& b) { return pmrn::affine_gate(x, g, b); }
    Value concat(const std::vector<Value>& parts) { return concat_channels(parts); }
    Value pixel_shuffle(const Value& x, int r) { return pmrn::pixel_shuffle(x, r); }
    [[nodiscard]] const Shape& shape(const Value& x) const { return x.shape(); }
    [[nodiscard]] const Tensor<T>& tensor(const Value& x) const { return x; }

private:
    const ParamStore<T>& params_;
};

/// Records every op on a tape; parameter leaves are created on first use.
template <class T>
class TapeContext {
public:
    using Value = Var;
    using Scalar = T;

    TapeContext(Tape<T>& tape, const ParamStore<T>& params, bool params_require_grad = true)
        : tape_(tape), params_(params), params_require_grad_(params_require_grad) {}

    Value conv(const Value& x, const ConvLayer& layer) {
        if (tape_.shape(x).c != layer.in_channels) {
            throw std::invalid_argument("conv " + layer.name + ": expected " +
                                        std::to_string(layer.in_channels) + " input channels, got " +
                                        std::to_string(tape_.shape(x).c));
        }
        return tape_.conv2d(x, param(layer.weight_name()), param(layer.bias_name()), layer.options());
    }
    Value relu(const Value& x) { return tape_.relu(x); }
    Value sigmoid(const Value& x) { return tape_.sigmoid(x); }
    Value add(const Value& a, const Value& b) { return tape_.add(a, b); }
    Value affine_gate(const Value& x, const Value& g, const Value& b) { return tape_.affine_gate(x, g, b); }
    Value concat(const std::vector<Value>& parts) { return tape_.concat_channels(parts); }
    Value pixel_shuffle(const Value& x, int r) { return tape_.pixel_shuffle(x, r); }
    [[nodiscard]] const Shape& shape(const Value& x) const { return tape_.shape(x); }
    [[nodiscard]] const Tensor<T>& tensor(const Value& x) const { return tape_.value(x); }

    Var param(const std::string& name) {
        auto it = bound_.find(name);
        if (it != bound_.end()) return it->second;
        const Var v = tape_.leaf(params_.at(name), params_require_grad_);
        bound_.emplace(name, v);
        return v;
    }

    /// Uses an existing leaf for `name` instead of creating one from the store.
    void bind(const std::string& name, Var v) { bound_.insert_or_assign(name, v); }

    /// Leaves for every parameter used so far, keyed by name.
    [[nodiscard]] const std::map<std::string, Var>& bound() const { return bound_; }
    Tape<T>& tape() { return tape_; }

private:
    Tape<T>& tape_;
    const ParamStore<T>& params_;
    bool params_require_grad_;
    std::map<std::string, Var> bound_;
};

/// Receives intermediate feature maps by tag, e.g. "block2.x7", "block2.gamma".
template <class Ctx>
using FeatureObserver = std::function<void(const std::string&, const typename Ctx::Value&)>;

// ---------------------------------------------------------------------------
// Forward passes
// ---------------------------------------------------------------------------

template <class Ctx>
typename Ctx::Value comb_forward(Ctx& ctx, const CombStack& stack, const typename Ctx::Value& x) {
    auto y = ctx.conv(x, stack.convs.front());
    for (std::size_t i = 1; i < stack.convs.size(); ++i) y = ctx.conv(ctx.relu(y), stack.convs[i]);
    return y;
}

template <class Ctx>
std::vector<typename Ctx::Value> pmp_forward(Ctx& ctx, const Pmrb& block, const typename Ctx::Value& h) {
    std::vector<typename Ctx::Value> xs;
    xs.reserve(block.combs.size());
    for (const auto& stack : block.combs) {
        auto x = comb_forward(ctx, stack, h);
        if (!xs.empty()) x = ctx.add(x, xs.back());
        xs.push_back(std::move(x));
    }
    return xs;
}

template <class Ctx>
typename Ctx::Value cpa_forward(Ctx& ctx, const CpaBlock& cpa, const typename Ctx::Value& x,
                                const FeatureObserver<Ctx>* observer = nullptr,
                                const std::string& tag = {}) {
    const auto f_st = ctx.conv(x, cpa.st);
    const auto beta = ctx.conv(ctx.relu(ctx.conv(f_st, cpa.beta_pw)), cpa.beta_dw);
    const auto gamma = ctx.sigmoid(ctx.conv(ctx.relu(ctx.conv(f_st, cpa.gamma_pw)), cpa.gamma_dw));
    if (observer && *observer) {
        (*observer)(tag + ".gamma", gamma);
        (*observer)(tag + ".beta", beta);
    }
    return ctx.affine_gate(x, gamma, beta);
}

template <class Ctx>
typename Ctx::Value pmrb_forward(Ctx& ctx, const Pmrb& block, const typename Ctx::Value& h,
                                 const FeatureObserver<Ctx>* observer = nullptr,
                                 const std::string& tag = {}) {
    auto xs = pmp_forward(ctx, block, h);
    if (observer && *observer) {
        for (std::size_t i = 0; i < xs.size(); ++i) {
            (*observer)(tag + ".x" + std::to_string(block.combs[i].scale), xs[i]);
        }
    }
    auto fused = ctx.conv(ctx.concat(xs), block.fusion);
    xs.clear();
    if (block.cpa) fused = cpa_forward(ctx, *block.cpa, fused, observer, tag);
    return ctx.add(fused, h);
}

class PmrnModel {
public:
    explicit PmrnModel(PmrnConfig cfg) : cfg_(cfg) {
        cfg_.validate();
        const int c = cfg_.channels;
        const int r = cfg_.upscale;
        fem_ = ConvLayer("fem.conv", 3, c, 3);
        for (int k = 0; k < cfg_.blocks; ++k) body_.push_back(make_pmrb("body.block" + std::to_string(k), cfg_));
        pad1_ = ConvLayer("pad.conv1", c, c, 3);
        pad2_ = ConvLayer("pad.conv2", c, c, 3);
        rm1_ = ConvLayer("rm.conv1", c, c, 3);
        rm2_ = ConvLayer("rm.conv2", c, 3 * r * r, 3);
    }

    [[nodiscard]] const PmrnConfig& config() const { return cfg_; }
    [[nodiscard]] const std::vector<Pmrb>& blocks() const { return body_; }
    [[nodiscard]] const ConvLayer& fem() const { return fem_; }

    /// Every conv layer in forward order.
    [[nodiscard]] std::vector<ConvLayer> layers() const {
        std::vector<ConvLayer> out{fem_};
        for (const auto& b : body_) {
            for (const auto& s : b.combs) out.insert(out.end(), s.convs.begin(), s.convs.end());
            out.push_back(b.fusion);
            if (b.cpa) {
                out.insert(out.end(), {b.cpa->st, b.cpa->beta_pw, b.cpa->beta_dw, b.cpa->gamma_pw,
                                       b.cpa->gamma_dw});
            }
        }
        out.insert(out.end(), {pad1_, pad2_, rm1_, rm2_});
        return out;
    }

    /// Zero-filled parameter store with one weight and one bias per layer.
    template <class T = float>
    [[nodiscard]] ParamStore<T> make_params() const {
        ParamStore<T> store;
        for (const auto& l : layers()) store.declare(l);
        return store;
    }

    template <class T = float>
    [[nodiscard]] ParamStore<T> init_params(const InitSpec& spec) const {
        auto store = make_params<T>();
        pmrn::init_params(store, spec);
        return store;
    }

    template <class Ctx>
    typename Ctx::Value forward(Ctx& ctx, const typename Ctx::Value& lr,
                                const FeatureObserver<Ctx>* observer = nullptr) const {
        const Shape s = ctx.shape(lr);
        if (s.c != 3) {
            throw std::invalid_argument("pmrn_forward: expected a 3-channel input, got " + s.str());
        }
        const auto h0 = ctx.conv(lr, fem_);
        auto h = h0;
        for (std::size_t k = 0; k < body_.size(); ++k) {
            h = pmrb_forward(ctx, body_[k], h, observer, "block" + std::to_string(k));
        }
        const auto h_out = ctx.add(ctx.conv(ctx.relu(ctx.conv(h, pad1_)), pad2_), h0);
        return ctx.pixel_shuffle(ctx.conv(ctx.conv(h_out, rm1_), rm2_), cfg_.upscale);
    }

    template <class T>
    [[nodiscard]] Tensor<T> infer(const ParamStore<T>& params, const Tensor<T>& lr) const {
        EagerContext<T> ctx(params);
        return forward(ctx, lr);
    }

private:
    PmrnConfig cfg_;
    ConvLayer fem_;
    std::vector<Pmrb> body_;
    ConvLayer pad1_, pad2_, rm1_, rm2_;
};

/// Mean of f over the 8 dihedral transforms of x, each output mapped back.
template <class T, class Fn>
Tensor<T> self_ensemble(Fn&& f, const Tensor<T>& x) {
    std::optional<Tensor<T>> acc;
    for (int i = 0; i < 8; ++i) {
        Tensor<T> y = dihedral_inverse(f(dihedral(x, i)), i);
        if (!acc) {
            acc = std::move(y);
        } else {
            detail::require_same_shape("self_ensemble", *acc, y);
            for (std::size_t j = 0; j < y.size(); ++j) (*acc)[j] += y[j];
        }
    }
    for (auto& v : acc->data()) v /= T(8);
    return *acc;
}

template <class T>
Tensor<T> self_ensemble_forward(const PmrnModel& model, const ParamStore<T>& params, const Tensor<T>& lr) {
    return self_ensemble([&](const Tensor<T>& x) { return model.infer(params, x); }, lr);
}

/// Every weight and bias drawn from U(-bound, bound). Init-scale weights leave
/// the attention gradients near 1e-7, below finite-difference resolution.
inline ParamStore<double> random_params(const PmrnModel& model, std::uint64_t seed, double bound = 0.5) {
    auto store = model.make_params<double>();
    std::mt19937_64 rng(seed);
    for (auto& [name, t] : store.entries())
        for (auto& v : t.data()) v = (2.0 * (static_cast<double>(rng() >> 11) * 0x1.0p-53) - 1.0) * bound;
    return store;
}

/// Finite-difference check of every parameter's gradient through the full
/// forward. The loss is a fixed random weighting of the output, averaged.
inline GradCheckReport gradcheck_model(const PmrnModel& model, const ParamStore<double>& params,
                                       const Tensor<double>& lr, const GradCheckOptions& opt = {}) {
    std::vector<NamedTensor> named;
    std::vector<std::string> names;
    for (const auto& [name, t] : params.entries()) {
        named.push_back({name, t});
        names.push_back(name);
    }
    const Shape os{lr.shape().n, 3, lr.shape().h * model.config().upscale, lr.shape().w * model.config().upscale};
    Tensor<double> weighting(os);
    std::mt19937_64 rng(opt.seed ^ 0x5eedULL);
    for (auto& v : weighting.data()) v = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    return finite_diff_check(
        [&](Tape<double>& tape, const std::vector<Var>& vars) {
            TapeContext<double> ctx(tape, params);
            for (std::size_t i = 0; i < vars.size(); ++i) ctx.bind(names[i], vars[i]);
            const Var y = model.forward(ctx, tape.constant(lr));
            return tape.mean(tape.affine_gate(y, tape.constant(weighting), tape.constant(Tensor<double>(os))));
        },
        std::move(named), opt);
}

// ---------------------------------------------------------------------------
// Weight files
// ---------------------------------------------------------------------------

inline void save_weights(const std::string& path, const PmrnConfig& cfg, const ParamStore<float>& params) {
    write_tensor_file(path, nlohmann::json{{"kind", "weights"}, {"config", cfg}}, params);
}

struct LoadedWeights {
    PmrnConfig config;
    ParamStore<float> params;
};

/// Reads a weight file and validates its tensors against the layout of the
/// architecture named in its own header.
inline LoadedWeights load_weights(const std::string& path) {
    auto file = read_tensor_file(path);
    if (!file.header.contains("config")) throw FormatError(path + ": header has no config record");
    LoadedWeights out{file.header.at("config").get<PmrnConfig>(), {}};
    out.config.validate();
    const auto expected = PmrnModel(out.config).make_params<float>();
    if (file.header.value("kind", "") == "weights") {
        require_same_layout(expected, file.tensors);
        out.params = std::move(file.tensors);
        return out;
    }
    // Checkpoints carry extra optimizer tensors after the parameters.
    for (const auto& [name, t] : expected.entries()) {
        if (!file.tensors.contains(name)) throw FormatError(path + ": missing parameter " + name);
        if (file.tensors.at(name).shape() != t.shape()) {
            throw FormatError(path + ": shape mismatch for " + name);
        }
        out.params.add(name, file.tensors.at(name));
    }
    return out;
}

/// As load_weights, but rejects a file whose architecture differs from `expected`.
inline ParamStore<float> load_weights(const std::string& path, const PmrnConfig& expected) {
    auto loaded = load_weights(path);
    const auto diff = config_difference(expected, loaded.config);
    if (!diff.empty()) throw FormatError(path + ": config mismatch, " + diff);
    return std::move(loaded.params);
}

}  // namespace pmrn
