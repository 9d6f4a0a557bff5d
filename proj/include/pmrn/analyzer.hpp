#pragma once

// Closed-form complexity accounting for the PMRN family.
//
// Parameters:  sum over conv layers of ch_i * ch_o * fw * fh / gs + bs
// MACs:        sum over conv layers of (ch_i * ch_o * fw * fh / gs) * output pixels
//
// Every conv runs before the final pixel shuffle, so all layers are costed at
// the LR resolution W*H/r^2 of the requested output. The layer list is
// enumerated from the config here, independently of PmrnModel, so that the two
// can be cross-checked.

#include "pmrn/model.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <cstdio>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

namespace pmrn::analysis {

struct Resolution {
    int width = 1280;
    int height = 720;
};

struct LayerDescriptor {
    std::string name;
    std::int64_t ch_in = 0;
    std::int64_t ch_out = 0;
    std::int64_t fw = 0;
    std::int64_t fh = 0;
    std::int64_t groups = 1;
    std::int64_t bias = 0;
    std::int64_t h_out = 0;
    std::int64_t w_out = 0;
    std::int64_t pixels = 0;  // may differ from h_out*w_out when W/r is fractional

    [[nodiscard]] std::int64_t weights() const { return ch_in * ch_out * fw * fh / groups; }
    [[nodiscard]] std::int64_t params() const { return weights() + bias; }
    [[nodiscard]] std::int64_t macs() const { return weights() * pixels; }
};

struct LrSize {
    std::int64_t width = 0;
    std::int64_t height = 0;
    std::int64_t pixels = 0;
};

/// W*H/r^2 when that divides exactly (e.g. 1280x720 at x3 -> 102,400), else
/// floor(W/r) * floor(H/r).
inline LrSize lr_size(Resolution out, int r) {
    const std::int64_t w = out.width, h = out.height, rr = static_cast<std::int64_t>(r) * r;
    LrSize s{w / r, h / r, 0};
    s.pixels = (w * h) % rr == 0 ? (w * h) / rr : s.width * s.height;
    return s;
}

inline std::vector<LayerDescriptor> describe_model(const PmrnConfig& cfg, Resolution out = {}) {
    cfg.validate();
    const LrSize lr = lr_size(out, cfg.upscale);
    const std::int64_t c = cfg.channels;
    std::vector<LayerDescriptor> layers;
    auto conv = [&](std::string name, std::int64_t in, std::int64_t o, std::int64_t k, std::int64_t gs = 1) {
        layers.push_back(LayerDescriptor{std::move(name), in, o, k, k, gs, o, lr.height, lr.width, lr.pixels});
    };

    conv("fem.conv", 3, c, 3);
    std::int64_t scales = 0;
    for (int k = 0; k < cfg.blocks; ++k) {
        const std::string b = "body.block" + std::to_string(k);
        scales = 0;
        for (int s = 3; s <= cfg.largest_scale; s += 2, ++scales) {
            const std::string comb = b + ".comb" + std::to_string(s);
            if (cfg.multiscale == Multiscale::large_kernels) {
                conv(comb + ".conv0", c, c, s);
                continue;
            }
            for (int i = 0; i < (s - 1) / 2; ++i) conv(comb + ".conv" + std::to_string(i), c, c, 3);
        }
        conv(b + ".fusion", c * scales, c, 1);
        if (cfg.attention == Attention::cpa) {
            conv(b + ".cpa.st", c, c, 3);
            conv(b + ".cpa.beta.pw", c, c, 1);
            conv(b + ".cpa.beta.dw", c, c, 3, c);
            conv(b + ".cpa.gamma.pw", c, c, 1);
            conv(b + ".cpa.gamma.dw", c, c, 3, c);
        }
    }
    conv("pad.conv1", c, c, 3);
    conv("pad.conv2", c, c, 3);
    conv("rm.conv1", c, c, 3);
    conv("rm.conv2", c, 3LL * cfg.upscale * cfg.upscale, 3);
    return layers;
}

inline std::int64_t count_params(const std::vector<LayerDescriptor>& layers) {
    std::int64_t total = 0;
    for (const auto& l : layers) total += l.params();
    return total;
}

inline std::int64_t count_macs(const std::vector<LayerDescriptor>& layers) {
    std::int64_t total = 0;
    for (const auto& l : layers) total += l.macs();
    return total;
}

/// Per-element work outside the convolutions at LR resolution: bias adds,
/// ReLUs, sigmoids, residual adds and the attention gate, one op per element.
inline std::int64_t count_elementwise_ops(const PmrnConfig& cfg, Resolution out = {}) {
    const LrSize lr = lr_size(out, cfg.upscale);
    const std::int64_t c = cfg.channels;
    std::int64_t feature_maps = 0;  // in units of c-channel LR maps
    std::int64_t bias_elems = 0;
    for (const auto& l : describe_model(cfg, out)) bias_elems += l.ch_out;
    const auto scales = static_cast<std::int64_t>(cfg.scales().size());
    std::int64_t relus_per_block = 0;
    if (cfg.multiscale == Multiscale::combinations) {
        for (int s = 3; s <= cfg.largest_scale; s += 2) relus_per_block += (s - 1) / 2 - 1;
    }
    std::int64_t per_block = relus_per_block + (scales - 1) + 1;  // comb ReLUs, inter-scale adds, LRL add
    if (cfg.attention == Attention::cpa) per_block += 2 + 1 + 1;  // FE ReLUs, sigmoid, gate
    feature_maps += per_block * cfg.blocks + 1 + 1;               // pad ReLU, global residual
    return (feature_maps * c + bias_elems) * lr.pixels;
}

inline int receptive_field(int scale) {
    if (scale < 3 || scale % 2 == 0) {
        throw std::invalid_argument("receptive_field: scale must be odd and >= 3, got " + std::to_string(scale));
    }
    return 3 + 2 * ((scale - 3) / 2);
}

/// Largest-path receptive field of one block: comb S, then (with CPA) the ST
/// 3x3 and the depthwise 3x3. Stride-1 composition adds (k - 1) per layer.
inline int receptive_field_block(const PmrnConfig& cfg) {
    int rf = receptive_field(cfg.largest_scale);
    if (cfg.attention == Attention::cpa) rf += 2 + 2;
    return rf;
}

/// Receptive field in LR pixels of one output position before pixel shuffle.
inline int receptive_field_model(const PmrnConfig& cfg) {
    cfg.validate();
    int rf = 3;                                         // fem
    rf += cfg.blocks * (receptive_field_block(cfg) - 1);
    rf += 2 + 2;                                        // pad
    rf += 2 + 2;                                        // rm
    return rf;
}

struct AnalysisReport {
    PmrnConfig config;
    Resolution resolution;
    std::vector<LayerDescriptor> layers;
    std::int64_t params = 0;
    std::int64_t macs = 0;
    std::int64_t elementwise_ops = 0;
    std::vector<std::pair<int, int>> receptive_fields;  // (scale, RF)
    int model_receptive_field = 0;

    [[nodiscard]] std::int64_t ensemble_macs() const { return 8 * macs; }
};

inline AnalysisReport analyze(const PmrnConfig& cfg, Resolution out = {}) {
    AnalysisReport r;
    r.config = cfg;
    r.resolution = out;
    r.layers = describe_model(cfg, out);
    r.params = count_params(r.layers);
    r.macs = count_macs(r.layers);
    r.elementwise_ops = count_elementwise_ops(cfg, out);
    for (int s : cfg.scales()) r.receptive_fields.emplace_back(s, receptive_field(s));
    r.model_receptive_field = receptive_field_model(cfg);
    return r;
}

struct VariantComparison {
    AnalysisReport a;
    AnalysisReport b;
    std::int64_t params_delta = 0;  // b - a
    std::int64_t macs_delta = 0;
    double params_saving_percent = 0.0;  // (b - a) / b
    double macs_saving_percent = 0.0;
};

inline VariantComparison compare_variants(const PmrnConfig& a, const PmrnConfig& b, Resolution out = {}) {
    VariantComparison cmp{analyze(a, out), analyze(b, out)};
    cmp.params_delta = cmp.b.params - cmp.a.params;
    cmp.macs_delta = cmp.b.macs - cmp.a.macs;
    cmp.params_saving_percent =
        cmp.b.params == 0 ? 0.0 : 100.0 * static_cast<double>(cmp.params_delta) / static_cast<double>(cmp.b.params);
    cmp.macs_saving_percent =
        cmp.b.macs == 0 ? 0.0 : 100.0 * static_cast<double>(cmp.macs_delta) / static_cast<double>(cmp.b.macs);
    return cmp;
}

// ---------------------------------------------------------------------------
// Formatting
// ---------------------------------------------------------------------------

inline std::string group_thousands(std::int64_t v) {
    std::string digits = std::to_string(v < 0 ? -v : v);
    std::string out;
    for (std::size_t i = 0; i < digits.size(); ++i) {
        if (i > 0 && (digits.size() - i) % 3 == 0) out.push_back(',');
        out.push_back(digits[i]);
    }
    return v < 0 ? "-" + out : out;
}

/// 3,598,320 -> "3,598K" (floor)
inline std::string format_params_k(std::int64_t params) { return group_thousands(params / 1000) + "K"; }

/// 206,773,862,400 -> "206.8G" (one decimal, rounded)
inline std::string format_macs_g(std::int64_t macs) {
    const std::int64_t tenths = (macs + 50'000'000) / 100'000'000;
    return group_thousands(tenths / 10) + "." + std::to_string(tenths % 10) + "G";
}

inline std::string render_table(const AnalysisReport& r, bool include_elementwise = false) {
    std::ostringstream os;
    const auto lr = lr_size(r.resolution, r.config.upscale);
    os << "PMRN S=" << r.config.largest_scale << " K=" << r.config.blocks << " c=" << r.config.channels
       << " x" << r.config.upscale << " attention=" << to_string(r.config.attention)
       << " multiscale=" << to_string(r.config.multiscale) << "\n";
    os << "output " << r.resolution.width << "x" << r.resolution.height << ", LR pixels "
       << group_thousands(lr.pixels) << "\n\n";
    os << std::left << std::setw(34) << "layer" << std::right << std::setw(6) << "ch_i" << std::setw(6) << "ch_o"
       << std::setw(4) << "k" << std::setw(5) << "gs" << std::setw(12) << "params" << std::setw(20) << "MACs"
       << "\n";
    for (const auto& l : r.layers) {
        os << std::left << std::setw(34) << l.name << std::right << std::setw(6) << l.ch_in << std::setw(6)
           << l.ch_out << std::setw(4) << l.fw << std::setw(5) << l.groups << std::setw(12)
           << group_thousands(l.params()) << std::setw(20) << group_thousands(l.macs()) << "\n";
    }
    os << "\nconv layers:    " << r.layers.size() << "\n";
    os << "params:         " << group_thousands(r.params) << " (" << format_params_k(r.params) << ")\n";
    os << "MACs:           " << group_thousands(r.macs) << " (" << format_macs_g(r.macs) << ")\n";
    os << "MACs (x8 ens.): " << group_thousands(r.ensemble_macs()) << " (" << format_macs_g(r.ensemble_macs())
       << ")\n";
    if (include_elementwise) {
        const auto total = r.macs + r.elementwise_ops;
        os << "elementwise:    " << group_thousands(r.elementwise_ops) << "\n";
        os << "MACs + elem.:   " << group_thousands(total) << " (" << format_macs_g(total) << ")\n";
    }
    os << "receptive field per scale:";
    for (const auto& [s, rf] : r.receptive_fields) os << " " << s << "->" << rf;
    os << "\nmodel receptive field (LR px): " << r.model_receptive_field << "\n";
    return os.str();
}

/// One record per layer: name, ch_i, ch_o, fw, fh, gs, params, macs.
inline nlohmann::json to_json(const AnalysisReport& r, bool include_elementwise = false) {
    nlohmann::json layers = nlohmann::json::array();
    for (const auto& l : r.layers) {
        layers.push_back({{"name", l.name}, {"ch_i", l.ch_in}, {"ch_o", l.ch_out}, {"fw", l.fw}, {"fh", l.fh},
                          {"gs", l.groups}, {"params", l.params()}, {"macs", l.macs()}});
    }
    nlohmann::json rf = nlohmann::json::object();
    for (const auto& [s, v] : r.receptive_fields) rf[std::to_string(s)] = v;
    nlohmann::json j{{"config", r.config},
                     {"resolution", {{"width", r.resolution.width}, {"height", r.resolution.height}}},
                     {"lr_pixels", lr_size(r.resolution, r.config.upscale).pixels},
                     {"params", r.params},
                     {"macs", r.macs},
                     {"ensemble_macs", r.ensemble_macs()},
                     {"receptive_fields", rf},
                     {"model_receptive_field", r.model_receptive_field},
                     {"layers", layers}};
    if (include_elementwise) {
        j["elementwise_ops"] = r.elementwise_ops;
        j["macs_with_elementwise"] = r.macs + r.elementwise_ops;
    }
    return j;
}

inline std::string render_comparison(const VariantComparison& cmp) {
    std::ostringstream os;
    auto row = [&](const char* label, const AnalysisReport& r) {
        os << std::left << std::setw(16) << label << std::right << std::setw(14) << group_thousands(r.params)
           << std::setw(10) << format_params_k(r.params) << std::setw(20) << group_thousands(r.macs) << std::setw(10)
           << format_macs_g(r.macs) << "\n";
    };
    os << std::left << std::setw(16) << "variant" << std::right << std::setw(24) << "params" << std::setw(30)
       << "MACs" << "\n";
    row(to_string(cmp.a.config.multiscale).c_str(), cmp.a);
    row(to_string(cmp.b.config.multiscale).c_str(), cmp.b);
    os << std::fixed << std::setprecision(1);
    os << "saving: " << cmp.params_saving_percent << "% params, " << cmp.macs_saving_percent << "% MACs\n";
    return os.str();
}

}  // namespace pmrn::analysis
