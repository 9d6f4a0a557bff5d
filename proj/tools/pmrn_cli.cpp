// pmrn: analyze | train | sr | eval | gradcheck | dump-features
//
// Exit codes: 0 ok, 1 usage, 2 validation or failed expectation, 3 runtime.

#include "pmrn/pmrn.hpp"

#include "CLI11.hpp"

#include <nlohmann/json.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace pmrn;

namespace {

enum ExitCode { kOk = 0, kUsage = 1, kValidation = 2, kRuntime = 3 };

/// Bad user input that parsed fine: wrong values, mismatched files, failed --expect.
class ValidationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

json read_config_file(const std::string& path) {
    if (path.empty()) return json::object();
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config file " + path);
    try {
        return json::parse(in, nullptr, true, true);
    } catch (const json::parse_error& e) {
        throw ValidationError("config file " + path + ": " + e.what());
    }
}

/// Writes `<output>.config.json`, or `<dir>/config.json` for a directory.
void write_sidecar(const fs::path& output, const json& resolved) {
    const fs::path path = fs::is_directory(output) ? output / "config.json" : fs::path(output.string() + ".config.json");
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << resolved.dump(2) << "\n";
}

void log_config(const std::string& command, const json& resolved) {
    std::cerr << "pmrn " << command << ": " << resolved.dump() << "\n";
}

void ensure_parent(const fs::path& p) {
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
}

// ---------------------------------------------------------------------------
// Shared flags
// ---------------------------------------------------------------------------

struct ModelFlags {
    std::optional<int> scale, blocks, channels, largest_scale;
    std::optional<std::string> attention, variant;

    void add(CLI::App* app) {
        app->add_option("--scale,-r", scale, "upscale factor (2, 3 or 4)");
        app->add_option("--blocks,-K", blocks, "number of PMRBs");
        app->add_option("--channels,-c", channels, "feature channels");
        app->add_option("--largest-scale,-S", largest_scale, "largest combination scale (odd)");
        app->add_option("--attention", attention, "cpa | none");
        app->add_option("--variant", variant, "combinations | large-kernels");
    }

    [[nodiscard]] bool any() const {
        return scale || blocks || channels || largest_scale || attention || variant;
    }

    /// defaults < config file "model" section < flags
    [[nodiscard]] PmrnConfig resolve(PmrnConfig base, const json& file) const {
        if (file.contains("model")) from_json(file.at("model"), base);
        apply(base);
        base.validate();
        return base;
    }

    void apply(PmrnConfig& c) const {
        if (scale) c.upscale = *scale;
        if (blocks) c.blocks = *blocks;
        if (channels) c.channels = *channels;
        if (largest_scale) c.largest_scale = *largest_scale;
        if (attention) c.attention = parse_attention(*attention);
        if (variant) c.multiscale = parse_multiscale(*variant);
    }

    /// Rejects any flag that contradicts the architecture stored in a weight file.
    void check_against(const PmrnConfig& stored, const std::string& path) const {
        PmrnConfig wanted = stored;
        apply(wanted);
        const auto diff = config_difference(wanted, stored);
        if (!diff.empty()) throw ValidationError(path + ": config mismatch, " + diff);
    }
};

analysis::Resolution parse_resolution(const std::string& s) {
    int w = 0, h = 0;
    char x = 0, extra = 0;
    std::istringstream in(s);
    if (!(in >> w >> x >> h) || (x != 'x' && x != 'X') || (in >> extra) || w < 1 || h < 1) {
        throw ValidationError("resolution must look like 1280x720, got '" + s + "'");
    }
    return {w, h};
}

std::vector<fs::path> expand_inputs(const std::vector<std::string>& inputs) {
    std::vector<fs::path> out;
    for (const auto& in : inputs) {
        if (fs::is_directory(in)) {
            const auto listed = list_images(in);
            out.insert(out.end(), listed.begin(), listed.end());
        } else if (fs::exists(in)) {
            out.emplace_back(in);
        } else {
            throw std::runtime_error("no such file or directory: " + in);
        }
    }
    if (out.empty()) throw ValidationError("no input images found");
    return out;
}

std::string format_metric(double v) {
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    std::ostringstream os;
    os.setf(std::ios::fixed);
    os.precision(4);
    os << v;
    return os.str();
}

// ---------------------------------------------------------------------------
// analyze
// ---------------------------------------------------------------------------

struct AnalyzeArgs {
    std::string config_path;
    ModelFlags model;
    std::string resolution = "1280x720";
    bool include_elementwise = false;
    bool compare = false;
    std::string json_path;
    std::string out_path;
    std::vector<std::string> expect;
};

int run_analyze(const AnalyzeArgs& a) {
    const json file = read_config_file(a.config_path);
    const PmrnConfig cfg = a.model.resolve(PmrnConfig{}, file);
    const auto res = parse_resolution(file.contains("resolution") && a.resolution == "1280x720"
                                          ? file.at("resolution").get<std::string>()
                                          : a.resolution);
    const json resolved{{"command", "analyze"},
                        {"model", cfg},
                        {"resolution", std::to_string(res.width) + "x" + std::to_string(res.height)},
                        {"macs_include_elementwise", a.include_elementwise},
                        {"compare", a.compare}};
    log_config("analyze", resolved);

    const auto report = analysis::analyze(cfg, res);
    std::string text = analysis::render_table(report, a.include_elementwise);
    if (a.compare) {
        PmrnConfig other = cfg;
        other.multiscale = cfg.multiscale == Multiscale::combinations ? Multiscale::large_kernels
                                                                      : Multiscale::combinations;
        const auto cmp = cfg.multiscale == Multiscale::combinations ? analysis::compare_variants(cfg, other, res)
                                                                    : analysis::compare_variants(other, cfg, res);
        text += "\n" + analysis::render_comparison(cmp);
    }
    if (a.out_path.empty()) {
        std::cout << text;
    } else {
        ensure_parent(a.out_path);
        std::ofstream(a.out_path, std::ios::trunc) << text;
        write_sidecar(a.out_path, resolved);
    }
    if (!a.json_path.empty()) {
        ensure_parent(a.json_path);
        std::ofstream(a.json_path, std::ios::trunc) << analysis::to_json(report, a.include_elementwise).dump(2) << "\n";
        write_sidecar(a.json_path, resolved);
    }

    int status = kOk;
    for (const auto& e : a.expect) {
        const auto eq = e.find('=');
        if (eq == std::string::npos) throw ValidationError("--expect takes key=value, got '" + e + "'");
        const std::string key = e.substr(0, eq);
        std::int64_t want = 0;
        try {
            want = std::stoll(e.substr(eq + 1));
        } catch (const std::exception&) {
            throw ValidationError("--expect " + key + ": not an integer");
        }
        std::int64_t got = 0;
        if (key == "params") {
            got = report.params;
        } else if (key == "macs") {
            got = report.macs + (a.include_elementwise ? report.elementwise_ops : 0);
        } else if (key == "layers") {
            got = static_cast<std::int64_t>(report.layers.size());
        } else {
            throw ValidationError("--expect: unknown key '" + key + "' (params, macs, layers)");
        }
        if (got != want) {
            std::cerr << "expectation failed: " << key << " expected " << want << ", got " << got << "\n";
            status = kValidation;
        }
    }
    return status;
}

// ---------------------------------------------------------------------------
// sr
// ---------------------------------------------------------------------------

struct SrArgs {
    std::string weights;
    std::vector<std::string> inputs;
    std::string output;
    bool ensemble = false;
    ModelFlags model;
};

int run_sr(const SrArgs& a) {
    const auto loaded = load_weights(a.weights);
    a.model.check_against(loaded.config, a.weights);
    const PmrnModel model(loaded.config);
    const auto inputs = expand_inputs(a.inputs);

    const bool single_file = inputs.size() == 1 && !fs::is_directory(a.inputs.front()) &&
                             !fs::is_directory(a.output) && is_image_path(a.output);
    if (!single_file) fs::create_directories(a.output);
    const json resolved{{"command", "sr"},       {"weights", a.weights}, {"model", loaded.config},
                        {"ensemble", a.ensemble}, {"output", a.output},   {"inputs", a.inputs}};
    log_config("sr", resolved);

    for (const auto& in : inputs) {
        const Image lr = to_rgb(load_image(in.string()));
        const Image sr = super_resolve(model, loaded.params, lr, a.ensemble);
        const fs::path out = single_file ? fs::path(a.output) : fs::path(a.output) / (in.stem().string() + ".png");
        ensure_parent(out);
        save_image(out.string(), sr);
        std::cout << in.string() << " -> " << out.string() << " (" << sr.width << "x" << sr.height << ")\n";
        if (single_file) write_sidecar(out, resolved);
    }
    if (!single_file) write_sidecar(a.output, resolved);
    return kOk;
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

struct EvalArgs {
    std::string hr_dir;
    std::string method = "model";
    std::string weights;
    std::string degradation = "BI";
    std::optional<int> scale;
    bool ensemble = false;
    std::string csv;
    ModelFlags model;
};

int run_eval(const EvalArgs& a) {
    if (a.method != "model" && a.method != "bicubic" && a.method != "identity") {
        throw ValidationError("--method must be model, bicubic or identity");
    }
    std::optional<LoadedWeights> loaded;
    int r = a.scale.value_or(4);
    if (a.method == "model") {
        if (a.weights.empty()) throw ValidationError("--method model needs --weights");
        loaded = load_weights(a.weights);
        ModelFlags check = a.model;
        check.scale = a.scale;
        check.check_against(loaded->config, a.weights);
        r = loaded->config.upscale;
    }
    DegradationSpec spec;
    spec.kind = parse_degradation(a.degradation);
    spec.scale = r;
    if (spec.kind == DegradationKind::blur_down && r != 3) throw ValidationError("BD degradation is defined for x3 only");

    json resolved{{"command", "eval"},   {"hr", a.hr_dir},       {"method", a.method},
                  {"scale", r},          {"degradation", a.degradation}, {"ensemble", a.ensemble},
                  {"shave", r},          {"channel", "Y"}};
    if (loaded) resolved["model"] = loaded->config, resolved["weights"] = a.weights;
    log_config("eval", resolved);

    std::optional<PmrnModel> model;
    if (loaded) model.emplace(loaded->config);
    std::ostringstream csv;
    csv << "image,psnr,ssim\n";
    double psum = 0, ssum = 0;
    int n = 0;
    for (const auto& path : expand_inputs({a.hr_dir})) {
        const Image hr = crop_to_multiple(to_rgb(load_image(path.string())), r);
        Image sr;
        if (a.method == "identity") {
            sr = hr;
        } else {
            const Image lr = degrade(hr, spec);
            sr = a.method == "bicubic" ? bicubic_upscale(lr, r) : super_resolve(*model, loaded->params, lr, a.ensemble);
        }
        const double p = psnr_y(hr, sr, r);
        const double s = ssim_y(hr, sr, r);
        csv << path.filename().string() << "," << format_metric(p) << "," << format_metric(s) << "\n";
        psum += p;
        ssum += s;
        ++n;
    }
    csv << "mean," << format_metric(psum / n) << "," << format_metric(ssum / n) << "\n";
    if (a.csv.empty()) {
        std::cout << csv.str();
    } else {
        ensure_parent(a.csv);
        std::ofstream(a.csv, std::ios::trunc) << csv.str();
        write_sidecar(a.csv, resolved);
    }
    return kOk;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainArgs {
    std::string config_path;
    std::string preset = "paper";
    ModelFlags model;
    std::optional<double> lr0;
    std::optional<int> units, halve_every, steps_per_unit, batch, patch, eval_every, checkpoint_every;
    bool no_augment = false;
    std::optional<std::uint64_t> seed;
    std::optional<double> init_gain;
    std::string data_dir, val_dir;
    int synthetic = 0, synthetic_val = 0, synthetic_size = 96;
    std::string degradation = "BI";
    std::string out_dir;
    std::string resume;
};

std::vector<Image> training_images(const std::string& dir, int synthetic, int size, std::uint64_t seed) {
    std::vector<Image> out;
    if (!dir.empty()) {
        for (const auto& p : expand_inputs({dir})) out.push_back(to_rgb(load_image(p.string())));
    }
    for (int i = 0; i < synthetic; ++i) out.push_back(synthetic_image(size, size, seed + static_cast<std::uint64_t>(i)));
    return out;
}

int run_train(const TrainArgs& a) {
    const json file = read_config_file(a.config_path);
    if (a.preset != "paper" && a.preset != "desk") throw ValidationError("--preset must be paper or desk");
    const bool desk = a.preset == "desk";

    TrainState state;
    if (!a.resume.empty()) {
        state = load_checkpoint(a.resume);
        a.model.check_against(state.model, a.resume);
    } else {
        state.model = a.model.resolve(desk ? desk_model_config() : PmrnConfig{}, file);
        state.train = desk ? desk_train_config() : TrainConfig{};
        if (file.contains("train")) from_json(file.at("train"), state.train);
    }
    TrainConfig& t = state.train;
    if (file.contains("seed") && a.resume.empty()) t.seed = file.at("seed").get<std::uint64_t>();
    if (a.seed) t.seed = *a.seed;
    if (a.lr0) t.lr0 = *a.lr0;
    if (a.units) t.units = *a.units;
    if (a.halve_every) t.halve_every = *a.halve_every;
    if (a.steps_per_unit) t.steps_per_unit = *a.steps_per_unit;
    if (a.batch) t.batch_size = *a.batch;
    if (a.patch) t.patch = *a.patch;
    if (a.eval_every) t.eval_every = *a.eval_every;
    if (a.checkpoint_every) t.checkpoint_every = *a.checkpoint_every;
    if (a.no_augment) t.augment = false;
    if (t.units < 1 || t.steps_per_unit < 1 || t.batch_size < 1 || t.patch < 1 || !(t.lr0 > 0)) {
        throw ValidationError("train: units, steps-per-unit, batch, patch and lr must be positive");
    }
    if (a.resume.empty()) {
        InitSpec init{.seed = t.seed};
        if (a.init_gain) init.gain = *a.init_gain;
        state = make_train_state(state.model, t, init);
    }

    DegradationSpec spec;
    spec.kind = parse_degradation(a.degradation);
    spec.scale = state.model.upscale;
    const auto train_imgs = training_images(a.data_dir, a.synthetic, a.synthetic_size, 100 + t.seed);
    const auto val_imgs = training_images(a.val_dir, a.synthetic_val, a.synthetic_size, 900 + t.seed);
    if (train_imgs.empty()) throw ValidationError("train: no training images (use --data or --synthetic)");
    const auto data = make_pairs(train_imgs, spec);
    const auto validation = make_pairs(val_imgs, spec);

    fs::create_directories(a.out_dir);
    const fs::path out(a.out_dir);
    const json resolved{{"command", "train"},
                        {"model", state.model},
                        {"train", state.train},
                        {"degradation", a.degradation},
                        {"data", a.data_dir},
                        {"synthetic", a.synthetic},
                        {"val", a.val_dir},
                        {"synthetic_val", a.synthetic_val},
                        {"synthetic_size", a.synthetic_size},
                        {"init_gain", a.init_gain ? json(*a.init_gain) : json(InitSpec{}.gain)},
                        {"resume", a.resume},
                        {"start_unit", state.unit}};
    log_config("train", resolved);
    write_sidecar(out, resolved);

    const PmrnModel model(state.model);
    if (!validation.empty()) {
        std::cerr << "bicubic baseline PSNR(Y): " << format_metric(mean_bicubic_psnr(validation, spec.scale)) << "\n";
    }
    TrainHooks hooks;
    hooks.checkpoint_path = (out / "checkpoint.pmrn").string();
    const auto start = std::chrono::steady_clock::now();
    hooks.on_unit = [&](const MetricRecord& rec) {
        if (!std::isnan(rec.val_psnr) || rec.unit % 10 == 0 || rec.unit + 1 == t.units) {
            const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
            std::cerr << "unit " << rec.unit << " lr " << rec.lr << " loss " << rec.train_loss;
            if (!std::isnan(rec.val_psnr)) std::cerr << " val_psnr " << format_metric(rec.val_psnr);
            std::cerr << " (" << static_cast<int>(secs) << "s)\n";
        }
    };
    try {
        train(model, state, data, validation, hooks);
    } catch (const TrainingError& e) {
        save_checkpoint((out / "failed.pmrn").string(), state);
        write_history_csv((out / "history.csv").string(), state.history);
        std::cerr << "training aborted at step " << e.step() << ": " << e.what() << "\n";
        return kRuntime;
    }
    save_checkpoint(hooks.checkpoint_path, state);
    save_weights((out / "weights.pmrn").string(), state.model, state.params);
    write_history_csv((out / "history.csv").string(), state.history);
    std::cout << "wrote " << (out / "weights.pmrn").string() << ", " << hooks.checkpoint_path << ", "
              << (out / "history.csv").string() << "\n";
    return kOk;
}

// ---------------------------------------------------------------------------
// gradcheck
// ---------------------------------------------------------------------------

struct GradcheckArgs {
    ModelFlags model;
    int size = 8;
    std::uint64_t seed = 0;
    double tolerance = 1e-4;
    double epsilon = 1e-5;
    int coordinates = 32;
    bool skip_ops = false;
    std::string json_path;
};

int run_gradcheck(const GradcheckArgs& a) {
    PmrnConfig base;
    base.channels = 4;
    base.blocks = 1;
    base.largest_scale = 5;
    base.upscale = 2;
    const PmrnConfig cfg = a.model.resolve(base, json::object());
    GradCheckOptions opt;
    opt.tolerance = a.tolerance;
    opt.epsilon = a.epsilon;
    opt.max_coordinates = static_cast<std::size_t>(std::max(0, a.coordinates));
    opt.seed = a.seed;
    const json resolved{{"command", "gradcheck"}, {"model", cfg},        {"size", a.size},
                        {"seed", a.seed},         {"tolerance", a.tolerance}, {"epsilon", a.epsilon},
                        {"coordinates", a.coordinates}};
    log_config("gradcheck", resolved);

    std::vector<OpCheck> checks;
    if (!a.skip_ops) {
        checks = check_all_ops(a.seed, opt);
    }
    const PmrnModel model(cfg);
    Rng rng(a.seed);
    Tensor<double> lr(Shape{1, 3, a.size, a.size});
    for (auto& v : lr.data()) v = rng.uniform();
    checks.push_back({"pmrn_forward", gradcheck_model(model, random_params(model, a.seed), lr, opt)});

    bool all = true;
    json report = json::array();
    for (const auto& c : checks) {
        all = all && c.report.passed;
        std::printf("%-22s max_rel_err %.3e  %s\n", c.op.c_str(), c.report.max_relative_error,
                    c.report.passed ? "PASS" : "FAIL");
        json entries = json::array();
        for (const auto& e : c.report.entries) {
            entries.push_back({{"name", e.name}, {"coordinates", e.coordinates_checked},
                               {"max_relative_error", e.max_relative_error}});
        }
        report.push_back({{"op", c.op}, {"max_relative_error", c.report.max_relative_error},
                          {"passed", c.report.passed}, {"entries", entries}});
    }
    std::printf("%s (tolerance %.1e)\n", all ? "all gradients within tolerance" : "gradient check FAILED", a.tolerance);
    if (!a.json_path.empty()) {
        ensure_parent(a.json_path);
        std::ofstream(a.json_path, std::ios::trunc) << json{{"config", resolved}, {"checks", report}}.dump(2) << "\n";
        write_sidecar(a.json_path, resolved);
    }
    return all ? kOk : kValidation;
}

// ---------------------------------------------------------------------------
// dump-features
// ---------------------------------------------------------------------------

struct DumpArgs {
    std::string weights;
    std::string input;
    std::string out_dir;
    std::optional<int> block;
    std::optional<int> scale;
    std::optional<int> channel;
    ModelFlags model;
};

/// Channel `channel` (or the channel mean), min-max stretched to [0, 1].
Image feature_to_gray(const Tensor<float>& t, std::optional<int> channel) {
    const Shape s = t.shape();
    Image img(s.w, s.h, 1);
    for (int y = 0; y < s.h; ++y)
        for (int x = 0; x < s.w; ++x) {
            if (channel) {
                img.at(0, y, x) = t.at(0, *channel, y, x);
                continue;
            }
            double acc = 0;
            for (int c = 0; c < s.c; ++c) acc += t.at(0, c, y, x);
            img.at(0, y, x) = static_cast<float>(acc / s.c);
        }
    const auto [lo, hi] = std::minmax_element(img.data.begin(), img.data.end());
    const float min = *lo, range = *hi - *lo;
    for (auto& v : img.data) v = range > 0 ? (v - min) / range : 0.0f;
    return img;
}

int run_dump_features(const DumpArgs& a) {
    const auto loaded = load_weights(a.weights);
    a.model.check_against(loaded.config, a.weights);
    const auto& cfg = loaded.config;
    if (a.block && (*a.block < 0 || *a.block >= cfg.blocks)) {
        throw ValidationError("--block " + std::to_string(*a.block) + " out of range [0, " +
                              std::to_string(cfg.blocks - 1) + "]");
    }
    const auto scales = cfg.scales();
    if (a.scale && std::find(scales.begin(), scales.end(), *a.scale) == scales.end()) {
        throw ValidationError("--scale " + std::to_string(*a.scale) + " is not one of 3..S (S=" +
                              std::to_string(cfg.largest_scale) + ", odd)");
    }
    if (a.channel && (*a.channel < 0 || *a.channel >= cfg.channels)) {
        throw ValidationError("--channel out of range");
    }
    const json resolved{{"command", "dump-features"}, {"weights", a.weights}, {"model", cfg},
                        {"input", a.input},            {"block", a.block ? json(*a.block) : json("all")},
                        {"scale", a.scale ? json(*a.scale) : json("all")},
                        {"channel", a.channel ? json(*a.channel) : json("mean")}};
    log_config("dump-features", resolved);

    const PmrnModel model(cfg);
    const auto lr = to_tensor<float>(to_rgb(load_image(a.input)));
    fs::create_directories(a.out_dir);
    int written = 0;
    FeatureObserver<EagerContext<float>> observer = [&](const std::string& tag, const Tensor<float>& t) {
        // tag: block{k}.x{s} | block{k}.gamma | block{k}.beta
        const auto dot = tag.find('.');
        const int k = std::stoi(tag.substr(5, dot - 5));
        const std::string what = tag.substr(dot + 1);
        if (a.block && k != *a.block) return;
        if (a.scale && what[0] == 'x' && std::stoi(what.substr(1)) != *a.scale) return;
        const fs::path out = fs::path(a.out_dir) / ("block" + std::to_string(k) + "_" + what + ".png");
        save_image(out.string(), feature_to_gray(t, a.channel));
        ++written;
    };
    EagerContext<float> ctx(loaded.params);
    (void)model.forward(ctx, lr, &observer);
    write_sidecar(a.out_dir, resolved);
    std::cout << "wrote " << written << " maps to " << a.out_dir << "\n";
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"PMRN super-resolution: complexity analysis, training, inference and evaluation"};
    app.require_subcommand(1);

    AnalyzeArgs an;
    auto* analyze = app.add_subcommand("analyze", "parameter / MAC / receptive-field report");
    analyze->add_option("--config", an.config_path, "JSON config file");
    an.model.add(analyze);
    analyze->add_option("--resolution", an.resolution, "output resolution WxH")->capture_default_str();
    analyze->add_flag("--macs-include-elementwise", an.include_elementwise, "add bias/activation/residual ops");
    analyze->add_flag("--compare", an.compare, "also compare against the other multi-scale variant");
    analyze->add_option("--json", an.json_path, "write the per-layer report as JSON");
    analyze->add_option("--out", an.out_path, "write the text report here instead of stdout");
    analyze->add_option("--expect", an.expect, "params=N | macs=N | layers=N; exit 2 on mismatch");

    SrArgs sr;
    auto* srcmd = app.add_subcommand("sr", "super-resolve images");
    srcmd->add_option("--weights,-w", sr.weights, "weight or checkpoint file")->required();
    srcmd->add_option("--input,-i", sr.inputs, "image files or directories")->required();
    srcmd->add_option("--output,-o", sr.output, "output PNG (single input) or directory")->required();
    srcmd->add_flag("--ensemble", sr.ensemble, "average over the 8 dihedral transforms");
    sr.model.add(srcmd);

    EvalArgs ev;
    auto* eval = app.add_subcommand("eval", "PSNR/SSIM on the Y channel over a directory of HR images");
    eval->add_option("--hr", ev.hr_dir, "directory (or file) of HR images")->required();
    eval->add_option("--method", ev.method, "model | bicubic | identity")->capture_default_str();
    eval->add_option("--weights,-w", ev.weights, "weights for --method model");
    eval->add_option("--degradation", ev.degradation, "BI | BD")->capture_default_str();
    eval->add_option("--scale,-r", ev.scale, "upscale factor (taken from the weights for --method model)");
    eval->add_flag("--ensemble", ev.ensemble, "self-ensemble inference");
    eval->add_option("--csv", ev.csv, "write CSV here instead of stdout");
    eval->add_option("--blocks,-K", ev.model.blocks, "expected block count");
    eval->add_option("--channels,-c", ev.model.channels, "expected channel count");
    eval->add_option("--largest-scale,-S", ev.model.largest_scale, "expected largest scale");

    TrainArgs tr;
    auto* traincmd = app.add_subcommand("train", "L1 / Adam training");
    traincmd->add_option("--config", tr.config_path, "JSON config file with model/train sections");
    traincmd->add_option("--preset", tr.preset, "paper | desk")->capture_default_str();
    tr.model.add(traincmd);
    traincmd->add_option("--lr", tr.lr0, "initial learning rate");
    traincmd->add_option("--units", tr.units, "schedule units");
    traincmd->add_option("--halve-every", tr.halve_every, "halve the learning rate every N units");
    traincmd->add_option("--steps-per-unit", tr.steps_per_unit, "optimizer steps per unit");
    traincmd->add_option("--batch", tr.batch, "batch size");
    traincmd->add_option("--patch", tr.patch, "LR patch size");
    traincmd->add_option("--eval-every", tr.eval_every, "validate every N units (0 = never)");
    traincmd->add_option("--checkpoint-every", tr.checkpoint_every, "checkpoint every N units (0 = end only)");
    traincmd->add_flag("--no-augment", tr.no_augment, "disable flip/rotate augmentation");
    traincmd->add_option("--seed", tr.seed, "seed for init, sampling and synthetic data");
    traincmd->add_option("--init-gain", tr.init_gain, "Kaiming-uniform gain (bound = gain * sqrt(3 / fan_in))");
    traincmd->add_option("--data", tr.data_dir, "directory of HR training images");
    traincmd->add_option("--synthetic", tr.synthetic, "add N procedural training images");
    traincmd->add_option("--val", tr.val_dir, "directory of HR validation images");
    traincmd->add_option("--synthetic-val", tr.synthetic_val, "add N procedural validation images");
    traincmd->add_option("--synthetic-size", tr.synthetic_size, "side of procedural images")->capture_default_str();
    traincmd->add_option("--degradation", tr.degradation, "BI | BD")->capture_default_str();
    traincmd->add_option("--out,-o", tr.out_dir, "output directory")->required();
    traincmd->add_option("--resume", tr.resume, "continue from a checkpoint");

    GradcheckArgs gc;
    auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient verification (64-bit)");
    gc.model.add(gradcheck);
    gradcheck->add_option("--size", gc.size, "LR input side")->capture_default_str();
    gradcheck->add_option("--seed", gc.seed)->capture_default_str();
    gradcheck->add_option("--tolerance", gc.tolerance)->capture_default_str();
    gradcheck->add_option("--epsilon", gc.epsilon, "model step size")->capture_default_str();
    gradcheck->add_option("--coordinates", gc.coordinates, "coordinates per tensor (0 = all)")->capture_default_str();
    gradcheck->add_flag("--skip-ops", gc.skip_ops, "only check the full model");
    gradcheck->add_option("--json", gc.json_path, "write the report as JSON");

    DumpArgs du;
    auto* dump = app.add_subcommand("dump-features", "write per-block scale and attention maps as PNG");
    dump->add_option("--weights,-w", du.weights)->required();
    dump->add_option("--input,-i", du.input, "LR image")->required();
    dump->add_option("--out,-o", du.out_dir, "output directory")->required();
    dump->add_option("--block", du.block, "only this block (0-based)");
    dump->add_option("--scale", du.scale, "only this scale map (3..S)");
    dump->add_option("--channel", du.channel, "one channel instead of the channel mean");
    dump->add_option("--blocks,-K", du.model.blocks, "expected block count");
    dump->add_option("--channels,-c", du.model.channels, "expected channel count");
    dump->add_option("--largest-scale,-S", du.model.largest_scale, "expected largest scale");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kUsage;
    }

    try {
        if (*analyze) return run_analyze(an);
        if (*srcmd) return run_sr(sr);
        if (*eval) return run_eval(ev);
        if (*traincmd) return run_train(tr);
        if (*gradcheck) return run_gradcheck(gc);
        if (*dump) return run_dump_features(du);
    } catch (const ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kValidation;
    } catch (const FormatError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kValidation;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kValidation;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kRuntime;
    }
    return kUsage;
}
