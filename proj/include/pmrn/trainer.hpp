#pragma once

// L1 / Adam training loop with step-halving learning rate and checkpoints.

#include "pmrn/data.hpp"
#include "pmrn/metrics.hpp"
#include "pmrn/model.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace pmrn {

struct AdamHyper {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

struct TrainConfig {
    double lr0 = 1e-4;
    int halve_every = 200;  // in units
    int units = 1000;
    int steps_per_unit = 1;
    int batch_size = 16;
    int patch = 48;  // LR patch side
    std::uint64_t seed = 0;
    bool augment = true;
    int eval_every = 1;        // units between held-out evaluations; 0 disables
    int checkpoint_every = 0;  // units between checkpoints; 0 disables
    AdamHyper adam;
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
    j = nlohmann::json{{"lr0", c.lr0},
                       {"halve_every", c.halve_every},
                       {"units", c.units},
                       {"steps_per_unit", c.steps_per_unit},
                       {"batch_size", c.batch_size},
                       {"patch", c.patch},
                       {"seed", c.seed},
                       {"augment", c.augment},
                       {"eval_every", c.eval_every},
                       {"checkpoint_every", c.checkpoint_every},
                       {"adam_beta1", c.adam.beta1},
                       {"adam_beta2", c.adam.beta2},
                       {"adam_epsilon", c.adam.epsilon}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
    c.lr0 = j.value("lr0", c.lr0);
    c.halve_every = j.value("halve_every", c.halve_every);
    c.units = j.value("units", c.units);
    c.steps_per_unit = j.value("steps_per_unit", c.steps_per_unit);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.patch = j.value("patch", c.patch);
    c.seed = j.value("seed", c.seed);
    c.augment = j.value("augment", c.augment);
    c.eval_every = j.value("eval_every", c.eval_every);
    c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
    c.adam.beta1 = j.value("adam_beta1", c.adam.beta1);
    c.adam.beta2 = j.value("adam_beta2", c.adam.beta2);
    c.adam.epsilon = j.value("adam_epsilon", c.adam.epsilon);
}

/// Small model used for CPU-only sanity training runs.
inline PmrnConfig desk_model_config() {
    PmrnConfig c;
    c.channels = 16;
    c.blocks = 2;
    c.largest_scale = 9;
    c.upscale = 2;
    return c;
}

/// 200 single-step units on 24x24 LR patches.
inline TrainConfig desk_train_config() {
    TrainConfig t;
    t.lr0 = 3e-3;
    t.units = 200;
    t.halve_every = 1000;
    t.steps_per_unit = 1;
    t.batch_size = 16;
    t.patch = 24;
    t.eval_every = 50;
    return t;
}

/// lr0 * 2^-floor(unit / halve_every)
inline double learning_rate(const TrainConfig& cfg, int unit) {
    if (cfg.halve_every <= 0) return cfg.lr0;
    return std::ldexp(cfg.lr0, -(unit / cfg.halve_every));
}

template <class T>
T l1_loss(const Tensor<T>& pred, const Tensor<T>& target) {
    detail::require_same_shape("l1_loss", pred, target);
    T acc = T(0);
    for (std::size_t i = 0; i < pred.size(); ++i) acc += std::abs(pred[i] - target[i]);
    return acc / static_cast<T>(pred.size());
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

template <class T>
struct AdamState {
    ParamStore<T> m;
    ParamStore<T> v;
    std::int64_t t = 0;

    static AdamState zeros_like(const ParamStore<T>& params) {
        AdamState s;
        for (const auto& [name, p] : params.entries()) {
            s.m.add(name, Tensor<T>(p.shape()));
            s.v.add(name, Tensor<T>(p.shape()));
        }
        return s;
    }
};

/// One bias-corrected Adam update. `grads` must list the same names as `params`.
template <class T>
void adam_step(ParamStore<T>& params, const ParamStore<T>& grads, AdamState<T>& state, double lr,
               const AdamHyper& h = {}) {
    state.t += 1;
    const double c1 = 1.0 - std::pow(h.beta1, static_cast<double>(state.t));
    const double c2 = 1.0 - std::pow(h.beta2, static_cast<double>(state.t));
    for (auto& [name, p] : params.entries()) {
        const auto g = grads.at(name).data();
        auto m = state.m.at(name).data();
        auto v = state.v.at(name).data();
        auto w = p.data();
        if (g.size() != w.size()) throw std::invalid_argument("adam_step: gradient shape mismatch for " + name);
        for (std::size_t i = 0; i < w.size(); ++i) {
            m[i] = static_cast<T>(h.beta1 * m[i] + (1.0 - h.beta1) * g[i]);
            v[i] = static_cast<T>(h.beta2 * v[i] + (1.0 - h.beta2) * g[i] * g[i]);
            const double mhat = m[i] / c1;
            const double vhat = v[i] / c2;
            w[i] = static_cast<T>(w[i] - lr * mhat / (std::sqrt(vhat) + h.epsilon));
        }
    }
}

// ---------------------------------------------------------------------------
// Data
// ---------------------------------------------------------------------------

struct TrainingPair {
    Image hr;
    Image lr;
};

inline std::vector<TrainingPair> make_pairs(const std::vector<Image>& hr_images, const DegradationSpec& spec) {
    std::vector<TrainingPair> out;
    out.reserve(hr_images.size());
    for (const auto& img : hr_images) {
        Image hr = crop_to_multiple(img, spec.scale);
        Image lr = degrade(hr, spec);
        out.push_back({std::move(hr), std::move(lr)});
    }
    return out;
}

template <class T>
struct Batch {
    Tensor<T> lr;
    Tensor<T> hr;
};

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t step) {
    // splitmix64 finalizer
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (step + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

/// Batch for global step `step`; depends only on (data, cfg.seed, step).
template <class T>
Batch<T> sample_batch(const std::vector<TrainingPair>& data, int scale, const TrainConfig& cfg, std::int64_t step) {
    if (data.empty()) throw std::invalid_argument("sample_batch: empty dataset");
    Rng rng(mix_seed(cfg.seed, static_cast<std::uint64_t>(step)));
    const int p = cfg.patch;
    const int hp = p * scale;
    Batch<T> b{Tensor<T>(Shape{cfg.batch_size, 3, p, p}), Tensor<T>(Shape{cfg.batch_size, 3, hp, hp})};
    for (int i = 0; i < cfg.batch_size; ++i) {
        const int idx = rng.below(static_cast<int>(data.size()));
        auto patch = sample_patches(data[static_cast<std::size_t>(idx)].hr, data[static_cast<std::size_t>(idx)].lr,
                                    scale, p, 1, rng, idx)
                         .front();
        if (cfg.augment) patch = augment(patch, rng.next());
        std::copy(patch.lr.data.begin(), patch.lr.data.end(), b.lr.data().begin() + b.lr.offset(i, 0, 0, 0));
        std::copy(patch.hr.data.begin(), patch.hr.data.end(), b.hr.data().begin() + b.hr.offset(i, 0, 0, 0));
    }
    return b;
}

template <class T>
struct LossAndGrads {
    T loss{};
    ParamStore<T> grads;
};

template <class T>
LossAndGrads<T> loss_and_grads(const PmrnModel& model, const ParamStore<T>& params, const Batch<T>& batch) {
    Tape<T> tape;
    TapeContext<T> ctx(tape, params);
    const Var lr = tape.constant(batch.lr);
    const Var hr = tape.constant(batch.hr);
    const Var pred = model.forward(ctx, lr);
    const Var loss = tape.mean_abs_error(pred, hr);
    tape.backward(loss);
    LossAndGrads<T> out{tape.value(loss)[0], {}};
    for (const auto& [name, p] : params.entries()) {
        auto it = ctx.bound().find(name);
        out.grads.add(name, it == ctx.bound().end() ? Tensor<T>(p.shape()) : tape.grad(it->second));
    }
    return out;
}

template <class T>
T batch_loss(const PmrnModel& model, const ParamStore<T>& params, const Batch<T>& batch) {
    return l1_loss(model.infer(params, batch.lr), batch.hr);
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

inline Image super_resolve(const PmrnModel& model, const ParamStore<float>& params, const Image& lr,
                           bool ensemble = false) {
    const auto x = to_tensor<float>(lr);
    return from_tensor(ensemble ? self_ensemble_forward(model, params, x) : model.infer(params, x));
}

inline Image bicubic_upscale(const Image& lr, int scale) {
    return bicubic_resize(lr, lr.width * scale, lr.height * scale);
}

/// Mean Y-channel PSNR (shave = scale) of the model over held-out pairs.
inline double mean_psnr(const PmrnModel& model, const ParamStore<float>& params,
                        const std::vector<TrainingPair>& pairs) {
    const int r = model.config().upscale;
    double acc = 0.0;
    for (const auto& p : pairs) acc += psnr_y(p.hr, super_resolve(model, params, p.lr), r);
    return acc / static_cast<double>(pairs.size());
}

inline double mean_bicubic_psnr(const std::vector<TrainingPair>& pairs, int scale) {
    double acc = 0.0;
    for (const auto& p : pairs) acc += psnr_y(p.hr, bicubic_upscale(p.lr, scale), scale);
    return acc / static_cast<double>(pairs.size());
}

// ---------------------------------------------------------------------------
// Training state and checkpoints
// ---------------------------------------------------------------------------

struct MetricRecord {
    int unit = 0;
    double lr = 0.0;
    double train_loss = 0.0;
    double val_psnr = std::numeric_limits<double>::quiet_NaN();
};

struct TrainState {
    PmrnConfig model;
    TrainConfig train;
    ParamStore<float> params;
    AdamState<float> adam;
    int unit = 0;            // completed units
    std::int64_t step = 0;   // completed optimizer steps
    std::vector<MetricRecord> history;
};

inline TrainState make_train_state(const PmrnConfig& model_cfg, const TrainConfig& train_cfg, const InitSpec& init) {
    TrainState s{model_cfg, train_cfg, PmrnModel(model_cfg).init_params<float>(init), {}, 0, 0, {}};
    s.adam = AdamState<float>::zeros_like(s.params);
    return s;
}

class TrainingError : public std::runtime_error {
public:
    TrainingError(const std::string& what, std::int64_t step) : std::runtime_error(what), step_(step) {}
    [[nodiscard]] std::int64_t step() const { return step_; }

private:
    std::int64_t step_;
};

/// One optimizer step at the current schedule position. Returns the batch loss.
inline float train_step(const PmrnModel& model, TrainState& state, const std::vector<TrainingPair>& data) {
    const auto batch = sample_batch<float>(data, model.config().upscale, state.train, state.step);
    auto lg = loss_and_grads(model, state.params, batch);
    if (!std::isfinite(lg.loss)) {
        throw TrainingError("non-finite loss at step " + std::to_string(state.step), state.step);
    }
    adam_step(state.params, lg.grads, state.adam, learning_rate(state.train, state.unit), state.train.adam);
    state.step += 1;
    return lg.loss;
}

inline nlohmann::json history_to_json(const std::vector<MetricRecord>& h) {
    auto arr = nlohmann::json::array();
    for (const auto& r : h) {
        arr.push_back({{"unit", r.unit},
                       {"lr", r.lr},
                       {"train_loss", r.train_loss},
                       {"val_psnr", std::isnan(r.val_psnr) ? nlohmann::json(nullptr) : nlohmann::json(r.val_psnr)}});
    }
    return arr;
}

inline void save_checkpoint(const std::string& path, const TrainState& s) {
    ParamStore<float> tensors;
    for (const auto& [name, t] : s.params.entries()) tensors.add(name, t);
    for (const auto& [name, t] : s.adam.m.entries()) tensors.add("adam.m." + name, t);
    for (const auto& [name, t] : s.adam.v.entries()) tensors.add("adam.v." + name, t);
    nlohmann::json header{{"kind", "checkpoint"}, {"config", s.model},      {"train", s.train},
                          {"unit", s.unit},       {"step", s.step},         {"adam_t", s.adam.t},
                          {"history", history_to_json(s.history)}};
    write_tensor_file(path, std::move(header), tensors);
}

inline TrainState load_checkpoint(const std::string& path) {
    auto file = read_tensor_file(path);
    if (file.header.value("kind", "") != "checkpoint") throw FormatError(path + ": not a checkpoint file");
    TrainState s;
    s.model = file.header.at("config").get<PmrnConfig>();
    s.train = file.header.at("train").get<TrainConfig>();
    s.unit = file.header.at("unit").get<int>();
    s.step = file.header.at("step").get<std::int64_t>();
    s.adam.t = file.header.at("adam_t").get<std::int64_t>();
    for (const auto& r : file.header.at("history")) {
        MetricRecord m{r.at("unit").get<int>(), r.at("lr").get<double>(), r.at("train_loss").get<double>()};
        if (!r.at("val_psnr").is_null()) m.val_psnr = r.at("val_psnr").get<double>();
        s.history.push_back(m);
    }
    const auto layout = PmrnModel(s.model).make_params<float>();
    for (const auto& [name, t] : layout.entries()) {
        for (const std::string prefix : {"", "adam.m.", "adam.v."}) {
            if (!file.tensors.contains(prefix + name)) throw FormatError(path + ": missing tensor " + prefix + name);
            const auto& loaded = file.tensors.at(prefix + name);
            if (loaded.shape() != t.shape()) throw FormatError(path + ": shape mismatch for " + prefix + name);
        }
        s.params.add(name, file.tensors.at(name));
        s.adam.m.add(name, file.tensors.at("adam.m." + name));
        s.adam.v.add(name, file.tensors.at("adam.v." + name));
    }
    return s;
}

inline void write_history_csv(const std::string& path, const std::vector<MetricRecord>& h) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    out << "unit,lr,train_loss,val_psnr\n";
    out.precision(9);
    for (const auto& r : h) {
        out << r.unit << ',' << r.lr << ',' << r.train_loss << ',';
        if (!std::isnan(r.val_psnr)) out << r.val_psnr;
        out << '\n';
    }
}

struct TrainHooks {
    std::function<void(const MetricRecord&)> on_unit;
    std::string checkpoint_path;
};

/// Runs units state.unit .. cfg.units - 1. Each unit takes steps_per_unit
/// optimizer steps at that unit's learning rate, then optionally evaluates
/// and checkpoints.
inline void train(const PmrnModel& model, TrainState& state, const std::vector<TrainingPair>& data,
                  const std::vector<TrainingPair>& validation, const TrainHooks& hooks = {}) {
    if (data.empty()) throw std::invalid_argument("train: dataset is empty");
    const auto& cfg = state.train;
    while (state.unit < cfg.units) {
        MetricRecord rec;
        rec.unit = state.unit;
        rec.lr = learning_rate(cfg, state.unit);
        double loss_sum = 0.0;
        for (int s = 0; s < cfg.steps_per_unit; ++s) loss_sum += train_step(model, state, data);
        rec.train_loss = loss_sum / cfg.steps_per_unit;
        state.unit += 1;
        const bool last = state.unit == cfg.units;
        if (!validation.empty() && cfg.eval_every > 0 && (state.unit % cfg.eval_every == 0 || last)) {
            rec.val_psnr = mean_psnr(model, state.params, validation);
        }
        state.history.push_back(rec);
        if (hooks.on_unit) hooks.on_unit(rec);
        if (!hooks.checkpoint_path.empty() && cfg.checkpoint_every > 0 &&
            (state.unit % cfg.checkpoint_every == 0 || last)) {
            save_checkpoint(hooks.checkpoint_path, state);
        }
    }
}

}  // namespace pmrn
