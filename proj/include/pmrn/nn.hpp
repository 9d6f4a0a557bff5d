#pragma once

// Parameterized convolution layers and the named parameter store they read from.

#include "pmrn/autograd.hpp"
#include "pmrn/tensor.hpp"

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace pmrn {

/// Square, odd-kernel, stride-1, same-size convolution with a bias. The layer
/// only describes the operator; weights live in a ParamStore under
/// `<name>.weight` (co, ci/groups, k, k) and `<name>.bias` (1, co, 1, 1).
struct ConvLayer {
    std::string name;
    int in_channels = 0;
    int out_channels = 0;
    int kernel = 3;
    int groups = 1;

    ConvLayer() = default;
    ConvLayer(std::string name_, int in, int out, int k, int gs = 1)
        : name(std::move(name_)), in_channels(in), out_channels(out), kernel(k), groups(gs) {
        if (in < 1 || out < 1) throw std::invalid_argument("ConvLayer " + name + ": channels must be >= 1");
        if (k < 1 || k % 2 == 0) {
            throw std::invalid_argument("ConvLayer " + name + ": kernel must be odd, got " + std::to_string(k));
        }
        if (gs < 1 || in % gs != 0 || out % gs != 0) {
            throw std::invalid_argument("ConvLayer " + name + ": groups " + std::to_string(gs) +
                                        " must divide both channel counts");
        }
    }

    [[nodiscard]] int padding() const { return (kernel - 1) / 2; }
    [[nodiscard]] Conv2dOptions options() const { return {1, padding(), groups}; }
    [[nodiscard]] std::string weight_name() const { return name + ".weight"; }
    [[nodiscard]] std::string bias_name() const { return name + ".bias"; }
    [[nodiscard]] Shape weight_shape() const {
        return {out_channels, in_channels / groups, kernel, kernel};
    }
    [[nodiscard]] Shape bias_shape() const { return {1, out_channels, 1, 1}; }
};

/// Ordered name -> tensor map. Iteration order is insertion order.
template <class T>
class ParamStore {
public:
    using Entry = std::pair<std::string, Tensor<T>>;

    void add(std::string name, Tensor<T> value) {
        if (index_.contains(name)) throw std::invalid_argument("ParamStore: duplicate name " + name);
        index_.emplace(name, entries_.size());
        entries_.emplace_back(std::move(name), std::move(value));
    }

    void declare(const ConvLayer& layer) {
        add(layer.weight_name(), Tensor<T>(layer.weight_shape()));
        add(layer.bias_name(), Tensor<T>(layer.bias_shape()));
    }

    [[nodiscard]] bool contains(const std::string& name) const { return index_.contains(name); }

    [[nodiscard]] const Tensor<T>& at(const std::string& name) const {
        return entries_[lookup(name)].second;
    }
    [[nodiscard]] Tensor<T>& at(const std::string& name) { return entries_[lookup(name)].second; }

    [[nodiscard]] const std::vector<Entry>& entries() const { return entries_; }
    [[nodiscard]] std::vector<Entry>& entries() { return entries_; }
    [[nodiscard]] std::size_t size() const { return entries_.size(); }

    /// Total scalar count across all tensors.
    [[nodiscard]] std::int64_t parameter_count() const {
        std::int64_t total = 0;
        for (const auto& [name, t] : entries_) total += static_cast<std::int64_t>(t.size());
        return total;
    }

    template <class U>
    [[nodiscard]] ParamStore<U> cast() const {
        ParamStore<U> out;
        for (const auto& [name, t] : entries_) out.add(name, t.template cast<U>());
        return out;
    }

    bool operator==(const ParamStore& other) const { return entries_ == other.entries_; }

private:
    [[nodiscard]] std::size_t lookup(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw std::out_of_range("ParamStore: no parameter named " + name);
        return it->second;
    }

    std::vector<Entry> entries_;
    std::unordered_map<std::string, std::size_t> index_;
};

enum class InitScheme { kaiming_uniform };
enum class FanMode { fan_in, fan_out };

struct InitSpec {
    InitScheme scheme = InitScheme::kaiming_uniform;
    FanMode fan = FanMode::fan_in;
    // bound = 1/sqrt(fan); sqrt(2) gives the plain ReLU gain.
    double gain = 1.0 / std::sqrt(3.0);
    std::uint64_t seed = 0;
};

inline bool ends_with(const std::string& s, const std::string& suffix) {
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

/// Kaiming-uniform bound gain * sqrt(3 / fan) for a weight tensor (co, ci, kh, kw).
inline double kaiming_bound(const Shape& weight_shape, const InitSpec& spec) {
    const double fan = spec.fan == FanMode::fan_in
                           ? static_cast<double>(weight_shape.c) * weight_shape.h * weight_shape.w
                           : static_cast<double>(weight_shape.n) * weight_shape.h * weight_shape.w;
    return spec.gain * std::sqrt(3.0 / fan);
}

/// Fills `*.weight` tensors from U(-bound, bound) and zeroes `*.bias` tensors,
/// walking the store in order with one seeded generator.
template <class T>
void init_params(ParamStore<T>& store, const InitSpec& spec) {
    std::mt19937_64 rng(spec.seed);
    // Explicit mapping instead of uniform_real_distribution, whose output is
    // not specified across standard library implementations.
    auto unit = [&rng] { return static_cast<double>(rng() >> 11) * 0x1.0p-53; };
    for (auto& [name, t] : store.entries()) {
        if (ends_with(name, ".bias")) {
            std::fill(t.data().begin(), t.data().end(), T(0));
            continue;
        }
        const double bound = kaiming_bound(t.shape(), spec);
        for (auto& v : t.data()) v = static_cast<T>((2.0 * unit() - 1.0) * bound);
    }
}

/// Eager (tape-free) layer application.
template <class T>
Tensor<T> conv_forward(const ParamStore<T>& store, const ConvLayer& layer, const Tensor<T>& x) {
    if (x.shape().c != layer.in_channels) {
        throw std::invalid_argument("conv_forward " + layer.name + ": expected " +
                                    std::to_string(layer.in_channels) + " input channels, got " +
                                    std::to_string(x.shape().c));
    }
    const auto& b = store.at(layer.bias_name());
    return conv2d(x, store.at(layer.weight_name()), &b, layer.options());
}

}  // namespace pmrn
