#pragma once

// Tape-based reverse-mode differentiation over the ops in tensor.hpp.
// Every recorded node keeps its forward value; backward() walks the tape in
// reverse creation order, so node ids double as a topological order.

#include "pmrn/tensor.hpp"

#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace pmrn {

struct Var {
    int id = -1;
    [[nodiscard]] bool valid() const { return id >= 0; }
};

template <class T>
class Tape {
public:
    using Scalar = T;

    Var leaf(Tensor<T> value, bool requires_grad = true) {
        return push("leaf", std::move(value), {}, requires_grad, nullptr);
    }
    Var constant(Tensor<T> value) { return leaf(std::move(value), false); }

    [[nodiscard]] const Tensor<T>& value(Var v) const { return node(v).value; }
    [[nodiscard]] const Shape& shape(Var v) const { return node(v).value.shape(); }
    [[nodiscard]] bool requires_grad(Var v) const { return node(v).requires_grad; }
    [[nodiscard]] std::size_t size() const { return nodes_.size(); }
    [[nodiscard]] const std::string& op_name(Var v) const { return node(v).op; }

    /// Gradient of the last backward() loss; zeros for nodes off the loss path.
    [[nodiscard]] Tensor<T> grad(Var v) const {
        const auto& g = grads_.at(static_cast<std::size_t>(v.id));
        return g ? *g : Tensor<T>(node(v).value.shape());
    }

    Var conv2d(Var x, Var w, std::optional<Var> b, Conv2dOptions opt = {}) {
        const Tensor<T>* bias = b ? &value(*b) : nullptr;
        Tensor<T> out = pmrn::conv2d(value(x), value(w), bias, opt);
        std::vector<int> in{x.id, w.id};
        if (b) in.push_back(b->id);
        const int xi = x.id, wi = w.id, bi = b ? b->id : -1;
        return push("conv2d", std::move(out), in, any_requires(in),
                    [xi, wi, bi, opt](Tape& t, const Tensor<T>& gout) {
                        auto g = conv2d_backward(t.nodes_[xi].value, t.nodes_[wi].value, gout, opt);
                        t.accumulate(xi, std::move(g.input));
                        t.accumulate(wi, std::move(g.weights));
                        if (bi >= 0) {
                            t.accumulate(bi, Tensor<T>(t.nodes_[bi].value.shape(), g.bias.vec()));
                        }
                    });
    }

    Var relu(Var x) {
        const int xi = x.id;
        return push("relu", pmrn::relu(value(x)), {xi}, any_requires({xi}),
                    [xi](Tape& t, const Tensor<T>& gout) {
                        t.accumulate(xi, relu_backward(t.nodes_[xi].value, gout));
                    });
    }

    Var sigmoid(Var x) {
        const int xi = x.id;
        const int self = static_cast<int>(nodes_.size());
        return push("sigmoid", pmrn::sigmoid(value(x)), {xi}, any_requires({xi}),
                    [xi, self](Tape& t, const Tensor<T>& gout) {
                        t.accumulate(xi, sigmoid_backward(t.nodes_[self].value, gout));
                    });
    }

    Var add(Var a, Var b) {
        const int ai = a.id, bi = b.id;
        return push("add", pmrn::add(value(a), value(b)), {ai, bi}, any_requires({ai, bi}),
                    [ai, bi](Tape& t, const Tensor<T>& gout) {
                        t.accumulate(ai, gout);
                        t.accumulate(bi, gout);
                    });
    }

    Var affine_gate(Var x, Var gamma, Var beta) {
        const int xi = x.id, gi = gamma.id, bi = beta.id;
        return push("affine_gate", pmrn::affine_gate(value(x), value(gamma), value(beta)),
                    {xi, gi, bi}, any_requires({xi, gi, bi}),
                    [xi, gi, bi](Tape& t, const Tensor<T>& gout) {
                        const auto& xv = t.nodes_[xi].value;
                        const auto& gv = t.nodes_[gi].value;
                        Tensor<T> dx(xv.shape());
                        Tensor<T> dg(xv.shape());
                        for (std::size_t i = 0; i < xv.size(); ++i) {
                            dx[i] = gout[i] * (gv[i] + T(1));
                            dg[i] = gout[i] * xv[i];
                        }
                        t.accumulate(xi, std::move(dx));
                        t.accumulate(gi, std::move(dg));
                        t.accumulate(bi, gout);
                    });
    }

    Var concat_channels(const std::vector<Var>& parts) {
        std::vector<Tensor<T>> values;
        std::vector<int> ids;
        values.reserve(parts.size());
        for (Var p : parts) {
            values.push_back(value(p));
            ids.push_back(p.id);
        }
        return push("concat_channels", pmrn::concat_channels(values), ids, any_requires(ids),
                    [ids](Tape& t, const Tensor<T>& gout) {
                        int c0 = 0;
                        for (int id : ids) {
                            const int c = t.nodes_[id].value.shape().c;
                            t.accumulate(id, slice_channels(gout, c0, c));
                            c0 += c;
                        }
                    });
    }

    Var pixel_shuffle(Var x, int r) {
        const int xi = x.id;
        return push("pixel_shuffle", pmrn::pixel_shuffle(value(x), r), {xi}, any_requires({xi}),
                    [xi, r](Tape& t, const Tensor<T>& gout) {
                        t.accumulate(xi, pixel_unshuffle(gout, r));
                    });
    }

    /// Scalar (1,1,1,1) mean over every element.
    Var mean(Var x) {
        const int xi = x.id;
        Tensor<T> out(Shape{}, pmrn::mean(value(x)));
        return push("mean", std::move(out), {xi}, any_requires({xi}),
                    [xi](Tape& t, const Tensor<T>& gout) {
                        const auto& s = t.nodes_[xi].value.shape();
                        t.accumulate(xi, Tensor<T>(s, gout[0] / static_cast<T>(s.size())));
                    });
    }

    /// Scalar mean |pred - target|. Gradient sign(pred - target)/size, 0 at ties.
    Var mean_abs_error(Var pred, Var target) {
        const auto& p = value(pred);
        const auto& q = value(target);
        detail::require_same_shape("mean_abs_error", p, q);
        T acc = T(0);
        for (std::size_t i = 0; i < p.size(); ++i) acc += std::abs(p[i] - q[i]);
        Tensor<T> out(Shape{}, acc / static_cast<T>(p.size()));
        const int pi = pred.id, qi = target.id;
        return push("mean_abs_error", std::move(out), {pi, qi}, any_requires({pi, qi}),
                    [pi, qi](Tape& t, const Tensor<T>& gout) {
                        const auto& pv = t.nodes_[pi].value;
                        const auto& qv = t.nodes_[qi].value;
                        const T s = gout[0] / static_cast<T>(pv.size());
                        Tensor<T> dp(pv.shape());
                        for (std::size_t i = 0; i < pv.size(); ++i) {
                            const T d = pv[i] - qv[i];
                            dp[i] = d > T(0) ? s : (d < T(0) ? -s : T(0));
                        }
                        t.accumulate(qi, scale(dp, T(-1)));
                        t.accumulate(pi, std::move(dp));
                    });
    }

    void backward(Var loss) {
        if (node(loss).value.shape() != Shape{}) {
            throw std::invalid_argument("backward: loss must be scalar (1,1,1,1), got " +
                                        node(loss).value.shape().str());
        }
        grads_.assign(nodes_.size(), std::nullopt);
        grads_[static_cast<std::size_t>(loss.id)] = Tensor<T>(Shape{}, T(1));
        for (int i = loss.id; i >= 0; --i) {
            auto& n = nodes_[static_cast<std::size_t>(i)];
            auto& g = grads_[static_cast<std::size_t>(i)];
            if (!g || !n.requires_grad || !n.backward) continue;
            n.backward(*this, *g);
        }
    }

private:
    using BackwardFn = std::function<void(Tape&, const Tensor<T>&)>;

    struct Node {
        std::string op;
        Tensor<T> value;
        std::vector<int> inputs;
        bool requires_grad = false;
        BackwardFn backward;
    };

    Var push(std::string op, Tensor<T> value, std::vector<int> inputs, bool requires_grad,
             BackwardFn fn) {
        nodes_.push_back(Node{std::move(op), std::move(value), std::move(inputs), requires_grad,
                              std::move(fn)});
        return Var{static_cast<int>(nodes_.size()) - 1};
    }

    [[nodiscard]] const Node& node(Var v) const {
        if (v.id < 0 || static_cast<std::size_t>(v.id) >= nodes_.size()) {
            throw std::out_of_range("Tape: invalid variable id " + std::to_string(v.id));
        }
        return nodes_[static_cast<std::size_t>(v.id)];
    }

    [[nodiscard]] bool any_requires(const std::vector<int>& ids) const {
        for (int id : ids) {
            if (nodes_[static_cast<std::size_t>(id)].requires_grad) return true;
        }
        return false;
    }

    void accumulate(int id, Tensor<T> g) {
        if (!nodes_[static_cast<std::size_t>(id)].requires_grad) return;
        auto& slot = grads_[static_cast<std::size_t>(id)];
        if (!slot) {
            slot = std::move(g);
            return;
        }
        auto dst = slot->data();
        auto src = g.data();
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
    }

    std::vector<Node> nodes_;
    std::vector<std::optional<Tensor<T>>> grads_;
};

}  // namespace pmrn
