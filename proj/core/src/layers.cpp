#include "egoflow/layers.hpp"

#include <cmath>

namespace egoflow {

namespace {
thread_local bool g_bn_eval_batch_stats = false;
}

bool bn_eval_uses_batch_stats() { return g_bn_eval_batch_stats; }

BnBatchStatsGuard::BnBatchStatsGuard() : prev_(g_bn_eval_batch_stats) {
    g_bn_eval_batch_stats = true;
}
BnBatchStatsGuard::~BnBatchStatsGuard() { g_bn_eval_batch_stats = prev_; }

template <class T>
LinearLayer<T>::LinearLayer(ParamRegistry<T>& reg, const std::string& prefix, int in, int out) {
    w = reg.add(prefix + ".w", {in, out}, Init::glorot_uniform);
    b = reg.add(prefix + ".b", {out}, Init::zeros);
}

template <class T>
BatchNorm<T>::BatchNorm(ParamRegistry<T>& reg, const std::string& prefix, int channels) {
    scale = reg.add(prefix + ".scale", {channels}, Init::ones);
    shift = reg.add(prefix + ".shift", {channels}, Init::zeros);
    running_mean = reg.add_buffer(prefix + ".running_mean", {channels}, T(0));
    running_var = reg.add_buffer(prefix + ".running_var", {channels}, T(1));
}

template <class T>
Tensor<T> BatchNorm<T>::forward(const Tensor<T>& x, bool training) const {
    if (x.rank() != 2)
        throw shape_error("batch_norm: expected [N,C], got " + shape_str(x.shape()));
    const int n = x.dim(0), c = x.dim(1);
    if (n < 1) throw validation_error("batch_norm: empty batch");
    if (static_cast<int>(scale->value.numel()) != c)
        throw shape_error("batch_norm: channels " + std::to_string(c) + " vs affine " +
                          shape_str(scale->value.shape()));

    const bool batch_stats = training || bn_eval_uses_batch_stats();
    std::vector<T> mean(c, T(0)), var(c, T(0));
    if (batch_stats) {
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < c; ++j) mean[j] += x.data()[static_cast<std::size_t>(i) * c + j];
        for (int j = 0; j < c; ++j) mean[j] /= static_cast<T>(n);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < c; ++j) {
                const T d = x.data()[static_cast<std::size_t>(i) * c + j] - mean[j];
                var[j] += d * d;
            }
        for (int j = 0; j < c; ++j) var[j] /= static_cast<T>(n);
        if (training) {
            for (int j = 0; j < c; ++j) {
                running_mean->data[j] =
                    T(kBnMomentum) * running_mean->data[j] + T(1 - kBnMomentum) * mean[j];
                running_var->data[j] =
                    T(kBnMomentum) * running_var->data[j] + T(1 - kBnMomentum) * var[j];
            }
        }
    } else {
        mean = running_mean->data;
        var = running_var->data;
    }

    std::vector<T> invstd(c);
    for (int j = 0; j < c; ++j) invstd[j] = T(1) / std::sqrt(var[j] + T(kBnEps));

    const auto& g = scale->value.data();
    const auto& s = shift->value.data();
    std::vector<T> out(x.numel());
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < c; ++j) {
            const std::size_t e = static_cast<std::size_t>(i) * c + j;
            out[e] = g[j] * (x.data()[e] - mean[j]) * invstd[j] + s[j];
        }

    return make_op<T>(
        "batch_norm", x.shape(), std::move(out), {x, scale->value, shift->value},
        [n, c, batch_stats, mean = std::move(mean), invstd = std::move(invstd)](TensorNode<T>& node) {
            const auto& xv = node.inputs[0]->data;
            const auto& gam = node.inputs[1]->data;
            const auto& go = node.grad;
            // xhat recomputed from the saved statistics
            auto xhat = [&](int i, int j) {
                return (xv[static_cast<std::size_t>(i) * c + j] - mean[j]) * invstd[j];
            };
            if (node.inputs[1]->requires_grad) {
                std::vector<T> gg(static_cast<std::size_t>(c), T(0));
                for (int i = 0; i < n; ++i)
                    for (int j = 0; j < c; ++j)
                        gg[j] += go[static_cast<std::size_t>(i) * c + j] * xhat(i, j);
                accum_input(node, 1, gg);
            }
            if (node.inputs[2]->requires_grad) {
                std::vector<T> gs(static_cast<std::size_t>(c), T(0));
                for (int i = 0; i < n; ++i)
                    for (int j = 0; j < c; ++j) gs[j] += go[static_cast<std::size_t>(i) * c + j];
                accum_input(node, 2, gs);
            }
            if (node.inputs[0]->requires_grad) {
                std::vector<T> gx(xv.size());
                if (batch_stats) {
                    // standard batch-norm backward through the batch statistics
                    std::vector<T> sum_g(c, T(0)), sum_gx(c, T(0));
                    for (int i = 0; i < n; ++i)
                        for (int j = 0; j < c; ++j) {
                            const T gij = go[static_cast<std::size_t>(i) * c + j];
                            sum_g[j] += gij;
                            sum_gx[j] += gij * xhat(i, j);
                        }
                    for (int i = 0; i < n; ++i)
                        for (int j = 0; j < c; ++j) {
                            const T gij = go[static_cast<std::size_t>(i) * c + j];
                            gx[static_cast<std::size_t>(i) * c + j] =
                                gam[j] * invstd[j] *
                                (gij - sum_g[j] / static_cast<T>(n) -
                                 xhat(i, j) * sum_gx[j] / static_cast<T>(n));
                        }
                } else {
                    for (int i = 0; i < n; ++i)
                        for (int j = 0; j < c; ++j)
                            gx[static_cast<std::size_t>(i) * c + j] =
                                go[static_cast<std::size_t>(i) * c + j] * gam[j] * invstd[j];
                }
                accum_input(node, 0, gx);
            }
        });
}

template <class T>
Mlp<T>::Mlp(ParamRegistry<T>& reg, const std::string& prefix, const std::vector<int>& widths,
            bool plain)
    : final_plain(plain) {
    if (widths.size() < 2) throw validation_error("mlp: need at least in/out widths");
    const std::size_t layers = widths.size() - 1;
    for (std::size_t l = 0; l < layers; ++l) {
        const std::string name = prefix + "." + std::to_string(l);
        linears.emplace_back(reg, name, widths[l], widths[l + 1]);
        const bool is_final = (l + 1 == layers);
        if (is_final && final_plain) {
            bns.emplace_back();  // no norm on the head layer
        } else {
            bns.emplace_back(reg, name + ".bn", widths[l + 1]);
        }
    }
}

template <class T>
Tensor<T> Mlp<T>::forward(Tensor<T> x, bool training) const {
    for (std::size_t l = 0; l < linears.size(); ++l) {
        x = linears[l].forward(x);
        const bool is_final = (l + 1 == linears.size());
        if (!(is_final && final_plain)) {
            x = bns[l].forward(x, training);
            x = leaky_relu(x, T(kLeakySlope));
        }
    }
    return x;
}

template struct LinearLayer<float>;
template struct LinearLayer<double>;
template struct BatchNorm<float>;
template struct BatchNorm<double>;
template struct Mlp<float>;
template struct Mlp<double>;

}  // namespace egoflow
