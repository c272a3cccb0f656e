#pragma once

#include <string>
#include <vector>

#include "egoflow/params.hpp"
#include "egoflow/tensor.hpp"

namespace egoflow {

/// Negative slope shared by every leaky ReLU in the network.
inline constexpr double kLeakySlope = 0.1;
inline constexpr double kBnEps = 1e-5;
inline constexpr double kBnMomentum = 0.9;

template <class T>
struct LinearLayer {
    Parameter<T>* w = nullptr;
    Parameter<T>* b = nullptr;

    LinearLayer() = default;
    LinearLayer(ParamRegistry<T>& reg, const std::string& prefix, int in, int out);

    Tensor<T> forward(const Tensor<T>& x) const { return linear(x, w->value, b->value); }
};

/// Per-channel standardization over the point axis (batch of points), with
/// affine scale/shift. Training mode uses batch statistics and updates the
/// running buffers with momentum 0.9; eval mode uses the running statistics.
///
/// Inference on full scenes standardizes with the scene's own statistics
/// instead (see BnBatchStatsGuard): with one scene per batch the running
/// aggregates mix activation scales of unrelated scenes, which is badly
/// wrong mid-training.
template <class T>
struct BatchNorm {
    Parameter<T>* scale = nullptr;
    Parameter<T>* shift = nullptr;
    Buffer<T>* running_mean = nullptr;
    Buffer<T>* running_var = nullptr;

    BatchNorm() = default;
    BatchNorm(ParamRegistry<T>& reg, const std::string& prefix, int channels);

    Tensor<T> forward(const Tensor<T>& x, bool training) const;
};

/// While alive (per thread), eval-mode batch norm standardizes with the
/// current batch statistics and leaves the running buffers untouched.
class BnBatchStatsGuard {
  public:
    BnBatchStatsGuard();
    ~BnBatchStatsGuard();
    BnBatchStatsGuard(const BnBatchStatsGuard&) = delete;
    BnBatchStatsGuard& operator=(const BnBatchStatsGuard&) = delete;

  private:
    bool prev_;
};

bool bn_eval_uses_batch_stats();

/// linear -> batch norm -> leaky ReLU stacks. When final_plain is set the
/// last layer is a bare linear (head convention: no norm, no activation).
template <class T>
struct Mlp {
    std::vector<LinearLayer<T>> linears;
    std::vector<BatchNorm<T>> bns;  // parallel to linears; unused tail slots stay empty
    bool final_plain = false;

    Mlp() = default;
    Mlp(ParamRegistry<T>& reg, const std::string& prefix, const std::vector<int>& widths,
        bool final_plain);

    Tensor<T> forward(Tensor<T> x, bool training) const;
};

}  // namespace egoflow
