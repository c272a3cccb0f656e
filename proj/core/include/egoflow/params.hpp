#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "egoflow/rng.hpp"
#include "egoflow/tensor.hpp"

namespace egoflow {

/// Trainable array with Adam moment state. Owned by a ParamRegistry.
template <class T>
struct Parameter {
    std::string name;  // unique path, e.g. "backbone.enc0.lfa0.att.w"
    Tensor<T> value;   // leaf with requires_grad = true
    std::vector<T> adam_m;
    std::vector<T> adam_v;
    std::int64_t adam_step = 0;
};

/// Non-trainable named state (batch-norm running statistics).
template <class T>
struct Buffer {
    std::string name;
    std::vector<int> shape;
    std::vector<T> data;
};

enum class Init { zeros, ones, glorot_uniform };

/// Owns every parameter and buffer of a model in registration order.
/// Registration order is deterministic, which makes initialization,
/// checkpointing and optimizer sweeps reproducible.
template <class T>
class ParamRegistry {
  public:
    explicit ParamRegistry(std::uint64_t init_seed) : rng_(init_seed) {}

    Parameter<T>* add(const std::string& name, std::vector<int> shape, Init init);
    Buffer<T>* add_buffer(const std::string& name, std::vector<int> shape, T fill);

    Parameter<T>* find(const std::string& name) const;
    Buffer<T>* find_buffer(const std::string& name) const;

    const std::vector<std::unique_ptr<Parameter<T>>>& params() const { return params_; }
    const std::vector<std::unique_ptr<Buffer<T>>>& buffers() const { return buffers_; }

    std::size_t total_size() const;
    void zero_grad();

  private:
    Rng rng_;
    std::vector<std::unique_ptr<Parameter<T>>> params_;
    std::vector<std::unique_ptr<Buffer<T>>> buffers_;
    std::unordered_map<std::string, Parameter<T>*> by_name_;
    std::unordered_map<std::string, Buffer<T>*> buf_by_name_;
};

/// One Adam update over every parameter of the registry.
/// beta1 = 0.9, beta2 = 0.999, eps = 1e-8, bias-corrected.
template <class T>
void adam_step(ParamRegistry<T>& params, T lr);

/// Scales all gradients so their global L2 norm is at most max_norm.
/// Returns the pre-clip norm.
template <class T>
T clip_grad_norm(ParamRegistry<T>& params, T max_norm);

}  // namespace egoflow
