#include "egoflow/params.hpp"

#include <cmath>

namespace egoflow {

template <class T>
Parameter<T>* ParamRegistry<T>::add(const std::string& name, std::vector<int> shape, Init init) {
    if (by_name_.count(name))
        throw validation_error("duplicate parameter name: " + name);
    const std::size_t n = shape_numel(shape);
    std::vector<T> data(n, T(0));
    switch (init) {
        case Init::zeros:
            break;
        case Init::ones:
            std::fill(data.begin(), data.end(), T(1));
            break;
        case Init::glorot_uniform: {
            // fan_in/fan_out from the first two dims; 1-D arrays fall back to n.
            const double fan_in = shape.size() >= 2 ? shape[0] : static_cast<int>(n);
            const double fan_out = shape.size() >= 2 ? shape[1] : static_cast<int>(n);
            const double bound = std::sqrt(6.0 / (fan_in + fan_out));
            for (auto& v : data) v = static_cast<T>(rng_.uniform(-bound, bound));
            break;
        }
    }
    auto p = std::make_unique<Parameter<T>>();
    p->name = name;
    p->value = Tensor<T>::from(std::move(shape), std::move(data), /*requires_grad=*/true);
    p->adam_m.assign(n, T(0));
    p->adam_v.assign(n, T(0));
    Parameter<T>* raw = p.get();
    by_name_[name] = raw;
    params_.push_back(std::move(p));
    return raw;
}

template <class T>
Buffer<T>* ParamRegistry<T>::add_buffer(const std::string& name, std::vector<int> shape, T fill) {
    if (buf_by_name_.count(name) || by_name_.count(name))
        throw validation_error("duplicate buffer name: " + name);
    auto b = std::make_unique<Buffer<T>>();
    b->name = name;
    b->data.assign(shape_numel(shape), fill);
    b->shape = std::move(shape);
    Buffer<T>* raw = b.get();
    buf_by_name_[name] = raw;
    buffers_.push_back(std::move(b));
    return raw;
}

template <class T>
Parameter<T>* ParamRegistry<T>::find(const std::string& name) const {
    auto it = by_name_.find(name);
    return it == by_name_.end() ? nullptr : it->second;
}

template <class T>
Buffer<T>* ParamRegistry<T>::find_buffer(const std::string& name) const {
    auto it = buf_by_name_.find(name);
    return it == buf_by_name_.end() ? nullptr : it->second;
}

template <class T>
std::size_t ParamRegistry<T>::total_size() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p->value.numel();
    return n;
}

template <class T>
void ParamRegistry<T>::zero_grad() {
    for (auto& p : params_) {
        auto* node = p->value.node();
        node->ensure_grad();
        std::fill(node->grad.begin(), node->grad.end(), T(0));
    }
}

template <class T>
void adam_step(ParamRegistry<T>& params, T lr) {
    constexpr T beta1 = T(0.9), beta2 = T(0.999), eps = T(1e-8);
    for (auto& p : params.params()) {
        p->adam_step += 1;
        const T bc1 = T(1) - std::pow(beta1, static_cast<T>(p->adam_step));
        const T bc2 = T(1) - std::pow(beta2, static_cast<T>(p->adam_step));
        auto* node = p->value.node();
        node->ensure_grad();
        auto& w = node->data;
        const auto& g = node->grad;
        for (std::size_t i = 0; i < w.size(); ++i) {
            p->adam_m[i] = beta1 * p->adam_m[i] + (T(1) - beta1) * g[i];
            p->adam_v[i] = beta2 * p->adam_v[i] + (T(1) - beta2) * g[i] * g[i];
            const T mh = p->adam_m[i] / bc1;
            const T vh = p->adam_v[i] / bc2;
            w[i] -= lr * mh / (std::sqrt(vh) + eps);
        }
    }
}

template <class T>
T clip_grad_norm(ParamRegistry<T>& params, T max_norm) {
    double sq = 0;
    for (auto& p : params.params()) {
        p->value.node()->ensure_grad();
        for (const T g : p->value.node()->grad) sq += static_cast<double>(g) * g;
    }
    const T norm = static_cast<T>(std::sqrt(sq));
    if (norm > max_norm && norm > T(0)) {
        const T s = max_norm / norm;
        for (auto& p : params.params())
            for (T& g : p->value.node()->grad) g *= s;
    }
    return norm;
}

template class ParamRegistry<float>;
template class ParamRegistry<double>;
template void adam_step<float>(ParamRegistry<float>&, float);
template void adam_step<double>(ParamRegistry<double>&, double);
template float clip_grad_norm<float>(ParamRegistry<float>&, float);
template double clip_grad_norm<double>(ParamRegistry<double>&, double);

}  // namespace egoflow
