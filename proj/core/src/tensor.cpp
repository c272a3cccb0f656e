#include "egoflow/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace egoflow {

namespace {
thread_local bool g_autograd_enabled = true;
}

bool autograd_enabled() { return g_autograd_enabled; }

NoGradGuard::NoGradGuard() : prev_(g_autograd_enabled) { g_autograd_enabled = false; }
NoGradGuard::~NoGradGuard() { g_autograd_enabled = prev_; }

std::string shape_str(const std::vector<int>& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += "x";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

std::size_t shape_numel(const std::vector<int>& shape) {
    std::size_t n = 1;
    for (int d : shape) {
        if (d <= 0) throw shape_error("non-positive dimension in shape " + shape_str(shape));
        n *= static_cast<std::size_t>(d);
    }
    return n;
}

// ---- construction -----------------------------------------------------------

template <class T>
Tensor<T> Tensor<T>::from(std::vector<int> shape, std::vector<T> data, bool requires_grad) {
    if (shape_numel(shape) != data.size())
        throw shape_error("data length " + std::to_string(data.size()) +
                          " does not match shape " + shape_str(shape));
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->data = std::move(data);
    n->requires_grad = requires_grad && autograd_enabled();
    return wrap(std::move(n));
}

template <class T>
Tensor<T> Tensor<T>::zeros(std::vector<int> shape, bool requires_grad) {
    std::vector<T> d(shape_numel(shape), T(0));
    return from(std::move(shape), std::move(d), requires_grad);
}

template <class T>
Tensor<T> Tensor<T>::full(std::vector<int> shape, T value) {
    std::vector<T> d(shape_numel(shape), value);
    return from(std::move(shape), std::move(d), false);
}

template <class T>
Tensor<T> Tensor<T>::scalar(T value) {
    return from({1}, {value}, false);
}

// ---- op plumbing ------------------------------------------------------------

template <class T>
Tensor<T> make_op(const char* tag, std::vector<int> shape, std::vector<T> data,
                  std::vector<Tensor<T>> inputs,
                  std::function<void(TensorNode<T>&)> backward_fn) {
    if (shape_numel(shape) != data.size())
        throw shape_error(std::string(tag) + ": output data length does not match shape " +
                          shape_str(shape));
    auto n = std::make_shared<TensorNode<T>>();
    n->shape = std::move(shape);
    n->data = std::move(data);
    n->op = tag;
    bool need = false;
    if (g_autograd_enabled) {
        for (const auto& in : inputs)
            if (in.requires_grad()) need = true;
    }
    if (need) {
        n->requires_grad = true;
        n->inputs.reserve(inputs.size());
        for (auto& in : inputs) n->inputs.push_back(in.ptr());
        n->backward_fn = std::move(backward_fn);
    }
    return Tensor<T>::wrap(std::move(n));
}

template <class T>
void accum_input(TensorNode<T>& node, std::size_t i, const std::vector<T>& g) {
    auto& in = *node.inputs[i];
    if (!in.requires_grad) return;
    in.ensure_grad();
    if (g.size() != in.grad.size())
        throw shape_error(std::string(node.op) + ": gradient length mismatch for input " +
                          std::to_string(i));
    for (std::size_t k = 0; k < g.size(); ++k) in.grad[k] += g[k];
}

namespace {

template <class T>
std::vector<TensorNode<T>*> topo_order(TensorNode<T>* root) {
    // Iterative postorder DFS; deterministic for a fixed graph.
    std::vector<TensorNode<T>*> order;
    std::unordered_set<TensorNode<T>*> visited;
    std::vector<std::pair<TensorNode<T>*, std::size_t>> stack;
    stack.emplace_back(root, 0);
    visited.insert(root);
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->inputs.size()) {
            TensorNode<T>* child = node->inputs[next++].get();
            if (child->requires_grad && !visited.count(child)) {
                visited.insert(child);
                stack.emplace_back(child, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    return order;
}

}  // namespace

template <class T>
void backward(const Tensor<T>& root) {
    if (root.numel() != 1)
        throw shape_error("backward: root must be scalar, got shape " + shape_str(root.shape()));
    if (!root.requires_grad()) return;
    auto order = topo_order(root.node());
    for (auto* n : order) n->ensure_grad();
    root.node()->grad[0] += T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        if ((*it)->backward_fn) (*it)->backward_fn(**it);
    }
}

template <class T>
void zero_grads(const Tensor<T>& root) {
    std::vector<TensorNode<T>*> stack{root.node()};
    std::unordered_set<TensorNode<T>*> visited{root.node()};
    while (!stack.empty()) {
        auto* n = stack.back();
        stack.pop_back();
        std::fill(n->grad.begin(), n->grad.end(), T(0));
        for (const auto& in : n->inputs) {
            if (!visited.count(in.get())) {
                visited.insert(in.get());
                stack.push_back(in.get());
            }
        }
    }
}

// ---- ops --------------------------------------------------------------------

template <class T>
Tensor<T> stop_gradient(const Tensor<T>& x) {
    auto n = std::make_shared<TensorNode<T>>();
    n->shape = x.shape();
    n->data = x.data();
    n->op = "stop_gradient";
    n->requires_grad = false;
    return Tensor<T>::wrap(std::move(n));
}

namespace {
template <class T>
void require_rank(const Tensor<T>& x, int r, const char* tag) {
    if (x.rank() != r)
        throw shape_error(std::string(tag) + ": expected rank " + std::to_string(r) +
                          ", got shape " + shape_str(x.shape()));
}
}  // namespace

template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    require_rank(a, 2, "matmul");
    require_rank(b, 2, "matmul");
    const int m = a.dim(0), k = a.dim(1), k2 = b.dim(0), n = b.dim(1);
    if (k != k2)
        throw shape_error("matmul: inner dimensions disagree, " + shape_str(a.shape()) + " vs " +
                          shape_str(b.shape()));
    std::vector<T> out(static_cast<std::size_t>(m) * n, T(0));
    {
        const T* A = a.data().data();
        const T* B = b.data().data();
        T* C = out.data();
        for (int i = 0; i < m; ++i)
            for (int p = 0; p < k; ++p) {
                const T aip = A[i * k + p];
                const T* Bp = B + p * n;
                T* Ci = C + i * n;
                for (int j = 0; j < n; ++j) Ci[j] += aip * Bp[j];
            }
    }
    return make_op<T>(
        "matmul", {m, n}, std::move(out), {a, b}, [m, k, n](TensorNode<T>& node) {
            const T* G = node.grad.data();
            const auto& A = node.inputs[0]->data;
            const auto& B = node.inputs[1]->data;
            if (node.inputs[0]->requires_grad) {
                std::vector<T> ga(static_cast<std::size_t>(m) * k, T(0));
                // dA = G * B^T
                for (int i = 0; i < m; ++i)
                    for (int j = 0; j < n; ++j) {
                        const T gij = G[i * n + j];
                        for (int p = 0; p < k; ++p) ga[i * k + p] += gij * B[p * n + j];
                    }
                accum_input(node, 0, ga);
            }
            if (node.inputs[1]->requires_grad) {
                std::vector<T> gb(static_cast<std::size_t>(k) * n, T(0));
                // dB = A^T * G
                for (int i = 0; i < m; ++i)
                    for (int p = 0; p < k; ++p) {
                        const T aip = A[i * k + p];
                        for (int j = 0; j < n; ++j) gb[p * n + j] += aip * G[i * n + j];
                    }
                accum_input(node, 1, gb);
            }
        });
}

template <class T>
Tensor<T> transpose(const Tensor<T>& x) {
    require_rank(x, 2, "transpose");
    const int m = x.dim(0), n = x.dim(1);
    std::vector<T> out(x.numel());
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) out[static_cast<std::size_t>(j) * m + i] = x.data()[static_cast<std::size_t>(i) * n + j];
    return make_op<T>("transpose", {n, m}, std::move(out), {x}, [m, n](TensorNode<T>& node) {
        std::vector<T> g(static_cast<std::size_t>(m) * n);
        for (int j = 0; j < n; ++j)
            for (int i = 0; i < m; ++i) g[static_cast<std::size_t>(i) * n + j] = node.grad[static_cast<std::size_t>(j) * m + i];
        accum_input(node, 0, g);
    });
}

template <class T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
    require_rank(x, 2, "linear");
    require_rank(w, 2, "linear");
    const int n = x.dim(0), cin = x.dim(1), cout = w.dim(1);
    if (w.dim(0) != cin)
        throw shape_error("linear: x " + shape_str(x.shape()) + " does not match w " +
                          shape_str(w.shape()));
    if (static_cast<int>(b.numel()) != cout)
        throw shape_error("linear: bias " + shape_str(b.shape()) + " does not match w " +
                          shape_str(w.shape()));
    std::vector<T> out(static_cast<std::size_t>(n) * cout);
    {
        const T* X = x.data().data();
        const T* W = w.data().data();
        const T* B = b.data().data();
        T* Y = out.data();
        for (int i = 0; i < n; ++i) {
            T* Yi = Y + static_cast<std::size_t>(i) * cout;
            for (int j = 0; j < cout; ++j) Yi[j] = B[j];
            const T* Xi = X + static_cast<std::size_t>(i) * cin;
            for (int p = 0; p < cin; ++p) {
                const T xp = Xi[p];
                const T* Wp = W + static_cast<std::size_t>(p) * cout;
                for (int j = 0; j < cout; ++j) Yi[j] += xp * Wp[j];
            }
        }
    }
    return make_op<T>(
        "linear", {n, cout}, std::move(out), {x, w, b}, [n, cin, cout](TensorNode<T>& node) {
            const T* G = node.grad.data();
            const auto& X = node.inputs[0]->data;
            const auto& W = node.inputs[1]->data;
            if (node.inputs[0]->requires_grad) {
                std::vector<T> gx(static_cast<std::size_t>(n) * cin, T(0));
                for (int i = 0; i < n; ++i)
                    for (int j = 0; j < cout; ++j) {
                        const T gij = G[static_cast<std::size_t>(i) * cout + j];
                        for (int p = 0; p < cin; ++p)
                            gx[static_cast<std::size_t>(i) * cin + p] += gij * W[static_cast<std::size_t>(p) * cout + j];
                    }
                accum_input(node, 0, gx);
            }
            if (node.inputs[1]->requires_grad) {
                std::vector<T> gw(static_cast<std::size_t>(cin) * cout, T(0));
                for (int i = 0; i < n; ++i) {
                    const T* Xi = X.data() + static_cast<std::size_t>(i) * cin;
                    const T* Gi = G + static_cast<std::size_t>(i) * cout;
                    for (int p = 0; p < cin; ++p)
                        for (int j = 0; j < cout; ++j)
                            gw[static_cast<std::size_t>(p) * cout + j] += Xi[p] * Gi[j];
                }
                accum_input(node, 1, gw);
            }
            if (node.inputs[2]->requires_grad) {
                std::vector<T> gb(static_cast<std::size_t>(cout), T(0));
                for (int i = 0; i < n; ++i)
                    for (int j = 0; j < cout; ++j) gb[j] += G[static_cast<std::size_t>(i) * cout + j];
                accum_input(node, 2, gb);
            }
        });
}

namespace {
template <class T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* tag) {
    if (a.shape() != b.shape())
        throw shape_error(std::string(tag) + ": shapes disagree, " + shape_str(a.shape()) +
                          " vs " + shape_str(b.shape()));
}
}  // namespace

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    require_same_shape(a, b, "add");
    std::vector<T> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
    return make_op<T>("add", a.shape(), std::move(out), {a, b}, [](TensorNode<T>& node) {
        accum_input(node, 0, node.grad);
        accum_input(node, 1, node.grad);
    });
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    require_same_shape(a, b, "sub");
    std::vector<T> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
    return make_op<T>("sub", a.shape(), std::move(out), {a, b}, [](TensorNode<T>& node) {
        accum_input(node, 0, node.grad);
        if (node.inputs[1]->requires_grad) {
            std::vector<T> g(node.grad.size());
            for (std::size_t i = 0; i < g.size(); ++i) g[i] = -node.grad[i];
            accum_input(node, 1, g);
        }
    });
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    require_same_shape(a, b, "mul");
    std::vector<T> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
    return make_op<T>("mul", a.shape(), std::move(out), {a, b}, [](TensorNode<T>& node) {
        if (node.inputs[0]->requires_grad) {
            std::vector<T> g(node.grad.size());
            for (std::size_t i = 0; i < g.size(); ++i) g[i] = node.grad[i] * node.inputs[1]->data[i];
            accum_input(node, 0, g);
        }
        if (node.inputs[1]->requires_grad) {
            std::vector<T> g(node.grad.size());
            for (std::size_t i = 0; i < g.size(); ++i) g[i] = node.grad[i] * node.inputs[0]->data[i];
            accum_input(node, 1, g);
        }
    });
}

template <class T>
Tensor<T> scale(const Tensor<T>& x, T c) {
    std::vector<T> out(x.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = c * x.data()[i];
    return make_op<T>("scale", x.shape(), std::move(out), {x}, [c](TensorNode<T>& node) {
        std::vector<T> g(node.grad.size());
        for (std::size_t i = 0; i < g.size(); ++i) g[i] = c * node.grad[i];
        accum_input(node, 0, g);
    });
}

template <class T>
Tensor<T> add_rowvec(const Tensor<T>& x, const Tensor<T>& r) {
    require_rank(x, 2, "add_rowvec");
    const int n = x.dim(0), c = x.dim(1);
    if (static_cast<int>(r.numel()) != c)
        throw shape_error("add_rowvec: row vector " + shape_str(r.shape()) + " vs matrix " +
                          shape_str(x.shape()));
    std::vector<T> out(x.numel());
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < c; ++j)
            out[static_cast<std::size_t>(i) * c + j] = x.data()[static_cast<std::size_t>(i) * c + j] + r.data()[j];
    return make_op<T>("add_rowvec", x.shape(), std::move(out), {x, r}, [n, c](TensorNode<T>& node) {
        accum_input(node, 0, node.grad);
        if (node.inputs[1]->requires_grad) {
            std::vector<T> g(static_cast<std::size_t>(c), T(0));
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < c; ++j) g[j] += node.grad[static_cast<std::size_t>(i) * c + j];
            accum_input(node, 1, g);
        }
    });
}

template <class T>
Tensor<T> mul_rowwise(const Tensor<T>& x, const Tensor<T>& s) {
    const int n = x.dim(0);
    if (static_cast<int>(s.numel()) != n)
        throw shape_error("mul_rowwise: scale " + shape_str(s.shape()) + " vs matrix " +
                          shape_str(x.shape()));
    const std::size_t row = x.numel() / static_cast<std::size_t>(n);
    std::vector<T> out(x.numel());
    for (int i = 0; i < n; ++i) {
        const T si = s.data()[i];
        for (std::size_t j = 0; j < row; ++j) out[i * row + j] = si * x.data()[i * row + j];
    }
    return make_op<T>("mul_rowwise", x.shape(), std::move(out), {x, s}, [n, row](TensorNode<T>& node) {
        if (node.inputs[0]->requires_grad) {
            std::vector<T> g(node.grad.size());
            for (int i = 0; i < n; ++i) {
                const T si = node.inputs[1]->data[i];
                for (std::size_t j = 0; j < row; ++j) g[i * row + j] = si * node.grad[i * row + j];
            }
            accum_input(node, 0, g);
        }
        if (node.inputs[1]->requires_grad) {
            std::vector<T> g(static_cast<std::size_t>(n), T(0));
            for (int i = 0; i < n; ++i)
                for (std::size_t j = 0; j < row; ++j)
                    g[i] += node.grad[i * row + j] * node.inputs[0]->data[i * row + j];
            accum_input(node, 1, g);
        }
    });
}

template <class T>
Tensor<T> div_scalar(const Tensor<T>& x, const Tensor<T>& s) {
    if (s.numel() != 1) throw shape_error("div_scalar: divisor must be scalar, got " + shape_str(s.shape()));
    const T sv = s.data()[0];
    std::vector<T> out(x.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.data()[i] / sv;
    return make_op<T>("div_scalar", x.shape(), std::move(out), {x, s}, [sv](TensorNode<T>& node) {
        if (node.inputs[0]->requires_grad) {
            std::vector<T> g(node.grad.size());
            for (std::size_t i = 0; i < g.size(); ++i) g[i] = node.grad[i] / sv;
            accum_input(node, 0, g);
        }
        if (node.inputs[1]->requires_grad) {
            T acc = 0;
            for (std::size_t i = 0; i < node.grad.size(); ++i)
                acc += node.grad[i] * (-node.inputs[0]->data[i] / (sv * sv));
            accum_input(node, 1, std::vector<T>{acc});
        }
    });
}

template <class T>
Tensor<T> leaky_relu(const Tensor<T>& x, T negative_slope) {
    std::vector<T> out(x.numel());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const T v = x.data()[i];
        out[i] = v > T(0) ? v : negative_slope * v;
    }
    return make_op<T>("leaky_relu", x.shape(), std::move(out), {x},
                      [negative_slope](TensorNode<T>& node) {
                          std::vector<T> g(node.grad.size());
                          for (std::size_t i = 0; i < g.size(); ++i)
                              g[i] = node.grad[i] *
                                     (node.inputs[0]->data[i] > T(0) ? T(1) : negative_slope);
                          accum_input(node, 0, g);
                      });
}

template <class T>
Tensor<T> sigmoid(const Tensor<T>& x) {
    std::vector<T> out(x.numel());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const T v = x.data()[i];
        out[i] = v >= T(0) ? T(1) / (T(1) + std::exp(-v))
                           : std::exp(v) / (T(1) + std::exp(v));
    }
    return make_op<T>("sigmoid", x.shape(), std::move(out), {x}, [](TensorNode<T>& node) {
        std::vector<T> g(node.grad.size());
        for (std::size_t i = 0; i < g.size(); ++i) {
            const T y = node.data[i];
            g[i] = node.grad[i] * y * (T(1) - y);
        }
        accum_input(node, 0, g);
    });
}

template <class T>
Tensor<T> softplus(const Tensor<T>& x) {
    std::vector<T> out(x.numel());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const T v = x.data()[i];
        out[i] = std::max(v, T(0)) + std::log1p(std::exp(-std::abs(v)));
    }
    return make_op<T>("softplus", x.shape(), std::move(out), {x}, [](TensorNode<T>& node) {
        std::vector<T> g(node.grad.size());
        for (std::size_t i = 0; i < g.size(); ++i) {
            const T v = node.inputs[0]->data[i];
            const T s = v >= T(0) ? T(1) / (T(1) + std::exp(-v)) : std::exp(v) / (T(1) + std::exp(v));
            g[i] = node.grad[i] * s;
        }
        accum_input(node, 0, g);
    });
}

template <class T>
Tensor<T> sqrt0(const Tensor<T>& x) {
    std::vector<T> out(x.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::sqrt(x.data()[i]);
    return make_op<T>("sqrt0", x.shape(), std::move(out), {x}, [](TensorNode<T>& node) {
        std::vector<T> g(node.grad.size());
        for (std::size_t i = 0; i < g.size(); ++i) {
            const T y = node.data[i];
            g[i] = y > T(0) ? node.grad[i] / (T(2) * y) : T(0);
        }
        accum_input(node, 0, g);
    });
}

template <class T>
Tensor<T> abs_val(const Tensor<T>& x) {
    std::vector<T> out(x.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::abs(x.data()[i]);
    return make_op<T>("abs", x.shape(), std::move(out), {x}, [](TensorNode<T>& node) {
        std::vector<T> g(node.grad.size());
        for (std::size_t i = 0; i < g.size(); ++i) {
            const T v = node.inputs[0]->data[i];
            g[i] = node.grad[i] * (v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0)));
        }
        accum_input(node, 0, g);
    });
}

template <class T>
Tensor<T> softmax_last(const Tensor<T>& x) {
    if (x.rank() < 1) throw shape_error("softmax_last: rank 0 input");
    const int k = x.dim(x.rank() - 1);
    const std::size_t rows = x.numel() / static_cast<std::size_t>(k);
    std::vector<T> out(x.numel());
    for (std::size_t r = 0; r < rows; ++r) {
        const T* in = x.data().data() + r * k;
        T* o = out.data() + r * k;
        T mx = in[0];
        for (int j = 1; j < k; ++j) mx = std::max(mx, in[j]);
        T sum = 0;
        for (int j = 0; j < k; ++j) {
            o[j] = std::exp(in[j] - mx);
            sum += o[j];
        }
        for (int j = 0; j < k; ++j) o[j] /= sum;
    }
    return make_op<T>("softmax_last", x.shape(), std::move(out), {x}, [k, rows](TensorNode<T>& node) {
        std::vector<T> g(node.grad.size());
        for (std::size_t r = 0; r < rows; ++r) {
            const T* y = node.data.data() + r * k;
            const T* go = node.grad.data() + r * k;
            T dot = 0;
            for (int j = 0; j < k; ++j) dot += go[j] * y[j];
            for (int j = 0; j < k; ++j) g[r * k + j] = y[j] * (go[j] - dot);
        }
        accum_input(node, 0, g);
    });
}

template <class T>
Tensor<T> gather_rows(const Tensor<T>& x, const std::vector<int>& idx) {
    const int n = x.dim(0);
    const std::size_t row = x.numel() / static_cast<std::size_t>(n);
    const int m = static_cast<int>(idx.size());
    for (int i = 0; i < m; ++i)
        if (idx[i] < 0 || idx[i] >= n)
            throw index_error("gather_rows: index " + std::to_string(idx[i]) + " at row " +
                              std::to_string(i) + " outside [0," + std::to_string(n) + ")");
    std::vector<int> shape = x.shape();
    shape[0] = m;
    std::vector<T> out(static_cast<std::size_t>(m) * row);
    for (int i = 0; i < m; ++i)
        std::copy_n(x.data().data() + static_cast<std::size_t>(idx[i]) * row, row,
                    out.data() + static_cast<std::size_t>(i) * row);
    return make_op<T>("gather_rows", std::move(shape), std::move(out), {x},
                      [idx, row](TensorNode<T>& node) {
                          auto& in = *node.inputs[0];
                          if (!in.requires_grad) return;
                          in.ensure_grad();
                          for (std::size_t i = 0; i < idx.size(); ++i)
                              for (std::size_t j = 0; j < row; ++j)
                                  in.grad[static_cast<std::size_t>(idx[i]) * row + j] +=
                                      node.grad[i * row + j];
                      });
}

template <class T>
Tensor<T> gather_neighbors(const Tensor<T>& x, const std::vector<int>& idx, int K) {
    require_rank(x, 2, "gather_neighbors");
    const int n = x.dim(0), c = x.dim(1);
    if (K <= 0 || idx.size() % static_cast<std::size_t>(K) != 0)
        throw shape_error("gather_neighbors: index table size " + std::to_string(idx.size()) +
                          " is not a multiple of K=" + std::to_string(K));
    const int m = static_cast<int>(idx.size()) / K;
    for (int i = 0; i < m; ++i)
        for (int k = 0; k < K; ++k) {
            const int v = idx[static_cast<std::size_t>(i) * K + k];
            if (v < 0 || v >= n)
                throw index_error("gather_neighbors: index " + std::to_string(v) + " at (" +
                                  std::to_string(i) + "," + std::to_string(k) + ") outside [0," +
                                  std::to_string(n) + ")");
        }
    std::vector<T> out(static_cast<std::size_t>(m) * K * c);
    for (std::size_t e = 0; e < idx.size(); ++e)
        std::copy_n(x.data().data() + static_cast<std::size_t>(idx[e]) * c, c,
                    out.data() + e * c);
    return make_op<T>("gather_neighbors", {m, K, c}, std::move(out), {x},
                      [idx, c](TensorNode<T>& node) {
                          auto& in = *node.inputs[0];
                          if (!in.requires_grad) return;
                          in.ensure_grad();
                          for (std::size_t e = 0; e < idx.size(); ++e)
                              for (int j = 0; j < c; ++j)
                                  in.grad[static_cast<std::size_t>(idx[e]) * c + j] +=
                                      node.grad[e * c + j];
                      });
}

template <class T>
Tensor<T> reduce_max_k(const Tensor<T>& x) {
    require_rank(x, 3, "reduce_max_k");
    const int m = x.dim(0), k = x.dim(1), c = x.dim(2);
    std::vector<T> out(static_cast<std::size_t>(m) * c);
    std::vector<int> arg(static_cast<std::size_t>(m) * c);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < c; ++j) {
            T best = x.data()[(static_cast<std::size_t>(i) * k + 0) * c + j];
            int bi = 0;
            for (int q = 1; q < k; ++q) {
                const T v = x.data()[(static_cast<std::size_t>(i) * k + q) * c + j];
                if (v > best) {  // strict: ties go to the first argmax
                    best = v;
                    bi = q;
                }
            }
            out[static_cast<std::size_t>(i) * c + j] = best;
            arg[static_cast<std::size_t>(i) * c + j] = bi;
        }
    return make_op<T>("reduce_max_k", {m, c}, std::move(out), {x},
                      [m, k, c, arg = std::move(arg)](TensorNode<T>& node) {
                          auto& in = *node.inputs[0];
                          if (!in.requires_grad) return;
                          in.ensure_grad();
                          for (int i = 0; i < m; ++i)
                              for (int j = 0; j < c; ++j)
                                  in.grad[(static_cast<std::size_t>(i) * k +
                                           arg[static_cast<std::size_t>(i) * c + j]) * c + j] +=
                                      node.grad[static_cast<std::size_t>(i) * c + j];
                      });
}

template <class T>
Tensor<T> reduce_wsum_k(const Tensor<T>& x, const Tensor<T>& w) {
    require_rank(x, 3, "reduce_wsum_k");
    const int m = x.dim(0), k = x.dim(1), c = x.dim(2);
    if (w.rank() != 2 || w.dim(0) != m || w.dim(1) != k)
        throw shape_error("reduce_wsum_k: weights " + shape_str(w.shape()) + " vs values " +
                          shape_str(x.shape()));
    std::vector<T> out(static_cast<std::size_t>(m) * c, T(0));
    for (int i = 0; i < m; ++i)
        for (int q = 0; q < k; ++q) {
            const T wq = w.data()[static_cast<std::size_t>(i) * k + q];
            const T* xr = x.data().data() + (static_cast<std::size_t>(i) * k + q) * c;
            T* o = out.data() + static_cast<std::size_t>(i) * c;
            for (int j = 0; j < c; ++j) o[j] += wq * xr[j];
        }
    return make_op<T>("reduce_wsum_k", {m, c}, std::move(out), {x, w}, [m, k, c](TensorNode<T>& node) {
        const auto& xv = node.inputs[0]->data;
        const auto& wv = node.inputs[1]->data;
        if (node.inputs[0]->requires_grad) {
            std::vector<T> g(xv.size());
            for (int i = 0; i < m; ++i)
                for (int q = 0; q < k; ++q) {
                    const T wq = wv[static_cast<std::size_t>(i) * k + q];
                    for (int j = 0; j < c; ++j)
                        g[(static_cast<std::size_t>(i) * k + q) * c + j] =
                            wq * node.grad[static_cast<std::size_t>(i) * c + j];
                }
            accum_input(node, 0, g);
        }
        if (node.inputs[1]->requires_grad) {
            std::vector<T> g(wv.size(), T(0));
            for (int i = 0; i < m; ++i)
                for (int q = 0; q < k; ++q) {
                    T acc = 0;
                    for (int j = 0; j < c; ++j)
                        acc += node.grad[static_cast<std::size_t>(i) * c + j] *
                               xv[(static_cast<std::size_t>(i) * k + q) * c + j];
                    g[static_cast<std::size_t>(i) * k + q] = acc;
                }
            accum_input(node, 1, g);
        }
    });
}

template <class T>
Tensor<T> max_lastdim(const Tensor<T>& x) {
    require_rank(x, 3, "max_lastdim");
    const int m = x.dim(0), k = x.dim(1), c = x.dim(2);
    std::vector<T> out(static_cast<std::size_t>(m) * k);
    std::vector<int> arg(static_cast<std::size_t>(m) * k);
    for (std::size_t r = 0; r < out.size(); ++r) {
        const T* in = x.data().data() + r * c;
        T best = in[0];
        int bi = 0;
        for (int j = 1; j < c; ++j)
            if (in[j] > best) {
                best = in[j];
                bi = j;
            }
        out[r] = best;
        arg[r] = bi;
    }
    return make_op<T>("max_lastdim", {m, k}, std::move(out), {x},
                      [c, arg = std::move(arg)](TensorNode<T>& node) {
                          auto& in = *node.inputs[0];
                          if (!in.requires_grad) return;
                          in.ensure_grad();
                          for (std::size_t r = 0; r < arg.size(); ++r)
                              in.grad[r * c + arg[r]] += node.grad[r];
                      });
}

template <class T>
Tensor<T> sub_bcast_k(const Tensor<T>& a, const Tensor<T>& b) {
    require_rank(a, 3, "sub_bcast_k");
    require_rank(b, 2, "sub_bcast_k");
    const int m = a.dim(0), k = a.dim(1), c = a.dim(2);
    if (b.dim(0) != m || b.dim(1) != c)
        throw shape_error("sub_bcast_k: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    std::vector<T> out(a.numel());
    for (int i = 0; i < m; ++i)
        for (int q = 0; q < k; ++q)
            for (int j = 0; j < c; ++j)
                out[(static_cast<std::size_t>(i) * k + q) * c + j] =
                    a.data()[(static_cast<std::size_t>(i) * k + q) * c + j] -
                    b.data()[static_cast<std::size_t>(i) * c + j];
    return make_op<T>("sub_bcast_k", a.shape(), std::move(out), {a, b}, [m, k, c](TensorNode<T>& node) {
        accum_input(node, 0, node.grad);
        if (node.inputs[1]->requires_grad) {
            std::vector<T> g(static_cast<std::size_t>(m) * c, T(0));
            for (int i = 0; i < m; ++i)
                for (int q = 0; q < k; ++q)
                    for (int j = 0; j < c; ++j)
                        g[static_cast<std::size_t>(i) * c + j] -=
                            node.grad[(static_cast<std::size_t>(i) * k + q) * c + j];
            accum_input(node, 1, g);
        }
    });
}

template <class T>
Tensor<T> concat_last(const std::vector<Tensor<T>>& xs) {
    if (xs.empty()) throw shape_error("concat_last: empty input list");
    const int rank = xs[0].rank();
    std::size_t rows = 1;
    for (int d = 0; d + 1 < rank; ++d) rows *= static_cast<std::size_t>(xs[0].dim(d));
    int total_c = 0;
    std::vector<int> widths;
    for (const auto& x : xs) {
        if (x.rank() != rank)
            throw shape_error("concat_last: rank mismatch " + shape_str(x.shape()) + " vs " +
                              shape_str(xs[0].shape()));
        for (int d = 0; d + 1 < rank; ++d)
            if (x.dim(d) != xs[0].dim(d))
                throw shape_error("concat_last: leading dims disagree, " + shape_str(x.shape()) +
                                  " vs " + shape_str(xs[0].shape()));
        widths.push_back(x.dim(rank - 1));
        total_c += x.dim(rank - 1);
    }
    std::vector<int> shape = xs[0].shape();
    shape[static_cast<std::size_t>(rank - 1)] = total_c;
    std::vector<T> out(rows * static_cast<std::size_t>(total_c));
    int off = 0;
    for (std::size_t t = 0; t < xs.size(); ++t) {
        const int w = widths[t];
        for (std::size_t r = 0; r < rows; ++r)
            std::copy_n(xs[t].data().data() + r * w, w,
                        out.data() + r * total_c + off);
        off += w;
    }
    return make_op<T>("concat_last", std::move(shape), std::move(out), xs,
                      [rows, total_c, widths](TensorNode<T>& node) {
                          int off = 0;
                          for (std::size_t t = 0; t < node.inputs.size(); ++t) {
                              const int w = widths[t];
                              auto& in = *node.inputs[t];
                              if (in.requires_grad) {
                                  in.ensure_grad();
                                  for (std::size_t r = 0; r < rows; ++r)
                                      for (int j = 0; j < w; ++j)
                                          in.grad[r * w + j] += node.grad[r * total_c + off + j];
                              }
                              off += w;
                          }
                      });
}

template <class T>
Tensor<T> reshape(const Tensor<T>& x, std::vector<int> shape) {
    if (shape_numel(shape) != x.numel())
        throw shape_error("reshape: cannot view " + shape_str(x.shape()) + " as " +
                          shape_str(shape));
    return make_op<T>("reshape", std::move(shape), x.data(), {x}, [](TensorNode<T>& node) {
        accum_input(node, 0, node.grad);
    });
}

template <class T>
Tensor<T> sum_all(const Tensor<T>& x) {
    T acc = 0;
    for (const T v : x.data()) acc += v;
    return make_op<T>("sum_all", {1}, {acc}, {x}, [](TensorNode<T>& node) {
        if (!node.inputs[0]->requires_grad) return;
        std::vector<T> g(node.inputs[0]->data.size(), node.grad[0]);
        accum_input(node, 0, g);
    });
}

template <class T>
Tensor<T> sum_rows(const Tensor<T>& x) {
    require_rank(x, 2, "sum_rows");
    const int n = x.dim(0), c = x.dim(1);
    std::vector<T> out(static_cast<std::size_t>(c), T(0));
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < c; ++j) out[j] += x.data()[static_cast<std::size_t>(i) * c + j];
    return make_op<T>("sum_rows", {1, c}, std::move(out), {x}, [n, c](TensorNode<T>& node) {
        if (!node.inputs[0]->requires_grad) return;
        std::vector<T> g(static_cast<std::size_t>(n) * c);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < c; ++j) g[static_cast<std::size_t>(i) * c + j] = node.grad[j];
        accum_input(node, 0, g);
    });
}

template <class T>
Tensor<T> sum_cols(const Tensor<T>& x) {
    require_rank(x, 2, "sum_cols");
    const int n = x.dim(0), c = x.dim(1);
    std::vector<T> out(static_cast<std::size_t>(n), T(0));
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < c; ++j) out[i] += x.data()[static_cast<std::size_t>(i) * c + j];
    return make_op<T>("sum_cols", {n, 1}, std::move(out), {x}, [n, c](TensorNode<T>& node) {
        if (!node.inputs[0]->requires_grad) return;
        std::vector<T> g(static_cast<std::size_t>(n) * c);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < c; ++j) g[static_cast<std::size_t>(i) * c + j] = node.grad[i];
        accum_input(node, 0, g);
    });
}

// ---- explicit instantiations --------------------------------------------------

#define EGOFLOW_INSTANTIATE_TENSOR(T)                                                        \
    template class Tensor<T>;                                                                \
    template Tensor<T> make_op<T>(const char*, std::vector<int>, std::vector<T>,             \
                                  std::vector<Tensor<T>>,                                    \
                                  std::function<void(TensorNode<T>&)>);                      \
    template void accum_input<T>(TensorNode<T>&, std::size_t, const std::vector<T>&);        \
    template void backward<T>(const Tensor<T>&);                                             \
    template void zero_grads<T>(const Tensor<T>&);                                           \
    template Tensor<T> stop_gradient<T>(const Tensor<T>&);                                   \
    template Tensor<T> matmul<T>(const Tensor<T>&, const Tensor<T>&);                        \
    template Tensor<T> transpose<T>(const Tensor<T>&);                                       \
    template Tensor<T> linear<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);      \
    template Tensor<T> add<T>(const Tensor<T>&, const Tensor<T>&);                           \
    template Tensor<T> sub<T>(const Tensor<T>&, const Tensor<T>&);                           \
    template Tensor<T> mul<T>(const Tensor<T>&, const Tensor<T>&);                           \
    template Tensor<T> scale<T>(const Tensor<T>&, T);                                        \
    template Tensor<T> add_rowvec<T>(const Tensor<T>&, const Tensor<T>&);                    \
    template Tensor<T> mul_rowwise<T>(const Tensor<T>&, const Tensor<T>&);                   \
    template Tensor<T> div_scalar<T>(const Tensor<T>&, const Tensor<T>&);                    \
    template Tensor<T> leaky_relu<T>(const Tensor<T>&, T);                                   \
    template Tensor<T> sigmoid<T>(const Tensor<T>&);                                         \
    template Tensor<T> softplus<T>(const Tensor<T>&);                                        \
    template Tensor<T> sqrt0<T>(const Tensor<T>&);                                           \
    template Tensor<T> abs_val<T>(const Tensor<T>&);                                         \
    template Tensor<T> softmax_last<T>(const Tensor<T>&);                                    \
    template Tensor<T> gather_rows<T>(const Tensor<T>&, const std::vector<int>&);            \
    template Tensor<T> gather_neighbors<T>(const Tensor<T>&, const std::vector<int>&, int);  \
    template Tensor<T> reduce_max_k<T>(const Tensor<T>&);                                    \
    template Tensor<T> reduce_wsum_k<T>(const Tensor<T>&, const Tensor<T>&);                 \
    template Tensor<T> max_lastdim<T>(const Tensor<T>&);                                     \
    template Tensor<T> sub_bcast_k<T>(const Tensor<T>&, const Tensor<T>&);                   \
    template Tensor<T> concat_last<T>(const std::vector<Tensor<T>>&);                        \
    template Tensor<T> reshape<T>(const Tensor<T>&, std::vector<int>);                       \
    template Tensor<T> sum_all<T>(const Tensor<T>&);                                         \
    template Tensor<T> sum_rows<T>(const Tensor<T>&);                                        \
    template Tensor<T> sum_cols<T>(const Tensor<T>&);

EGOFLOW_INSTANTIATE_TENSOR(float)
EGOFLOW_INSTANTIATE_TENSOR(double)

#undef EGOFLOW_INSTANTIATE_TENSOR

}  // namespace egoflow
