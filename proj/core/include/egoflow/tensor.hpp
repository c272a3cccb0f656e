#pragma once

// Minimal reverse-mode automatic differentiation over dense row-major arrays.
// The operator set is exactly what the scene-flow network needs: dense linear
// layers, gathers/reductions over neighbor tables, a handful of pointwise
// nonlinearities, and a few small custom ops for the differentiable rigid fit.
//
// Tensors are immutable once created (training updates leaf data in place
// between steps). Graphs are built per forward pass and discarded.

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "egoflow/errors.hpp"

namespace egoflow {

template <class T>
struct TensorNode {
    std::vector<int> shape;
    std::vector<T> data;
    std::vector<T> grad;  // lazily allocated, same length as data
    bool requires_grad = false;
    const char* op = "leaf";
    std::vector<std::shared_ptr<TensorNode<T>>> inputs;
    std::function<void(TensorNode<T>&)> backward_fn;

    std::size_t numel() const { return data.size(); }

    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), T(0));
    }
};

std::string shape_str(const std::vector<int>& shape);
std::size_t shape_numel(const std::vector<int>& shape);

/// Handle to a node in the gradient graph. Cheap to copy.
template <class T>
class Tensor {
  public:
    using Node = TensorNode<T>;

    Tensor() = default;

    static Tensor from(std::vector<int> shape, std::vector<T> data, bool requires_grad = false);
    static Tensor zeros(std::vector<int> shape, bool requires_grad = false);
    static Tensor full(std::vector<int> shape, T value);
    static Tensor scalar(T value);

    bool defined() const { return node_ != nullptr; }
    const std::vector<int>& shape() const { return node_->shape; }
    int rank() const { return static_cast<int>(node_->shape.size()); }
    int dim(int i) const { return node_->shape[static_cast<std::size_t>(i)]; }
    std::size_t numel() const { return node_->numel(); }
    bool requires_grad() const { return node_ && node_->requires_grad; }

    const std::vector<T>& data() const { return node_->data; }
    /// In-place access for leaf updates (optimizer steps, gradcheck probes).
    std::vector<T>& leaf_data() { return node_->data; }

    /// Gradient; allocates zeros on first access.
    const std::vector<T>& grad() const {
        node_->ensure_grad();
        return node_->grad;
    }

    T value() const {
        if (numel() != 1) throw shape_error("value(): tensor is not scalar, shape " + shape_str(shape()));
        return node_->data[0];
    }

    Node* node() const { return node_.get(); }
    const std::shared_ptr<Node>& ptr() const { return node_; }

    static Tensor wrap(std::shared_ptr<Node> n) {
        Tensor t;
        t.node_ = std::move(n);
        return t;
    }

  private:
    std::shared_ptr<Node> node_;
};

// ---- autograd mode ----------------------------------------------------------

bool autograd_enabled();

/// RAII guard disabling graph construction (eval / finite-difference probes).
class NoGradGuard {
  public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

  private:
    bool prev_;
};

/// Reverse-topological traversal from a scalar root; accumulates into .grad of
/// every reachable requires_grad node. Deterministic for a fixed graph.
template <class T>
void backward(const Tensor<T>& root);

/// Zero the gradients of every node reachable from root.
template <class T>
void zero_grads(const Tensor<T>& root);

// ---- operator set -----------------------------------------------------------

/// Identity forward, zero gradient to the operand.
template <class T>
Tensor<T> stop_gradient(const Tensor<T>& x);

template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);  // [m,k]x[k,n]
template <class T>
Tensor<T> transpose(const Tensor<T>& x);  // [m,n] -> [n,m]
/// y = x*w + b with b broadcast over rows. x:[N,Cin] w:[Cin,Cout] b:[Cout].
template <class T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b);

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <class T>
Tensor<T> scale(const Tensor<T>& x, T c);
/// x + r with r:[1,C] broadcast over the rows of x:[N,C].
template <class T>
Tensor<T> add_rowvec(const Tensor<T>& x, const Tensor<T>& r);
/// Row i of x scaled by s[i]. x:[N,C] (or [N,K,C] with s over N), s:[N] or [N,1].
template <class T>
Tensor<T> mul_rowwise(const Tensor<T>& x, const Tensor<T>& s);
/// Elementwise division by a scalar tensor.
template <class T>
Tensor<T> div_scalar(const Tensor<T>& x, const Tensor<T>& s);

template <class T>
Tensor<T> leaky_relu(const Tensor<T>& x, T negative_slope);
template <class T>
Tensor<T> sigmoid(const Tensor<T>& x);
/// log(1 + exp(x)), evaluated stably.
template <class T>
Tensor<T> softplus(const Tensor<T>& x);
/// sqrt with subgradient 0 at x = 0 (used for distance norms).
template <class T>
Tensor<T> sqrt0(const Tensor<T>& x);
template <class T>
Tensor<T> abs_val(const Tensor<T>& x);
/// Softmax over the last axis; rows sum to 1.
template <class T>
Tensor<T> softmax_last(const Tensor<T>& x);

/// out[m,:] = x[idx[m],:]. Backward scatter-adds.
template <class T>
Tensor<T> gather_rows(const Tensor<T>& x, const std::vector<int>& idx);
/// out[m,k,:] = x[idx[m*K+k],:] with idx an MxK table. Backward scatter-adds.
template <class T>
Tensor<T> gather_neighbors(const Tensor<T>& x, const std::vector<int>& idx, int K);

/// Per-channel max over the neighbor axis: [M,K,C] -> [M,C].
/// Subgradient routes to the first argmax on ties.
template <class T>
Tensor<T> reduce_max_k(const Tensor<T>& x);
/// Weighted sum over the neighbor axis: [M,K,C],[M,K] -> [M,C].
template <class T>
Tensor<T> reduce_wsum_k(const Tensor<T>& x, const Tensor<T>& w);
/// Max over the channel axis: [M,K,C] -> [M,K]. First-argmax tie rule.
template <class T>
Tensor<T> max_lastdim(const Tensor<T>& x);
/// a[m,k,:] - b[m,:] with b broadcast over the neighbor axis.
template <class T>
Tensor<T> sub_bcast_k(const Tensor<T>& a, const Tensor<T>& b);

/// Concatenate along the last axis; all leading dims must agree.
template <class T>
Tensor<T> concat_last(const std::vector<Tensor<T>>& xs);
template <class T>
Tensor<T> reshape(const Tensor<T>& x, std::vector<int> shape);

template <class T>
Tensor<T> sum_all(const Tensor<T>& x);  // -> scalar [1]
template <class T>
Tensor<T> sum_rows(const Tensor<T>& x);  // [N,C] -> [1,C]
template <class T>
Tensor<T> sum_cols(const Tensor<T>& x);  // [N,C] -> [N,1]

// Internal helper for defining ops; exposed for the custom ops in flow/layers.
template <class T>
Tensor<T> make_op(const char* tag, std::vector<int> shape, std::vector<T> data,
                  std::vector<Tensor<T>> inputs,
                  std::function<void(TensorNode<T>&)> backward_fn);

/// Accumulate g into the i-th input's grad if it participates in the graph.
template <class T>
void accum_input(TensorNode<T>& node, std::size_t i, const std::vector<T>& g);

}  // namespace egoflow
