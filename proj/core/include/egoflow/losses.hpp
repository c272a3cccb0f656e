#pragma once

// Weakly-supervised objective: weighted segmentation cross-entropy +
// hierarchical ego-motion loss + per-scale masked Chamfer and smoothness
// terms. No flow ground truth is used anywhere.

#include <array>

#include "egoflow/flow.hpp"
#include "egoflow/synth.hpp"

namespace egoflow {

struct LossConfig {
    double gamma = 20.0;  // FG class weight in the segmentation loss
    double beta = 1.8;    // rotation weight in the ego loss
    std::array<double, 4> alpha{0.02, 0.04, 0.08, 0.16};  // per-scale flow weights
    std::array<int, 4> smooth_k{16, 12, 8, 4};            // smoothness neighborhoods
    bool mask_losses = true;  // false: Chamfer/smoothness applied to all points
};

/// Weighted binary cross-entropy from logits (log-sum-exp stable form):
/// mean_i [ gamma y_i softplus(-z_i) + (1 - y_i) softplus(z_i) ].
template <class T>
Tensor<T> seg_loss(const Tensor<T>& logits, const std::vector<std::uint8_t>& labels, T gamma);

/// (1/4) sum_k [ beta ||R_k^T R - I||_F + ||t_k - t||_2 ].
template <class T>
Tensor<T> ego_loss(const std::array<Tensor<T>, 4>& rot, const std::array<Tensor<T>, 4>& trans,
                   const RigidTransform& gt, T beta);

/// Bidirectional Chamfer with the outer sums weighted by the FG masks; the
/// inner min ranges over all points of the opposite cloud. Subgradient routes
/// to the argmin neighbor (ties to the lowest index).
template <class T>
Tensor<T> chamfer_masked(const Tensor<T>& warped, const Tensor<T>& q_pts,
                         const std::vector<T>& mask_p, const std::vector<T>& mask_q);

/// sum over masked points of (1/N_k) sum_{j in N_k(i)} ||S(j) - S(i)||_1,
/// neighborhoods on the unwarped positions, self excluded.
template <class T>
Tensor<T> smoothness_masked(const Tensor<T>& flow, const PointCloud& positions,
                            const std::vector<T>& fg_mask, int nk);

template <class T>
struct LossBreakdown {
    Tensor<T> total;  // scalar graph root
    double total_value = 0;
    double seg = 0;
    double ego = 0;
    std::array<double, 4> chamfer{};  // unweighted per-scale values
    std::array<double, 4> smooth{};
};

/// L = L_seg(P) + L_seg(Q) + L_ego + sum_k alpha_k (L_cd,k + L_sm,k).
/// Chamfer is evaluated on P_k + S_k with each scale's own prediction so
/// every scale receives a training signal. Masks are the predicted ones.
template <class T>
LossBreakdown<T> total_loss(const FlowOutputs<T>& out, const ScenePair& pair,
                            const LossConfig& cfg);

}  // namespace egoflow
