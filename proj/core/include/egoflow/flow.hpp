#pragma once

// Coarse-to-fine scene-flow core: shared cost volume, hybrid warping,
// ego-motion branch (differentiable weighted rigid fit), scene-flow branch
// with feature update + dual attention refinement, and the final FG/BG merge.

#include <array>
#include <optional>
#include <utility>

#include "egoflow/backbone.hpp"

namespace egoflow {

template <class T>
struct CostVolumeOut {
    IndexTable nbr;       // correspondence set in Q_k
    Tensor<T> weights;    // attentive weights [M,K], rows sum to 1
    Tensor<T> corr_feat;  // F_hat [M, 3+C]: weighted sum of (geo diff | feat diff)
    Tensor<T> soft_pts;   // P_hat [M,3]: weighted sum of neighbor positions
};

/// Correspondence search + attentive aggregation. feature_space selects the
/// search metric: hybrid-feature rows at the coarsest scale, Euclidean
/// positions of the (warped) source at the upper scales. score is the shared
/// per-neighbor scoring layer ((3+C) -> 1) behind the softmax.
template <class T>
CostVolumeOut<T> cost_volume(const Tensor<T>& src_pts, const Tensor<T>& q_pts,
                             const Tensor<T>& hf_p, const Tensor<T>& hf_q,
                             const LinearLayer<T>& score, bool feature_space, int k);

/// Differentiable weighted rigid fit: returns (R [3,3], t [1,3]) minimizing
/// sum_i w_i ||R src_i + t - dst_i||^2. Gradients flow into dst and w (and
/// src when required) through the quaternion eigenvector formulation; the
/// forward result matches geometry::kabsch_weighted.
template <class T>
std::pair<Tensor<T>, Tensor<T>> kabsch_transform(const Tensor<T>& src, const Tensor<T>& dst,
                                                 const Tensor<T>& w);

/// R p + t for every row of pts.
template <class T>
Tensor<T> apply_rigid(const Tensor<T>& R, const Tensor<T>& t, const Tensor<T>& pts);

/// P_tilde = M_fg (P + S_up) + M_bg (R P + t); masks are hard constants.
template <class T>
Tensor<T> hybrid_warp(const Tensor<T>& p_pts, const Tensor<T>& flow_up, const Tensor<T>& R,
                      const Tensor<T>& t, const std::vector<T>& fg_mask);

/// S_final = M_fg S_0 + M_bg (R P + t - P).
template <class T>
Tensor<T> merge_final_flow(const Tensor<T>& flow0, const Tensor<T>& R, const Tensor<T>& t,
                           const Tensor<T>& p_pts, const std::vector<T>& fg_mask);

template <class T>
struct EgoResult {
    Tensor<T> R;  // [3,3]
    Tensor<T> t;  // [1,3]
    bool fallback_uniform = false;  // weight mass vanished (e.g. all-FG mask)
    bool degenerate_fit = false;    // rank-deficient support: translation-only fit
};

/// Confidence MLP on the correlation features, masked by M_bg, then the
/// differentiable rigid fit over all points. When the weighted support is
/// rank-deficient (soft correspondences collapsed, as happens before the
/// features have trained) the rotation is pinned to the identity and only
/// the optimal translation is fit.
template <class T>
EgoResult<T> ego_branch(const CostVolumeOut<T>& cv, const Tensor<T>& p_pts,
                        const std::vector<T>& bg_mask, const Mlp<T>& conf_mlp, bool training);

/// Graph-style update: K-NN in feature space over rows, gather, shared MLP,
/// max-reduce. Width-preserving.
template <class T>
Tensor<T> flow_feature_update(const Tensor<T>& corr, const Mlp<T>& mlp, int k, bool training);

/// Two sequential softmax-attention passes over each point's Euclidean
/// neighborhood: pass 1 scores neighbor feature differences, pass 2 re-scores
/// the aggregated result against the center feature. Width-preserving.
template <class T>
Tensor<T> dual_attention(const Tensor<T>& x, const IndexTable& nbr, const LinearLayer<T>& att1,
                         const LinearLayer<T>& att2);

template <class T>
struct ScaleOutputs {
    Tensor<T> warped;     // cost-volume source positions at this scale
    Tensor<T> flow;       // total flow S_k [l_k,3]
    Tensor<T> flow_feat;  // SF_k [l_k,64]
    Tensor<T> R, t;       // ego transform
    Tensor<T> cv_weights;
    Tensor<T> soft_pts;
    bool ego_fallback = false;
    bool ego_degenerate = false;
};

template <class T>
struct FlowOutputs {
    Pyramid pyr_p, pyr_q;
    std::array<Tensor<T>, 4> p_pos, q_pos;  // constant position tensors per scale
    SegMask<T> seg_p, seg_q;
    std::array<ScaleOutputs<T>, 4> scales;
    Tensor<T> final_flow;  // [N,3]

    RigidTransform transform(int level) const;
};

/// The complete multi-task network; parameters owned by an internal registry.
template <class T>
class SceneFlowNet {
  public:
    SceneFlowNet(const ModelConfig& cfg, std::uint64_t init_seed);

    FlowOutputs<T> forward(const PointCloud& p, const PointCloud& q, bool training) const;

    ParamRegistry<T>& params() { return reg_; }
    const ParamRegistry<T>& params() const { return reg_; }
    const ModelConfig& config() const { return cfg_; }
    const Backbone<T>& backbone() const { return backbone_; }

    /// Flow-branch modules at one scale (for targeted tests).
    const Mlp<T>& conf_mlp(int level) const { return conf_[level]; }

  private:
    ModelConfig cfg_;
    ParamRegistry<T> reg_;
    Backbone<T> backbone_;
    std::array<LinearLayer<T>, 4> cv_score_;          // (3+C_k) -> 1
    std::array<Mlp<T>, 4> conf_;                      // (3+C_k) -> 64 -> 1
    std::array<std::optional<Mlp<T>>, 4> update_;     // width-preserving
    std::array<std::optional<LinearLayer<T>>, 4> att1_, att2_;
    std::array<Mlp<T>, 4> sf_head_;                   // W_k -> 64
    std::array<Mlp<T>, 4> predictor_;                 // 64 -> 64 -> 32 -> 3
};

}  // namespace egoflow
