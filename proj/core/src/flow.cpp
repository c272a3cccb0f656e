#include "egoflow/flow.hpp"

#include <Eigen/Dense>
#include <cmath>

namespace egoflow {

// ---- custom ops for the differentiable rigid fit ------------------------------

namespace {

// Horn's 4x4 quaternion matrix is linear in the 3x3 cross-covariance. Each
// entry is a signed sum of covariance entries; the backward pass distributes
// gradients through the same table transposed.
struct QuatTerm {
    int i, j;    // entry of N (upper triangle)
    int a, b;    // entry of H
    double sign;
};
constexpr QuatTerm kQuatTerms[] = {
    {0, 0, 0, 0, +1}, {0, 0, 1, 1, +1}, {0, 0, 2, 2, +1},
    {0, 1, 1, 2, +1}, {0, 1, 2, 1, -1},
    {0, 2, 2, 0, +1}, {0, 2, 0, 2, -1},
    {0, 3, 0, 1, +1}, {0, 3, 1, 0, -1},
    {1, 1, 0, 0, +1}, {1, 1, 1, 1, -1}, {1, 1, 2, 2, -1},
    {1, 2, 0, 1, +1}, {1, 2, 1, 0, +1},
    {1, 3, 2, 0, +1}, {1, 3, 0, 2, +1},
    {2, 2, 0, 0, -1}, {2, 2, 1, 1, +1}, {2, 2, 2, 2, -1},
    {2, 3, 1, 2, +1}, {2, 3, 2, 1, +1},
    {3, 3, 0, 0, -1}, {3, 3, 1, 1, -1}, {3, 3, 2, 2, +1},
};

template <class T>
Tensor<T> quat_matrix(const Tensor<T>& h) {
    if (h.rank() != 2 || h.dim(0) != 3 || h.dim(1) != 3)
        throw shape_error("quat_matrix: expected [3,3], got " + shape_str(h.shape()));
    std::vector<T> n(16, T(0));
    for (const auto& t : kQuatTerms) {
        const T v = static_cast<T>(t.sign) * h.data()[t.a * 3 + t.b];
        n[t.i * 4 + t.j] += v;
        if (t.i != t.j) n[t.j * 4 + t.i] += v;
    }
    return make_op<T>("quat_matrix", {4, 4}, std::move(n), {h}, [](TensorNode<T>& node) {
        if (!node.inputs[0]->requires_grad) return;
        std::vector<T> gh(9, T(0));
        for (const auto& t : kQuatTerms) {
            T g = node.grad[t.i * 4 + t.j];
            if (t.i != t.j) g += node.grad[t.j * 4 + t.i];
            gh[t.a * 3 + t.b] += static_cast<T>(t.sign) * g;
        }
        accum_input(node, 0, gh);
    });
}

// Unit eigenvector of the largest eigenvalue of a symmetric 4x4 matrix.
// Backward via the pseudo-inverse of (lambda_max I - N) expressed in the
// eigenbasis; near-degenerate spectra are clamped for robustness.
template <class T>
Tensor<T> max_eigvec_sym4(const Tensor<T>& n) {
    if (n.rank() != 2 || n.dim(0) != 4 || n.dim(1) != 4)
        throw shape_error("max_eigvec_sym4: expected [4,4], got " + shape_str(n.shape()));
    Eigen::Matrix4d m;
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j) m(i, j) = static_cast<double>(n.data()[i * 4 + j]);
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix4d> es(m);
    const Eigen::Vector4d evals = es.eigenvalues();  // ascending
    Eigen::Matrix4d evecs = es.eigenvectors();
    // deterministic sign gauge: largest-magnitude component of q positive
    int pivot = 0;
    for (int i = 1; i < 4; ++i)
        if (std::abs(evecs(i, 3)) > std::abs(evecs(pivot, 3))) pivot = i;
    if (evecs(pivot, 3) < 0) evecs.col(3) = -evecs.col(3);

    std::vector<T> out(4);
    for (int i = 0; i < 4; ++i) out[i] = static_cast<T>(evecs(i, 3));
    std::array<double, 4> ev{evals(0), evals(1), evals(2), evals(3)};
    std::array<double, 16> V;
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j) V[i * 4 + j] = evecs(i, j);

    return make_op<T>("max_eigvec_sym4", {4}, std::move(out), {n},
                      [ev, V](TensorNode<T>& node) {
                          if (!node.inputs[0]->requires_grad) return;
                          // pinv(lambda I - N) g in the eigenbasis, with
                          // Lorentzian damping gap/(gap^2 + delta^2): a nearly
                          // repeated top eigenvalue means the fit is barely
                          // constrained and the raw inverse gap is a gradient
                          // bomb early in training.
                          const double lmax = ev[3];
                          const double delta = 1e-5 * std::max(1.0, std::abs(lmax));
                          double pg[4] = {0, 0, 0, 0};
                          for (int e = 0; e < 3; ++e) {
                              double dot = 0;
                              for (int i = 0; i < 4; ++i)
                                  dot += V[i * 4 + e] * static_cast<double>(node.grad[i]);
                              const double gap = lmax - ev[e];
                              const double coef = dot * gap / (gap * gap + delta * delta);
                              for (int i = 0; i < 4; ++i) pg[i] += coef * V[i * 4 + e];
                          }
                          std::vector<T> gn(16);
                          for (int i = 0; i < 4; ++i)
                              for (int j = 0; j < 4; ++j)
                                  gn[i * 4 + j] = static_cast<T>(pg[i] * V[j * 4 + 3]);
                          accum_input(node, 0, gn);
                      });
}

// Rotation matrix from a unit quaternion (w, x, y, z); unconstrained Jacobian
// in the backward (the eigenvector backward projects out the radial part).
template <class T>
Tensor<T> quat_to_rotmat(const Tensor<T>& q) {
    if (q.numel() != 4) throw shape_error("quat_to_rotmat: expected 4 values");
    const T w = q.data()[0], x = q.data()[1], y = q.data()[2], z = q.data()[3];
    std::vector<T> r{w * w + x * x - y * y - z * z, T(2) * (x * y - w * z), T(2) * (x * z + w * y),
                     T(2) * (x * y + w * z), w * w - x * x + y * y - z * z, T(2) * (y * z - w * x),
                     T(2) * (x * z - w * y), T(2) * (y * z + w * x), w * w - x * x - y * y + z * z};
    return make_op<T>("quat_to_rotmat", {3, 3}, std::move(r), {q}, [](TensorNode<T>& node) {
        if (!node.inputs[0]->requires_grad) return;
        const T w = node.inputs[0]->data[0], x = node.inputs[0]->data[1],
                y = node.inputs[0]->data[2], z = node.inputs[0]->data[3];
        const T* g = node.grad.data();
        std::vector<T> gq(4, T(0));
        // d/d(w,x,y,z) of each entry, times the upstream gradient
        gq[0] += T(2) * (g[0] * w - g[1] * z + g[2] * y + g[3] * z + g[4] * w - g[5] * x -
                         g[6] * y + g[7] * x + g[8] * w);
        gq[1] += T(2) * (g[0] * x + g[1] * y + g[2] * z + g[3] * y - g[4] * x - g[5] * w +
                         g[6] * z + g[7] * w - g[8] * x);
        gq[2] += T(2) * (-g[0] * y + g[1] * x + g[2] * w + g[3] * x + g[4] * y + g[5] * z -
                         g[6] * w + g[7] * z - g[8] * y);
        gq[3] += T(2) * (-g[0] * z - g[1] * w + g[2] * x + g[3] * w - g[4] * z + g[5] * y +
                         g[6] * x + g[7] * y + g[8] * z);
        accum_input(node, 0, gq);
    });
}

}  // namespace

template <class T>
std::pair<Tensor<T>, Tensor<T>> kabsch_transform(const Tensor<T>& src, const Tensor<T>& dst,
                                                 const Tensor<T>& w) {
    if (src.rank() != 2 || src.dim(1) != 3 || dst.shape() != src.shape())
        throw shape_error("kabsch_transform: src " + shape_str(src.shape()) + " vs dst " +
                          shape_str(dst.shape()));
    const int n = src.dim(0);
    if (static_cast<int>(w.numel()) != n)
        throw shape_error("kabsch_transform: weights " + shape_str(w.shape()) + " for " +
                          std::to_string(n) + " points");

    Tensor<T> wsum = sum_all(w);
    Tensor<T> cs = div_scalar(sum_rows(mul_rowwise(src, w)), wsum);  // [1,3]
    Tensor<T> cd = div_scalar(sum_rows(mul_rowwise(dst, w)), wsum);
    Tensor<T> xc = add_rowvec(src, scale(cs, T(-1)));
    Tensor<T> yc = add_rowvec(dst, scale(cd, T(-1)));
    Tensor<T> h = matmul(transpose(mul_rowwise(xc, w)), yc);  // [3,3]
    Tensor<T> q = max_eigvec_sym4(quat_matrix(h));
    Tensor<T> R = quat_to_rotmat(q);
    Tensor<T> t = sub(cd, matmul(cs, transpose(R)));
    return {R, t};
}

template <class T>
Tensor<T> apply_rigid(const Tensor<T>& R, const Tensor<T>& t, const Tensor<T>& pts) {
    return add_rowvec(matmul(pts, transpose(R)), reshape(t, {1, 3}));
}

// ---- cost volume ----------------------------------------------------------------

template <class T>
CostVolumeOut<T> cost_volume(const Tensor<T>& src_pts, const Tensor<T>& q_pts,
                             const Tensor<T>& hf_p, const Tensor<T>& hf_q,
                             const LinearLayer<T>& score, bool feature_space, int k) {
    const int m = src_pts.dim(0);
    const int nq = q_pts.dim(0);
    const int c = hf_p.dim(1);
    if (hf_q.dim(1) != c)
        throw shape_error("cost_volume: feature widths disagree, " + shape_str(hf_p.shape()) +
                          " vs " + shape_str(hf_q.shape()));
    const int kk = std::min(k, nq);

    CostVolumeOut<T> out;
    if (feature_space) {
        out.nbr = knn(hf_p.data().data(), m, hf_q.data().data(), nq, c, kk);
    } else {
        out.nbr = knn(src_pts.data().data(), m, q_pts.data().data(), nq, 3, kk);
    }

    Tensor<T> q_nbr = gather_neighbors(q_pts, out.nbr.indices, kk);   // [m,kk,3]
    Tensor<T> geo = sub_bcast_k(q_nbr, src_pts);                      // geometric differences
    Tensor<T> hf_nbr = gather_neighbors(hf_q, out.nbr.indices, kk);
    Tensor<T> feat = sub_bcast_k(hf_nbr, hf_p);                       // feature differences
    Tensor<T> cat = concat_last<T>({geo, feat});                      // [m,kk,3+c]

    Tensor<T> scores = score.forward(reshape(cat, {m * kk, 3 + c}));
    out.weights = softmax_last(reshape(scores, {m, kk}));             // [m,kk]
    out.corr_feat = reduce_wsum_k(cat, out.weights);                  // [m,3+c]
    out.soft_pts = reduce_wsum_k(q_nbr, out.weights);                 // [m,3]
    return out;
}

// ---- branch pieces ----------------------------------------------------------------

namespace {

// Decides whether a rotation is identifiable from the weighted support:
// the cross-covariance must have rank >= 2 and genuine correlation strength.
// The normalized top singular value separates real correspondence fields
// (~0.3-0.5) from collapsed or noise matches (~1/(3 sqrt(n))); fitting a
// rotation to the latter yields an arbitrary result that poisons the
// coarse-to-fine warp and traps training.
template <class T>
bool rigid_support_ok(const Tensor<T>& src, const Tensor<T>& dst, const Tensor<T>& w) {
    const int n = src.dim(0);
    double wsum = 0;
    double cs[3] = {0, 0, 0}, cd[3] = {0, 0, 0};
    for (int i = 0; i < n; ++i) {
        const double wi = static_cast<double>(w.data()[i]);
        wsum += wi;
        for (int c = 0; c < 3; ++c) {
            cs[c] += wi * static_cast<double>(src.data()[i * 3 + c]);
            cd[c] += wi * static_cast<double>(dst.data()[i * 3 + c]);
        }
    }
    if (!(wsum > 0)) return false;
    for (int c = 0; c < 3; ++c) {
        cs[c] /= wsum;
        cd[c] /= wsum;
    }
    Eigen::Matrix3d h = Eigen::Matrix3d::Zero();
    double src_sq = 0, dst_sq = 0;
    for (int i = 0; i < n; ++i) {
        const double wi = static_cast<double>(w.data()[i]);
        double xs[3], ys[3];
        for (int c = 0; c < 3; ++c) {
            xs[c] = static_cast<double>(src.data()[i * 3 + c]) - cs[c];
            ys[c] = static_cast<double>(dst.data()[i * 3 + c]) - cd[c];
        }
        src_sq += wi * (xs[0] * xs[0] + xs[1] * xs[1] + xs[2] * xs[2]);
        dst_sq += wi * (ys[0] * ys[0] + ys[1] * ys[1] + ys[2] * ys[2]);
        for (int a = 0; a < 3; ++a)
            for (int b = 0; b < 3; ++b) h(a, b) += wi * xs[a] * ys[b];
    }
    if (!(src_sq > 0) || !(dst_sq > 0)) return false;
    Eigen::JacobiSVD<Eigen::Matrix3d> svd(h);
    const Eigen::Vector3d sv = svd.singularValues();
    const double ncc = sv(0) / std::sqrt(src_sq * dst_sq);
    return ncc >= 0.2 && sv(1) >= 1e-6 * std::max(1.0, sv(0));
}

// Best-fit pure translation: t = weighted centroid difference, R = I.
template <class T>
std::pair<Tensor<T>, Tensor<T>> translation_fit(const Tensor<T>& src, const Tensor<T>& dst,
                                                const Tensor<T>& w) {
    Tensor<T> wsum = sum_all(w);
    Tensor<T> cs = div_scalar(sum_rows(mul_rowwise(src, w)), wsum);
    Tensor<T> cd = div_scalar(sum_rows(mul_rowwise(dst, w)), wsum);
    std::vector<T> eye(9, T(0));
    eye[0] = eye[4] = eye[8] = T(1);
    return {Tensor<T>::from({3, 3}, eye), sub(cd, cs)};
}

}  // namespace

template <class T>
EgoResult<T> ego_branch(const CostVolumeOut<T>& cv, const Tensor<T>& p_pts,
                        const std::vector<T>& bg_mask, const Mlp<T>& conf_mlp, bool training) {
    const int m = p_pts.dim(0);
    Tensor<T> conf = reshape(sigmoid(conf_mlp.forward(cv.corr_feat, training)), {m});
    Tensor<T> w = bg_mask.empty() ? conf : mul(conf, constant_vec(bg_mask));

    EgoResult<T> out;
    T mass = T(0);
    for (const T v : w.data()) mass += v;
    if (!(mass > T(1e-12))) {
        // degenerate scene (e.g. everything masked FG): uniform weights
        w = Tensor<T>::full({m}, T(1));
        out.fallback_uniform = true;
    }
    if (rigid_support_ok(p_pts, cv.soft_pts, w)) {
        auto [R, t] = kabsch_transform(p_pts, cv.soft_pts, w);
        out.R = R;
        out.t = t;
    } else {
        // collapsed correspondences: the rotation is unidentifiable, so fit
        // the translation only instead of emitting an arbitrary rotation
        auto [R, t] = translation_fit(p_pts, cv.soft_pts, w);
        out.R = R;
        out.t = t;
        out.degenerate_fit = true;
    }
    return out;
}

template <class T>
Tensor<T> flow_feature_update(const Tensor<T>& corr, const Mlp<T>& mlp, int k, bool training) {
    const int m = corr.dim(0), c = corr.dim(1);
    const int kk = std::min(k, m);
    IndexTable nbr = knn(corr.data().data(), m, corr.data().data(), m, c, kk);
    Tensor<T> g = gather_neighbors(corr, nbr.indices, kk);
    Tensor<T> f = mlp.forward(reshape(g, {m * kk, c}), training);
    return reduce_max_k(reshape(f, {m, kk, f.dim(1)}));
}

template <class T>
Tensor<T> dual_attention(const Tensor<T>& x, const IndexTable& nbr, const LinearLayer<T>& att1,
                         const LinearLayer<T>& att2) {
    const int m = x.dim(0), c = x.dim(1);
    const int kk = nbr.k;
    if (nbr.rows() != m)
        throw shape_error("dual_attention: neighbor rows " + std::to_string(nbr.rows()) +
                          " vs features " + shape_str(x.shape()));
    // pass 1: score neighbors by feature difference to the center
    Tensor<T> gx = gather_neighbors(x, nbr.indices, kk);
    Tensor<T> s1 = att1.forward(reshape(sub_bcast_k(gx, x), {m * kk, c}));
    Tensor<T> a1 = softmax_last(reshape(s1, {m, kk}));
    Tensor<T> y = reduce_wsum_k(gx, a1);
    // pass 2: re-score the aggregated result against the center feature
    Tensor<T> gy = gather_neighbors(y, nbr.indices, kk);
    Tensor<T> s2 = att2.forward(reshape(sub_bcast_k(gy, x), {m * kk, c}));
    Tensor<T> a2 = softmax_last(reshape(s2, {m, kk}));
    return reduce_wsum_k(gy, a2);
}

template <class T>
Tensor<T> hybrid_warp(const Tensor<T>& p_pts, const Tensor<T>& flow_up, const Tensor<T>& R,
                      const Tensor<T>& t, const std::vector<T>& fg_mask) {
    std::vector<T> bg(fg_mask.size());
    for (std::size_t i = 0; i < bg.size(); ++i) bg[i] = T(1) - fg_mask[i];
    Tensor<T> fg_part = mul_rowwise(add(p_pts, flow_up), constant_vec(fg_mask));
    Tensor<T> bg_part = mul_rowwise(apply_rigid(R, t, p_pts), constant_vec(bg));
    return add(fg_part, bg_part);
}

template <class T>
Tensor<T> merge_final_flow(const Tensor<T>& flow0, const Tensor<T>& R, const Tensor<T>& t,
                           const Tensor<T>& p_pts, const std::vector<T>& fg_mask) {
    std::vector<T> bg(fg_mask.size());
    for (std::size_t i = 0; i < bg.size(); ++i) bg[i] = T(1) - fg_mask[i];
    Tensor<T> ego_flow = sub(apply_rigid(R, t, p_pts), p_pts);
    return add(mul_rowwise(flow0, constant_vec(fg_mask)),
               mul_rowwise(ego_flow, constant_vec(bg)));
}

// ---- full network -----------------------------------------------------------------

template <class T>
RigidTransform FlowOutputs<T>::transform(int level) const {
    RigidTransform out;
    const auto& R = scales[level].R.data();
    const auto& t = scales[level].t.data();
    for (int i = 0; i < 9; ++i) out.R[i] = static_cast<double>(R[i]);
    for (int i = 0; i < 3; ++i) out.t[i] = static_cast<double>(t[i]);
    return out;
}

template <class T>
SceneFlowNet<T>::SceneFlowNet(const ModelConfig& cfg, std::uint64_t init_seed)
    : cfg_(cfg), reg_(init_seed), backbone_(reg_, "backbone", cfg) {
    for (int l = 0; l < 4; ++l) {
        const std::string p = "flow.l" + std::to_string(l);
        const int cv_width = 3 + cfg.channels[l];
        cv_score_[l] = LinearLayer<T>(reg_, p + ".cv_score", cv_width, 1);
        conf_[l] = Mlp<T>(reg_, p + ".conf", {cv_width, 64, 1}, /*final_plain=*/true);
        if (cfg.use_feature_update)
            update_[l].emplace(reg_, p + ".update", std::vector<int>{cv_width, cv_width}, false);
        const int refine_width = cv_width + cfg.channels[l] + cfg.sf_width + 3;
        if (cfg.use_attention_refine) {
            att1_[l].emplace(reg_, p + ".att1", refine_width, 1);
            att2_[l].emplace(reg_, p + ".att2", refine_width, 1);
        }
        sf_head_[l] = Mlp<T>(reg_, p + ".sf", {refine_width, cfg.sf_width}, false);
        predictor_[l] = Mlp<T>(reg_, p + ".pred", {cfg.sf_width, 64, 32, 3}, /*final_plain=*/true);
    }
}

template <class T>
FlowOutputs<T> SceneFlowNet<T>::forward(const PointCloud& p, const PointCloud& q,
                                        bool training) const {
    FlowOutputs<T> out;
    out.pyr_p = build_pyramid(p, cfg_.knn_k);
    out.pyr_q = build_pyramid(q, cfg_.knn_k);
    for (int l = 0; l < 4; ++l) {
        out.p_pos[l] = points_tensor<T>(out.pyr_p.levels[l].points);
        out.q_pos[l] = points_tensor<T>(out.pyr_q.levels[l].points);
    }

    // Siamese feature extraction on both frames
    auto enc_p = backbone_.encode(out.pyr_p, training);
    auto enc_q = backbone_.encode(out.pyr_q, training);
    out.seg_p = backbone_.segmentation(out.pyr_p, backbone_.decode(out.pyr_p, enc_p, training),
                                       training);
    out.seg_q = backbone_.segmentation(out.pyr_q, backbone_.decode(out.pyr_q, enc_q, training),
                                       training);

    std::array<Tensor<T>, 4> hf_p, hf_q;
    if (cfg_.use_hybrid_features) {
        auto ctx_p = backbone_.context_encode(out.pyr_p, training);
        auto ctx_q = backbone_.context_encode(out.pyr_q, training);
        hf_p = backbone_.hybrid_features(enc_p, ctx_p, out.seg_p, cfg_.use_stop_grad);
        hf_q = backbone_.hybrid_features(enc_q, ctx_q, out.seg_q, cfg_.use_stop_grad);
    } else {
        hf_p = enc_p;
        hf_q = enc_q;
    }

    for (int l = 3; l >= 0; --l) {
        auto& sc = out.scales[l];
        Tensor<T> flow_up, sf_up;
        if (l == 3) {
            // coarsest scale: no warping, correspondences found in feature space
            sc.warped = out.p_pos[3];
            flow_up = Tensor<T>::zeros({out.p_pos[3].dim(0), 3});
            sf_up = Tensor<T>::zeros({out.p_pos[3].dim(0), cfg_.sf_width});
        } else {
            const auto& coarser = out.scales[l + 1];
            const auto& us = out.pyr_p.us[l];
            flow_up = gather_rows(coarser.flow, us);
            sf_up = gather_rows(coarser.flow_feat, us);
            if (cfg_.use_hybrid_warp) {
                sc.warped = hybrid_warp(out.p_pos[l], flow_up, coarser.R, coarser.t,
                                        out.seg_p.fg[l]);
            } else {
                sc.warped = add(out.p_pos[l], flow_up);
            }
        }

        CostVolumeOut<T> cv = cost_volume(sc.warped, out.q_pos[l], hf_p[l], hf_q[l],
                                          cv_score_[l], /*feature_space=*/l == 3, cfg_.knn_k);
        sc.cv_weights = cv.weights;
        sc.soft_pts = cv.soft_pts;

        EgoResult<T> ego = ego_branch(cv, out.p_pos[l],
                                      cfg_.use_mask_in_ego ? out.seg_p.bg(l) : std::vector<T>{},
                                      conf_[l], training);
        sc.R = ego.R;
        sc.t = ego.t;
        sc.ego_fallback = ego.fallback_uniform;
        sc.ego_degenerate = ego.degenerate_fit;

        Tensor<T> f = update_[l] ? flow_feature_update(cv.corr_feat, *update_[l], cfg_.knn_k,
                                                       training)
                                 : cv.corr_feat;
        Tensor<T> refine_in = concat_last<T>({f, hf_p[l], sf_up, flow_up});
        if (att1_[l])
            refine_in = dual_attention(refine_in, out.pyr_p.levels[l].neighbors, *att1_[l],
                                       *att2_[l]);
        sc.flow_feat = sf_head_[l].forward(refine_in, training);
        Tensor<T> residual = predictor_[l].forward(sc.flow_feat, training);
        sc.flow = (l == 3) ? residual : add(flow_up, residual);
    }

    out.final_flow = merge_final_flow(out.scales[0].flow, out.scales[0].R, out.scales[0].t,
                                      out.p_pos[0], out.seg_p.fg[0]);
    return out;
}

// ---- instantiations ------------------------------------------------------------

#define EGOFLOW_INSTANTIATE_FLOW(T)                                                          \
    template struct CostVolumeOut<T>;                                                        \
    template CostVolumeOut<T> cost_volume<T>(const Tensor<T>&, const Tensor<T>&,             \
                                             const Tensor<T>&, const Tensor<T>&,             \
                                             const LinearLayer<T>&, bool, int);              \
    template std::pair<Tensor<T>, Tensor<T>> kabsch_transform<T>(                            \
        const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                               \
    template Tensor<T> apply_rigid<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&); \
    template EgoResult<T> ego_branch<T>(const CostVolumeOut<T>&, const Tensor<T>&,           \
                                        const std::vector<T>&, const Mlp<T>&, bool);         \
    template Tensor<T> flow_feature_update<T>(const Tensor<T>&, const Mlp<T>&, int, bool);   \
    template Tensor<T> dual_attention<T>(const Tensor<T>&, const IndexTable&,                \
                                         const LinearLayer<T>&, const LinearLayer<T>&);      \
    template Tensor<T> hybrid_warp<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,  \
                                      const Tensor<T>&, const std::vector<T>&);              \
    template Tensor<T> merge_final_flow<T>(const Tensor<T>&, const Tensor<T>&,               \
                                           const Tensor<T>&, const Tensor<T>&,               \
                                           const std::vector<T>&);                           \
    template struct FlowOutputs<T>;                                                          \
    template class SceneFlowNet<T>;

EGOFLOW_INSTANTIATE_FLOW(float)
EGOFLOW_INSTANTIATE_FLOW(double)

#undef EGOFLOW_INSTANTIATE_FLOW

}  // namespace egoflow
