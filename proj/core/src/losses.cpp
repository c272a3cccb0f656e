#include "egoflow/losses.hpp"

#include <cmath>

namespace egoflow {

template <class T>
Tensor<T> seg_loss(const Tensor<T>& logits, const std::vector<std::uint8_t>& labels, T gamma) {
    const int n = logits.dim(0);
    if (static_cast<std::size_t>(n) != labels.size())
        throw shape_error("seg_loss: " + std::to_string(labels.size()) + " labels for " +
                          std::to_string(n) + " logits");
    std::vector<T> a(static_cast<std::size_t>(n)), b(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        a[i] = labels[i] ? gamma : T(0);
        b[i] = labels[i] ? T(0) : T(1);
    }
    Tensor<T> z = reshape(logits, {n});
    Tensor<T> pos = mul(softplus(scale(z, T(-1))), constant_vec(a));
    Tensor<T> neg = mul(softplus(z), constant_vec(b));
    return scale(sum_all(add(pos, neg)), T(1) / static_cast<T>(n));
}

template <class T>
Tensor<T> ego_loss(const std::array<Tensor<T>, 4>& rot, const std::array<Tensor<T>, 4>& trans,
                   const RigidTransform& gt, T beta) {
    std::vector<T> rg(9), tg(3), eye(9, T(0));
    for (int i = 0; i < 9; ++i) rg[i] = static_cast<T>(gt.R[i]);
    for (int i = 0; i < 3; ++i) tg[i] = static_cast<T>(gt.t[i]);
    eye[0] = eye[4] = eye[8] = T(1);
    Tensor<T> r_gt = Tensor<T>::from({3, 3}, rg);
    Tensor<T> t_gt = Tensor<T>::from({1, 3}, tg);
    Tensor<T> identity = Tensor<T>::from({3, 3}, eye);

    Tensor<T> acc = Tensor<T>::zeros({1});
    for (int k = 0; k < 4; ++k) {
        Tensor<T> m = sub(matmul(transpose(rot[k]), r_gt), identity);
        Tensor<T> rot_term = sqrt0(sum_all(mul(m, m)));  // Frobenius norm
        Tensor<T> d = sub(reshape(trans[k], {1, 3}), t_gt);
        Tensor<T> t_term = sqrt0(sum_all(mul(d, d)));
        acc = add(acc, add(scale(rot_term, beta), t_term));
    }
    return scale(acc, T(0.25));
}

template <class T>
Tensor<T> chamfer_masked(const Tensor<T>& warped, const Tensor<T>& q_pts,
                         const std::vector<T>& mask_p, const std::vector<T>& mask_q) {
    const int n = warped.dim(0);
    const int m = q_pts.dim(0);
    if (mask_p.size() != static_cast<std::size_t>(n) ||
        mask_q.size() != static_cast<std::size_t>(m))
        throw shape_error("chamfer_masked: mask sizes disagree with clouds");

    // forward direction: each warped point to its nearest q
    IndexTable nn_pq = knn(warped.data().data(), n, q_pts.data().data(), m, 3, 1);
    Tensor<T> d1 = sub(warped, gather_rows(q_pts, nn_pq.indices));
    Tensor<T> dist1 = sqrt0(sum_cols(mul(d1, d1)));  // [n,1]
    Tensor<T> fwd = sum_all(mul_rowwise(dist1, constant_vec(mask_p)));

    // backward direction: each q point to its nearest warped point
    IndexTable nn_qp = knn(q_pts.data().data(), m, warped.data().data(), n, 3, 1);
    Tensor<T> d2 = sub(gather_rows(warped, nn_qp.indices), q_pts);
    Tensor<T> dist2 = sqrt0(sum_cols(mul(d2, d2)));  // [m,1]
    Tensor<T> bwd = sum_all(mul_rowwise(dist2, constant_vec(mask_q)));

    return add(fwd, bwd);
}

template <class T>
Tensor<T> smoothness_masked(const Tensor<T>& flow, const PointCloud& positions,
                            const std::vector<T>& fg_mask, int nk) {
    const int n = flow.dim(0);
    if (positions.size() != static_cast<std::size_t>(n) ||
        fg_mask.size() != static_cast<std::size_t>(n))
        throw shape_error("smoothness_masked: sizes disagree");
    const int avail = std::min(nk, n - 1);
    if (avail < 1) return Tensor<T>::zeros({1});

    // self-excluded neighborhoods on the unwarped positions
    IndexTable table = knn(positions, positions, avail + 1);
    std::vector<int> idx(static_cast<std::size_t>(n) * avail);
    for (int i = 0; i < n; ++i) {
        int out = 0;
        for (int j = 0; j <= avail && out < avail; ++j) {
            const int v = table.at(i, j);
            if (v == i) continue;
            idx[static_cast<std::size_t>(i) * avail + out++] = v;
        }
    }
    Tensor<T> gathered = gather_neighbors(flow, idx, avail);      // [n,avail,3]
    Tensor<T> diff = abs_val(sub_bcast_k(gathered, flow));
    Tensor<T> per_point = sum_cols(reshape(diff, {n, avail * 3}));  // [n,1]
    Tensor<T> scaled = scale(per_point, T(1) / static_cast<T>(avail));
    return sum_all(mul_rowwise(scaled, constant_vec(fg_mask)));
}

template <class T>
LossBreakdown<T> total_loss(const FlowOutputs<T>& out, const ScenePair& pair,
                            const LossConfig& cfg) {
    LossBreakdown<T> lb;

    Tensor<T> seg = add(seg_loss(out.seg_p.logits, pair.labels_p, static_cast<T>(cfg.gamma)),
                        seg_loss(out.seg_q.logits, pair.labels_q, static_cast<T>(cfg.gamma)));
    lb.seg = static_cast<double>(seg.value());

    std::array<Tensor<T>, 4> rot, trans;
    for (int k = 0; k < 4; ++k) {
        rot[k] = out.scales[k].R;
        trans[k] = out.scales[k].t;
    }
    Tensor<T> ego = ego_loss(rot, trans, pair.t_gt, static_cast<T>(cfg.beta));
    lb.ego = static_cast<double>(ego.value());

    Tensor<T> total = add(seg, ego);
    for (int k = 0; k < 4; ++k) {
        const int lp = out.p_pos[k].dim(0);
        const int lq = out.q_pos[k].dim(0);
        std::vector<T> mp = cfg.mask_losses ? out.seg_p.fg[k] : std::vector<T>(lp, T(1));
        std::vector<T> mq = cfg.mask_losses ? out.seg_q.fg[k] : std::vector<T>(lq, T(1));

        Tensor<T> warped = add(out.p_pos[k], out.scales[k].flow);
        Tensor<T> cd = chamfer_masked(warped, out.q_pos[k], mp, mq);
        Tensor<T> sm = smoothness_masked(out.scales[k].flow, out.pyr_p.levels[k].points, mp,
                                         cfg.smooth_k[k]);
        lb.chamfer[k] = static_cast<double>(cd.value());
        lb.smooth[k] = static_cast<double>(sm.value());
        total = add(total, scale(add(cd, sm), static_cast<T>(cfg.alpha[k])));
    }
    lb.total = total;
    lb.total_value = static_cast<double>(total.value());
    return lb;
}

#define EGOFLOW_INSTANTIATE_LOSSES(T)                                                          \
    template Tensor<T> seg_loss<T>(const Tensor<T>&, const std::vector<std::uint8_t>&, T);     \
    template Tensor<T> ego_loss<T>(const std::array<Tensor<T>, 4>&,                            \
                                   const std::array<Tensor<T>, 4>&, const RigidTransform&, T); \
    template Tensor<T> chamfer_masked<T>(const Tensor<T>&, const Tensor<T>&,                   \
                                         const std::vector<T>&, const std::vector<T>&);        \
    template Tensor<T> smoothness_masked<T>(const Tensor<T>&, const PointCloud&,               \
                                            const std::vector<T>&, int);                       \
    template struct LossBreakdown<T>;                                                          \
    template LossBreakdown<T> total_loss<T>(const FlowOutputs<T>&, const ScenePair&,           \
                                            const LossConfig&);

EGOFLOW_INSTANTIATE_LOSSES(float)
EGOFLOW_INSTANTIATE_LOSSES(double)

#undef EGOFLOW_INSTANTIATE_LOSSES

}  // namespace egoflow
