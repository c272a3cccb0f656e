#include "egoflow/backbone.hpp"

#include <cmath>

namespace egoflow {

std::array<int, 4> pyramid_levels(int n) {
    std::array<int, 4> out{n, 0, 0, 0};
    for (int k = 1; k < 4; ++k) {
        int lk = n >> (2 * k);  // n / 4^k
        if (lk < 8) lk = 8;
        if (lk > out[k - 1]) lk = out[k - 1];
        out[k] = lk;
    }
    return out;
}

Pyramid build_pyramid(const PointCloud& pc, int k) {
    const int n = static_cast<int>(pc.size());
    if (n < 64) throw validation_error("build_pyramid: need at least 64 points, got " +
                                       std::to_string(n));
    const auto sizes = pyramid_levels(n);
    Pyramid pyr;
    pyr.k = k;

    pyr.levels[0].indices.resize(n);
    for (int i = 0; i < n; ++i) pyr.levels[0].indices[i] = i;
    pyr.levels[0].points = pc;

    for (int l = 1; l < 4; ++l) {
        const auto& prev = pyr.levels[l - 1];
        const std::vector<int> sel = fps(prev.points, sizes[l], /*start=*/0);
        auto& cur = pyr.levels[l];
        cur.indices.reserve(sel.size());
        cur.points.reserve(sel.size());
        for (int s : sel) {
            cur.indices.push_back(prev.indices[s]);
            cur.points.push_back(prev.points[s]);
        }
    }

    for (int l = 0; l < 4; ++l) {
        auto& cur = pyr.levels[l];
        const int kk = std::min<int>(k, static_cast<int>(cur.points.size()));
        cur.neighbors = knn(cur.points, cur.points, kk);
    }
    for (int l = 0; l < 3; ++l) {
        const int kk = std::min<int>(k, static_cast<int>(pyr.levels[l].points.size()));
        pyr.ds[l] = knn(pyr.levels[l + 1].points, pyr.levels[l].points, kk);
        pyr.us[l] = knn(pyr.levels[l].points, pyr.levels[l + 1].points, 1).indices;
    }
    return pyr;
}

// ---- LFA ---------------------------------------------------------------------

template <class T>
LfaUnit<T>::LfaUnit(ParamRegistry<T>& reg, const std::string& prefix, int c_in, int c_out)
    : pos_enc(reg, prefix + ".pos", {7, c_out}, /*final_plain=*/false),
      att(reg, prefix + ".att", c_out + c_in, 1),
      out(reg, prefix + ".out", {c_out + c_in, c_out}, /*final_plain=*/false) {}

template <class T>
Tensor<T> LfaUnit<T>::forward(const PointCloud& pts, const Tensor<T>& feats,
                              const IndexTable& nbr, bool training) const {
    const int m = feats.dim(0);
    const int kk = nbr.k;
    if (nbr.rows() != m)
        throw shape_error("lfa: neighbor table rows " + std::to_string(nbr.rows()) +
                          " vs features " + shape_str(feats.shape()));

    // relative position encoding: offset (3) | distance (1) | neighbor position (3)
    std::vector<T> rel(static_cast<std::size_t>(m) * kk * 7);
    for (int i = 0; i < m; ++i) {
        const Vec3& pi = pts[static_cast<std::size_t>(i)];
        for (int j = 0; j < kk; ++j) {
            const Vec3& pj = pts[static_cast<std::size_t>(nbr.at(i, j))];
            T* r = rel.data() + (static_cast<std::size_t>(i) * kk + j) * 7;
            const double ox = pj[0] - pi[0], oy = pj[1] - pi[1], oz = pj[2] - pi[2];
            r[0] = static_cast<T>(ox);
            r[1] = static_cast<T>(oy);
            r[2] = static_cast<T>(oz);
            r[3] = static_cast<T>(std::sqrt(ox * ox + oy * oy + oz * oz));
            r[4] = static_cast<T>(pj[0]);
            r[5] = static_cast<T>(pj[1]);
            r[6] = static_cast<T>(pj[2]);
        }
    }
    Tensor<T> rel_t = Tensor<T>::from({m * kk, 7}, std::move(rel));
    Tensor<T> pos = pos_enc.forward(rel_t, training);           // [m*kk, c_pos]
    const int c_pos = pos.dim(1);
    pos = reshape(pos, {m, kk, c_pos});

    Tensor<T> gathered = gather_neighbors(feats, nbr.indices, kk);  // [m, kk, c_in]
    Tensor<T> cat = concat_last<T>({pos, gathered});                // [m, kk, c_pos+c_in]
    const int cw = cat.dim(2);

    Tensor<T> scores = att.forward(reshape(cat, {m * kk, cw}));  // [m*kk, 1]
    Tensor<T> weights = softmax_last(reshape(scores, {m, kk}));
    Tensor<T> pooled = reduce_wsum_k(cat, weights);              // [m, cw]
    return out.forward(pooled, training);
}

// ---- encoder / decoder ---------------------------------------------------------

template <class T>
EncoderNet<T>::EncoderNet(ParamRegistry<T>& reg, const std::string& prefix,
                          const std::array<int, 4>& ch)
    : stem(reg, prefix + ".stem", {3, ch[0]}, /*final_plain=*/false) {
    for (int l = 0; l < 4; ++l) {
        lfa_a[l] = LfaUnit<T>(reg, prefix + ".l" + std::to_string(l) + ".lfa0", ch[l], ch[l]);
        lfa_b[l] = LfaUnit<T>(reg, prefix + ".l" + std::to_string(l) + ".lfa1", ch[l], ch[l]);
    }
    for (int l = 0; l < 3; ++l)
        ds[l] = Mlp<T>(reg, prefix + ".ds" + std::to_string(l), {ch[l], ch[l + 1]},
                       /*final_plain=*/false);
}

template <class T>
std::array<Tensor<T>, 4> EncoderNet<T>::forward(const Pyramid& pyr, bool training) const {
    std::array<Tensor<T>, 4> feats;
    Tensor<T> x = stem.forward(points_tensor<T>(pyr.levels[0].points), training);
    for (int l = 0; l < 4; ++l) {
        x = lfa_a[l].forward(pyr.levels[l].points, x, pyr.levels[l].neighbors, training);
        x = lfa_b[l].forward(pyr.levels[l].points, x, pyr.levels[l].neighbors, training);
        feats[l] = x;
        if (l < 3) {
            Tensor<T> g = gather_neighbors(x, pyr.ds[l].indices, pyr.ds[l].k);
            x = ds[l].forward(reduce_max_k(g), training);
        }
    }
    return feats;
}

template <class T>
DecoderNet<T>::DecoderNet(ParamRegistry<T>& reg, const std::string& prefix,
                          const std::array<int, 4>& ch) {
    for (int l = 0; l < 3; ++l)
        dec[l] = Mlp<T>(reg, prefix + ".up" + std::to_string(l), {ch[l + 1] + ch[l], ch[l]},
                        /*final_plain=*/false);
}

template <class T>
Tensor<T> DecoderNet<T>::forward(const Pyramid& pyr, const std::array<Tensor<T>, 4>& enc,
                                 bool training) const {
    Tensor<T> d = enc[3];
    for (int l = 2; l >= 0; --l) {
        Tensor<T> up = gather_rows(d, pyr.us[l]);  // 1-NN copy to the finer scale
        d = dec[l].forward(concat_last<T>({up, enc[l]}), training);
    }
    return d;
}

// ---- backbone -------------------------------------------------------------------

template <class T>
Backbone<T>::Backbone(ParamRegistry<T>& reg, const std::string& prefix, const ModelConfig& c)
    : cfg(c),
      encoder(reg, prefix + ".enc", c.channels),
      decoder(reg, prefix + ".dec", c.channels),
      seg_head(reg, prefix + ".seg", {c.channels[0], 64, 32, 1}, /*final_plain=*/true) {
    if (cfg.use_hybrid_features) context.emplace(reg, prefix + ".ctx", c.channels);
}

template <class T>
SegMask<T> Backbone<T>::segmentation(const Pyramid& pyr, const Tensor<T>& fs0,
                                     bool training) const {
    SegMask<T> seg;
    seg.logits = seg_head.forward(fs0, training);
    seg.probs = sigmoid(seg.logits);
    const int n = seg.logits.dim(0);
    seg.fg[0].resize(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i)
        seg.fg[0][i] = seg.logits.data()[static_cast<std::size_t>(i)] >= T(0) ? T(1) : T(0);
    for (int l = 1; l < 4; ++l) {
        const auto& idx = pyr.levels[l].indices;
        seg.fg[l].resize(idx.size());
        for (std::size_t i = 0; i < idx.size(); ++i) seg.fg[l][i] = seg.fg[0][idx[i]];
    }
    return seg;
}

template <class T>
std::array<Tensor<T>, 4> Backbone<T>::hybrid_features(const std::array<Tensor<T>, 4>& enc,
                                                      const std::array<Tensor<T>, 4>& ctx,
                                                      const SegMask<T>& seg,
                                                      bool use_stop_grad) const {
    std::array<Tensor<T>, 4> hf;
    for (int l = 0; l < 4; ++l) {
        Tensor<T> fg = constant_vec(seg.fg[l]);
        Tensor<T> bg = constant_vec(seg.bg(l));
        Tensor<T> enc_part = use_stop_grad ? stop_gradient(enc[l]) : enc[l];
        hf[l] = add(mul_rowwise(ctx[l], fg), mul_rowwise(enc_part, bg));
    }
    return hf;
}

template struct LfaUnit<float>;
template struct LfaUnit<double>;
template struct EncoderNet<float>;
template struct EncoderNet<double>;
template struct DecoderNet<float>;
template struct DecoderNet<double>;
template struct Backbone<float>;
template struct Backbone<double>;

}  // namespace egoflow
