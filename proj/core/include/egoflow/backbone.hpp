#pragma once

// Four-scale feature pyramid, encoder-decoder with local feature aggregation,
// independent context encoder, segmentation head, and the masked fusion of
// encoder/context features into hybrid features.

#include <array>
#include <cstdint>
#include <optional>
#include <vector>

#include "egoflow/geometry.hpp"
#include "egoflow/layers.hpp"

namespace egoflow {

/// Resolution plan: l0 = N, l_k = max(N / 4^k, 8).
/// Defaults reproduce {8192, 2048, 512, 128}.
std::array<int, 4> pyramid_levels(int n);

struct PyramidLevel {
    std::vector<int> indices;  // absolute indices into the input cloud
    PointCloud points;
    IndexTable neighbors;  // intra-level K-NN (self included), local indices
};

struct Pyramid {
    std::array<PyramidLevel, 4> levels;
    std::array<IndexTable, 3> ds;        // level k+1 points -> K-NN in level k
    std::array<std::vector<int>, 3> us;  // level k points -> 1-NN index in level k+1
    int k = 16;
};

/// Deterministic pyramid: FPS (start 0) chained over the already-sampled
/// points, K = min(16, level size) neighbor tables at and across scales.
Pyramid build_pyramid(const PointCloud& pc, int k = 16);

struct ModelConfig {
    std::array<int, 4> channels{32, 128, 256, 512};
    int knn_k = 16;
    int sf_width = 64;
    // component toggles (ablation columns)
    bool use_mask_in_ego = true;
    bool use_hybrid_warp = true;
    bool use_feature_update = true;
    bool use_attention_refine = true;
    bool use_hybrid_features = true;
    bool use_stop_grad = true;
};

/// Predicted segmentation with hard per-scale masks. Mask values are forward
/// constants (binarization is non-differentiable); gradients reach the head
/// only through the logits.
template <class T>
struct SegMask {
    Tensor<T> logits;  // [l0, 1]
    Tensor<T> probs;   // sigmoid(logits)
    std::array<std::vector<T>, 4> fg;  // hard 0/1 per scale, fg[0] at full res

    std::vector<T> bg(int level) const {
        std::vector<T> out(fg[level].size());
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = T(1) - fg[level][i];
        return out;
    }
};

/// One local-feature-aggregation unit: relative position encoding, scalar
/// attention over K neighbors, weighted-sum pooling, output MLP.
template <class T>
struct LfaUnit {
    Mlp<T> pos_enc;       // 7 -> c_out
    LinearLayer<T> att;   // (c_pos + c_in) -> 1
    Mlp<T> out;           // (c_pos + c_in) -> c_out

    LfaUnit() = default;
    LfaUnit(ParamRegistry<T>& reg, const std::string& prefix, int c_in, int c_out);

    Tensor<T> forward(const PointCloud& pts, const Tensor<T>& feats, const IndexTable& nbr,
                      bool training) const;
};

/// Encoder trunk: coordinate stem, two stacked LFA units per scale, max-pool
/// downsampling between scales. Also used (with separate parameters) as the
/// context encoder.
template <class T>
struct EncoderNet {
    Mlp<T> stem;  // 3 -> C0
    std::array<LfaUnit<T>, 4> lfa_a;
    std::array<LfaUnit<T>, 4> lfa_b;
    std::array<Mlp<T>, 3> ds;  // C_k -> C_{k+1}

    EncoderNet() = default;
    EncoderNet(ParamRegistry<T>& reg, const std::string& prefix, const std::array<int, 4>& ch);

    std::array<Tensor<T>, 4> forward(const Pyramid& pyr, bool training) const;
};

template <class T>
struct DecoderNet {
    std::array<Mlp<T>, 3> dec;  // (C_{k+1} + C_k) -> C_k for k = 2, 1, 0

    DecoderNet() = default;
    DecoderNet(ParamRegistry<T>& reg, const std::string& prefix, const std::array<int, 4>& ch);

    Tensor<T> forward(const Pyramid& pyr, const std::array<Tensor<T>, 4>& enc,
                      bool training) const;
};

template <class T>
struct Backbone {
    ModelConfig cfg;
    EncoderNet<T> encoder;
    DecoderNet<T> decoder;
    std::optional<EncoderNet<T>> context;  // present iff use_hybrid_features
    Mlp<T> seg_head;                       // C0 -> 64 -> 32 -> 1, plain head

    Backbone() = default;
    Backbone(ParamRegistry<T>& reg, const std::string& prefix, const ModelConfig& cfg);

    std::array<Tensor<T>, 4> encode(const Pyramid& pyr, bool training) const {
        return encoder.forward(pyr, training);
    }
    Tensor<T> decode(const Pyramid& pyr, const std::array<Tensor<T>, 4>& enc,
                     bool training) const {
        return decoder.forward(pyr, enc, training);
    }
    std::array<Tensor<T>, 4> context_encode(const Pyramid& pyr, bool training) const {
        return context->forward(pyr, training);
    }

    /// Logits -> probabilities -> hard masks, subsampled through the pyramid.
    SegMask<T> segmentation(const Pyramid& pyr, const Tensor<T>& fs0, bool training) const;

    /// HF_k = M_fg * F_context + (1 - M_fg) * stop(F_encoder) per scale.
    /// With use_stop_grad = false the stop is omitted; without the context
    /// encoder the encoder features pass through unchanged.
    std::array<Tensor<T>, 4> hybrid_features(const std::array<Tensor<T>, 4>& enc,
                                             const std::array<Tensor<T>, 4>& ctx,
                                             const SegMask<T>& seg, bool use_stop_grad) const;
};

/// Constant tensor from a mask / value vector.
template <class T>
Tensor<T> constant_vec(const std::vector<T>& v) {
    return Tensor<T>::from({static_cast<int>(v.size())}, v);
}

/// Constant [N,3] tensor from point positions.
template <class T>
Tensor<T> points_tensor(const PointCloud& pc) {
    std::vector<T> d(pc.size() * 3);
    for (std::size_t i = 0; i < pc.size(); ++i)
        for (int c = 0; c < 3; ++c) d[i * 3 + c] = static_cast<T>(pc[i][c]);
    return Tensor<T>::from({static_cast<int>(pc.size()), 3}, std::move(d));
}

}  // namespace egoflow
