#include "egoflow/geometry.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>

namespace egoflow {

RigidTransform RigidTransform::inverse() const {
    RigidTransform inv;
    // R^T and -R^T t
    inv.R = {R[0], R[3], R[6], R[1], R[4], R[7], R[2], R[5], R[8]};
    inv.t = {-(inv.R[0] * t[0] + inv.R[1] * t[1] + inv.R[2] * t[2]),
             -(inv.R[3] * t[0] + inv.R[4] * t[1] + inv.R[5] * t[2]),
             -(inv.R[6] * t[0] + inv.R[7] * t[1] + inv.R[8] * t[2])};
    return inv;
}

RigidTransform RigidTransform::compose(const RigidTransform& other) const {
    RigidTransform out;
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) {
            double s = 0;
            for (int p = 0; p < 3; ++p) s += R[i * 3 + p] * other.R[p * 3 + j];
            out.R[i * 3 + j] = s;
        }
    out.t = apply(other.t);
    return out;
}

double RigidTransform::orthonormality_error() const {
    Eigen::Matrix3d Rm;
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) Rm(i, j) = R[i * 3 + j];
    const Eigen::Matrix3d E = Rm.transpose() * Rm - Eigen::Matrix3d::Identity();
    return E.cwiseAbs().maxCoeff() + std::abs(Rm.determinant() - 1.0);
}

RigidTransform axis_rotation(int axis, double angle_rad) {
    const double c = std::cos(angle_rad), s = std::sin(angle_rad);
    RigidTransform T;
    switch (axis) {
        case 0: T.R = {1, 0, 0, 0, c, -s, 0, s, c}; break;
        case 1: T.R = {c, 0, s, 0, 1, 0, -s, 0, c}; break;
        case 2: T.R = {c, -s, 0, s, c, 0, 0, 0, 1}; break;
        default: throw index_error("axis_rotation: axis must be 0, 1 or 2");
    }
    return T;
}

std::vector<int> fps(const PointCloud& points, int m, int start) {
    const int n = static_cast<int>(points.size());
    if (n < 1) throw validation_error("fps: empty point cloud");
    if (m < 1 || m > n)
        throw validation_error("fps: m=" + std::to_string(m) + " outside [1," +
                               std::to_string(n) + "]");
    if (start < 0 || start >= n)
        throw index_error("fps: start index " + std::to_string(start) + " outside [0," +
                          std::to_string(n) + ")");
    std::vector<int> selected;
    selected.reserve(m);
    selected.push_back(start);
    std::vector<double> min_d(n, std::numeric_limits<double>::infinity());
    int last = start;
    for (int round = 1; round < m; ++round) {
        int best = -1;
        double best_d = -1.0;
        for (int i = 0; i < n; ++i) {
            const double d = squared_dist(points[i], points[last]);
            if (d < min_d[i]) min_d[i] = d;
            if (min_d[i] > best_d) {  // strict: ties keep the lowest index
                best_d = min_d[i];
                best = i;
            }
        }
        selected.push_back(best);
        min_d[best] = -1.0;  // never picked again
        last = best;
    }
    return selected;
}

template <class S>
IndexTable knn(const S* query, int m, const S* reference, int n, int dim, int k) {
    if (k < 1 || k > n)
        throw validation_error("knn: k=" + std::to_string(k) + " outside [1," +
                               std::to_string(n) + "]");
    IndexTable table;
    table.k = k;
    table.indices.resize(static_cast<std::size_t>(m) * k);
    std::vector<std::pair<double, int>> cand(n);
    for (int q = 0; q < m; ++q) {
        const S* qp = query + static_cast<std::size_t>(q) * dim;
        for (int i = 0; i < n; ++i) {
            const S* rp = reference + static_cast<std::size_t>(i) * dim;
            double d = 0;
            for (int c = 0; c < dim; ++c) {
                const double diff = static_cast<double>(qp[c]) - static_cast<double>(rp[c]);
                d += diff * diff;
            }
            cand[i] = {d, i};
        }
        std::partial_sort(cand.begin(), cand.begin() + k, cand.end());
        for (int j = 0; j < k; ++j)
            table.indices[static_cast<std::size_t>(q) * k + j] = cand[j].second;
    }
    return table;
}

template IndexTable knn<float>(const float*, int, const float*, int, int, int);
template IndexTable knn<double>(const double*, int, const double*, int, int, int);

IndexTable knn(const PointCloud& query, const PointCloud& reference, int k) {
    return knn(reinterpret_cast<const double*>(query.data()), static_cast<int>(query.size()),
               reinterpret_cast<const double*>(reference.data()),
               static_cast<int>(reference.size()), 3, k);
}

std::vector<double> upsample_assign(const PointCloud& fine, const PointCloud& coarse,
                                    const std::vector<double>& values, int channels) {
    if (coarse.empty()) throw validation_error("upsample_assign: empty coarse cloud");
    if (values.size() != coarse.size() * static_cast<std::size_t>(channels))
        throw shape_error("upsample_assign: values size " + std::to_string(values.size()) +
                          " does not match " + std::to_string(coarse.size()) + "x" +
                          std::to_string(channels));
    const IndexTable nn = knn(fine, coarse, 1);
    std::vector<double> out(fine.size() * static_cast<std::size_t>(channels));
    for (std::size_t i = 0; i < fine.size(); ++i) {
        const int j = nn.indices[i];
        std::copy_n(values.data() + static_cast<std::size_t>(j) * channels, channels,
                    out.data() + i * channels);
    }
    return out;
}

RigidTransform kabsch_weighted(const PointCloud& src, const std::vector<Vec3>& dst,
                               const std::vector<double>& w) {
    const std::size_t n = src.size();
    if (dst.size() != n || w.size() != n)
        throw shape_error("kabsch_weighted: sizes disagree (src " + std::to_string(n) + ", dst " +
                          std::to_string(dst.size()) + ", w " + std::to_string(w.size()) + ")");
    double wsum = 0;
    for (double wi : w) wsum += wi;
    if (!(wsum > 0)) throw degeneracy_error("kabsch_weighted: weight sum is not positive");

    Vec3 cs{0, 0, 0}, cd{0, 0, 0};
    for (std::size_t i = 0; i < n; ++i)
        for (int c = 0; c < 3; ++c) {
            cs[c] += w[i] * src[i][c];
            cd[c] += w[i] * dst[i][c];
        }
    for (int c = 0; c < 3; ++c) {
        cs[c] /= wsum;
        cd[c] /= wsum;
    }

    Eigen::Matrix3d H = Eigen::Matrix3d::Zero();
    for (std::size_t i = 0; i < n; ++i)
        for (int a = 0; a < 3; ++a)
            for (int b = 0; b < 3; ++b)
                H(a, b) += w[i] * (src[i][a] - cs[a]) * (dst[i][b] - cd[b]);

    Eigen::JacobiSVD<Eigen::Matrix3d> svd(H, Eigen::ComputeFullU | Eigen::ComputeFullV);
    const Eigen::Vector3d sv = svd.singularValues();
    if (sv(1) < 1e-9 * sv(0))
        throw degeneracy_error("kabsch_weighted: degenerate support (second singular value " +
                               std::to_string(sv(1)) + " < 1e-9 * " + std::to_string(sv(0)) + ")");

    const Eigen::Matrix3d U = svd.matrixU();
    const Eigen::Matrix3d V = svd.matrixV();
    Eigen::Matrix3d D = Eigen::Matrix3d::Identity();
    D(2, 2) = (V * U.transpose()).determinant() < 0 ? -1.0 : 1.0;
    const Eigen::Matrix3d R = V * D * U.transpose();

    RigidTransform T;
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) T.R[i * 3 + j] = R(i, j);
    const Eigen::Vector3d csv(cs[0], cs[1], cs[2]);
    const Eigen::Vector3d t = Eigen::Vector3d(cd[0], cd[1], cd[2]) - R * csv;
    T.t = {t(0), t(1), t(2)};
    return T;
}

PointCloud apply_transform(const RigidTransform& T, const PointCloud& pc) {
    PointCloud out(pc.size());
    for (std::size_t i = 0; i < pc.size(); ++i) out[i] = T.apply(pc[i]);
    return out;
}

}  // namespace egoflow
