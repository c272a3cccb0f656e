#pragma once

// Deterministic point-cloud kernels: farthest-point sampling, exact k-NN,
// nearest-neighbor upsampling, weighted Kabsch alignment, rigid transforms.
// All functions are pure; distances are computed in double regardless of the
// input scalar type so results do not depend on the network precision mode.

#include <array>
#include <cstdint>
#include <vector>

#include "egoflow/errors.hpp"

namespace egoflow {

using Vec3 = std::array<double, 3>;
using PointCloud = std::vector<Vec3>;  // N x 3, meters

struct RigidTransform {
    std::array<double, 9> R{1, 0, 0, 0, 1, 0, 0, 0, 1};  // row-major rotation
    Vec3 t{0, 0, 0};

    Vec3 apply(const Vec3& p) const {
        return {R[0] * p[0] + R[1] * p[1] + R[2] * p[2] + t[0],
                R[3] * p[0] + R[4] * p[1] + R[5] * p[2] + t[1],
                R[6] * p[0] + R[7] * p[1] + R[8] * p[2] + t[2]};
    }

    RigidTransform inverse() const;

    /// this ∘ other (apply other first).
    RigidTransform compose(const RigidTransform& other) const;

    /// Max deviation of R^T R from identity plus |det - 1|.
    double orthonormality_error() const;
};

/// Rotation by angle_rad about coordinate axis 0=x, 1=y, 2=z.
RigidTransform axis_rotation(int axis, double angle_rad);

/// Flat M x K table of indices into a reference set; rows sorted by
/// ascending distance to the query, ties broken by lower index.
struct IndexTable {
    int k = 0;
    std::vector<int> indices;  // size rows*k

    int rows() const { return k == 0 ? 0 : static_cast<int>(indices.size()) / k; }
    int at(int row, int j) const { return indices[static_cast<std::size_t>(row) * k + j]; }
};

/// Greedy farthest-point sampling. First index = start; each next index
/// maximizes the min distance to the selected set, ties to the lowest index.
std::vector<int> fps(const PointCloud& points, int m, int start = 0);

/// Exact k-nearest neighbors by squared L2 over D-dimensional rows.
template <class S>
IndexTable knn(const S* query, int m, const S* reference, int n, int dim, int k);

IndexTable knn(const PointCloud& query, const PointCloud& reference, int k);

/// Each fine point copies the value row of its nearest coarse point.
std::vector<double> upsample_assign(const PointCloud& fine, const PointCloud& coarse,
                                    const std::vector<double>& values, int channels);

/// argmin_{R,t} sum_i w_i ||R*src_i + t - dst_i||^2 via weighted centroids,
/// 3x3 cross-covariance, SVD and determinant sign correction (det(R) = +1).
/// Throws degeneracy_error when the weighted support is rank-deficient
/// (second singular value < 1e-9 * first) or the weight sum is not positive.
RigidTransform kabsch_weighted(const PointCloud& src, const std::vector<Vec3>& dst,
                               const std::vector<double>& w);

PointCloud apply_transform(const RigidTransform& T, const PointCloud& pc);

inline double squared_dist(const Vec3& a, const Vec3& b) {
    const double dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
    return dx * dx + dy * dy + dz * dz;
}

}  // namespace egoflow
