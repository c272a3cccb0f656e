#pragma once

// Synthetic LiDAR-like scene pairs with exact ground truth: ground plane,
// static structures and rigid movers, range-dependent sampling density,
// independent resampling of the second frame, occlusion and noise. Includes
// the pair file format, dataset manifests and the PLY/CSV error-map export.

#include <cstdint>
#include <string>
#include <vector>

#include "egoflow/geometry.hpp"

namespace egoflow {

struct ScenePair {
    PointCloud p;             // frame at t (sensor frame)
    PointCloud q;             // frame at t+1 (sensor frame), no index correspondence
    std::vector<Vec3> flow;   // ground-truth flow of p (meters)
    RigidTransform t_gt;      // BG point motion: q_bg = t_gt * p_bg
    std::vector<std::uint8_t> labels_p, labels_q;    // 1 = FG
    std::vector<std::uint16_t> objects_p, objects_q; // 0 = BG, movers 1..K
};

struct SceneConfig {
    double extent = 30.0;          // half-extent of the scene (m)
    int points_per_frame = 4096;   // sampling budget per frame
    double ground_density = 1.0;   // relative weight of the ground surface
    int num_structures = 6;        // static boxes
    int num_movers = 2;
    double mover_size_min = 1.5;   // footprint (m)
    double mover_size_max = 4.0;
    double mover_speed_min = 0.2;  // per-frame displacement (m)
    double mover_speed_max = 1.0;
    double mover_density = 3.0;    // sampling weight multiplier on movers
    double ego_rot_deg = 2.0;      // |yaw| bound of the sensor motion
    double ego_trans = 0.8;        // translation magnitude bound (m)
    double occlusion = 0.0;        // fraction of q points dropped
    double noise_sigma = 0.0;      // Gaussian noise on q (m)
    bool shared_sampling = false;  // reuse frame-t surface samples for q
    std::uint64_t seed = 0;
};

/// Fully seeded scene-pair synthesis. For every BG point the flow satisfies
/// flow[i] = t_gt * p[i] - p[i] bit-exactly; FG points move by their object's
/// rigid motion.
ScenePair generate(const SceneConfig& cfg);

/// Uniform sampling without replacement to at most n points per cloud,
/// independent shuffles of p and q; ground-truth rows follow p.
ScenePair subsample_shuffle(const ScenePair& pair, int n, std::uint64_t seed);

/// Random rotation of both frames about one random coordinate axis, angle
/// uniform in [-10, +10] degrees. Ground truth is recomputed consistently.
ScenePair augment_rotation(const ScenePair& pair, std::uint64_t seed);

/// "EGPR" pair format (f32 little-endian payload). Bit-exact round trip.
void save_pair(const ScenePair& pair, const std::string& path);
ScenePair load_pair(const std::string& path);

/// Ascii PLY with a per-vertex end-point-error scalar, plus a CSV companion
/// (same stem, .csv extension).
void export_error_map(const PointCloud& p, const std::vector<Vec3>& pred,
                      const std::vector<Vec3>& gt, const std::string& path);

/// Newline-separated relative paths.
void write_manifest(const std::vector<std::string>& relative_paths, const std::string& path);
std::vector<std::string> read_manifest(const std::string& path);

struct PairConsistency {
    double bg_max_dev = 0.0;  // max |flow - (t_gt p - p)| over BG points
    double fg_max_dev = 0.0;  // max rigid-fit residual over mover objects
};

/// Exhaustive ground-truth consistency check of a pair.
PairConsistency pair_consistency(const ScenePair& pair);

}  // namespace egoflow
