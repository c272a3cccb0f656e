#pragma once

// Scene-flow, ego-motion and segmentation metrics, plus the CSV report.

#include <cstdint>
#include <string>
#include <vector>

#include "egoflow/geometry.hpp"

namespace egoflow {

struct FlowMetrics {
    double epe3d = 0;   // mean end-point error (m)
    double acc3ds = 0;  // EPE < 0.05 or rel < 5%
    double acc3dr = 0;  // EPE < 0.1 or rel < 10%
    double out3d = 0;   // EPE > 0.3 or rel > 10%
    std::int64_t count = 0;
};

/// Point-pooled accumulator so scenes can be merged before finalizing.
struct FlowStatsAccum {
    std::int64_t n = 0;
    double epe_sum = 0;
    std::int64_t n_acc_s = 0, n_acc_r = 0, n_out = 0;

    void add(const Vec3& pred, const Vec3& gt);
    void merge(const FlowStatsAccum& other);
    FlowMetrics finalize() const;
};

FlowMetrics flow_metrics(const std::vector<Vec3>& pred, const std::vector<Vec3>& gt);

struct EgoMetrics {
    double rae_deg = 0;
    double rte = 0;
};

/// RAE = arccos(clamp((trace(R_pred^T R_gt) - 1)/2, -1, 1)) in degrees,
/// RTE = ||t_pred - t_gt||.
EgoMetrics ego_metrics(const RigidTransform& pred, const RigidTransform& gt);

struct MaskMetrics {
    double prec_fg = 1, rec_fg = 1, prec_bg = 1, rec_bg = 1;
    bool degenerate = false;  // some denominator was empty (reported as 1.0)
};

MaskMetrics mask_metrics(const std::vector<std::uint8_t>& pred,
                         const std::vector<std::uint8_t>& gt);

struct SceneMetricsRow {
    std::string name;
    FlowMetrics flow, flow_fg, flow_bg;
    EgoMetrics ego;
    MaskMetrics mask;
};

/// One row per scene plus an aggregate row. per_scene_average: accuracy
/// ratios averaged per scene then over scenes; default pools over points.
void write_metrics_csv(const std::vector<SceneMetricsRow>& rows, const std::string& path,
                       bool per_scene_average = false);

/// The aggregate row as used by write_metrics_csv.
SceneMetricsRow aggregate_metrics(const std::vector<SceneMetricsRow>& rows,
                                  bool per_scene_average = false);

}  // namespace egoflow
