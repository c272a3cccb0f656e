#include "egoflow/metrics.hpp"

#include <cmath>
#include <fstream>
#include <limits>

namespace egoflow {

void FlowStatsAccum::add(const Vec3& pred, const Vec3& gt) {
    const double dx = pred[0] - gt[0], dy = pred[1] - gt[1], dz = pred[2] - gt[2];
    const double epe = std::sqrt(dx * dx + dy * dy + dz * dz);
    const double mag = std::sqrt(gt[0] * gt[0] + gt[1] * gt[1] + gt[2] * gt[2]);
    double rel;
    if (mag > 0)
        rel = epe / mag;
    else
        rel = (epe == 0) ? 0.0 : std::numeric_limits<double>::infinity();
    n += 1;
    epe_sum += epe;
    if (epe < 0.05 || rel < 0.05) n_acc_s += 1;
    if (epe < 0.1 || rel < 0.1) n_acc_r += 1;
    if (epe > 0.3 || rel > 0.1) n_out += 1;
}

void FlowStatsAccum::merge(const FlowStatsAccum& other) {
    n += other.n;
    epe_sum += other.epe_sum;
    n_acc_s += other.n_acc_s;
    n_acc_r += other.n_acc_r;
    n_out += other.n_out;
}

FlowMetrics FlowStatsAccum::finalize() const {
    FlowMetrics m;
    m.count = n;
    if (n == 0) return m;
    m.epe3d = epe_sum / static_cast<double>(n);
    m.acc3ds = static_cast<double>(n_acc_s) / static_cast<double>(n);
    m.acc3dr = static_cast<double>(n_acc_r) / static_cast<double>(n);
    m.out3d = static_cast<double>(n_out) / static_cast<double>(n);
    return m;
}

FlowMetrics flow_metrics(const std::vector<Vec3>& pred, const std::vector<Vec3>& gt) {
    if (pred.size() != gt.size())
        throw shape_error("flow_metrics: " + std::to_string(pred.size()) + " predictions vs " +
                          std::to_string(gt.size()) + " ground-truth rows");
    FlowStatsAccum acc;
    for (std::size_t i = 0; i < pred.size(); ++i) acc.add(pred[i], gt[i]);
    return acc.finalize();
}

EgoMetrics ego_metrics(const RigidTransform& pred, const RigidTransform& gt) {
    double tr = 0;
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) tr += pred.R[j * 3 + i] * gt.R[j * 3 + i];  // trace(R_p^T R_g)
    double c = (tr - 1.0) / 2.0;
    c = std::max(-1.0, std::min(1.0, c));
    EgoMetrics m;
    m.rae_deg = std::acos(c) * 180.0 / 3.14159265358979323846;
    const double dx = pred.t[0] - gt.t[0], dy = pred.t[1] - gt.t[1], dz = pred.t[2] - gt.t[2];
    m.rte = std::sqrt(dx * dx + dy * dy + dz * dz);
    return m;
}

MaskMetrics mask_metrics(const std::vector<std::uint8_t>& pred,
                         const std::vector<std::uint8_t>& gt) {
    if (pred.size() != gt.size())
        throw shape_error("mask_metrics: size mismatch " + std::to_string(pred.size()) + " vs " +
                          std::to_string(gt.size()));
    std::int64_t tp = 0, fp = 0, fn = 0, tn = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const bool p = pred[i] != 0, g = gt[i] != 0;
        if (p && g) ++tp;
        else if (p && !g) ++fp;
        else if (!p && g) ++fn;
        else ++tn;
    }
    MaskMetrics m;
    auto ratio = [&m](std::int64_t num, std::int64_t den) {
        if (den == 0) {
            m.degenerate = true;
            return 1.0;
        }
        return static_cast<double>(num) / static_cast<double>(den);
    };
    m.prec_fg = ratio(tp, tp + fp);
    m.rec_fg = ratio(tp, tp + fn);
    m.prec_bg = ratio(tn, tn + fn);
    m.rec_bg = ratio(tn, tn + fp);
    return m;
}

namespace {

FlowMetrics pool_flow(const std::vector<SceneMetricsRow>& rows, FlowMetrics SceneMetricsRow::*sel,
                      bool per_scene_average) {
    FlowMetrics out;
    if (rows.empty()) return out;
    if (per_scene_average) {
        int used = 0;
        for (const auto& r : rows) {
            const FlowMetrics& m = r.*sel;
            if (m.count == 0) continue;
            out.epe3d += m.epe3d;
            out.acc3ds += m.acc3ds;
            out.acc3dr += m.acc3dr;
            out.out3d += m.out3d;
            out.count += m.count;
            ++used;
        }
        if (used > 0) {
            out.epe3d /= used;
            out.acc3ds /= used;
            out.acc3dr /= used;
            out.out3d /= used;
        }
    } else {
        double epe_sum = 0, s = 0, r = 0, o = 0;
        for (const auto& row : rows) {
            const FlowMetrics& m = row.*sel;
            epe_sum += m.epe3d * static_cast<double>(m.count);
            s += m.acc3ds * static_cast<double>(m.count);
            r += m.acc3dr * static_cast<double>(m.count);
            o += m.out3d * static_cast<double>(m.count);
            out.count += m.count;
        }
        if (out.count > 0) {
            out.epe3d = epe_sum / static_cast<double>(out.count);
            out.acc3ds = s / static_cast<double>(out.count);
            out.acc3dr = r / static_cast<double>(out.count);
            out.out3d = o / static_cast<double>(out.count);
        }
    }
    return out;
}

}  // namespace

SceneMetricsRow aggregate_metrics(const std::vector<SceneMetricsRow>& rows,
                                  bool per_scene_average) {
    SceneMetricsRow agg;
    agg.name = "aggregate";
    agg.flow = pool_flow(rows, &SceneMetricsRow::flow, per_scene_average);
    agg.flow_fg = pool_flow(rows, &SceneMetricsRow::flow_fg, per_scene_average);
    agg.flow_bg = pool_flow(rows, &SceneMetricsRow::flow_bg, per_scene_average);
    if (!rows.empty()) {
        agg.mask = MaskMetrics{0, 0, 0, 0, false};
        const double n = static_cast<double>(rows.size());
        for (const auto& r : rows) {
            agg.ego.rae_deg += r.ego.rae_deg / n;
            agg.ego.rte += r.ego.rte / n;
            agg.mask.prec_fg += r.mask.prec_fg / n;
            agg.mask.rec_fg += r.mask.rec_fg / n;
            agg.mask.prec_bg += r.mask.prec_bg / n;
            agg.mask.rec_bg += r.mask.rec_bg / n;
            agg.mask.degenerate = agg.mask.degenerate || r.mask.degenerate;
        }
    }
    return agg;
}

void write_metrics_csv(const std::vector<SceneMetricsRow>& rows, const std::string& path,
                       bool per_scene_average) {
    std::ofstream os(path);
    if (!os) throw validation_error("cannot open metrics csv for writing: " + path);
    os << "scene,points,EPE3D,Acc3DS,Acc3DR,Out3D,EPE3D_fg,EPE3D_bg,RAE_deg,RTE,"
          "prec_FG,rec_FG,prec_BG,rec_BG\n";
    auto emit = [&os](const SceneMetricsRow& r) {
        os << r.name << "," << r.flow.count << "," << r.flow.epe3d << "," << r.flow.acc3ds << ","
           << r.flow.acc3dr << "," << r.flow.out3d << "," << r.flow_fg.epe3d << ","
           << r.flow_bg.epe3d << "," << r.ego.rae_deg << "," << r.ego.rte << ","
           << r.mask.prec_fg << "," << r.mask.rec_fg << "," << r.mask.prec_bg << ","
           << r.mask.rec_bg << "\n";
    };
    for (const auto& r : rows) emit(r);
    emit(aggregate_metrics(rows, per_scene_average));
}

}  // namespace egoflow
