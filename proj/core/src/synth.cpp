#include "egoflow/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <numeric>

#include "egoflow/rng.hpp"

namespace egoflow {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kGroundZ = -1.5;  // sensor sits at the origin

// Axis-aligned box surface (sides + top) in local coordinates, with a world
// placement. Sampling picks a face proportional to area.
struct Box {
    Vec3 center;        // world center of the footprint (z = bottom)
    double w, d, h;     // extents along x, y, z
    std::uint16_t object_id;  // 0 = static
    RigidTransform motion;    // world motion between frames (identity if static)
};

struct Scene {
    std::vector<Box> boxes;
    double extent;
    double ground_weight;
    std::vector<double> box_weights;
    double total_weight;
};

Vec3 sample_box_point(const Box& b, Rng& rng) {
    // faces: 4 sides + top, weighted by area
    const double a_side_x = b.d * b.h;  // faces at +-x
    const double a_side_y = b.w * b.h;  // faces at +-y
    const double a_top = b.w * b.d;
    const double total = 2 * a_side_x + 2 * a_side_y + a_top;
    double pick = rng.uniform(0.0, total);
    double lx, ly, lz;
    if (pick < a_side_x) {
        lx = b.w / 2, ly = rng.uniform(-b.d / 2, b.d / 2), lz = rng.uniform(0.0, b.h);
    } else if ((pick -= a_side_x) < a_side_x) {
        lx = -b.w / 2, ly = rng.uniform(-b.d / 2, b.d / 2), lz = rng.uniform(0.0, b.h);
    } else if ((pick -= a_side_x) < a_side_y) {
        ly = b.d / 2, lx = rng.uniform(-b.w / 2, b.w / 2), lz = rng.uniform(0.0, b.h);
    } else if ((pick -= a_side_y) < a_side_y) {
        ly = -b.d / 2, lx = rng.uniform(-b.w / 2, b.w / 2), lz = rng.uniform(0.0, b.h);
    } else {
        lx = rng.uniform(-b.w / 2, b.w / 2), ly = rng.uniform(-b.d / 2, b.d / 2), lz = b.h;
    }
    return {b.center[0] + lx, b.center[1] + ly, b.center[2] + lz};
}

double box_weight(const Box& b) {
    const double area = 2 * b.d * b.h + 2 * b.w * b.h + b.w * b.d;
    const double r = std::sqrt(b.center[0] * b.center[0] + b.center[1] * b.center[1]);
    return area / std::max(1.0, r);
}

// Round a transform through f32 so pair files are lossless.
RigidTransform round_f32(const RigidTransform& t) {
    RigidTransform out;
    for (int i = 0; i < 9; ++i) out.R[i] = static_cast<double>(static_cast<float>(t.R[i]));
    for (int i = 0; i < 3; ++i) out.t[i] = static_cast<double>(static_cast<float>(t.t[i]));
    return out;
}

Scene build_scene(const SceneConfig& cfg, Rng& rng, RigidTransform& t_gt_out) {
    if (cfg.points_per_frame < 1) throw validation_error("generate: empty scene (no points)");
    if (cfg.extent <= 2.0) throw validation_error("generate: extent too small");
    Scene sc;
    sc.extent = cfg.extent;

    // ego-motion of the sensor; BG points move by its inverse
    const double yaw = rng.uniform(-cfg.ego_rot_deg, cfg.ego_rot_deg) * kPi / 180.0;
    const double mag = rng.uniform(0.0, cfg.ego_trans);
    const double heading = rng.uniform(0.0, 2 * kPi);
    RigidTransform ego = axis_rotation(2, yaw);
    ego.t = {mag * std::cos(heading), mag * std::sin(heading), 0.0};
    t_gt_out = round_f32(ego.inverse());

    for (int s = 0; s < cfg.num_structures; ++s) {
        Box b;
        const double r = rng.uniform(4.0, 0.9 * cfg.extent);
        const double th = rng.uniform(0.0, 2 * kPi);
        b.center = {r * std::cos(th), r * std::sin(th), kGroundZ};
        b.w = rng.uniform(1.0, 6.0);
        b.d = rng.uniform(1.0, 6.0);
        b.h = rng.uniform(1.0, 4.0);
        b.object_id = 0;
        sc.boxes.push_back(b);
    }
    for (int k = 0; k < cfg.num_movers; ++k) {
        Box b;
        const double r = rng.uniform(3.0, 0.7 * cfg.extent);
        const double th = rng.uniform(0.0, 2 * kPi);
        b.center = {r * std::cos(th), r * std::sin(th), kGroundZ};
        b.w = rng.uniform(cfg.mover_size_min, cfg.mover_size_max);
        b.d = rng.uniform(cfg.mover_size_min, cfg.mover_size_max);
        b.h = rng.uniform(1.0, 2.2);
        b.object_id = static_cast<std::uint16_t>(k + 1);
        // own world motion: small yaw about the box center plus a planar step
        const double oyaw = rng.uniform(-2.0, 2.0) * kPi / 180.0;
        const double speed = rng.uniform(cfg.mover_speed_min, cfg.mover_speed_max);
        const double dir = rng.uniform(0.0, 2 * kPi);
        RigidTransform own = axis_rotation(2, oyaw);
        const Vec3 rc = own.apply(b.center);
        own.t = {b.center[0] - rc[0] + speed * std::cos(dir),
                 b.center[1] - rc[1] + speed * std::sin(dir),
                 b.center[2] - rc[2]};
        // total sensor-frame motion, rounded once so the flow invariant is exact
        b.motion = round_f32(t_gt_out.compose(own));
        sc.boxes.push_back(b);
    }

    // weight of the ground disc vs the boxes; uniform radius draw gives 1/r
    // density per unit area
    sc.ground_weight = cfg.ground_density * 2.0 * kPi * cfg.extent;  // ~ integral of r * (1/r)
    sc.total_weight = sc.ground_weight;
    for (const auto& b : sc.boxes) {
        double w = box_weight(b);
        if (b.object_id > 0) w *= cfg.mover_density;
        sc.box_weights.push_back(w);
        sc.total_weight += w;
    }
    return sc;
}

struct RawPoint {
    Vec3 pos;                 // frame-t position (sensor frame)
    std::uint16_t object_id;
};

RawPoint sample_scene_point(const Scene& sc, Rng& rng) {
    double pick = rng.uniform(0.0, sc.total_weight);
    if (pick < sc.ground_weight) {
        const double r = rng.uniform(1.0, sc.extent);
        const double th = rng.uniform(0.0, 2 * kPi);
        return {{r * std::cos(th), r * std::sin(th), kGroundZ}, 0};
    }
    pick -= sc.ground_weight;
    for (std::size_t i = 0; i < sc.boxes.size(); ++i) {
        if (pick < sc.box_weights[i])
            return {sample_box_point(sc.boxes[i], rng), sc.boxes[i].object_id};
        pick -= sc.box_weights[i];
    }
    return {sample_box_point(sc.boxes.back(), rng), sc.boxes.back().object_id};
}

}  // namespace

ScenePair generate(const SceneConfig& cfg) {
    Rng rng(cfg.seed);
    Rng rng_scene = rng.fork(1);
    Rng rng_p = rng.fork(2);
    Rng rng_q = rng.fork(3);

    ScenePair pair;
    Scene sc = build_scene(cfg, rng_scene, pair.t_gt);

    const int n = cfg.points_per_frame;
    std::map<std::uint16_t, RigidTransform> motion;  // object -> sensor-frame motion
    motion[0] = pair.t_gt;
    for (const auto& b : sc.boxes)
        if (b.object_id > 0) motion[b.object_id] = b.motion;

    pair.p.reserve(n);
    pair.flow.reserve(n);
    for (int i = 0; i < n; ++i) {
        const RawPoint rp = sample_scene_point(sc, rng_p);
        const RigidTransform& m = motion.at(rp.object_id);
        pair.p.push_back(rp.pos);
        pair.flow.push_back({m.apply(rp.pos)[0] - rp.pos[0], m.apply(rp.pos)[1] - rp.pos[1],
                             m.apply(rp.pos)[2] - rp.pos[2]});
        pair.labels_p.push_back(rp.object_id > 0 ? 1 : 0);
        pair.objects_p.push_back(rp.object_id);
    }

    for (int i = 0; i < n; ++i) {
        RawPoint rp;
        if (cfg.shared_sampling) {
            // stereoKITTI-like regime: frame-q surface samples coincide with p
            rp = {pair.p[static_cast<std::size_t>(i)],
                  pair.objects_p[static_cast<std::size_t>(i)]};
        } else {
            rp = sample_scene_point(sc, rng_q);
        }
        if (!cfg.shared_sampling && cfg.occlusion > 0.0 && rng_q.uniform() < cfg.occlusion)
            continue;
        Vec3 moved = motion.at(rp.object_id).apply(rp.pos);
        if (cfg.noise_sigma > 0.0)
            for (int c = 0; c < 3; ++c) moved[c] += cfg.noise_sigma * rng_q.normal();
        pair.q.push_back(moved);
        pair.labels_q.push_back(rp.object_id > 0 ? 1 : 0);
        pair.objects_q.push_back(rp.object_id);
    }
    if (pair.q.empty()) throw validation_error("generate: occlusion removed every q point");
    return pair;
}

namespace {
std::vector<int> sample_without_replacement(int total, int n, Rng& rng) {
    std::vector<int> idx(total);
    std::iota(idx.begin(), idx.end(), 0);
    // partial Fisher-Yates; the resulting prefix order is the shuffle
    for (int i = 0; i < n; ++i) {
        const int j = i + static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(total - i)));
        std::swap(idx[i], idx[j]);
    }
    idx.resize(n);
    return idx;
}
}  // namespace

ScenePair subsample_shuffle(const ScenePair& pair, int n, std::uint64_t seed) {
    Rng rng(seed);
    Rng rng_p = rng.fork(11);
    Rng rng_q = rng.fork(12);
    const int np = std::min<int>(n, static_cast<int>(pair.p.size()));
    const int nq = std::min<int>(n, static_cast<int>(pair.q.size()));

    ScenePair out;
    out.t_gt = pair.t_gt;
    const auto sel_p = sample_without_replacement(static_cast<int>(pair.p.size()), np, rng_p);
    for (int i : sel_p) {
        out.p.push_back(pair.p[i]);
        out.flow.push_back(pair.flow[i]);
        out.labels_p.push_back(pair.labels_p[i]);
        out.objects_p.push_back(pair.objects_p[i]);
    }
    const auto sel_q = sample_without_replacement(static_cast<int>(pair.q.size()), nq, rng_q);
    for (int i : sel_q) {
        out.q.push_back(pair.q[i]);
        out.labels_q.push_back(pair.labels_q[i]);
        out.objects_q.push_back(pair.objects_q[i]);
    }
    return out;
}

ScenePair augment_rotation(const ScenePair& pair, std::uint64_t seed) {
    Rng rng(seed);
    const int axis = static_cast<int>(rng.uniform_index(3));
    const double angle = rng.uniform(-10.0, 10.0) * kPi / 180.0;
    const RigidTransform a = axis_rotation(axis, angle);

    ScenePair out;
    out.t_gt = a.compose(pair.t_gt).compose(a.inverse());
    out.labels_p = pair.labels_p;
    out.labels_q = pair.labels_q;
    out.objects_p = pair.objects_p;
    out.objects_q = pair.objects_q;
    out.p.reserve(pair.p.size());
    out.flow.reserve(pair.flow.size());
    for (std::size_t i = 0; i < pair.p.size(); ++i) {
        const Vec3 pr = a.apply(pair.p[i]);
        out.p.push_back(pr);
        if (pair.labels_p[i]) {
            const Vec3 moved = a.apply({pair.p[i][0] + pair.flow[i][0],
                                        pair.p[i][1] + pair.flow[i][1],
                                        pair.p[i][2] + pair.flow[i][2]});
            out.flow.push_back({moved[0] - pr[0], moved[1] - pr[1], moved[2] - pr[2]});
        } else {
            // recomputed from the conjugated transform: invariant stays exact
            const Vec3 moved = out.t_gt.apply(pr);
            out.flow.push_back({moved[0] - pr[0], moved[1] - pr[1], moved[2] - pr[2]});
        }
    }
    out.q.reserve(pair.q.size());
    for (const auto& qp : pair.q) out.q.push_back(a.apply(qp));
    return out;
}

// ---- pair files -----------------------------------------------------------------

namespace {

constexpr char kPairMagic[4] = {'E', 'G', 'P', 'R'};
constexpr std::uint32_t kPairVersion = 1;

void put_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>((v >> 8) & 0xff),
                          static_cast<unsigned char>((v >> 16) & 0xff),
                          static_cast<unsigned char>((v >> 24) & 0xff)};
    os.write(reinterpret_cast<const char*>(b), 4);
}
std::uint32_t get_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}
void put_f32(std::ostream& os, float v) {
    std::uint32_t u;
    std::memcpy(&u, &v, 4);
    put_u32(os, u);
}
float get_f32(std::istream& is) {
    const std::uint32_t u = get_u32(is);
    float v;
    std::memcpy(&v, &u, 4);
    return v;
}
void put_u16(std::ostream& os, std::uint16_t v) {
    unsigned char b[2] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>((v >> 8) & 0xff)};
    os.write(reinterpret_cast<const char*>(b), 2);
}
std::uint16_t get_u16(std::istream& is) {
    unsigned char b[2];
    is.read(reinterpret_cast<char*>(b), 2);
    return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
}

void put_vec3s(std::ostream& os, const std::vector<Vec3>& v) {
    for (const auto& p : v)
        for (int c = 0; c < 3; ++c) put_f32(os, static_cast<float>(p[c]));
}
std::vector<Vec3> get_vec3s(std::istream& is, std::size_t n) {
    std::vector<Vec3> v(n);
    for (auto& p : v)
        for (int c = 0; c < 3; ++c) p[c] = static_cast<double>(get_f32(is));
    return v;
}

}  // namespace

void save_pair(const ScenePair& pair, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw validation_error("cannot open pair file for writing: " + path);
    os.write(kPairMagic, 4);
    put_u32(os, kPairVersion);
    put_u32(os, static_cast<std::uint32_t>(pair.p.size()));
    put_u32(os, static_cast<std::uint32_t>(pair.q.size()));
    put_vec3s(os, pair.p);
    put_vec3s(os, pair.q);
    put_vec3s(os, pair.flow);
    for (auto v : pair.labels_p) os.put(static_cast<char>(v));
    for (auto v : pair.labels_q) os.put(static_cast<char>(v));
    for (auto v : pair.objects_p) put_u16(os, v);
    for (auto v : pair.objects_q) put_u16(os, v);
    for (int i = 0; i < 9; ++i) put_f32(os, static_cast<float>(pair.t_gt.R[i]));
    for (int i = 0; i < 3; ++i) put_f32(os, static_cast<float>(pair.t_gt.t[i]));
    if (!os) throw validation_error("write failure on pair file: " + path);
}

ScenePair load_pair(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw validation_error("cannot open pair file: " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kPairMagic, 4) != 0)
        throw validation_error("bad pair magic in " + path);
    if (get_u32(is) != kPairVersion) throw validation_error("unsupported pair version in " + path);
    const std::uint32_t n = get_u32(is);
    const std::uint32_t m = get_u32(is);
    ScenePair pair;
    pair.p = get_vec3s(is, n);
    pair.q = get_vec3s(is, m);
    pair.flow = get_vec3s(is, n);
    pair.labels_p.resize(n);
    for (auto& v : pair.labels_p) v = static_cast<std::uint8_t>(is.get());
    pair.labels_q.resize(m);
    for (auto& v : pair.labels_q) v = static_cast<std::uint8_t>(is.get());
    pair.objects_p.resize(n);
    for (auto& v : pair.objects_p) v = get_u16(is);
    pair.objects_q.resize(m);
    for (auto& v : pair.objects_q) v = get_u16(is);
    for (int i = 0; i < 9; ++i) pair.t_gt.R[i] = static_cast<double>(get_f32(is));
    for (int i = 0; i < 3; ++i) pair.t_gt.t[i] = static_cast<double>(get_f32(is));
    if (!is) throw validation_error("truncated pair file: " + path);
    return pair;
}

void export_error_map(const PointCloud& p, const std::vector<Vec3>& pred,
                      const std::vector<Vec3>& gt, const std::string& path) {
    if (pred.size() != p.size() || gt.size() != p.size())
        throw shape_error("export_error_map: sizes disagree");
    std::vector<double> epe(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double dx = pred[i][0] - gt[i][0], dy = pred[i][1] - gt[i][1],
                     dz = pred[i][2] - gt[i][2];
        epe[i] = std::sqrt(dx * dx + dy * dy + dz * dz);
    }
    std::ofstream ply(path);
    if (!ply) throw validation_error("cannot open " + path);
    ply << "ply\nformat ascii 1.0\n";
    ply << "element vertex " << p.size() << "\n";
    ply << "property float x\nproperty float y\nproperty float z\n";
    ply << "property float epe\n";
    ply << "end_header\n";
    for (std::size_t i = 0; i < p.size(); ++i)
        ply << static_cast<float>(p[i][0]) << " " << static_cast<float>(p[i][1]) << " "
            << static_cast<float>(p[i][2]) << " " << static_cast<float>(epe[i]) << "\n";

    std::string csv_path = path;
    const auto dot = csv_path.find_last_of('.');
    csv_path = (dot == std::string::npos ? csv_path : csv_path.substr(0, dot)) + ".csv";
    std::ofstream csv(csv_path);
    csv << "x,y,z,epe\n";
    for (std::size_t i = 0; i < p.size(); ++i)
        csv << p[i][0] << "," << p[i][1] << "," << p[i][2] << "," << epe[i] << "\n";
}

void write_manifest(const std::vector<std::string>& relative_paths, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw validation_error("cannot open manifest for writing: " + path);
    for (const auto& p : relative_paths) os << p << "\n";
}

std::vector<std::string> read_manifest(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw validation_error("cannot open manifest: " + path);
    std::vector<std::string> out;
    std::string line;
    while (std::getline(is, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (!line.empty()) out.push_back(line);
    }
    return out;
}

PairConsistency pair_consistency(const ScenePair& pair) {
    PairConsistency out;
    std::map<std::uint16_t, std::vector<std::size_t>> objects;
    for (std::size_t i = 0; i < pair.p.size(); ++i) {
        if (pair.labels_p[i] == 0) {
            const Vec3 expect = pair.t_gt.apply(pair.p[i]);
            for (int c = 0; c < 3; ++c)
                out.bg_max_dev = std::max(out.bg_max_dev,
                                          std::abs(pair.flow[i][c] - (expect[c] - pair.p[i][c])));
        } else {
            objects[pair.objects_p[i]].push_back(i);
        }
    }
    for (const auto& [id, idx] : objects) {
        if (idx.size() < 3) continue;
        PointCloud src;
        std::vector<Vec3> dst;
        std::vector<double> w(idx.size(), 1.0);
        for (std::size_t i : idx) {
            src.push_back(pair.p[i]);
            dst.push_back({pair.p[i][0] + pair.flow[i][0], pair.p[i][1] + pair.flow[i][1],
                           pair.p[i][2] + pair.flow[i][2]});
        }
        try {
            const RigidTransform fit = kabsch_weighted(src, dst, w);
            for (std::size_t i = 0; i < src.size(); ++i) {
                const Vec3 mapped = fit.apply(src[i]);
                for (int c = 0; c < 3; ++c)
                    out.fg_max_dev = std::max(out.fg_max_dev, std::abs(mapped[c] - dst[i][c]));
            }
        } catch (const degeneracy_error&) {
            // under-constrained object sample; rigidity not checkable
        }
    }
    return out;
}

}  // namespace egoflow
