#include "egoflow/config.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

namespace egoflow {

namespace {
std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}
}  // namespace

Config Config::parse_string(const std::string& text) {
    Config cfg;
    std::istringstream is(text);
    std::string line, section;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']')
                throw validation_error("config line " + std::to_string(lineno) +
                                       ": unterminated section header");
            section = trim(line.substr(1, line.size() - 2));
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw validation_error("config line " + std::to_string(lineno) +
                                   ": expected key = value");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty())
            throw validation_error("config line " + std::to_string(lineno) + ": empty key");
        cfg.values_[section.empty() ? key : section + "." + key] = value;
    }
    return cfg;
}

Config Config::parse_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw validation_error("cannot open config: " + path);
    std::stringstream ss;
    ss << is.rdbuf();
    return parse_string(ss.str());
}

std::string Config::get(const std::string& key, const std::string& fallback) const {
    auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
}

int Config::get_int(const std::string& key, int fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    try {
        return std::stoi(it->second);
    } catch (...) {
        throw validation_error("config key " + key + ": not an integer: " + it->second);
    }
}

double Config::get_double(const std::string& key, double fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    try {
        return std::stod(it->second);
    } catch (...) {
        throw validation_error("config key " + key + ": not a number: " + it->second);
    }
}

bool Config::get_bool(const std::string& key, bool fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    const std::string& v = it->second;
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw validation_error("config key " + key + ": not a boolean: " + v);
}

std::vector<double> Config::get_list(const std::string& key, std::vector<double> fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    std::vector<double> out;
    std::stringstream ss(it->second);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            out.push_back(std::stod(trim(item)));
        } catch (...) {
            throw validation_error("config key " + key + ": bad list element: " + item);
        }
    }
    if (out.empty()) throw validation_error("config key " + key + ": empty list");
    return out;
}

double lr_at_epoch(const RunConfig& cfg, int epoch) {
    const int steps = cfg.decay_epochs > 0 ? epoch / cfg.decay_epochs : 0;
    return cfg.lr * std::pow(cfg.lr_decay, steps);
}

RunConfig make_run_config(const Config& cfg, const std::string& profile) {
    RunConfig rc;
    rc.profile = profile;
    if (profile == "paper") {
        rc.model.channels = {32, 128, 256, 512};
        rc.points = 8192;
        rc.epochs = 150;
        rc.scene.points_per_frame = 16384;
    } else if (profile == "desk") {
        rc.model.channels = {16, 32, 64, 128};
        rc.points = 1024;
        rc.epochs = 30;
        rc.scene.points_per_frame = 2048;
    } else {
        throw validation_error("unknown profile: " + profile + " (expected desk or paper)");
    }

    auto ch = cfg.get_list("model.channels",
                           {static_cast<double>(rc.model.channels[0]),
                            static_cast<double>(rc.model.channels[1]),
                            static_cast<double>(rc.model.channels[2]),
                            static_cast<double>(rc.model.channels[3])});
    if (ch.size() != 4) throw validation_error("model.channels: expected 4 values");
    for (int i = 0; i < 4; ++i) rc.model.channels[i] = static_cast<int>(ch[i]);
    rc.model.knn_k = cfg.get_int("model.knn_k", rc.model.knn_k);
    rc.model.sf_width = cfg.get_int("model.sf_width", rc.model.sf_width);
    rc.model.use_mask_in_ego = cfg.get_bool("model.use_mask_in_ego", rc.model.use_mask_in_ego);
    rc.model.use_hybrid_warp = cfg.get_bool("model.use_hybrid_warp", rc.model.use_hybrid_warp);
    rc.model.use_feature_update =
        cfg.get_bool("model.use_feature_update", rc.model.use_feature_update);
    rc.model.use_attention_refine =
        cfg.get_bool("model.use_attention_refine", rc.model.use_attention_refine);
    rc.model.use_hybrid_features =
        cfg.get_bool("model.use_hybrid_features", rc.model.use_hybrid_features);
    rc.model.use_stop_grad = cfg.get_bool("model.use_stop_grad", rc.model.use_stop_grad);

    rc.loss.gamma = cfg.get_double("loss.gamma", rc.loss.gamma);
    rc.loss.beta = cfg.get_double("loss.beta", rc.loss.beta);
    auto alpha = cfg.get_list("loss.alpha", {rc.loss.alpha[0], rc.loss.alpha[1], rc.loss.alpha[2],
                                             rc.loss.alpha[3]});
    if (alpha.size() != 4) throw validation_error("loss.alpha: expected 4 values");
    for (int i = 0; i < 4; ++i) rc.loss.alpha[i] = alpha[i];
    auto sk = cfg.get_list("loss.smooth_k",
                           {static_cast<double>(rc.loss.smooth_k[0]),
                            static_cast<double>(rc.loss.smooth_k[1]),
                            static_cast<double>(rc.loss.smooth_k[2]),
                            static_cast<double>(rc.loss.smooth_k[3])});
    if (sk.size() != 4) throw validation_error("loss.smooth_k: expected 4 values");
    for (int i = 0; i < 4; ++i) rc.loss.smooth_k[i] = static_cast<int>(sk[i]);
    rc.loss.mask_losses = cfg.get_bool("loss.mask_losses", rc.loss.mask_losses);

    rc.points = cfg.get_int("data.points", rc.points);
    rc.augment = cfg.get_bool("data.augment", rc.augment);
    rc.train_pairs = cfg.get_int("data.train_pairs", rc.train_pairs);

    rc.epochs = cfg.get_int("train.epochs", rc.epochs);
    rc.lr = cfg.get_double("train.lr", rc.lr);
    rc.lr_decay = cfg.get_double("train.lr_decay", rc.lr_decay);
    rc.decay_epochs = cfg.get_int("train.decay_epochs", rc.decay_epochs);
    rc.grad_clip = cfg.get_double("train.grad_clip", rc.grad_clip);
    rc.seed = static_cast<std::uint64_t>(cfg.get_int("train.seed", static_cast<int>(rc.seed)));
    rc.val_interval = cfg.get_int("train.val_interval", rc.val_interval);
    rc.out_dir = cfg.get("train.out_dir", rc.out_dir);

    rc.scene = scene_config_from(cfg, rc.scene);
    return rc;
}

SceneConfig scene_config_from(const Config& cfg, const SceneConfig& defaults) {
    SceneConfig sc = defaults;
    sc.extent = cfg.get_double("scene.extent", sc.extent);
    sc.points_per_frame = cfg.get_int("scene.points_per_frame", sc.points_per_frame);
    sc.ground_density = cfg.get_double("scene.ground_density", sc.ground_density);
    sc.num_structures = cfg.get_int("scene.num_structures", sc.num_structures);
    sc.num_movers = cfg.get_int("scene.num_movers", sc.num_movers);
    sc.mover_size_min = cfg.get_double("scene.mover_size_min", sc.mover_size_min);
    sc.mover_size_max = cfg.get_double("scene.mover_size_max", sc.mover_size_max);
    sc.mover_speed_min = cfg.get_double("scene.mover_speed_min", sc.mover_speed_min);
    sc.mover_speed_max = cfg.get_double("scene.mover_speed_max", sc.mover_speed_max);
    sc.mover_density = cfg.get_double("scene.mover_density", sc.mover_density);
    sc.ego_rot_deg = cfg.get_double("scene.ego_rot_deg", sc.ego_rot_deg);
    sc.ego_trans = cfg.get_double("scene.ego_trans", sc.ego_trans);
    sc.occlusion = cfg.get_double("scene.occlusion", sc.occlusion);
    sc.noise_sigma = cfg.get_double("scene.noise_sigma", sc.noise_sigma);
    sc.shared_sampling = cfg.get_bool("scene.shared_sampling", sc.shared_sampling);
    return sc;
}

}  // namespace egoflow
