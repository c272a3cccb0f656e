#pragma once

// Plain-text key=value configuration with [section] headers. Every network
// and loss constant has a named key; the desk/paper profiles only change the
// defaults, explicit keys always win.

#include <array>
#include <map>
#include <string>
#include <vector>

#include "egoflow/backbone.hpp"
#include "egoflow/losses.hpp"
#include "egoflow/synth.hpp"

namespace egoflow {

class Config {
  public:
    static Config parse_file(const std::string& path);
    static Config parse_string(const std::string& text);

    bool has(const std::string& key) const { return values_.count(key) > 0; }
    void set(const std::string& key, const std::string& value) { values_[key] = value; }

    std::string get(const std::string& key, const std::string& fallback) const;
    int get_int(const std::string& key, int fallback) const;
    double get_double(const std::string& key, double fallback) const;
    bool get_bool(const std::string& key, bool fallback) const;
    std::vector<double> get_list(const std::string& key, std::vector<double> fallback) const;

    const std::map<std::string, std::string>& values() const { return values_; }

  private:
    std::map<std::string, std::string> values_;  // "section.key" -> raw string
};

/// Everything a training / evaluation run needs, resolved from a profile and
/// an optional config file.
struct RunConfig {
    ModelConfig model;
    LossConfig loss;
    SceneConfig scene;

    std::string profile = "desk";
    int points = 1024;     // per-frame resolution after subsampling
    bool augment = true;

    int epochs = 30;
    double lr = 0.001;
    double lr_decay = 0.7;
    int decay_epochs = 10;
    double grad_clip = 100.0;  // global grad-norm clip; 0 disables
    std::uint64_t seed = 42;
    int val_interval = 5;

    int train_pairs = 64;  // only used by gen-data defaults
    std::string out_dir = "out";
};

/// Learning rate at a given epoch: lr * decay^(epoch / decay_epochs).
double lr_at_epoch(const RunConfig& cfg, int epoch);

/// profile is "desk" or "paper"; cfg keys override profile defaults.
RunConfig make_run_config(const Config& cfg, const std::string& profile);

SceneConfig scene_config_from(const Config& cfg, const SceneConfig& defaults);

}  // namespace egoflow
