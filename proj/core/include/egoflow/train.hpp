#pragma once

// Training loop (Adam, exponential learning-rate decay, per-epoch CSV log,
// deterministic under a fixed seed, resumable) and the evaluation driver.

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "egoflow/config.hpp"
#include "egoflow/flow.hpp"
#include "egoflow/metrics.hpp"
#include "egoflow/synth.hpp"

namespace egoflow {

struct EpochLog {
    int epoch = 0;
    double lr = 0;
    double total = 0, seg = 0, ego = 0, chamfer = 0, smooth = 0;
    std::optional<SceneMetricsRow> val;
};

struct TrainResult {
    std::string checkpoint_path;
    std::string log_path;
    std::vector<EpochLog> epochs;
};

/// In-memory dataset. Pairs are stored raw; per-step subsampling/shuffling
/// and augmentation are applied with epoch-derived seeds, so resuming from a
/// checkpoint reproduces the uninterrupted run exactly.
class Dataset {
  public:
    static Dataset from_manifest(const std::string& manifest_path);
    static Dataset from_pairs(std::vector<ScenePair> pairs);

    std::size_t size() const { return pairs_.size(); }
    const ScenePair& pair(std::size_t i) const { return pairs_[i]; }
    const std::string& name(std::size_t i) const { return names_[i]; }

  private:
    std::vector<ScenePair> pairs_;
    std::vector<std::string> names_;
};

/// The pair as the network sees it during one step.
ScenePair prepare_sample(const ScenePair& raw, const RunConfig& cfg, std::uint64_t seed,
                         bool augment);

TrainResult train_model(SceneFlowNet<float>& model, const Dataset& train_set,
                        const Dataset* val_set, const RunConfig& cfg, std::ostream* progress,
                        const std::string& resume_checkpoint = "");

struct EvalOptions {
    bool inject_oracle = false;   // report metrics for the ground-truth flow (plumbing check)
    bool per_scene_average = false;
    int jobs = 1;
    int points = 0;  // 0 = use pairs as stored
    std::uint64_t seed = 9001;
};

std::vector<SceneMetricsRow> evaluate_model(const SceneFlowNet<float>& model,
                                            const Dataset& data, const EvalOptions& opts);

}  // namespace egoflow
