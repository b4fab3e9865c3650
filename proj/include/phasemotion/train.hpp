#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "phasemotion/motiondata.hpp"
#include "phasemotion/pae.hpp"

namespace phasemotion {

struct TrainConfig {
    double lr = 1e-4;
    double weight_decay = 5e-4;
    std::size_t batch = 50;
    std::size_t max_iters = 5000;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::uint64_t seed = 1;
    /// Checkpoint period in iterations; 0 disables periodic checkpoints.
    std::size_t eval_every = 1000;
    /// 0 evaluates every prediction step 0..N. Otherwise each sample uses step 0
    /// plus this many distinct steps drawn from 1..N, weighted N/m, which is an
    /// unbiased estimate of the full N-step loss.
    std::size_t future_samples = 0;

    void validate() const;
};

struct AdamState {
    std::vector<double> m;
    std::vector<double> v;
    std::uint64_t step = 0;

    AdamState() = default;
    explicit AdamState(std::size_t n) : m(n, 0.0), v(n, 0.0) {}
};

/// Bias-corrected Adam followed by decoupled weight decay p -= lr * wd * p.
/// Throws NumericFailure naming the offending entry if any gradient is not
/// finite; nothing is modified in that case.
void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state, const TrainConfig& cfg,
               const std::function<std::string(std::size_t)>& describe = {});
void adam_step(ModelParams& params, AdamState& state, const TrainConfig& cfg);

struct LossRecord {
    std::size_t iter = 0;
    double loss = 0.0;
    friend bool operator==(const LossRecord&, const LossRecord&) = default;
};

/// A training sample: clip index and first column of s_t.
struct SampleRef {
    std::size_t clip = 0;
    std::size_t start = 0;
};

/// Every (clip, start) whose window plus `horizon` future frames fits in the clip.
std::vector<SampleRef> valid_samples(std::span<const MotionClip> clips, std::size_t window, std::size_t horizon);

struct TrainResult {
    Checkpoint checkpoint;
    std::vector<LossRecord> log;
};

/// Called after each logged iteration; return false to stop early.
using TrainProgress = std::function<bool(const LossRecord&)>;

/// Trains on `clips` (raw joint units). Normalization is fitted on the clips
/// and embedded in the checkpoint. When `out_dir` is set, writes `loss.csv`,
/// periodic `ckpt_<iter>.ckpt` files and the final `model.ckpt`.
TrainResult train(std::span<const MotionClip> clips, const TrainConfig& cfg, const ModelConfig& mcfg,
                  const std::optional<std::filesystem::path>& out_dir = std::nullopt,
                  const TrainProgress& progress = {});

TrainResult train(const std::filesystem::path& manifest_path, const TrainConfig& cfg, const ModelConfig& mcfg,
                  const std::optional<std::filesystem::path>& out_dir = std::nullopt,
                  const TrainProgress& progress = {});

void write_loss_log(const std::filesystem::path& path, std::span<const LossRecord> log);

/// `key = value` lines; `#` starts a comment.
using ConfigMap = std::map<std::string, std::string>;
ConfigMap read_config(const std::filesystem::path& path);
ConfigMap parse_config(const std::string& text);
/// Applies recognized keys; throws InvalidArgument on malformed values.
void apply_config(const ConfigMap& config, TrainConfig& train, ModelConfig& model);
/// Throws InvalidArgument naming the first key not in `known`.
void check_config_keys(const ConfigMap& config, std::span<const std::string_view> known);
std::span<const std::string_view> train_config_keys();

}  // namespace phasemotion
