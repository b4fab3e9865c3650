#pragma once

// Experiment harness: tracking accuracy, latent variability around aperiodic
// features, frequency ordering under time warps, and transition smoothness.

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "phasemotion/motiondata.hpp"
#include "phasemotion/pae.hpp"
#include "phasemotion/runtime.hpp"

namespace phasemotion {

/// Decoded targets for frames H-1 .. T-1 of `clip` (the frames with a full
/// window of history). ReplayEncoded re-encodes every frame; PropagateLatent
/// encodes frame H-1 once and advances with the latent dynamics.
MotionClip reconstruct_clip(const MotionClip& clip, const Checkpoint& model,
                            PlaybackMode mode = PlaybackMode::ReplayEncoded);

/// `clip` restricted to frames H-1 .. T-1, aligned with reconstruct_clip.
MotionClip reference_span(const MotionClip& clip, std::size_t window);

/// Gains of the experiment suite: critically damped at 50 rad/s with
/// target-velocity damping, so tracking lag stays small next to the
/// representation error being compared.
TrackerGains evaluation_gains();

struct TrackingResult {
    std::string clip;
    double reconstruction_mae = 0.0;  // decoded targets vs reference
    double tracking_mae = 0.0;        // tracked joints vs reference
    double mean_imitation = 0.0;      // exp(-|q* - q|^2) averaged after settle
};

TrackingResult evaluate_tracking(const MotionClip& clip, const Checkpoint& model, const TrackerGains& gains,
                                 PlaybackMode mode = PlaybackMode::ReplayEncoded, double settle_s = 0.5);

struct MaeComparison {
    std::vector<TrackingResult> dfm;  // N = 0 model
    std::vector<TrackingResult> fld;  // N > 0 model
    double dfm_mae = 0.0;
    double fld_mae = 0.0;
    double ratio = 0.0;  // dfm_mae / fld_mae
    std::size_t clips = 0;
};

/// Mean tracking MAE over every clip containing a bump (`has_bump(i)`).
MaeComparison compare_tracking(std::span<const MotionClip> clips, const std::vector<bool>& has_bump,
                               const Checkpoint& dfm, const Checkpoint& fld, const TrackerGains& gains);

struct BumpVariability {
    std::string clip;
    std::size_t joint = 0;
    std::size_t bump_begin = 0;  // frames
    std::size_t bump_end = 0;
    std::size_t reference_frame = 0;  // last frame whose window is bump-free
    std::size_t channel = 0;          // channel with the largest fresh deviation
    double fresh_deviation = 0.0;     // max relative change of f or a, re-encoded
    double propagated_deviation = 0.0;
    std::optional<double> control_deviation;  // re-encoded, same-length interval before the bump
    double ratio = 0.0;                       // fresh / propagated, inf when propagation is exact
};

/// Compares latent (f, a) excursions during a bump under fresh re-encoding
/// against latent propagation from the last bump-free window.
BumpVariability bump_variability(const MotionClip& clip, const JointRecipe& bumped_joint, std::size_t joint,
                                 const Checkpoint& model);

struct WarpOrdering {
    std::string clip;
    std::size_t channel = 0;
    double f_slow = 0.0;  // 0.75x
    double f_mid = 0.0;   // 0.875x, unseen
    double f_fast = 0.0;  // 1.0x
    bool between = false;
};

/// Mean latent frequency of the dominant channel over all windows of the
/// 0.75x, 0.875x and 1.0x variants of `base`.
WarpOrdering warp_ordering(const MotionClip& base, const Checkpoint& model);

struct TransitionSmoothness {
    std::string from, to;
    std::size_t switch_tick = 0;
    double hard_peak_velocity = 0.0;   // max |dq|/dt, rad/s
    double blend_peak_velocity = 0.0;
    double ratio = 0.0;                // hard / blend
    bool endpoints_exact = false;
};

/// Plays `from`, switches to `to` at the tick where the joint-space gap to
/// `to`'s first frame is largest, once instantly and once with a latent blend.
TransitionSmoothness transition_smoothness(const Checkpoint& model, const MotionClip& from, const MotionClip& to,
                                           double duration_s = 0.5, double lead_s = 1.0);

/// Per clip: does its base motion carry a bump on any joint? Clips are matched
/// to generator recipes through their base motion id.
std::vector<bool> bump_flags(std::span<const MotionClip> clips, const CorpusConfig& corpus);

struct BumpCase {
    std::size_t base = 0;  // generator clip index
    std::size_t joint = 0;
    JointRecipe recipe;
};

/// Largest-amplitude bump whose +-2 sigma interval leaves a full bump-free
/// window before it and ends inside the clip.
std::optional<BumpCase> find_bump_case(const CorpusConfig& corpus, std::size_t window);

/// Index of the clip (other than `from`) whose first frame lies farthest, in
/// max-abs joint distance, from any frame of clip `from`'s first second.
std::size_t farthest_motion(std::span<const MotionClip> clips, std::size_t from);

/// Max over joints and consecutive frames of |q[t+1] - q[t]| / dt.
double peak_joint_velocity(std::span<const Frame> frames, double dt);

nlohmann::json to_json(const TrackingResult& r);
nlohmann::json to_json(const MaeComparison& r);
nlohmann::json to_json(const BumpVariability& r);
nlohmann::json to_json(const WarpOrdering& r);
nlohmann::json to_json(const TransitionSmoothness& r);

}  // namespace phasemotion
