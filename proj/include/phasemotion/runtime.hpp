#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "phasemotion/motiondata.hpp"
#include "phasemotion/pae.hpp"

namespace phasemotion {

// ---------------------------------------------------------------------------
// Latent dynamics and transitions

/// theta held constant, phi_i <- wrap(phi_i + freq_scale * f_i * dt).
LatentState propagate(const LatentState& latent, double dt, double freq_scale = 1.0);

struct TransitionPlan {
    LatentState from;  // motion A endpoint
    LatentState to;    // motion B endpoint
    double duration_s = 0.5;
    double elapsed_s = 0.0;
};

enum class PhaseInterp {
    ShortestArc,  // interpolate along the wrap-aware signed difference
    Linear,       // raw linear mix of wrapped values
};

/// Latent mix at `elapsed_s`: the weight on `from` ramps linearly 1 -> 0 over
/// the plan's duration. Out-of-range times are clamped and reported through
/// `clamped` when given.
LatentState blend(const TransitionPlan& plan, double elapsed_s, PhaseInterp interp = PhaseInterp::ShortestArc,
                  bool* clamped = nullptr);

/// Decodes a latent and returns the newest column in joint units.
std::vector<double> decode_frame(const LatentState& latent, const Checkpoint& model);

/// Encodes the most recent H frames (joint units) afresh.
LatentState fresh_reencode(const TrajectorySegment& recent, const Checkpoint& model);

// ---------------------------------------------------------------------------
// PD actuator surrogate

struct TrackerGains {
    double kp = 100.0;  // 1/s^2 for unit inertia
    double kd = 20.0;   // 1/s
    double inertia = 1.0;
    double tau_limit = 50.0;
    /// Damp the velocity error against the finite-differenced target instead
    /// of the raw joint velocity.
    bool target_velocity = false;
};

struct TrackerState {
    std::vector<double> q;
    std::vector<double> qdot;
    std::vector<double> last_target;
    std::vector<double> torque;  // last applied
    std::vector<double> accel;   // last applied
    TrackerGains gains;

    static TrackerState at_rest(std::span<const double> q0, const TrackerGains& gains = {});
};

inline constexpr double kSimDt = 0.0025;  // 400 Hz
inline constexpr int kSimSubsteps = 4;    // one 100 Hz control period

/// Per substep: tau = clamp(kp (target - q) - kd qdot, +-tau_limit),
/// qddot = tau / inertia, semi-implicit Euler.
TrackerState pd_track_step(TrackerState tracker, std::span<const double> target, double sim_dt = kSimDt,
                           int substeps = kSimSubsteps);

/// Drives a tracker through a target clip starting at rest on its first frame;
/// returns the measured joint positions, one column per control step.
MotionClip track_clip(const MotionClip& targets, const TrackerGains& gains = {});

// ---------------------------------------------------------------------------
// Reward / metric formulas

enum class RewardPhase { DanceImitation, Locomotion, Gaze };

/// Any field may be missing; metrics needing it are then reported unavailable.
struct MetricFrame {
    std::optional<std::vector<double>> q_ref;
    std::optional<std::vector<double>> q;
    std::optional<std::vector<double>> qdot_ref;
    std::optional<std::vector<double>> qdot;
    std::optional<std::vector<double>> torque;
    std::optional<std::vector<double>> accel;
    std::optional<std::vector<double>> prev_target;
    std::optional<std::vector<double>> target;
    std::optional<double> collisions;
    std::optional<std::vector<double>> head_ref;  // pitch, yaw
    std::optional<std::vector<double>> head;
    std::optional<double> base_yaw_rate_ref;
    std::optional<double> base_yaw_rate;
    std::optional<std::vector<double>> foot_vel_xy;
    std::optional<std::vector<double>> foot_air_time;
};

namespace metric {
inline constexpr const char* kJointImitation = "joint_position_imitation";
inline constexpr const char* kBaseAngularVelocity = "base_angular_velocity_tracking";
inline constexpr const char* kHeadOrientation = "end_effector_orientation_tracking";
inline constexpr const char* kTorque = "joint_torque";
inline constexpr const char* kAcceleration = "joint_acceleration";
inline constexpr const char* kTargetDifference = "joint_target_difference";
inline constexpr const char* kSelfCollision = "self_collisions";
inline constexpr const char* kFootSlippage = "foot_slippage";
inline constexpr const char* kFootAirTime = "foot_air_time";
}  // namespace metric

/// Raw tracking terms lie in (0, 1]; raw penalties are signed (<= 0, except
/// foot air time). Scaled values multiply by the magnitude of the table scale.
struct RewardReport {
    std::map<std::string, double> raw;
    /// Only metrics with a scale in the selected phase appear here.
    std::map<std::string, double> scaled;
    std::vector<std::string> unavailable;
};

RewardReport rewards(const MetricFrame& frame, RewardPhase phase = RewardPhase::DanceImitation);

/// Scale for a metric in a phase; nullopt where the metric is not used.
std::optional<double> reward_scale(const std::string& metric_name, RewardPhase phase);

/// Mean |reference - measured| over all rows and frames.
double mae(const MotionClip& reference, const MotionClip& measured);

// ---------------------------------------------------------------------------
// Playback controller

enum class PlaybackMode {
    ReplayEncoded,    // re-encode the reference window every tick
    PropagateLatent,  // encode once, then advance with the latent dynamics
};

struct PlaybackSource {
    std::size_t clip = 0;
    double position = 0.0;  // newest frame of the reference window, fractional
    LatentState latent;
};

struct PlaybackState {
    LatentState latent;
    std::optional<PlaybackSource> source;
    std::optional<PlaybackSource> incoming;  // motion B during a transition
    std::optional<TransitionPlan> transition;
    double freq_scale = 1.0;
    PlaybackMode mode = PlaybackMode::ReplayEncoded;
    std::size_t tick = 0;
};

struct Command {
    enum class Type { Play, Stop, Transition, FreqScale, Mode };
    Type type = Type::Play;
    std::string motion;       // Play, Transition
    double duration_s = 0.5;  // Transition
    double value = 1.0;       // FreqScale
    PlaybackMode mode = PlaybackMode::ReplayEncoded;
};

struct Frame {
    double t = 0.0;
    std::vector<double> q;
    LatentState latent;
    bool in_transition = false;
    std::string motion;
};

/// Owns PlaybackState and advances it one control period per tick.
class Player {
public:
    Player(const Checkpoint& model, std::vector<MotionClip> motions);

    /// Throws InvalidArgument for unknown motions, bad values or a second
    /// concurrent transition; state is untouched in that case.
    void apply(const Command& cmd);
    Frame tick();

    const PlaybackState& state() const { return state_; }
    std::span<const MotionClip> motions() const { return motions_; }
    const Checkpoint& model() const { return *model_; }
    double period() const { return model_->config.dt; }

private:
    std::size_t find_motion(const std::string& name) const;
    PlaybackSource start_source(std::size_t clip) const;
    LatentState encode_at(std::size_t clip, double position) const;
    void advance(PlaybackSource& src);

    const Checkpoint* model_;
    std::vector<MotionClip> motions_;
    PlaybackState state_;
};

struct ScriptedCommand {
    std::size_t tick = 0;  // applied before the frame with this index
    Command command;
};

/// Logical-clock rollout of `ticks` frames.
std::vector<Frame> rollout(Player& player, std::span<const ScriptedCommand> script, std::size_t ticks);

}  // namespace phasemotion
