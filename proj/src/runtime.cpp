#include "phasemotion/runtime.hpp"

#include <algorithm>
#include <cmath>

#include "phasemotion/error.hpp"

namespace phasemotion {

LatentState propagate(const LatentState& latent, double dt, double freq_scale) {
    LatentState out = latent;
    for (std::size_t i = 0; i < out.phi.size(); ++i)
        out.phi[i] = wrap_phase(out.phi[i] + freq_scale * out.theta[i].f * dt);
    return out;
}

LatentState blend(const TransitionPlan& plan, double elapsed_s, PhaseInterp interp, bool* clamped) {
    if (plan.from.channels() != plan.to.channels() || plan.from.theta.size() != plan.to.theta.size())
        throw InvalidArgument("blend: endpoint latents have different channel counts");
    if (!(plan.duration_s > 0.0)) throw InvalidArgument("blend: duration must be positive");
    const double e = std::clamp(elapsed_s, 0.0, plan.duration_s);
    if (clamped != nullptr) *clamped = e != elapsed_s;

    auto wrapped = [](LatentState s) {
        for (double& p : s.phi) p = wrap_phase(p);
        return s;
    };
    if (e == 0.0) return wrapped(plan.from);
    if (e == plan.duration_s) return wrapped(plan.to);

    const double alpha = 1.0 - e / plan.duration_s;  // weight on motion A
    LatentState out = plan.from;
    for (std::size_t i = 0; i < out.channels(); ++i) {
        const auto& a = plan.from.theta[i];
        const auto& b = plan.to.theta[i];
        out.theta[i] = {alpha * a.f + (1.0 - alpha) * b.f, alpha * a.a + (1.0 - alpha) * b.a,
                        alpha * a.b + (1.0 - alpha) * b.b};
        const double pa = plan.from.phi[i];
        const double pb = plan.to.phi[i];
        if (interp == PhaseInterp::ShortestArc)
            out.phi[i] = wrap_phase(pa + (1.0 - alpha) * wrap_phase(pb - pa));
        else
            out.phi[i] = wrap_phase(alpha * pa + (1.0 - alpha) * pb);
    }
    return out;
}

std::vector<double> decode_frame(const LatentState& latent, const Checkpoint& model) {
    const Matrix out = decode(latent, model.params, model.config);
    std::vector<double> q = out.column(model.config.H - 1);
    model.norm.invert_in_place(q);
    return q;
}

LatentState fresh_reencode(const TrajectorySegment& recent, const Checkpoint& model) {
    if (recent.values.cols() != model.config.H)
        throw InvalidArgument("fresh_reencode: need " + std::to_string(model.config.H) + " frames of history, got " +
                              std::to_string(recent.values.cols()));
    return encode(model.norm.apply(recent.values).view(), model.params, model.config).state;
}

// ---------------------------------------------------------------------------

TrackerState TrackerState::at_rest(std::span<const double> q0, const TrackerGains& gains) {
    TrackerState s;
    s.q.assign(q0.begin(), q0.end());
    s.qdot.assign(q0.size(), 0.0);
    s.last_target = s.q;
    s.torque.assign(q0.size(), 0.0);
    s.accel.assign(q0.size(), 0.0);
    s.gains = gains;
    return s;
}

TrackerState pd_track_step(TrackerState tracker, std::span<const double> target, double sim_dt, int substeps) {
    const std::size_t n = tracker.q.size();
    if (target.size() != n) throw InvalidArgument("pd_track_step: target has wrong joint count");
    for (double v : target)
        if (!std::isfinite(v)) throw InvalidArgument("pd_track_step: non-finite target");
    if (!(sim_dt > 0.0) || substeps <= 0) throw InvalidArgument("pd_track_step: bad integration step");

    const auto& g = tracker.gains;
    const double period = sim_dt * substeps;
    std::vector<double> target_vel(n, 0.0);
    if (g.target_velocity)
        for (std::size_t j = 0; j < n; ++j) target_vel[j] = (target[j] - tracker.last_target[j]) / period;

    for (int s = 0; s < substeps; ++s) {
        for (std::size_t j = 0; j < n; ++j) {
            const double raw = g.kp * (target[j] - tracker.q[j]) + g.kd * (target_vel[j] - tracker.qdot[j]);
            const double tau = std::clamp(raw, -g.tau_limit, g.tau_limit);
            const double acc = tau / g.inertia;
            tracker.qdot[j] += acc * sim_dt;
            tracker.q[j] += tracker.qdot[j] * sim_dt;
            tracker.torque[j] = tau;
            tracker.accel[j] = acc;
        }
    }
    tracker.last_target.assign(target.begin(), target.end());
    return tracker;
}

MotionClip track_clip(const MotionClip& targets, const TrackerGains& gains) {
    MotionClip measured = targets;
    measured.name = targets.name + "_tracked";
    if (targets.frames() == 0) return measured;
    TrackerState tracker = TrackerState::at_rest(targets.states.column(0), gains);
    for (std::size_t t = 0; t < targets.frames(); ++t) {
        tracker = pd_track_step(std::move(tracker), targets.states.column(t));
        for (std::size_t r = 0; r < targets.dims(); ++r) measured.states(r, t) = tracker.q[r];
    }
    return measured;
}

// ---------------------------------------------------------------------------

namespace {

struct ScaleRow {
    const char* name;
    std::optional<double> dance, locomotion, gaze;
};

const ScaleRow kScales[] = {
    {metric::kJointImitation, 1.0, 1.0, 1.0},
    {metric::kBaseAngularVelocity, 0.0, 1.0, std::nullopt},
    {metric::kHeadOrientation, 0.0, std::nullopt, 0.7},
    {metric::kTorque, -0.001, -0.001, -0.001},
    {metric::kAcceleration, -2e-7, -2e-7, -2e-7},
    {metric::kTargetDifference, -0.01, -0.01, -0.01},
    {metric::kSelfCollision, -10.0, -10.0, -10.0},
    {metric::kFootSlippage, 0.0, -0.15, std::nullopt},
    {metric::kFootAirTime, 0.0, 2.0, std::nullopt},
};

double squared_distance(const std::vector<double>& x, const std::vector<double>& y, const char* name) {
    if (x.size() != y.size()) throw InvalidArgument(std::string("rewards: size mismatch in ") + name);
    double s = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) s += (x[i] - y[i]) * (x[i] - y[i]);
    return s;
}

double squared_norm(const std::vector<double>& x) {
    double s = 0.0;
    for (double v : x) s += v * v;
    return s;
}

}  // namespace

std::optional<double> reward_scale(const std::string& metric_name, RewardPhase phase) {
    for (const auto& row : kScales)
        if (metric_name == row.name) {
            switch (phase) {
                case RewardPhase::DanceImitation: return row.dance;
                case RewardPhase::Locomotion: return row.locomotion;
                case RewardPhase::Gaze: return row.gaze;
            }
        }
    return std::nullopt;
}

RewardReport rewards(const MetricFrame& f, RewardPhase phase) {
    RewardReport report;
    auto put = [&](const char* name, std::optional<double> value) {
        if (!value) {
            report.unavailable.emplace_back(name);
            return;
        }
        report.raw[name] = *value;
        // Penalties already carry their sign, so only the scale's magnitude applies.
        if (const auto scale = reward_scale(name, phase)) report.scaled[name] = std::abs(*scale) * *value;
    };

    // Exponent signs follow the angular-velocity row for all tracking terms.
    put(metric::kJointImitation, f.q_ref && f.q ? std::optional(std::exp(-squared_distance(*f.q_ref, *f.q, "q")))
                                               : std::nullopt);
    put(metric::kBaseAngularVelocity,
        f.base_yaw_rate_ref && f.base_yaw_rate
            ? std::optional(std::exp(-(1.0 / 0.06) * std::pow(*f.base_yaw_rate_ref - *f.base_yaw_rate, 2)))
            : std::nullopt);
    put(metric::kHeadOrientation, f.head_ref && f.head
                                      ? std::optional(std::exp(-4.0 * squared_distance(*f.head_ref, *f.head, "head")))
                                      : std::nullopt);
    put(metric::kTorque, f.torque ? std::optional(-squared_norm(*f.torque)) : std::nullopt);
    put(metric::kAcceleration, f.accel ? std::optional(-squared_norm(*f.accel)) : std::nullopt);
    put(metric::kTargetDifference,
        f.prev_target && f.target ? std::optional(-squared_distance(*f.prev_target, *f.target, "target"))
                                  : std::nullopt);
    put(metric::kSelfCollision, f.collisions ? std::optional(-*f.collisions) : std::nullopt);
    put(metric::kFootSlippage, f.foot_vel_xy ? std::optional(-squared_norm(*f.foot_vel_xy)) : std::nullopt);
    if (f.foot_air_time) {
        double s = 0.0;
        for (double t : *f.foot_air_time) s += t - 0.2;
        put(metric::kFootAirTime, s);
    } else {
        put(metric::kFootAirTime, std::nullopt);
    }
    return report;
}

double mae(const MotionClip& reference, const MotionClip& measured) {
    if (reference.dims() != measured.dims() || reference.frames() != measured.frames())
        throw InvalidArgument("mae: clips differ in shape");
    if (reference.dt != measured.dt) throw InvalidArgument("mae: clips differ in timestep");
    if (reference.states.empty()) throw InvalidArgument("mae: empty clips");
    const auto a = reference.states.flat();
    const auto b = measured.states.flat();
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a[i] - b[i]);
    return s / static_cast<double>(a.size());
}

// ---------------------------------------------------------------------------

Player::Player(const Checkpoint& model, std::vector<MotionClip> motions) : model_(&model), motions_(std::move(motions)) {
    if (motions_.empty()) throw InvalidArgument("Player: no motions");
    for (auto& clip : motions_) {
        if (clip.with_velocities && clip.dims() != model.config.d) clip = clip.positions_only();
        if (clip.dims() != model.config.d)
            throw InvalidArgument("Player: motion '" + clip.name + "' does not match model dimension");
        if (clip.frames() < model.config.H)
            throw InvalidArgument("Player: motion '" + clip.name + "' is shorter than the window");
    }
    state_.latent.phi.assign(model.config.c, 0.0);
    state_.latent.theta.assign(model.config.c, SpectralParams{});
}

std::size_t Player::find_motion(const std::string& name) const {
    for (std::size_t i = 0; i < motions_.size(); ++i)
        if (motions_[i].name == name) return i;
    throw InvalidArgument("unknown motion '" + name + "'");
}

LatentState Player::encode_at(std::size_t clip, double position) const {
    // Clips loop, so the window is read cyclically with linear interpolation.
    const auto& src = motions_[clip];
    const std::size_t H = model_->config.H;
    const auto T = static_cast<double>(src.frames());
    TrajectorySegment seg;
    seg.dt = src.dt;
    seg.values = Matrix(src.dims(), H);
    for (std::size_t j = 0; j < H; ++j) {
        double p = std::fmod(position - static_cast<double>(H - 1 - j), T);
        if (p < 0.0) p += T;
        const auto i0 = static_cast<std::size_t>(p);
        const double w = p - static_cast<double>(i0);
        const std::size_t a = i0 % src.frames();
        const std::size_t b = (i0 + 1) % src.frames();
        for (std::size_t r = 0; r < src.dims(); ++r)
            seg.values(r, j) = w == 0.0 ? src.states(r, a) : (1.0 - w) * src.states(r, a) + w * src.states(r, b);
    }
    return fresh_reencode(seg, *model_);
}

PlaybackSource Player::start_source(std::size_t clip) const {
    PlaybackSource src;
    src.clip = clip;
    src.position = static_cast<double>(model_->config.H - 1);
    src.latent = encode_at(clip, src.position);
    return src;
}

void Player::advance(PlaybackSource& src) {
    src.position += state_.freq_scale;
    const double T = static_cast<double>(motions_[src.clip].frames());
    if (src.position >= 2.0 * T) src.position -= T;
    if (state_.mode == PlaybackMode::ReplayEncoded)
        src.latent = encode_at(src.clip, src.position);
    else
        src.latent = propagate(src.latent, period(), state_.freq_scale);
}

void Player::apply(const Command& cmd) {
    switch (cmd.type) {
        case Command::Type::Play: {
            const std::size_t clip = find_motion(cmd.motion);
            state_.source = start_source(clip);
            state_.incoming.reset();
            state_.transition.reset();
            break;
        }
        case Command::Type::Stop:
            state_.source.reset();
            state_.incoming.reset();
            state_.transition.reset();
            break;
        case Command::Type::Transition: {
            const std::size_t clip = find_motion(cmd.motion);
            if (!state_.source) throw InvalidArgument("transition: no motion is playing");
            if (state_.transition) throw InvalidArgument("transition: another transition is active");
            if (!(cmd.duration_s >= 0.0) || !std::isfinite(cmd.duration_s))
                throw InvalidArgument("transition: duration must be non-negative");
            if (cmd.duration_s < 0.5 * period()) {
                state_.source = start_source(clip);
                break;
            }
            state_.incoming = start_source(clip);
            TransitionPlan plan;
            plan.duration_s = cmd.duration_s;
            state_.transition = plan;
            break;
        }
        case Command::Type::FreqScale:
            if (!(cmd.value >= 0.0) || !std::isfinite(cmd.value))
                throw InvalidArgument("freq_scale: value must be finite and non-negative");
            state_.freq_scale = cmd.value;
            break;
        case Command::Type::Mode:
            state_.mode = cmd.mode;
            break;
    }
}

Frame Player::tick() {
    Frame frame;
    frame.t = static_cast<double>(state_.tick) * period();
    if (state_.transition && state_.source && state_.incoming) {
        auto& plan = *state_.transition;
        plan.from = state_.source->latent;
        plan.to = state_.incoming->latent;
        state_.latent = blend(plan, plan.elapsed_s);
        frame.in_transition = true;
        frame.motion = motions_[state_.incoming->clip].name;
    } else if (state_.source) {
        state_.latent = state_.source->latent;
        frame.motion = motions_[state_.source->clip].name;
    }
    frame.latent = state_.latent;
    frame.q = decode_frame(state_.latent, *model_);

    if (state_.source) advance(*state_.source);
    if (state_.incoming) advance(*state_.incoming);
    if (state_.transition) {
        auto& plan = *state_.transition;
        const auto done_ticks = static_cast<std::size_t>(std::llround(plan.duration_s / period()));
        const auto elapsed_ticks = static_cast<std::size_t>(std::llround(plan.elapsed_s / period())) + 1;
        plan.elapsed_s = static_cast<double>(elapsed_ticks) * period();
        if (elapsed_ticks >= done_ticks) {
            state_.source = std::move(state_.incoming);
            state_.incoming.reset();
            state_.transition.reset();
        }
    }
    ++state_.tick;
    return frame;
}

std::vector<Frame> rollout(Player& player, std::span<const ScriptedCommand> script, std::size_t ticks) {
    std::vector<Frame> frames;
    frames.reserve(ticks);
    std::size_t next = 0;
    for (std::size_t k = 0; k < ticks; ++k) {
        while (next < script.size() && script[next].tick <= k) player.apply(script[next++].command);
        frames.push_back(player.tick());
    }
    return frames;
}

}  // namespace phasemotion
