#include "phasemotion/eval.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <map>

#include "phasemotion/error.hpp"

namespace phasemotion {

namespace {

MotionClip joint_positions(const MotionClip& clip, const Checkpoint& model) {
    MotionClip c = (clip.with_velocities && clip.dims() != model.config.d) ? clip.positions_only() : clip;
    if (c.dims() != model.config.d)
        throw InvalidArgument("clip '" + clip.name + "' does not match the model dimension");
    if (c.frames() < model.config.H) throw InvalidArgument("clip shorter than window");
    return c;
}

double relative_change(double value, double reference) {
    return std::abs(value - reference) / std::max(std::abs(reference), 1e-9);
}

// Largest relative change of f or a on `channel` against `ref`.
double theta_deviation(const LatentState& s, const LatentState& ref, std::size_t channel) {
    return std::max(relative_change(s.theta[channel].f, ref.theta[channel].f),
                    relative_change(s.theta[channel].a, ref.theta[channel].a));
}

double mean_latent_f(const MotionClip& clip, const Checkpoint& model, std::size_t channel) {
    const std::size_t H = model.config.H;
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t t = H - 1; t < clip.frames(); ++t) {
        sum += fresh_reencode(segment_ending_at(clip, H, t), model).theta[channel].f;
        ++n;
    }
    return sum / static_cast<double>(n);
}

}  // namespace

TrackerGains evaluation_gains() {
    TrackerGains g;
    g.kp = 2500.0;
    g.kd = 100.0;
    g.tau_limit = 1000.0;
    g.target_velocity = true;
    return g;
}

MotionClip reconstruct_clip(const MotionClip& clip_in, const Checkpoint& model, PlaybackMode mode) {
    const MotionClip clip = joint_positions(clip_in, model);
    const std::size_t H = model.config.H;
    MotionClip out = reference_span(clip, H);
    out.name = clip.name + "_decoded";

    LatentState latent = fresh_reencode(segment_ending_at(clip, H, H - 1), model);
    for (std::size_t t = H - 1; t < clip.frames(); ++t) {
        if (t > H - 1) {
            if (mode == PlaybackMode::ReplayEncoded)
                latent = fresh_reencode(segment_ending_at(clip, H, t), model);
            else
                latent = propagate(latent, clip.dt);
        }
        const auto q = decode_frame(latent, model);
        for (std::size_t r = 0; r < q.size(); ++r) out.states(r, t - (H - 1)) = q[r];
    }
    return out;
}

MotionClip reference_span(const MotionClip& clip, std::size_t window) {
    if (window == 0 || clip.frames() < window) throw InvalidArgument("clip shorter than window");
    MotionClip out = clip;
    const std::size_t n = clip.frames() - window + 1;
    out.states = Matrix::from_view(clip.states.columns(window - 1, n));
    return out;
}

TrackingResult evaluate_tracking(const MotionClip& clip_in, const Checkpoint& model, const TrackerGains& gains,
                                 PlaybackMode mode, double settle_s) {
    const MotionClip clip = joint_positions(clip_in, model);
    const MotionClip reference = reference_span(clip, model.config.H);
    const MotionClip targets = reconstruct_clip(clip, model, mode);
    const MotionClip tracked = track_clip(targets, gains);

    TrackingResult r;
    r.clip = clip.name;
    r.reconstruction_mae = mae(reference, targets);
    r.tracking_mae = mae(reference, tracked);

    const auto settle = static_cast<std::size_t>(std::llround(settle_s / clip.dt));
    double imitation = 0.0;
    std::size_t n = 0;
    for (std::size_t t = std::min(settle, tracked.frames() - 1); t < tracked.frames(); ++t) {
        MetricFrame f;
        f.q_ref = targets.states.column(t);
        f.q = tracked.states.column(t);
        imitation += rewards(f).raw.at(metric::kJointImitation);
        ++n;
    }
    r.mean_imitation = imitation / static_cast<double>(n);
    return r;
}

MaeComparison compare_tracking(std::span<const MotionClip> clips, const std::vector<bool>& has_bump,
                               const Checkpoint& dfm, const Checkpoint& fld, const TrackerGains& gains) {
    if (has_bump.size() != clips.size()) throw InvalidArgument("compare_tracking: one bump flag per clip required");
    MaeComparison out;
    double sum_dfm = 0.0, sum_fld = 0.0;
    for (std::size_t i = 0; i < clips.size(); ++i) {
        if (!has_bump[i]) continue;
        // Each model is deployed the way it was designed for: the N = 0 model
        // re-encodes the reference every step, the N > 0 model propagates.
        out.dfm.push_back(evaluate_tracking(clips[i], dfm, gains, PlaybackMode::ReplayEncoded));
        out.fld.push_back(evaluate_tracking(clips[i], fld, gains, PlaybackMode::PropagateLatent));
        sum_dfm += out.dfm.back().tracking_mae;
        sum_fld += out.fld.back().tracking_mae;
    }
    out.clips = out.dfm.size();
    if (out.clips == 0) throw InvalidArgument("compare_tracking: no clips with bumps");
    out.dfm_mae = sum_dfm / static_cast<double>(out.clips);
    out.fld_mae = sum_fld / static_cast<double>(out.clips);
    out.ratio = out.dfm_mae / out.fld_mae;
    return out;
}

BumpVariability bump_variability(const MotionClip& clip_in, const JointRecipe& bumped_joint, std::size_t joint,
                                 const Checkpoint& model) {
    if (!bumped_joint.has_bump) throw InvalidArgument("bump_variability: joint has no bump");
    const MotionClip clip = joint_positions(clip_in, model);
    const std::size_t H = model.config.H;
    const std::size_t c = model.config.c;

    BumpVariability out;
    out.clip = clip.name;
    out.joint = joint;
    const double lo = (bumped_joint.bump_center_s - 2.0 * bumped_joint.bump_sigma_s) / clip.dt;
    const double hi = (bumped_joint.bump_center_s + 2.0 * bumped_joint.bump_sigma_s) / clip.dt;
    if (lo < static_cast<double>(H) || hi > static_cast<double>(clip.frames() - 1))
        throw InvalidArgument("bump_variability: bump too close to the clip edges");
    out.bump_begin = static_cast<std::size_t>(std::ceil(lo));
    out.bump_end = static_cast<std::size_t>(std::floor(hi));
    out.reference_frame = out.bump_begin - 1;

    const LatentState ref = fresh_reencode(segment_ending_at(clip, H, out.reference_frame), model);
    std::vector<double> fresh(c, 0.0), prop(c, 0.0);
    LatentState propagated = ref;
    for (std::size_t t = out.bump_begin; t <= out.bump_end; ++t) {
        const LatentState s = fresh_reencode(segment_ending_at(clip, H, t), model);
        propagated = propagate(propagated, clip.dt);
        for (std::size_t k = 0; k < c; ++k) {
            fresh[k] = std::max(fresh[k], theta_deviation(s, ref, k));
            prop[k] = std::max(prop[k], theta_deviation(propagated, ref, k));
        }
    }
    out.channel = static_cast<std::size_t>(std::max_element(fresh.begin(), fresh.end()) - fresh.begin());
    out.fresh_deviation = fresh[out.channel];
    out.propagated_deviation = prop[out.channel];
    out.ratio = out.propagated_deviation > 0.0 ? out.fresh_deviation / out.propagated_deviation
                                               : std::numeric_limits<double>::infinity();

    // Same-length stretch at the start of the clip, for context only, when it
    // fits before the bump.
    const std::size_t len = out.bump_end - out.bump_begin + 1;
    if (out.bump_begin >= H + len) {
        double control = 0.0;
        const std::size_t start = H;
        const LatentState cref = fresh_reencode(segment_ending_at(clip, H, start - 1), model);
        for (std::size_t t = start; t < start + len; ++t)
            control = std::max(control,
                               theta_deviation(fresh_reencode(segment_ending_at(clip, H, t), model), cref, out.channel));
        out.control_deviation = control;
    }
    return out;
}

WarpOrdering warp_ordering(const MotionClip& base_in, const Checkpoint& model) {
    const MotionClip base = joint_positions(base_in, model);
    constexpr std::array<double, 3> factors{0.75, 0.875, 1.0};
    const auto variants = augment_frequencies(base, factors);

    // Dominant channel: largest mean amplitude on the 1.0x variant.
    const std::size_t H = model.config.H;
    std::vector<double> amp(model.config.c, 0.0);
    for (std::size_t t = H - 1; t < variants[2].frames(); ++t) {
        const LatentState s = fresh_reencode(segment_ending_at(variants[2], H, t), model);
        for (std::size_t k = 0; k < amp.size(); ++k) amp[k] += s.theta[k].a;
    }

    WarpOrdering out;
    out.clip = base.name;
    out.channel = static_cast<std::size_t>(std::max_element(amp.begin(), amp.end()) - amp.begin());
    out.f_slow = mean_latent_f(variants[0], model, out.channel);
    out.f_mid = mean_latent_f(variants[1], model, out.channel);
    out.f_fast = mean_latent_f(variants[2], model, out.channel);
    out.between = std::min(out.f_slow, out.f_fast) < out.f_mid && out.f_mid < std::max(out.f_slow, out.f_fast);
    return out;
}

std::vector<bool> bump_flags(std::span<const MotionClip> clips, const CorpusConfig& corpus) {
    std::map<std::string, bool> bumped;
    for (std::size_t i = 0; i < corpus.n_base; ++i) {
        const auto recipe = corpus_recipe(corpus, i);
        bumped[corpus_clip_name(i)] =
            std::any_of(recipe.joints.begin(), recipe.joints.end(), [](const JointRecipe& j) { return j.has_bump; });
    }
    std::vector<bool> out;
    out.reserve(clips.size());
    for (const auto& clip : clips) {
        const auto it = bumped.find(clip.base_motion_id);
        out.push_back(it != bumped.end() && it->second);
    }
    return out;
}

std::optional<BumpCase> find_bump_case(const CorpusConfig& corpus, std::size_t window) {
    const double T = std::round(corpus.duration_s / corpus.dt);
    std::optional<BumpCase> best;
    for (std::size_t i = 0; i < corpus.n_base; ++i) {
        const auto recipe = corpus_recipe(corpus, i);
        for (std::size_t j = 0; j < recipe.joints.size(); ++j) {
            const auto& r = recipe.joints[j];
            if (!r.has_bump) continue;
            const double lo = (r.bump_center_s - 2.0 * r.bump_sigma_s) / corpus.dt;
            const double hi = (r.bump_center_s + 2.0 * r.bump_sigma_s) / corpus.dt;
            if (lo < static_cast<double>(window) || hi > T - 1.0) continue;
            if (!best || std::abs(r.bump_amp) > std::abs(best->recipe.bump_amp)) best = BumpCase{i, j, r};
        }
    }
    return best;
}

std::size_t farthest_motion(std::span<const MotionClip> clips, std::size_t from) {
    if (from >= clips.size() || clips.size() < 2) throw InvalidArgument("farthest_motion: need two clips");
    const auto& a = clips[from];
    const std::size_t span = std::min<std::size_t>(a.frames(), static_cast<std::size_t>(std::llround(1.0 / a.dt)));
    std::size_t best = from == 0 ? 1 : 0;
    double best_gap = -1.0;
    for (std::size_t i = 0; i < clips.size(); ++i) {
        if (i == from || clips[i].dims() != a.dims() || clips[i].frames() == 0) continue;
        double gap = 0.0;
        for (std::size_t t = 0; t < span; ++t)
            for (std::size_t r = 0; r < a.dims(); ++r)
                gap = std::max(gap, std::abs(a.states(r, t) - clips[i].states(r, 0)));
        if (gap > best_gap) best_gap = gap, best = i;
    }
    return best;
}

double peak_joint_velocity(std::span<const Frame> frames, double dt) {
    double peak = 0.0;
    for (std::size_t i = 1; i < frames.size(); ++i)
        for (std::size_t r = 0; r < frames[i].q.size(); ++r)
            peak = std::max(peak, std::abs(frames[i].q[r] - frames[i - 1].q[r]) / dt);
    return peak;
}

TransitionSmoothness transition_smoothness(const Checkpoint& model, const MotionClip& from, const MotionClip& to,
                                           double duration_s, double lead_s) {
    const std::vector<MotionClip> motions{joint_positions(from, model), joint_positions(to, model)};
    const double dt = model.config.dt;
    const auto lead = static_cast<std::size_t>(std::llround(lead_s / dt));
    const auto blend_ticks = static_cast<std::size_t>(std::llround(duration_s / dt));
    if (lead < 2) throw InvalidArgument("transition_smoothness: lead time too short");

    auto play = [&](std::vector<ScriptedCommand> script, std::size_t ticks) {
        Player player(model, motions);
        return rollout(player, script, ticks);
    };
    Command start{Command::Type::Play, motions[0].name};

    // Pick the switch tick with the largest gap to the target's first frame.
    const auto plain = play({{0, start}}, lead + blend_ticks + 20);
    const auto q_to = play({{0, {Command::Type::Play, motions[1].name}}}, 1).front().q;
    std::size_t k = 1;
    double gap = -1.0;
    for (std::size_t t = 1; t <= lead; ++t) {
        double g = 0.0;
        for (std::size_t r = 0; r < q_to.size(); ++r) g = std::max(g, std::abs(plain[t].q[r] - q_to[r]));
        if (g > gap) gap = g, k = t;
    }

    const std::size_t total = k + blend_ticks + 20;
    Command hard{Command::Type::Transition, motions[1].name, 0.0};
    Command soft{Command::Type::Transition, motions[1].name, duration_s};
    const auto hard_frames = play({{0, start}, {k, hard}}, total);
    const auto soft_frames = play({{0, start}, {k, soft}}, total);

    TransitionSmoothness out;
    out.from = motions[0].name;
    out.to = motions[1].name;
    out.switch_tick = k;
    const std::span<const Frame> hs(hard_frames.begin() + static_cast<std::ptrdiff_t>(k - 1), hard_frames.end());
    const std::span<const Frame> ss(soft_frames.begin() + static_cast<std::ptrdiff_t>(k - 1), soft_frames.end());
    out.hard_peak_velocity = peak_joint_velocity(hs, dt);
    out.blend_peak_velocity = peak_joint_velocity(ss, dt);
    out.ratio = out.hard_peak_velocity / out.blend_peak_velocity;
    out.endpoints_exact = soft_frames[k].latent == plain[k].latent &&
                          soft_frames[k + blend_ticks].latent == hard_frames[k + blend_ticks].latent &&
                          soft_frames[k + blend_ticks - 1].in_transition && !soft_frames[k + blend_ticks].in_transition;
    return out;
}

nlohmann::json to_json(const TrackingResult& r) {
    return {{"clip", r.clip},
            {"reconstruction_mae", r.reconstruction_mae},
            {"tracking_mae", r.tracking_mae},
            {"mean_imitation", r.mean_imitation}};
}

nlohmann::json to_json(const MaeComparison& r) {
    nlohmann::json dfm = nlohmann::json::array(), fld = nlohmann::json::array();
    for (const auto& x : r.dfm) dfm.push_back(to_json(x));
    for (const auto& x : r.fld) fld.push_back(to_json(x));
    return {{"clips", r.clips}, {"mae_n0", r.dfm_mae}, {"mae_n", r.fld_mae},
            {"ratio", r.ratio}, {"per_clip_n0", dfm}, {"per_clip_n", fld}};
}

nlohmann::json to_json(const BumpVariability& r) {
    return {{"clip", r.clip},
            {"joint", r.joint},
            {"bump_begin", r.bump_begin},
            {"bump_end", r.bump_end},
            {"reference_frame", r.reference_frame},
            {"channel", r.channel},
            {"fresh_deviation", r.fresh_deviation},
            {"propagated_deviation", r.propagated_deviation},
            {"control_deviation", r.control_deviation ? nlohmann::json(*r.control_deviation) : nlohmann::json(nullptr)},
            {"ratio", r.ratio}};
}

nlohmann::json to_json(const WarpOrdering& r) {
    return {{"clip", r.clip},     {"channel", r.channel}, {"f_0.75", r.f_slow},
            {"f_0.875", r.f_mid}, {"f_1.0", r.f_fast},    {"between", r.between}};
}

nlohmann::json to_json(const TransitionSmoothness& r) {
    return {{"from", r.from},
            {"to", r.to},
            {"switch_tick", r.switch_tick},
            {"hard_peak_velocity", r.hard_peak_velocity},
            {"blend_peak_velocity", r.blend_peak_velocity},
            {"ratio", r.ratio},
            {"endpoints_exact", r.endpoints_exact}};
}

}  // namespace phasemotion
