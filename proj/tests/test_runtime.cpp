#include <doctest.h>

#include <cmath>
#include <numbers>

#include "helpers.hpp"
#include "oracles.hpp"
#include "phasemotion/error.hpp"
#include "phasemotion/runtime.hpp"

using namespace phasemotion;

namespace {

LatentState latent(std::vector<double> phi, std::vector<SpectralParams> theta) {
    LatentState s;
    s.phi = std::move(phi);
    s.theta = std::move(theta);
    return s;
}

Checkpoint random_model(std::size_t d = 3, std::uint64_t seed = 1) {
    ModelConfig mc;
    mc.d = d;
    mc.c = 3;
    mc.H = 20;
    mc.hidden = 4;
    mc.kernel = 5;
    Checkpoint ck(mc);
    init_params(ck.params, mc, seed);
    ck.norm.mean.assign(d, 0.1);
    ck.norm.std.assign(d, 0.5);
    return ck;
}

MotionClip wave_clip(const std::string& name, std::size_t d, std::size_t T, std::uint64_t seed) {
    MotionClip c;
    c.name = name;
    c.base_motion_id = name;
    c.dt = 0.01;
    c.states = testing::wavy_matrix(d, T, seed);
    return c;
}

}  // namespace

TEST_SUITE("runtime") {

TEST_CASE("propagate advances phase by f dt and leaves theta alone") {
    const auto s = latent({0.40, 0.49, -0.2}, {{2.0, 0.3, 0.1}, {2.0, 0.1, 0.0}, {1.3, 0.7, -0.4}});
    const auto p = propagate(s, 0.01);
    CHECK(p.phi[0] == doctest::Approx(0.42).epsilon(1e-12));
    CHECK(p.phi[1] == doctest::Approx(-0.49).epsilon(1e-12));
    CHECK(p.theta == s.theta);
    const auto frozen = propagate(s, 0.01, 0.0);
    CHECK(frozen.phi == s.phi);
    const auto fast = propagate(s, 0.01, 1.5);
    CHECK(fast.phi[2] == doctest::Approx(oracle::wrap(-0.2 + 1.5 * 1.3 * 0.01)).epsilon(1e-12));
}

TEST_CASE("blend endpoints and midpoint") {
    TransitionPlan plan;
    plan.from = latent({0.1, 0.45}, {{1.0, 0.2, 0.0}, {1.0, 0.2, 0.0}});
    plan.to = latent({-0.3, -0.45}, {{2.0, 0.4, 0.2}, {2.0, 0.4, 0.2}});
    plan.duration_s = 0.5;
    CHECK(blend(plan, 0.0) == plan.from);
    CHECK(blend(plan, 0.5) == plan.to);
    const auto mid = blend(plan, 0.25);
    CHECK(mid.theta[0].f == doctest::Approx(1.5));
    CHECK(mid.theta[0].a == doctest::Approx(0.3));
    CHECK(mid.theta[0].b == doctest::Approx(0.1));
    CHECK(mid.phi[0] == doctest::Approx(-0.1));
    // 0.45 -> -0.45 goes the short way through the wrap point.
    CHECK(mid.phi[1] == doctest::Approx(-0.5).epsilon(1e-12));
    const auto lin = blend(plan, 0.25, PhaseInterp::Linear);
    CHECK(lin.phi[1] == doctest::Approx(0.0).scale(1.0));
}

TEST_CASE("blended phase lies on the shorter arc") {
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> u(-0.5, 0.5);
    for (int trial = 0; trial < 200; ++trial) {
        TransitionPlan plan;
        plan.from = latent({u(rng)}, {{1.0, 0.5, 0.0}});
        plan.to = latent({u(rng)}, {{2.0, 0.1, 0.3}});
        const double e = 0.5 * (u(rng) + 0.5);
        const auto s = blend(plan, e);
        // Oracle: the two arcs from A to B; pick the shorter one.
        const double up = std::fmod(plan.to.phi[0] - plan.from.phi[0] + 2.0, 1.0);
        const double arc = up <= 0.5 ? up : up - 1.0;
        const double expect = oracle::wrap(plan.from.phi[0] + (e / 0.5) * arc);
        CHECK(std::abs(oracle::wrap(s.phi[0] - expect)) < 1e-12);
        CHECK(s.theta[0].f >= 1.0);
        CHECK(s.theta[0].f <= 2.0);
    }
}

TEST_CASE("blend clamps out-of-range times and rejects bad plans") {
    TransitionPlan plan;
    plan.from = latent({0.0}, {{1.0, 1.0, 0.0}});
    plan.to = latent({0.2}, {{2.0, 1.0, 0.0}});
    bool clamped = false;
    CHECK(blend(plan, 2.0, PhaseInterp::ShortestArc, &clamped) == plan.to);
    CHECK(clamped);
    blend(plan, 0.1, PhaseInterp::ShortestArc, &clamped);
    CHECK_FALSE(clamped);
    plan.to = latent({0.0, 0.0}, {{}, {}});
    CHECK_THROWS_AS(blend(plan, 0.1), InvalidArgument);
}

TEST_CASE("static latent decodes to a constant frame") {
    const auto ck = random_model();
    auto s = latent({0.1, -0.2, 0.3}, {{1.0, 0.0, 0.2}, {2.0, 0.0, -0.1}, {0.5, 0.0, 0.0}});
    const auto q0 = decode_frame(s, ck);
    for (int i = 0; i < 10; ++i) {
        s = propagate(s, 0.01);
        CHECK(decode_frame(s, ck) == q0);
    }
}

TEST_CASE("latent curves are periodic under propagation") {
    ModelConfig mc;
    mc.c = 2;
    mc.H = 20;
    auto s = latent({0.1, -0.3}, {{2.0, 0.5, 0.1}, {5.0, 1.0, 0.0}});
    const Matrix c0 = latent_curves(s, mc);
    // 50 steps of 0.01 s is one period at 2 Hz and 2.5 at 5 Hz.
    for (int i = 0; i < 50; ++i) s = propagate(s, 0.01);
    const Matrix c1 = latent_curves(s, mc);
    for (std::size_t j = 0; j < mc.H; ++j) CHECK(c1(0, j) == doctest::Approx(c0(0, j)).epsilon(1e-9));
    for (int i = 0; i < 50; ++i) s = propagate(s, 0.01);
    for (std::size_t j = 0; j < mc.H; ++j) CHECK(latent_curves(s, mc)(1, j) == doctest::Approx(c0(1, j)).epsilon(1e-9));
}

TEST_CASE("fresh re-encoding") {
    const auto ck = random_model();
    TrajectorySegment seg;
    seg.dt = 0.01;
    seg.values = testing::wavy_matrix(3, 20, 9);
    CHECK(fresh_reencode(seg, ck) == fresh_reencode(seg, ck));
    seg.values = testing::wavy_matrix(3, 19, 9);
    CHECK_THROWS_WITH_AS(fresh_reencode(seg, ck), doctest::Contains("history"), InvalidArgument);
}

TEST_CASE("PD tracker") {
    TrackerGains g;
    g.tau_limit = 1e9;
    SUBCASE("equilibrium is kept") {
        const std::vector<double> q{0.3, -0.2};
        const auto s = pd_track_step(TrackerState::at_rest(q, g), q);
        CHECK(s.q == q);
        CHECK(s.qdot == std::vector<double>{0.0, 0.0});
    }
    SUBCASE("step response settles within a second") {
        auto s = TrackerState::at_rest(std::vector<double>{0.0}, g);
        const std::vector<double> target{1.0};
        for (int i = 0; i < 100; ++i) s = pd_track_step(std::move(s), target);
        // Critically damped x(t) = 1 - (1 + 10 t) e^{-10 t} at t = 1 s.
        CHECK(std::abs(s.q[0] - 1.0) < 0.01);
        CHECK(s.q[0] == doctest::Approx(1.0 - 11.0 * std::exp(-10.0)).epsilon(2e-3));
    }
    SUBCASE("zero torque limit drifts freely") {
        g.tau_limit = 0.0;
        auto s = TrackerState::at_rest(std::vector<double>{0.0}, g);
        s.qdot = {0.5};
        for (int i = 0; i < 10; ++i) s = pd_track_step(std::move(s), std::vector<double>{3.0});
        CHECK(s.qdot[0] == 0.5);
        CHECK(s.q[0] == doctest::Approx(0.05).epsilon(1e-12));
    }
    SUBCASE("zero gains never change velocity") {
        g.kp = 0.0;
        g.kd = 0.0;
        auto s = TrackerState::at_rest(std::vector<double>{0.0}, g);
        s.qdot = {-0.3};
        s = pd_track_step(std::move(s), std::vector<double>{1.0});
        CHECK(s.qdot[0] == -0.3);
    }
    SUBCASE("energy does not increase toward a fixed target") {
        auto s = TrackerState::at_rest(std::vector<double>{0.0}, g);
        s.qdot = {2.0};
        const std::vector<double> target{0.7};
        auto energy = [&](const TrackerState& t) {
            const double e = target[0] - t.q[0];
            return 0.5 * t.qdot[0] * t.qdot[0] + 0.5 * g.kp * e * e;
        };
        double prev = energy(s);
        for (int i = 0; i < 200; ++i) {
            s = pd_track_step(std::move(s), target, kSimDt, 1);
            const double now = energy(s);
            CHECK(now <= prev * (1.0 + 1e-12));
            prev = now;
        }
    }
    SUBCASE("bad input") {
        auto s = TrackerState::at_rest(std::vector<double>{0.0}, g);
        CHECK_THROWS_AS(pd_track_step(s, std::vector<double>{std::nan("")}), InvalidArgument);
        CHECK_THROWS_AS(pd_track_step(s, std::vector<double>{0.0, 1.0}), InvalidArgument);
    }
}

TEST_CASE("reward formulas") {
    MetricFrame f;
    f.q_ref = std::vector<double>{0.1, 0.2};
    f.q = std::vector<double>{0.1, 0.2};
    f.base_yaw_rate_ref = 0.0;
    f.base_yaw_rate = std::sqrt(0.06);
    f.head_ref = std::vector<double>{0.0, 0.0};
    f.head = std::vector<double>{0.5, 0.0};
    f.torque = std::vector<double>{1.0, -2.0};
    f.accel = std::vector<double>{3.0};
    f.prev_target = std::vector<double>{0.0, 0.0};
    f.target = std::vector<double>{0.1, 0.0};
    f.collisions = 2.0;
    f.foot_vel_xy = std::vector<double>{0.1, 0.2};
    f.foot_air_time = std::vector<double>{0.3, 0.1, 0.5, 0.2};

    const auto r = rewards(f);
    CHECK(r.raw.at(metric::kJointImitation) == 1.0);
    CHECK(r.raw.at(metric::kBaseAngularVelocity) == doctest::Approx(std::exp(-1.0)).epsilon(1e-12));
    CHECK(r.raw.at(metric::kBaseAngularVelocity) == doctest::Approx(0.3679).epsilon(1e-4));
    CHECK(r.raw.at(metric::kHeadOrientation) == doctest::Approx(std::exp(-1.0)).epsilon(1e-12));
    CHECK(r.raw.at(metric::kTorque) == doctest::Approx(-5.0));
    CHECK(r.raw.at(metric::kAcceleration) == doctest::Approx(-9.0));
    CHECK(r.raw.at(metric::kTargetDifference) == doctest::Approx(-0.01));
    CHECK(r.raw.at(metric::kSelfCollision) == -2.0);
    CHECK(r.scaled.at(metric::kSelfCollision) == -20.0);
    CHECK(r.raw.at(metric::kFootSlippage) == doctest::Approx(-0.05));
    CHECK(r.raw.at(metric::kFootAirTime) == doctest::Approx(0.3));
    CHECK(r.unavailable.empty());

    f.q = std::vector<double>{0.4, 0.6};
    CHECK(rewards(f).raw.at(metric::kJointImitation) ==
          doctest::Approx(oracle::imitation(*f.q_ref, *f.q)).epsilon(1e-15));

    const auto loco = rewards(f, RewardPhase::Locomotion);
    CHECK(loco.scaled.at(metric::kFootAirTime) == doctest::Approx(0.6));
    CHECK(loco.scaled.count(metric::kHeadOrientation) == 0);
    CHECK(reward_scale(metric::kHeadOrientation, RewardPhase::Gaze) == 0.7);
    CHECK_FALSE(reward_scale("nonsense", RewardPhase::Gaze).has_value());
}

TEST_CASE("rewards report missing inputs instead of zero") {
    MetricFrame f;
    f.torque = std::vector<double>{1.0};
    const auto r = rewards(f);
    CHECK(r.raw.size() == 1);
    CHECK(r.unavailable.size() == 8);
    CHECK(std::find(r.unavailable.begin(), r.unavailable.end(), metric::kJointImitation) != r.unavailable.end());
}

TEST_CASE("metrics stay in their ranges") {
    std::mt19937_64 rng(2);
    std::normal_distribution<double> n(0.0, 2.0);
    for (int i = 0; i < 100; ++i) {
        MetricFrame f;
        f.q_ref = std::vector<double>{n(rng), n(rng)};
        f.q = std::vector<double>{n(rng), n(rng)};
        f.base_yaw_rate_ref = n(rng);
        f.base_yaw_rate = n(rng);
        f.torque = std::vector<double>{n(rng)};
        const auto r = rewards(f);
        CHECK(r.raw.at(metric::kJointImitation) > 0.0 - 1e-300);
        CHECK(r.raw.at(metric::kJointImitation) <= 1.0);
        CHECK(r.raw.at(metric::kBaseAngularVelocity) <= 1.0);
        CHECK(r.raw.at(metric::kTorque) <= 0.0);
    }
}

TEST_CASE("mean absolute error") {
    const auto a = wave_clip("a", 3, 50, 1);
    auto b = a;
    CHECK(mae(a, b) == 0.0);
    for (double& v : b.states.flat()) v += 0.1;
    CHECK(mae(a, b) == doctest::Approx(0.1).epsilon(1e-12));
    b.states = Matrix(3, 49);
    CHECK_THROWS_AS(mae(a, b), InvalidArgument);
}

TEST_CASE("player") {
    const auto ck = random_model();
    std::vector<MotionClip> motions{wave_clip("a", 3, 60, 1), wave_clip("b", 3, 80, 2)};
    Player player(ck, motions);

    SUBCASE("idle player decodes the zero latent") {
        const auto f = player.tick();
        CHECK(f.motion.empty());
        CHECK(f.t == 0.0);
        CHECK(player.tick().t == doctest::Approx(0.01));
    }
    SUBCASE("transition lasts duration / dt ticks") {
        std::vector<ScriptedCommand> script(2);
        script[0].command.motion = "a";
        script[1].tick = 10;
        script[1].command.type = Command::Type::Transition;
        script[1].command.motion = "b";
        const auto frames = rollout(player, script, 100);
        std::size_t blended = 0;
        for (const auto& f : frames) blended += f.in_transition;
        CHECK(blended == 50);
        CHECK(frames[9].motion == "a");
        CHECK(frames[10].in_transition);
        CHECK(frames[60].motion == "b");
        CHECK_FALSE(frames[60].in_transition);
        for (std::size_t i = 1; i < frames.size(); ++i)
            CHECK(frames[i].t == doctest::Approx(frames[i - 1].t + 0.01).epsilon(1e-12));
    }
    SUBCASE("propagation mode keeps theta fixed") {
        Command mode;
        mode.type = Command::Type::Mode;
        mode.mode = PlaybackMode::PropagateLatent;
        player.apply(mode);
        Command play;
        play.motion = "b";
        player.apply(play);
        const auto first = player.tick();
        for (int i = 0; i < 30; ++i) {
            const auto f = player.tick();
            CHECK(f.latent.theta == first.latent.theta);
        }
    }
    SUBCASE("zero frequency scale freezes the pose") {
        Command play;
        play.motion = "a";
        player.apply(play);
        Command fs;
        fs.type = Command::Type::FreqScale;
        fs.value = 0.0;
        player.apply(fs);
        const auto q = player.tick().q;
        for (int i = 0; i < 20; ++i) CHECK(player.tick().q == q);
    }
    SUBCASE("bad commands leave state untouched") {
        Command play;
        play.motion = "nope";
        CHECK_THROWS_AS(player.apply(play), InvalidArgument);
        Command tr;
        tr.type = Command::Type::Transition;
        tr.motion = "a";
        CHECK_THROWS_AS(player.apply(tr), InvalidArgument);
        play.motion = "a";
        player.apply(play);
        player.apply(tr);
        CHECK_THROWS_AS(player.apply(tr), InvalidArgument);
        Command fs;
        fs.type = Command::Type::FreqScale;
        fs.value = -1.0;
        CHECK_THROWS_AS(player.apply(fs), InvalidArgument);
        CHECK(player.state().freq_scale == 1.0);
    }
    SUBCASE("rollouts are reproducible") {
        std::vector<ScriptedCommand> script(1);
        script[0].command.motion = "b";
        Player other(ck, motions);
        const auto x = rollout(player, script, 40);
        const auto y = rollout(other, script, 40);
        for (std::size_t i = 0; i < x.size(); ++i) CHECK(x[i].q == y[i].q);
    }
    CHECK_THROWS_AS(Player(ck, {wave_clip("short", 3, 10, 1)}), InvalidArgument);
    CHECK_THROWS_AS(Player(ck, {wave_clip("wide", 4, 60, 1)}), InvalidArgument);
}

TEST_CASE("track_clip follows a slow target closely") {
    TrackerGains g;
    g.target_velocity = true;
    MotionClip c;
    c.name = "slow";
    c.dt = 0.01;
    c.states = Matrix(1, 400);
    for (std::size_t t = 0; t < 400; ++t) c.states(0, t) = 0.3 * std::sin(2.0 * std::numbers::pi * 0.2 * t * 0.01);
    const auto m = track_clip(c, g);
    CHECK(m.name == "slow_tracked");
    CHECK(mae(c, m) < 0.02);
}

}
