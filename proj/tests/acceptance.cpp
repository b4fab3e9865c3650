// Acceptance suite: one PASS/FAIL line per criterion, exit status 0 only if
// all pass. Usage: phasemotion_acceptance [--cli PATH] [--configs DIR]
//                                         [--cache DIR] [--only N]
// The cache (also PHASEMOTION_ACCEPTANCE_CACHE) keeps the two trained
// checkpoints between runs; the recorded training CPU time travels with them.

#include <sys/resource.h>
#include <sys/wait.h>

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <functional>
#include <iostream>
#include <numbers>
#include <random>
#include <sstream>

#include <json.hpp>

#include "gradient_audit.hpp"
#include "helpers.hpp"
#include "oracles.hpp"
#include "phasemotion/eval.hpp"
#include "phasemotion/runtime.hpp"
#include "phasemotion/spectral.hpp"
#include "phasemotion/train.hpp"

using namespace phasemotion;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

struct Options {
    std::string cli;
    fs::path configs = PHASEMOTION_CONFIG_DIR;
    std::optional<fs::path> cache;
    int only = 0;
};

std::string fmt(double v) {
    std::ostringstream os;
    os.precision(4);
    os << v;
    return os.str();
}

double cpu_seconds() {
    rusage u{};
    getrusage(RUSAGE_SELF, &u);
    return static_cast<double>(u.ru_utime.tv_sec + u.ru_stime.tv_sec) +
           1e-6 * static_cast<double>(u.ru_utime.tv_usec + u.ru_stime.tv_usec);
}

std::vector<double> normal_vector(std::size_t n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> d;
    std::vector<double> x(n);
    for (double& v : x) v = d(rng);
    return x;
}

// ---------------------------------------------------------------------------
// 1. numerics

Outcome numerics() {
    double fft_err = 0.0;
    for (std::size_t n = 1; n <= 128; ++n) {
        const auto re = normal_vector(n, n), im = normal_vector(n, 1000 + n);
        std::vector<Complex> x(n), y(n);
        for (std::size_t i = 0; i < n; ++i) x[i] = {re[i], im[i]};
        FftPlan(n).forward(x, y);
        const auto ref = oracle::dft(x);
        for (std::size_t i = 0; i < n; ++i) fft_err = std::max(fft_err, std::abs(y[i] - ref[i]));
    }
    for (std::size_t H : {100u, 200u, 600u}) {
        const auto x = normal_vector(H, H);
        const auto spec = rfft(x);
        const auto ref = oracle::dft(std::vector<Complex>(x.begin(), x.end()));
        for (std::size_t k = 0; k < spec.coeffs.size(); ++k) fft_err = std::max(fft_err, std::abs(spec.coeffs[k] - ref[k]));
    }

    // Single-bin sinusoids: every bin of H = 100 that lies below Nyquist.
    double rec_err = 0.0;
    for (std::size_t k = 1; k < 50; ++k) {
        const double f = static_cast<double>(k), a = 0.3 + 0.01 * f, b = 0.25 + 0.01 * f;
        std::vector<double> x(100);
        for (std::size_t j = 0; j < 100; ++j) x[j] = a * std::sin(2.0 * std::numbers::pi * f * j * 0.01 + 0.7) + b;
        const auto p = extract_params(x, 0.01);
        rec_err = std::max({rec_err, std::abs(p.f - f) / f, std::abs(p.a - a) / a, std::abs(p.b - b) / b});
    }

    double parseval = 0.0;
    for (std::uint64_t s = 0; s < 20; ++s) {
        const auto x = normal_vector(100, 50 + s);
        const auto c = rfft(x).coeffs;
        double lhs = 0.0, rhs = std::norm(c[0]) + std::norm(c[50]);
        for (double v : x) lhs += v * v;
        for (std::size_t k = 1; k < 50; ++k) rhs += 2.0 * std::norm(c[k]);
        parseval = std::max(parseval, std::abs(lhs - rhs / 100.0) / lhs);
    }

    double fwd_err = 0.0;
    for (std::uint64_t s = 1; s <= 5; ++s) {
        ModelConfig mc;
        mc.d = 3;
        mc.c = 4;
        mc.H = 30;
        mc.hidden = 5;
        mc.kernel = 7;
        ModelParams p(mc);
        init_params(p, mc, s);
        for (double& v : p.values()) v *= 3.0;
        const Matrix x = testing::wavy_matrix(mc.d, mc.H, s);
        const auto w = testing::weights_of(p);
        const auto lib = encode(x.view(), p, mc).state;
        const auto ref = oracle::encode(testing::grid_of(x), w, mc.c, mc.kernel, mc.dt);
        for (std::size_t i = 0; i < mc.c; ++i) {
            fwd_err = std::max({fwd_err, std::abs(oracle::wrap(lib.phi[i] - ref.phi[i])),
                                std::abs(lib.theta[i].f - ref.theta[i].f), std::abs(lib.theta[i].a - ref.theta[i].a),
                                std::abs(lib.theta[i].b - ref.theta[i].b)});
        }
        const Matrix out = decode(lib, p, mc);
        oracle::Latent z;
        z.phi = lib.phi;
        for (const auto& t : lib.theta) z.theta.push_back({t.f, t.a, t.b});
        const auto ref_out = oracle::decode(z, w, mc.H, mc.kernel, mc.dt);
        for (std::size_t r = 0; r < mc.d; ++r)
            for (std::size_t j = 0; j < mc.H; ++j) fwd_err = std::max(fwd_err, std::abs(out(r, j) - ref_out[r][j]));
    }

    Outcome o;
    o.pass = fft_err <= 1e-10 && rec_err <= 1e-9 && parseval <= 1e-9 && fwd_err <= 1e-9;
    o.detail = "fft " + fmt(fft_err) + " (<=1e-10), sinusoid " + fmt(rec_err) + " (<=1e-9), parseval " +
               fmt(parseval) + " (<=1e-9), forward " + fmt(fwd_err) + " (<=1e-9)";
    return o;
}

// ---------------------------------------------------------------------------
// 2. gradient audit

Outcome gradients() {
    double worst = 0.0;
    std::string where;
    std::size_t n = 0;
    for (std::size_t N : {0u, 3u})
        for (std::uint64_t seed = 1; seed <= 20; ++seed) {
            const auto r = testing::gradient_audit(testing::audit_config(N), seed);
            ++n;
            if (r.worst > worst) {
                worst = r.worst;
                where = r.where + " N=" + std::to_string(N) + " seed=" + std::to_string(seed);
            }
        }
    return {worst <= 1e-4, std::to_string(n) + " instances, max relative error " + fmt(worst) + " at " + where +
                               " (<=1e-4)"};
}

// ---------------------------------------------------------------------------
// Trained checkpoints shared by criteria 3-6.

struct Recipe {
    TrainConfig train;
    ModelConfig model;
    std::string text;
};

Recipe read_recipe(const fs::path& file) {
    Recipe r;
    std::ifstream is(file);
    if (!is) throw std::runtime_error("cannot read " + file.string());
    std::stringstream buf;
    buf << is.rdbuf();
    r.text = buf.str();
    const auto cfg = parse_config(r.text);
    check_config_keys(cfg, train_config_keys());
    apply_config(cfg, r.train, r.model);
    return r;
}

struct Models {
    std::optional<Checkpoint> dfm, fld;
    double train_cpu_s = 0.0;
    std::string error;
};

Models& models(const Options& opt) {
    static Models m;
    static bool done = false;
    if (done) return m;
    done = true;
    try {
        const auto dfm_recipe = read_recipe(opt.configs / "dfm.cfg");
        const auto fld_recipe = read_recipe(opt.configs / "fld.cfg");
        const auto clips = augment_corpus(generate_corpus(CorpusConfig{}));
        // A corpus fingerprint invalidates the cache when the generator changes.
        std::uint64_t fp = 1469598103934665603ull;
        for (const auto& c : clips)
            for (double v : c.states.flat()) {
                std::uint64_t bits;
                std::memcpy(&bits, &v, sizeof bits);
                fp = (fp ^ bits) * 1099511628211ull;
            }
        const auto stamp = dfm_recipe.text + "\n--\n" + fld_recipe.text + "\n--\n" + std::to_string(fp) + "\n";
        if (opt.cache) {
            std::ifstream st(*opt.cache / "stamp.txt");
            std::stringstream buf;
            buf << st.rdbuf();
            if (st && buf.str() == stamp && fs::exists(*opt.cache / "dfm.ckpt") && fs::exists(*opt.cache / "fld.ckpt")) {
                m.dfm = load_checkpoint(*opt.cache / "dfm.ckpt");
                m.fld = load_checkpoint(*opt.cache / "fld.ckpt");
                std::ifstream t(*opt.cache / "train_cpu.txt");
                t >> m.train_cpu_s;
                std::cout << "  (checkpoints from cache " << opt.cache->string() << ")\n";
                return m;
            }
        }
        const double t0 = cpu_seconds();
        auto train_one = [&](Recipe r) {
            r.model.d = clips.front().dims();
            return train(clips, r.train, r.model).checkpoint;
        };
        m.dfm = train_one(dfm_recipe);
        m.fld = train_one(fld_recipe);
        m.train_cpu_s = cpu_seconds() - t0;
        if (opt.cache) {
            fs::create_directories(*opt.cache);
            save_checkpoint(*opt.cache / "dfm.ckpt", *m.dfm);
            save_checkpoint(*opt.cache / "fld.ckpt", *m.fld);
            std::ofstream(*opt.cache / "train_cpu.txt") << m.train_cpu_s << "\n";
            std::ofstream(*opt.cache / "stamp.txt") << stamp;
        }
    } catch (const std::exception& e) {
        m.error = e.what();
    }
    return m;
}

// ---------------------------------------------------------------------------
// 3. tracking MAE, N = 0 vs N = 100

Outcome tracking(const Options& opt) {
    auto& m = models(opt);
    if (!m.error.empty()) return {false, "training failed: " + m.error};
    const double t0 = cpu_seconds();
    const CorpusConfig cc;
    const auto clips = augment_corpus(generate_corpus(cc));
    const auto flags = bump_flags(clips, cc);
    const auto cmp = compare_tracking(clips, flags, *m.dfm, *m.fld, evaluation_gains());
    const double total = m.train_cpu_s + (cpu_seconds() - t0);
    Outcome o;
    o.pass = cmp.ratio <= 0.85 && total <= 1800.0 && m.fld->config.N == 100 && m.dfm->config.N == 0;
    o.detail = std::to_string(cmp.clips) + " bump clips, MAE N=0 " + fmt(cmp.dfm_mae) + " rad, N=100 " +
               fmt(cmp.fld_mae) + " rad, ratio " + fmt(cmp.ratio) + " (<=0.85), CPU " + fmt(total) + " s (<=1800)";
    return o;
}

// ---------------------------------------------------------------------------
// 4. latent variability across a bump

Outcome bump(const Options& opt) {
    auto& m = models(opt);
    if (!m.error.empty()) return {false, "training failed: " + m.error};
    const CorpusConfig cc;
    const auto bc = find_bump_case(cc, m.dfm->config.H);
    if (!bc) return {false, "no bump with a clean pre-bump window"};
    const auto base = generate_corpus(cc);
    const auto r = bump_variability(base[bc->base], bc->recipe, bc->joint, *m.dfm);
    const bool pass = r.fresh_deviation >= 3.0 * r.propagated_deviation && r.fresh_deviation > 0.0;
    return {pass, r.clip + " joint " + std::to_string(r.joint) + " channel " + std::to_string(r.channel) +
                      ": fresh " + fmt(r.fresh_deviation) + " vs propagated " + fmt(r.propagated_deviation) +
                      " (>=3x)" + (r.control_deviation ? ", early control stretch " + fmt(*r.control_deviation) : "")};
}

// ---------------------------------------------------------------------------
// 5. unseen 0.875x warp

Outcome warp(const Options& opt) {
    auto& m = models(opt);
    if (!m.error.empty()) return {false, "training failed: " + m.error};
    const auto base = generate_corpus(CorpusConfig{});
    const auto w = warp_ordering(base.front(), *m.dfm);
    std::size_t between = 0;
    for (const auto& clip : base) between += warp_ordering(clip, *m.dfm).between;
    return {w.between, w.clip + " channel " + std::to_string(w.channel) + ": f(0.75x) " + fmt(w.f_slow) +
                           ", f(0.875x) " + fmt(w.f_mid) + ", f(1.0x) " + fmt(w.f_fast) + "; ordered on " +
                           std::to_string(between) + "/" + std::to_string(base.size()) + " base motions"};
}

// ---------------------------------------------------------------------------
// 6. transition smoothness

Outcome blend_check(const Options& opt) {
    auto& m = models(opt);
    if (!m.error.empty()) return {false, "training failed: " + m.error};
    const auto base = generate_corpus(CorpusConfig{});
    const auto to = farthest_motion(base, 0);
    const auto r = transition_smoothness(*m.dfm, base[0], base[to]);
    return {r.ratio >= 2.0 && r.endpoints_exact,
            r.from + " -> " + r.to + " at tick " + std::to_string(r.switch_tick) + ": hard " +
                fmt(r.hard_peak_velocity) + " rad/s, blended " + fmt(r.blend_peak_velocity) + " rad/s, ratio " +
                fmt(r.ratio) + " (>=2), endpoints " + (r.endpoints_exact ? "exact" : "NOT exact")};
}

// ---------------------------------------------------------------------------
// 7. reward metrics

Outcome reward_check(const Options& opt) {
    std::vector<std::string> bad;
    auto expect = [&](bool ok, const std::string& what) {
        if (!ok) bad.push_back(what);
    };
    MetricFrame f;
    f.q_ref = std::vector<double>{0.2, -0.1};
    f.q = f.q_ref;
    f.base_yaw_rate_ref = 0.5;
    f.base_yaw_rate = 0.5 + std::sqrt(0.06);
    f.head_ref = std::vector<double>{0.0, 0.1};
    f.head = std::vector<double>{0.0, 0.6};
    f.torque = std::vector<double>{3.0, 4.0};
    f.accel = std::vector<double>{1.0, 2.0};
    f.prev_target = std::vector<double>{0.0, 0.0};
    f.target = std::vector<double>{0.3, 0.4};
    f.collisions = 2.0;
    f.foot_vel_xy = std::vector<double>{0.3, 0.4};
    f.foot_air_time = std::vector<double>{0.5, 0.1};
    const auto r = rewards(f);
    const auto loco = rewards(f, RewardPhase::Locomotion);
    expect(r.raw.at(metric::kJointImitation) == 1.0, "imitation at q*=q");
    expect(std::abs(r.raw.at(metric::kBaseAngularVelocity) - std::exp(-1.0)) < 1e-12, "exp(-1) at 0.06");
    expect(std::abs(r.raw.at(metric::kHeadOrientation) - std::exp(-1.0)) < 1e-12, "head orientation");
    expect(std::abs(r.raw.at(metric::kTorque) + 25.0) < 1e-12, "torque");
    expect(std::abs(r.raw.at(metric::kAcceleration) + 5.0) < 1e-12, "acceleration");
    expect(std::abs(r.raw.at(metric::kTargetDifference) + 0.25) < 1e-12, "target difference");
    expect(r.scaled.at(metric::kSelfCollision) == -20.0, "self-collision scale");
    expect(std::abs(loco.scaled.at(metric::kFootSlippage) + 0.15 * 0.25) < 1e-12, "foot slippage");
    expect(std::abs(loco.scaled.at(metric::kFootAirTime) - 2.0 * 0.2) < 1e-12, "foot air time");
    f.q = std::vector<double>{0.5, 0.3};
    expect(std::abs(rewards(f).raw.at(metric::kJointImitation) - oracle::imitation(*f.q_ref, *f.q)) < 1e-15,
           "imitation oracle");

    auto& m = models(opt);
    double imitation = 0.0;
    std::string clip;
    if (m.error.empty()) {
        const auto base = generate_corpus(CorpusConfig{});
        const auto t = evaluate_tracking(base.front(), *m.dfm, evaluation_gains());
        imitation = t.mean_imitation;
        clip = t.clip;
        expect(imitation > 0.9, "imitation on a tracked clip");
    } else {
        bad.push_back("training failed: " + m.error);
    }
    std::string detail = "unit examples " + std::string(bad.empty() ? "ok" : "failing") + ", mean imitation on " +
                         clip + " " + fmt(imitation) + " (>0.9)";
    for (const auto& b : bad) detail += "; failed: " + b;
    return {bad.empty(), detail};
}

// ---------------------------------------------------------------------------
// 8. determinism of train, play and eval through the CLI

int run(const std::string& cmd) {
    const int rc = std::system((cmd + " > /dev/null 2>&1").c_str());
    return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

std::string slurp(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    std::stringstream buf;
    buf << is.rdbuf();
    return buf.str();
}

Outcome determinism(const Options& opt) {
    if (opt.cli.empty()) return {false, "no --cli given"};
    const fs::path work = testing::temp_dir("determinism");
    const std::string q = "'" + opt.cli + "' ";
    const std::string w = "'" + work.string() + "'";
    const std::vector<std::string> steps{
        q + "gen --seed 3 --base 2 --out " + w + "/corpus",
        q + "train --seed 5 --manifest " + w + "/corpus/manifest.json --max_iters 40 --batch 8 --hidden 4 --kernel 5 "
            "--N 10 --eval_every 20 --quiet --out " + w + "/dfm",
        q + "play --ckpt " + w + "/dfm/model.ckpt --manifest " + w + "/corpus/manifest.json --motion dance0 "
            "--ticks 150 --out " + w + "/play",
        q + "eval --seed 3 --base 2 --dfm " + w + "/dfm/model.ckpt --fld " + w + "/dfm/model.ckpt "
            "--mae --bump --warp --blend --base_only --out " + w + "/eval"};
    const std::vector<std::string> files{"dfm/loss.csv", "dfm/model.ckpt", "dfm/ckpt_20.ckpt", "dfm/summary.json",
                                         "play/frames.ndjson", "play/trajectory.clip", "eval/summary.json",
                                         "eval/mae.json"};
    std::map<std::string, std::string> first;
    for (int pass = 0; pass < 2; ++pass) {
        for (const char* d : {"corpus", "dfm", "play", "eval"}) fs::remove_all(work / d);
        for (const auto& s : steps)
            if (const int rc = run(s); rc != 0) {
                fs::remove_all(work);
                return {false, "command failed (" + std::to_string(rc) + "): " + s};
            }
        for (const auto& f : files) {
            if (!fs::exists(work / f)) {
                fs::remove_all(work);
                return {false, "missing output " + f};
            }
            if (pass == 0) first[f] = slurp(work / f);
            else if (first[f] != slurp(work / f)) {
                fs::remove_all(work);
                return {false, f + " differs between runs"};
            }
        }
    }
    fs::remove_all(work);
    return {true, std::to_string(files.size()) + " train/play/eval outputs bit-identical across two runs"};
}

}  // namespace

int main(int argc, char** argv) {
    Options opt;
    if (const char* env = std::getenv("PHASEMOTION_ACCEPTANCE_CACHE"); env && *env) opt.cache = env;
    for (int i = 1; i + 1 < argc; i += 2) {
        const std::string k = argv[i], v = argv[i + 1];
        if (k == "--cli") opt.cli = v;
        else if (k == "--configs") opt.configs = v;
        else if (k == "--cache") opt.cache = v;
        else if (k == "--only") opt.only = std::stoi(v);
        else {
            std::cerr << "unknown option " << k << "\n";
            return 2;
        }
    }

    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
        {"numerics", [] { return numerics(); }},
        {"gradient audit", [] { return gradients(); }},
        {"tracking MAE N=0 vs N=100", [&] { return tracking(opt); }},
        {"latent variability during a bump", [&] { return bump(opt); }},
        {"unseen warp frequency ordering", [&] { return warp(opt); }},
        {"latent blend smoothness", [&] { return blend_check(opt); }},
        {"reward metrics", [&] { return reward_check(opt); }},
        {"determinism", [&] { return determinism(opt); }},
    };
    bool all = true;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        if (opt.only != 0 && opt.only != static_cast<int>(i + 1)) continue;
        Outcome o;
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        all = all && o.pass;
        std::cout << "criterion " << (i + 1) << " " << (o.pass ? "PASS" : "FAIL") << "  " << criteria[i].first
                  << ": " << o.detail << std::endl;
    }
    return all ? 0 : 1;
}
