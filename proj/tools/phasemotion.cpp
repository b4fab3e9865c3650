// phasemotion command-line front end.
//
// Every subcommand takes --seed, --config (key = value file whose keys are the
// subcommand's long option names) and --out, and prints a one-line JSON run
// summary on stdout. Usage errors exit 2, runtime failures exit 1.

#include <atomic>
#include <chrono>
#include <csignal>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "phasemotion/error.hpp"
#include "phasemotion/eval.hpp"
#include "phasemotion/motiondata.hpp"
#include "phasemotion/pae.hpp"
#include "phasemotion/runtime.hpp"
#include "phasemotion/service.hpp"
#include "phasemotion/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace phasemotion;

namespace {

struct Common {
    std::uint64_t seed = 0;
    std::string config;
    std::string out;
};

void add_common(CLI::App* sub, Common& common, std::uint64_t default_seed, bool out_required) {
    sub->add_option("--seed", common.seed, "RNG / corpus seed")->default_val(default_seed);
    sub->add_option("--config", common.config, "key = value file; keys are long option names");
    auto* out = sub->add_option("--out", common.out, "output path");
    if (out_required) out->required();
}

void emit_summary(const json& summary, const std::optional<fs::path>& dir) {
    std::cout << summary.dump() << std::endl;
    if (dir) {
        std::ofstream os(*dir / "summary.json");
        if (!os) throw IoError("cannot write " + (*dir / "summary.json").string());
        os << summary.dump(2) << "\n";
    }
}

fs::path ensure_dir(const std::string& path) {
    std::error_code ec;
    fs::create_directories(path, ec);
    if (ec) throw IoError("cannot create directory " + path + ": " + ec.message());
    return path;
}

std::vector<MotionClip> standard_corpus(std::uint64_t seed) {
    CorpusConfig cc;
    cc.seed = seed;
    return augment_corpus(generate_corpus(cc));
}

PlaybackMode parse_mode(const std::string& s) {
    if (s == "replay") return PlaybackMode::ReplayEncoded;
    if (s == "propagate") return PlaybackMode::PropagateLatent;
    throw InvalidArgument("unknown mode '" + s + "' (expected replay or propagate)");
}

// Config values fill options not given on the command line.
void apply_config_file(CLI::App* sub, const std::string& file) {
    for (const auto& [key, value] : read_config(file)) {
        CLI::Option* opt = sub->get_option_no_throw("--" + key);
        if (opt == nullptr || key == "config")
            throw CLI::ValidationError(file, "unknown key '" + key + "' for " + sub->get_name());
        if (opt->count() > 0) continue;
        opt->add_result(value);
        opt->run_callback();
    }
}

std::atomic<bool> g_stop{false};
extern "C" void on_signal(int) { g_stop = true; }

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Periodic-latent motion representation toolkit"};
    app.require_subcommand(1, 1);

    // gen -------------------------------------------------------------------
    Common gen_c;
    CorpusConfig gen_cfg;
    auto* gen = app.add_subcommand("gen", "generate the synthetic dance corpus");
    add_common(gen, gen_c, 7, true);
    gen->add_option("--base", gen_cfg.n_base, "number of base clips")->capture_default_str();
    gen->add_option("--joints", gen_cfg.n_joints, "joints per clip")->capture_default_str();
    gen->add_option("--duration", gen_cfg.duration_s, "clip length in seconds")->capture_default_str();
    gen->add_option("--dt", gen_cfg.dt, "timestep")->capture_default_str();
    gen->add_option("--bump_fraction", gen_cfg.bump_fraction, "share of joints with a bump")->capture_default_str();
    gen->add_option("--window", gen_cfg.window, "shortest window the clips must cover")->capture_default_str();
    gen->add_flag("--velocities", gen_cfg.with_velocities, "append joint velocity rows");

    // augment ---------------------------------------------------------------
    Common aug_c;
    std::string aug_manifest;
    std::vector<double> aug_factors(kFrequencyFactors.begin(), kFrequencyFactors.end());
    auto* aug = app.add_subcommand("augment", "time-warp every clip by the frequency factors");
    add_common(aug, aug_c, 0, true);
    aug->add_option("--manifest", aug_manifest, "input manifest.json")->required();
    aug->add_option("--factors", aug_factors, "frequency multipliers")->capture_default_str();

    // train -----------------------------------------------------------------
    Common train_c;
    TrainConfig tcfg;
    ModelConfig mcfg;
    std::string train_manifest;
    std::uint64_t corpus_seed = 7;
    bool quiet = false;
    bool state_velocities = false;
    auto* tr = app.add_subcommand("train", "train a model");
    add_common(tr, train_c, tcfg.seed, true);
    tr->add_option("--manifest", train_manifest, "training manifest (default: standard augmented corpus)");
    tr->add_option("--corpus_seed", corpus_seed, "seed of the generated corpus when no manifest is given")
        ->capture_default_str();
    tr->add_option("--lr", tcfg.lr)->capture_default_str();
    tr->add_option("--weight_decay", tcfg.weight_decay)->capture_default_str();
    tr->add_option("--batch", tcfg.batch)->capture_default_str();
    tr->add_option("--max_iters", tcfg.max_iters)->capture_default_str();
    tr->add_option("--beta1", tcfg.beta1)->capture_default_str();
    tr->add_option("--beta2", tcfg.beta2)->capture_default_str();
    tr->add_option("--eps", tcfg.eps)->capture_default_str();
    tr->add_option("--eval_every", tcfg.eval_every, "checkpoint period, 0 = off")->capture_default_str();
    tr->add_option("--future_samples", tcfg.future_samples, "prediction steps sampled per segment, 0 = all")
        ->capture_default_str();
    tr->add_option("--d", mcfg.d, "input channels")->capture_default_str();
    tr->add_option("--c", mcfg.c, "latent channels")->capture_default_str();
    tr->add_option("--H", mcfg.H, "window length")->capture_default_str();
    tr->add_option("--dt", mcfg.dt)->capture_default_str();
    tr->add_option("--hidden", mcfg.hidden)->capture_default_str();
    tr->add_option("--kernel", mcfg.kernel)->capture_default_str();
    tr->add_option("--N", mcfg.N, "forward prediction steps")->capture_default_str();
    tr->add_flag("--quiet", quiet, "no progress on stderr");
    tr->add_flag("--state_velocities", state_velocities, "include velocity rows in the model state");

    // encode ----------------------------------------------------------------
    Common enc_c;
    std::string enc_ckpt, enc_clip;
    auto* enc = app.add_subcommand("encode", "latent parameters for every full window of a clip (CSV)");
    add_common(enc, enc_c, 0, true);
    enc->add_option("--ckpt", enc_ckpt)->required();
    enc->add_option("--clip", enc_clip)->required();

    // decode ----------------------------------------------------------------
    Common dec_c;
    std::string dec_ckpt, dec_clip, dec_mode = "replay";
    auto* dec = app.add_subcommand("decode", "reconstruct a clip through the model");
    add_common(dec, dec_c, 0, true);
    dec->add_option("--ckpt", dec_ckpt)->required();
    dec->add_option("--clip", dec_clip)->required();
    dec->add_option("--mode", dec_mode, "replay | propagate")->capture_default_str();

    // play ------------------------------------------------------------------
    Common play_c;
    std::string play_ckpt, play_manifest, play_script, play_motion, play_mode = "replay";
    std::size_t play_ticks = 600;
    auto* play = app.add_subcommand("play", "offline roll-out of a command script");
    add_common(play, play_c, 0, true);
    play->add_option("--ckpt", play_ckpt)->required();
    play->add_option("--manifest", play_manifest, "motions")->required();
    play->add_option("--script", play_script, "NDJSON commands with tick or at");
    play->add_option("--motion", play_motion, "motion to play at tick 0");
    play->add_option("--mode", play_mode, "initial mode: replay | propagate")->capture_default_str();
    play->add_option("--ticks", play_ticks)->capture_default_str();

    // eval ------------------------------------------------------------------
    Common ev_c;
    std::string ev_dfm, ev_fld;
    CorpusConfig ev_corpus;
    TrackerGains ev_gains = evaluation_gains();
    bool ev_mae = false, ev_bump = false, ev_warp = false, ev_blend = false, ev_base_only = false;
    auto* ev = app.add_subcommand("eval", "experiment suite on the generated corpus");
    add_common(ev, ev_c, ev_corpus.seed, true);
    ev->add_option("--dfm", ev_dfm, "checkpoint trained with N = 0")->required();
    ev->add_option("--fld", ev_fld, "checkpoint trained with N > 0 (needed by --mae)");
    ev->add_option("--base", ev_corpus.n_base)->capture_default_str();
    ev->add_option("--joints", ev_corpus.n_joints)->capture_default_str();
    ev->add_option("--kp", ev_gains.kp)->capture_default_str();
    ev->add_option("--kd", ev_gains.kd)->capture_default_str();
    ev->add_option("--tau_limit", ev_gains.tau_limit)->capture_default_str();
    ev->add_flag("--target_velocity,!--no_target_velocity", ev_gains.target_velocity,
                "damp against the target velocity");
    ev->add_flag("--mae", ev_mae, "tracking MAE of both checkpoints on bump clips");
    ev->add_flag("--bump", ev_bump, "latent variability across a bump");
    ev->add_flag("--warp", ev_warp, "latent frequency of an unseen time warp");
    ev->add_flag("--blend", ev_blend, "transition smoothness");
    ev->add_flag("--base_only", ev_base_only, "--mae on the 1.0x clips only");

    // serve -----------------------------------------------------------------
    Common srv_c;
    std::string srv_ckpt, srv_manifest;
    Service::Options srv_opts;
    double srv_duration = 0.0;
    auto* srv = app.add_subcommand("serve", "stream decoded frames at the model rate");
    add_common(srv, srv_c, 0, false);
    srv->add_option("--ckpt", srv_ckpt)->required();
    srv->add_option("--manifest", srv_manifest, "motions")->required();
    srv->add_option("--host", srv_opts.host)->capture_default_str();
    srv->add_option("--port", srv_opts.stream_port, "NDJSON stream port, 0 = any")->capture_default_str();
    srv->add_option("--http_port", srv_opts.http_port, "HTTP port, -1 = off, 0 = any")->capture_default_str();
    srv->add_option("--duration", srv_duration, "seconds to run, 0 = until interrupted")->capture_default_str();

    const std::vector<std::pair<CLI::App*, Common*>> commons{
        {gen, &gen_c}, {aug, &aug_c}, {tr, &train_c}, {enc, &enc_c},
        {dec, &dec_c}, {play, &play_c}, {ev, &ev_c}, {srv, &srv_c}};
    try {
        app.parse(argc, argv);
        for (const auto& [sub, common] : commons)
            if (*sub && !common->config.empty()) apply_config_file(sub, common->config);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }

    try {
        if (*gen) {
            gen_cfg.seed = gen_c.seed;
            const auto dir = ensure_dir(gen_c.out);
            const auto clips = generate_corpus(gen_cfg);
            write_dataset(dir, clips);
            emit_summary({{"command", "gen"},
                          {"seed", gen_cfg.seed},
                          {"clips", clips.size()},
                          {"joints", gen_cfg.n_joints},
                          {"frames", clips.front().frames()},
                          {"manifest", (dir / "manifest.json").string()}},
                         dir);
        } else if (*aug) {
            const auto dir = ensure_dir(aug_c.out);
            const auto clips = augment_corpus(load_dataset(aug_manifest), aug_factors);
            write_dataset(dir, clips);
            emit_summary({{"command", "augment"},
                          {"factors", aug_factors},
                          {"clips", clips.size()},
                          {"manifest", (dir / "manifest.json").string()}},
                         dir);
        } else if (*tr) {
            tcfg.seed = train_c.seed;
            const auto dir = ensure_dir(train_c.out);
            auto clips = train_manifest.empty() ? standard_corpus(corpus_seed) : load_dataset(train_manifest);
            for (auto& clip : clips) {
                if (state_velocities && !clip.with_velocities)
                    throw InvalidArgument("--state_velocities needs clips generated with velocities");
                if (!state_velocities && clip.with_velocities) clip = clip.positions_only();
            }
            if (!clips.empty()) mcfg.d = clips.front().dims();
            const std::size_t every = std::max<std::size_t>(1, tcfg.max_iters / 20);
            auto progress = [&](const LossRecord& r) {
                if (!quiet && r.iter % every == 0) std::cerr << "iter " << r.iter << " loss " << r.loss << "\n";
                return true;
            };
            const auto result = train(clips, tcfg, mcfg, dir, progress);
            json summary = {{"command", "train"},
                            {"seed", tcfg.seed},
                            {"clips", clips.size()},
                            {"iterations", tcfg.max_iters},
                            {"N", mcfg.N},
                            {"hidden", mcfg.hidden},
                            {"kernel", mcfg.kernel},
                            {"future_samples", tcfg.future_samples},
                            {"checkpoint", (dir / "model.ckpt").string()},
                            {"loss_log", (dir / "loss.csv").string()}};
            if (!result.log.empty()) {
                summary["first_loss"] = result.log.front().loss;
                summary["final_loss"] = result.log.back().loss;
            }
            emit_summary(summary, dir);
        } else if (*enc) {
            const auto ckpt = load_checkpoint(enc_ckpt);
            auto clip = load_clip(enc_clip);
            if (clip.with_velocities && clip.dims() != ckpt.config.d) clip = clip.positions_only();
            const std::size_t H = ckpt.config.H, c = ckpt.config.c;
            if (clip.frames() < H) throw InvalidArgument("clip shorter than window");
            std::ofstream os(enc_c.out);
            if (!os) throw IoError("cannot write " + enc_c.out);
            os.precision(17);
            os << "frame";
            for (const char* p : {"phi", "f", "a", "b"})
                for (std::size_t k = 0; k < c; ++k) os << "," << p << k;
            os << "\n";
            for (std::size_t t = H - 1; t < clip.frames(); ++t) {
                const auto s = fresh_reencode(segment_ending_at(clip, H, t), ckpt);
                os << t;
                for (double v : s.phi) os << "," << v;
                for (const auto& th : s.theta) os << "," << th.f;
                for (const auto& th : s.theta) os << "," << th.a;
                for (const auto& th : s.theta) os << "," << th.b;
                os << "\n";
            }
            emit_summary({{"command", "encode"}, {"clip", clip.name}, {"windows", clip.frames() - H + 1},
                          {"out", enc_c.out}},
                         std::nullopt);
        } else if (*dec) {
            const auto ckpt = load_checkpoint(dec_ckpt);
            const auto clip = load_clip(dec_clip);
            if (clip.frames() < ckpt.config.H) throw InvalidArgument("clip shorter than window");
            const auto mode = parse_mode(dec_mode);
            const auto out = reconstruct_clip(clip, ckpt, mode);
            if (fs::path(dec_c.out).extension() == ".csv")
                export_csv(dec_c.out, out);
            else
                save_clip(dec_c.out, out);
            const auto ref = reference_span(clip.with_velocities ? clip.positions_only() : clip, ckpt.config.H);
            emit_summary({{"command", "decode"}, {"clip", clip.name}, {"mode", dec_mode}, {"frames", out.frames()},
                          {"reconstruction_mae", mae(ref, out)}, {"out", dec_c.out}},
                         std::nullopt);
        } else if (*play) {
            const auto dir = ensure_dir(play_c.out);
            const auto ckpt = load_checkpoint(play_ckpt);
            Player player(ckpt, load_dataset(play_manifest));
            std::vector<ScriptedCommand> script;
            Command mode_cmd;
            mode_cmd.type = Command::Type::Mode;
            mode_cmd.mode = parse_mode(play_mode);
            script.push_back({0, mode_cmd});
            if (!play_motion.empty()) script.push_back({0, {Command::Type::Play, play_motion}});
            if (!play_script.empty())
                for (auto& sc : load_script(play_script, player.period())) script.push_back(std::move(sc));
            std::stable_sort(script.begin(), script.end(),
                             [](const ScriptedCommand& a, const ScriptedCommand& b) { return a.tick < b.tick; });
            const auto frames = rollout(player, script, play_ticks);

            std::ofstream os(dir / "frames.ndjson");
            if (!os) throw IoError("cannot write " + (dir / "frames.ndjson").string());
            for (const auto& f : frames) os << frame_to_json(f).dump() << "\n";
            MotionClip traj;
            traj.name = "playback";
            traj.dt = player.period();
            traj.states = Matrix(ckpt.config.d, frames.size());
            for (std::size_t t = 0; t < frames.size(); ++t)
                for (std::size_t r = 0; r < ckpt.config.d; ++r) traj.states(r, t) = frames[t].q[r];
            save_clip(dir / "trajectory.clip", traj);
            emit_summary({{"command", "play"},
                          {"ticks", frames.size()},
                          {"commands", script.size()},
                          {"frames", (dir / "frames.ndjson").string()},
                          {"trajectory", (dir / "trajectory.clip").string()}},
                         dir);
        } else if (*ev) {
            ev_corpus.seed = ev_c.seed;
            if (!ev_mae && !ev_bump && !ev_warp && !ev_blend) ev_mae = ev_bump = ev_warp = ev_blend = true;
            if (ev_mae && ev_fld.empty()) throw InvalidArgument("--mae needs --fld");
            const auto dir = ensure_dir(ev_c.out);
            const auto dfm = load_checkpoint(ev_dfm);
            const auto base = generate_corpus(ev_corpus);
            json report = {{"command", "eval"}, {"seed", ev_corpus.seed}};
            if (ev_mae) {
                const auto fld = load_checkpoint(ev_fld);
                const auto clips = ev_base_only ? base : augment_corpus(base);
                const auto cmp = compare_tracking(clips, bump_flags(clips, ev_corpus), dfm, fld, ev_gains);
                json j = to_json(cmp);
                std::ofstream(dir / "mae.json") << j.dump(2) << "\n";
                j.erase("per_clip_n0");
                j.erase("per_clip_n");
                report["mae"] = j;
            }
            if (ev_bump) {
                const auto bc = find_bump_case(ev_corpus, dfm.config.H);
                if (!bc) throw InvalidArgument("no bump with a full pre-bump window in this corpus");
                report["bump"] = to_json(bump_variability(base[bc->base], bc->recipe, bc->joint, dfm));
            }
            if (ev_warp) report["warp"] = to_json(warp_ordering(base.front(), dfm));
            if (ev_blend) report["blend"] = to_json(transition_smoothness(dfm, base.front(), base[farthest_motion(base, 0)]));
            emit_summary(report, dir);
        } else if (*srv) {
            const auto ckpt = load_checkpoint(srv_ckpt);
            Service service(ckpt, load_dataset(srv_manifest), srv_opts);
            std::signal(SIGINT, on_signal);
            std::signal(SIGTERM, on_signal);
            service.start();
            std::optional<fs::path> dir;
            if (!srv_c.out.empty()) dir = ensure_dir(srv_c.out);
            emit_summary({{"command", "serve"},
                          {"host", srv_opts.host},
                          {"stream_port", service.stream_port()},
                          {"http_port", service.http_port()}},
                         dir);
            const auto until = std::chrono::steady_clock::now() + std::chrono::duration<double>(srv_duration);
            while (!g_stop && (srv_duration <= 0.0 || std::chrono::steady_clock::now() < until))
                std::this_thread::sleep_for(std::chrono::milliseconds(50));
            service.stop();
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
