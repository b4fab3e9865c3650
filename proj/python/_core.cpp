#include <pybind11/pybind11.h>
#include <pybind11/numpy.h>
#include <pybind11/operators.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "phasemotion/error.hpp"
#include "phasemotion/eval.hpp"
#include "phasemotion/motiondata.hpp"
#include "phasemotion/pae.hpp"
#include "phasemotion/runtime.hpp"
#include "phasemotion/service.hpp"
#include "phasemotion/spectral.hpp"
#include "phasemotion/train.hpp"

#include <cstring>

namespace py = pybind11;
using namespace phasemotion;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Array to_numpy(const Matrix& m) {
    Array out({m.rows(), m.cols()});
    if (!m.empty()) std::memcpy(out.mutable_data(), m.row(0).data(), m.rows() * m.cols() * sizeof(double));
    return out;
}

Matrix from_numpy(const Array& a) {
    if (a.ndim() != 2) throw InvalidArgument("expected a 2-d array");
    Matrix m(a.shape(0), a.shape(1));
    if (a.size()) std::memcpy(&m(0, 0), a.data(), a.size() * sizeof(double));
    return m;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Periodic autoencoder motion core";

    py::register_exception<InvalidArgument>(m, "InvalidArgument", PyExc_ValueError);
    py::register_exception<NumericFailure>(m, "NumericFailure", PyExc_ArithmeticError);
    py::register_exception<IoError>(m, "IoError", PyExc_OSError);

    // motion data
    py::class_<MotionClip>(m, "MotionClip")
        .def(py::init([](Array states, double dt, std::string name, bool with_velocities) {
                 MotionClip c;
                 c.states = from_numpy(states);
                 c.dt = dt;
                 c.name = std::move(name);
                 c.base_motion_id = c.name;
                 c.with_velocities = with_velocities;
                 return c;
             }),
             py::arg("states"), py::arg("dt") = 0.01, py::arg("name") = "clip", py::arg("with_velocities") = false)
        .def_readwrite("name", &MotionClip::name)
        .def_readwrite("dt", &MotionClip::dt)
        .def_readwrite("base_motion_id", &MotionClip::base_motion_id)
        .def_readwrite("freq_factor", &MotionClip::freq_factor)
        .def_readonly("with_velocities", &MotionClip::with_velocities)
        .def_property("states", [](const MotionClip& c) { return to_numpy(c.states); },
                      [](MotionClip& c, Array a) { c.states = from_numpy(a); })
        .def_property_readonly("dims", &MotionClip::dims)
        .def_property_readonly("frames", &MotionClip::frames)
        .def_property_readonly("joints", &MotionClip::joints)
        .def_property_readonly("duration", &MotionClip::duration)
        .def("positions_only", &MotionClip::positions_only)
        .def("__repr__", [](const MotionClip& c) {
            return "<MotionClip " + c.name + " " + std::to_string(c.dims()) + "x" + std::to_string(c.frames()) + ">";
        });

    py::class_<CorpusConfig>(m, "CorpusConfig")
        .def(py::init<>())
        .def_readwrite("seed", &CorpusConfig::seed)
        .def_readwrite("n_base", &CorpusConfig::n_base)
        .def_readwrite("n_joints", &CorpusConfig::n_joints)
        .def_readwrite("duration_s", &CorpusConfig::duration_s)
        .def_readwrite("dt", &CorpusConfig::dt)
        .def_readwrite("bump_fraction", &CorpusConfig::bump_fraction)
        .def_readwrite("with_velocities", &CorpusConfig::with_velocities)
        .def_readwrite("window", &CorpusConfig::window);

    m.def("generate_corpus", &generate_corpus, py::arg("config") = CorpusConfig{});
    m.def("augment_corpus", &augment_corpus, py::arg("clips"), py::arg("factors"));
    m.def("save_clip", &save_clip);
    m.def("load_clip", &load_clip);
    m.def("load_dataset", &load_dataset);
    m.def("write_dataset", [](const std::filesystem::path& dir, const std::vector<MotionClip>& clips) {
        write_dataset(dir, clips);
    });

    // spectral
    m.def("rfft", [](std::vector<double> curve) { return rfft(curve).coeffs; });

    py::class_<SpectralParams>(m, "SpectralParams")
        .def(py::init<>())
        .def(py::init([](double f, double a, double b) { return SpectralParams{f, a, b}; }), py::arg("f"),
             py::arg("a"), py::arg("b"))
        .def_readwrite("f", &SpectralParams::f)
        .def_readwrite("a", &SpectralParams::a)
        .def_readwrite("b", &SpectralParams::b)
        .def(py::self == py::self)
        .def("__repr__", [](const SpectralParams& p) {
            return "SpectralParams(f=" + std::to_string(p.f) + ", a=" + std::to_string(p.a) +
                   ", b=" + std::to_string(p.b) + ")";
        });
    m.def("extract_params", [](std::vector<double> curve, double dt) { return extract_params(curve, dt); },
          py::arg("curve"), py::arg("dt"));

    // model
    py::class_<ModelConfig>(m, "ModelConfig")
        .def(py::init<>())
        .def_readwrite("d", &ModelConfig::d)
        .def_readwrite("c", &ModelConfig::c)
        .def_readwrite("H", &ModelConfig::H)
        .def_readwrite("dt", &ModelConfig::dt)
        .def_readwrite("hidden", &ModelConfig::hidden)
        .def_readwrite("kernel", &ModelConfig::kernel)
        .def_readwrite("N", &ModelConfig::N)
        .def("validate", &ModelConfig::validate);

    py::class_<LatentState>(m, "LatentState")
        .def(py::init<>())
        .def_readwrite("phi", &LatentState::phi)
        .def_readwrite("theta", &LatentState::theta)
        .def_property_readonly("channels", &LatentState::channels);

    py::class_<Checkpoint>(m, "Checkpoint")
        .def(py::init([](const ModelConfig& cfg, std::uint64_t seed) {
                 Checkpoint ck(cfg);
                 init_params(ck.params, cfg, seed);
                 ck.norm.mean.assign(cfg.d, 0.0);
                 ck.norm.std.assign(cfg.d, 1.0);
                 return ck;
             }),
             py::arg("config"), py::arg("seed") = 1)
        .def_readonly("config", &Checkpoint::config)
        .def_property_readonly("num_params", [](const Checkpoint& c) { return c.params.size(); })
        .def("save", [](const Checkpoint& c, const std::filesystem::path& p) { save_checkpoint(p, c); });
    m.def("load_checkpoint", &load_checkpoint);

    m.def("encode", [](const Array& window, const Checkpoint& ck) {
        TrajectorySegment seg;
        seg.values = from_numpy(window);
        seg.dt = ck.config.dt;
        return fresh_reencode(seg, ck);
    }, py::arg("window"), py::arg("model"), "Encodes a d x H window given in joint units.");
    m.def("decode_frame", &decode_frame, py::arg("latent"), py::arg("model"));
    m.def("propagate", &propagate, py::arg("latent"), py::arg("dt"), py::arg("freq_scale") = 1.0);
    m.def("wrap_phase", &wrap_phase);
    m.def("blend", [](const LatentState& from, const LatentState& to, double duration_s, double elapsed_s) {
        return blend(TransitionPlan{from, to, duration_s, 0.0}, elapsed_s);
    }, py::arg("from_"), py::arg("to"), py::arg("duration_s"), py::arg("elapsed_s"));

    // training
    py::class_<TrainConfig>(m, "TrainConfig")
        .def(py::init<>())
        .def_readwrite("lr", &TrainConfig::lr)
        .def_readwrite("weight_decay", &TrainConfig::weight_decay)
        .def_readwrite("batch", &TrainConfig::batch)
        .def_readwrite("max_iters", &TrainConfig::max_iters)
        .def_readwrite("seed", &TrainConfig::seed)
        .def_readwrite("eval_every", &TrainConfig::eval_every)
        .def_readwrite("future_samples", &TrainConfig::future_samples);

    m.def("read_config", [](const std::filesystem::path& path) {
        TrainConfig t;
        ModelConfig mc;
        apply_config(read_config(path), t, mc);
        return py::make_tuple(t, mc);
    }, "Returns (TrainConfig, ModelConfig) from a key = value file.");

    m.def("train", [](const std::vector<MotionClip>& clips, const TrainConfig& cfg, const ModelConfig& mcfg,
                      std::optional<std::filesystem::path> out_dir) {
        TrainResult r = [&] {
            py::gil_scoped_release release;
            return train(clips, cfg, mcfg, out_dir);
        }();
        py::list losses;
        for (const auto& rec : r.log) losses.append(py::make_tuple(rec.iter, rec.loss));
        return py::make_tuple(std::move(r.checkpoint), losses);
    }, py::arg("clips"), py::arg("config"), py::arg("model_config"), py::arg("out_dir") = py::none(),
       "Returns (checkpoint, [(iter, loss), ...]).");

    // rewards and tracking
    py::enum_<RewardPhase>(m, "RewardPhase")
        .value("DanceImitation", RewardPhase::DanceImitation)
        .value("Locomotion", RewardPhase::Locomotion)
        .value("Gaze", RewardPhase::Gaze);

    m.def("rewards", [](const py::dict& fields, RewardPhase phase) {
        MetricFrame f;
        auto vec = [&](const char* k, std::optional<std::vector<double>>& dst) {
            if (fields.contains(k)) dst = fields[k].cast<std::vector<double>>();
        };
        auto num = [&](const char* k, std::optional<double>& dst) {
            if (fields.contains(k)) dst = fields[k].cast<double>();
        };
        vec("q_ref", f.q_ref);
        vec("q", f.q);
        vec("qdot_ref", f.qdot_ref);
        vec("qdot", f.qdot);
        vec("torque", f.torque);
        vec("accel", f.accel);
        vec("prev_target", f.prev_target);
        vec("target", f.target);
        num("collisions", f.collisions);
        vec("head_ref", f.head_ref);
        vec("head", f.head);
        num("base_yaw_rate_ref", f.base_yaw_rate_ref);
        num("base_yaw_rate", f.base_yaw_rate);
        vec("foot_vel_xy", f.foot_vel_xy);
        vec("foot_air_time", f.foot_air_time);
        RewardReport r = rewards(f, phase);
        py::dict out;
        out["raw"] = r.raw;
        out["scaled"] = r.scaled;
        out["unavailable"] = r.unavailable;
        return out;
    }, py::arg("metrics"), py::arg("phase") = RewardPhase::DanceImitation);

    m.def("track_clip", [](const MotionClip& targets) { return track_clip(targets, evaluation_gains()); },
          "PD-tracks a clip with the evaluation gains.");
    m.def("mae", &mae);
    m.def("reconstruct_clip", [](const MotionClip& clip, const Checkpoint& ck, bool propagate_latent) {
        return reconstruct_clip(clip, ck,
                                propagate_latent ? PlaybackMode::PropagateLatent : PlaybackMode::ReplayEncoded);
    }, py::arg("clip"), py::arg("model"), py::arg("propagate") = false);

    // playback; commands use the stream protocol's JSON shape
    py::class_<Player>(m, "Player")
        .def(py::init<const Checkpoint&, std::vector<MotionClip>>(), py::keep_alive<1, 2>())
        .def("apply", [](Player& p, const std::string& json_text) {
            p.apply(parse_command(nlohmann::json::parse(json_text)));
        }, py::arg("command_json"))
        .def("tick", [](Player& p) { return frame_to_json(p.tick()).dump(); },
             "Advances one period and returns the frame as a JSON line.")
        .def_property_readonly("period", &Player::period);
}
