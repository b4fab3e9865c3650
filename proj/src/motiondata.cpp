#include "phasemotion/motiondata.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>

#include <json.hpp>

#include "phasemotion/error.hpp"

namespace phasemotion {

namespace {

constexpr char kClipMagic[8] = {'P', 'M', 'C', 'L', 'I', 'P', '\0', '\1'};
constexpr std::uint32_t kClipVersion = 1;
constexpr std::uint32_t kFlagVelocities = 1u;
constexpr std::size_t kRhythmSlots = 3;
constexpr std::size_t kBodyStream = 0xffffffffu;

std::mt19937_64 clip_stream(std::uint64_t seed, std::size_t clip_index) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(clip_index), 0x9e3779b9u};
    return std::mt19937_64(seq);
}

void fill_velocities(Matrix& states, std::size_t n_joints, double dt) {
    const std::size_t T = states.cols();
    for (std::size_t j = 0; j < n_joints; ++j) {
        auto pos = states.row(j);
        auto vel = states.row(n_joints + j);
        if (T == 1) {
            vel[0] = 0.0;
            continue;
        }
        vel[0] = (pos[1] - pos[0]) / dt;
        vel[T - 1] = (pos[T - 1] - pos[T - 2]) / dt;
        for (std::size_t t = 1; t + 1 < T; ++t) vel[t] = (pos[t + 1] - pos[t - 1]) / (2.0 * dt);
    }
}

template <typename T>
void write_pod(std::ostream& os, const T& value) {
    os.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is, const std::filesystem::path& path) {
    T value{};
    if (!is.read(reinterpret_cast<char*>(&value), sizeof(T)))
        throw IoError("truncated clip file: " + path.string());
    return value;
}

void write_string(std::ostream& os, const std::string& s) {
    write_pod(os, static_cast<std::uint32_t>(s.size()));
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::istream& is, const std::filesystem::path& path) {
    const auto n = read_pod<std::uint32_t>(is, path);
    std::string s(n, '\0');
    if (n > 0 && !is.read(s.data(), n)) throw IoError("truncated clip file: " + path.string());
    return s;
}

void check_clip(const MotionClip& clip) {
    if (!(clip.dt > 0.0)) throw InvalidArgument("clip '" + clip.name + "': dt must be positive");
    for (double v : clip.states.flat())
        if (!std::isfinite(v)) throw InvalidArgument("clip '" + clip.name + "': non-finite state value");
}

}  // namespace

MotionClip MotionClip::positions_only() const {
    if (!with_velocities) return *this;
    MotionClip out = *this;
    out.with_velocities = false;
    out.states = Matrix(joints(), frames());
    for (std::size_t r = 0; r < joints(); ++r)
        std::copy(states.row(r).begin(), states.row(r).end(), out.states.row(r).begin());
    return out;
}

Matrix NormStats::apply(const Matrix& raw) const {
    if (raw.rows() != dims()) throw InvalidArgument("normalization: dimension mismatch");
    Matrix out = raw;
    for (std::size_t r = 0; r < raw.rows(); ++r)
        for (double& v : out.row(r)) v = (v - mean[r]) / std[r];
    return out;
}

Matrix NormStats::invert(const Matrix& normalized) const {
    if (normalized.rows() != dims()) throw InvalidArgument("normalization: dimension mismatch");
    Matrix out = normalized;
    for (std::size_t r = 0; r < out.rows(); ++r)
        for (double& v : out.row(r)) v = v * std[r] + mean[r];
    return out;
}

void NormStats::apply_in_place(std::span<double> column) const {
    for (std::size_t r = 0; r < column.size(); ++r) column[r] = (column[r] - mean[r]) / std[r];
}

void NormStats::invert_in_place(std::span<double> column) const {
    for (std::size_t r = 0; r < column.size(); ++r) column[r] = column[r] * std[r] + mean[r];
}

ClipRecipe corpus_recipe(const CorpusConfig& cfg, std::size_t clip_index) {
    // The body template (which rhythms drive a joint, its share and lag of each,
    // its rest pose) is drawn once per corpus, like a skeleton shared by all
    // dances. A clip draws its own rhythms, their phases and their strengths.
    auto body = clip_stream(cfg.seed, kBodyStream);
    auto rng = clip_stream(cfg.seed, clip_index);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    auto uniform = [&](std::mt19937_64& g, double lo, double hi) { return lo + (hi - lo) * unit(g); };

    struct Slot {
        double weight, lag;
    };
    std::vector<std::vector<std::pair<std::size_t, Slot>>> drives(cfg.n_joints);
    std::vector<double> rest(cfg.n_joints);
    for (std::size_t j = 0; j < cfg.n_joints; ++j) {
        rest[j] = uniform(body, -0.25, 0.25);
        std::array<std::size_t, kRhythmSlots> order{};
        std::iota(order.begin(), order.end(), 0);
        std::shuffle(order.begin(), order.end(), body);
        const auto n = 1 + static_cast<std::size_t>(unit(body) * kRhythmSlots) % kRhythmSlots;
        for (std::size_t s = 0; s < n; ++s)
            drives[j].push_back({order[s], {uniform(body, 0.15, 0.8), uniform(body, 0.0, 2.0 * std::numbers::pi)}});
        std::sort(drives[j].begin(), drives[j].end(), [](const auto& x, const auto& y) { return x.first < y.first; });
    }

    // Frequencies sit on the clip's own DFT grid so every row is periodic in T.
    // Slot 2 is the first harmonic of slot 0, so slot 0 stays below 1.5 Hz.
    const double base_hz = 1.0 / cfg.duration_s;
    const auto lo_bin = static_cast<long>(std::ceil(0.5 / base_hz - 1e-9));
    const auto mid_bin = std::max(lo_bin, static_cast<long>(std::floor(1.5 / base_hz + 1e-9)));
    const auto hi_bin = std::max(lo_bin, static_cast<long>(std::floor(3.0 / base_hz + 1e-9)));
    const auto beat = std::uniform_int_distribution<long>(lo_bin, mid_bin)(rng);
    const std::array<double, kRhythmSlots> freqs{
        static_cast<double>(beat) * base_hz,
        static_cast<double>(std::uniform_int_distribution<long>(lo_bin, hi_bin)(rng)) * base_hz,
        static_cast<double>(2 * beat) * base_hz};
    std::array<double, kRhythmSlots> phase{}, gain{};
    for (std::size_t s = 0; s < kRhythmSlots; ++s) {
        phase[s] = uniform(rng, 0.0, 2.0 * std::numbers::pi);
        gain[s] = uniform(rng, 0.6, 1.0);
    }

    ClipRecipe recipe;
    recipe.joints.resize(cfg.n_joints);
    for (std::size_t j = 0; j < cfg.n_joints; ++j) {
        auto& joint = recipe.joints[j];
        joint.offset = rest[j] + uniform(rng, -0.05, 0.05);
        for (const auto& [s, slot] : drives[j]) {
            joint.freqs_hz.push_back(freqs[s]);
            joint.amps.push_back(slot.weight * gain[s]);
            joint.phases.push_back(std::fmod(phase[s] + slot.lag + uniform(rng, -0.15, 0.15) + 4.0 * std::numbers::pi,
                                             2.0 * std::numbers::pi));
        }
    }

    const auto n_bumps = static_cast<std::size_t>(
        std::lround(std::clamp(cfg.bump_fraction, 0.0, 1.0) * static_cast<double>(cfg.n_joints)));
    std::vector<std::size_t> order(cfg.n_joints);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    const double margin = cfg.duration_s >= 2.0 ? 1.0 : 0.0;
    for (std::size_t k = 0; k < n_bumps; ++k) {
        auto& joint = recipe.joints[order[k]];
        joint.has_bump = true;
        joint.bump_amp = uniform(rng, 0.3, 0.8);
        joint.bump_center_s = uniform(rng, margin, cfg.duration_s - margin);
        joint.bump_sigma_s = uniform(rng, 0.1, 0.3);
    }
    return recipe;
}

std::string corpus_clip_name(std::size_t index) { return "dance" + std::to_string(index); }

std::vector<MotionClip> generate_corpus(const CorpusConfig& cfg) {
    if (cfg.n_base == 0 || cfg.n_joints == 0 || cfg.window == 0)
        throw InvalidArgument("generate_corpus: dimensions must be positive");
    if (!(cfg.dt > 0.0) || !(cfg.duration_s > 0.0))
        throw InvalidArgument("generate_corpus: dt and duration must be positive");
    const auto T = static_cast<std::size_t>(std::llround(cfg.duration_s / cfg.dt));
    if (T < cfg.window) throw InvalidArgument("generate_corpus: duration shorter than one window");

    std::vector<MotionClip> clips;
    clips.reserve(cfg.n_base);
    for (std::size_t c = 0; c < cfg.n_base; ++c) {
        const ClipRecipe recipe = corpus_recipe(cfg, c);
        MotionClip clip;
        clip.name = corpus_clip_name(c);
        clip.base_motion_id = clip.name;
        clip.dt = cfg.dt;
        clip.freq_factor = 1.0;
        clip.with_velocities = cfg.with_velocities;
        clip.states = Matrix(cfg.with_velocities ? 2 * cfg.n_joints : cfg.n_joints, T);
        for (std::size_t j = 0; j < cfg.n_joints; ++j) {
            const auto& joint = recipe.joints[j];
            auto row = clip.states.row(j);
            for (std::size_t t = 0; t < T; ++t) {
                const double time = static_cast<double>(t) * cfg.dt;
                double v = joint.offset;
                for (std::size_t s = 0; s < joint.freqs_hz.size(); ++s)
                    v += joint.amps[s] *
                         std::sin(2.0 * std::numbers::pi * joint.freqs_hz[s] * time + joint.phases[s]);
                if (joint.has_bump) {
                    const double u = (time - joint.bump_center_s) / joint.bump_sigma_s;
                    v += joint.bump_amp * std::exp(-0.5 * u * u);
                }
                row[t] = v;
            }
        }
        if (cfg.with_velocities) fill_velocities(clip.states, cfg.n_joints, cfg.dt);
        clips.push_back(std::move(clip));
    }
    return clips;
}

std::vector<MotionClip> augment_frequencies(const MotionClip& clip, std::span<const double> factors) {
    for (double k : factors)
        if (!(k > 0.0)) throw InvalidArgument("augment_frequencies: factors must be positive");

    const std::size_t T = clip.frames();
    std::vector<MotionClip> out;
    out.reserve(factors.size());
    for (double k : factors) {
        MotionClip warped = clip;
        warped.freq_factor = clip.freq_factor * k;
        std::ostringstream name;
        name << clip.name << "_x" << k;
        warped.name = name.str();
        if (k != 1.0 && T > 0) {
            const std::size_t pos_rows = clip.joints();
            for (std::size_t j = 0; j < pos_rows; ++j) {
                const auto src = clip.states.row(j);
                auto dst = warped.states.row(j);
                for (std::size_t t = 0; t < T; ++t) {
                    const double s = std::fmod(k * static_cast<double>(t), static_cast<double>(T));
                    const auto i0 = static_cast<std::size_t>(s);
                    const double w = s - static_cast<double>(i0);
                    const std::size_t a = i0 % T;
                    const std::size_t b = (i0 + 1) % T;
                    dst[t] = (1.0 - w) * src[a] + w * src[b];
                }
            }
            if (clip.with_velocities) fill_velocities(warped.states, pos_rows, clip.dt);
        }
        out.push_back(std::move(warped));
    }
    return out;
}

std::vector<MotionClip> augment_corpus(std::span<const MotionClip> clips, std::span<const double> factors) {
    std::vector<MotionClip> out;
    out.reserve(clips.size() * factors.size());
    for (const auto& clip : clips) {
        auto variants = augment_frequencies(clip, factors);
        std::move(variants.begin(), variants.end(), std::back_inserter(out));
    }
    return out;
}

SegmentRange::SegmentRange(const MotionClip& clip, std::size_t window) : clip_(&clip), window_(window) {
    if (window == 0 || window > clip.frames())
        throw InvalidArgument("segments: window longer than clip '" + clip.name + "'");
}

TrajectorySegment SegmentRange::at(std::size_t start) const {
    TrajectorySegment seg;
    seg.values = Matrix::from_view(clip_->states.columns(start, window_));
    seg.dt = clip_->dt;
    seg.end_time_index = start + window_ - 1;
    return seg;
}

SegmentRange segments(const MotionClip& clip, std::size_t window) { return SegmentRange(clip, window); }

TrajectorySegment segment_ending_at(const MotionClip& clip, std::size_t window, std::size_t end_time_index) {
    if (end_time_index >= clip.frames() || end_time_index + 1 < window)
        throw InvalidArgument("segment_ending_at: insufficient history in clip '" + clip.name + "'");
    return SegmentRange(clip, window).at(end_time_index + 1 - window);
}

NormStats fit_normalization(std::span<const MotionClip> clips) {
    if (clips.empty()) throw InvalidArgument("fit_normalization: no clips");
    const std::size_t d = clips.front().dims();
    NormStats stats;
    stats.mean.assign(d, 0.0);
    stats.std.assign(d, 0.0);
    std::size_t count = 0;
    for (const auto& clip : clips) {
        if (clip.dims() != d) throw InvalidArgument("fit_normalization: clips disagree on dimension");
        for (std::size_t r = 0; r < d; ++r)
            for (double v : clip.states.row(r)) stats.mean[r] += v;
        count += clip.frames();
    }
    if (count == 0) throw InvalidArgument("fit_normalization: clips have no frames");
    for (double& m : stats.mean) m /= static_cast<double>(count);
    for (const auto& clip : clips)
        for (std::size_t r = 0; r < d; ++r)
            for (double v : clip.states.row(r)) stats.std[r] += (v - stats.mean[r]) * (v - stats.mean[r]);
    for (double& s : stats.std) s = std::max(std::sqrt(s / static_cast<double>(count)), NormStats::kStdFloor);
    return stats;
}

void save_clip(const std::filesystem::path& path, const MotionClip& clip) {
    check_clip(clip);
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open for writing: " + path.string());
    os.write(kClipMagic, sizeof(kClipMagic));
    write_pod(os, kClipVersion);
    write_pod(os, static_cast<std::uint32_t>(clip.dims()));
    write_pod(os, static_cast<std::uint64_t>(clip.frames()));
    write_pod(os, clip.dt);
    write_pod(os, clip.with_velocities ? kFlagVelocities : 0u);
    write_pod(os, clip.freq_factor);
    write_string(os, clip.name);
    write_string(os, clip.base_motion_id);
    const auto flat = clip.states.flat();
    os.write(reinterpret_cast<const char*>(flat.data()), static_cast<std::streamsize>(flat.size_bytes()));
    if (!os) throw IoError("write failed: " + path.string());
}

MotionClip load_clip(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open clip: " + path.string());
    char magic[sizeof(kClipMagic)];
    if (!is.read(magic, sizeof(magic)) || std::memcmp(magic, kClipMagic, sizeof(magic)) != 0)
        throw IoError("not a clip file: " + path.string());
    if (read_pod<std::uint32_t>(is, path) != kClipVersion)
        throw IoError("unsupported clip version: " + path.string());
    MotionClip clip;
    const auto d = read_pod<std::uint32_t>(is, path);
    const auto T = read_pod<std::uint64_t>(is, path);
    clip.dt = read_pod<double>(is, path);
    clip.with_velocities = (read_pod<std::uint32_t>(is, path) & kFlagVelocities) != 0;
    clip.freq_factor = read_pod<double>(is, path);
    clip.name = read_string(is, path);
    clip.base_motion_id = read_string(is, path);
    clip.states = Matrix(d, T);
    auto flat = clip.states.flat();
    if (!is.read(reinterpret_cast<char*>(flat.data()), static_cast<std::streamsize>(flat.size_bytes())))
        throw IoError("truncated clip file: " + path.string());
    return clip;
}

void export_csv(const std::filesystem::path& path, const MotionClip& clip) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot open for writing: " + path.string());
    os << "t";
    for (std::size_t r = 0; r < clip.dims(); ++r) os << ",q" << r;
    os << '\n' << std::setprecision(17);
    for (std::size_t t = 0; t < clip.frames(); ++t) {
        os << static_cast<double>(t) * clip.dt;
        for (std::size_t r = 0; r < clip.dims(); ++r) os << ',' << clip.states(r, t);
        os << '\n';
    }
    if (!os) throw IoError("write failed: " + path.string());
}

void save_manifest(const std::filesystem::path& path, const DatasetManifest& manifest) {
    nlohmann::json j;
    j["dt"] = manifest.dt;
    j["d"] = manifest.d;
    j["with_velocities"] = manifest.with_velocities;
    j["clips"] = nlohmann::json::array();
    for (const auto& e : manifest.clips)
        j["clips"].push_back(
            {{"file", e.file}, {"name", e.name}, {"base_motion_id", e.base_motion_id}, {"freq_factor", e.freq_factor}});
    std::ofstream os(path);
    if (!os) throw IoError("cannot open for writing: " + path.string());
    os << j.dump(2) << '\n';
}

DatasetManifest load_manifest(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open manifest: " + path.string());
    try {
        const auto j = nlohmann::json::parse(is);
        DatasetManifest m;
        m.dt = j.at("dt").get<double>();
        m.d = j.at("d").get<std::size_t>();
        m.with_velocities = j.value("with_velocities", false);
        for (const auto& e : j.at("clips"))
            m.clips.push_back({e.at("file").get<std::string>(), e.at("name").get<std::string>(),
                               e.value("base_motion_id", std::string{}), e.value("freq_factor", 1.0)});
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw IoError("malformed manifest " + path.string() + ": " + e.what());
    }
}

DatasetManifest write_dataset(const std::filesystem::path& dir, std::span<const MotionClip> clips) {
    if (clips.empty()) throw InvalidArgument("write_dataset: no clips");
    std::filesystem::create_directories(dir);
    DatasetManifest m;
    m.dt = clips.front().dt;
    m.d = clips.front().dims();
    m.with_velocities = clips.front().with_velocities;
    for (const auto& clip : clips) {
        const std::string file = clip.name + ".clip";
        save_clip(dir / file, clip);
        m.clips.push_back({file, clip.name, clip.base_motion_id, clip.freq_factor});
    }
    save_manifest(dir / "manifest.json", m);
    return m;
}

std::vector<MotionClip> load_dataset(const std::filesystem::path& manifest_path) {
    const auto manifest = load_manifest(manifest_path);
    const auto base = manifest_path.parent_path();
    std::vector<MotionClip> clips;
    clips.reserve(manifest.clips.size());
    for (const auto& e : manifest.clips) {
        auto clip = load_clip(base / e.file);
        clip.name = e.name;
        if (!e.base_motion_id.empty()) clip.base_motion_id = e.base_motion_id;
        clips.push_back(std::move(clip));
    }
    return clips;
}

}  // namespace phasemotion
