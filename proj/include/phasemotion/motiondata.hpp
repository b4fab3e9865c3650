#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iterator>
#include <span>
#include <string>
#include <vector>

#include "phasemotion/matrix.hpp"

namespace phasemotion {

/// A named joint trajectory sampled at a fixed timestep.
///
/// `states` is d x T: one row per state dimension, one column per frame.
/// When `with_velocities` is set the first half of the rows are joint
/// positions (rad) and the second half the matching velocities (rad/s).
struct MotionClip {
    std::string name;
    Matrix states;
    double dt = 0.01;
    std::string base_motion_id;
    double freq_factor = 1.0;
    bool with_velocities = false;

    std::size_t dims() const { return states.rows(); }
    std::size_t frames() const { return states.cols(); }
    std::size_t joints() const { return with_velocities ? dims() / 2 : dims(); }
    double duration() const { return static_cast<double>(frames()) * dt; }

    /// Copy of this clip restricted to the joint position rows.
    MotionClip positions_only() const;
};

/// d x H window s_t, columns oldest to newest, ending at frame `end_time_index`.
struct TrajectorySegment {
    Matrix values;
    double dt = 0.01;
    std::size_t end_time_index = 0;
};

/// Per-dimension standardization fitted over a corpus.
struct NormStats {
    static constexpr double kStdFloor = 1e-6;

    std::vector<double> mean;
    std::vector<double> std;

    std::size_t dims() const { return mean.size(); }
    Matrix apply(const Matrix& raw) const;
    Matrix invert(const Matrix& normalized) const;
    void apply_in_place(std::span<double> column) const;
    void invert_in_place(std::span<double> column) const;
};

struct ManifestEntry {
    std::string file;  // relative to the manifest's directory
    std::string name;
    std::string base_motion_id;
    double freq_factor = 1.0;
};

/// Index of a clip directory, stored as `manifest.json`.
struct DatasetManifest {
    std::vector<ManifestEntry> clips;
    double dt = 0.01;
    std::size_t d = 0;
    bool with_velocities = false;
};

/// Frequency multipliers applied to every base clip.
inline constexpr std::array<double, 5> kFrequencyFactors{0.5, 0.75, 1.0, 1.25, 1.5};

struct CorpusConfig {
    std::uint64_t seed = 7;
    std::size_t n_base = 34;
    std::size_t n_joints = 14;
    double duration_s = 6.0;
    double dt = 0.01;
    /// Share of joints per clip that receive a Gaussian bump.
    double bump_fraction = 0.3;
    bool with_velocities = false;
    /// Shortest window the clips must cover (duration_s >= window * dt).
    std::size_t window = 100;
};

/// Parameters the generator drew for one joint; exposed so tests can check
/// generated rows against their spectrum.
struct JointRecipe {
    double offset = 0.0;
    std::vector<double> freqs_hz;
    std::vector<double> amps;
    std::vector<double> phases;  // radians
    bool has_bump = false;
    double bump_amp = 0.0;
    double bump_center_s = 0.0;
    double bump_sigma_s = 0.0;
};

struct ClipRecipe {
    std::vector<JointRecipe> joints;
};

/// Deterministic synthetic dance corpus. A shared body template (per-joint rest
/// pose and weights on three rhythm slots) comes from a reserved stream of the
/// seed; each clip then draws its beat, rhythms and bumps from its own stream
/// derived from (seed, clip index). Sinusoid frequencies are integer multiples
/// of 1/duration_s so clips loop seamlessly.
std::vector<MotionClip> generate_corpus(const CorpusConfig& cfg);
ClipRecipe corpus_recipe(const CorpusConfig& cfg, std::size_t clip_index);
/// Name (and base motion id) of generated clip `index`: "dance<index>".
std::string corpus_clip_name(std::size_t index);

/// Time-warps a clip: output row y(t) = x(k t), linear interpolation, source
/// treated as periodic so each output keeps the input's frame count.
std::vector<MotionClip> augment_frequencies(const MotionClip& clip, std::span<const double> factors);
std::vector<MotionClip> augment_corpus(std::span<const MotionClip> clips,
                                       std::span<const double> factors = kFrequencyFactors);

/// Lazy range over the T-H+1 stride-1 windows of a clip.
class SegmentRange {
public:
    SegmentRange(const MotionClip& clip, std::size_t window);

    class iterator {
    public:
        using iterator_category = std::input_iterator_tag;
        using value_type = TrajectorySegment;
        using difference_type = std::ptrdiff_t;

        iterator() = default;
        iterator(const SegmentRange* range, std::size_t start) : range_(range), start_(start) {}

        TrajectorySegment operator*() const { return range_->at(start_); }
        iterator& operator++() {
            ++start_;
            return *this;
        }
        iterator operator++(int) {
            auto old = *this;
            ++start_;
            return old;
        }
        friend bool operator==(const iterator& a, const iterator& b) { return a.start_ == b.start_; }

    private:
        const SegmentRange* range_ = nullptr;
        std::size_t start_ = 0;
    };

    iterator begin() const { return {this, 0}; }
    iterator end() const { return {this, size()}; }
    std::size_t size() const { return clip_->frames() - window_ + 1; }

    /// Segment whose first column is clip column `start`.
    TrajectorySegment at(std::size_t start) const;

private:
    const MotionClip* clip_;
    std::size_t window_;
};

SegmentRange segments(const MotionClip& clip, std::size_t window);

/// Window of `window` columns ending at frame `end_time_index`.
TrajectorySegment segment_ending_at(const MotionClip& clip, std::size_t window, std::size_t end_time_index);

NormStats fit_normalization(std::span<const MotionClip> clips);

// Clip files: fixed little-endian header followed by row-major float64 states.
void save_clip(const std::filesystem::path& path, const MotionClip& clip);
MotionClip load_clip(const std::filesystem::path& path);
/// Debug export, header `t,q0..q{d-1}`, one row per frame.
void export_csv(const std::filesystem::path& path, const MotionClip& clip);

void save_manifest(const std::filesystem::path& path, const DatasetManifest& manifest);
DatasetManifest load_manifest(const std::filesystem::path& path);

/// Writes every clip as `<name>.clip` plus `manifest.json` into `dir`.
DatasetManifest write_dataset(const std::filesystem::path& dir, std::span<const MotionClip> clips);
/// Loads all clips listed by a manifest; paths resolve against its directory.
std::vector<MotionClip> load_dataset(const std::filesystem::path& manifest_path);

}  // namespace phasemotion
