#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "phasemotion/matrix.hpp"
#include "phasemotion/motiondata.hpp"
#include "phasemotion/spectral.hpp"

namespace phasemotion {

struct ModelConfig {
    std::size_t d = 14;       // input channels
    std::size_t c = 8;        // latent channels
    std::size_t H = 100;      // window length
    double dt = 0.01;         // seconds per frame
    std::size_t hidden = 64;  // intermediate conv channels
    std::size_t kernel = 51;  // conv kernel width, odd
    std::size_t N = 0;        // forward prediction steps in the loss

    void validate() const;
    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Parameter tensors in canonical (checkpoint) order.
enum class ParamTensor : std::size_t {
    EncConv1Weight,  // hidden x d x kernel
    EncConv1Bias,    // hidden
    EncConv2Weight,  // c x hidden x kernel
    EncConv2Bias,    // c
    PhaseWeight,     // c x 2 x H
    PhaseBias,       // c x 2
    DecConv1Weight,  // hidden x c x kernel
    DecConv1Bias,    // hidden
    DecConv2Weight,  // d x hidden x kernel
    DecConv2Bias,    // d
    Count
};

inline constexpr std::size_t kParamTensorCount = static_cast<std::size_t>(ParamTensor::Count);

/// All network weights in one flat buffer, plus a same-shaped gradient buffer.
class ModelParams {
public:
    explicit ModelParams(const ModelConfig& cfg);

    std::size_t size() const { return values_.size(); }
    std::span<double> values() { return values_; }
    std::span<const double> values() const { return values_; }
    std::span<double> grads() { return grads_; }
    std::span<const double> grads() const { return grads_; }

    std::span<double> tensor(ParamTensor t);
    std::span<const double> tensor(ParamTensor t) const;
    std::span<double> grad(ParamTensor t);
    std::span<const double> grad(ParamTensor t) const;

    void zero_grad();
    /// Human-readable location of a flat index, e.g. "dec_conv2.weight[12]".
    std::string path_of(std::size_t flat_index) const;
    static std::string_view name(ParamTensor t);

private:
    std::array<std::size_t, kParamTensorCount + 1> offsets_{};
    std::vector<double> values_;
    std::vector<double> grads_;
};

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for every tensor, seeded.
void init_params(ModelParams& params, const ModelConfig& cfg, std::uint64_t seed);

/// Per-channel phase (cycles, wrapped to [-0.5, 0.5)) and (f, a, b).
struct LatentState {
    std::vector<double> phi;
    std::vector<SpectralParams> theta;

    std::size_t channels() const { return phi.size(); }
    friend bool operator==(const LatentState& x, const LatentState& y);
};

/// Encoder intermediates kept for the backward pass.
struct ForwardCache {
    Matrix input;         // d x H, normalized
    Matrix conv1_pre;     // hidden x H
    Matrix conv1_act;     // hidden x H, ELU
    Matrix latent;        // c x H latent curves
    std::vector<RealSpectrum> spectra;
    std::vector<double> shift_x;  // phase head outputs
    std::vector<double> shift_y;
    LatentState state;
};

/// Decoder intermediates kept for the backward pass.
struct DecodeCache {
    Matrix curves;     // c x H reparameterized sinusoids
    Matrix sin_part;   // sin(2 pi (f tau + phi))
    Matrix cos_part;
    Matrix conv1_pre;  // hidden x H
    Matrix conv1_act;
    Matrix output;     // d x H
    LatentState state;  // with wrapped phases
};

/// Gradient of a scalar loss with respect to a LatentState.
struct LatentGrad {
    std::vector<double> dphi, df, da, db;
    explicit LatentGrad(std::size_t c = 0) : dphi(c, 0.0), df(c, 0.0), da(c, 0.0), db(c, 0.0) {}
};

double wrap_phase(double cycles);

/// Sample times of the window, centered: tau_j = (j - H/2) dt.
std::vector<double> window_times(const ModelConfig& cfg);

ForwardCache encode(ConstMatrixView segment, const ModelParams& params, const ModelConfig& cfg);
LatentState encode(const TrajectorySegment& segment, const ModelParams& params, const ModelConfig& cfg);

/// Sinusoidal reparameterization only: a sin(2 pi (f tau + phi)) + b per channel.
Matrix latent_curves(const LatentState& state, const ModelConfig& cfg);

Matrix decode(const LatentState& state, const ModelParams& params, const ModelConfig& cfg,
              DecodeCache* cache = nullptr);

/// Accumulates decoder parameter gradients into `params` and returns dL/dlatent.
LatentGrad decode_backward(const DecodeCache& cache, const Matrix& d_output, ModelParams& params,
                           const ModelConfig& cfg);
/// Accumulates encoder parameter gradients into `params`.
void encode_backward(const ForwardCache& cache, const LatentGrad& upstream, ModelParams& params,
                     const ModelConfig& cfg);

/// One term of the prediction loss: MSE of the window decoded `step` phase
/// increments ahead, multiplied by `weight`.
struct PredictionTerm {
    std::size_t step = 0;
    double weight = 1.0;
};

/// Loss of a single sample window (d x (H + max step) columns, s_t first) and
/// gradient accumulation into `params` scaled by `grad_scale`. Returns the
/// weighted loss without `grad_scale`.
double sample_loss_and_grad(ConstMatrixView window, std::span<const PredictionTerm> terms, ModelParams& params,
                            const ModelConfig& cfg, double grad_scale);

/// Mean over the batch of sum_{i=0..N} MSE(decode(phi + i f dt, theta), s_{t+i}).
/// Each batch view holds s_t's H columns followed by at least N future columns.
/// Overwrites the gradient buffer of `params`.
double loss_and_grad(std::span<const ConstMatrixView> batch, ModelParams& params, const ModelConfig& cfg);

/// Trained model bundle as stored on disk.
struct Checkpoint {
    ModelConfig config;
    NormStats norm;
    ModelParams params;

    explicit Checkpoint(const ModelConfig& cfg) : config(cfg), params(cfg) {}
    Checkpoint(const ModelConfig& cfg, NormStats stats, ModelParams p)
        : config(cfg), norm(std::move(stats)), params(std::move(p)) {}
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace phasemotion
