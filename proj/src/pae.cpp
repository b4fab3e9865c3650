#include "phasemotion/pae.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <random>

#include "conv1d.hpp"
#include "phasemotion/error.hpp"

namespace phasemotion {

namespace {

using detail::conv1d_backward;
using detail::conv1d_forward;
using detail::elu;
using detail::elu_grad;

constexpr double kTwoPi = 2.0 * std::numbers::pi;

constexpr std::string_view kTensorNames[kParamTensorCount] = {
    "enc_conv1.weight", "enc_conv1.bias",   "enc_conv2.weight", "enc_conv2.bias",   "phase_heads.weight",
    "phase_heads.bias", "dec_conv1.weight", "dec_conv1.bias",   "dec_conv2.weight", "dec_conv2.bias",
};

std::array<std::size_t, kParamTensorCount> tensor_sizes(const ModelConfig& cfg) {
    return {cfg.hidden * cfg.d * cfg.kernel, cfg.hidden, cfg.c * cfg.hidden * cfg.kernel, cfg.c,
            cfg.c * 2 * cfg.H,               cfg.c * 2,  cfg.hidden * cfg.c * cfg.kernel, cfg.hidden,
            cfg.d * cfg.hidden * cfg.kernel, cfg.d};
}

std::array<std::size_t, kParamTensorCount> tensor_fan_in(const ModelConfig& cfg) {
    const std::size_t enc1 = cfg.d * cfg.kernel;
    const std::size_t enc2 = cfg.hidden * cfg.kernel;
    const std::size_t dec1 = cfg.c * cfg.kernel;
    const std::size_t dec2 = cfg.hidden * cfg.kernel;
    return {enc1, enc1, enc2, enc2, cfg.H, cfg.H, dec1, dec1, dec2, dec2};
}

void require_finite(const Matrix& m, const char* stage, const char* layer) {
    for (double v : m.flat())
        if (!std::isfinite(v))
            throw NumericFailure(std::string(stage) + ": non-finite activation in " + layer);
}

void apply_elu(const Matrix& pre, Matrix& act) {
    act = pre;
    for (double& v : act.flat()) v = elu(v);
}

void elu_backward(const Matrix& pre, Matrix& grad) {
    auto g = grad.flat();
    const auto p = pre.flat();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] *= elu_grad(p[i]);
}

}  // namespace

void ModelConfig::validate() const {
    if (d == 0 || c == 0 || hidden == 0) throw InvalidArgument("ModelConfig: channel counts must be positive");
    if (H < 4 || H % 2 != 0) throw InvalidArgument("ModelConfig: H must be even and >= 4");
    if (kernel % 2 == 0) throw InvalidArgument("ModelConfig: kernel must be odd");
    if (!(dt > 0.0)) throw InvalidArgument("ModelConfig: dt must be positive");
}

ModelParams::ModelParams(const ModelConfig& cfg) {
    cfg.validate();
    const auto sizes = tensor_sizes(cfg);
    offsets_[0] = 0;
    for (std::size_t t = 0; t < kParamTensorCount; ++t) offsets_[t + 1] = offsets_[t] + sizes[t];
    values_.assign(offsets_.back(), 0.0);
    grads_.assign(offsets_.back(), 0.0);
}

std::span<double> ModelParams::tensor(ParamTensor t) {
    const auto i = static_cast<std::size_t>(t);
    return std::span<double>(values_).subspan(offsets_[i], offsets_[i + 1] - offsets_[i]);
}

std::span<const double> ModelParams::tensor(ParamTensor t) const {
    const auto i = static_cast<std::size_t>(t);
    return std::span<const double>(values_).subspan(offsets_[i], offsets_[i + 1] - offsets_[i]);
}

std::span<double> ModelParams::grad(ParamTensor t) {
    const auto i = static_cast<std::size_t>(t);
    return std::span<double>(grads_).subspan(offsets_[i], offsets_[i + 1] - offsets_[i]);
}

std::span<const double> ModelParams::grad(ParamTensor t) const {
    const auto i = static_cast<std::size_t>(t);
    return std::span<const double>(grads_).subspan(offsets_[i], offsets_[i + 1] - offsets_[i]);
}

void ModelParams::zero_grad() { std::fill(grads_.begin(), grads_.end(), 0.0); }

std::string_view ModelParams::name(ParamTensor t) { return kTensorNames[static_cast<std::size_t>(t)]; }

std::string ModelParams::path_of(std::size_t flat_index) const {
    for (std::size_t t = 0; t < kParamTensorCount; ++t)
        if (flat_index < offsets_[t + 1])
            return std::string(kTensorNames[t]) + "[" + std::to_string(flat_index - offsets_[t]) + "]";
    return "out_of_range[" + std::to_string(flat_index) + "]";
}

void init_params(ModelParams& params, const ModelConfig& cfg, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    const auto fan_in = tensor_fan_in(cfg);
    for (std::size_t t = 0; t < kParamTensorCount; ++t) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in[t]));
        for (double& v : params.tensor(static_cast<ParamTensor>(t))) v = bound * unit(rng);
    }
    params.zero_grad();
}

bool operator==(const LatentState& x, const LatentState& y) {
    if (x.phi != y.phi || x.theta.size() != y.theta.size()) return false;
    for (std::size_t i = 0; i < x.theta.size(); ++i)
        if (x.theta[i].f != y.theta[i].f || x.theta[i].a != y.theta[i].a || x.theta[i].b != y.theta[i].b)
            return false;
    return true;
}

double wrap_phase(double cycles) { return cycles - std::floor(cycles + 0.5); }

std::vector<double> window_times(const ModelConfig& cfg) {
    std::vector<double> tau(cfg.H);
    const auto half = static_cast<double>(cfg.H / 2);
    for (std::size_t j = 0; j < cfg.H; ++j) tau[j] = (static_cast<double>(j) - half) * cfg.dt;
    return tau;
}

ForwardCache encode(ConstMatrixView segment, const ModelParams& params, const ModelConfig& cfg) {
    if (segment.rows != cfg.d || segment.cols != cfg.H)
        throw InvalidArgument("encode: segment is " + std::to_string(segment.rows) + "x" +
                              std::to_string(segment.cols) + ", model expects " + std::to_string(cfg.d) + "x" +
                              std::to_string(cfg.H));
    ForwardCache cache;
    cache.input = Matrix::from_view(segment);
    require_finite(cache.input, "encode", "input");

    conv1d_forward(params.tensor(ParamTensor::EncConv1Weight), params.tensor(ParamTensor::EncConv1Bias),
                   cache.input.view(), cfg.kernel, cache.conv1_pre);
    apply_elu(cache.conv1_pre, cache.conv1_act);
    require_finite(cache.conv1_act, "encode", "enc_conv1");
    conv1d_forward(params.tensor(ParamTensor::EncConv2Weight), params.tensor(ParamTensor::EncConv2Bias),
                   cache.conv1_act.view(), cfg.kernel, cache.latent);
    require_finite(cache.latent, "encode", "enc_conv2");

    const auto head_w = params.tensor(ParamTensor::PhaseWeight);
    const auto head_b = params.tensor(ParamTensor::PhaseBias);
    cache.spectra.resize(cfg.c);
    cache.shift_x.resize(cfg.c);
    cache.shift_y.resize(cfg.c);
    cache.state.phi.resize(cfg.c);
    cache.state.theta.resize(cfg.c);
    for (std::size_t i = 0; i < cfg.c; ++i) {
        const auto curve = cache.latent.row(i);
        cache.spectra[i] = rfft(curve);
        cache.state.theta[i] = extract_params(cache.spectra[i], cfg.dt);
        const double* wx = head_w.data() + (2 * i) * cfg.H;
        const double* wy = head_w.data() + (2 * i + 1) * cfg.H;
        const double sx = head_b[2 * i] + detail::dot(wx, curve.data(), cfg.H);
        const double sy = head_b[2 * i + 1] + detail::dot(wy, curve.data(), cfg.H);
        cache.shift_x[i] = sx;
        cache.shift_y[i] = sy;
        const double angle = (sx == 0.0 && sy == 0.0) ? 0.0 : std::atan2(sy, sx);
        cache.state.phi[i] = wrap_phase(angle / kTwoPi);
        if (!std::isfinite(cache.state.phi[i]) || !std::isfinite(cache.state.theta[i].f))
            throw NumericFailure("encode: non-finite latent in channel " + std::to_string(i));
    }
    return cache;
}

LatentState encode(const TrajectorySegment& segment, const ModelParams& params, const ModelConfig& cfg) {
    return encode(segment.values.view(), params, cfg).state;
}

Matrix latent_curves(const LatentState& state, const ModelConfig& cfg) {
    if (state.phi.size() != cfg.c || state.theta.size() != cfg.c)
        throw InvalidArgument("decode: latent has " + std::to_string(state.phi.size()) + " channels, model expects " +
                              std::to_string(cfg.c));
    const auto tau = window_times(cfg);
    Matrix curves(cfg.c, cfg.H);
    for (std::size_t i = 0; i < cfg.c; ++i) {
        const auto [f, a, b] = state.theta[i];
        const double phi = wrap_phase(state.phi[i]);
        auto row = curves.row(i);
        for (std::size_t j = 0; j < cfg.H; ++j) row[j] = a * std::sin(kTwoPi * (f * tau[j] + phi)) + b;
    }
    return curves;
}

Matrix decode(const LatentState& state, const ModelParams& params, const ModelConfig& cfg, DecodeCache* cache) {
    if (state.phi.size() != cfg.c || state.theta.size() != cfg.c)
        throw InvalidArgument("decode: latent has " + std::to_string(state.phi.size()) + " channels, model expects " +
                              std::to_string(cfg.c));
    DecodeCache local;
    DecodeCache& dc = cache != nullptr ? *cache : local;
    const auto tau = window_times(cfg);
    dc.state = state;
    dc.curves = Matrix(cfg.c, cfg.H);
    dc.sin_part = Matrix(cfg.c, cfg.H);
    dc.cos_part = Matrix(cfg.c, cfg.H);
    for (std::size_t i = 0; i < cfg.c; ++i) {
        const auto [f, a, b] = state.theta[i];
        const double phi = wrap_phase(state.phi[i]);
        dc.state.phi[i] = phi;
        for (std::size_t j = 0; j < cfg.H; ++j) {
            const double arg = kTwoPi * (f * tau[j] + phi);
            const double s = std::sin(arg);
            dc.sin_part(i, j) = s;
            dc.cos_part(i, j) = std::cos(arg);
            dc.curves(i, j) = a * s + b;
        }
    }
    require_finite(dc.curves, "decode", "latent curves");
    conv1d_forward(params.tensor(ParamTensor::DecConv1Weight), params.tensor(ParamTensor::DecConv1Bias),
                   dc.curves.view(), cfg.kernel, dc.conv1_pre);
    apply_elu(dc.conv1_pre, dc.conv1_act);
    require_finite(dc.conv1_act, "decode", "dec_conv1");
    conv1d_forward(params.tensor(ParamTensor::DecConv2Weight), params.tensor(ParamTensor::DecConv2Bias),
                   dc.conv1_act.view(), cfg.kernel, dc.output);
    require_finite(dc.output, "decode", "dec_conv2");
    return dc.output;
}

LatentGrad decode_backward(const DecodeCache& cache, const Matrix& d_output, ModelParams& params,
                           const ModelConfig& cfg) {
    Matrix d_act;
    conv1d_backward(params.tensor(ParamTensor::DecConv2Weight), cache.conv1_act.view(), d_output, cfg.kernel,
                    params.grad(ParamTensor::DecConv2Weight), params.grad(ParamTensor::DecConv2Bias), &d_act);
    elu_backward(cache.conv1_pre, d_act);
    Matrix d_curves;
    conv1d_backward(params.tensor(ParamTensor::DecConv1Weight), cache.curves.view(), d_act, cfg.kernel,
                    params.grad(ParamTensor::DecConv1Weight), params.grad(ParamTensor::DecConv1Bias), &d_curves);

    const auto tau = window_times(cfg);
    LatentGrad out(cfg.c);
    for (std::size_t i = 0; i < cfg.c; ++i) {
        const double a = cache.state.theta[i].a;
        double da = 0.0, db = 0.0, dphi = 0.0, df = 0.0;
        for (std::size_t j = 0; j < cfg.H; ++j) {
            const double g = d_curves(i, j);
            da += g * cache.sin_part(i, j);
            db += g;
            const double d_arg = g * a * cache.cos_part(i, j) * kTwoPi;
            dphi += d_arg;
            df += d_arg * tau[j];
        }
        out.da[i] = da;
        out.db[i] = db;
        out.dphi[i] = dphi;
        out.df[i] = df;
    }
    return out;
}

void encode_backward(const ForwardCache& cache, const LatentGrad& upstream, ModelParams& params,
                     const ModelConfig& cfg) {
    const auto head_w = params.tensor(ParamTensor::PhaseWeight);
    auto head_dw = params.grad(ParamTensor::PhaseWeight);
    auto head_db = params.grad(ParamTensor::PhaseBias);

    Matrix d_latent(cfg.c, cfg.H);
    for (std::size_t i = 0; i < cfg.c; ++i) {
        auto d_row = d_latent.row(i);
        extract_params_adjoint(cache.spectra[i], cfg.dt, {upstream.df[i], upstream.da[i], upstream.db[i]}, d_row);

        // phi = atan2(sy, sx) / 2pi; the (0, 0) point is pinned with zero gradient.
        const double sx = cache.shift_x[i];
        const double sy = cache.shift_y[i];
        const double r2 = sx * sx + sy * sy;
        if (r2 == 0.0) continue;
        const double d_sx = upstream.dphi[i] * (-sy / (kTwoPi * r2));
        const double d_sy = upstream.dphi[i] * (sx / (kTwoPi * r2));
        head_db[2 * i] += d_sx;
        head_db[2 * i + 1] += d_sy;
        const auto curve = cache.latent.row(i);
        const double* wx = head_w.data() + (2 * i) * cfg.H;
        const double* wy = head_w.data() + (2 * i + 1) * cfg.H;
        double* dwx = head_dw.data() + (2 * i) * cfg.H;
        double* dwy = head_dw.data() + (2 * i + 1) * cfg.H;
        for (std::size_t j = 0; j < cfg.H; ++j) {
            dwx[j] += d_sx * curve[j];
            dwy[j] += d_sy * curve[j];
            d_row[j] += d_sx * wx[j] + d_sy * wy[j];
        }
    }

    Matrix d_act;
    conv1d_backward(params.tensor(ParamTensor::EncConv2Weight), cache.conv1_act.view(), d_latent, cfg.kernel,
                    params.grad(ParamTensor::EncConv2Weight), params.grad(ParamTensor::EncConv2Bias), &d_act);
    elu_backward(cache.conv1_pre, d_act);
    conv1d_backward(params.tensor(ParamTensor::EncConv1Weight), cache.input.view(), d_act, cfg.kernel,
                    params.grad(ParamTensor::EncConv1Weight), params.grad(ParamTensor::EncConv1Bias), nullptr);
}

double sample_loss_and_grad(ConstMatrixView window, std::span<const PredictionTerm> terms, ModelParams& params,
                            const ModelConfig& cfg, double grad_scale) {
    std::size_t max_step = 0;
    for (const auto& term : terms) max_step = std::max(max_step, term.step);
    if (window.rows != cfg.d) throw InvalidArgument("loss: sample has wrong channel count");
    if (window.cols < cfg.H + max_step)
        throw InvalidArgument("loss: prediction step " + std::to_string(max_step) + " needs " +
                              std::to_string(cfg.H + max_step) + " frames, sample has " + std::to_string(window.cols));

    const ForwardCache enc = encode(window.columns(0, cfg.H), params, cfg);
    const double inv_count = 1.0 / static_cast<double>(cfg.d * cfg.H);
    LatentGrad latent_grad(cfg.c);
    double loss = 0.0;

    DecodeCache dc;
    Matrix d_out(cfg.d, cfg.H);
    for (const auto& term : terms) {
        const double advance = static_cast<double>(term.step) * cfg.dt;
        LatentState shifted = enc.state;
        for (std::size_t i = 0; i < cfg.c; ++i) shifted.phi[i] += shifted.theta[i].f * advance;
        const Matrix pred = decode(shifted, params, cfg, &dc);
        const ConstMatrixView target = window.columns(term.step, cfg.H);

        double sq = 0.0;
        for (std::size_t r = 0; r < cfg.d; ++r) {
            const auto p = pred.row(r);
            const auto y = target.row(r);
            auto g = d_out.row(r);
            for (std::size_t j = 0; j < cfg.H; ++j) {
                const double e = p[j] - y[j];
                sq += e * e;
                g[j] = grad_scale * term.weight * 2.0 * e * inv_count;
            }
        }
        loss += term.weight * sq * inv_count;

        const LatentGrad step_grad = decode_backward(dc, d_out, params, cfg);
        for (std::size_t i = 0; i < cfg.c; ++i) {
            latent_grad.dphi[i] += step_grad.dphi[i];
            latent_grad.df[i] += step_grad.df[i] + step_grad.dphi[i] * advance;
            latent_grad.da[i] += step_grad.da[i];
            latent_grad.db[i] += step_grad.db[i];
        }
    }
    encode_backward(enc, latent_grad, params, cfg);
    return loss;
}

double loss_and_grad(std::span<const ConstMatrixView> batch, ModelParams& params, const ModelConfig& cfg) {
    if (batch.empty()) throw InvalidArgument("loss_and_grad: empty batch");
    std::vector<PredictionTerm> terms(cfg.N + 1);
    for (std::size_t i = 0; i <= cfg.N; ++i) terms[i] = {i, 1.0};
    params.zero_grad();
    const double scale = 1.0 / static_cast<double>(batch.size());
    double total = 0.0;
    for (const auto& sample : batch) total += sample_loss_and_grad(sample, terms, params, cfg, scale);
    return total * scale;
}

namespace {

constexpr char kCkptMagic[8] = {'P', 'M', 'C', 'K', 'P', 'T', '\0', '\1'};
constexpr std::uint32_t kCkptVersion = 1;

template <typename T>
void put(std::ostream& os, const T& v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T take(std::istream& is, const std::filesystem::path& path) {
    T v{};
    if (!is.read(reinterpret_cast<char*>(&v), sizeof(T))) throw IoError("truncated checkpoint: " + path.string());
    return v;
}

void put_doubles(std::ostream& os, std::span<const double> xs) {
    os.write(reinterpret_cast<const char*>(xs.data()), static_cast<std::streamsize>(xs.size_bytes()));
}

void take_doubles(std::istream& is, std::span<double> xs, const std::filesystem::path& path) {
    if (!is.read(reinterpret_cast<char*>(xs.data()), static_cast<std::streamsize>(xs.size_bytes())))
        throw IoError("truncated checkpoint: " + path.string());
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open for writing: " + path.string());
    const auto& c = ckpt.config;
    os.write(kCkptMagic, sizeof(kCkptMagic));
    put(os, kCkptVersion);
    for (std::uint64_t v : {c.d, c.c, c.H, c.hidden, c.kernel, c.N}) put(os, v);
    put(os, c.dt);
    put(os, static_cast<std::uint64_t>(ckpt.norm.dims()));
    put_doubles(os, ckpt.norm.mean);
    put_doubles(os, ckpt.norm.std);
    put(os, static_cast<std::uint64_t>(ckpt.params.size()));
    put_doubles(os, ckpt.params.values());
    if (!os) throw IoError("write failed: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open checkpoint: " + path.string());
    char magic[sizeof(kCkptMagic)];
    if (!is.read(magic, sizeof(magic)) || std::memcmp(magic, kCkptMagic, sizeof(magic)) != 0)
        throw IoError("not a checkpoint file: " + path.string());
    if (take<std::uint32_t>(is, path) != kCkptVersion) throw IoError("unsupported checkpoint version: " + path.string());
    ModelConfig cfg;
    cfg.d = take<std::uint64_t>(is, path);
    cfg.c = take<std::uint64_t>(is, path);
    cfg.H = take<std::uint64_t>(is, path);
    cfg.hidden = take<std::uint64_t>(is, path);
    cfg.kernel = take<std::uint64_t>(is, path);
    cfg.N = take<std::uint64_t>(is, path);
    cfg.dt = take<double>(is, path);
    try {
        cfg.validate();
    } catch (const InvalidArgument& e) {
        throw IoError("bad model config in " + path.string() + ": " + e.what());
    }
    Checkpoint ckpt(cfg);
    const auto dims = take<std::uint64_t>(is, path);
    ckpt.norm.mean.resize(dims);
    ckpt.norm.std.resize(dims);
    take_doubles(is, ckpt.norm.mean, path);
    take_doubles(is, ckpt.norm.std, path);
    if (take<std::uint64_t>(is, path) != ckpt.params.size())
        throw IoError("parameter count does not match config: " + path.string());
    take_doubles(is, ckpt.params.values(), path);
    return ckpt;
}

}  // namespace phasemotion
