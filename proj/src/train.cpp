#include "phasemotion/train.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <random>
#include <sstream>

#include "phasemotion/error.hpp"

namespace phasemotion {

void TrainConfig::validate() const {
    if (!(lr > 0.0) || weight_decay < 0.0) throw InvalidArgument("TrainConfig: lr must be positive, weight_decay >= 0");
    if (batch == 0) throw InvalidArgument("TrainConfig: batch must be positive");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
        throw InvalidArgument("TrainConfig: betas must lie in [0, 1)");
    if (!(eps > 0.0)) throw InvalidArgument("TrainConfig: eps must be positive");
}

void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state, const TrainConfig& cfg,
               const std::function<std::string(std::size_t)>& describe) {
    if (params.size() != grads.size() || state.m.size() != params.size() || state.v.size() != params.size())
        throw InvalidArgument("adam_step: buffer sizes disagree");
    for (std::size_t i = 0; i < grads.size(); ++i)
        if (!std::isfinite(grads[i]))
            throw NumericFailure("non-finite gradient at " + (describe ? describe(i) : "index " + std::to_string(i)));

    ++state.step;
    const auto t = static_cast<double>(state.step);
    const double corr1 = 1.0 - std::pow(cfg.beta1, t);
    const double corr2 = 1.0 - std::pow(cfg.beta2, t);
    for (std::size_t i = 0; i < params.size(); ++i) {
        const double g = grads[i];
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        const double m_hat = state.m[i] / corr1;
        const double v_hat = state.v[i] / corr2;
        const double p = params[i];
        params[i] = p - cfg.lr * m_hat / (std::sqrt(v_hat) + cfg.eps) - cfg.lr * cfg.weight_decay * p;
    }
}

void adam_step(ModelParams& params, AdamState& state, const TrainConfig& cfg) {
    adam_step(params.values(), params.grads(), state, cfg,
              [&params](std::size_t i) { return params.path_of(i); });
}

std::vector<SampleRef> valid_samples(std::span<const MotionClip> clips, std::size_t window, std::size_t horizon) {
    std::vector<SampleRef> out;
    for (std::size_t c = 0; c < clips.size(); ++c) {
        const std::size_t T = clips[c].frames();
        if (T < window + horizon) continue;
        for (std::size_t s = 0; s + window + horizon <= T; ++s) out.push_back({c, s});
    }
    return out;
}

namespace {

std::vector<PredictionTerm> draw_terms(std::size_t N, std::size_t m, std::mt19937_64& rng) {
    std::vector<PredictionTerm> terms{{0, 1.0}};
    if (N == 0) return terms;
    if (m == 0 || m >= N) {
        for (std::size_t i = 1; i <= N; ++i) terms.push_back({i, 1.0});
        return terms;
    }
    const double weight = static_cast<double>(N) / static_cast<double>(m);
    std::uniform_int_distribution<std::size_t> pick(1, N);
    while (terms.size() < m + 1) {
        const std::size_t step = pick(rng);
        const bool seen = std::any_of(terms.begin(), terms.end(), [&](const auto& t) { return t.step == step; });
        if (!seen) terms.push_back({step, weight});
    }
    return terms;
}

}  // namespace

TrainResult train(std::span<const MotionClip> clips, const TrainConfig& cfg, const ModelConfig& mcfg,
                  const std::optional<std::filesystem::path>& out_dir, const TrainProgress& progress) {
    cfg.validate();
    mcfg.validate();
    if (clips.empty()) throw InvalidArgument("train: dataset is empty");
    for (const auto& clip : clips)
        if (clip.dims() != mcfg.d)
            throw InvalidArgument("train: clip '" + clip.name + "' has " + std::to_string(clip.dims()) +
                                  " rows, model expects " + std::to_string(mcfg.d));

    // Work in normalized units; the sampler only ever sees these copies.
    NormStats norm = fit_normalization(clips);
    std::vector<Matrix> data;
    data.reserve(clips.size());
    for (const auto& clip : clips) data.push_back(norm.apply(clip.states));

    const auto samples = valid_samples(clips, mcfg.H, mcfg.N);
    if (samples.empty()) throw InvalidArgument("train: no clip is long enough for window plus prediction horizon");
    if (cfg.batch > samples.size()) throw InvalidArgument("train: batch larger than the number of segments");

    if (out_dir) std::filesystem::create_directories(*out_dir);

    TrainResult result{Checkpoint(mcfg, norm, ModelParams(mcfg)), {}};
    ModelParams& params = result.checkpoint.params;
    init_params(params, mcfg, cfg.seed);
    AdamState adam(params.size());
    std::mt19937_64 rng(cfg.seed ^ 0x5eedULL);
    std::uniform_int_distribution<std::size_t> pick(0, samples.size() - 1);

    const std::size_t span_cols = mcfg.H + mcfg.N;
    std::vector<ConstMatrixView> batch(cfg.batch);
    result.log.reserve(cfg.max_iters);
    for (std::size_t iter = 0; iter < cfg.max_iters; ++iter) {
        for (auto& view : batch) {
            const SampleRef ref = samples[pick(rng)];
            view = data[ref.clip].columns(ref.start, span_cols);
        }
        double loss = 0.0;
        if (cfg.future_samples == 0 || mcfg.N == 0) {
            loss = loss_and_grad(batch, params, mcfg);
        } else {
            params.zero_grad();
            const double scale = 1.0 / static_cast<double>(batch.size());
            for (const auto& view : batch) {
                const auto terms = draw_terms(mcfg.N, cfg.future_samples, rng);
                loss += sample_loss_and_grad(view, terms, params, mcfg, scale);
            }
            loss *= scale;
        }
        const LossRecord record{iter, loss};
        result.log.push_back(record);
        adam_step(params, adam, cfg);

        if (out_dir && cfg.eval_every > 0 && (iter + 1) % cfg.eval_every == 0 && iter + 1 < cfg.max_iters)
            save_checkpoint(*out_dir / ("ckpt_" + std::to_string(iter + 1) + ".ckpt"), result.checkpoint);
        if (progress && !progress(record)) break;
    }
    params.zero_grad();

    if (out_dir) {
        write_loss_log(*out_dir / "loss.csv", result.log);
        save_checkpoint(*out_dir / "model.ckpt", result.checkpoint);
    }
    return result;
}

TrainResult train(const std::filesystem::path& manifest_path, const TrainConfig& cfg, const ModelConfig& mcfg,
                  const std::optional<std::filesystem::path>& out_dir, const TrainProgress& progress) {
    auto clips = load_dataset(manifest_path);
    for (auto& clip : clips)
        if (clip.with_velocities && clip.dims() != mcfg.d) clip = clip.positions_only();
    return train(clips, cfg, mcfg, out_dir, progress);
}

void write_loss_log(const std::filesystem::path& path, std::span<const LossRecord> log) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot open for writing: " + path.string());
    os << "iter,loss\n" << std::setprecision(17);
    for (const auto& r : log) os << r.iter << ',' << r.loss << '\n';
    if (!os) throw IoError("write failed: " + path.string());
}

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

double to_double(const ConfigMap& m, const std::string& key, double fallback) {
    const auto it = m.find(key);
    if (it == m.end()) return fallback;
    try {
        std::size_t used = 0;
        const double v = std::stod(it->second, &used);
        if (used != it->second.size()) throw std::invalid_argument(key);
        return v;
    } catch (const std::exception&) {
        throw InvalidArgument("config: '" + key + "' expects a number, got '" + it->second + "'");
    }
}

std::uint64_t to_uint(const ConfigMap& m, const std::string& key, std::uint64_t fallback) {
    const auto it = m.find(key);
    if (it == m.end()) return fallback;
    try {
        std::size_t used = 0;
        if (!it->second.empty() && it->second.front() == '-') throw std::invalid_argument(key);
        const auto v = std::stoull(it->second, &used);
        if (used != it->second.size()) throw std::invalid_argument(key);
        return v;
    } catch (const std::exception&) {
        throw InvalidArgument("config: '" + key + "' expects a non-negative integer, got '" + it->second + "'");
    }
}

constexpr std::array<std::string_view, 17> kTrainKeys = {
    "lr", "weight_decay", "batch", "max_iters", "beta1", "beta2",  "eps",    "seed", "eval_every",
    "future_samples", "d", "c", "H", "dt", "hidden", "kernel", "N",
};

}  // namespace

ConfigMap parse_config(const std::string& text) {
    ConfigMap out;
    std::istringstream is(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw InvalidArgument("config line " + std::to_string(lineno) + ": expected key = value");
        out[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
    }
    return out;
}

ConfigMap read_config(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open config: " + path.string());
    std::stringstream buf;
    buf << is.rdbuf();
    return parse_config(buf.str());
}

void apply_config(const ConfigMap& config, TrainConfig& train, ModelConfig& model) {
    train.lr = to_double(config, "lr", train.lr);
    train.weight_decay = to_double(config, "weight_decay", train.weight_decay);
    train.batch = to_uint(config, "batch", train.batch);
    train.max_iters = to_uint(config, "max_iters", train.max_iters);
    train.beta1 = to_double(config, "beta1", train.beta1);
    train.beta2 = to_double(config, "beta2", train.beta2);
    train.eps = to_double(config, "eps", train.eps);
    train.seed = to_uint(config, "seed", train.seed);
    train.eval_every = to_uint(config, "eval_every", train.eval_every);
    train.future_samples = to_uint(config, "future_samples", train.future_samples);
    model.d = to_uint(config, "d", model.d);
    model.c = to_uint(config, "c", model.c);
    model.H = to_uint(config, "H", model.H);
    model.dt = to_double(config, "dt", model.dt);
    model.hidden = to_uint(config, "hidden", model.hidden);
    model.kernel = to_uint(config, "kernel", model.kernel);
    model.N = to_uint(config, "N", model.N);
}

void check_config_keys(const ConfigMap& config, std::span<const std::string_view> known) {
    for (const auto& [key, value] : config)
        if (std::find(known.begin(), known.end(), key) == known.end())
            throw InvalidArgument("config: unknown key '" + key + "'");
}

std::span<const std::string_view> train_config_keys() { return kTrainKeys; }

}  // namespace phasemotion
