#include "phasemotion/spectral.hpp"

#include <cmath>
#include <map>
#include <memory>
#include <numbers>

#include "phasemotion/error.hpp"

namespace phasemotion {

namespace {

void check_window(std::size_t H) {
    if (H < 4 || H % 2 != 0) throw InvalidArgument("spectral: curve length must be even and >= 4");
}

void check_dt(double dt) {
    if (!(dt > 0.0)) throw InvalidArgument("spectral: dt must be positive");
}

}  // namespace

FftPlan::FftPlan(std::size_t n) : n_(n) {
    if (n == 0) throw InvalidArgument("FftPlan: length must be positive");
    std::size_t rest = n;
    for (std::size_t p = 2; p * p <= rest; ++p)
        while (rest % p == 0) {
            factors_.push_back(p);
            rest /= p;
        }
    if (rest > 1) factors_.push_back(rest);
    twiddles_.resize(n);
    for (std::size_t j = 0; j < n; ++j) {
        const double angle = -2.0 * std::numbers::pi * static_cast<double>(j) / static_cast<double>(n);
        twiddles_[j] = {std::cos(angle), std::sin(angle)};
    }
}

const FftPlan& FftPlan::get(std::size_t n) {
    thread_local std::map<std::size_t, std::unique_ptr<FftPlan>> cache;
    auto& slot = cache[n];
    if (!slot) slot = std::make_unique<FftPlan>(n);
    return *slot;
}

void FftPlan::forward(std::span<const Complex> in, std::span<Complex> out) const {
    if (in.size() != n_ || out.size() != n_) throw InvalidArgument("FftPlan: length mismatch");
    transform(in.data(), 1, out.data(), n_, 0, false);
}

void FftPlan::backward(std::span<const Complex> in, std::span<Complex> out) const {
    if (in.size() != n_ || out.size() != n_) throw InvalidArgument("FftPlan: length mismatch");
    transform(in.data(), 1, out.data(), n_, 0, true);
}

void FftPlan::transform(const Complex* in, std::size_t stride, Complex* out, std::size_t n, std::size_t factor_index,
                        bool inverse) const {
    if (n == 1) {
        out[0] = in[0];
        return;
    }
    const std::size_t p = factors_[factor_index];
    const std::size_t m = n / p;
    for (std::size_t r = 0; r < p; ++r) transform(in + r * stride, stride * p, out + r * m, m, factor_index + 1, inverse);

    // W_n^x looked up in the length-n_ table.
    const std::size_t step = n_ / n;
    auto twiddle = [&](std::size_t x) {
        const Complex w = twiddles_[(x % n) * step];
        return inverse ? std::conj(w) : w;
    };

    constexpr std::size_t kStackRadix = 16;
    Complex stack_buf[kStackRadix];
    std::vector<Complex> heap_buf;
    Complex* tmp = stack_buf;
    if (p > kStackRadix) {
        heap_buf.resize(p);
        tmp = heap_buf.data();
    }

    for (std::size_t k = 0; k < m; ++k) {
        for (std::size_t r = 0; r < p; ++r) tmp[r] = out[r * m + k] * twiddle(r * k);
        if (p == 2) {
            out[k] = tmp[0] + tmp[1];
            out[k + m] = tmp[0] - tmp[1];
            continue;
        }
        for (std::size_t q = 0; q < p; ++q) {
            Complex acc = tmp[0];
            for (std::size_t r = 1; r < p; ++r) acc += tmp[r] * twiddle(r * q * m);
            out[k + q * m] = acc;
        }
    }
}

RealSpectrum rfft(std::span<const double> curve) {
    const std::size_t H = curve.size();
    check_window(H);
    std::vector<Complex> in(curve.begin(), curve.end());
    std::vector<Complex> full(H);
    FftPlan::get(H).forward(in, full);
    RealSpectrum spec;
    spec.length = H;
    spec.coeffs.assign(full.begin(), full.begin() + static_cast<std::ptrdiff_t>(H / 2 + 1));
    spec.coeffs.front().imag(0.0);
    spec.coeffs.back().imag(0.0);
    return spec;
}

std::vector<double> irfft(const RealSpectrum& spectrum) {
    const std::size_t H = spectrum.length;
    check_window(H);
    if (spectrum.coeffs.size() != H / 2 + 1) throw InvalidArgument("irfft: spectrum has wrong bin count");
    std::vector<Complex> full(H);
    for (std::size_t k = 0; k <= H / 2; ++k) full[k] = spectrum.coeffs[k];
    full[0].imag(0.0);
    full[H / 2].imag(0.0);
    for (std::size_t k = 1; k < H / 2; ++k) full[H - k] = std::conj(spectrum.coeffs[k]);
    std::vector<Complex> time(H);
    FftPlan::get(H).backward(full, time);
    std::vector<double> out(H);
    for (std::size_t j = 0; j < H; ++j) out[j] = time[j].real() / static_cast<double>(H);
    return out;
}

SpectralParams extract_params(const RealSpectrum& spectrum, double dt) {
    check_dt(dt);
    const std::size_t H = spectrum.length;
    const double Hd = static_cast<double>(H);
    double power = 0.0;
    double weighted = 0.0;
    for (std::size_t k = 1; k <= H / 2; ++k) {
        const double p = std::norm(spectrum.coeffs[k]);
        power += p;
        weighted += (static_cast<double>(k) / (Hd * dt)) * p;
    }
    SpectralParams out;
    out.f = power < kPowerFloor ? 0.0 : weighted / power;
    out.a = 2.0 * std::sqrt(power) / Hd;
    out.b = spectrum.coeffs[0].real() / Hd;
    return out;
}

SpectralParams extract_params(std::span<const double> curve, double dt) {
    check_dt(dt);
    return extract_params(rfft(curve), dt);
}

void extract_params_adjoint(const RealSpectrum& spectrum, double dt, SpectralGrad upstream, std::span<double> out) {
    check_dt(dt);
    const std::size_t H = spectrum.length;
    if (out.size() != H) throw InvalidArgument("extract_params_adjoint: output length mismatch");
    const double Hd = static_cast<double>(H);

    double power = 0.0;
    double weighted = 0.0;
    for (std::size_t k = 1; k <= H / 2; ++k) {
        const double p = std::norm(spectrum.coeffs[k]);
        power += p;
        weighted += (static_cast<double>(k) / (Hd * dt)) * p;
    }
    const bool silent = power < kPowerFloor;
    const double f = silent ? 0.0 : weighted / power;
    const double root = std::sqrt(power);

    // dL/dp_k, then dp_k/dx_j = 2 Re(c_k conj(dc_k/dx_j)) with dc_k/dx_j = exp(-2 pi i jk/H):
    // dL/dx_j = sum_k g_k * 2 Re(c_k exp(+2 pi i jk/H)), a backward transform of g_k c_k.
    std::vector<Complex> weighted_spec(H, Complex{});
    for (std::size_t k = 1; k <= H / 2; ++k) {
        double g = 0.0;
        // Below the power floor both f and a are treated as flat.
        if (!silent) g += upstream.df * ((static_cast<double>(k) / (Hd * dt)) - f) / power + upstream.da / (Hd * root);
        weighted_spec[k] = 2.0 * g * spectrum.coeffs[k];
    }
    std::vector<Complex> time(H);
    FftPlan::get(H).backward(weighted_spec, time);
    const double db_term = upstream.db / Hd;
    for (std::size_t j = 0; j < H; ++j) out[j] = time[j].real() + db_term;
}

std::vector<double> extract_params_adjoint(std::span<const double> curve, double dt, SpectralGrad upstream) {
    std::vector<double> out(curve.size());
    extract_params_adjoint(rfft(curve), dt, upstream, out);
    return out;
}

}  // namespace phasemotion
