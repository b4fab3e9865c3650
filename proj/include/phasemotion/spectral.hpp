#pragma once

#include <complex>
#include <cstddef>
#include <span>
#include <vector>

namespace phasemotion {

using Complex = std::complex<double>;

/// Nonnegative-frequency half of the unnormalized DFT of a real curve.
struct RealSpectrum {
    std::vector<Complex> coeffs;  // length/2 + 1 bins
    std::size_t length = 0;       // length of the real curve
};

/// Mixed-radix complex FFT for any length. Prime factors above 5 fall back to
/// a direct DFT butterfly, which is fine for the window sizes used here.
class FftPlan {
public:
    explicit FftPlan(std::size_t n);

    std::size_t size() const { return n_; }
    /// X_k = sum_j x_j exp(-2 pi i jk/n)
    void forward(std::span<const Complex> in, std::span<Complex> out) const;
    /// x_j = sum_k X_k exp(+2 pi i jk/n), no 1/n scaling
    void backward(std::span<const Complex> in, std::span<Complex> out) const;

    /// Cached plan shared by all callers on this thread.
    static const FftPlan& get(std::size_t n);

private:
    void transform(const Complex* in, std::size_t stride, Complex* out, std::size_t n, std::size_t factor_index,
                   bool inverse) const;

    std::size_t n_;
    std::vector<std::size_t> factors_;
    std::vector<Complex> twiddles_;  // exp(-2 pi i j / n)
};

/// H must be even and at least 4.
RealSpectrum rfft(std::span<const double> curve);
std::vector<double> irfft(const RealSpectrum& spectrum);

/// Frequency (Hz), amplitude and offset of one latent curve.
struct SpectralParams {
    double f = 0.0;
    double a = 0.0;
    double b = 0.0;

    friend bool operator==(const SpectralParams&, const SpectralParams&) = default;
};

/// Upstream sensitivities dL/df, dL/da, dL/db.
struct SpectralGrad {
    double df = 0.0;
    double da = 0.0;
    double db = 0.0;
};

/// Total AC power below this is treated as silence: f := 0, and neither f nor
/// a passes a gradient.
inline constexpr double kPowerFloor = 1e-12;

/// With p_k = |c_k|^2 over bins 1..H/2 (Nyquist included, DC excluded):
///   f = sum_k nu_k p_k / sum_k p_k,  nu_k = k / (H dt)
///   a = 2 sqrt(sum_k p_k) / H
///   b = Re(c_0) / H
SpectralParams extract_params(std::span<const double> curve, double dt);
SpectralParams extract_params(const RealSpectrum& spectrum, double dt);

/// Gradient of df*f + da*a + db*b with respect to the curve samples.
std::vector<double> extract_params_adjoint(std::span<const double> curve, double dt, SpectralGrad upstream);
/// Same, reusing a spectrum already computed for `curve`; writes into `out`.
void extract_params_adjoint(const RealSpectrum& spectrum, double dt, SpectralGrad upstream, std::span<double> out);

}  // namespace phasemotion
