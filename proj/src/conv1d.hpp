#pragma once

// Same-length 1D convolution over [channel][time] rows with zero padding of
// kernel/2 on each side. Weight layout is [out][in][kernel].

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>

#include "phasemotion/matrix.hpp"

namespace phasemotion::detail {

inline double dot(const double* a, const double* b, std::size_t n) {
    double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        s0 += a[i] * b[i];
        s1 += a[i + 1] * b[i + 1];
        s2 += a[i + 2] * b[i + 2];
        s3 += a[i + 3] * b[i + 3];
    }
    for (; i < n; ++i) s0 += a[i] * b[i];
    return (s0 + s1) + (s2 + s3);
}

struct TapRange {
    std::ptrdiff_t shift;
    std::size_t begin;
    std::size_t end;
};

inline TapRange tap_range(std::size_t k, std::size_t kernel, std::size_t length) {
    const auto shift = static_cast<std::ptrdiff_t>(k) - static_cast<std::ptrdiff_t>(kernel / 2);
    const auto L = static_cast<std::ptrdiff_t>(length);
    const std::ptrdiff_t t0 = std::max<std::ptrdiff_t>(0, -shift);
    const std::ptrdiff_t t1 = std::min<std::ptrdiff_t>(L, L - shift);
    return {shift, static_cast<std::size_t>(t0), static_cast<std::size_t>(std::max(t0, t1))};
}

inline void conv1d_forward(std::span<const double> weight, std::span<const double> bias, ConstMatrixView in,
                           std::size_t kernel, Matrix& out) {
    const std::size_t in_ch = in.rows;
    const std::size_t L = in.cols;
    const std::size_t out_ch = bias.size();
    out = Matrix(out_ch, L);
    for (std::size_t o = 0; o < out_ch; ++o) {
        double* y = out.row(o).data();
        std::fill(y, y + L, bias[o]);
        for (std::size_t i = 0; i < in_ch; ++i) {
            const double* w = weight.data() + (o * in_ch + i) * kernel;
            const double* x = in.data + i * in.stride;
            for (std::size_t k = 0; k < kernel; ++k) {
                const auto r = tap_range(k, kernel, L);
                const double wk = w[k];
                const double* xs = x + (static_cast<std::ptrdiff_t>(r.begin) + r.shift);
                double* ys = y + r.begin;
                const std::size_t n = r.end - r.begin;
                for (std::size_t t = 0; t < n; ++t) ys[t] += wk * xs[t];
            }
        }
    }
}

/// Accumulates dL/dweight and dL/dbias; overwrites `d_in` when given.
inline void conv1d_backward(std::span<const double> weight, ConstMatrixView in, const Matrix& d_out,
                            std::size_t kernel, std::span<double> d_weight, std::span<double> d_bias,
                            Matrix* d_in) {
    const std::size_t in_ch = in.rows;
    const std::size_t L = in.cols;
    const std::size_t out_ch = d_out.rows();
    if (d_in != nullptr) *d_in = Matrix(in_ch, L);
    for (std::size_t o = 0; o < out_ch; ++o) {
        const double* g = d_out.row(o).data();
        double bsum = 0.0;
        for (std::size_t t = 0; t < L; ++t) bsum += g[t];
        d_bias[o] += bsum;
        for (std::size_t i = 0; i < in_ch; ++i) {
            const std::size_t base = (o * in_ch + i) * kernel;
            const double* w = weight.data() + base;
            double* dw = d_weight.data() + base;
            const double* x = in.data + i * in.stride;
            double* dx = d_in != nullptr ? d_in->row(i).data() : nullptr;
            for (std::size_t k = 0; k < kernel; ++k) {
                const auto r = tap_range(k, kernel, L);
                if (r.end <= r.begin) continue;
                const auto first = static_cast<std::ptrdiff_t>(r.begin) + r.shift;
                const std::size_t n = r.end - r.begin;
                dw[k] += dot(g + r.begin, x + first, n);
                if (dx != nullptr) {
                    const double wk = w[k];
                    double* dxs = dx + first;
                    const double* gs = g + r.begin;
                    for (std::size_t t = 0; t < n; ++t) dxs[t] += wk * gs[t];
                }
            }
        }
    }
}

inline double elu(double x) { return x > 0.0 ? x : std::expm1(x); }
inline double elu_grad(double pre) { return pre > 0.0 ? 1.0 : std::exp(pre); }

}  // namespace phasemotion::detail
