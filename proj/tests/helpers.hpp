#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include <unistd.h>

#include "oracles.hpp"
#include "phasemotion/pae.hpp"

namespace testing {

inline std::vector<double> span_vec(std::span<const double> s) { return {s.begin(), s.end()}; }

inline oracle::Weights weights_of(const phasemotion::ModelParams& p) {
    using phasemotion::ParamTensor;
    return {span_vec(p.tensor(ParamTensor::EncConv1Weight)), span_vec(p.tensor(ParamTensor::EncConv1Bias)),
            span_vec(p.tensor(ParamTensor::EncConv2Weight)), span_vec(p.tensor(ParamTensor::EncConv2Bias)),
            span_vec(p.tensor(ParamTensor::PhaseWeight)),    span_vec(p.tensor(ParamTensor::PhaseBias)),
            span_vec(p.tensor(ParamTensor::DecConv1Weight)), span_vec(p.tensor(ParamTensor::DecConv1Bias)),
            span_vec(p.tensor(ParamTensor::DecConv2Weight)), span_vec(p.tensor(ParamTensor::DecConv2Bias))};
}

inline oracle::Grid grid_of(const phasemotion::Matrix& m) {
    oracle::Grid g(m.rows(), std::vector<double>(m.cols()));
    for (std::size_t r = 0; r < m.rows(); ++r)
        for (std::size_t c = 0; c < m.cols(); ++c) g[r][c] = m(r, c);
    return g;
}

inline phasemotion::Matrix random_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed, double scale = 1.0) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(0.0, scale);
    phasemotion::Matrix m(rows, cols);
    for (double& v : m.flat()) v = n(rng);
    return m;
}

/// Smooth, periodic-ish test input: a few random sinusoids per row.
inline phasemotion::Matrix wavy_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed, double dt = 0.01) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    phasemotion::Matrix m(rows, cols);
    for (std::size_t r = 0; r < rows; ++r) {
        const double f = 0.5 + 2.5 * u(rng), a = 0.2 + u(rng), ph = 6.283 * u(rng), b = u(rng) - 0.5;
        for (std::size_t c = 0; c < cols; ++c) m(r, c) = a * std::sin(6.283185307179586 * f * c * dt + ph) + b;
    }
    return m;
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& tag) {
    static std::uint64_t counter = 0;
    auto dir = std::filesystem::temp_directory_path() /
               ("phasemotion_test_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

}  // namespace testing
