#pragma once

#include <gtest/gtest.h>

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "rcs/rcs.hpp"

namespace rcs::testing {

/// Fails the binary if any attack in it left its budget ball.
class AuditEnvironment : public ::testing::Environment {
public:
    void TearDown() override {
        EXPECT_EQ(attack_audit().violations.load(), 0u) << "attack outputs outside the budget ball";
    }
};

inline const bool kAuditRegistered = [] {
    ::testing::AddGlobalTestEnvironment(new AuditEnvironment);
    return true;
}();

inline EncoderConfig small_config(std::size_t d = 3, std::size_t hidden = 4, std::size_t z = 3, std::size_t v = 2,
                                  std::uint64_t seed = 1, NormMode norm = NormMode::none, std::size_t head_layers = 1) {
    EncoderConfig c;
    c.input_dim = d;
    c.hidden = {hidden};
    c.embedding_dim = z;
    c.projection_dim = v;
    c.head_layers = head_layers;
    c.norm = norm;
    c.seed = seed;
    return c;
}

inline Tensor random_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed, double scale = 1.0) {
    Rng rng(seed);
    std::vector<double> v(rows * cols);
    for (double& x : v) x = scale * rng.normal();
    return Tensor({rows, cols}, std::move(v));
}

inline std::vector<std::size_t> random_labels(std::size_t n, std::size_t classes, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<std::size_t> y(n);
    for (auto& v : y) v = rng.below(classes);
    return y;
}

/// Central differences of f over the flat parameter vector of `model`.
inline std::vector<double> parameter_fd(const Model& model, const std::function<double(const Model&)>& f, double h = 1e-6) {
    const Tensor theta = Tensor::vector(model.parameters());
    const Tensor g = finite_difference_gradient(
        [&](const Tensor& p) {
            Model m = model;
            m.set_parameters(p.values());
            return f(m);
        },
        theta, h);
    return {g.values().begin(), g.values().end()};
}

/// Gradient of a tape-built scalar over all parameters.
inline std::vector<double> parameter_grad(const Model& model, const std::function<Var(const BoundModel&)>& build) {
    Tape tape;
    const BoundModel bound = model.bind(tape);
    tape.backward(build(bound));
    return bound.gradient();
}

inline double value_of(const Model& model, const std::function<Var(const BoundModel&)>& build) {
    Tape tape;
    const BoundModel bound = model.bind(tape, false);
    return build(bound).value().item();
}

inline std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline std::filesystem::path temp_dir(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / ("rcs_test_" + name + "_" + std::to_string(::getpid()));
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

/// Separable quadratic objective: batch m has loss 0.5 |theta - c_m|^2 summed
/// over its points and L_RD(theta) = 0.5 (theta - a)^T H (theta - a) + b^T theta
/// with H positive definite. Smooth, so the Taylor gain is second-order exact.
class QuadraticObjective {
public:
    QuadraticObjective(std::size_t dim, const Tensor& points, std::uint64_t seed) : points_(points), dim_(dim) {
        Rng rng(seed);
        theta0_.resize(dim);
        for (double& t : theta0_) t = rng.normal();
        anchor_.resize(dim);
        for (double& a : anchor_) a = rng.normal();
        h_.assign(dim * dim, 0.0);
        std::vector<double> m(dim * dim);
        for (double& x : m) x = rng.normal() / std::sqrt(static_cast<double>(dim));
        for (std::size_t i = 0; i < dim; ++i)
            for (std::size_t j = 0; j < dim; ++j) {
                double s = i == j ? 0.5 : 0.0;
                for (std::size_t k = 0; k < dim; ++k) s += m[i * dim + k] * m[j * dim + k];
                h_[i * dim + j] = s;
            }
    }

    std::vector<double> base_point() const { return theta0_; }

    std::vector<double> batch_gradient(std::span<const double> theta, const Minibatch& b) const {
        std::vector<double> g(dim_, 0.0);
        for (std::size_t i : b.indices)
            for (std::size_t c = 0; c < dim_; ++c) g[c] += theta[c] - points_(i, c % points_.cols());
        return g;
    }

    std::vector<double> rd_gradient(std::span<const double> theta) const {
        std::vector<double> g(dim_, 0.0);
        for (std::size_t i = 0; i < dim_; ++i)
            for (std::size_t j = 0; j < dim_; ++j) g[i] += h_[i * dim_ + j] * (theta[j] - anchor_[j]);
        return g;
    }

    double rd_value(std::span<const double> theta) const {
        double v = 0.0;
        for (std::size_t i = 0; i < dim_; ++i)
            for (std::size_t j = 0; j < dim_; ++j) v += 0.5 * (theta[i] - anchor_[i]) * h_[i * dim_ + j] * (theta[j] - anchor_[j]);
        return v;
    }

private:
    Tensor points_;
    std::size_t dim_;
    std::vector<double> theta0_, anchor_, h_;
};

}  // namespace rcs::testing
