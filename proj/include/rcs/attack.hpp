#pragma once

// Projected gradient ascent in the L-infinity ball:
//   x^{(s+1)} = clamp(Proj_{B_eps[x]}(x^{(s)} + step * sign(grad)))
// for s = 0 .. steps-1, starting at x (or at a uniform point of the ball when
// random_start is set). sign(0) = 0.

#include <atomic>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "rcs/augment.hpp"
#include "rcs/autodiff.hpp"
#include "rcs/criteria.hpp"
#include "rcs/distance.hpp"
#include "rcs/error.hpp"
#include "rcs/model.hpp"
#include "rcs/random.hpp"

namespace rcs {

struct Interval {
    double lo = 0.0;
    double hi = 1.0;
};

struct AttackConfig {
    std::size_t steps = 5;
    double step_size = 2.0 / 255.0;
    double epsilon = 8.0 / 255.0;
    std::optional<Interval> clamp;
    bool random_start = false;

    void validate() const {
        if (!(step_size > 0.0) || !std::isfinite(step_size)) throw ConfigError("attack: step size must be positive");
        if (!(epsilon >= 0.0) || !std::isfinite(epsilon)) throw ConfigError("attack: budget must be non-negative");
        if (clamp && clamp->lo > clamp->hi) throw ConfigError("attack: clamp interval is empty");
    }

    bool is_identity() const { return steps == 0 || epsilon == 0.0; }
};

/// FGSM as one PGD step; the step may exceed the budget, projection then binds.
inline AttackConfig fgsm_config(double epsilon, double step_size, std::optional<Interval> clamp = std::nullopt) {
    return AttackConfig{1, step_size, epsilon, clamp, false};
}

/// Step size that keeps the total travel of a shortened attack: rho * T_train / T_rcs.
inline double rcs_step_size(double train_step, std::size_t train_steps, std::size_t rcs_steps) {
    if (rcs_steps == 0) throw ConfigError("rcs_step_size: selection attack needs at least one step");
    return train_step * static_cast<double>(train_steps) / static_cast<double>(rcs_steps);
}

/// Process-wide tally of budget checks performed on attack outputs.
struct AttackAudit {
    std::atomic<std::uint64_t> calls{0};
    std::atomic<std::uint64_t> violations{0};
};

inline AttackAudit& attack_audit() {
    static AttackAudit audit;
    return audit;
}

namespace detail {

constexpr double kBudgetSlack = 1e-12;

inline void audit_output(const Tensor& origin, const Tensor& out, const AttackConfig& cfg) {
    auto& audit = attack_audit();
    audit.calls.fetch_add(1, std::memory_order_relaxed);
    bool ok = out.shape() == origin.shape();
    for (std::size_t i = 0; ok && i < out.size(); ++i) {
        if (std::abs(out[i] - origin[i]) > cfg.epsilon + kBudgetSlack) ok = false;
        if (cfg.clamp && (out[i] < cfg.clamp->lo || out[i] > cfg.clamp->hi)) ok = false;
    }
    if (!ok) audit.violations.fetch_add(1, std::memory_order_relaxed);
}

inline void project(Tensor& x, const Tensor& origin, const AttackConfig& cfg) {
    for (std::size_t i = 0; i < x.size(); ++i) {
        x[i] = std::clamp(x[i], origin[i] - cfg.epsilon, origin[i] + cfg.epsilon);
        if (cfg.clamp) x[i] = std::clamp(x[i], cfg.clamp->lo, cfg.clamp->hi);
    }
}

/// Uniform start inside the ball; row r draws from derive_seed(seed, {key_r}).
inline Tensor start_point(const Tensor& x, const AttackConfig& cfg, std::uint64_t seed,
                          std::span<const std::uint64_t> row_keys) {
    Tensor start = x;
    if (!cfg.random_start) return start;
    const std::size_t rows = x.rows(), cols = x.cols();
    for (std::size_t r = 0; r < rows; ++r) {
        Rng rng(derive_seed(seed, {row_keys.empty() ? r : row_keys[r]}));
        for (std::size_t c = 0; c < cols; ++c) start[r * cols + c] += rng.uniform(-cfg.epsilon, cfg.epsilon);
    }
    project(start, x, cfg);
    return start;
}

/// Signed-gradient ascent on `gradient(current)` from x.
template <class Gradient>
Tensor ascend(const Tensor& x, const AttackConfig& cfg, std::uint64_t seed, std::span<const std::uint64_t> row_keys,
              Gradient&& gradient) {
    cfg.validate();
    if (cfg.is_identity()) {
        audit_output(x, x, cfg);
        return x;
    }
    Tensor cur = start_point(x, cfg, seed, row_keys);
    for (std::size_t step = 0; step < cfg.steps; ++step) {
        const Tensor g = gradient(cur);
        if (!g.all_finite()) throw DomainError("pgd: non-finite gradient at step " + std::to_string(step));
        for (std::size_t i = 0; i < cur.size(); ++i) {
            const double s = static_cast<double>((g[i] > 0.0) - (g[i] < 0.0));
            cur[i] += cfg.step_size * s;
        }
        project(cur, x, cfg);
    }
    audit_output(x, cur, cfg);
    return cur;
}

}  // namespace detail

/// Simultaneous PGD on the views of each positive pair. The objective for pair
/// k is its contrastive loss with every other view frozen at the natural
/// projections. x_i, x_j hold one pair per row.
inline std::pair<Tensor, Tensor> pgd_pair(const Tensor& x_i, const Tensor& x_j, const AttackConfig& cfg, const Model& model,
                                          double temperature, std::uint64_t seed = 0, Branch branch = Branch::adversarial) {
    if (x_i.shape() != x_j.shape() || x_i.rank() != 2) detail::shape_mismatch("pgd_pair", x_i.shape(), x_j.shape());
    const std::size_t pairs = x_i.rows();
    const AugmentedBatch natural = AugmentedBatch::from_views(x_i, x_j);
    if (pairs == 0 || cfg.is_identity()) {
        cfg.validate();
        detail::audit_output(natural.views, natural.views, cfg);
        return {x_i, x_j};
    }
    const Tensor frozen = model.forward(natural.views, branch);
    const Tensor adv = detail::ascend(natural.views, cfg, seed, {}, [&](const Tensor& cur) {
        Tape tape;
        const BoundModel bound = model.bind(tape, false);
        Var input = tape.leaf(cur);
        tape.backward(pair_attack_objective(bound.forward(input, branch), frozen, pairs, temperature));
        return tape.grad(input);
    });
    return {adv.rows_slice(0, pairs), adv.rows_slice(pairs, 2 * pairs)};
}

/// PGD maximizing d(h(x'), h(x)) per row, with the natural distribution held fixed.
inline Tensor pgd_rd(const Tensor& x, const AttackConfig& cfg, const Model& model, const DistanceKind& distance_kind,
                     std::uint64_t seed = 0, std::span<const std::uint64_t> row_keys = {},
                     Branch branch = Branch::adversarial) {
    distance_kind.validate();
    if (x.rows() == 0) return x;
    const Tensor anchor = model.forward(x, branch);
    return detail::ascend(x, cfg, seed, row_keys, [&](const Tensor& cur) {
        Tape tape;
        const BoundModel bound = model.bind(tape, false);
        Var input = tape.leaf(cur);
        tape.backward(distance(bound.forward(input, branch), tape.constant(anchor), distance_kind));
        return tape.grad(input);
    });
}

/// PGD maximizing the cross-entropy of h(x') against the labels.
inline Tensor pgd_cross_entropy(const Tensor& x, const std::vector<std::size_t>& labels, const AttackConfig& cfg,
                                const Model& model, std::uint64_t seed = 0, Branch branch = Branch::adversarial) {
    check_labels(labels, model.config().projection_dim);
    if (x.rows() == 0) return x;
    return detail::ascend(x, cfg, seed, {}, [&](const Tensor& cur) {
        Tape tape;
        const BoundModel bound = model.bind(tape, false);
        Var input = tape.leaf(cur);
        tape.backward(cross_entropy(bound.forward(input, branch), labels, Reduction::sum));
        return tape.grad(input);
    });
}

inline std::pair<Tensor, Tensor> fgsm_pair(const Tensor& x_i, const Tensor& x_j, double epsilon, double step_size,
                                           const Model& model, double temperature, std::uint64_t seed = 0) {
    return pgd_pair(x_i, x_j, fgsm_config(epsilon, step_size), model, temperature, seed);
}

inline Tensor fgsm_rd(const Tensor& x, double epsilon, double step_size, const Model& model,
                      const DistanceKind& distance_kind, std::uint64_t seed = 0) {
    return pgd_rd(x, fgsm_config(epsilon, step_size), model, distance_kind, seed);
}

inline Tensor fgsm_cross_entropy(const Tensor& x, const std::vector<std::size_t>& labels, double epsilon,
                                 double step_size, const Model& model, std::uint64_t seed = 0) {
    return pgd_cross_entropy(x, labels, fgsm_config(epsilon, step_size), model, seed);
}

}  // namespace rcs
