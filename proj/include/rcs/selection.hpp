#pragma once

// Batch-wise coreset selection.
//
// The set function is G(S) = -L_RD(U; theta - eta * sum_{m in S} q_m) with q_m
// the training-loss gradient of minibatch m at the selection snapshot.
// rcs_greedy follows the greedy loop exactly: batch gradients are computed
// once up front, then each iteration recomputes q_U at the current virtual
// parameters, takes argmax eta * q_U^T q_m over the remaining batches (ties go
// to the lowest batch id) and moves the virtual parameters by -eta * q_s.
//
// An objective supplies the three gradient/value oracles over the selection
// coordinates (all parameters, or only the projection head).

#include <algorithm>
#include <chrono>
#include <cmath>
#include <concepts>
#include <cstdio>
#include <cstdint>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "rcs/error.hpp"
#include "rcs/random.hpp"
#include "rcs/tensor.hpp"

namespace rcs {

struct Minibatch {
    std::size_t id = 0;
    std::vector<std::size_t> indices;  // rows of the training set

    bool operator==(const Minibatch&) const = default;
};

class MinibatchPartition {
public:
    /// Consecutive batches of `batch_size` over rows 0..n-1 (the last one may be short).
    static MinibatchPartition contiguous(std::size_t n, std::size_t batch_size) {
        if (batch_size == 0) throw ConfigError("partition: batch size must be >= 1");
        MinibatchPartition p;
        p.source_size_ = n;
        p.batch_size_ = batch_size;
        for (std::size_t start = 0, id = 0; start < n; start += batch_size, ++id) {
            Minibatch b{id, {}};
            for (std::size_t i = start; i < std::min(n, start + batch_size); ++i) b.indices.push_back(i);
            p.batches_.push_back(std::move(b));
        }
        return p;
    }

    std::size_t batch_count() const { return batches_.size(); }
    std::size_t source_size() const { return source_size_; }
    std::size_t batch_size() const { return batch_size_; }
    const std::vector<Minibatch>& batches() const { return batches_; }
    const Minibatch& batch(std::size_t id) const { return batches_.at(id); }

    /// floor(k N / beta). A 1e-9 guard absorbs representation error in k.
    std::size_t budget(double fraction) const { return budget_for(fraction, source_size_, batch_size_); }

    static std::size_t budget_for(double fraction, std::size_t n, std::size_t batch_size) {
        if (!(fraction > 0.0 && fraction <= 1.0)) throw ConfigError("subset fraction must lie in (0, 1]");
        return static_cast<std::size_t>(std::floor(fraction * static_cast<double>(n) / static_cast<double>(batch_size) + 1e-9));
    }

    bool operator==(const MinibatchPartition&) const = default;

private:
    std::size_t source_size_ = 0;
    std::size_t batch_size_ = 1;
    std::vector<Minibatch> batches_;
};

struct CoresetResult {
    std::vector<std::size_t> selected;                   // batch ids in selection order
    std::vector<double> gains;                           // eta * q_U^T q_s per iteration
    std::vector<std::size_t> cumulative_grad_evals;      // after each iteration
    std::size_t grad_evals = 0;
    double wall_seconds = 0.0;
    double theta_drift = 0.0;                            // || theta_final - theta_0 ||
    std::vector<std::vector<double>> virtual_params;     // theta before each iteration
    std::size_t partition_batches = 0;                   // shape of the partition selected from
    std::size_t partition_size = 0;
};

template <class O>
concept SelectionObjective = requires(O& o, std::span<const double> theta, const Minibatch& b) {
    { o.base_point() } -> std::convertible_to<std::vector<double>>;
    { o.batch_gradient(theta, b) } -> std::convertible_to<std::vector<double>>;
    { o.rd_gradient(theta) } -> std::convertible_to<std::vector<double>>;
    { o.rd_value(theta) } -> std::convertible_to<double>;
};

namespace detail {

inline void require_finite(std::span<const double> v, const std::string& what) {
    for (double x : v)
        if (!std::isfinite(x)) throw DomainError(what + ": non-finite gradient");
}

inline void axpy(std::vector<double>& y, double a, std::span<const double> x) {
    if (y.size() != x.size()) throw ShapeError("selection: gradient length " + std::to_string(x.size()) +
                                               " does not match parameter length " + std::to_string(y.size()));
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += a * x[i];
}

}  // namespace detail

/// q_m for every batch of the partition, at theta.
template <SelectionObjective O>
std::vector<std::vector<double>> precompute_batch_grads(O& objective, const MinibatchPartition& partition,
                                                        std::span<const double> theta) {
    std::vector<std::vector<double>> grads;
    grads.reserve(partition.batch_count());
    for (const auto& b : partition.batches()) {
        grads.push_back(objective.batch_gradient(theta, b));
        detail::require_finite(grads.back(), "batch " + std::to_string(b.id));
    }
    return grads;
}

/// eta * q_U^T q_m (the constant beta * sigma is dropped).
inline double taylor_gain(std::span<const double> q_u, std::span<const double> q_m, double eta) {
    if (q_u.size() != q_m.size())
        throw ShapeError("taylor_gain: length mismatch " + std::to_string(q_u.size()) + " vs " + std::to_string(q_m.size()));
    return eta * dot(q_u, q_m);
}

/// Evaluates G(S) from precomputed batch gradients, summing them in increasing id order.
template <SelectionObjective O>
double set_value(O& objective, std::span<const double> theta0, const std::vector<std::vector<double>>& grads,
                 std::vector<std::size_t> subset, double eta) {
    std::sort(subset.begin(), subset.end());
    std::vector<double> step(theta0.size(), 0.0);
    for (std::size_t id : subset) detail::axpy(step, 1.0, grads.at(id));
    std::vector<double> theta(theta0.begin(), theta0.end());
    detail::axpy(theta, -eta, step);
    return -objective.rd_value(theta);
}

/// G(S u B) - G(S), both sides evaluated exactly.
template <SelectionObjective O>
double exact_gain(O& objective, std::span<const double> theta0, const std::vector<std::vector<double>>& grads,
                  const std::vector<std::size_t>& set, const std::vector<std::size_t>& batch, double eta) {
    for (std::size_t b : batch)
        if (std::find(set.begin(), set.end(), b) != set.end())
            throw ConfigError("exact_gain: batch " + std::to_string(b) + " is already in the set");
    if (batch.empty()) return 0.0;
    std::vector<std::size_t> joined = set;
    joined.insert(joined.end(), batch.begin(), batch.end());
    return set_value(objective, theta0, grads, joined, eta) - set_value(objective, theta0, grads, set, eta);
}

namespace detail {

template <SelectionObjective O>
CoresetResult greedy_over(O& objective, const std::vector<const Minibatch*>& batches, std::size_t budget, double eta,
                          std::size_t eval_offset) {
    const auto t0 = std::chrono::steady_clock::now();
    CoresetResult result;
    const std::vector<double> theta0 = objective.base_point();
    std::vector<double> theta = theta0;

    std::vector<std::vector<double>> grads;
    grads.reserve(batches.size());
    for (const Minibatch* b : batches) {
        grads.push_back(objective.batch_gradient(theta0, *b));
        detail::require_finite(grads.back(), "batch " + std::to_string(b->id));
        if (grads.back().size() != theta0.size()) throw ShapeError("selection: batch gradient has the wrong length");
    }
    std::size_t evals = batches.size();

    std::vector<bool> taken(batches.size(), false);
    for (std::size_t it = 0; it < budget; ++it) {
        result.virtual_params.push_back(theta);
        const std::vector<double> q_u = objective.rd_gradient(theta);
        ++evals;
        detail::require_finite(q_u, "validation gradient");
        double best_gain = -std::numeric_limits<double>::infinity();
        std::optional<std::size_t> best;
        for (std::size_t m = 0; m < batches.size(); ++m) {
            if (taken[m]) continue;
            const double gain = taylor_gain(q_u, grads[m], eta);
            if (gain > best_gain) {
                best_gain = gain;
                best = m;
            }
        }
        if (!best) throw DomainError("selection: no finite gain among remaining batches");
        taken[*best] = true;
        result.selected.push_back(batches[*best]->id);
        result.gains.push_back(best_gain);
        result.cumulative_grad_evals.push_back(eval_offset + evals);
        detail::axpy(theta, -eta, grads[*best]);
    }
    result.grad_evals = evals;
    double drift = 0.0;
    for (std::size_t i = 0; i < theta.size(); ++i) drift += (theta[i] - theta0[i]) * (theta[i] - theta0[i]);
    result.theta_drift = std::sqrt(drift);
    result.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return result;
}

inline std::vector<const Minibatch*> batch_pointers(const MinibatchPartition& partition) {
    std::vector<const Minibatch*> out;
    for (const auto& b : partition.batches()) out.push_back(&b);
    return out;
}

}  // namespace detail

/// Greedy batch-wise selection of floor(k N / beta) batches.
template <SelectionObjective O>
CoresetResult rcs_greedy(O& objective, const MinibatchPartition& partition, double fraction, double eta) {
    const std::size_t budget = partition.budget(fraction);
    if (budget == 0) throw ConfigError("fraction too small for batch size");
    CoresetResult r = detail::greedy_over(objective, detail::batch_pointers(partition), budget, eta, 0);
    r.partition_batches = partition.batch_count();
    r.partition_size = partition.source_size();
    return r;
}

/// Runs the greedy loop independently on consecutive chunks of `chunk` batches,
/// each from the snapshot parameters with budget floor(k N_chunk / beta).
template <SelectionObjective O>
CoresetResult chunked_select(O& objective, const MinibatchPartition& partition, double fraction, double eta,
                             std::size_t chunk = 100) {
    if (chunk == 0) throw ConfigError("chunked_select: chunk size must be >= 1");
    const auto t0 = std::chrono::steady_clock::now();
    CoresetResult all;
    const auto pointers = detail::batch_pointers(partition);
    for (std::size_t start = 0; start < pointers.size(); start += chunk) {
        std::vector<const Minibatch*> part(pointers.begin() + static_cast<std::ptrdiff_t>(start),
                                           pointers.begin() + static_cast<std::ptrdiff_t>(std::min(pointers.size(), start + chunk)));
        std::size_t points = 0;
        for (const Minibatch* b : part) points += b->indices.size();
        const std::size_t budget = MinibatchPartition::budget_for(fraction, points, partition.batch_size());
        if (budget == 0)
            throw ConfigError("chunked_select: chunk starting at batch " + std::to_string(start) + " has a zero budget");
        CoresetResult r = detail::greedy_over(objective, part, budget, eta, all.grad_evals);
        all.selected.insert(all.selected.end(), r.selected.begin(), r.selected.end());
        all.gains.insert(all.gains.end(), r.gains.begin(), r.gains.end());
        all.cumulative_grad_evals.insert(all.cumulative_grad_evals.end(), r.cumulative_grad_evals.begin(),
                                         r.cumulative_grad_evals.end());
        all.virtual_params.insert(all.virtual_params.end(), r.virtual_params.begin(), r.virtual_params.end());
        all.grad_evals += r.grad_evals;
        all.theta_drift = std::max(all.theta_drift, r.theta_drift);
    }
    all.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    all.partition_batches = partition.batch_count();
    all.partition_size = partition.source_size();
    return all;
}

/// Uniform sample of floor(k N / beta) batches without replacement.
inline CoresetResult random_select(const MinibatchPartition& partition, double fraction, std::uint64_t seed) {
    const std::size_t budget = partition.budget(fraction);
    Rng rng(seed);
    const auto order = rng.permutation(partition.batch_count());
    CoresetResult r;
    r.partition_batches = partition.batch_count();
    r.partition_size = partition.source_size();
    for (std::size_t i = 0; i < budget; ++i) {
        r.selected.push_back(partition.batches()[order[i]].id);
        r.gains.push_back(0.0);
        r.cumulative_grad_evals.push_back(0);
    }
    return r;
}

// ---------------------------------------------------------------------------
// Exhaustive oracle and the approximation guarantee
// ---------------------------------------------------------------------------

inline std::uint64_t binomial(std::uint64_t n, std::uint64_t k) {
    if (k > n) return 0;
    k = std::min(k, n - k);
    unsigned __int128 r = 1;
    for (std::uint64_t i = 1; i <= k; ++i) {
        r = r * (n - k + i) / i;
        if (r > std::numeric_limits<std::uint64_t>::max()) return std::numeric_limits<std::uint64_t>::max();
    }
    return static_cast<std::uint64_t>(r);
}

/// Memoized G over subsets of batch ids, with gradients fixed at the snapshot.
template <SelectionObjective O>
class SubsetValues {
public:
    SubsetValues(O& objective, const MinibatchPartition& partition, double eta)
        : objective_(&objective), eta_(eta), theta0_(objective.base_point()) {
        grads_ = precompute_batch_grads(objective, partition, theta0_);
    }

    double operator()(std::vector<std::size_t> subset) {
        std::sort(subset.begin(), subset.end());
        auto it = memo_.find(subset);
        if (it != memo_.end()) return it->second;
        ++evaluations_;
        const double g = set_value(*objective_, theta0_, grads_, subset, eta_);
        memo_.emplace(std::move(subset), g);
        return g;
    }

    std::size_t evaluations() const { return evaluations_; }
    const std::vector<std::vector<double>>& batch_grads() const { return grads_; }
    const std::vector<double>& base_point() const { return theta0_; }

private:
    O* objective_;
    double eta_;
    std::vector<double> theta0_;
    std::vector<std::vector<double>> grads_;
    std::map<std::vector<std::size_t>, double> memo_;
    std::size_t evaluations_ = 0;
};

struct OracleResult {
    std::vector<std::size_t> best_subset;
    double best_value = -std::numeric_limits<double>::infinity();
    std::size_t evaluations = 0;
};

/// Enumerates every subset of floor(k N / beta) batches (lexicographic order,
/// first maximum wins) and evaluates G on each.
template <SelectionObjective O>
OracleResult exhaustive_oracle(SubsetValues<O>& values, const MinibatchPartition& partition, double fraction,
                               std::uint64_t cap = 10000) {
    const std::size_t n = partition.batch_count();
    const std::size_t budget = partition.budget(fraction);
    const std::uint64_t count = binomial(n, budget);
    if (count > cap)
        throw ConfigError("exhaustive_oracle: " + std::to_string(count) + " subsets exceed the cap of " + std::to_string(cap) +
                          "; use fewer batches or a smaller fraction");
    OracleResult out;
    const std::size_t before = values.evaluations();
    std::vector<std::size_t> combo(budget);
    std::iota(combo.begin(), combo.end(), std::size_t{0});
    for (;;) {
        const double g = values(combo);
        if (g > out.best_value) {
            out.best_value = g;
            out.best_subset = combo;
        }
        std::size_t i = budget;
        while (i > 0 && combo[i - 1] == n - budget + i - 1) --i;
        if (i == 0) break;
        ++combo[i - 1];
        for (std::size_t j = i; j < budget; ++j) combo[j] = combo[j - 1] + 1;
    }
    out.evaluations = values.evaluations() - before;
    return out;
}

/// sigma and gamma* = 1 / (2 sigma - 1). Lipschitz and remainder constants are
/// not observable and are kept only as empty slots.
struct GuaranteeParams {
    double sigma = 1.0;
    std::optional<double> l1, l2, l3, l4, nu1, nu2;

    double gamma_star() const { return 1.0 / (2.0 * sigma - 1.0); }
};

/// sigma = 1 + max(0, -min marginal gain) / beta: every proxy gain
/// G(B|S) + beta sigma is then at least beta.
inline GuaranteeParams empirical_sigma(std::span<const double> marginal_gains, std::size_t batch_size) {
    double lowest = 0.0;
    for (double g : marginal_gains) lowest = std::min(lowest, g);
    GuaranteeParams params;
    params.sigma = 1.0 + std::max(0.0, -lowest) / static_cast<double>(batch_size);
    return params;
}

/// Every G(B|S) with |S| < budget and B outside S.
template <SelectionObjective O>
std::vector<double> enumerate_marginal_gains(SubsetValues<O>& values, std::size_t batch_count, std::size_t budget) {
    std::vector<double> gains;
    std::vector<std::vector<std::size_t>> layer{{}};
    for (std::size_t size = 0; size < budget; ++size) {
        std::vector<std::vector<std::size_t>> next;
        for (const auto& s : layer) {
            const double base = values(s);
            for (std::size_t b = 0; b < batch_count; ++b) {
                if (std::find(s.begin(), s.end(), b) != s.end()) continue;
                auto joined = s;
                joined.push_back(b);
                gains.push_back(values(joined) - base);
                std::sort(joined.begin(), joined.end());
                if (joined.back() == b) next.push_back(std::move(joined));  // each superset once
            }
        }
        layer = std::move(next);
    }
    return gains;
}

struct GuaranteeReport {
    double greedy_value = 0.0;  // G(S_greedy)
    double optimum = 0.0;       // G*
    double bound = 0.0;         // G* - (G* + k N sigma) exp(-gamma*)
    double gamma_star = 0.0;
    bool holds = false;
    bool weak_bound = false;        // exp(-gamma*) > 0.9
    bool proxy_monotone = false;    // every proxy gain along the greedy trace > 0
    double min_proxy_gain = 0.0;
};

/// Checks G(S_greedy) >= G* - (G* + kN sigma) e^{-gamma*} and proxy monotonicity
/// along the greedy trace. `path_values` holds G of each greedy prefix, starting
/// with the empty set.
inline GuaranteeReport verify_guarantee(std::span<const double> path_values, double optimum, const GuaranteeParams& params,
                                        double fraction, std::size_t n, std::size_t batch_size) {
    if (path_values.empty()) throw ConfigError("verify_guarantee: empty greedy path");
    GuaranteeReport r;
    r.greedy_value = path_values.back();
    r.optimum = optimum;
    r.gamma_star = params.gamma_star();
    const double kn = fraction * static_cast<double>(n);
    r.bound = optimum - (optimum + kn * params.sigma) * std::exp(-r.gamma_star);
    r.holds = r.greedy_value >= r.bound;
    r.weak_bound = std::exp(-r.gamma_star) > 0.9;
    r.min_proxy_gain = std::numeric_limits<double>::infinity();
    for (std::size_t i = 1; i < path_values.size(); ++i) {
        const double proxy = path_values[i] - path_values[i - 1] + static_cast<double>(batch_size) * params.sigma;
        r.min_proxy_gain = std::min(r.min_proxy_gain, proxy);
    }
    r.proxy_monotone = path_values.size() == 1 || r.min_proxy_gain > 0.0;
    return r;
}

/// G of each prefix of the greedy selection, starting with the empty set.
template <SelectionObjective O>
std::vector<double> greedy_path_values(SubsetValues<O>& values, const CoresetResult& greedy) {
    std::vector<double> out{values({})};
    std::vector<std::size_t> prefix;
    for (std::size_t id : greedy.selected) {
        prefix.push_back(id);
        out.push_back(values(prefix));
    }
    return out;
}

// ---------------------------------------------------------------------------
// CSV: iteration,batch_id,gain,cumulative_grad_evals
// ---------------------------------------------------------------------------

inline std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline std::string coreset_csv(const CoresetResult& r) {
    std::ostringstream out;
    out << "iteration,batch_id,gain,cumulative_grad_evals\n";
    for (std::size_t i = 0; i < r.selected.size(); ++i)
        out << i << ',' << r.selected[i] << ',' << format_double(r.gains[i]) << ',' << r.cumulative_grad_evals[i] << '\n';
    return out.str();
}

inline void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out << text;
    if (!out) throw IoError("write failed: " + path);
}

inline CoresetResult read_coreset_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    std::string line;
    std::getline(in, line);
    if (line != "iteration,batch_id,gain,cumulative_grad_evals") throw IoError(path + ": unexpected header");
    CoresetResult r;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream row(line);
        std::string field[4];
        for (auto& f : field)
            if (!std::getline(row, f, ',')) throw IoError(path + ": malformed row '" + line + "'");
        r.selected.push_back(std::stoul(field[1]));
        r.gains.push_back(std::stod(field[2]));
        r.cumulative_grad_evals.push_back(std::stoul(field[3]));
    }
    r.grad_evals = r.cumulative_grad_evals.empty() ? 0 : r.cumulative_grad_evals.back();
    return r;
}

}  // namespace rcs
