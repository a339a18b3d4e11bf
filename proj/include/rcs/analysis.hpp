#pragma once

// Coreset analysis: kernel two-sample distance, class imbalance, per-point
// selection frequency, and a linear probe on frozen embeddings.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "rcs/autodiff.hpp"
#include "rcs/criteria.hpp"
#include "rcs/data.hpp"
#include "rcs/model.hpp"
#include "rcs/selection.hpp"

namespace rcs {

namespace detail {

inline double squared_distance(const Tensor& a, std::size_t i, const Tensor& b, std::size_t j) {
    double s = 0.0;
    for (std::size_t c = 0; c < a.cols(); ++c) {
        const double d = a(i, c) - b(j, c);
        s += d * d;
    }
    return s;
}

inline double mean_kernel(const Tensor& a, const Tensor& b, double bandwidth) {
    const double denom = 2.0 * bandwidth * bandwidth;
    double s = 0.0;
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < b.rows(); ++j) s += std::exp(-squared_distance(a, i, b, j) / denom);
    return s / (static_cast<double>(a.rows()) * static_cast<double>(b.rows()));
}

/// Strict order on point sets: by size, then lexicographically by values.
inline bool set_before(const Tensor& a, const Tensor& b) {
    if (a.rows() != b.rows()) return a.rows() < b.rows();
    const auto av = a.values(), bv = b.values();
    return std::lexicographical_compare(av.begin(), av.end(), bv.begin(), bv.end());
}

inline void check_sets(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.rows() == 0 || b.rows() == 0) throw ShapeError("mmd: point sets must be non-empty (n, d)");
    if (a.cols() != b.cols()) throw ShapeError("mmd: dimension mismatch " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
}

}  // namespace detail

/// Median pairwise Euclidean distance over the union of both sets.
inline double median_bandwidth(const Tensor& a, const Tensor& b) {
    detail::check_sets(a, b);
    const Tensor& first = detail::set_before(b, a) ? b : a;
    const Tensor& second = &first == &a ? b : a;
    std::vector<const Tensor*> owner;
    std::vector<std::size_t> row;
    for (const Tensor* t : {&first, &second})
        for (std::size_t i = 0; i < t->rows(); ++i) {
            owner.push_back(t);
            row.push_back(i);
        }
    std::vector<double> d;
    for (std::size_t i = 0; i < row.size(); ++i)
        for (std::size_t j = i + 1; j < row.size(); ++j) d.push_back(std::sqrt(detail::squared_distance(*owner[i], row[i], *owner[j], row[j])));
    if (d.empty()) return 1.0;
    const auto mid = d.begin() + static_cast<std::ptrdiff_t>(d.size() / 2);
    std::nth_element(d.begin(), mid, d.end());
    double med = *mid;
    if (d.size() % 2 == 0) med = 0.5 * (med + *std::max_element(d.begin(), mid));
    return med > 0.0 ? med : 1.0;
}

/// Biased squared MMD with an RBF kernel exp(-|x - y|^2 / (2 h^2)), floored at 0.
/// Symmetric bit for bit: the two sets are put in a canonical order first.
inline double mmd(const Tensor& a, const Tensor& b, double bandwidth) {
    detail::check_sets(a, b);
    if (!(bandwidth > 0.0) || !std::isfinite(bandwidth)) throw DomainError("mmd: bandwidth must be positive");
    const Tensor& x = detail::set_before(b, a) ? b : a;
    const Tensor& y = &x == &a ? b : a;
    const double v = detail::mean_kernel(x, x, bandwidth) + detail::mean_kernel(y, y, bandwidth) -
                     2.0 * detail::mean_kernel(x, y, bandwidth);
    return std::max(0.0, v);
}

inline double mmd(const Tensor& a, const Tensor& b) { return mmd(a, b, median_bandwidth(a, b)); }

struct ImbalanceReport {
    double ratio = 1.0;  // largest class count / smallest
    bool missing_class = false;
    std::vector<std::size_t> counts;
};

inline ImbalanceReport imbalance_ratio(std::span<const std::size_t> labels, std::size_t classes) {
    if (classes == 0) throw ConfigError("imbalance_ratio: needs at least one class");
    ImbalanceReport r;
    r.counts.assign(classes, 0);
    for (std::size_t y : labels) {
        if (y >= classes) throw ConfigError("imbalance_ratio: label " + std::to_string(y) + " out of range");
        ++r.counts[y];
    }
    const auto [lo, hi] = std::minmax_element(r.counts.begin(), r.counts.end());
    if (*lo == 0) {
        r.missing_class = true;
        r.ratio = std::numeric_limits<double>::infinity();
    } else {
        r.ratio = static_cast<double>(*hi) / static_cast<double>(*lo);
    }
    return r;
}

/// Number of rounds in which each training point's batch was selected.
inline std::vector<std::size_t> selection_frequency(const MinibatchPartition& partition, std::span<const CoresetResult> rounds) {
    std::vector<std::size_t> counts(partition.source_size(), 0);
    for (std::size_t r = 0; r < rounds.size(); ++r) {
        const CoresetResult& c = rounds[r];
        if (c.partition_batches != partition.batch_count() || c.partition_size != partition.source_size())
            throw ConfigError("selection_frequency: round " + std::to_string(r) + " was selected from a different partition");
        for (std::size_t id : c.selected)
            for (std::size_t i : partition.batch(id).indices) ++counts[i];
    }
    return counts;
}

/// Rows covered by the selected batches, in selection order.
inline std::vector<std::size_t> coreset_rows(const MinibatchPartition& partition, const CoresetResult& result) {
    std::vector<std::size_t> rows;
    for (std::size_t id : result.selected) {
        const auto& idx = partition.batch(id).indices;
        rows.insert(rows.end(), idx.begin(), idx.end());
    }
    return rows;
}

struct ProbeResult {
    double train_accuracy = 0.0;
    double test_accuracy = 0.0;
    std::size_t iterations = 0;
    double final_loss = 0.0;
};

struct ProbeSettings {
    double test_fraction = 0.2;
    double learning_rate = 0.5;
    std::size_t max_iterations = 500;
    double tolerance = 1e-6;
    std::uint64_t seed = 0;
};

namespace detail {

inline double accuracy(const Tensor& logits, std::span<const std::size_t> labels) {
    if (labels.empty()) return 0.0;
    std::size_t hit = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        std::size_t best = 0;
        for (std::size_t c = 1; c < logits.cols(); ++c)
            if (logits(i, c) > logits(i, best)) best = c;
        hit += best == labels[i];
    }
    return static_cast<double>(hit) / static_cast<double>(labels.size());
}

}  // namespace detail

/// Softmax regression on standardized features by full-batch gradient descent,
/// stopping when the loss changes by less than the tolerance.
inline ProbeResult linear_probe(const Tensor& features, std::span<const std::size_t> labels, std::size_t classes,
                                const ProbeSettings& settings = {}) {
    const std::size_t n = features.rows(), d = features.cols();
    if (labels.size() != n) throw ShapeError("linear_probe: one label per point required");
    if (classes < 2) throw ConfigError("linear_probe: needs at least two classes");
    {
        std::vector<char> seen(classes, 0);
        std::size_t distinct = 0;
        for (std::size_t y : labels) {
            if (y >= classes) throw ConfigError("linear_probe: label out of range");
            distinct += !seen[y];
            seen[y] = 1;
        }
        if (distinct < 2) throw ConfigError("linear_probe: labels contain a single class");
    }
    Rng rng(settings.seed);
    const auto perm = rng.permutation(n);
    const std::size_t n_test = std::min(n - 1, static_cast<std::size_t>(std::llround(settings.test_fraction * static_cast<double>(n))));
    std::vector<std::size_t> test_rows(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_test));
    std::vector<std::size_t> train_rows(perm.begin() + static_cast<std::ptrdiff_t>(n_test), perm.end());
    std::sort(test_rows.begin(), test_rows.end());
    std::sort(train_rows.begin(), train_rows.end());

    // Standardize with training statistics.
    std::vector<double> mean(d, 0.0), inv_std(d, 0.0);
    for (std::size_t r : train_rows)
        for (std::size_t c = 0; c < d; ++c) mean[c] += features(r, c);
    for (double& m : mean) m /= static_cast<double>(train_rows.size());
    for (std::size_t c = 0; c < d; ++c) {
        double v = 0.0;
        for (std::size_t r : train_rows) v += (features(r, c) - mean[c]) * (features(r, c) - mean[c]);
        v /= static_cast<double>(train_rows.size());
        inv_std[c] = v > 1e-12 ? 1.0 / std::sqrt(v) : 0.0;
    }
    auto standardized = [&](const std::vector<std::size_t>& rows, std::vector<std::size_t>& y) {
        std::vector<double> out;
        for (std::size_t r : rows) {
            for (std::size_t c = 0; c < d; ++c) out.push_back((features(r, c) - mean[c]) * inv_std[c]);
            y.push_back(labels[r]);
        }
        return Tensor({rows.size(), d}, std::move(out));
    };
    std::vector<std::size_t> y_train, y_test;
    const Tensor x_train = standardized(train_rows, y_train);
    const Tensor x_test = standardized(test_rows, y_test);

    Tensor w = Tensor::zeros({d, classes});
    Tensor b = Tensor::zeros({classes});
    ProbeResult result;
    double previous = std::numeric_limits<double>::infinity();
    for (std::size_t it = 0; it < settings.max_iterations; ++it) {
        Tape tape;
        Var wv = tape.leaf(w), bv = tape.leaf(b);
        Var loss = cross_entropy(add(matmul(tape.constant(x_train), wv), bv), y_train, Reduction::mean);
        tape.backward(loss);
        const double value = loss.value().item();
        const Tensor gw = tape.grad(wv), gb = tape.grad(bv);
        for (std::size_t i = 0; i < w.size(); ++i) w[i] -= settings.learning_rate * gw[i];
        for (std::size_t i = 0; i < b.size(); ++i) b[i] -= settings.learning_rate * gb[i];
        result.iterations = it + 1;
        result.final_loss = value;
        if (std::abs(previous - value) < settings.tolerance) break;
        previous = value;
    }
    auto logits = [&](const Tensor& x) {
        std::vector<double> out(x.rows() * classes);
        for (std::size_t i = 0; i < x.rows(); ++i)
            for (std::size_t c = 0; c < classes; ++c) {
                double s = b[c];
                for (std::size_t k = 0; k < d; ++k) s += x(i, k) * w(k, c);
                out[i * classes + c] = s;
            }
        return Tensor({x.rows(), classes}, std::move(out));
    };
    result.train_accuracy = detail::accuracy(logits(x_train), y_train);
    result.test_accuracy = detail::accuracy(logits(x_test), y_test);
    return result;
}

/// Probe on the frozen encoder output f(x).
inline ProbeResult linear_probe(const Model& model, const Dataset& data, const ProbeSettings& settings = {}) {
    if (!data.labeled()) throw ConfigError("linear_probe: dataset has no labels");
    return linear_probe(model.embed(data.features, Branch::natural), data.labels, data.classes, settings);
}

}  // namespace rcs
