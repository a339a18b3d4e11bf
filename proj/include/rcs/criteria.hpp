#pragma once

// Differentiable criteria on projector outputs: the contrastive loss over an
// augmented minibatch, its per-pair variant used as the PGD objective, and
// cross-entropy.

#include <cstdint>
#include <string>
#include <vector>

#include "rcs/autodiff.hpp"
#include "rcs/error.hpp"

namespace rcs {

enum class Reduction { sum, mean };

namespace detail {

/// Mask that keeps every entry except the diagonal of an (n, n) matrix.
inline std::vector<char> off_diagonal(std::size_t n) {
    std::vector<char> mask(n * n, 1);
    for (std::size_t i = 0; i < n; ++i) mask[i * n + i] = 0;
    return mask;
}

inline std::vector<std::size_t> partners(std::size_t pairs) {
    std::vector<std::size_t> p(2 * pairs);
    for (std::size_t r = 0; r < 2 * pairs; ++r) p[r] = r < pairs ? r + pairs : r - pairs;
    return p;
}

inline Var reduce_pairs(Var per_row, std::size_t pairs, Reduction reduction) {
    Var total = sum(per_row);
    return reduction == Reduction::sum ? total : scale(total, 1.0 / static_cast<double>(pairs));
}

}  // namespace detail

/// Contrastive loss of an augmented minibatch given the 2*pairs projections
/// (rows [0, pairs) view i, rows [pairs, 2 pairs) view j). For every pair both
/// anchors contribute -log(exp(sim_pos / t) / sum over B' minus the anchor).
/// Reduction::mean divides the sum of pair losses by the number of pairs.
inline Var cl_loss(Var projections, std::size_t pairs, double temperature, Reduction reduction = Reduction::mean) {
    if (pairs == 0) throw ShapeError("cl_loss: empty batch");
    if (!(temperature > 0.0)) throw DomainError("cl_loss: temperature must be positive");
    const Shape& s = projections.shape();
    if (s.size() != 2 || s[0] != 2 * pairs)
        throw ShapeError("cl_loss: expected " + std::to_string(2 * pairs) + " projection rows, got " + shape_string(s));
    Var logits = scale(cosine_similarity(projections, projections), 1.0 / temperature);
    Var positive = pick(logits, detail::partners(pairs));
    Var denominator = logsumexp(logits, detail::off_diagonal(2 * pairs));
    return detail::reduce_pairs(sub(denominator, positive), pairs, reduction);
}

/// Sum over pairs of the contrastive loss in which only the pair itself moves:
/// similarities to every non-partner view use the frozen projections.
inline Var pair_attack_objective(Var current, const Tensor& frozen, std::size_t pairs, double temperature) {
    if (current.shape() != frozen.shape()) detail::shape_mismatch("pair_attack_objective", current.shape(), frozen.shape());
    Tape& tape = *current.tape();
    const std::size_t n = 2 * pairs;
    std::vector<double> partner_mask(n * n, 0.0), other_mask(n * n, 0.0);
    const auto partner = detail::partners(pairs);
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < n; ++c) {
            if (c == partner[r]) partner_mask[r * n + c] = 1.0;
            else if (c != r) other_mask[r * n + c] = 1.0;
        }
    Var cur = l2_normalize(current);
    Var fro = l2_normalize(tape.constant(frozen));
    Var live = mul(matmul(cur, transpose(cur)), tape.constant(Tensor({n, n}, std::move(partner_mask))));
    Var fixed = mul(matmul(cur, transpose(fro)), tape.constant(Tensor({n, n}, std::move(other_mask))));
    Var logits = scale(add(live, fixed), 1.0 / temperature);
    Var positive = pick(logits, partner);
    Var denominator = logsumexp(logits, detail::off_diagonal(n));
    return sum(sub(denominator, positive));
}

inline void check_labels(const std::vector<std::size_t>& labels, std::size_t classes) {
    for (std::size_t y : labels)
        if (y >= classes)
            throw ConfigError("label " + std::to_string(y) + " out of range for " + std::to_string(classes) + " classes");
}

/// Cross-entropy of row logits against integer labels.
inline Var cross_entropy(Var logits, const std::vector<std::size_t>& labels, Reduction reduction = Reduction::mean) {
    const std::size_t rows = logits.value().rows();
    if (labels.size() != rows)
        throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for " + std::to_string(rows) + " rows");
    check_labels(labels, logits.value().cols());
    Var total = scale(sum(pick(log_softmax(logits), labels)), -1.0);
    if (reduction == Reduction::sum || rows == 0) return total;
    return scale(total, 1.0 / static_cast<double>(rows));
}

}  // namespace rcs
