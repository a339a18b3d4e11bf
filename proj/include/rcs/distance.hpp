#pragma once

// Distances between the distributions softmax(p / T) and softmax(q / T)
// induced by rows of projector outputs. Batched inputs reduce by sum over rows.

#include <string>

#include "rcs/autodiff.hpp"
#include "rcs/error.hpp"

namespace rcs {

enum class Distance { kl, js };

struct DistanceKind {
    Distance tag = Distance::kl;
    double temperature = 1.0;

    void validate() const {
        if (!(temperature > 0.0)) throw ConfigError("distance: temperature must be positive");
    }
};

inline const char* to_string(Distance d) { return d == Distance::kl ? "kl" : "js"; }

/// sum_rows KL(softmax(p/T) || softmax(q/T)).
inline Var kl_div(Var p_logits, Var q_logits, double temperature = 1.0) {
    if (p_logits.shape() != q_logits.shape()) detail::shape_mismatch("kl_div", p_logits.shape(), q_logits.shape());
    if (!(temperature > 0.0)) throw DomainError("kl_div: temperature must be positive");
    Var lp = log_softmax(scale(p_logits, 1.0 / temperature));
    Var lq = log_softmax(scale(q_logits, 1.0 / temperature));
    return sum(mul(exp(lp), sub(lp, lq)));
}

/// sum_rows JS(p, q) = KL(p || m)/2 + KL(q || m)/2 with m = (p + q)/2.
inline Var js_div(Var p_logits, Var q_logits, double temperature = 1.0) {
    if (p_logits.shape() != q_logits.shape()) detail::shape_mismatch("js_div", p_logits.shape(), q_logits.shape());
    if (!(temperature > 0.0)) throw DomainError("js_div: temperature must be positive");
    Var lp = log_softmax(scale(p_logits, 1.0 / temperature));
    Var lq = log_softmax(scale(q_logits, 1.0 / temperature));
    Var p = exp(lp);
    Var q = exp(lq);
    Var lm = log(scale(add(p, q), 0.5));
    return scale(add(sum(mul(p, sub(lp, lm))), sum(mul(q, sub(lq, lm)))), 0.5);
}

/// d(adversarial, natural) for the chosen distance.
inline Var distance(Var adversarial_logits, Var natural_logits, const DistanceKind& kind) {
    return kind.tag == Distance::kl ? kl_div(adversarial_logits, natural_logits, kind.temperature)
                                    : js_div(adversarial_logits, natural_logits, kind.temperature);
}

}  // namespace rcs
