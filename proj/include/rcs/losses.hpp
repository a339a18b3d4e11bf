#pragma once

// Training losses built on a bound model: adversarial contrastive (ACL and
// its DynACL schedule), SAT and TRADES. Adversarial inputs are generated on
// an untracked copy of the parameters and enter the loss as constants.

#include <cmath>
#include <cstdint>
#include <vector>

#include "rcs/attack.hpp"
#include "rcs/augment.hpp"
#include "rcs/criteria.hpp"
#include "rcs/distance.hpp"
#include "rcs/model.hpp"

namespace rcs {

/// Contrastive loss of an augmented batch under h.
inline Var cl_loss(const BoundModel& model, const AugmentedBatch& batch, double temperature,
                   Reduction reduction = Reduction::mean, Branch branch = Branch::natural) {
    Var views = model.tape().constant(batch.views);
    return cl_loss(model.forward(views, branch), batch.pairs, temperature, reduction);
}

struct AclTerms {
    Var total;
    Var adversarial;  // l_CL on the adversarial views
    Var natural;      // l_CL on the natural views
    AugmentedBatch adversarial_batch;
};

/// (1 + omega) l_CL(adversarial views) + (1 - omega) l_CL(natural views).
inline AclTerms acl_terms(const BoundModel& model, const AugmentedBatch& batch, double omega, const AttackConfig& attack,
                          double temperature, std::uint64_t seed, Reduction reduction = Reduction::mean) {
    if (!(omega >= 0.0 && omega <= 1.0)) throw ConfigError("acl_loss: omega must lie in [0, 1]");
    attack.validate();
    auto [adv_i, adv_j] = pgd_pair(batch.view_i(), batch.view_j(), attack, model.model(), temperature, seed);
    AugmentedBatch adv = AugmentedBatch::from_views(adv_i, adv_j, batch.strength);
    Var adv_loss = cl_loss(model, adv, temperature, reduction, Branch::adversarial);
    Var nat_loss = cl_loss(model, batch, temperature, reduction, Branch::natural);
    Var total = add(scale(adv_loss, 1.0 + omega), scale(nat_loss, 1.0 - omega));
    return AclTerms{total, adv_loss, nat_loss, std::move(adv)};
}

inline Var acl_loss(const BoundModel& model, const AugmentedBatch& batch, double omega, const AttackConfig& attack,
                    double temperature, std::uint64_t seed, Reduction reduction = Reduction::mean) {
    return acl_terms(model, batch, omega, attack, temperature, seed, reduction).total;
}

struct DynaclState {
    double mu = 1.0;     // augmentation strength
    double omega = 0.0;  // adversarial reweighting
};

/// mu_e = 1 - floor(e / K) * K / E,  omega_e = nu * (1 - mu_e).
inline DynaclState dynacl_schedule(std::size_t epoch, std::size_t total_epochs, std::size_t period, double rate) {
    if (period == 0) throw ConfigError("dynacl: decay period must be >= 1");
    if (epoch >= total_epochs) throw ConfigError("dynacl: epoch " + std::to_string(epoch) + " outside [0, " +
                                                 std::to_string(total_epochs) + ")");
    const double decayed = static_cast<double>((epoch / period) * period) / static_cast<double>(total_epochs);
    const double mu = 1.0 - decayed;
    return DynaclState{mu, rate * (1.0 - mu)};
}

/// Cross-entropy on PGD examples that maximize it.
inline Var sat_loss(const BoundModel& model, const Tensor& x, const std::vector<std::size_t>& labels,
                    const AttackConfig& attack, std::uint64_t seed, Reduction reduction = Reduction::mean) {
    check_labels(labels, model.model().config().projection_dim);
    const Tensor adv = pgd_cross_entropy(x, labels, attack, model.model(), seed);
    return cross_entropy(model.forward(model.tape().constant(adv), Branch::adversarial), labels, reduction);
}

/// CE(h(x), y) + c * KL(softmax h(x') || softmax h(x)), x' maximizing the KL term.
/// When the attack returns x itself the KL term vanishes for every parameter
/// value and is left off the tape.
inline Var trades_loss(const BoundModel& model, const Tensor& x, const std::vector<std::size_t>& labels, double c,
                       const AttackConfig& attack, std::uint64_t seed, Reduction reduction = Reduction::mean) {
    if (!(c >= 0.0)) throw ConfigError("trades_loss: trade-off must be non-negative");
    check_labels(labels, model.model().config().projection_dim);
    Var natural_logits = model.forward(model.tape().constant(x), Branch::natural);
    Var ce = cross_entropy(natural_logits, labels, reduction);
    if (c == 0.0) return ce;
    const Tensor adv = pgd_rd(x, attack, model.model(), DistanceKind{Distance::kl, 1.0}, seed);
    if (adv == x) return ce;
    Var adv_logits = model.forward(model.tape().constant(adv), Branch::adversarial);
    Var kl = kl_div(adv_logits, natural_logits, 1.0);
    if (reduction == Reduction::mean && x.rows() > 0) kl = scale(kl, 1.0 / static_cast<double>(x.rows()));
    return add(ce, scale(kl, c));
}

}  // namespace rcs
