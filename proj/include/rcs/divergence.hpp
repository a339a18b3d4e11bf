#pragma once

// Representational divergence: l_RD(x) = d(h(x'), h(x)) with x' the PGD
// maximizer of the same distance inside the budget ball, and
// L_RD(U) = sum over U of l_RD. The gradient with respect to the parameters
// treats x' as fixed.

#include <cstdint>
#include <string>
#include <vector>

#include "rcs/attack.hpp"
#include "rcs/distance.hpp"
#include "rcs/model.hpp"

namespace rcs {

struct ValidationSet {
    Tensor points;                         // (M, d)
    std::vector<std::uint64_t> point_ids;  // index of each row in the source dataset
    std::string provenance;

    std::size_t size() const { return points.rank() == 2 ? points.rows() : 0; }

    void validate() const {
        if (size() == 0) throw ConfigError("validation set is empty");
        if (point_ids.size() != size()) throw ShapeError("validation set: one id per point required");
    }

    static ValidationSet from_points(Tensor points, std::string provenance = "explicit") {
        std::vector<std::uint64_t> ids(points.rank() == 2 ? points.rows() : 0);
        for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = i;
        return ValidationSet{std::move(points), std::move(ids), std::move(provenance)};
    }
};

struct RdSettings {
    AttackConfig attack;
    DistanceKind distance;
    Branch branch = Branch::adversarial;
    std::uint64_t seed = 0;
};

struct RdResult {
    double value = 0.0;
    std::vector<double> gradient;  // over all parameters; empty unless requested
};

/// L_RD over U. Row r starts its attack from derive_seed(seed, {point_ids[r]}),
/// so the value of a point does not depend on which other points share the call.
inline RdResult rd_set(const ValidationSet& u, const Model& model, const RdSettings& settings, bool with_gradient = false) {
    u.validate();
    settings.distance.validate();
    const Tensor adv = pgd_rd(u.points, settings.attack, model, settings.distance, settings.seed, u.point_ids, settings.branch);
    Tape tape;
    const BoundModel bound = model.bind(tape, with_gradient);
    Var nat = bound.forward(tape.constant(u.points), settings.branch);
    Var adv_out = bound.forward(tape.constant(adv), settings.branch);
    Var d = distance(adv_out, nat, settings.distance);
    RdResult result{d.value().item(), {}};
    if (with_gradient) {
        tape.backward(d);
        result.gradient = bound.gradient();
    }
    return result;
}

/// l_RD of a single point x of shape (d) or (1, d).
inline double rd_point(const Tensor& x, const Model& model, const RdSettings& settings, std::uint64_t point_id = 0) {
    Tensor row = x.rank() == 1 ? Tensor({1, x.size()}, x.data()) : x;
    if (row.rows() != 1) throw ShapeError("rd_point: expected one point, got " + shape_string(x.shape()));
    return rd_set(ValidationSet{row, {point_id}, "point"}, model, settings).value;
}

}  // namespace rcs
