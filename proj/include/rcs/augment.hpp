#pragma once

// Two-view augmentation for vector data.
//
// Each view of a point x is  tau(x) = scale * (mask . x) + noise  with
//   scale ~ U[1 - 0.2 s, 1 + 0.2 s]       (one draw per view)
//   mask_c = 0 with probability 0.1 s     (per coordinate)
//   noise_c ~ N(0, (0.1 s)^2)              (per coordinate)
// where s in [0, 1] is the augmentation strength. Draw order: view i of every
// point, then view j of every point; per view the scale, then for each
// coordinate a dropout uniform followed by a noise normal.

#include <cstdint>
#include <vector>

#include "rcs/error.hpp"
#include "rcs/random.hpp"
#include "rcs/tensor.hpp"

namespace rcs {

/// The augmented minibatch B': rows [0, pairs) hold view i, rows [pairs, 2 pairs) view j.
struct AugmentedBatch {
    Tensor views;
    std::size_t pairs = 0;
    double strength = 0.0;

    std::size_t source(std::size_t row) const { return row % pairs; }
    std::size_t partner(std::size_t row) const { return row < pairs ? row + pairs : row - pairs; }

    Tensor view_i() const { return views.rows_slice(0, pairs); }
    Tensor view_j() const { return views.rows_slice(pairs, 2 * pairs); }

    static AugmentedBatch from_views(const Tensor& vi, const Tensor& vj, double strength = 0.0) {
        if (vi.shape() != vj.shape() || vi.rank() != 2)
            throw ShapeError("augmented batch: views of shape " + shape_string(vi.shape()) + " and " + shape_string(vj.shape()));
        std::vector<double> rows(vi.values().begin(), vi.values().end());
        rows.insert(rows.end(), vj.values().begin(), vj.values().end());
        return AugmentedBatch{Tensor({2 * vi.rows(), vi.cols()}, std::move(rows)), vi.rows(), strength};
    }
};

inline AugmentedBatch augment(const Tensor& batch, double strength, std::uint64_t seed) {
    if (strength < 0.0 || strength > 1.0) throw ConfigError("augment: strength must lie in [0, 1]");
    if (batch.rank() != 2) throw ShapeError("augment: expected a (n, d) batch, got " + shape_string(batch.shape()));
    const std::size_t n = batch.rows(), d = batch.cols();
    Rng rng(seed);
    std::vector<double> out(2 * n * d);
    for (std::size_t v = 0; v < 2; ++v)
        for (std::size_t k = 0; k < n; ++k) {
            const double scale = rng.uniform(1.0 - 0.2 * strength, 1.0 + 0.2 * strength);
            for (std::size_t c = 0; c < d; ++c) {
                const bool dropped = rng.uniform() < 0.1 * strength;
                const double noise = 0.1 * strength * rng.normal();
                out[(v * n + k) * d + c] = scale * (dropped ? 0.0 : batch(k, c)) + noise;
            }
        }
    return AugmentedBatch{Tensor({2 * n, d}, std::move(out)), n, strength};
}

}  // namespace rcs
