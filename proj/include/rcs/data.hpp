#pragma once

// Synthetic Gaussian-mixture datasets and the "RCSD" file format:
//   "RCSD", version u32, n u64, d u32, C u32 (0 = unlabeled),
//   n*d f32 features (row-major), then n u32 labels when C > 0.
// All integers and floats are little-endian.

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "rcs/binary_io.hpp"
#include "rcs/divergence.hpp"
#include "rcs/error.hpp"
#include "rcs/random.hpp"
#include "rcs/tensor.hpp"

namespace rcs {

struct Dataset {
    Tensor features;                  // (n, d)
    std::vector<std::size_t> labels;  // empty when unlabeled
    std::size_t classes = 0;

    std::size_t size() const { return features.rank() == 2 ? features.rows() : 0; }
    std::size_t dim() const { return features.rank() == 2 ? features.cols() : 0; }
    bool labeled() const { return classes > 0; }

    void validate() const {
        if (features.rank() != 2) throw ShapeError("dataset: features must be (n, d)");
        if (labeled() && labels.size() != size()) throw ShapeError("dataset: one label per point required");
        if (!labeled() && !labels.empty()) throw ShapeError("dataset: labels present but class count is 0");
        for (std::size_t y : labels)
            if (y >= classes) throw ConfigError("dataset: label " + std::to_string(y) + " out of range");
    }

    Dataset subset(std::span<const std::size_t> rows) const {
        Dataset out{features.gather_rows(rows), {}, classes};
        for (std::size_t r : rows)
            if (labeled()) out.labels.push_back(labels.at(r));
        return out;
    }

    bool operator==(const Dataset&) const = default;
};

/// Class c has mean m_c ~ N(0, separation^2 I) and points m_c + N(0, noise^2 I).
/// Labels are i % C over the points, then shuffled, so classes are balanced
/// whenever C divides n.
struct SyntheticSpec {
    std::size_t n = 512;
    std::size_t dim = 16;
    std::size_t classes = 4;
    double separation = 3.0;
    double noise = 1.0;
    bool write_labels = true;
    std::uint64_t seed = 0;

    void validate() const {
        if (n == 0 || dim == 0 || classes == 0) throw ConfigError("synthetic data: n, d and C must be >= 1");
        if (!(separation >= 0.0) || !(noise >= 0.0)) throw ConfigError("synthetic data: scales must be non-negative");
    }
};

inline float to_f32(double v) { return static_cast<float>(v); }

/// Class means of the mixture (C x d), rounded to f32.
inline Tensor class_means(const SyntheticSpec& spec) {
    spec.validate();
    Rng rng(derive_seed(spec.seed, {1}));
    std::vector<double> means(spec.classes * spec.dim);
    for (double& m : means) m = to_f32(spec.separation * rng.normal());
    return Tensor({spec.classes, spec.dim}, std::move(means));
}

/// Features are stored rounded to f32 so the in-memory data equals the file contents.
inline Dataset generate_synthetic(const SyntheticSpec& spec) {
    const Tensor means = class_means(spec);
    std::vector<std::size_t> labels(spec.n);
    for (std::size_t i = 0; i < spec.n; ++i) labels[i] = i % spec.classes;
    Rng order(derive_seed(spec.seed, {2}));
    order.shuffle(std::span<std::size_t>(labels));
    Rng noise(derive_seed(spec.seed, {3}));
    std::vector<double> x(spec.n * spec.dim);
    for (std::size_t i = 0; i < spec.n; ++i)
        for (std::size_t c = 0; c < spec.dim; ++c)
            x[i * spec.dim + c] = to_f32(means(labels[i], c) + spec.noise * noise.normal());
    Dataset out{Tensor({spec.n, spec.dim}, std::move(x)), std::move(labels), spec.classes};
    if (!spec.write_labels) {
        out.labels.clear();
        out.classes = 0;
    }
    return out;
}

inline constexpr std::uint32_t kDatasetVersion = 1;

inline void save_dataset(const Dataset& data, const std::string& path) {
    data.validate();
    io::Writer w;
    w.bytes("RCSD", 4);
    w.u32(kDatasetVersion);
    w.u64(data.size());
    w.u32(static_cast<std::uint32_t>(data.dim()));
    w.u32(static_cast<std::uint32_t>(data.classes));
    for (double v : data.features.values()) w.f32(v);
    for (std::size_t y : data.labels) w.u32(static_cast<std::uint32_t>(y));
    w.save(path);
}

inline Dataset load_dataset(const std::string& path) {
    io::Reader r = io::Reader::open(path);
    r.expect_magic("RCSD");
    const std::uint32_t version = r.u32();
    if (version != kDatasetVersion) throw IoError(path + ": unsupported dataset version " + std::to_string(version));
    const std::uint64_t n = r.u64();
    const std::uint32_t d = r.u32();
    const std::uint32_t classes = r.u32();
    if (d == 0) throw IoError(path + ": dimension is 0");
    std::vector<double> x;
    x.reserve(static_cast<std::size_t>(n) * d);
    for (std::uint64_t i = 0; i < n * d; ++i) x.push_back(r.f32());
    Dataset out{Tensor({static_cast<std::size_t>(n), d}, std::move(x)), {}, classes};
    if (classes > 0)
        for (std::uint64_t i = 0; i < n; ++i) {
            const std::uint32_t y = r.u32();
            if (y >= classes) throw IoError(path + ": label " + std::to_string(y) + " out of range at row " + std::to_string(i));
            out.labels.push_back(y);
        }
    if (!r.at_end()) throw IoError(path + ": trailing bytes after dataset");
    return out;
}

/// Training rows and the held-out validation set U, split by a seeded permutation.
struct HoldoutSplit {
    Dataset train;
    std::vector<std::size_t> train_ids;  // source row of each training point
    ValidationSet validation;
    Dataset validation_data;             // U with labels, for analysis only
};

/// M = max(1, round(fraction * n)) points go to U; both sides keep source order.
inline HoldoutSplit holdout_split(const Dataset& data, double fraction, std::uint64_t seed) {
    data.validate();
    if (!(fraction > 0.0 && fraction < 1.0)) throw ConfigError("validation fraction must lie in (0, 1)");
    const std::size_t n = data.size();
    const std::size_t m = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n))));
    if (m >= n) throw ConfigError("validation split leaves no training data");
    Rng rng(seed);
    const auto perm = rng.permutation(n);
    std::vector<char> held(n, 0);
    for (std::size_t i = 0; i < m; ++i) held[perm[i]] = 1;
    std::vector<std::size_t> train_ids, val_ids;
    for (std::size_t i = 0; i < n; ++i) (held[i] ? val_ids : train_ids).push_back(i);
    HoldoutSplit out;
    out.train = data.subset(train_ids);
    out.train_ids = train_ids;
    out.validation_data = data.subset(val_ids);
    out.validation.points = out.validation_data.features;
    out.validation.point_ids.assign(val_ids.begin(), val_ids.end());
    out.validation.provenance = "held-out " + std::to_string(m) + " of " + std::to_string(n) + " points";
    return out;
}

}  // namespace rcs
