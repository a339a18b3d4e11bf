#pragma once

// MLP feature extractor f and projection head g, composed as h = g(f(x)).
//
// Encoder: input_dim -> hidden[0] -> ... -> hidden[L-1] -> embedding_dim.
// Every hidden layer is linear, optional per-feature normalization, ReLU.
// The embedding layer is linear only.
// Head (head_layers = 1): embedding_dim -> projection_dim, linear.
// Head (head_layers = 2): embedding_dim -> embedding_dim, ReLU, -> projection_dim.
//
// Parameters are laid out encoder first, then head; each layer stores its
// weight (in x out, row-major) followed by its bias. Weights start from
// U(-1/sqrt(fan_in), 1/sqrt(fan_in)) drawn in that order; biases start at zero.

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "rcs/autodiff.hpp"
#include "rcs/binary_io.hpp"
#include "rcs/error.hpp"
#include "rcs/random.hpp"
#include "rcs/tensor.hpp"

namespace rcs {

enum class NormMode : std::uint32_t { none = 0, per_feature = 1, dual_per_feature = 2 };

/// Which normalization statistics a forward pass uses (only matters for dual_per_feature).
enum class Branch : std::uint32_t { natural = 0, adversarial = 1 };

struct EncoderConfig {
    std::size_t input_dim = 16;
    std::vector<std::size_t> hidden{64};
    std::size_t embedding_dim = 16;
    std::size_t projection_dim = 8;
    std::size_t head_layers = 1;
    NormMode norm = NormMode::none;
    std::uint64_t seed = 0;

    void validate() const {
        if (input_dim == 0 || embedding_dim == 0 || projection_dim == 0)
            throw ConfigError("model: input, embedding and projection dimensions must be >= 1");
        if (hidden.empty()) throw ConfigError("model: hidden layer list must be non-empty");
        for (std::size_t w : hidden)
            if (w == 0) throw ConfigError("model: hidden widths must be >= 1");
        if (head_layers != 1 && head_layers != 2) throw ConfigError("model: head_layers must be 1 or 2");
    }

    bool operator==(const EncoderConfig&) const = default;
};

/// Contiguous range of the flat parameter vector.
struct ParamView {
    std::size_t offset = 0;
    std::size_t size = 0;

    std::span<const double> of(std::span<const double> flat) const { return flat.subspan(offset, size); }
    std::span<double> of(std::span<double> flat) const { return flat.subspan(offset, size); }
};

struct DenseLayer {
    Tensor weight;  // (in, out)
    Tensor bias;    // (out)
};

struct RunningStats {
    std::vector<double> mean;
    std::vector<double> var;

    bool operator==(const RunningStats&) const = default;
};

/// Frozen copy of all parameters and normalization statistics.
struct ModelSnapshot {
    EncoderConfig config;
    std::vector<double> parameters;
    std::vector<RunningStats> stats[2];
};

class Model;

/// Model parameters registered on a tape for one forward pass.
class BoundModel {
public:
    Var embed(Var x, Branch branch = Branch::natural) const;
    Var project(Var z) const;
    Var forward(Var x, Branch branch = Branch::natural) const { return project(embed(x, branch)); }

    Tape& tape() const { return *tape_; }
    const Model& model() const { return *model_; }

    /// Flat gradient accumulated on the parameter leaves.
    std::vector<double> gradient() const;

private:
    friend class Model;
    BoundModel(const Model* model, Tape* tape) : model_(model), tape_(tape) {}

    Var dense(std::size_t layer, Var x) const;

    const Model* model_;
    Tape* tape_;
    std::vector<Var> weights_;
    std::vector<Var> biases_;
};

class Model {
public:
    static constexpr double kNormEpsilon = 1e-5;

    explicit Model(EncoderConfig config) : config_(std::move(config)) {
        config_.validate();
        build_layers();
        Rng rng(config_.seed);
        for (auto& layer : layers_) {
            const double bound = 1.0 / std::sqrt(static_cast<double>(layer.weight.shape()[0]));
            for (double& w : layer.weight.values()) w = rng.uniform(-bound, bound);
        }
    }

    explicit Model(const ModelSnapshot& snapshot) : config_(snapshot.config) {
        config_.validate();
        build_layers();
        restore(snapshot);
    }

    const EncoderConfig& config() const { return config_; }

    std::size_t encoder_layer_count() const { return config_.hidden.size() + 1; }
    std::size_t layer_count() const { return layers_.size(); }
    const DenseLayer& layer(std::size_t i) const { return layers_.at(i); }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const auto& l : layers_) n += l.weight.size() + l.bias.size();
        return n;
    }

    std::size_t head_parameter_count() const {
        std::size_t n = 0;
        for (std::size_t i = encoder_layer_count(); i < layers_.size(); ++i) n += layers_[i].weight.size() + layers_[i].bias.size();
        return n;
    }

    std::size_t encoder_parameter_count() const { return parameter_count() - head_parameter_count(); }

    ParamView all_params() const { return {0, parameter_count()}; }

    /// Coordinates of the projection head g within the flat parameter vector.
    ParamView last_layer_params() const { return {encoder_parameter_count(), head_parameter_count()}; }

    std::vector<double> parameters() const {
        std::vector<double> flat;
        flat.reserve(parameter_count());
        for (const auto& l : layers_) {
            flat.insert(flat.end(), l.weight.values().begin(), l.weight.values().end());
            flat.insert(flat.end(), l.bias.values().begin(), l.bias.values().end());
        }
        return flat;
    }

    void set_parameters(std::span<const double> flat) {
        if (flat.size() != parameter_count())
            throw ShapeError("set_parameters: expected " + std::to_string(parameter_count()) + " values, got " +
                             std::to_string(flat.size()));
        std::size_t k = 0;
        for (auto& l : layers_) {
            for (double& w : l.weight.values()) w = flat[k++];
            for (double& b : l.bias.values()) b = flat[k++];
        }
    }

    ModelSnapshot snapshot() const { return ModelSnapshot{config_, parameters(), {stats_[0], stats_[1]}}; }

    void restore(const ModelSnapshot& snapshot) {
        if (!(snapshot.config == config_)) throw ConfigError("restore: snapshot was taken from a differently configured model");
        set_parameters(snapshot.parameters);
        stats_[0] = snapshot.stats[0];
        stats_[1] = snapshot.stats[1];
    }

    const std::vector<RunningStats>& statistics(Branch branch) const { return stats_[stat_set(branch)]; }

    /// Statistics set used for a branch: dual mode keeps one per branch.
    std::size_t stat_set(Branch branch) const {
        return config_.norm == NormMode::dual_per_feature ? static_cast<std::size_t>(branch) : 0;
    }

    /// Moves running statistics of the given branch toward the batch statistics of x.
    void update_statistics(const Tensor& x, Branch branch, double momentum = 0.1) {
        if (config_.norm == NormMode::none || x.rows() == 0) return;
        auto& stats = stats_[stat_set(branch)];
        Tensor act = x;
        for (std::size_t l = 0; l < config_.hidden.size(); ++l) {
            Tensor pre = affine(layers_[l], act);
            const std::size_t n = pre.rows(), w = pre.cols();
            for (std::size_t j = 0; j < w; ++j) {
                double m = 0.0;
                for (std::size_t i = 0; i < n; ++i) m += pre(i, j);
                m /= static_cast<double>(n);
                double v = 0.0;
                for (std::size_t i = 0; i < n; ++i) v += (pre(i, j) - m) * (pre(i, j) - m);
                v /= static_cast<double>(n);
                stats[l].mean[j] = (1.0 - momentum) * stats[l].mean[j] + momentum * m;
                stats[l].var[j] = (1.0 - momentum) * stats[l].var[j] + momentum * v;
            }
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < w; ++j) {
                    const double z = (pre(i, j) - stats[l].mean[j]) / std::sqrt(stats[l].var[j] + kNormEpsilon);
                    pre(i, j) = z > 0.0 ? z : 0.0;
                }
            act = std::move(pre);
        }
    }

    /// Registers parameters on the tape. Untracked binding treats them as constants.
    BoundModel bind(Tape& tape, bool track_gradients = true) const {
        BoundModel bound(this, &tape);
        for (const auto& l : layers_) {
            bound.weights_.push_back(track_gradients ? tape.leaf(l.weight) : tape.constant(l.weight));
            bound.biases_.push_back(track_gradients ? tape.leaf(l.bias) : tape.constant(l.bias));
        }
        return bound;
    }

    /// h(x) without gradient tracking.
    Tensor forward(const Tensor& x, Branch branch = Branch::natural) const {
        Tape tape;
        const BoundModel b = bind(tape, false);
        return b.forward(tape.constant(x), branch).value();
    }

    /// f(x) without gradient tracking.
    Tensor embed(const Tensor& x, Branch branch = Branch::natural) const {
        Tape tape;
        const BoundModel b = bind(tape, false);
        return b.embed(tape.constant(x), branch).value();
    }

    void save(const std::string& path) const;
    static Model load(const std::string& path);

private:
    void build_layers() {
        std::vector<std::size_t> dims{config_.input_dim};
        dims.insert(dims.end(), config_.hidden.begin(), config_.hidden.end());
        dims.push_back(config_.embedding_dim);
        if (config_.head_layers == 2) dims.push_back(config_.embedding_dim);
        dims.push_back(config_.projection_dim);
        layers_.clear();
        for (std::size_t i = 0; i + 1 < dims.size(); ++i)
            layers_.push_back(DenseLayer{Tensor::zeros({dims[i], dims[i + 1]}), Tensor::zeros({dims[i + 1]})});
        for (auto& set : stats_) {
            set.clear();
            for (std::size_t w : config_.hidden) set.push_back(RunningStats{std::vector<double>(w, 0.0), std::vector<double>(w, 1.0)});
        }
    }

    static Tensor affine(const DenseLayer& layer, const Tensor& x) {
        const std::size_t n = x.rows(), in = layer.weight.shape()[0], out = layer.weight.shape()[1];
        if (x.cols() != in) throw ShapeError("model: input of shape " + shape_string(x.shape()) + " for layer with fan-in " + std::to_string(in));
        Tensor y = Tensor::zeros({n, out});
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < out; ++j) y(i, j) = layer.bias[j];
            for (std::size_t p = 0; p < in; ++p) {
                const double xv = x(i, p);
                for (std::size_t j = 0; j < out; ++j) y(i, j) += xv * layer.weight(p, j);
            }
        }
        return y;
    }

    friend class BoundModel;

    EncoderConfig config_;
    std::vector<DenseLayer> layers_;
    std::vector<RunningStats> stats_[2];
};

inline Var BoundModel::dense(std::size_t layer, Var x) const {
    const Shape& s = x.shape();
    const std::size_t fan_in = model_->layers_[layer].weight.shape()[0];
    if (s.size() != 2 || s[1] != fan_in)
        throw ShapeError("model: input of shape " + shape_string(s) + " for layer with fan-in " + std::to_string(fan_in));
    return add(matmul(x, weights_[layer]), biases_[layer]);
}

inline Var BoundModel::embed(Var x, Branch branch) const {
    const auto& cfg = model_->config_;
    Var act = x;
    for (std::size_t l = 0; l < cfg.hidden.size(); ++l) {
        Var pre = dense(l, act);
        if (cfg.norm != NormMode::none) {
            const RunningStats& st = model_->stats_[model_->stat_set(branch)][l];
            std::vector<double> inv(st.var.size());
            for (std::size_t j = 0; j < inv.size(); ++j) inv[j] = 1.0 / std::sqrt(st.var[j] + Model::kNormEpsilon);
            pre = mul(sub(pre, tape_->constant(Tensor::vector(st.mean))), tape_->constant(Tensor::vector(std::move(inv))));
        }
        act = relu(pre);
    }
    return dense(cfg.hidden.size(), act);
}

inline Var BoundModel::project(Var z) const {
    const std::size_t first = model_->encoder_layer_count();
    Var v = dense(first, z);
    for (std::size_t l = first + 1; l < model_->layers_.size(); ++l) v = dense(l, relu(v));
    return v;
}

inline std::vector<double> BoundModel::gradient() const {
    std::vector<double> flat;
    flat.reserve(model_->parameter_count());
    for (std::size_t l = 0; l < weights_.size(); ++l) {
        const Tensor gw = tape_->grad(weights_[l]);
        const Tensor gb = tape_->grad(biases_[l]);
        flat.insert(flat.end(), gw.values().begin(), gw.values().end());
        flat.insert(flat.end(), gb.values().begin(), gb.values().end());
    }
    return flat;
}

// ---------------------------------------------------------------------------
// "RCSM" checkpoint
//   magic "RCSM", u32 version (1)
//   config: u32 input_dim, u32 hidden_count, u32 hidden[hidden_count],
//           u32 embedding_dim, u32 projection_dim, u32 head_layers,
//           u32 norm_mode, u64 seed
//   u64 parameter_count, f32 parameters[parameter_count] (declaration order)
//   u64 stats_count, f32 stats[stats_count]: for branch in {natural, adversarial},
//       for each hidden layer, mean[width] then var[width]
// All integers and floats little-endian.
// ---------------------------------------------------------------------------

inline constexpr std::uint32_t kCheckpointVersion = 1;

inline void write_encoder_config(io::Writer& w, const EncoderConfig& c) {
    w.u32(static_cast<std::uint32_t>(c.input_dim));
    w.u32(static_cast<std::uint32_t>(c.hidden.size()));
    for (std::size_t h : c.hidden) w.u32(static_cast<std::uint32_t>(h));
    w.u32(static_cast<std::uint32_t>(c.embedding_dim));
    w.u32(static_cast<std::uint32_t>(c.projection_dim));
    w.u32(static_cast<std::uint32_t>(c.head_layers));
    w.u32(static_cast<std::uint32_t>(c.norm));
    w.u64(c.seed);
}

inline EncoderConfig read_encoder_config(io::Reader& r) {
    EncoderConfig c;
    c.input_dim = r.u32();
    const std::uint32_t n_hidden = r.u32();
    if (n_hidden > 1024) throw IoError(r.name() + ": implausible hidden layer count");
    c.hidden.resize(n_hidden);
    for (auto& h : c.hidden) h = r.u32();
    c.embedding_dim = r.u32();
    c.projection_dim = r.u32();
    c.head_layers = r.u32();
    const std::uint32_t norm = r.u32();
    if (norm > 2) throw IoError(r.name() + ": unknown normalization mode " + std::to_string(norm));
    c.norm = static_cast<NormMode>(norm);
    c.seed = r.u64();
    return c;
}

inline void Model::save(const std::string& path) const {
    io::Writer w;
    w.bytes("RCSM", 4);
    w.u32(kCheckpointVersion);
    write_encoder_config(w, config_);
    const auto params = parameters();
    w.u64(params.size());
    for (double p : params) w.f32(p);
    std::uint64_t stats_count = 0;
    for (const auto& set : stats_)
        for (const auto& s : set) stats_count += s.mean.size() + s.var.size();
    w.u64(stats_count);
    for (const auto& set : stats_)
        for (const auto& s : set) {
            for (double m : s.mean) w.f32(m);
            for (double v : s.var) w.f32(v);
        }
    w.save(path);
}

inline Model Model::load(const std::string& path) {
    auto r = io::Reader::open(path);
    r.expect_magic("RCSM");
    const std::uint32_t version = r.u32();
    if (version != kCheckpointVersion) throw IoError(path + ": unsupported checkpoint version " + std::to_string(version));
    EncoderConfig cfg = read_encoder_config(r);
    try {
        cfg.validate();
    } catch (const ConfigError& e) {
        throw IoError(path + ": " + e.what());
    }
    Model model(cfg);
    const std::uint64_t n = r.u64();
    if (n != model.parameter_count()) throw IoError(path + ": parameter count does not match the stored configuration");
    std::vector<double> params(n);
    for (auto& p : params) p = r.f32();
    model.set_parameters(params);
    const std::uint64_t stats_count = r.u64();
    std::uint64_t expected = 0;
    for (const auto& set : model.stats_)
        for (const auto& s : set) expected += s.mean.size() + s.var.size();
    if (stats_count != expected) throw IoError(path + ": statistics block does not match the stored configuration");
    for (auto& set : model.stats_)
        for (auto& s : set) {
            for (double& m : s.mean) m = r.f32();
            for (double& v : s.var) v = r.f32();
        }
    if (!r.at_end()) throw IoError(path + ": trailing bytes after checkpoint");
    return model;
}

}  // namespace rcs
