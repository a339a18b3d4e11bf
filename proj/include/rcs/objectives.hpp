#pragma once

// Selection objectives over a frozen snapshot. Selection coordinates are the
// whole parameter vector or, with last_layer set, only the projection head;
// the remaining coordinates stay at the snapshot values. Training-loss
// gradients use sum reduction and the shortened selection attack.
//
// AclObjective never sees labels: selection is label-free.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "rcs/divergence.hpp"
#include "rcs/losses.hpp"
#include "rcs/selection.hpp"

namespace rcs {

/// A model whose coordinates inside `view` are replaced on demand.
class ParameterSlice {
public:
    ParameterSlice(const ModelSnapshot& snapshot, bool last_layer)
        : base_(snapshot), full_(snapshot.parameters) {
        view_ = last_layer ? base_.last_layer_params() : base_.all_params();
    }

    const ParamView& view() const { return view_; }
    const Model& base() const { return base_; }

    std::vector<double> point() const {
        return {full_.begin() + static_cast<std::ptrdiff_t>(view_.offset),
                full_.begin() + static_cast<std::ptrdiff_t>(view_.offset + view_.size)};
    }

    Model at(std::span<const double> theta) const {
        if (theta.size() != view_.size)
            throw ShapeError("selection: expected " + std::to_string(view_.size) + " coordinates, got " +
                             std::to_string(theta.size()));
        Model m = base_;
        std::vector<double> full = full_;
        std::copy(theta.begin(), theta.end(), full.begin() + static_cast<std::ptrdiff_t>(view_.offset));
        m.set_parameters(full);
        return m;
    }

    std::vector<double> restrict(const std::vector<double>& full_gradient) const {
        const auto s = view_.of(std::span<const double>(full_gradient));
        return {s.begin(), s.end()};
    }

private:
    Model base_;
    std::vector<double> full_;
    ParamView view_;
};

/// Settings shared by every selection objective.
struct SelectionSettings {
    bool last_layer = true;
    AttackConfig attack;  // shortened training attack used inside q_m
    RdSettings rd;        // validation attack and distance for q_U
    std::uint64_t seed = 0;
};

/// G(S) = -L_RD(U; theta - eta * sum q_m) with q_m from the ACL loss.
class AclObjective {
public:
    AclObjective(const ModelSnapshot& snapshot, const Tensor& features, ValidationSet validation,
                 SelectionSettings settings, double temperature, double omega, double strength)
        : slice_(snapshot, settings.last_layer), features_(&features), validation_(std::move(validation)),
          settings_(std::move(settings)), temperature_(temperature), omega_(omega), strength_(strength) {
        validation_.validate();
    }

    std::vector<double> base_point() const { return slice_.point(); }

    /// Every batch uses the same augmentation and attack streams, so equal
    /// batches give equal gradients.
    std::vector<double> batch_gradient(std::span<const double> theta, const Minibatch& batch) const {
        const Model m = slice_.at(theta);
        const Tensor x = features_->gather_rows(batch.indices);
        const AugmentedBatch views = augment(x, strength_, derive_seed(settings_.seed, {1}));
        Tape tape;
        const BoundModel bound = m.bind(tape);
        tape.backward(acl_loss(bound, views, omega_, settings_.attack, temperature_, derive_seed(settings_.seed, {2}),
                               Reduction::sum));
        return slice_.restrict(bound.gradient());
    }

    std::vector<double> rd_gradient(std::span<const double> theta) const {
        return slice_.restrict(rd_set(validation_, slice_.at(theta), settings_.rd, true).gradient);
    }

    double rd_value(std::span<const double> theta) const { return rd_set(validation_, slice_.at(theta), settings_.rd).value; }

    const ParameterSlice& slice() const { return slice_; }

private:
    ParameterSlice slice_;
    const Tensor* features_;
    ValidationSet validation_;
    SelectionSettings settings_;
    double temperature_, omega_, strength_;
};

enum class SupervisedMethod { standard, sat, trades };

/// Same set function with q_m from a supervised loss. The validation signal stays label-free.
class SupervisedObjective {
public:
    SupervisedObjective(const ModelSnapshot& snapshot, const Tensor& features, const std::vector<std::size_t>& labels,
                        ValidationSet validation, SelectionSettings settings, SupervisedMethod method, double tradeoff)
        : slice_(snapshot, settings.last_layer), features_(&features), labels_(&labels),
          validation_(std::move(validation)), settings_(std::move(settings)), method_(method), tradeoff_(tradeoff) {
        validation_.validate();
        if (labels.size() != features.rows()) throw ShapeError("supervised selection: one label per point required");
    }

    std::vector<double> base_point() const { return slice_.point(); }

    std::vector<double> batch_gradient(std::span<const double> theta, const Minibatch& batch) const {
        const Model m = slice_.at(theta);
        const Tensor x = features_->gather_rows(batch.indices);
        std::vector<std::size_t> y;
        y.reserve(batch.indices.size());
        for (std::size_t i : batch.indices) y.push_back((*labels_)[i]);
        Tape tape;
        const BoundModel bound = m.bind(tape);
        tape.backward(supervised_loss(bound, x, y, method_, tradeoff_, settings_.attack, derive_seed(settings_.seed, {2}),
                                      Reduction::sum));
        return slice_.restrict(bound.gradient());
    }

    std::vector<double> rd_gradient(std::span<const double> theta) const {
        return slice_.restrict(rd_set(validation_, slice_.at(theta), settings_.rd, true).gradient);
    }

    double rd_value(std::span<const double> theta) const { return rd_set(validation_, slice_.at(theta), settings_.rd).value; }

    static Var supervised_loss(const BoundModel& model, const Tensor& x, const std::vector<std::size_t>& y,
                               SupervisedMethod method, double tradeoff, const AttackConfig& attack, std::uint64_t seed,
                               Reduction reduction) {
        switch (method) {
            case SupervisedMethod::sat: return sat_loss(model, x, y, attack, seed, reduction);
            case SupervisedMethod::trades: {
                AttackConfig kl_attack = attack;
                kl_attack.random_start = true;  // the KL objective has zero gradient at x itself
                return trades_loss(model, x, y, tradeoff, kl_attack, seed, reduction);
            }
            case SupervisedMethod::standard: break;
        }
        return cross_entropy(model.forward(model.tape().constant(x), Branch::natural), y, reduction);
    }

private:
    ParameterSlice slice_;
    const Tensor* features_;
    const std::vector<std::size_t>* labels_;
    ValidationSet validation_;
    SelectionSettings settings_;
    SupervisedMethod method_;
    double tradeoff_;
};

static_assert(SelectionObjective<AclObjective>);
static_assert(SelectionObjective<SupervisedObjective>);

}  // namespace rcs
