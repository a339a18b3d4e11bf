#pragma once

// Efficient pretraining: full-set warmup, then training on coresets that are
// reselected at every epoch e with e % I == 0 and e >= W. Epochs at or after W
// but before the first reselection still train on the full set. Selection
// always runs on a snapshot of the live model.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "rcs/analysis.hpp"
#include "rcs/config.hpp"
#include "rcs/data.hpp"
#include "rcs/divergence.hpp"
#include "rcs/losses.hpp"
#include "rcs/objectives.hpp"
#include "rcs/selection.hpp"

namespace rcs {

/// Independent random streams of a run, all derived from the run seed.
enum class Stream : std::uint64_t { init = 1, split, order, augment, attack, rd, select, select_rd, random };

inline std::uint64_t stream_seed(std::uint64_t seed, Stream s, std::uint64_t a = 0, std::uint64_t b = 0) {
    return derive_seed(seed, {static_cast<std::uint64_t>(s), a, b});
}

struct TrainSchedule {
    std::size_t epochs = 100;
    std::size_t warmup = 10;
    std::size_t interval = 20;
    double fraction = 0.1;
    double learning_rate = 0.1;
    LrSchedule schedule = LrSchedule::cosine;
    double momentum = 0.0;
    double selection_lr = 0.01;

    static TrainSchedule from(const ExperimentConfig& c) {
        return TrainSchedule{c.epochs, c.warmup(), c.interval, c.fraction, c.learning_rate, c.schedule, c.momentum, c.selection_lr};
    }

    void validate() const {
        if (warmup > epochs) throw ConfigError("schedule: warmup exceeds epochs");
        if (interval == 0) throw ConfigError("schedule: reselection interval must be >= 1");
        if (!(fraction > 0.0 && fraction <= 1.0)) throw ConfigError("schedule: subset fraction must lie in (0, 1]");
    }

    bool reselect(std::size_t e) const { return e % interval == 0 && e >= warmup; }

    /// First reselection epoch, or `epochs` when none fires.
    std::size_t first_reselection() const {
        for (std::size_t e = warmup; e < epochs; ++e)
            if (reselect(e)) return e;
        return epochs;
    }

    double lr_at(std::size_t e) const {
        if (schedule == LrSchedule::constant) return learning_rate;
        return 0.5 * learning_rate * (1.0 + std::cos(std::numbers::pi * static_cast<double>(e) / static_cast<double>(epochs)));
    }
};

struct EpochRecord {
    std::size_t epoch = 0;
    double loss_mean = 0.0;
    double rd = 0.0;  // L_RD(U) after the epoch, with the selection attack
    std::size_t grad_steps = 0;
    std::size_t selection_grad_evals = 0;
    bool reselected = false;
    std::optional<std::size_t> coreset_epoch;  // round whose coreset was trained on
    std::vector<std::size_t> consumed;         // batch ids in training order

    bool operator==(const EpochRecord&) const = default;
};

struct SelectionRound {
    std::size_t epoch = 0;
    CoresetResult result;
};

struct RunResult {
    Model model;
    MinibatchPartition partition;
    std::vector<EpochRecord> records;
    std::vector<SelectionRound> rounds;
    double wall_seconds = 0.0;
};

struct ExperimentData {
    Dataset full;
    HoldoutSplit split;
};

inline Dataset load_or_generate(const ExperimentConfig& cfg) {
    return cfg.data_path.empty() ? generate_synthetic(cfg.data) : load_dataset(cfg.data_path);
}

inline ExperimentData prepare_data(const ExperimentConfig& cfg) {
    Dataset full = load_or_generate(cfg);
    HoldoutSplit split = holdout_split(full, cfg.validation_fraction, stream_seed(cfg.seed, Stream::split));
    return ExperimentData{std::move(full), std::move(split)};
}

/// Initial model; both the run seed and model.seed enter the init stream.
inline Model initial_model(const ExperimentConfig& cfg, std::size_t input_dim) {
    EncoderConfig e = cfg.encoder(input_dim);
    e.seed = stream_seed(cfg.seed, Stream::init, cfg.model.seed);
    return Model(e);
}

/// Batches trained on per coreset epoch.
inline std::size_t coreset_budget(const ExperimentConfig& cfg, const MinibatchPartition& partition) {
    if (cfg.selection != SelectMethod::rcs || cfg.chunk == 0) return partition.budget(cfg.fraction);
    std::size_t total = 0;
    for (std::size_t start = 0; start < partition.batch_count(); start += cfg.chunk) {
        std::size_t points = 0;
        for (std::size_t b = start; b < std::min(partition.batch_count(), start + cfg.chunk); ++b)
            points += partition.batch(b).indices.size();
        total += MinibatchPartition::budget_for(cfg.fraction, points, partition.batch_size());
    }
    return total;
}

inline SupervisedMethod supervised_method(TrainMethod m) {
    switch (m) {
        case TrainMethod::sat: return SupervisedMethod::sat;
        case TrainMethod::trades: return SupervisedMethod::trades;
        case TrainMethod::standard: return SupervisedMethod::standard;
        default: throw ConfigError("not a supervised method");
    }
}

/// One selection round on a snapshot of `live`. The live model is not modified.
inline CoresetResult select_coreset(const ExperimentConfig& cfg, const Model& live, const Dataset& train,
                                    const ValidationSet& validation, const MinibatchPartition& partition, std::size_t round,
                                    double omega, double strength) {
    if (cfg.selection == SelectMethod::random) return random_select(partition, cfg.fraction, stream_seed(cfg.seed, Stream::random, round));
    if (cfg.selection != SelectMethod::rcs) throw ConfigError("select_coreset: selection method is 'full'");
    const ModelSnapshot snapshot = live.snapshot();
    SelectionSettings settings{cfg.last_layer, cfg.selection_attack(), cfg.rd_settings(stream_seed(cfg.seed, Stream::select_rd, round)),
                               stream_seed(cfg.seed, Stream::select, round)};
    auto run = [&](auto& objective) {
        return cfg.chunk == 0 ? rcs_greedy(objective, partition, cfg.fraction, cfg.selection_lr)
                              : chunked_select(objective, partition, cfg.fraction, cfg.selection_lr, cfg.chunk);
    };
    if (cfg.supervised()) {
        SupervisedObjective objective(snapshot, train.features, train.labels, validation, settings, supervised_method(cfg.method),
                                      cfg.trades_c);
        return run(objective);
    }
    AclObjective objective(snapshot, train.features, validation, settings, cfg.temperature, omega, strength);
    return run(objective);
}

/// Parameters and statistics rounded to the f32 precision of checkpoints.
inline void round_to_checkpoint_precision(Model& model) {
    ModelSnapshot s = model.snapshot();
    for (double& v : s.parameters) v = static_cast<float>(v);
    for (auto& set : s.stats)
        for (auto& st : set) {
            for (double& v : st.mean) v = static_cast<float>(v);
            for (double& v : st.var) v = static_cast<float>(v);
        }
    model.restore(s);
}

inline double epoch_rd(const ExperimentConfig& cfg, const Model& model, const ValidationSet& validation, std::size_t epoch) {
    return rd_set(validation, model, cfg.rd_settings(stream_seed(cfg.seed, Stream::rd, epoch))).value;
}

/// Runs the configured method. ACL variants never read labels.
inline RunResult pretrain(const ExperimentConfig& cfg, const Dataset& train, const ValidationSet& validation) {
    cfg.validate();
    train.validate();
    validation.validate();
    if (cfg.supervised()) {
        if (!train.labeled()) throw ConfigError("supervised training needs a labeled dataset");
        if (cfg.model.projection_dim != train.classes)
            throw ConfigError("supervised training needs model.projection_dim == number of classes (" + std::to_string(train.classes) + ")");
    }
    const auto t0 = std::chrono::steady_clock::now();
    const TrainSchedule schedule = TrainSchedule::from(cfg);
    schedule.validate();
    RunResult run{initial_model(cfg, train.dim()), MinibatchPartition::contiguous(train.size(), cfg.batch_size), {}, {}, 0.0};
    Model& model = run.model;
    const std::vector<double> zeros(model.parameter_count(), 0.0);
    std::vector<double> velocity = zeros;
    std::optional<SelectionRound> current;
    const SupervisedMethod sup = cfg.supervised() ? supervised_method(cfg.method) : SupervisedMethod::standard;

    for (std::size_t e = 0; e < cfg.epochs; ++e) {
        EpochRecord rec;
        rec.epoch = e;
        DynaclState state{cfg.augment_strength, cfg.omega};
        if (cfg.method == TrainMethod::dynacl) state = dynacl_schedule(e, cfg.epochs, cfg.dynacl_period, cfg.dynacl_rate);

        if (cfg.selection != SelectMethod::full && schedule.reselect(e)) {
            const std::vector<double> before = model.parameters();
            CoresetResult result;
            try {
                result = select_coreset(cfg, model, train, validation, run.partition, e, state.omega, state.mu);
            } catch (const Error& err) {
                throw Error("selection at epoch " + std::to_string(e) + " failed: " + err.what());
            }
            if (model.parameters() != before) throw Error("selection modified the live model");
            rec.reselected = true;
            rec.selection_grad_evals = result.grad_evals;
            current = SelectionRound{e, std::move(result)};
            run.rounds.push_back(*current);
        }

        std::vector<std::size_t> active;
        if (current) {
            active = current->result.selected;
            rec.coreset_epoch = current->epoch;
        } else {
            for (const auto& b : run.partition.batches()) active.push_back(b.id);
        }
        Rng order(stream_seed(cfg.seed, Stream::order, e));
        order.shuffle(std::span<std::size_t>(active));

        const double lr = schedule.lr_at(e);
        double loss_sum = 0.0;
        for (std::size_t s = 0; s < active.size(); ++s) {
            const Minibatch& batch = run.partition.batch(active[s]);
            const Tensor x = train.features.gather_rows(batch.indices);
            const std::uint64_t attack_seed = stream_seed(cfg.seed, Stream::attack, e, s);
            Tape tape;
            const BoundModel bound = model.bind(tape);
            Var loss;
            std::optional<Tensor> adversarial_inputs;
            if (cfg.supervised()) {
                std::vector<std::size_t> y;
                for (std::size_t i : batch.indices) y.push_back(train.labels[i]);
                model.update_statistics(x, Branch::natural);
                loss = SupervisedObjective::supervised_loss(bound, x, y, sup, cfg.trades_c, cfg.attack, attack_seed, Reduction::mean);
                adversarial_inputs = x;
            } else {
                const AugmentedBatch views = augment(x, state.mu, stream_seed(cfg.seed, Stream::augment, e, s));
                model.update_statistics(views.views, Branch::natural);
                AclTerms terms = acl_terms(bound, views, state.omega, cfg.attack, cfg.temperature, attack_seed, Reduction::mean);
                loss = terms.total;
                adversarial_inputs = terms.adversarial_batch.views;
            }
            tape.backward(loss);
            const double value = loss.value().item();
            if (!std::isfinite(value)) throw DomainError("training loss is not finite at epoch " + std::to_string(e));
            loss_sum += value;
            const std::vector<double> grad = bound.gradient();
            std::vector<double> params = model.parameters();
            for (std::size_t i = 0; i < params.size(); ++i) {
                velocity[i] = cfg.momentum * velocity[i] + grad[i];
                params[i] -= lr * velocity[i];
            }
            model.set_parameters(params);
            if (cfg.model.norm == NormMode::dual_per_feature) model.update_statistics(*adversarial_inputs, Branch::adversarial);
            rec.consumed.push_back(batch.id);
            ++rec.grad_steps;
        }
        rec.loss_mean = active.empty() ? 0.0 : loss_sum / static_cast<double>(active.size());
        if (e + 1 == cfg.epochs) round_to_checkpoint_precision(model);
        rec.rd = epoch_rd(cfg, model, validation, e);
        run.records.push_back(std::move(rec));
    }
    run.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return run;
}

inline RunResult pretrain_acl(const ExperimentConfig& cfg, const Dataset& train, const ValidationSet& validation) {
    if (cfg.supervised()) throw ConfigError("pretrain_acl: train.method must be acl or dynacl");
    return pretrain(cfg, train, validation);
}

inline RunResult pretrain_supervised(const ExperimentConfig& cfg, const Dataset& train, const ValidationSet& validation) {
    if (!cfg.supervised()) throw ConfigError("pretrain_supervised: train.method must be sat, trades or standard");
    return pretrain(cfg, train, validation);
}

// ---------------------------------------------------------------------------
// Step accounting
// ---------------------------------------------------------------------------

struct SpeedupReport {
    double wall_seconds = 0.0;
    std::size_t training_steps = 0;
    std::size_t selection_evals = 0;
    std::size_t actual_total = 0;
    std::size_t predicted_total = 0;
    std::size_t reselections = 0;
    std::vector<std::string> mismatches;  // one line per epoch whose counts differ

    bool matches() const { return mismatches.empty() && actual_total == predicted_total; }
};

/// Closed form: r0 full-set epochs with r0 the first reselection epoch,
/// then a coreset of b = floor(kN/beta) batches, plus ceil(N/beta) + b
/// evaluations per greedy reselection. With W % I == 0, r0 = W.
inline std::size_t predicted_grad_evals(std::size_t epochs, std::size_t first_reselection, std::size_t reselections,
                                        std::size_t batches, std::size_t budget, bool greedy) {
    return first_reselection * batches + (epochs - first_reselection) * budget + (greedy ? reselections * (batches + budget) : 0);
}

inline SpeedupReport speedup_report(const ExperimentConfig& cfg, const RunResult& run) {
    const TrainSchedule schedule = TrainSchedule::from(cfg);
    const std::size_t nb = run.partition.batch_count();
    const bool selecting = cfg.selection != SelectMethod::full;
    const bool greedy = cfg.selection == SelectMethod::rcs;
    const std::size_t budget = selecting ? coreset_budget(cfg, run.partition) : nb;
    const std::size_t r0 = selecting ? schedule.first_reselection() : cfg.epochs;
    SpeedupReport r;
    r.wall_seconds = run.wall_seconds;
    for (const auto& rec : run.records) {
        const bool expect_reselect = selecting && schedule.reselect(rec.epoch);
        const std::size_t steps = rec.epoch < r0 ? nb : budget;
        const std::size_t evals = expect_reselect && greedy ? nb + budget : 0;
        r.training_steps += rec.grad_steps;
        r.selection_evals += rec.selection_grad_evals;
        r.reselections += rec.reselected;
        if (rec.grad_steps != steps || rec.selection_grad_evals != evals || rec.reselected != expect_reselect)
            r.mismatches.push_back("epoch " + std::to_string(rec.epoch) + ": steps " + std::to_string(rec.grad_steps) + " vs " +
                                   std::to_string(steps) + ", selection evals " + std::to_string(rec.selection_grad_evals) + " vs " +
                                   std::to_string(evals));
    }
    r.actual_total = r.training_steps + r.selection_evals;
    std::size_t expected_reselections = 0;
    for (std::size_t e = 0; e < cfg.epochs; ++e) expected_reselections += selecting && schedule.reselect(e);
    r.predicted_total = predicted_grad_evals(cfg.epochs, r0, expected_reselections, nb, budget, greedy);
    return r;
}

/// Mean cross-entropy on PGD examples that maximize it.
inline double robust_loss(const Model& model, const Dataset& data, const AttackConfig& attack, std::uint64_t seed) {
    if (!data.labeled()) throw ConfigError("robust_loss: dataset has no labels");
    const Tensor adv = pgd_cross_entropy(data.features, data.labels, attack, model, seed);
    Tape tape;
    const BoundModel bound = model.bind(tape, false);
    return cross_entropy(bound.forward(tape.constant(adv), Branch::adversarial), data.labels, Reduction::mean).value().item();
}

// ---------------------------------------------------------------------------
// Run directory: config.snapshot, epochs.csv, coreset_<e>.csv, model_final.rcsm
// ---------------------------------------------------------------------------

inline std::string epochs_csv(const std::vector<EpochRecord>& records) {
    std::ostringstream out;
    out << "epoch,loss_mean,rd,grad_steps,selection_grad_evals,reselected,coreset_epoch\n";
    for (const auto& r : records)
        out << r.epoch << ',' << format_double(r.loss_mean) << ',' << format_double(r.rd) << ',' << r.grad_steps << ','
            << r.selection_grad_evals << ',' << (r.reselected ? 1 : 0) << ',' << (r.coreset_epoch ? std::to_string(*r.coreset_epoch) : "")
            << '\n';
    return out.str();
}

inline void write_run(const std::string& dir, const ExperimentConfig& cfg, const RunResult& run) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create " + dir + ": " + ec.message());
    write_text(dir + "/config.snapshot", serialize_config(cfg));
    write_text(dir + "/epochs.csv", epochs_csv(run.records));
    for (const auto& round : run.rounds) write_text(dir + "/coreset_" + std::to_string(round.epoch) + ".csv", coreset_csv(round.result));
    run.model.save(dir + "/model_final.rcsm");
}

struct LoggedEpoch {
    std::size_t epoch = 0;
    double rd = 0.0;
};

inline std::vector<LoggedEpoch> read_epochs_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    std::string line;
    std::getline(in, line);
    if (line.rfind("epoch,loss_mean,rd,", 0) != 0) throw IoError(path + ": unexpected header");
    std::vector<LoggedEpoch> out;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream row(line);
        std::string epoch, loss, rd;
        if (!std::getline(row, epoch, ',') || !std::getline(row, loss, ',') || !std::getline(row, rd, ','))
            throw IoError(path + ": malformed row '" + line + "'");
        out.push_back({std::stoul(epoch), std::stod(rd)});
    }
    return out;
}

/// Epochs that have a coreset_<e>.csv in the run directory, ascending.
inline std::vector<std::size_t> coreset_epochs(const std::string& dir) {
    std::vector<std::size_t> epochs;
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        const std::string name = entry.path().filename().string();
        if (name.rfind("coreset_", 0) == 0 && name.size() > 12 && name.substr(name.size() - 4) == ".csv")
            epochs.push_back(std::stoul(name.substr(8, name.size() - 12)));
    }
    std::sort(epochs.begin(), epochs.end());
    return epochs;
}

struct CoresetAnalysis {
    std::size_t epoch = 0;
    double mmd = 0.0;
    double imbalance = 0.0;
    bool missing_class = false;
};

struct RunAnalysis {
    std::vector<LoggedEpoch> rd_curve;
    double final_rd_logged = 0.0;
    double final_rd_recomputed = 0.0;
    std::vector<CoresetAnalysis> coresets;
    std::vector<std::size_t> frequency;  // per training point
};

/// Recomputes the final RD from the checkpoint and analyzes every coreset
/// against the training set. Labels are used here only.
inline RunAnalysis analyze_run(const std::string& dir) {
    const ExperimentConfig cfg = load_config(dir + "/config.snapshot");
    const ExperimentData data = prepare_data(cfg);
    const Dataset& train = data.split.train;
    const Model model = Model::load(dir + "/model_final.rcsm");
    RunAnalysis out;
    out.rd_curve = read_epochs_csv(dir + "/epochs.csv");
    if (out.rd_curve.empty()) throw IoError(dir + "/epochs.csv has no rows");
    out.final_rd_logged = out.rd_curve.back().rd;
    out.final_rd_recomputed = epoch_rd(cfg, model, data.split.validation, out.rd_curve.back().epoch);

    const MinibatchPartition partition = MinibatchPartition::contiguous(train.size(), cfg.batch_size);
    std::vector<CoresetResult> rounds;
    for (std::size_t e : coreset_epochs(dir)) {
        CoresetResult r = read_coreset_csv(dir + "/coreset_" + std::to_string(e) + ".csv");
        for (std::size_t id : r.selected)
            if (id >= partition.batch_count()) throw IoError("coreset_" + std::to_string(e) + ".csv: batch id out of range");
        r.partition_batches = partition.batch_count();
        r.partition_size = partition.source_size();
        const auto rows = coreset_rows(partition, r);
        CoresetAnalysis a{e, mmd(train.features.gather_rows(rows), train.features), 0.0, false};
        if (train.labeled()) {
            std::vector<std::size_t> labels;
            for (std::size_t i : rows) labels.push_back(train.labels[i]);
            const ImbalanceReport ir = imbalance_ratio(labels, train.classes);
            a.imbalance = ir.ratio;
            a.missing_class = ir.missing_class;
        }
        out.coresets.push_back(a);
        rounds.push_back(std::move(r));
    }
    out.frequency = selection_frequency(partition, rounds);
    return out;
}

}  // namespace rcs
