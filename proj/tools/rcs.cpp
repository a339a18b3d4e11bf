// rcs: command-line driver. Exit codes: 0 success, 1 usage error, 2 runtime error.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "rcs/rcs.hpp"

namespace {

using namespace rcs;

struct ConfigOptions {
    std::string path;
    std::vector<std::string> overrides;
    std::optional<std::uint64_t> seed;

    void attach(CLI::App* app) {
        app->add_option("--config", path, "key = value config file");
        app->add_option("--set", overrides, "override as key=value (repeatable)");
        app->add_option("--seed", seed, "run seed");
    }

    ExperimentConfig resolve() const {
        ExperimentConfig cfg = path.empty() ? ExperimentConfig{} : load_config(path);
        for (const auto& kv : overrides) {
            const auto eq = kv.find('=');
            if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
            set_config_value(cfg, detail::trim(kv.substr(0, eq)), kv.substr(eq + 1));
        }
        if (seed) cfg.seed = *seed;
        cfg.validate();
        return cfg;
    }
};

void emit(const std::string& path, const std::string& text) {
    if (path.empty() || path == "-") {
        std::cout << text;
        return;
    }
    write_text(path, text);
}

int cmd_gen(const SyntheticSpec& spec, const std::string& out) {
    save_dataset(generate_synthetic(spec), out);
    std::cout << "wrote " << out << " (" << spec.n << " x " << spec.dim << ", " << (spec.write_labels ? spec.classes : 0)
              << " classes)\n";
    return 0;
}

int cmd_pretrain(const ConfigOptions& opts, const std::string& out) {
    ExperimentConfig cfg = opts.resolve();
    if (!out.empty()) cfg.output_dir = out;
    const ExperimentData data = prepare_data(cfg);
    const RunResult run = pretrain(cfg, data.split.train, data.split.validation);
    write_run(cfg.output_dir, cfg, run);
    const SpeedupReport report = speedup_report(cfg, run);
    std::cout << "epochs " << run.records.size() << ", final rd " << format_double(run.records.back().rd) << "\n"
              << "gradient evaluations: actual " << report.actual_total << ", predicted " << report.predicted_total
              << " (training " << report.training_steps << ", selection " << report.selection_evals << ", reselections "
              << report.reselections << ")\n";
    for (const auto& m : report.mismatches) std::cerr << "accounting mismatch: " << m << "\n";
    return report.matches() ? 0 : 2;
}

Model model_for(const ExperimentConfig& cfg, const std::string& checkpoint, std::size_t dim) {
    return checkpoint.empty() ? initial_model(cfg, dim) : Model::load(checkpoint);
}

int cmd_select(const ConfigOptions& opts, const std::string& method, std::optional<double> k, const std::string& checkpoint,
               const std::string& out) {
    ExperimentConfig cfg = opts.resolve();
    if (k) cfg.fraction = *k;
    if (!method.empty()) set_config_value(cfg, "selection.method", method);
    cfg.validate();
    if (cfg.selection == SelectMethod::full) throw ConfigError("select: method must be rcs or random");
    const ExperimentData data = prepare_data(cfg);
    const Model model = model_for(cfg, checkpoint, data.split.train.dim());
    const auto partition = MinibatchPartition::contiguous(data.split.train.size(), cfg.batch_size);
    DynaclState state{cfg.augment_strength, cfg.omega};
    const CoresetResult result = select_coreset(cfg, model, data.split.train, data.split.validation, partition, 0, state.omega, state.mu);
    emit(out, coreset_csv(result));
    if (!out.empty() && out != "-")
        std::cout << "selected " << result.selected.size() << " of " << partition.batch_count() << " batches, "
                  << result.grad_evals << " gradient evaluations\n";
    return 0;
}

int cmd_oracle(const ConfigOptions& opts, std::optional<double> k, const std::string& checkpoint, std::uint64_t cap) {
    ExperimentConfig cfg = opts.resolve();
    if (k) cfg.fraction = *k;
    cfg.selection = SelectMethod::rcs;
    cfg.validate();
    const ExperimentData data = prepare_data(cfg);
    const Dataset& train = data.split.train;
    const Model model = model_for(cfg, checkpoint, train.dim());
    const auto partition = MinibatchPartition::contiguous(train.size(), cfg.batch_size);
    SelectionSettings settings{cfg.last_layer, cfg.selection_attack(), cfg.rd_settings(stream_seed(cfg.seed, Stream::select_rd, 0)),
                               stream_seed(cfg.seed, Stream::select, 0)};
    auto check = [&](auto& objective) {
        SubsetValues values(objective, partition, cfg.selection_lr);
        const OracleResult best = exhaustive_oracle(values, partition, cfg.fraction, cap);
        const CoresetResult greedy = rcs_greedy(objective, partition, cfg.fraction, cfg.selection_lr);
        const auto path = greedy_path_values(values, greedy);
        const auto gains = enumerate_marginal_gains(values, partition.batch_count(), partition.budget(cfg.fraction));
        const GuaranteeParams params = empirical_sigma(gains, partition.batch_size());
        const GuaranteeReport report = verify_guarantee(path, best.best_value, params, cfg.fraction, train.size(), partition.batch_size());
        std::cout << "batches " << partition.batch_count() << ", budget " << partition.budget(cfg.fraction) << ", subsets evaluated "
                  << best.evaluations << "\n"
                  << "sigma " << format_double(params.sigma) << ", gamma* " << format_double(report.gamma_star) << "\n"
                  << "G(greedy) = " << format_double(report.greedy_value) << "\n"
                  << "G* - (G* + kN sigma) exp(-gamma*) = " << format_double(report.bound) << "  (G* = " << format_double(best.best_value)
                  << ")\n"
                  << "proxy gains monotone: " << (report.proxy_monotone ? "yes" : "no") << " (min " << format_double(report.min_proxy_gain)
                  << ")" << (report.weak_bound ? ", bound is weak" : "") << "\n"
                  << (report.holds ? "PASS" : "FAIL") << "\n";
        return report.holds ? 0 : 2;
    };
    if (cfg.supervised()) {
        SupervisedObjective objective(model.snapshot(), train.features, train.labels, data.split.validation, settings,
                                      supervised_method(cfg.method), cfg.trades_c);
        return check(objective);
    }
    AclObjective objective(model.snapshot(), train.features, data.split.validation, settings, cfg.temperature, cfg.omega, cfg.augment_strength);
    return check(objective);
}

int cmd_analyze(const std::string& run_dir, const std::string& out_dir) {
    const RunAnalysis a = analyze_run(run_dir);
    const std::string dir = out_dir.empty() ? run_dir : out_dir;
    std::filesystem::create_directories(dir);
    std::string csv = "epoch,mmd,imbalance_ratio,missing_class\n";
    for (const auto& c : a.coresets)
        csv += std::to_string(c.epoch) + "," + format_double(c.mmd) + "," + format_double(c.imbalance) + "," + (c.missing_class ? "1" : "0") + "\n";
    write_text(dir + "/analysis.csv", csv);
    std::string freq = "point,count\n";
    for (std::size_t i = 0; i < a.frequency.size(); ++i) freq += std::to_string(i) + "," + std::to_string(a.frequency[i]) + "\n";
    write_text(dir + "/frequency.csv", freq);
    std::string rd = "epoch,rd\n";
    for (const auto& e : a.rd_curve) rd += std::to_string(e.epoch) + "," + format_double(e.rd) + "\n";
    write_text(dir + "/rd_curve.csv", rd);
    const double diff = std::abs(a.final_rd_logged - a.final_rd_recomputed);
    std::cout << "final rd logged " << format_double(a.final_rd_logged) << ", recomputed " << format_double(a.final_rd_recomputed)
              << ", |diff| " << format_double(diff) << "\n"
              << "coresets analyzed " << a.coresets.size() << "\n";
    return diff <= 1e-6 ? 0 : 2;
}

int cmd_probe(const std::string& checkpoint, const std::string& data_path, const ConfigOptions& opts, const std::string& out) {
    Dataset data;
    if (!data_path.empty()) {
        data = load_dataset(data_path);
    } else {
        data = prepare_data(opts.resolve()).full;
    }
    const Model model = Model::load(checkpoint);
    ProbeSettings settings;
    if (opts.seed) settings.seed = *opts.seed;
    const ProbeResult r = linear_probe(model, data, settings);
    const std::string csv = "train_accuracy,test_accuracy,iterations,final_loss\n" + format_double(r.train_accuracy) + "," +
                            format_double(r.test_accuracy) + "," + std::to_string(r.iterations) + "," + format_double(r.final_loss) + "\n";
    emit(out, csv);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Robustness-aware coreset selection"};
    app.require_subcommand(1);

    SyntheticSpec spec;
    std::string gen_out;
    auto* gen = app.add_subcommand("gen", "generate a synthetic dataset");
    gen->add_option("--out", gen_out, "output .rcsd path")->required();
    gen->add_option("--n", spec.n, "points");
    gen->add_option("--dim", spec.dim, "dimension");
    gen->add_option("--classes", spec.classes, "mixture components");
    gen->add_option("--separation", spec.separation, "scale of the class means");
    gen->add_option("--noise", spec.noise, "within-class standard deviation");
    gen->add_option("--seed", spec.seed, "seed");
    bool unlabeled = false;
    gen->add_flag("--unlabeled", unlabeled, "omit labels");

    ConfigOptions pre_opts;
    std::string pre_out;
    auto* pre = app.add_subcommand("pretrain", "run a training job and write a run directory");
    pre_opts.attach(pre);
    pre->add_option("--out", pre_out, "run directory (overrides output.dir)");

    ConfigOptions sel_opts;
    std::string sel_method, sel_model, sel_out;
    std::optional<double> sel_k;
    auto* sel = app.add_subcommand("select", "run one selection round and print the coreset CSV");
    sel_opts.attach(sel);
    sel->add_option("--method", sel_method, "rcs or random")->check(CLI::IsMember({"rcs", "random"}));
    sel->add_option("--k", sel_k, "subset fraction");
    sel->add_option("--model", sel_model, "checkpoint (default: the initial model)");
    sel->add_option("--out", sel_out, "CSV path (default: stdout)");

    ConfigOptions orc_opts;
    std::string orc_model;
    std::optional<double> orc_k;
    std::uint64_t orc_cap = 10000;
    auto* orc = app.add_subcommand("oracle", "exhaustive optimum and the greedy guarantee on a small instance");
    orc_opts.attach(orc);
    orc->add_option("--k", orc_k, "subset fraction");
    orc->add_option("--model", orc_model, "checkpoint (default: the initial model)");
    orc->add_option("--cap", orc_cap, "maximum number of subsets");

    std::string ana_run, ana_out;
    auto* ana = app.add_subcommand("analyze", "RD curve, coreset MMD, imbalance and selection frequency of a run");
    ana->add_option("--run", ana_run, "run directory")->required();
    ana->add_option("--out", ana_out, "output directory (default: the run directory)");

    ConfigOptions prb_opts;
    std::string prb_model, prb_data, prb_out;
    auto* prb = app.add_subcommand("probe", "linear probe accuracy of a checkpoint");
    prb_opts.attach(prb);
    prb->add_option("--model", prb_model, "checkpoint")->required();
    prb->add_option("--data", prb_data, "labeled .rcsd dataset (default: the config's data)");
    prb->add_option("--out", prb_out, "CSV path (default: stdout)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (*gen) {
            spec.write_labels = !unlabeled;
            spec.validate();
            return cmd_gen(spec, gen_out);
        }
        if (*pre) return cmd_pretrain(pre_opts, pre_out);
        if (*sel) return cmd_select(sel_opts, sel_method, sel_k, sel_model, sel_out);
        if (*orc) return cmd_oracle(orc_opts, orc_k, orc_model, orc_cap);
        if (*ana) return cmd_analyze(ana_run, ana_out);
        if (*prb) return cmd_probe(prb_model, prb_data, prb_opts, prb_out);
    } catch (const ConfigError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 1;
}
