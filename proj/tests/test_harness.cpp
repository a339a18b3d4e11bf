#include <cmath>
#include <cstdlib>
#include <fstream>
#include <set>

#include "helpers.hpp"

namespace {

using namespace rcs;
using rcs::testing::random_matrix;
using rcs::testing::read_file;
using rcs::testing::temp_dir;

const char* kTinyConfig = R"(seed = 1
data.n = 68
data.dim = 4
data.classes = 2
data.validation_fraction = 0.0588
model.hidden = 6
model.embedding_dim = 4
model.projection_dim = 4
train.epochs = 6
train.batch_size = 8
attack.eps = 0.1
attack.step = 0.05
attack.steps = 2
selection.fraction = 0.25
selection.warmup_epochs = 2
selection.interval = 2
)";

TEST(Config, ParseSerializeRoundTrip) {
    ExperimentConfig c = parse_config("# comment\n seed = 9 \ntrain.method = dynacl\nmodel.hidden = 8, 6\nattack.clamp = 0,1\n"
                                      "selection.distance = js\nselection.warmup_epochs = 3\n");
    EXPECT_EQ(c.seed, 9u);
    EXPECT_EQ(c.method, TrainMethod::dynacl);
    EXPECT_EQ(c.model.hidden, (std::vector<std::size_t>{8, 6}));
    ASSERT_TRUE(c.attack.clamp);
    EXPECT_EQ(c.attack.clamp->hi, 1.0);
    EXPECT_EQ(c.distance.tag, Distance::js);
    EXPECT_EQ(c.warmup(), 3u);
    const std::string text = serialize_config(c);
    EXPECT_EQ(serialize_config(parse_config(text)), text);
    const ExperimentConfig d;
    EXPECT_EQ(serialize_config(parse_config(serialize_config(d))), serialize_config(d));
    EXPECT_EQ(parse_config(serialize_config(d)).attack.step_size, d.attack.step_size);
}

TEST(Config, Defaults) {
    const ExperimentConfig c;
    EXPECT_EQ(c.trades_c, 6.0);
    EXPECT_EQ(c.warmup(), 10u);
    EXPECT_NEAR(c.selection_attack().step_size, 10.0 / 765.0, 1e-15);
    EXPECT_EQ(c.selection_attack().steps, 3u);
    EXPECT_TRUE(c.rd_settings(0).attack.random_start);
}

TEST(Config, ErrorsNameTheProblem) {
    try {
        parse_config("bogus.key = 1\n");
        FAIL();
    } catch (const ConfigError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("bogus.key"), std::string::npos);
        EXPECT_NE(msg.find("selection.fraction"), std::string::npos);
    }
    EXPECT_THROW(parse_config("seed 3\n"), ConfigError);
    EXPECT_THROW(parse_config("train.epochs = many\n"), ConfigError);
    EXPECT_THROW(parse_config("train.method = sgd\n"), ConfigError);
    EXPECT_THROW(parse_config("selection.fraction = 0\n"), ConfigError);
    EXPECT_THROW(load_config("/nonexistent/rcs.cfg"), IoError);
}

TEST(Synthetic, BalancedAndReproducible) {
    SyntheticSpec s;
    s.n = 400;
    s.seed = 4;
    const Dataset a = generate_synthetic(s), b = generate_synthetic(s);
    EXPECT_EQ(a, b);
    std::vector<std::size_t> counts(4, 0);
    for (std::size_t y : a.labels) ++counts[y];
    for (std::size_t c : counts) EXPECT_EQ(c, 100u);
    s.seed = 5;
    EXPECT_NE(generate_synthetic(s).features, a.features);
    for (double v : a.features.values()) EXPECT_EQ(v, static_cast<double>(static_cast<float>(v)));
}

TEST(Synthetic, EmpiricalMeansNearClassMeans) {
    SyntheticSpec s;
    s.n = 800;
    s.dim = 6;
    s.seed = 8;
    const Dataset d = generate_synthetic(s);
    const Tensor mu = class_means(s);
    const double tol = 3.0 * s.noise / std::sqrt(static_cast<double>(s.n / s.classes));
    for (std::size_t c = 0; c < s.classes; ++c)
        for (std::size_t j = 0; j < s.dim; ++j) {
            double m = 0.0;
            std::size_t k = 0;
            for (std::size_t i = 0; i < s.n; ++i)
                if (d.labels[i] == c) {
                    m += d.features(i, j);
                    ++k;
                }
            EXPECT_NEAR(m / static_cast<double>(k), mu(c, j), tol) << c << "," << j;
        }
}

TEST(Synthetic, RcsdRoundTripAndCorruption) {
    const auto dir = temp_dir("rcsd");
    SyntheticSpec s;
    s.n = 30;
    const Dataset d = generate_synthetic(s);
    const std::string path = (dir / "d.rcsd").string();
    save_dataset(d, path);
    EXPECT_EQ(load_dataset(path), d);
    save_dataset(load_dataset(path), (dir / "again.rcsd").string());
    EXPECT_EQ(read_file(path), read_file((dir / "again.rcsd").string()));
    EXPECT_EQ(read_file(path).substr(0, 4), "RCSD");

    s.write_labels = false;
    const Dataset u = generate_synthetic(s);
    EXPECT_FALSE(u.labeled());
    save_dataset(u, (dir / "u.rcsd").string());
    EXPECT_EQ(load_dataset((dir / "u.rcsd").string()), u);

    const std::string bytes = read_file(path);
    auto write = [&](const std::string& name, const std::string& content) {
        std::ofstream((dir / name).string(), std::ios::binary) << content;
        return (dir / name).string();
    };
    EXPECT_THROW(load_dataset(write("t.rcsd", bytes.substr(0, bytes.size() - 1))), IoError);
    EXPECT_THROW(load_dataset(write("m.rcsd", "RCSX" + bytes.substr(4))), IoError);
    EXPECT_THROW(load_dataset(write("x.rcsd", bytes + std::string(1, '\0'))), IoError);
    EXPECT_THROW(load_dataset((dir / "none.rcsd").string()), IoError);
}

TEST(Split, DisjointAndSized) {
    SyntheticSpec s;
    s.n = 101;
    const Dataset d = generate_synthetic(s);
    const HoldoutSplit h = holdout_split(d, 0.05, 3);
    EXPECT_EQ(h.validation.size(), 5u);
    EXPECT_EQ(h.train.size(), 96u);
    std::set<std::size_t> all(h.train_ids.begin(), h.train_ids.end());
    for (auto id : h.validation.point_ids) EXPECT_TRUE(all.insert(id).second);
    EXPECT_EQ(all.size(), 101u);
    EXPECT_EQ(holdout_split(d, 0.001, 3).validation.size(), 1u);
    EXPECT_THROW(holdout_split(d, 1.0, 3), ConfigError);
}

TEST(Mmd, BasicIdentities) {
    const Tensor a = random_matrix(10, 3, 1);
    EXPECT_EQ(mmd(a, a), 0.0);
    const Tensor x = Tensor::matrix(1, 2, {0.0, 0.0}), y = Tensor::matrix(1, 2, {3.0, 4.0});
    EXPECT_NEAR(mmd(x, y, 2.0), 2.0 - 2.0 * std::exp(-25.0 / 8.0), 1e-15);
    const Tensor b = random_matrix(7, 3, 2);
    EXPECT_EQ(mmd(a, b), mmd(b, a));
    EXPECT_THROW(mmd(a, random_matrix(3, 2, 1)), ShapeError);
    EXPECT_THROW(mmd(a, b, 0.0), DomainError);
}

TEST(Mmd, SeparatedSetsScoreHigher) {
    for (std::uint64_t s = 0; s < 20; ++s) {
        const Tensor a = random_matrix(20, 3, s), same = random_matrix(20, 3, 100 + s);
        Tensor far = random_matrix(20, 3, 200 + s);
        for (double& v : far.values()) v += 3.0;
        EXPECT_GT(mmd(a, far), mmd(a, same));
    }
}

TEST(Imbalance, RatioCases) {
    const std::vector<std::size_t> labels{0, 0, 0, 0, 0, 0, 1, 1, 1};
    EXPECT_EQ(imbalance_ratio(labels, 2).ratio, 2.0);
    const ImbalanceReport missing = imbalance_ratio(labels, 3);
    EXPECT_TRUE(missing.missing_class);
    EXPECT_TRUE(std::isinf(missing.ratio));
    EXPECT_THROW(imbalance_ratio(std::vector<std::size_t>{4}, 3), ConfigError);
}

TEST(Imbalance, RandomCoresetsOfBalancedDataStayBalanced) {
    SyntheticSpec s;
    s.n = 512;
    const Dataset d = generate_synthetic(s);
    const auto p = MinibatchPartition::contiguous(512, 16);
    std::vector<double> ratios;
    for (std::uint64_t seed = 0; seed < 25; ++seed) {
        const CoresetResult r = random_select(p, 0.5, seed);
        std::vector<std::size_t> labels;
        for (std::size_t i : coreset_rows(p, r)) labels.push_back(d.labels[i]);
        ratios.push_back(imbalance_ratio(labels, 4).ratio);
    }
    std::nth_element(ratios.begin(), ratios.begin() + 12, ratios.end());
    EXPECT_LT(ratios[12], 1.5);
}

TEST(Frequency, CountsPerPoint) {
    const auto p = MinibatchPartition::contiguous(10, 4);
    CoresetResult a, b;
    a.selected = {0, 2};
    b.selected = {2};
    for (CoresetResult* r : {&a, &b}) {
        r->partition_batches = 3;
        r->partition_size = 10;
    }
    const std::vector<CoresetResult> rounds{a, b};
    const auto f = selection_frequency(p, rounds);
    EXPECT_EQ(f, (std::vector<std::size_t>{1, 1, 1, 1, 0, 0, 0, 0, 2, 2}));
    b.partition_batches = 4;
    const std::vector<CoresetResult> bad{a, b};
    EXPECT_THROW(selection_frequency(p, bad), ConfigError);
}

TEST(Probe, SeparableAndShuffled) {
    SyntheticSpec s;
    s.n = 400;
    s.classes = 2;
    s.separation = 8.0;
    s.noise = 0.5;
    Dataset d = generate_synthetic(s);
    const ProbeResult clean = linear_probe(d.features, d.labels, 2);
    EXPECT_EQ(clean.train_accuracy, 1.0);
    EXPECT_EQ(clean.test_accuracy, 1.0);

    SyntheticSpec noise = s;
    noise.n = 4000;
    noise.separation = 0.0;
    const Dataset z = generate_synthetic(noise);
    EXPECT_NEAR(linear_probe(z.features, z.labels, 2).test_accuracy, 0.5, 0.05);
    EXPECT_THROW(linear_probe(d.features, std::vector<std::size_t>(400, 1), 2), ConfigError);
}

TEST(Probe, TrainedEncoderBeatsUntrained) {
    ExperimentConfig c = parse_config(kTinyConfig);
    c.data.n = 256;
    c.data.separation = 2.0;
    c.epochs = 20;
    c.batch_size = 32;
    c.selection = SelectMethod::full;
    c.temperature = 0.5;
    const ExperimentData data = prepare_data(c);
    const RunResult run = pretrain(c, data.split.train, data.split.validation);
    const Model untrained = initial_model(c, 4);
    EXPECT_GE(linear_probe(run.model, data.full).test_accuracy, linear_probe(untrained, data.full).test_accuracy);
}

// Runs the CLI in `dir` and returns its exit status.
int cli(const std::filesystem::path& dir, const std::string& args) {
    const std::string cmd = "cd '" + dir.string() + "' && '" + RCS_CLI_PATH + "' " + args + " > out.txt 2> err.txt";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

class Cli : public ::testing::Test {
protected:
    std::filesystem::path dir = temp_dir("cli");
    void SetUp() override { std::ofstream((dir / "tiny.cfg").string()) << kTinyConfig; }
    std::string out() const { return read_file((dir / "out.txt").string()); }
};

TEST_F(Cli, ExitCodes) {
    EXPECT_EQ(cli(dir, "gen --out d.rcsd --n 32 --dim 3"), 0);
    EXPECT_EQ(cli(dir, ""), 1);
    EXPECT_EQ(cli(dir, "gen"), 1);
    EXPECT_EQ(cli(dir, "pretrain --set no.such.key=1"), 1);
    EXPECT_EQ(cli(dir, "analyze --run missing"), 2);
    EXPECT_EQ(cli(dir, "probe --model missing.rcsm --data d.rcsd"), 2);
}

TEST_F(Cli, RandomSelectionPrintsBudgetIds) {
    ASSERT_EQ(cli(dir, "select --config tiny.cfg --method random --k 0.25"), 0);
    const std::string csv = out();
    EXPECT_EQ(csv.rfind("iteration,batch_id,gain,cumulative_grad_evals\n", 0), 0u);
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 3);
}

TEST_F(Cli, OracleReportsPass) {
    ASSERT_EQ(cli(dir, "oracle --config tiny.cfg"), 0);
    EXPECT_NE(out().find("subsets evaluated 28"), std::string::npos);
    EXPECT_NE(out().find("PASS"), std::string::npos);
    EXPECT_EQ(cli(dir, "oracle --config tiny.cfg --cap 10"), 1);
}

TEST_F(Cli, PretrainAnalyzeProbe) {
    ASSERT_EQ(cli(dir, "pretrain --config tiny.cfg --out run"), 0);
    EXPECT_NE(out().find("actual 44, predicted 44"), std::string::npos);
    ASSERT_EQ(cli(dir, "analyze --run run"), 0);
    EXPECT_NE(out().find("|diff| 0"), std::string::npos);
    for (const char* f : {"analysis.csv", "frequency.csv", "rd_curve.csv", "epochs.csv", "coreset_2.csv", "coreset_4.csv"})
        EXPECT_TRUE(std::filesystem::exists(dir / "run" / f)) << f;
    EXPECT_EQ(read_file((dir / "run" / "rd_curve.csv").string()).substr(0, 9), "epoch,rd\n");
    ASSERT_EQ(cli(dir, "probe --config tiny.cfg --model run/model_final.rcsm --out probe.csv"), 0);
    EXPECT_EQ(read_file((dir / "probe.csv").string()).rfind("train_accuracy,test_accuracy,iterations,final_loss\n", 0), 0u);
}

TEST_F(Cli, IdenticalRunsAreByteIdentical) {
    ASSERT_EQ(cli(dir, "pretrain --config tiny.cfg --out a"), 0);
    ASSERT_EQ(cli(dir, "pretrain --config tiny.cfg --out b"), 0);
    for (const char* f : {"epochs.csv", "coreset_2.csv", "coreset_4.csv", "model_final.rcsm"})
        EXPECT_EQ(read_file((dir / "a" / f).string()), read_file((dir / "b" / f).string())) << f;
    ASSERT_EQ(cli(dir, "pretrain --config tiny.cfg --seed 2 --out c"), 0);
    EXPECT_NE(read_file((dir / "a" / "model_final.rcsm").string()), read_file((dir / "c" / "model_final.rcsm").string()));
}

}  // namespace
