#include <cmath>
#include <fstream>

#include "helpers.hpp"

namespace {

using namespace rcs;
using rcs::testing::parameter_fd;
using rcs::testing::parameter_grad;
using rcs::testing::random_matrix;
using rcs::testing::small_config;

TEST(Model, InitIsDeterministicPerSeed) {
    const Model a(small_config(4, 8, 4, 2, 7)), b(small_config(4, 8, 4, 2, 7)), c(small_config(4, 8, 4, 2, 8));
    EXPECT_EQ(a.parameters(), b.parameters());
    EXPECT_NE(a.parameters(), c.parameters());
}

TEST(Model, BiasesStartAtZeroAndWeightsAreScaledUniform) {
    const Model m(small_config(4, 8, 4, 2, 3));
    for (std::size_t l = 0; l < m.layer_count(); ++l) {
        const DenseLayer& layer = m.layer(l);
        for (double b : layer.bias.values()) EXPECT_EQ(b, 0.0);
        const double bound = 1.0 / std::sqrt(static_cast<double>(layer.weight.shape()[0]));
        for (double w : layer.weight.values()) EXPECT_LE(std::abs(w), bound);
    }
}

TEST(Model, ParameterCountsByLayerShapes) {
    const Model m(small_config(4, 8, 4, 2));
    EXPECT_EQ(m.parameter_count(), (4u * 8 + 8) + (8u * 4 + 4) + (4u * 2 + 2));
    EXPECT_EQ(m.parameter_count(), 86u);
    EXPECT_EQ(m.head_parameter_count(), 10u);
    EXPECT_EQ(m.last_layer_params().size, 10u);
    EXPECT_EQ(m.all_params().size - m.last_layer_params().size, m.encoder_parameter_count());
    const Model two(small_config(4, 8, 4, 2, 1, NormMode::none, 2));
    EXPECT_EQ(two.head_parameter_count(), (4u * 4 + 4) + (4u * 2 + 2));
}

TEST(Model, OutputShapesAndEmptyBatch) {
    const Model m(small_config(3, 5, 4, 2));
    EXPECT_EQ(m.embed(random_matrix(6, 3, 1)).shape(), (Shape{6, 4}));
    EXPECT_EQ(m.forward(random_matrix(6, 3, 1)).shape(), (Shape{6, 2}));
    EXPECT_EQ(m.forward(Tensor::zeros({0, 3})).shape(), (Shape{0, 2}));
    EXPECT_THROW(m.forward(random_matrix(2, 4, 1)), ShapeError);
}

TEST(Model, ZeroWeightsGiveConstantOutput) {
    Model m(small_config(3, 5, 4, 2));
    std::vector<double> p(m.parameter_count(), 0.0);
    p.back() = 0.7;  // one head bias
    m.set_parameters(p);
    const Tensor out = m.forward(random_matrix(5, 3, 2, 10.0));
    for (std::size_t i = 1; i < 5; ++i)
        for (std::size_t j = 0; j < 2; ++j) EXPECT_EQ(out(i, j), out(0, j));
}

TEST(Model, GradientOfMeanOutputMatchesFiniteDifferences) {
    for (NormMode norm : {NormMode::none, NormMode::per_feature}) {
        for (std::size_t head : {1u, 2u}) {
            Model m(small_config(3, 4, 3, 2, 11, norm, head));
            const Tensor x = random_matrix(5, 3, 4);
            m.update_statistics(x, Branch::natural, 0.5);
            auto build = [&](const BoundModel& b) { return mean(b.forward(b.tape().constant(x))); };
            const auto g = parameter_grad(m, build);
            const auto fd = parameter_fd(m, [&](const Model& mm) { return rcs::testing::value_of(mm, build); });
            EXPECT_LT(relative_error(g, fd), 1e-4);
        }
    }
}

TEST(Model, HeadGradientIsRestrictionOfFullGradient) {
    const Model m(small_config(3, 4, 3, 2, 5));
    const Tensor x = random_matrix(4, 3, 9);
    Tape tape;
    const BoundModel b = m.bind(tape);
    tape.backward(sum(mul(b.forward(tape.constant(x)), b.forward(tape.constant(x)))));
    const auto full = b.gradient();
    const auto view = m.last_layer_params();
    // the head is the last layer: last v*z + v entries
    EXPECT_EQ(view.offset + view.size, full.size());
    const auto& head = m.layer(m.layer_count() - 1);
    EXPECT_EQ(view.size, head.weight.size() + head.bias.size());
}

TEST(Model, SnapshotRestoreRoundTrip) {
    Model m(small_config(3, 4, 3, 2, 5));
    const Tensor x = random_matrix(4, 3, 1);
    const Tensor before = m.forward(x);
    const ModelSnapshot snap = m.snapshot();
    const ModelSnapshot again = m.snapshot();
    EXPECT_EQ(snap.parameters, again.parameters);
    EXPECT_EQ(l2_norm(snap.parameters), l2_norm(m.parameters()));

    auto p = m.parameters();
    for (double& v : p) v += 0.01;  // one "training step"
    m.set_parameters(p);
    EXPECT_NE(m.forward(x), before);
    EXPECT_NE(snap.parameters, m.parameters());  // snapshot unaffected
    m.restore(snap);
    EXPECT_EQ(m.forward(x), before);
    EXPECT_EQ(Model(snap).forward(x), before);
}

TEST(Model, RestoreRejectsConfigMismatch) {
    Model m(small_config(3, 4, 3, 2));
    const Model other(small_config(3, 5, 3, 2));
    EXPECT_THROW(m.restore(other.snapshot()), ConfigError);
}

TEST(Model, DualStatisticsAreIndependentPerBranch) {
    Model m(small_config(3, 4, 3, 2, 1, NormMode::dual_per_feature));
    const auto natural_before = m.statistics(Branch::natural);
    m.update_statistics(random_matrix(8, 3, 3), Branch::adversarial);
    EXPECT_EQ(m.statistics(Branch::natural), natural_before);
    EXPECT_NE(m.statistics(Branch::adversarial), natural_before);
    const auto adversarial_before = m.statistics(Branch::adversarial);
    m.update_statistics(random_matrix(8, 3, 4), Branch::natural);
    EXPECT_EQ(m.statistics(Branch::adversarial), adversarial_before);
}

TEST(Model, EmpiricalLipschitzSmoke) {
    const Model m(small_config(3, 6, 3, 2, 2));
    const Tensor x = random_matrix(1, 3, 1);
    // constant from one probe, then checked on others with slack
    auto ratio = [&](std::uint64_t seed) {
        const Tensor d = random_matrix(1, 3, seed, 1e-3);
        Tensor xd = x;
        for (std::size_t i = 0; i < 3; ++i) xd[i] += d[i];
        const Tensor a = m.forward(x), b = m.forward(xd);
        return max_abs_diff(a.values(), b.values()) / l2_norm(d.values());
    };
    double c = 0.0;
    for (std::uint64_t s = 0; s < 50; ++s) c = std::max(c, ratio(100 + s));
    for (std::uint64_t s = 0; s < 50; ++s) EXPECT_LE(ratio(200 + s), 2.0 * c + 1e-12);
}

TEST(Checkpoint, RoundTripAtF32Precision) {
    const auto dir = rcs::testing::temp_dir("ckpt");
    Model m(small_config(3, 4, 3, 2, 9, NormMode::dual_per_feature, 2));
    m.update_statistics(random_matrix(6, 3, 1), Branch::natural);
    m.update_statistics(random_matrix(6, 3, 2), Branch::adversarial);
    const std::string path = (dir / "m.rcsm").string();
    m.save(path);
    const Model loaded = Model::load(path);
    EXPECT_EQ(loaded.config(), m.config());
    const auto a = m.parameters(), b = loaded.parameters();
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(b[i], static_cast<double>(static_cast<float>(a[i])));
    // saving the loaded model reproduces the file byte for byte
    loaded.save((dir / "again.rcsm").string());
    EXPECT_EQ(rcs::testing::read_file(path), rcs::testing::read_file((dir / "again.rcsm").string()));
    EXPECT_EQ(rcs::testing::read_file(path).substr(0, 4), "RCSM");
}

TEST(Checkpoint, CorruptFilesAreRejected) {
    const auto dir = rcs::testing::temp_dir("ckpt_bad");
    const Model m(small_config());
    const std::string path = (dir / "m.rcsm").string();
    m.save(path);
    const std::string bytes = rcs::testing::read_file(path);
    auto write = [&](const std::string& name, const std::string& content) {
        std::ofstream((dir / name).string(), std::ios::binary) << content;
        return (dir / name).string();
    };
    EXPECT_THROW(Model::load(write("trunc.rcsm", bytes.substr(0, bytes.size() - 3))), IoError);
    EXPECT_THROW(Model::load(write("magic.rcsm", "XXXX" + bytes.substr(4))), IoError);
    EXPECT_THROW(Model::load(write("trail.rcsm", bytes + "x")), IoError);
    EXPECT_THROW(Model::load((dir / "missing.rcsm").string()), IoError);
}

}  // namespace
