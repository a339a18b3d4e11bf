#include <cmath>

#include "helpers.hpp"

namespace {

using namespace rcs;
using rcs::testing::random_labels;
using rcs::testing::random_matrix;
using rcs::testing::small_config;
using rcs::testing::value_of;

double cl_value(const Tensor& projections, std::size_t pairs, double t, Reduction r = Reduction::mean) {
    Tape tape;
    return cl_loss(tape.constant(projections), pairs, t, r).value().item();
}

// Straight from the formula: for anchor a with partner p,
// -log(exp(s_ap / t) / sum_{b != a} exp(s_ab / t)), summed over all 2*pairs anchors.
double cl_reference(const Tensor& v, std::size_t pairs, double t) {
    const std::size_t n = 2 * pairs, d = v.cols();
    auto cos = [&](std::size_t a, std::size_t b) {
        double ab = 0, aa = 0, bb = 0;
        for (std::size_t c = 0; c < d; ++c) {
            ab += v(a, c) * v(b, c);
            aa += v(a, c) * v(a, c);
            bb += v(b, c) * v(b, c);
        }
        return ab / std::sqrt(aa * bb);
    };
    double total = 0.0;
    for (std::size_t a = 0; a < n; ++a) {
        const std::size_t p = a < pairs ? a + pairs : a - pairs;
        double denom = 0.0;
        for (std::size_t b = 0; b < n; ++b)
            if (b != a) denom += std::exp(cos(a, b) / t);
        total += -std::log(std::exp(cos(a, p) / t) / denom);
    }
    return total / static_cast<double>(pairs);
}

TEST(ClLoss, SinglePairIsZero) {
    EXPECT_NEAR(cl_value(random_matrix(2, 3, 1), 1, 0.1), 0.0, 1e-12);
}

TEST(ClLoss, IdenticalEmbeddings) {
    for (std::size_t beta : {2u, 3u, 5u}) {
        const Tensor v = Tensor({2 * beta, 3}, std::vector<double>(6 * beta, 1.0));
        EXPECT_NEAR(cl_value(v, beta, 0.1), 2.0 * std::log(2.0 * static_cast<double>(beta) - 1.0), 1e-10);
    }
}

TEST(ClLoss, DirectFormulaOracle) {
    // beta = 2, t = 0.5, orthogonal and parallel embeddings
    const Tensor v = Tensor::matrix(4, 2, {1, 0, 0, 1, 2, 0, 1, 1});
    EXPECT_NEAR(cl_value(v, 2, 0.5), cl_reference(v, 2, 0.5), 1e-10);
    for (std::uint64_t s = 0; s < 10; ++s) {
        const Tensor r = random_matrix(6, 4, s);
        EXPECT_NEAR(cl_value(r, 3, 0.2), cl_reference(r, 3, 0.2), 1e-10);
        EXPECT_NEAR(cl_value(r, 3, 0.2, Reduction::sum), 3.0 * cl_reference(r, 3, 0.2), 1e-10);
    }
}

TEST(ClLoss, EmptyBatchAndBadTemperature) {
    EXPECT_THROW(cl_value(Tensor::zeros({0, 3}), 0, 0.1), ShapeError);
    try {
        cl_value(Tensor::zeros({0, 3}), 0, 0.1);
    } catch (const ShapeError& e) {
        EXPECT_NE(std::string(e.what()).find("empty batch"), std::string::npos);
    }
    EXPECT_THROW(cl_value(random_matrix(2, 3, 1), 1, 0.0), DomainError);
}

TEST(ClLoss, PermutationOfPairsInvariant) {
    const Tensor v = random_matrix(8, 3, 4);
    // swap pairs 0 and 2 in both halves
    std::vector<std::size_t> order = {2, 1, 0, 3, 6, 5, 4, 7};
    EXPECT_NEAR(cl_value(v.gather_rows(order), 4, 0.3), cl_value(v, 4, 0.3), 1e-12);
}

TEST(ClLoss, RotationInvariant) {
    const Tensor v = random_matrix(6, 2, 5);
    const double a = 0.7;
    std::vector<double> r;
    for (std::size_t i = 0; i < 6; ++i) {
        r.push_back(std::cos(a) * v(i, 0) - std::sin(a) * v(i, 1));
        r.push_back(std::sin(a) * v(i, 0) + std::cos(a) * v(i, 1));
    }
    EXPECT_NEAR(cl_value(Tensor({6, 2}, r), 3, 0.2), cl_value(v, 3, 0.2), 1e-8);
}

class AclTest : public ::testing::Test {
protected:
    Model model{small_config(3, 5, 4, 3, 21)};
    AugmentedBatch batch = augment(random_matrix(4, 3, 8), 1.0, 99);
    AttackConfig attack{3, 0.05, 0.1, std::nullopt, false};

    double acl(double omega, const AttackConfig& cfg) const {
        return value_of(model, [&](const BoundModel& b) { return acl_loss(b, batch, omega, cfg, 0.5, 0); });
    }
    double cl(const AugmentedBatch& views, Branch branch = Branch::natural) const {
        return value_of(model, [&](const BoundModel& b) { return cl_loss(b, views, 0.5, Reduction::mean, branch); });
    }
};

TEST_F(AclTest, ZeroBudgetIsTwiceClForEveryOmega) {
    AttackConfig none = attack;
    none.epsilon = 0.0;
    for (double omega : {0.0, 0.3, 1.0}) EXPECT_NEAR(acl(omega, none), 2.0 * cl(batch), 1e-12);
}

TEST_F(AclTest, OmegaOneAndZeroComponents) {
    Tape tape;
    const BoundModel b = model.bind(tape, false);
    const AclTerms terms = acl_terms(b, batch, 0.0, attack, 0.5, 0);
    const double adv = cl(terms.adversarial_batch, Branch::adversarial), nat = cl(batch);
    EXPECT_NEAR(terms.total.value().item(), adv + nat, 1e-10);
    EXPECT_NEAR(acl(1.0, attack), 2.0 * adv, 1e-10);
    EXPECT_GT(adv, nat);  // the attack increased the loss
    EXPECT_THROW(acl(1.5, attack), ConfigError);
}

TEST(Dynacl, FormulaValues) {
    const double nu = 2.0 / 3.0;
    struct Row {
        std::size_t e;
        double mu;
    };
    for (const Row& r : {Row{0, 1.0}, Row{49, 1.0}, Row{50, 0.95}, Row{500, 0.5}, Row{999, 0.05}}) {
        const DynaclState s = dynacl_schedule(r.e, 1000, 50, nu);
        EXPECT_NEAR(s.mu, r.mu, 1e-12) << r.e;
        EXPECT_NEAR(s.omega, nu * (1.0 - r.mu), 1e-12) << r.e;
    }
    EXPECT_NEAR(dynacl_schedule(999, 1000, 50, nu).omega, 0.95 * 2.0 / 3.0, 1e-12);
}

TEST(Dynacl, MonotoneAndBounded) {
    const double nu = 2.0 / 3.0;
    DynaclState prev = dynacl_schedule(0, 1000, 50, nu);
    for (std::size_t e = 1; e < 1000; ++e) {
        const DynaclState s = dynacl_schedule(e, 1000, 50, nu);
        EXPECT_LE(s.mu, prev.mu);
        EXPECT_GE(s.omega, prev.omega);
        EXPECT_LE(s.omega, nu);
        EXPECT_GE(s.mu, 0.0);
        prev = s;
    }
    EXPECT_THROW(dynacl_schedule(1000, 1000, 50, nu), ConfigError);
    EXPECT_THROW(dynacl_schedule(0, 1000, 0, nu), ConfigError);
}

TEST(Sat, ZeroBudgetIsCrossEntropy) {
    const Model m(small_config(3, 5, 4, 3, 2));
    const Tensor x = random_matrix(6, 3, 1);
    const auto y = random_labels(6, 3, 2);
    AttackConfig none{5, 0.1, 0.0, std::nullopt, false};
    const double sat = value_of(m, [&](const BoundModel& b) { return sat_loss(b, x, y, none, 0); });
    const double ce = value_of(m, [&](const BoundModel& b) { return cross_entropy(b.forward(b.tape().constant(x), Branch::adversarial), y); });
    EXPECT_EQ(sat, ce);
}

TEST(Sat, UniformLogitsGiveLogC) {
    Model m(small_config(3, 5, 4, 4, 2));
    std::vector<double> p(m.parameter_count(), 0.0);
    m.set_parameters(p);
    const Tensor x = random_matrix(5, 3, 1);
    const auto y = random_labels(5, 4, 3);
    const double v = value_of(m, [&](const BoundModel& b) {
        return sat_loss(b, x, y, AttackConfig{2, 0.1, 0.2, std::nullopt, false}, 0, Reduction::sum);
    });
    EXPECT_NEAR(v, 5.0 * std::log(4.0), 1e-12);
}

TEST(Sat, LabelOutOfRange) {
    const Model m(small_config(3, 5, 4, 3));
    const Tensor x = random_matrix(2, 3, 1);
    EXPECT_THROW(value_of(m, [&](const BoundModel& b) { return sat_loss(b, x, {0, 3}, AttackConfig{}, 0); }), ConfigError);
}

// 1-D chain with identity hidden/embedding layers: logits = x * (a1, a2) for x > 0.
Model linear_1d(double a1, double a2) {
    EncoderConfig c = small_config(1, 1, 1, 2);
    Model m(c);
    std::vector<double> p(m.parameter_count(), 0.0);
    // layer 0: w=1 b=0, layer 1: w=1 b=0, head: w=(a1, a2) b=(0, 0)
    p = {1.0, 0.0, 1.0, 0.0, a1, a2, 0.0, 0.0};
    m.set_parameters(p);
    return m;
}

TEST(Sat, AnalyticOneStep) {
    const double a1 = 0.8, a2 = -0.5, x0 = 0.6, rho = 0.05;
    const Model m = linear_1d(a1, a2);
    ASSERT_EQ(m.parameter_count(), 8u);
    const double value = value_of(m, [&](const BoundModel& b) {
        return sat_loss(b, Tensor::matrix(1, 1, {x0}), {0}, AttackConfig{1, rho, 0.1, std::nullopt, false}, 0);
    });
    // d CE / dx for label 0 = p1 a1 + p2 a2 - a1
    auto ce = [&](double x) {
        const double l1 = a1 * x, l2 = a2 * x, mx = std::max(l1, l2);
        return -(l1 - mx - std::log(std::exp(l1 - mx) + std::exp(l2 - mx)));
    };
    const double p1 = 1.0 / (1.0 + std::exp((a2 - a1) * x0));
    const double g = p1 * a1 + (1.0 - p1) * a2 - a1;
    const double x1 = x0 + rho * (g > 0 ? 1.0 : -1.0);
    EXPECT_NEAR(value, ce(x1), 1e-10);
}

class TradesTest : public ::testing::Test {
protected:
    Model model{small_config(3, 5, 4, 3, 31)};
    Tensor x = random_matrix(6, 3, 2);
    std::vector<std::size_t> y = random_labels(6, 3, 5);
    AttackConfig attack{1, 0.05, 0.1, std::nullopt, true};

    double trades(double c, const AttackConfig& cfg) const {
        return value_of(model, [&](const BoundModel& b) { return trades_loss(b, x, y, c, cfg, 17); });
    }
    double ce() const {
        return value_of(model, [&](const BoundModel& b) { return cross_entropy(b.forward(b.tape().constant(x)), y); });
    }
};

TEST_F(TradesTest, ZeroBudgetOrZeroTradeoffIsCrossEntropy) {
    AttackConfig none = attack;
    none.epsilon = 0.0;
    EXPECT_EQ(trades(6.0, none), ce());
    EXPECT_EQ(trades(0.0, attack), ce());
    EXPECT_THROW(trades(-1.0, attack), ConfigError);
}

TEST_F(TradesTest, ComponentOracle) {
    const double c = 6.0;
    const Tensor adv = pgd_rd(x, attack, model, DistanceKind{}, 17);
    const Tensor nat = model.forward(x, Branch::natural), advl = model.forward(adv, Branch::adversarial);
    double ce_sum = 0.0, kl_sum = 0.0;
    for (std::size_t i = 0; i < x.rows(); ++i) {
        auto logsm = [](const Tensor& l, std::size_t r, std::size_t k) {
            double mx = l(r, 0);
            for (std::size_t j = 1; j < l.cols(); ++j) mx = std::max(mx, l(r, j));
            double s = 0.0;
            for (std::size_t j = 0; j < l.cols(); ++j) s += std::exp(l(r, j) - mx);
            return l(r, k) - mx - std::log(s);
        };
        ce_sum -= logsm(nat, i, y[i]);
        for (std::size_t k = 0; k < 3; ++k) kl_sum += std::exp(logsm(advl, i, k)) * (logsm(advl, i, k) - logsm(nat, i, k));
    }
    const double n = static_cast<double>(x.rows());
    EXPECT_NEAR(trades(c, attack), ce_sum / n + c * kl_sum / n, 1e-10);
    EXPECT_GE(trades(c, attack), ce() - 1e-12);
    EXPECT_GT(kl_sum, 0.0);
}

}  // namespace
