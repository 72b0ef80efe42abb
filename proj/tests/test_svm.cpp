#include "rwm/svm.hpp"

#include "test_support.hpp"

#include <gtest/gtest.h>

#include <sstream>

namespace {

using namespace rwm;
using rwm::testing::brute_force_dual;
using rwm::testing::dual_objective;
using rwm::testing::random_binary_problem;
using rwm::testing::vec2;

TEST(Smo, MatchesBruteForceDual) {
    Rng rng = make_rng(31);
    for (int t = 0; t < 40; ++t) {
        const auto p = random_binary_problem(8, rng);
        SmoOptions opt;
        opt.tol = 1e-6;
        const auto m = smo_train_binary(p.gram, p.labels, p.c, opt);
        ASSERT_TRUE(m.converged);
        const double ref = brute_force_dual(p.gram, p.labels, p.c);
        EXPECT_NEAR(dual_objective(p.gram, p.labels, m.alpha), ref, 1e-6) << "problem " << t;
        EXPECT_LE(kkt_residual(m, p.gram, p.labels), opt.tol);
        double eq = 0.0;
        for (std::size_t i = 0; i < p.labels.size(); ++i) {
            EXPECT_GE(m.alpha[i], 0.0);
            EXPECT_LE(m.alpha[i], p.c);
            eq += p.labels[i] * m.alpha[i];
        }
        EXPECT_NEAR(eq, 0.0, 1e-10);
    }
}

TEST(Smo, KktWithinToleranceAtDefaultSettings) {
    Rng rng = make_rng(32);
    for (int t = 0; t < 20; ++t) {
        const auto p = random_binary_problem(30, rng);
        const SmoOptions opt;
        const auto m = smo_train_binary(p.gram, p.labels, p.c, opt);
        ASSERT_TRUE(m.converged);
        EXPECT_LE(kkt_residual(m, p.gram, p.labels), opt.tol);
    }
}

TEST(Smo, TwoPointProblemIsSymmetric) {
    // Both multipliers are equal and the bias vanishes, so the decision is
    // the sign of K(x, x+) - K(x, x-).
    Matrix k(2, 2);
    k << 1.0, 0.3, 0.3, 1.0;
    for (const double c : {0.1, 1.0, 100.0}) {
        const auto m = smo_train_binary(k, {1, -1}, c);
        EXPECT_NEAR(m.alpha[0], m.alpha[1], 1e-12);
        EXPECT_NEAR(m.bias, 0.0, 1e-12);
        EXPECT_NEAR(m.alpha[0], std::min(c, 1.0 / 0.7), 1e-9);
    }
}

TEST(Smo, RejectsBadInput) {
    const Matrix k = Matrix::Identity(3, 3);
    EXPECT_THROW((void)smo_train_binary(k, {1, -1}, 1.0), invalid_argument);
    EXPECT_THROW((void)smo_train_binary(k, {1, 1, 1}, 1.0), invalid_argument);
    EXPECT_THROW((void)smo_train_binary(k, {1, -1, 2}, 1.0), invalid_argument);
    EXPECT_THROW((void)smo_train_binary(k, {1, -1, 1}, 0.0), invalid_argument);
}

TEST(Smo, NonPsdGramStillTerminates) {
    Matrix k(3, 3);
    k << 1.0, 2.0, 0.0, 2.0, 1.0, 0.5, 0.0, 0.5, 1.0;
    const auto m = smo_train_binary(k, {1, -1, 1}, 1.0);
    EXPECT_TRUE(m.converged);
    for (const double a : m.alpha) {
        EXPECT_GE(a, 0.0);
        EXPECT_LE(a, 1.0);
    }
}

BinarySvm constant_machine(int a, int b, double bias) {
    BinarySvm m;
    m.class_pair = {a, b};
    m.bias = bias;
    return m;
}

TEST(Voting, TieBreaksToLowestClass) {
    MulticlassSolution sol;
    sol.num_classes = 3;
    // 0 vs 1 -> 1, 0 vs 2 -> 0, 1 vs 2 -> 2: one vote each
    sol.binaries = {constant_machine(0, 1, -1.0), constant_machine(0, 2, 1.0), constant_machine(1, 2, -1.0)};
    const Eigen::RowVectorXd row = Eigen::RowVectorXd::Zero(1);
    const auto r = vote(sol, row);
    EXPECT_EQ(r.votes, (std::vector<int>{1, 1, 1}));
    EXPECT_EQ(r.predicted, 0);
    EXPECT_EQ(r.decisions, (std::vector<double>{-1.0, 1.0, -1.0}));

    // a zero decision value votes for the first class of the pair
    sol.binaries = {constant_machine(0, 1, 0.0), constant_machine(0, 2, -1.0), constant_machine(1, 2, -1.0)};
    const auto z = vote(sol, row);
    EXPECT_EQ(z.votes, (std::vector<int>{1, 0, 2}));
    EXPECT_EQ(z.predicted, 2);
}

TEST(Voting, MissingClassesSkipPairs) {
    const Matrix k = Matrix::Identity(4, 4);
    const auto sol = solve_multiclass(k, {0, 2, 0, 2}, 3, 1.0);
    ASSERT_EQ(sol.binaries.size(), 1u);
    EXPECT_EQ(sol.binaries[0].class_pair, (std::pair<int, int>{0, 2}));
    EXPECT_EQ(sol.skipped_pairs, (std::vector<std::pair<int, int>>{{0, 1}, {1, 2}}));
    EXPECT_THROW((void)solve_multiclass(k, {0, 0, 0, 0}, 3, 1.0), invalid_argument);
    EXPECT_THROW((void)solve_multiclass(k, {0, 3, 0, 1}, 3, 1.0), invalid_argument);
}

struct Blobs {
    std::vector<Sample> samples;
    std::vector<int> labels;
};

Blobs three_blobs(std::size_t per_class, Rng& rng) {
    const std::vector<Vector> centres{vec2(0, 4), vec2(4, 0), vec2(-4, -2)};
    Blobs b;
    for (std::size_t c = 0; c < centres.size(); ++c)
        for (std::size_t i = 0; i < per_class; ++i) {
            Sample s;
            s.continuous = centres[c] + rwm::testing::random_vector(2, rng, 0.7);
            s.label = static_cast<int>(c);
            b.samples.push_back(std::move(s));
            b.labels.push_back(static_cast<int>(c));
        }
    return b;
}

KernelSpec rbf(double gamma) {
    KernelSpec s;
    s.gamma = gamma;
    return s;
}

TEST(Multiclass, SeparatesBlobsAndKeepsOnlySupportVectors) {
    Rng rng = make_rng(33);
    const auto data = three_blobs(20, rng);
    const auto spec = rbf(0.5);
    const auto g = build_gram(spec, data.samples);
    const auto model = train_multiclass(g, data.labels, 10.0, spec, data.samples, {"a", "b", "c"});
    EXPECT_EQ(model.binaries.size(), 3u);
    EXPECT_EQ(predict_batch(model, data.samples), data.labels);
    EXPECT_LT(count_support_vectors(model), data.samples.size());
    EXPECT_EQ(model.train_samples.size(), model.source_ids.size());
    const auto probe = three_blobs(10, rng);
    EXPECT_EQ(predict_batch(model, probe.samples), probe.labels);
    EXPECT_EQ(predict(model, probe.samples[25]), 2);
}

TEST(Multiclass, CompactModelMatchesFullSolution) {
    Rng rng = make_rng(34);
    auto data = three_blobs(15, rng);
    for (auto& s : data.samples) s.continuous *= 0.3;  // overlapping classes
    const auto spec = rbf(1.0);
    const auto g = build_gram(spec, data.samples);
    const auto sol = solve_multiclass(g.values, data.labels, 3, 1.0);
    const auto model = train_multiclass(g, data.labels, 1.0, spec, data.samples, {"a", "b", "c"});
    const auto full = vote_batch(sol, g.values);
    const auto compact = predict_votes(model, data.samples);
    ASSERT_EQ(full.size(), compact.size());
    EXPECT_EQ(sol.support_vector_count(), count_support_vectors(model));
    for (std::size_t i = 0; i < full.size(); ++i) {
        EXPECT_EQ(full[i].predicted, compact[i].predicted);
        for (std::size_t b = 0; b < full[i].decisions.size(); ++b)
            EXPECT_NEAR(full[i].decisions[b], compact[i].decisions[b], 1e-12);
    }
}

TEST(Multiclass, ThreadCountDoesNotChangeTheSolution) {
    Rng rng = make_rng(35);
    const auto data = three_blobs(12, rng);
    const auto g = build_gram(rbf(0.3), data.samples);
    const auto a = solve_multiclass(g.values, data.labels, 3, 2.0, {}, 1);
    const auto b = solve_multiclass(g.values, data.labels, 3, 2.0, {}, 3);
    for (std::size_t p = 0; p < a.binaries.size(); ++p) {
        EXPECT_EQ(a.binaries[p].alpha, b.binaries[p].alpha);
        EXPECT_EQ(a.binaries[p].bias, b.binaries[p].bias);
    }
}

TEST(ModelFile, RoundTripPreservesPredictions) {
    Rng rng = make_rng(36);
    const auto data = three_blobs(10, rng);
    Matrix x(static_cast<Eigen::Index>(data.samples.size()), 2);
    for (std::size_t i = 0; i < data.samples.size(); ++i) x.row(static_cast<Eigen::Index>(i)) = data.samples[i].continuous.transpose();
    KernelSpec spec;
    spec.family = KernelFamily::rwm;
    spec.gamma = 0.2;
    spec.model = std::make_shared<const MixtureModel>(fit_em(x, 3, 1).model);
    const auto g = build_gram(spec, data.samples);
    const auto model = train_multiclass(g, data.labels, 5.0, spec, data.samples, {"x", "y", "z"});

    std::stringstream ss;
    write_svm_model(ss, model);
    const std::string text = ss.str();
    const auto back = read_svm_model(ss);
    std::ostringstream again;
    write_svm_model(again, back);
    EXPECT_EQ(again.str(), text);
    EXPECT_EQ(back.classes, model.classes);
    EXPECT_EQ(predict_batch(back, data.samples), predict_batch(model, data.samples));

    // a mixture that does not match the recorded hash is rejected
    std::string tampered = text;
    const auto at = tampered.find("\nmean ");
    ASSERT_NE(at, std::string::npos);
    tampered.insert(at + 6, "1");
    std::istringstream bad(tampered);
    EXPECT_THROW((void)read_svm_model(bad), parse_error);

    std::istringstream header("rwm-svm 2\n");
    EXPECT_THROW((void)read_svm_model(header), parse_error);
}

}  // namespace
