#include "rwm/tuning.hpp"

#include "rwm/synthetic.hpp"
#include "test_support.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

namespace {

using namespace rwm;

struct Fixture {
    Dataset ds;
    OuterSplit split;
    std::shared_ptr<const MixtureModel> model;
};

Fixture moons(LabelBudget budget, std::uint64_t seed = 3) {
    Fixture f;
    f.ds = zscore_normalize(synthetic::two_moons(200, 0.1, seed));
    auto plan = stratified_kfold(f.ds, 5, seed);
    const auto train = plan.training_indices(0);
    f.model = std::make_shared<const MixtureModel>(fit_em(f.ds.continuous_matrix(train), 4, seed).model);
    plan = select_labeled_subset(f.ds, plan, 0, budget, f.model.get(), seed);
    f.split = plan.splits[0];
    return f;
}

KernelSpec rwm_spec(const Fixture& f) {
    KernelSpec s;
    s.family = KernelFamily::rwm;
    s.model = f.model;
    return s;
}

TEST(Grid, Shapes) {
    EXPECT_EQ(Grid::standard().weight_pairs().size(), 1u);
    EXPECT_EQ(Grid::mixed().weight_pairs().size(), 120u);
    Grid g = Grid::standard();
    g.alpha_steps = {0.0};
    g.beta_steps = {0.0};
    EXPECT_THROW((void)g.weight_pairs(), invalid_argument);
    g = Grid::standard();
    g.beta_steps = {1.5};
    EXPECT_THROW(g.validate(), invalid_argument);
    g = Grid::standard();
    g.c_exponents.clear();
    EXPECT_THROW(g.validate(), invalid_argument);
    EXPECT_EQ(parse_expected_error_mode("vote_margin"), ExpectedErrorMode::vote_margin);
    EXPECT_THROW((void)parse_expected_error_mode("entropy"), invalid_argument);
}

TEST(Tuning, CellOrderingBreaksTiesTowardsSmallerParameters) {
    CellRecord a{1.0, 0.1, 1.0, 1.0, {}, {0.1, 0.1, 0.2}, true};
    CellRecord b = a;
    b.c = 10.0;
    EXPECT_TRUE(detail::better_cell(a, b));
    EXPECT_FALSE(detail::better_cell(b, a));
    b = a;
    b.gamma = 0.01;
    EXPECT_TRUE(detail::better_cell(b, a));
    b = a;
    b.score.combined = 0.2 + 1e-13;
    EXPECT_FALSE(detail::better_cell(b, a));
    EXPECT_FALSE(detail::better_cell(a, b));
    b.score.combined = 0.1;
    b.c = 100.0;
    EXPECT_TRUE(detail::better_cell(b, a));
    CellRecord invalid = a;
    invalid.valid = false;
    invalid.score.combined = -1.0;
    EXPECT_TRUE(detail::better_cell(a, invalid));
}

TEST(Tuning, GridSearchScoresEveryCellAndReturnsTheArgmin) {
    const auto f = moons(LabelBudget::four_times_classes);
    const TuningProblem p(f.ds, f.split, rwm_spec(f));
    Grid g = Grid::standard();
    g.alpha_steps = {0.5, 1.0};
    const auto r = grid_search(p, g);
    EXPECT_EQ(r.evaluations, 6u * 6u * 2u);
    EXPECT_EQ(r.table.size(), r.evaluations);
    for (const auto& cell : r.table) {
        ASSERT_TRUE(cell.valid);
        EXPECT_EQ(cell.fold_errors.size(), p.inner_fold_count());
        EXPECT_FALSE(detail::better_cell(cell, r.best));
        EXPECT_NEAR(cell.score.combined, cell.score.val_error + 0.5 * cell.score.expected_error, 1e-15);
        EXPECT_GE(cell.score.expected_error, 0.0);
        EXPECT_LE(cell.score.expected_error, 1.0);
    }

    TuneOptions threaded;
    threaded.threads = 3;
    const auto r3 = grid_search(p, g, threaded);
    EXPECT_EQ(r3.best.c, r.best.c);
    EXPECT_EQ(r3.best.gamma, r.best.gamma);
    EXPECT_EQ(r3.best.score.combined, r.best.score.combined);
}

TEST(Tuning, LinearFamilyIgnoresGamma) {
    const auto f = moons(LabelBudget::four_times_classes);
    KernelSpec lin;
    lin.family = KernelFamily::linear;
    TuneOptions opt;
    opt.posterior_model = f.model;
    const auto r = grid_search(f.ds, f.split, lin, Grid::standard(), opt);
    EXPECT_EQ(r.evaluations, 6u);
}

TEST(Tuning, KeerthiLinVisitsTheLineOnly) {
    const auto f = moons(LabelBudget::ten_percent);
    const Grid g = Grid::standard();
    const auto kl = keerthi_lin_search(f.ds, f.split, rwm_spec(f), g);
    EXPECT_EQ(kl.stage1_evaluations, g.c_exponents.size());
    EXPECT_LE(kl.line_length, g.c_exponents.size());
    EXPECT_EQ(kl.result.evaluations, kl.stage1_evaluations + kl.line_length);
    EXPECT_FALSE(kl.fallback);
    for (const auto& cell : kl.result.table)
        EXPECT_NEAR(std::log10(cell.gamma), kl.c_tilde_exponent - std::log10(cell.c), 1e-9);
    EXPECT_LE(kl.result.evaluations, 12u);
}

TEST(Tuning, KeerthiLinFallsBackWhenTheLineMissesTheGrid) {
    const auto f = moons(LabelBudget::four_times_classes);
    Grid g;
    g.c_exponents = {0};
    g.gamma_exponents = {-2, 1};
    const auto kl = keerthi_lin_search(f.ds, f.split, rwm_spec(f), g);
    EXPECT_TRUE(kl.fallback);
    EXPECT_EQ(kl.line_length, 2u);
    EXPECT_EQ(kl.result.best.c, 1.0);
    EXPECT_THROW((void)keerthi_lin_search(TuningProblem(f.ds, f.split, rwm_spec(f)),
                                          TuningProblem(f.ds, f.split, rwm_spec(f)), g),
                 invalid_argument);
}

TEST(Tuning, SingleClassInnerFoldsAreSkipped) {
    const auto f = moons(LabelBudget::four_times_classes);
    // three labeled points; the second inner fold leaves one class only
    std::size_t a0 = 0, b0 = 0, c1 = 0;
    int seen0 = 0;
    bool got1 = false;
    for (const auto i : f.split.labeled_idx) {
        const int y = *f.ds.samples[i].label;
        if (y == 0 && seen0 == 0) { a0 = i; ++seen0; }
        else if (y == 0 && seen0 == 1) { b0 = i; ++seen0; }
        else if (y == 1 && !got1) { c1 = i; got1 = true; }
    }
    OuterSplit split;
    split.labeled_idx = {a0, b0, c1};
    std::sort(split.labeled_idx.begin(), split.labeled_idx.end());
    split.unlabeled_idx = f.split.unlabeled_idx;
    split.inner_folds = {{a0}, {b0, c1}};
    const TuningProblem p(f.ds, split, rwm_spec(f));
    std::size_t skipped = 0;
    const auto rec = p.evaluate(1.0, 1.0, 1.0, 1.0, {}, &skipped);
    EXPECT_EQ(skipped, 1u);
    ASSERT_EQ(rec.fold_errors.size(), 2u);
    EXPECT_TRUE(std::isnan(rec.fold_errors[1]));
    EXPECT_TRUE(rec.valid);

    Grid g;
    g.c_exponents = {0, 1};
    g.gamma_exponents = {0};
    const auto r = grid_search(p, g);
    EXPECT_EQ(r.skipped_folds, 2u);
    std::ostringstream trace;
    write_tuning_trace(trace, r);
    EXPECT_NE(trace.str().find("nan"), std::string::npos);

    split.inner_folds = {{a0, b0, c1}};
    const TuningProblem none(f.ds, split, rwm_spec(f));
    EXPECT_FALSE(none.evaluate(1.0, 1.0, 1.0, 1.0, {}).valid);

    split.inner_folds = {{f.split.unlabeled_idx.front()}};
    EXPECT_THROW(TuningProblem(f.ds, split, rwm_spec(f)), invalid_argument);
}

TEST(Tuning, ExpectedErrorModes) {
    MulticlassSolution sol;
    sol.num_classes = 3;
    BinarySvm b01, b02, b12;
    b01.class_pair = {0, 1};
    b02.class_pair = {0, 2};
    b12.class_pair = {1, 2};
    sol.binaries = {b01, b02, b12};
    VoteResult clear{0, {2, 1, 0}, {3.0, 2.0, 0.5}};
    VoteResult close{1, {1, 1, 1}, {-0.5, 2.0, 2.0}};
    VoteResult wide{2, {0, 1, 2}, {0.0, -1.5, -0.2}};
    const std::vector<VoteResult> votes{clear, close, wide};
    // vote_margin: every lead is at most one
    EXPECT_DOUBLE_EQ(TuningProblem::expected_error(sol, votes, ExpectedErrorMode::vote_margin), 1.0);
    // decision_margin: pair (0,1) for the first two, (1,2) for the third
    EXPECT_DOUBLE_EQ(TuningProblem::expected_error(sol, votes, ExpectedErrorMode::decision_margin), 2.0 / 3.0);
    EXPECT_DOUBLE_EQ(TuningProblem::expected_error(sol, votes, ExpectedErrorMode::none), 0.0);
    EXPECT_DOUBLE_EQ(TuningProblem::expected_error(sol, {}, ExpectedErrorMode::vote_margin), 0.0);
}

TEST(Tuning, MixturePosteriorNeedsAModel) {
    const auto f = moons(LabelBudget::four_times_classes);
    KernelSpec rbf;
    const TuningProblem bare(f.ds, f.split, rbf);
    EXPECT_THROW((void)bare.evaluate(1.0, 1.0, 1.0, 1.0, {}), invalid_argument);
    TuneOptions none;
    none.expected_error = ExpectedErrorMode::none;
    const auto rec = bare.evaluate(1.0, 1.0, 1.0, 1.0, none);
    EXPECT_EQ(rec.score.expected_error, 0.0);
    EXPECT_EQ(rec.score.combined, rec.score.val_error);

    const TuningProblem with(f.ds, f.split, rbf, 1, f.model.get());
    const auto scored = with.evaluate(1.0, 1.0, 1.0, 1.0, {});
    EXPECT_GT(scored.score.expected_error, 0.0);
    EXPECT_LT(scored.score.expected_error, 1.0);
}

TEST(Tuning, LambdaScalesTheUnlabeledTerm) {
    const auto f = moons(LabelBudget::four_times_classes);
    const TuningProblem p(f.ds, f.split, rwm_spec(f));
    TuneOptions opt;
    opt.lambda = 0.0;
    const auto a = p.evaluate(10.0, 0.1, 1.0, 1.0, opt);
    opt.lambda = 2.0;
    const auto b = p.evaluate(10.0, 0.1, 1.0, 1.0, opt);
    EXPECT_EQ(a.score.combined, a.score.val_error);
    EXPECT_NEAR(b.score.combined, b.score.val_error + 2.0 * b.score.expected_error, 1e-15);
    EXPECT_EQ(a.score.val_error, b.score.val_error);
}

}  // namespace
