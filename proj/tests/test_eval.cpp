#include "rwm/eval.hpp"

#include <gtest/gtest.h>

#include <numeric>
#include <sstream>

namespace {

using namespace rwm;

// Published mean accuracies of four classifiers on twenty datasets (columns:
// RWM, GMM, RBF, LAP kernels).
const std::vector<std::vector<double>> kTable = {
    {82.46, 79.86, 79.86, 81.74}, {83.72, 66.48, 71.5, 74.88},  {87.92, 78.64, 84.28, 86.52},
    {76.09, 73.77, 75.51, 70.43}, {65.9, 65.9, 65.9, 69.3},     {75.31, 72.92, 75.97, 71.45},
    {50.94, 47.65, 48.59, 36.46}, {82.96, 81.85, 81.85, 82.59}, {92.0, 92.67, 89.33, 90.67},
    {92.36, 89.77, 90.63, 89.93}, {72.41, 72.3, 71.37, 70.63},  {69.14, 66.66, 66.66, 68.87},
    {90.16, 87.6, 87.68, 86.48},  {79.16, 80.37, 74.79, 61.58}, {93.33, 93.33, 90.48, 88.57},
    {99.12, 93.38, 92.12, 98.25}, {49.64, 44.66, 43.96, 43.85}, {50.51, 43.64, 41.72, 37.98},
    {96.05, 93.81, 92.13, 95.48}, {42.26, 46.5, 47.1, 36.45}};

TEST(RankStatistics, PublishedTable) {
    const auto fr = friedman_ranks(kTable);
    const std::vector<double> expected{1.375, 2.75, 2.825, 3.05};
    for (std::size_t k = 0; k < 4; ++k) EXPECT_NEAR(fr.avg_ranks[k], expected[k], 1e-9);
    EXPECT_EQ(fr.df, 3u);
    // 12N/(S(S+1)) [sum R^2 - S(S+1)^2/4] with N=20, S=4
    const double sum_sq = 1.375 * 1.375 + 2.75 * 2.75 + 2.825 * 2.825 + 3.05 * 3.05;
    EXPECT_NEAR(fr.chi2, 12.0 * 20.0 / 20.0 * (sum_sq - 25.0), 1e-9);
    EXPECT_NEAR(fr.chi2, 20.835, 1e-9);
    EXPECT_EQ(wins(kTable), (std::vector<double>{14.5, 2.5, 2.0, 1.0}));
}

TEST(RankStatistics, RowInvariants) {
    for (const auto& row : kTable) {
        const auto r = rank_row(row);
        EXPECT_DOUBLE_EQ(std::accumulate(r.begin(), r.end(), 0.0), 10.0);
    }
    EXPECT_EQ(rank_row({0.5, 0.9, 0.5, 0.1}), (std::vector<double>{2.5, 1.0, 2.5, 4.0}));
    EXPECT_EQ(rank_row({1.0, 1.0, 1.0}), (std::vector<double>{2.0, 2.0, 2.0}));
    const auto w = wins(kTable);
    EXPECT_DOUBLE_EQ(std::accumulate(w.begin(), w.end(), 0.0), 20.0);
    EXPECT_EQ(wins({{1.0, 1.0, 1.0}}), (std::vector<double>{1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0}));
    EXPECT_THROW((void)friedman_ranks({{1.0, 2.0}}), invalid_argument);
    EXPECT_THROW((void)friedman_ranks({{1.0}, {2.0}}), invalid_argument);
}

TEST(RankStatistics, CriticalDifference) {
    EXPECT_NEAR(nemenyi_cd(4, 20, 0.01), 1.337, 1e-3);
    EXPECT_NEAR(nemenyi_cd(4, 20, 0.1), 0.960, 1e-3);
    EXPECT_NEAR(nemenyi_cd(4, 20, 0.05), 2.569 * std::sqrt(20.0 / 120.0), 1e-12);
    EXPECT_DOUBLE_EQ(nemenyi_q(2, 0.05), 1.960);
    EXPECT_DOUBLE_EQ(nemenyi_q(10, 0.05), 3.164);
    EXPECT_THROW((void)nemenyi_q(11, 0.05), invalid_argument);
    EXPECT_THROW((void)nemenyi_q(4, 0.2), invalid_argument);
    EXPECT_THROW((void)nemenyi_cd(4, 0, 0.05), invalid_argument);
    for (std::size_t s = 2; s <= 10; ++s) {
        EXPECT_GT(nemenyi_cd(s, 10, 0.05), nemenyi_cd(s, 20, 0.05));
        EXPECT_GT(nemenyi_q(s, 0.05), nemenyi_q(s, 0.1));
    }
}

TEST(RankStatistics, CdGroupsOnPublishedRanks) {
    const std::vector<double> ranks{1.375, 2.75, 2.825, 3.05};
    for (const double a : {0.01, 0.1}) {
        const auto g = cd_groups(ranks, nemenyi_cd(4, 20, a), a);
        ASSERT_EQ(g.size(), 2u);
        EXPECT_EQ(g[0].members, (std::vector<std::size_t>{0}));
        EXPECT_EQ(g[1].members, (std::vector<std::size_t>{1, 2, 3}));
        EXPECT_EQ(g[1].group_id, 1u);
    }
    // overlapping runs
    const auto g = cd_groups({1.0, 1.8, 2.6, 3.4}, 1.0, 0.05);
    ASSERT_EQ(g.size(), 3u);
    EXPECT_EQ(g[0].members, (std::vector<std::size_t>{0, 1}));
    EXPECT_EQ(g[1].members, (std::vector<std::size_t>{1, 2}));
    EXPECT_EQ(g[2].members, (std::vector<std::size_t>{2, 3}));
    EXPECT_EQ(cd_groups({2.0, 1.0}, 5.0, 0.05).front().members, (std::vector<std::size_t>{1, 0}));
}

ExperimentConfig parse(const std::string& text) {
    std::istringstream in(text);
    return parse_config(in);
}

std::size_t error_line(const std::string& text) {
    try {
        (void)parse(text);
    } catch (const parse_error& e) {
        return e.line();
    }
    return 0;
}

TEST(Config, ParsesEveryKey) {
    const auto cfg = parse(
        "# comment\n"
        "name = trial\n"
        "dataset.iris = a.csv, a.schema\n"
        "dataset.moons = builtin:two_moons, 300, 7   # inline comment\n"
        "budget = ten_percent\n"
        "kernels = rwm, rbf\n"
        "search = keerthi_lin\n"
        "c_exponents = -1..2\n"
        "gamma_exponents = 0, 1\n"
        "alpha_steps = 0.5, 1\n"
        "beta_steps = 1\n"
        "lambda = 0.25\n"
        "expected_error = decision_margin\n"
        "labels_per_class = 3\n"
        "inner_folds = 3\n"
        "outer_folds = 4\n"
        "density_weighting = rank\n"
        "normalize = false\n"
        "seed = 42\n"
        "vi.alpha0 = 0.001, 0.01\n"
        "vi.beta0 = 1\n"
        "vi.w0 = 0.5, 1\n"
        "vi.k_init = 10\n"
        "vi.max_iter = 200\n"
        "vi.tol = 1e-5\n"
        "vi.prune_weight = 0.01\n"
        "vi.bandwidth = 0.3\n"
        "vi.mc_samples = 500\n"
        "check_psd = true\n"
        "psd_tol = 1e-9\n"
        "threads = 2\n"
        "report = out.txt\n"
        "cd_data = cd.csv\n");
    EXPECT_EQ(cfg.name, "trial");
    ASSERT_EQ(cfg.datasets.size(), 2u);
    EXPECT_EQ(cfg.datasets[0].csv_path, "a.csv");
    EXPECT_EQ(cfg.datasets[0].schema_path, "a.schema");
    EXPECT_EQ(cfg.datasets[1].builtin, "two_moons");
    EXPECT_EQ(cfg.datasets[1].builtin_size, 300u);
    EXPECT_EQ(cfg.datasets[1].builtin_seed, 7u);
    EXPECT_EQ(cfg.budget, LabelBudget::ten_percent);
    EXPECT_EQ(cfg.kernels, (std::vector<KernelFamily>{KernelFamily::rwm, KernelFamily::rbf}));
    EXPECT_EQ(cfg.search, SearchMode::keerthi_lin);
    EXPECT_EQ(cfg.grid.c_exponents, (std::vector<int>{-1, 0, 1, 2}));
    EXPECT_EQ(cfg.mixed_grid.c_exponents, cfg.grid.c_exponents);
    EXPECT_EQ(cfg.grid.gamma_exponents, (std::vector<int>{0, 1}));
    EXPECT_EQ(cfg.mixed_grid.alpha_steps, (std::vector<double>{0.5, 1.0}));
    EXPECT_EQ(cfg.grid.alpha_steps, (std::vector<double>{1.0}));
    EXPECT_DOUBLE_EQ(cfg.tune.lambda, 0.25);
    EXPECT_EQ(cfg.tune.expected_error, ExpectedErrorMode::decision_margin);
    EXPECT_EQ(cfg.selection.labels_per_class, 3u);
    EXPECT_EQ(cfg.selection.inner_folds, 3u);
    EXPECT_EQ(cfg.outer_folds, 4u);
    EXPECT_EQ(cfg.selection.weighting, DensityWeighting::rank);
    EXPECT_FALSE(cfg.normalize);
    EXPECT_EQ(cfg.seed, 42u);
    EXPECT_EQ(cfg.vi.alpha0, (std::vector<double>{0.001, 0.01}));
    EXPECT_EQ(cfg.vi.w0, (std::vector<double>{0.5, 1.0}));
    EXPECT_EQ(cfg.vi.base.k_init, 10u);
    EXPECT_EQ(cfg.vi.base.max_iter, 200u);
    EXPECT_DOUBLE_EQ(cfg.vi.base.tol, 1e-5);
    EXPECT_DOUBLE_EQ(cfg.vi.base.prune_weight, 0.01);
    EXPECT_DOUBLE_EQ(cfg.vi.bandwidth, 0.3);
    EXPECT_EQ(cfg.vi.mc_samples, 500u);
    EXPECT_TRUE(cfg.check_psd);
    EXPECT_DOUBLE_EQ(cfg.psd_tol, 1e-9);
    EXPECT_EQ(cfg.threads, 2u);
    EXPECT_EQ(cfg.tune.threads, 2u);
    EXPECT_EQ(cfg.report_path, "out.txt");
    EXPECT_EQ(cfg.cd_path, "cd.csv");
}

TEST(Config, ErrorsCarryLineNumbers) {
    const std::string head = "dataset.a = builtin:two_moons\n";
    EXPECT_EQ(error_line(head + "budget = all\nbudget = all\n"), 3u);
    EXPECT_EQ(error_line(head + "\n\ncolour = red\n"), 4u);
    EXPECT_EQ(error_line(head + "seed 3\n"), 2u);
    EXPECT_EQ(error_line(head + "seed = -3\n"), 2u);
    EXPECT_EQ(error_line(head + "kernels = rwm, poly\n"), 2u);
    EXPECT_EQ(error_line(head + "normalize = maybe\n"), 2u);
    EXPECT_EQ(error_line(head + "c_exponents = 3..1\n"), 2u);
    EXPECT_EQ(error_line(head + "dataset.b = builtin:spirals\n"), 2u);
    EXPECT_EQ(error_line(head + "dataset.b = only.csv\n"), 2u);
    EXPECT_EQ(error_line(head + "lambda =\n"), 2u);
    EXPECT_EQ(error_line(head + "kernels = linear\n"), 2u);
    EXPECT_EQ(error_line("name = x\nseed = 1\n"), 2u);  // no datasets
    EXPECT_EQ(error_line(head + "outer_folds = 1\n"), 2u);
    EXPECT_EQ(error_line(head), 0u);
}

ExperimentConfig small_config() {
    ExperimentConfig cfg;
    cfg.name = "small";
    DatasetSource a;
    a.name = "moons";
    a.builtin = "two_moons";
    a.builtin_size = 160;
    a.builtin_seed = 5;
    DatasetSource b = a;
    b.name = "rings";
    b.builtin = "concentric";
    cfg.datasets = {a, b};
    cfg.kernels = {KernelFamily::rwm, KernelFamily::rbf};
    cfg.grid.c_exponents = {0, 1};
    cfg.grid.gamma_exponents = {-1, 0};
    cfg.vi.base.k_init = 8;
    cfg.check_psd = true;
    return cfg;
}

TEST(Experiment, PlanListsEveryCell) {
    const auto cfg = small_config();
    const auto plan = plan_experiment(cfg);
    ASSERT_EQ(plan.size(), 2u * 5u * 2u);
    EXPECT_EQ(plan.front(), "moons fold 0 kernel rwm budget four_times_classes");
    EXPECT_EQ(plan.back(), "rings fold 4 kernel rbf budget four_times_classes");
}

TEST(Experiment, SmallRunProducesRanksAndDeterministicReports) {
    const auto cfg = small_config();
    const auto rep = run_experiment(cfg);
    ASSERT_EQ(rep.datasets.size(), 2u);
    EXPECT_FALSE(rep.partial_failure());
    for (const auto& d : rep.datasets) {
        ASSERT_TRUE(d.valid) << d.error;
        EXPECT_EQ(d.components.size(), 5u);
        for (const auto& k : d.kernels) {
            ASSERT_EQ(k.folds.size(), 5u);
            for (const auto& f : k.folds) {
                EXPECT_TRUE(f.valid) << f.error;
                EXPECT_EQ(f.labeled, 8u);
                EXPECT_EQ(f.tune_evaluations, 4u);
                EXPECT_GE(f.accuracy, 0.0);
                EXPECT_LE(f.accuracy, 100.0);
                EXPECT_EQ(f.psd.has_value(), k.family == KernelFamily::rwm);
            }
        }
    }
    ASSERT_TRUE(rep.ranks_available);
    EXPECT_EQ(rep.ranked_datasets, 2u);
    EXPECT_DOUBLE_EQ(rep.avg_ranks[0] + rep.avg_ranks[1], 3.0);
    EXPECT_DOUBLE_EQ(rep.win_counts[0] + rep.win_counts[1], 2.0);
    EXPECT_EQ(rep.cd.size(), 3u);

    std::ostringstream with_timing, plain, again, cd;
    write_report(with_timing, rep, true);
    write_report(plain, rep, false);
    write_report(again, run_experiment(cfg), false);
    write_cd_data(cd, rep);
    EXPECT_NE(with_timing.str().find("[timing]"), std::string::npos);
    EXPECT_NE(with_timing.str().find("timing.moons.rwm.model_estimation"), std::string::npos);
    EXPECT_EQ(plain.str().find("[timing]"), std::string::npos);
    EXPECT_EQ(plain.str(), again.str());
    EXPECT_EQ(with_timing.str().substr(0, plain.str().size()), plain.str());
    EXPECT_NE(plain.str().find("dataset.rings.rbf.accuracy_mean"), std::string::npos);
    EXPECT_EQ(cd.str().rfind("alpha,CD,classifier,avg_rank,group_id\n", 0), 0u);

    const auto ledger = runtime_ledger(rep);
    EXPECT_EQ(ledger.size(), 4u);
    for (const auto& row : ledger) {
        EXPECT_GE(row.mean.tuning, 0.0);
        EXPECT_EQ(row.mean.model_estimation > 0.0, row.family == KernelFamily::rwm);
    }
}

TEST(Experiment, SingleKernelAllLabelsWarnsAboutRanks) {
    auto cfg = small_config();
    cfg.datasets.resize(1);
    cfg.kernels = {KernelFamily::rbf};
    cfg.budget = LabelBudget::all;
    cfg.check_psd = false;
    const auto rep = run_experiment(cfg);
    ASSERT_TRUE(rep.datasets[0].valid);
    const auto& k = rep.datasets[0].kernels[0];
    ASSERT_EQ(k.folds.size(), 5u);
    std::size_t labeled = 0;
    for (const auto& f : k.folds) {
        EXPECT_TRUE(f.valid);
        labeled += f.labeled;
    }
    EXPECT_EQ(labeled, 4u * 160u);
    EXPECT_FALSE(rep.ranks_available);
    ASSERT_FALSE(rep.warnings.empty());
    EXPECT_NE(rep.warnings.front().find("fewer than two kernels"), std::string::npos);
    std::ostringstream cd;
    write_cd_data(cd, rep);
    EXPECT_EQ(cd.str(), "alpha,CD,classifier,avg_rank,group_id\n");
}

TEST(Experiment, BrokenDatasetIsReportedNotFatal) {
    auto cfg = small_config();
    DatasetSource missing;
    missing.name = "missing";
    missing.csv_path = "/nonexistent/x.csv";
    missing.schema_path = "/nonexistent/x.schema";
    cfg.datasets = {cfg.datasets[0], missing};
    cfg.check_psd = false;
    const auto rep = run_experiment(cfg);
    EXPECT_TRUE(rep.partial_failure());
    EXPECT_FALSE(rep.datasets[1].valid);
    EXPECT_FALSE(rep.ranks_available);
    std::ostringstream os;
    write_report(os, rep, false);
    EXPECT_NE(os.str().find("dataset.missing.error"), std::string::npos);
}

TEST(Experiment, ReferenceBandwidthAndVi) {
    Matrix x(4, 1);
    x << -1.0, 0.0, 1.0, 2.0;
    // sample variance 5/3, d = 1
    EXPECT_NEAR(reference_bandwidth(x), std::sqrt(5.0 / 3.0) * std::pow(4.0 / 3.0, 0.2) * std::pow(4.0, -0.2), 1e-12);

    const auto ds = synthetic::five_processes(60, 2);
    ViSearch s;
    s.w0 = {0.5, 1.0};
    s.mc_samples = 300;
    const auto sel = select_vi_model(ds.continuous_matrix(), s, 3);
    EXPECT_EQ(sel.candidates, 2u);
    ASSERT_TRUE(sel.model);
    EXPECT_TRUE(sel.chosen.w0 == 0.5 || sel.chosen.w0 == 1.0);
    EXPECT_GE(sel.representativity, 0.0);
}

}  // namespace
