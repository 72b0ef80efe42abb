#pragma once

// Benchmark protocol: outer stratified CV, unsupervised model estimation,
// labeled-subset selection, per-kernel tuning and testing, plus the rank
// statistics used to compare classifiers across datasets.

#include "rwm/common.hpp"
#include "rwm/data.hpp"
#include "rwm/gmm.hpp"
#include "rwm/kernel.hpp"
#include "rwm/svm.hpp"
#include "rwm/synthetic.hpp"
#include "rwm/tuning.hpp"

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <istream>
#include <map>
#include <memory>
#include <numeric>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace rwm {

// ---------------------------------------------------------------------------
// Rank statistics

struct FriedmanResult {
    /// Per-dataset ranks (1 = best accuracy, ties averaged).
    std::vector<std::vector<double>> ranks;
    std::vector<double> avg_ranks;
    double chi2 = 0.0;
    std::size_t df = 0;
};

/// Ranks of one row of accuracies; higher accuracy gets the lower rank.
inline std::vector<double> rank_row(const std::vector<double>& acc) {
    const std::size_t s = acc.size();
    std::vector<std::size_t> order(s);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return acc[a] > acc[b]; });
    std::vector<double> r(s);
    std::size_t i = 0;
    while (i < s) {
        std::size_t j = i;
        while (j + 1 < s && acc[order[j + 1]] == acc[order[i]]) ++j;
        const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t t = i; t <= j; ++t) r[order[t]] = avg;
        i = j + 1;
    }
    return r;
}

/// chi2_F = 12 N / (S (S + 1)) * (sum_j R_j^2 - S (S + 1)^2 / 4).
inline FriedmanResult friedman_ranks(const std::vector<std::vector<double>>& acc_table) {
    const std::size_t n = acc_table.size();
    if (n < 2) throw invalid_argument("friedman: need at least two datasets");
    const std::size_t s = acc_table.front().size();
    if (s < 2) throw invalid_argument("friedman: need at least two classifiers");
    FriedmanResult res;
    res.avg_ranks.assign(s, 0.0);
    for (const auto& row : acc_table) {
        if (row.size() != s) throw invalid_argument("friedman: ragged accuracy table");
        for (const double v : row)
            if (std::isnan(v)) throw invalid_argument("friedman: NaN accuracy");
        res.ranks.push_back(rank_row(row));
        for (std::size_t j = 0; j < s; ++j) res.avg_ranks[j] += res.ranks.back()[j];
    }
    const double nn = static_cast<double>(n);
    const double ss = static_cast<double>(s);
    double sum_sq = 0.0;
    for (auto& r : res.avg_ranks) {
        r /= nn;
        sum_sq += r * r;
    }
    res.chi2 = 12.0 * nn / (ss * (ss + 1.0)) * (sum_sq - ss * (ss + 1.0) * (ss + 1.0) / 4.0);
    res.df = s - 1;
    return res;
}

/// One win per dataset, shared equally among the classifiers with the top
/// accuracy.
inline std::vector<double> wins(const std::vector<std::vector<double>>& acc_table) {
    if (acc_table.empty()) return {};
    std::vector<double> w(acc_table.front().size(), 0.0);
    for (const auto& row : acc_table) {
        if (row.size() != w.size()) throw invalid_argument("wins: ragged accuracy table");
        const double best = *std::max_element(row.begin(), row.end());
        const auto ties = static_cast<double>(std::count(row.begin(), row.end(), best));
        for (std::size_t j = 0; j < row.size(); ++j)
            if (row[j] == best) w[j] += 1.0 / ties;
    }
    return w;
}

/// Studentized range quantile divided by sqrt(2) for S = 2..10 classifiers.
/// The S = 4 entries at alpha 0.01 and 0.1 are the values used for the
/// published critical differences.
inline double nemenyi_q(std::size_t s, double alpha) {
    static constexpr std::array<double, 9> q01{2.576, 2.913, 3.275, 3.255, 3.364, 3.452, 3.526, 3.590, 3.646};
    static constexpr std::array<double, 9> q05{1.960, 2.343, 2.569, 2.728, 2.850, 2.949, 3.031, 3.102, 3.164};
    static constexpr std::array<double, 9> q10{1.645, 2.052, 2.351, 2.459, 2.589, 2.693, 2.780, 2.855, 2.920};
    if (s < 2 || s > 10) throw invalid_argument("nemenyi: classifier count must lie in 2..10");
    const auto i = s - 2;
    if (alpha == 0.01) return q01[i];
    if (alpha == 0.05) return q05[i];
    if (alpha == 0.1) return q10[i];
    throw invalid_argument("nemenyi: alpha must be 0.01, 0.05 or 0.1");
}

/// CD = q_alpha * sqrt(S (S + 1) / (6 N)).
inline double nemenyi_cd(std::size_t s, std::size_t n, double alpha) {
    if (n == 0) throw invalid_argument("nemenyi: need at least one dataset");
    const double ss = static_cast<double>(s);
    return nemenyi_q(s, alpha) * std::sqrt(ss * (ss + 1.0) / (6.0 * static_cast<double>(n)));
}

struct CdGroup {
    double alpha = 0.0;
    double cd = 0.0;
    std::size_t group_id = 0;
    /// Classifier indices whose average ranks differ by less than cd.
    std::vector<std::size_t> members;
};

/// Maximal runs of rank-sorted classifiers that are not significantly
/// different.
inline std::vector<CdGroup> cd_groups(const std::vector<double>& avg_ranks, double cd, double alpha) {
    std::vector<std::size_t> order(avg_ranks.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return avg_ranks[a] < avg_ranks[b]; });
    std::vector<CdGroup> out;
    std::size_t last_end = 0;
    bool any = false;
    for (std::size_t i = 0; i < order.size(); ++i) {
        std::size_t j = i;
        while (j + 1 < order.size() && avg_ranks[order[j + 1]] - avg_ranks[order[i]] < cd) ++j;
        if (any && j <= last_end) continue;
        CdGroup g{alpha, cd, out.size(), {}};
        for (std::size_t t = i; t <= j; ++t) g.members.push_back(order[t]);
        out.push_back(std::move(g));
        last_end = j;
        any = true;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Configuration

enum class SearchMode { grid, keerthi_lin };

struct DatasetSource {
    std::string name;
    std::string csv_path;
    std::string schema_path;
    /// Non-empty for generated datasets: concentric, two_moons, five_processes.
    std::string builtin;
    std::size_t builtin_size = 800;
    std::uint64_t builtin_seed = 1;
};

/// Candidate values searched for the VI hyperparameters; each combination is
/// scored by representativity and the lowest score wins.
struct ViSearch {
    ViHyperParams base{};
    std::vector<double> alpha0{1e-3};
    std::vector<double> beta0{1.0};
    std::vector<double> w0{1.0};
    /// Parzen bandwidth; 0 selects a normal-reference rule.
    double bandwidth = 0.0;
    std::size_t mc_samples = 1000;
};

struct ExperimentConfig {
    std::string name = "experiment";
    std::vector<DatasetSource> datasets;
    LabelBudget budget = LabelBudget::four_times_classes;
    SelectionOptions selection{};
    std::vector<KernelFamily> kernels{KernelFamily::rwm, KernelFamily::gmm, KernelFamily::rbf};
    Grid grid = Grid::standard();
    /// Used for datasets with categorical columns.
    Grid mixed_grid = Grid::mixed();
    SearchMode search = SearchMode::grid;
    TuneOptions tune{};
    std::uint64_t seed = 1;
    ViSearch vi{};
    std::size_t outer_folds = 5;
    bool normalize = true;
    /// Run psd_check on every final rwm/gmm training Gram.
    bool check_psd = false;
    double psd_tol = 1e-8;
    std::vector<double> cd_alphas{0.01, 0.05, 0.1};
    std::string report_path;
    std::string cd_path;
    unsigned threads = 1;

    void validate() const {
        if (datasets.empty()) throw invalid_argument("config: no datasets");
        if (kernels.empty()) throw invalid_argument("config: no kernels");
        if (outer_folds < 2) throw invalid_argument("config: outer_folds must be at least 2");
        if (selection.inner_folds < 2) throw invalid_argument("config: inner_folds must be at least 2");
        grid.validate();
        mixed_grid.validate();
        if (vi.alpha0.empty() || vi.beta0.empty() || vi.w0.empty()) throw invalid_argument("config: empty VI search list");
        for (const auto k : kernels)
            if (k == KernelFamily::linear) throw invalid_argument("config: linear kernel is only used inside tuning");
    }
};

namespace detail {

inline std::vector<std::string_view> list_items(std::string_view v) {
    std::vector<std::string_view> out;
    for (auto part : split(v, ',')) {
        part = trim(part);
        if (!part.empty()) out.push_back(part);
    }
    return out;
}

inline std::vector<int> parse_int_list(std::string_view v, std::size_t line) {
    std::vector<int> out;
    for (const auto item : list_items(v)) {
        const auto dots = item.find("..");
        if (dots == std::string_view::npos) {
            out.push_back(parse_int<int>(item, line));
            continue;
        }
        const int lo = parse_int<int>(trim(item.substr(0, dots)), line);
        const int hi = parse_int<int>(trim(item.substr(dots + 2)), line);
        if (hi < lo) throw parse_error("config: empty range '" + std::string{item} + "'", line);
        for (int i = lo; i <= hi; ++i) out.push_back(i);
    }
    if (out.empty()) throw parse_error("config: empty list", line);
    return out;
}

inline std::vector<double> parse_real_list(std::string_view v, std::size_t line) {
    std::vector<double> out;
    for (const auto item : list_items(v)) out.push_back(parse_real(item, line));
    if (out.empty()) throw parse_error("config: empty list", line);
    return out;
}

inline bool parse_bool(std::string_view v, std::size_t line) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw parse_error("config: expected a boolean, got '" + std::string{v} + "'", line);
}

}  // namespace detail

/// Key-value text, one `key = value` per line, '#' starts a comment.
///
///   dataset.<name> = <csv>, <schema>      or   dataset.<name> = builtin:<generator>[, <n>[, <seed>]]
///   budget = four_times_classes | ten_percent | all
///   kernels = rwm, gmm, rbf
///   search = grid | keerthi_lin
///   c_exponents = -3..2                  gamma_exponents = -3..2
///   alpha_steps = 1                      beta_steps = 1
///   lambda = 0.5                         expected_error = mixture_posterior | decision_margin | vote_margin | none
///   labels_per_class = 4                 inner_folds = 4       outer_folds = 5
///   density_weighting = raw | rank       normalize = true      seed = 1
///   vi.alpha0 = 0.001                    vi.beta0 = 1          vi.w0 = 0.1, 0.5, 1
///   vi.k_init = 20    vi.max_iter = 500  vi.tol = 1e-6         vi.prune_weight = 0.001
///   vi.bandwidth = 0  vi.mc_samples = 1000
///   check_psd = false                    threads = 1
///   report = <path>                      cd_data = <path>
inline ExperimentConfig parse_config(std::istream& is) {
    ExperimentConfig cfg;
    cfg.datasets.clear();
    std::string line;
    std::size_t lineno = 0;
    std::set<std::string> seen;
    while (std::getline(is, line)) {
        ++lineno;
        std::string_view t = line;
        if (const auto hash = t.find('#'); hash != std::string_view::npos) t = t.substr(0, hash);
        t = trim(t);
        if (t.empty()) continue;
        const auto eq = t.find('=');
        if (eq == std::string_view::npos) throw parse_error("config: expected 'key = value'", lineno);
        const std::string key{trim(t.substr(0, eq))};
        const auto value = trim(t.substr(eq + 1));
        if (key.empty()) throw parse_error("config: empty key", lineno);
        if (value.empty()) throw parse_error("config: empty value for '" + key + "'", lineno);
        if (!seen.insert(key).second) throw parse_error("config: duplicate key '" + key + "'", lineno);
        try {
            if (key.rfind("dataset.", 0) == 0) {
                DatasetSource src;
                src.name = key.substr(8);
                if (src.name.empty()) throw parse_error("config: dataset needs a name", lineno);
                const auto items = detail::list_items(value);
                if (!items.empty() && items[0].rfind("builtin:", 0) == 0) {
                    src.builtin = std::string{items[0].substr(8)};
                    if (src.builtin != "concentric" && src.builtin != "two_moons" && src.builtin != "five_processes")
                        throw parse_error("config: unknown builtin dataset '" + src.builtin + "'", lineno);
                    if (items.size() > 3) throw parse_error("config: builtin takes at most size and seed", lineno);
                    if (items.size() > 1) src.builtin_size = parse_int<std::size_t>(items[1], lineno);
                    if (items.size() > 2) src.builtin_seed = parse_int<std::uint64_t>(items[2], lineno);
                } else {
                    if (items.size() != 2) throw parse_error("config: dataset needs '<csv>, <schema>'", lineno);
                    src.csv_path = std::string{items[0]};
                    src.schema_path = std::string{items[1]};
                }
                cfg.datasets.push_back(std::move(src));
            } else if (key == "name") {
                cfg.name = std::string{value};
            } else if (key == "budget") {
                cfg.budget = parse_budget(value);
            } else if (key == "kernels") {
                cfg.kernels.clear();
                for (const auto item : detail::list_items(value)) cfg.kernels.push_back(parse_family(item));
            } else if (key == "search") {
                if (value == "grid") cfg.search = SearchMode::grid;
                else if (value == "keerthi_lin") cfg.search = SearchMode::keerthi_lin;
                else throw parse_error("config: search must be grid or keerthi_lin", lineno);
            } else if (key == "c_exponents") {
                cfg.grid.c_exponents = detail::parse_int_list(value, lineno);
                cfg.mixed_grid.c_exponents = cfg.grid.c_exponents;
            } else if (key == "gamma_exponents") {
                cfg.grid.gamma_exponents = detail::parse_int_list(value, lineno);
                cfg.mixed_grid.gamma_exponents = cfg.grid.gamma_exponents;
            } else if (key == "alpha_steps") {
                cfg.mixed_grid.alpha_steps = detail::parse_real_list(value, lineno);
            } else if (key == "beta_steps") {
                cfg.mixed_grid.beta_steps = detail::parse_real_list(value, lineno);
            } else if (key == "lambda") {
                cfg.tune.lambda = parse_real(value, lineno);
            } else if (key == "expected_error") {
                cfg.tune.expected_error = parse_expected_error_mode(value);
            } else if (key == "labels_per_class") {
                cfg.selection.labels_per_class = parse_int<std::size_t>(value, lineno);
            } else if (key == "inner_folds") {
                cfg.selection.inner_folds = parse_int<std::size_t>(value, lineno);
            } else if (key == "outer_folds") {
                cfg.outer_folds = parse_int<std::size_t>(value, lineno);
            } else if (key == "density_weighting") {
                cfg.selection.weighting = parse_weighting(value);
            } else if (key == "normalize") {
                cfg.normalize = detail::parse_bool(value, lineno);
            } else if (key == "seed") {
                cfg.seed = parse_int<std::uint64_t>(value, lineno);
            } else if (key == "vi.alpha0") {
                cfg.vi.alpha0 = detail::parse_real_list(value, lineno);
            } else if (key == "vi.beta0") {
                cfg.vi.beta0 = detail::parse_real_list(value, lineno);
            } else if (key == "vi.w0") {
                cfg.vi.w0 = detail::parse_real_list(value, lineno);
            } else if (key == "vi.k_init") {
                cfg.vi.base.k_init = parse_int<std::size_t>(value, lineno);
            } else if (key == "vi.max_iter") {
                cfg.vi.base.max_iter = parse_int<std::size_t>(value, lineno);
            } else if (key == "vi.tol") {
                cfg.vi.base.tol = parse_real(value, lineno);
            } else if (key == "vi.prune_weight") {
                cfg.vi.base.prune_weight = parse_real(value, lineno);
            } else if (key == "vi.bandwidth") {
                cfg.vi.bandwidth = parse_real(value, lineno);
            } else if (key == "vi.mc_samples") {
                cfg.vi.mc_samples = parse_int<std::size_t>(value, lineno);
            } else if (key == "check_psd") {
                cfg.check_psd = detail::parse_bool(value, lineno);
            } else if (key == "psd_tol") {
                cfg.psd_tol = parse_real(value, lineno);
            } else if (key == "threads") {
                cfg.threads = parse_int<unsigned>(value, lineno);
            } else if (key == "report") {
                cfg.report_path = std::string{value};
            } else if (key == "cd_data") {
                cfg.cd_path = std::string{value};
            } else {
                throw parse_error("config: unknown key '" + key + "'", lineno);
            }
        } catch (const parse_error&) {
            throw;
        } catch (const error& e) {
            throw parse_error(std::string{"config: "} + e.what(), lineno);
        }
    }
    cfg.tune.threads = cfg.threads;
    try {
        cfg.validate();
    } catch (const invalid_argument& e) {
        throw parse_error(e.what(), lineno);
    }
    return cfg;
}

inline ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw error("cannot open config file '" + path + "'");
    return parse_config(in);
}

inline Dataset load_source(const DatasetSource& src) {
    if (src.builtin == "concentric") return synthetic::concentric_gaussians(src.builtin_size, src.builtin_seed);
    if (src.builtin == "two_moons") return synthetic::two_moons(src.builtin_size, 0.1, src.builtin_seed);
    if (src.builtin == "five_processes")
        return synthetic::five_processes(std::max<std::size_t>(src.builtin_size / 5, 1), src.builtin_seed);
    if (!src.builtin.empty()) throw invalid_argument("unknown builtin dataset '" + src.builtin + "'");
    return load_dataset(src.csv_path, src.schema_path);
}

// ---------------------------------------------------------------------------
// Model estimation

struct ModelSelection {
    std::shared_ptr<const MixtureModel> model;
    ViHyperParams chosen{};
    double representativity = 0.0;
    std::size_t candidates = 0;
    bool converged = false;
};

/// Normal-reference bandwidth for an isotropic Parzen window.
inline double reference_bandwidth(const Matrix& X) {
    const double d = static_cast<double>(X.cols());
    const double n = static_cast<double>(X.rows());
    const double sigma = std::sqrt(std::max(detail::average_feature_variance(X), 1e-12));
    return sigma * std::pow(4.0 / (d + 2.0), 1.0 / (d + 4.0)) * std::pow(n, -1.0 / (d + 4.0));
}

/// Fits one VI model per hyperparameter combination and keeps the one with
/// the lowest representativity. A single combination skips the scoring.
inline ModelSelection select_vi_model(const Matrix& X, const ViSearch& search, std::uint64_t seed) {
    ModelSelection best;
    const double h = search.bandwidth > 0.0 ? search.bandwidth : reference_bandwidth(X);
    const std::size_t total = search.alpha0.size() * search.beta0.size() * search.w0.size();
    bool have = false;
    for (const double a0 : search.alpha0)
        for (const double b0 : search.beta0)
            for (const double w0 : search.w0) {
                ViHyperParams hp = search.base;
                hp.alpha0 = a0;
                hp.beta0 = b0;
                hp.w0 = w0;
                hp.seed = seed;
                hp.k_init = std::min<std::size_t>(hp.k_init, static_cast<std::size_t>(X.rows()));
                auto fit = fit_vi(X, hp);
                const double score = total > 1 ? representativity(fit.model, X, h, search.mc_samples, seed) : 0.0;
                if (!have || score < best.representativity) {
                    best.model = std::make_shared<const MixtureModel>(std::move(fit.model));
                    best.chosen = hp;
                    best.representativity = score;
                    best.converged = fit.converged;
                    have = true;
                }
                ++best.candidates;
            }
    return best;
}

// ---------------------------------------------------------------------------
// Experiment

struct StageTimes {
    double model_estimation = 0.0;
    double building = 0.0;
    double training = 0.0;
    double testing = 0.0;
    double tuning = 0.0;
    double total = 0.0;
};

struct FoldOutcome {
    bool valid = false;
    std::string error;
    double accuracy = 0.0;
    std::size_t sv_count = 0;
    std::size_t labeled = 0;
    CellRecord chosen;
    std::size_t tune_evaluations = 0;
    StageTimes times;
    std::optional<PsdResult> psd;
    bool converged = true;
};

struct KernelSummary {
    KernelFamily family = KernelFamily::rbf;
    std::vector<FoldOutcome> folds;
    double mean_accuracy = 0.0;
    double std_accuracy = 0.0;
    double mean_sv = 0.0;
    std::size_t invalid_folds = 0;
};

struct DatasetResult {
    std::string name;
    std::size_t samples = 0;
    std::size_t continuous_dim = 0;
    std::size_t encoded_dim = 0;
    std::size_t classes = 0;
    FoldPlan plan;
    std::vector<std::size_t> components;
    std::vector<double> model_seconds;
    std::vector<KernelSummary> kernels;
    bool valid = true;
    std::string error;
};

struct EvalReport {
    std::string name;
    std::uint64_t seed = 0;
    LabelBudget budget = LabelBudget::four_times_classes;
    std::vector<KernelFamily> kernels;
    std::vector<DatasetResult> datasets;
    bool ranks_available = false;
    std::vector<double> avg_ranks;
    std::vector<double> win_counts;
    double friedman_chi2 = 0.0;
    std::size_t ranked_datasets = 0;
    std::vector<std::pair<double, double>> cd;
    std::vector<CdGroup> cd_groups;
    std::vector<std::string> warnings;

    [[nodiscard]] bool partial_failure() const {
        for (const auto& d : datasets) {
            if (!d.valid) return true;
            for (const auto& k : d.kernels)
                if (k.invalid_folds > 0) return true;
        }
        return false;
    }
};

namespace detail {

using clock = std::chrono::steady_clock;

inline double seconds_since(clock::time_point t0) {
    return std::chrono::duration<double>(clock::now() - t0).count();
}

inline void summarize(KernelSummary& k) {
    std::vector<double> acc;
    double sv = 0.0;
    for (const auto& f : k.folds) {
        if (!f.valid) {
            ++k.invalid_folds;
            continue;
        }
        acc.push_back(f.accuracy);
        sv += static_cast<double>(f.sv_count);
    }
    if (acc.empty()) {
        k.mean_accuracy = std::numeric_limits<double>::quiet_NaN();
        k.std_accuracy = std::numeric_limits<double>::quiet_NaN();
        k.mean_sv = std::numeric_limits<double>::quiet_NaN();
        return;
    }
    const double n = static_cast<double>(acc.size());
    k.mean_accuracy = std::accumulate(acc.begin(), acc.end(), 0.0) / n;
    double ss = 0.0;
    for (const double a : acc) ss += (a - k.mean_accuracy) * (a - k.mean_accuracy);
    k.std_accuracy = acc.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
    k.mean_sv = sv / n;
}

inline void check_disjoint(const std::vector<std::size_t>& a, const std::vector<std::size_t>& test) {
    std::vector<std::size_t> x = a;
    std::vector<std::size_t> y = test;
    std::sort(x.begin(), x.end());
    std::sort(y.begin(), y.end());
    std::vector<std::size_t> both;
    std::set_intersection(x.begin(), x.end(), y.begin(), y.end(), std::back_inserter(both));
    if (!both.empty()) throw std::logic_error("test indices leaked into training material");
}

// Tunes, trains and tests one kernel on one outer fold.
inline FoldOutcome run_kernel_fold(const Dataset& ds, const FoldPlan& plan, std::size_t outer, KernelFamily family,
                                   const std::shared_ptr<const MixtureModel>& model, double model_seconds,
                                   const ExperimentConfig& cfg) {
    FoldOutcome out;
    const auto t_total = clock::now();
    const auto& split = plan.splits.at(outer);
    const auto& test = plan.test_indices(outer);
    out.labeled = split.labeled_idx.size();
    check_disjoint(split.labeled_idx, test);
    check_disjoint(split.unlabeled_idx, test);

    KernelSpec spec;
    spec.family = family;
    if (spec.needs_model()) {
        if (!model) throw invalid_argument("no mixture model available (dataset has no continuous columns)");
        spec.model = model;
        out.times.model_estimation = model_seconds;
    }
    const Grid& grid = ds.schema.encoded_dim() > 0 ? cfg.mixed_grid : cfg.grid;

    auto t0 = clock::now();
    TuneOptions topt = cfg.tune;
    if (!topt.posterior_model) topt.posterior_model = model;
    CellRecord chosen;
    if (cfg.search == SearchMode::grid) {
        const auto r = grid_search(ds, split, spec, grid, topt);
        chosen = r.best;
        out.tune_evaluations = r.evaluations;
    } else {
        const auto r = keerthi_lin_search(ds, split, spec, grid, topt);
        chosen = r.result.best;
        out.tune_evaluations = r.result.evaluations;
    }
    out.times.tuning = seconds_since(t0);
    out.chosen = chosen;
    spec = spec.with(chosen.gamma, chosen.alpha, chosen.beta);

    const auto labeled = ds.subset(split.labeled_idx);
    std::vector<int> y;
    for (const auto& s : labeled) y.push_back(*s.label);

    t0 = clock::now();
    const GramMatrix gram = build_gram(spec, labeled, cfg.threads, split.labeled_idx);
    out.times.building = seconds_since(t0);
    if (cfg.check_psd && spec.needs_model()) out.psd = psd_check(gram, cfg.psd_tol);

    t0 = clock::now();
    const auto sol = solve_multiclass(gram.values, y, ds.num_classes(), chosen.c, cfg.tune.smo, cfg.threads);
    out.times.training = seconds_since(t0);
    out.converged = sol.converged();

    t0 = clock::now();
    const auto test_samples = ds.subset(test);
    const Matrix kt = cross_kernel(spec, test_samples, labeled, cfg.threads);
    const auto votes = vote_batch(sol, kt);
    out.times.testing = seconds_since(t0);

    std::size_t right = 0;
    for (std::size_t i = 0; i < votes.size(); ++i) right += votes[i].predicted == *test_samples[i].label ? 1 : 0;
    out.accuracy = 100.0 * static_cast<double>(right) / static_cast<double>(std::max<std::size_t>(votes.size(), 1));
    out.sv_count = sol.support_vector_count();
    out.valid = true;
    out.times.total = seconds_since(t_total) + (spec.needs_model() ? model_seconds : 0.0);
    return out;
}

inline DatasetResult run_dataset(const DatasetSource& src, std::size_t dataset_index, const ExperimentConfig& cfg) {
    DatasetResult res;
    res.name = src.name;
    Dataset ds = load_source(src);
    for (std::size_t i = 0; i < ds.samples.size(); ++i)
        if (!ds.samples[i].label)
            throw invalid_argument("dataset '" + src.name + "' has unlabeled rows; the benchmark needs ground truth");
    if (cfg.normalize) ds = zscore_normalize(std::move(ds));
    res.samples = ds.size();
    res.continuous_dim = ds.schema.continuous_dim();
    res.encoded_dim = ds.schema.encoded_dim();
    res.classes = ds.num_classes();
    const std::uint64_t dseed = derive_seed(cfg.seed, 0x4453 + dataset_index);
    res.plan = stratified_kfold(ds, cfg.outer_folds, dseed);
    res.kernels.resize(cfg.kernels.size());
    for (std::size_t k = 0; k < cfg.kernels.size(); ++k) res.kernels[k].family = cfg.kernels[k];

    for (std::size_t f = 0; f < cfg.outer_folds; ++f) {
        const auto train = res.plan.training_indices(f);
        check_disjoint(train, res.plan.test_indices(f));
        std::shared_ptr<const MixtureModel> model;
        double model_seconds = 0.0;
        const auto t0 = clock::now();
        if (ds.schema.continuous_dim() > 0) {
            const Matrix X = ds.continuous_matrix(train);
            model = select_vi_model(X, cfg.vi, derive_seed(dseed, 0x4d00 + f)).model;
        }
        model_seconds = seconds_since(t0);
        res.components.push_back(model ? model->size() : 0);
        res.model_seconds.push_back(model_seconds);
        res.plan = select_labeled_subset(ds, std::move(res.plan), f, cfg.budget, model.get(),
                                         derive_seed(dseed, 0x5300 + f), cfg.selection);
        for (std::size_t k = 0; k < cfg.kernels.size(); ++k) {
            FoldOutcome fo;
            try {
                fo = run_kernel_fold(ds, res.plan, f, cfg.kernels[k], model, model_seconds, cfg);
            } catch (const std::logic_error&) {
                throw;
            } catch (const std::exception& e) {
                fo.valid = false;
                fo.error = e.what();
            }
            res.kernels[k].folds.push_back(std::move(fo));
        }
    }
    for (auto& k : res.kernels) summarize(k);
    return res;
}

}  // namespace detail

/// Cells of the experiment as "dataset fold kernel" lines, without running.
inline std::vector<std::string> plan_experiment(const ExperimentConfig& cfg) {
    std::vector<std::string> out;
    for (const auto& d : cfg.datasets)
        for (std::size_t f = 0; f < cfg.outer_folds; ++f)
            for (const auto k : cfg.kernels)
                out.push_back(d.name + " fold " + std::to_string(f) + " kernel " + family_name(k) + " budget " +
                              budget_name(cfg.budget));
    return out;
}

/// Fills ranks, wins, Friedman statistic and CDs from per-dataset means.
inline void compute_rank_statistics(EvalReport& rep, const std::vector<double>& cd_alphas) {
    rep.ranks_available = false;
    if (rep.kernels.size() < 2) {
        rep.warnings.push_back("rank statistics omitted: fewer than two kernels");
        return;
    }
    std::vector<std::vector<double>> table;
    for (const auto& d : rep.datasets) {
        if (!d.valid) continue;
        std::vector<double> row;
        bool ok = true;
        for (const auto& k : d.kernels) {
            if (k.invalid_folds > 0 || std::isnan(k.mean_accuracy)) ok = false;
            row.push_back(k.mean_accuracy);
        }
        if (ok) table.push_back(std::move(row));
        else rep.warnings.push_back("dataset '" + d.name + "' excluded from rank statistics: invalid cells");
    }
    rep.ranked_datasets = table.size();
    if (table.size() < 2) {
        rep.warnings.push_back("rank statistics omitted: fewer than two complete datasets");
        return;
    }
    const auto fr = friedman_ranks(table);
    rep.avg_ranks = fr.avg_ranks;
    rep.friedman_chi2 = fr.chi2;
    rep.win_counts = wins(table);
    rep.ranks_available = true;
    if (rep.kernels.size() > 10) {
        rep.warnings.push_back("critical differences omitted: more than ten kernels");
        return;
    }
    for (const double a : cd_alphas) {
        const double cd = nemenyi_cd(rep.kernels.size(), table.size(), a);
        rep.cd.emplace_back(a, cd);
        const auto groups = cd_groups(rep.avg_ranks, cd, a);
        rep.cd_groups.insert(rep.cd_groups.end(), groups.begin(), groups.end());
    }
}

inline EvalReport run_experiment(const ExperimentConfig& cfg) {
    cfg.validate();
    EvalReport rep;
    rep.name = cfg.name;
    rep.seed = cfg.seed;
    rep.budget = cfg.budget;
    rep.kernels = cfg.kernels;
    for (std::size_t i = 0; i < cfg.datasets.size(); ++i) {
        try {
            rep.datasets.push_back(detail::run_dataset(cfg.datasets[i], i, cfg));
        } catch (const std::logic_error&) {
            throw;
        } catch (const std::exception& e) {
            DatasetResult bad;
            bad.name = cfg.datasets[i].name;
            bad.valid = false;
            bad.error = e.what();
            rep.datasets.push_back(std::move(bad));
        }
    }
    compute_rank_statistics(rep, cfg.cd_alphas);
    return rep;
}

struct RuntimeRow {
    std::string dataset;
    KernelFamily family = KernelFamily::rbf;
    StageTimes mean;
};

/// Fold-averaged wall-clock seconds per dataset, kernel and stage.
inline std::vector<RuntimeRow> runtime_ledger(const EvalReport& rep) {
    std::vector<RuntimeRow> rows;
    for (const auto& d : rep.datasets)
        for (const auto& k : d.kernels) {
            RuntimeRow r{d.name, k.family, {}};
            std::size_t n = 0;
            for (const auto& f : k.folds) {
                if (!f.valid) continue;
                r.mean.model_estimation += f.times.model_estimation;
                r.mean.building += f.times.building;
                r.mean.training += f.times.training;
                r.mean.testing += f.times.testing;
                r.mean.tuning += f.times.tuning;
                r.mean.total += f.times.total;
                ++n;
            }
            if (n > 0) {
                const double nn = static_cast<double>(n);
                r.mean.model_estimation /= nn;
                r.mean.building /= nn;
                r.mean.training /= nn;
                r.mean.testing /= nn;
                r.mean.tuning /= nn;
                r.mean.total /= nn;
            }
            rows.push_back(r);
        }
    return rows;
}

namespace detail {

inline std::string fixed(double v, int digits) {
    if (std::isnan(v)) return "nan";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

}  // namespace detail

/// Key-value report. The timing section comes last and is omitted when
/// include_timing is false, so reruns can be compared byte for byte.
inline void write_report(std::ostream& os, const EvalReport& rep, bool include_timing = true) {
    using detail::fixed;
    os << "report rwm-eval 1\n";
    os << "experiment " << rep.name << '\n';
    os << "seed " << rep.seed << '\n';
    os << "budget " << budget_name(rep.budget) << '\n';
    os << "kernels";
    for (const auto k : rep.kernels) os << ' ' << family_name(k);
    os << '\n';
    for (const auto& d : rep.datasets) {
        const std::string p = "dataset." + d.name + ".";
        os << "dataset " << d.name << '\n';
        if (!d.valid) {
            os << p << "error " << d.error << '\n';
            continue;
        }
        os << p << "samples " << d.samples << '\n';
        os << p << "continuous " << d.continuous_dim << '\n';
        os << p << "categorical_encoded " << d.encoded_dim << '\n';
        os << p << "classes " << d.classes << '\n';
        os << p << "components";
        for (const auto c : d.components) os << ' ' << c;
        os << '\n';
        for (const auto& k : d.kernels) {
            const std::string q = p + family_name(k.family) + ".";
            os << q << "accuracy_mean " << fixed(k.mean_accuracy, 3) << '\n';
            os << q << "accuracy_std " << fixed(k.std_accuracy, 3) << '\n';
            os << q << "sv_mean " << fixed(k.mean_sv, 1) << '\n';
            os << q << "invalid_folds " << k.invalid_folds << '\n';
            os << q << "fold_accuracy";
            for (const auto& f : k.folds) os << ' ' << (f.valid ? fixed(f.accuracy, 3) : std::string{"invalid"});
            os << '\n';
            os << q << "fold_labeled";
            for (const auto& f : k.folds) os << ' ' << f.labeled;
            os << '\n';
            os << q << "fold_params";
            for (const auto& f : k.folds)
                os << ' ' << format_real(f.chosen.c) << '/' << format_real(f.chosen.gamma) << '/'
                   << format_real(f.chosen.alpha) << '/' << format_real(f.chosen.beta);
            os << '\n';
            for (std::size_t i = 0; i < k.folds.size(); ++i) {
                if (!k.folds[i].valid) os << q << "fold_error." << i << ' ' << k.folds[i].error << '\n';
                if (k.folds[i].psd)
                    os << q << "fold_psd." << i << ' ' << (k.folds[i].psd->is_psd ? "pass " : "fail ")
                       << format_real(k.folds[i].psd->min_eigenvalue) << '\n';
            }
        }
    }
    os << "ranks.available " << (rep.ranks_available ? 1 : 0) << '\n';
    if (rep.ranks_available) {
        os << "ranks.datasets " << rep.ranked_datasets << '\n';
        for (std::size_t k = 0; k < rep.kernels.size(); ++k) {
            os << "rank." << family_name(rep.kernels[k]) << ' ' << fixed(rep.avg_ranks[k], 3) << '\n';
            os << "win." << family_name(rep.kernels[k]) << ' ' << fixed(rep.win_counts[k], 1) << '\n';
        }
        os << "friedman.chi2 " << fixed(rep.friedman_chi2, 3) << '\n';
        os << "friedman.df " << rep.kernels.size() - 1 << '\n';
        for (const auto& [a, cd] : rep.cd) os << "cd." << fixed(a, 2) << ' ' << fixed(cd, 3) << '\n';
    }
    for (const auto& w : rep.warnings) os << "warning " << w << '\n';
    if (!include_timing) return;
    os << "[timing]\n";
    for (const auto& r : runtime_ledger(rep)) {
        const std::string q = "timing." + r.dataset + "." + family_name(r.family) + ".";
        os << q << "model_estimation " << fixed(r.mean.model_estimation, 3) << '\n';
        os << q << "building " << fixed(r.mean.building, 3) << '\n';
        os << q << "training " << fixed(r.mean.training, 3) << '\n';
        os << q << "testing " << fixed(r.mean.testing, 3) << '\n';
        os << q << "tuning " << fixed(r.mean.tuning, 3) << '\n';
    }
}

/// CD-plot rows: alpha, CD, classifier, avg_rank, group_id. A classifier
/// appears once per group it belongs to.
inline void write_cd_data(std::ostream& os, const EvalReport& rep) {
    os << "alpha,CD,classifier,avg_rank,group_id\n";
    if (!rep.ranks_available) return;
    for (const auto& g : rep.cd_groups)
        for (const auto m : g.members)
            os << detail::fixed(g.alpha, 2) << ',' << detail::fixed(g.cd, 3) << ',' << family_name(rep.kernels[m]) << ','
               << detail::fixed(rep.avg_ranks[m], 3) << ',' << g.group_id << '\n';
}

}  // namespace rwm
