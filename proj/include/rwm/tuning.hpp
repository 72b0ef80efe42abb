#pragma once

// Hyperparameter selection: exhaustive grid search and the Keerthi-Lin
// two-stage heuristic, scored on inner folds of the labeled subset plus an
// uncertainty proxy over the unlabeled pool.

#include "rwm/common.hpp"
#include "rwm/data.hpp"
#include "rwm/kernel.hpp"
#include "rwm/svm.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <ostream>
#include <set>
#include <span>
#include <string>
#include <vector>

namespace rwm {

struct Grid {
    std::vector<int> c_exponents;
    std::vector<int> gamma_exponents;
    std::vector<double> alpha_steps{1.0};
    std::vector<double> beta_steps{1.0};

    /// C = 10^i and gamma = 10^i for i in -3..2.
    static Grid standard() {
        return Grid{{-3, -2, -1, 0, 1, 2}, {-3, -2, -1, 0, 1, 2}, {1.0}, {1.0}};
    }

    /// Standard (C, gamma) grid with alpha and beta in 0, 0.1, ..., 1.
    static Grid mixed() {
        Grid g = standard();
        g.alpha_steps.clear();
        for (int i = 0; i <= 10; ++i) g.alpha_steps.push_back(i / 10.0);
        g.beta_steps = g.alpha_steps;
        return g;
    }

    void validate() const {
        if (c_exponents.empty() || gamma_exponents.empty() || alpha_steps.empty() || beta_steps.empty())
            throw invalid_argument("grid: empty parameter list");
        for (const double v : alpha_steps)
            if (!(v >= 0.0 && v <= 1.0)) throw invalid_argument("grid: alpha step outside [0, 1]");
        for (const double v : beta_steps)
            if (!(v >= 0.0 && v <= 1.0)) throw invalid_argument("grid: beta step outside [0, 1]");
    }

    /// (alpha, beta) pairs to search; (0, 0) is skipped.
    [[nodiscard]] std::vector<std::pair<double, double>> weight_pairs() const {
        std::vector<std::pair<double, double>> out;
        for (const double a : alpha_steps)
            for (const double b : beta_steps)
                if (a > 0.0 || b > 0.0) out.emplace_back(a, b);
        if (out.empty()) throw invalid_argument("grid: only (alpha, beta) = (0, 0) given");
        return out;
    }
};

/// How uncertainty over the unlabeled pool U is scored.
enum class ExpectedErrorMode {
    /// Fraction of U whose decision value in the machine separating the two
    /// most-voted classes has |f| < 1 (inside the margin).
    decision_margin,
    /// Fraction of U whose top vote count leads the runner-up by at most one.
    vote_margin,
    /// Mean probability, under class posteriors p(c|x) = sum_k rho_k(x) p(c|k)
    /// with p(c|k) estimated from the responsibilities of the labeled training
    /// part, that the machine's prediction on U is wrong.
    mixture_posterior,
    /// U is ignored.
    none,
};

inline ExpectedErrorMode parse_expected_error_mode(std::string_view s) {
    if (s == "decision_margin") return ExpectedErrorMode::decision_margin;
    if (s == "vote_margin") return ExpectedErrorMode::vote_margin;
    if (s == "mixture_posterior") return ExpectedErrorMode::mixture_posterior;
    if (s == "none") return ExpectedErrorMode::none;
    throw invalid_argument("unknown expected-error mode '" + std::string{s} + "'");
}

struct TuneScore {
    double val_error = 0.0;
    double expected_error = 0.0;
    double combined = 0.0;
};

struct TuneOptions {
    double lambda = 0.5;
    ExpectedErrorMode expected_error = ExpectedErrorMode::mixture_posterior;
    SmoOptions smo{};
    unsigned threads = 1;
    /// Mixture used by mixture_posterior when the kernel has none (rbf).
    std::shared_ptr<const MixtureModel> posterior_model;
};

struct CellRecord {
    double c = 0.0;
    double gamma = 0.0;
    double alpha = 1.0;
    double beta = 1.0;
    /// Validation error per inner fold; NaN for skipped folds.
    std::vector<double> fold_errors;
    TuneScore score;
    bool valid = false;
};

struct TuneResult {
    CellRecord best;
    std::vector<CellRecord> table;
    /// Number of (C, gamma, alpha, beta) combinations trained and scored.
    std::size_t evaluations = 0;
    /// Inner folds skipped because their training part held a single class.
    std::size_t skipped_folds = 0;
};

/// Labeled/unlabeled material of one outer fold with cached pair terms, so
/// every grid cell costs one elementwise kernel map plus the SMO runs.
class TuningProblem {
  public:
    /// `posterior` supplies the responsibilities for the mixture_posterior
    /// mode; it defaults to the kernel's own model.
    TuningProblem(const Dataset& ds, const OuterSplit& split, const KernelSpec& family_template, unsigned threads = 1,
                  const MixtureModel* posterior = nullptr)
        : num_classes_{ds.num_classes()}, n_labeled_{split.labeled_idx.size()}, family_{family_template.family} {
        if (split.labeled_idx.empty()) throw invalid_argument("tuning: empty labeled subset");
        if (split.inner_folds.empty()) throw invalid_argument("tuning: no inner folds");
        std::vector<Sample> labeled;
        for (const auto i : split.labeled_idx) {
            labeled.push_back(ds.samples.at(i));
            labels_.push_back(*ds.samples[i].label);
        }
        std::vector<Sample> pool = labeled;
        for (const auto i : split.unlabeled_idx) pool.push_back(ds.samples.at(i));
        n_unlabeled_ = split.unlabeled_idx.size();
        // positions inside labeled_idx of each inner fold
        for (const auto& fold : split.inner_folds) {
            std::vector<std::size_t> pos;
            for (const auto idx : fold) {
                const auto it = std::lower_bound(split.labeled_idx.begin(), split.labeled_idx.end(), idx);
                if (it == split.labeled_idx.end() || *it != idx)
                    throw invalid_argument("tuning: inner fold index outside the labeled subset");
                pos.push_back(static_cast<std::size_t>(it - split.labeled_idx.begin()));
            }
            folds_.push_back(std::move(pos));
        }
        KernelSpec spec = family_template;
        spec.gamma = 1.0;
        spec.alpha = 1.0;
        spec.beta = 1.0;
        const FeatureCache rows(spec, labeled);
        const FeatureCache cols(spec, pool);
        terms_ = pair_terms(rows, cols, false, threads);
        if (posterior == nullptr) posterior = family_template.model.get();
        if (posterior != nullptr && ds.schema.continuous_dim() > 0) {
            rho_labeled_ = responsibility_rows(*posterior, labeled);
            rho_unlabeled_ = responsibility_rows(*posterior, std::span<const Sample>(pool).subspan(n_labeled_));
        }
    }

    [[nodiscard]] KernelFamily family() const noexcept { return family_; }
    [[nodiscard]] std::size_t inner_fold_count() const noexcept { return folds_.size(); }

    /// Trains on every inner training part and scores the cell.
    [[nodiscard]] CellRecord evaluate(double c, double gamma, double alpha, double beta, const TuneOptions& opt,
                                      std::size_t* skipped = nullptr) const {
        CellRecord rec{c, gamma, alpha, beta, {}, {}, false};
        const Matrix k = terms_.kernel(gamma, alpha, beta);
        double val_sum = 0.0;
        double exp_sum = 0.0;
        std::size_t used = 0;
        for (std::size_t f = 0; f < folds_.size(); ++f) {
            std::vector<std::size_t> train;
            std::vector<bool> in_val(n_labeled_, false);
            for (const auto p : folds_[f]) in_val[p] = true;
            for (std::size_t p = 0; p < n_labeled_; ++p)
                if (!in_val[p]) train.push_back(p);
            std::vector<int> y;
            std::set<int> classes;
            for (const auto p : train) {
                y.push_back(labels_[p]);
                classes.insert(labels_[p]);
            }
            if (classes.size() < 2 || folds_[f].empty()) {
                rec.fold_errors.push_back(std::numeric_limits<double>::quiet_NaN());
                if (skipped) ++*skipped;
                continue;
            }
            const auto nt = static_cast<Eigen::Index>(train.size());
            Matrix gram(nt, nt);
            for (Eigen::Index a = 0; a < nt; ++a)
                for (Eigen::Index b = 0; b < nt; ++b)
                    gram(a, b) = k(static_cast<Eigen::Index>(train[static_cast<std::size_t>(a)]),
                                   static_cast<Eigen::Index>(train[static_cast<std::size_t>(b)]));
            const auto sol = solve_multiclass(gram, y, num_classes_, c, opt.smo);

            Matrix kval(static_cast<Eigen::Index>(folds_[f].size()), nt);
            for (std::size_t v = 0; v < folds_[f].size(); ++v)
                for (Eigen::Index b = 0; b < nt; ++b)
                    kval(static_cast<Eigen::Index>(v), b) =
                        k(static_cast<Eigen::Index>(folds_[f][v]), static_cast<Eigen::Index>(train[static_cast<std::size_t>(b)]));
            std::size_t wrong = 0;
            const auto votes = vote_batch(sol, kval);
            for (std::size_t v = 0; v < votes.size(); ++v) wrong += votes[v].predicted != labels_[folds_[f][v]] ? 1 : 0;
            const double err = static_cast<double>(wrong) / static_cast<double>(folds_[f].size());
            rec.fold_errors.push_back(err);
            val_sum += err;

            if (opt.expected_error == ExpectedErrorMode::mixture_posterior && n_unlabeled_ > 0) {
                if (rho_labeled_.size() == 0)
                    throw invalid_argument("tuning: mixture_posterior needs a mixture model");
                exp_sum += posterior_error(sol, k, train);
            } else if (opt.expected_error != ExpectedErrorMode::none && n_unlabeled_ > 0) {
                Matrix ku(static_cast<Eigen::Index>(n_unlabeled_), nt);
                for (std::size_t u = 0; u < n_unlabeled_; ++u)
                    for (Eigen::Index b = 0; b < nt; ++b)
                        ku(static_cast<Eigen::Index>(u), b) =
                            k(static_cast<Eigen::Index>(train[static_cast<std::size_t>(b)]),
                              static_cast<Eigen::Index>(n_labeled_ + u));
                exp_sum += expected_error(sol, vote_batch(sol, ku), opt.expected_error);
            }
            ++used;
        }
        if (used == 0) return rec;
        rec.valid = true;
        rec.score.val_error = val_sum / static_cast<double>(used);
        rec.score.expected_error = exp_sum / static_cast<double>(used);
        rec.score.combined = rec.score.val_error + opt.lambda * rec.score.expected_error;
        return rec;
    }

    [[nodiscard]] static double expected_error(const MulticlassSolution& sol, const std::vector<VoteResult>& votes,
                                               ExpectedErrorMode mode) {
        if (votes.empty() || mode == ExpectedErrorMode::none) return 0.0;
        std::size_t uncertain = 0;
        for (const auto& v : votes) {
            // top two classes by votes, ties to the lower id
            int first = -1;
            int second = -1;
            for (int cls = 0; cls < static_cast<int>(v.votes.size()); ++cls) {
                const auto cv = v.votes[static_cast<std::size_t>(cls)];
                if (first < 0 || cv > v.votes[static_cast<std::size_t>(first)]) {
                    second = first;
                    first = cls;
                } else if (second < 0 || cv > v.votes[static_cast<std::size_t>(second)]) {
                    second = cls;
                }
            }
            if (mode == ExpectedErrorMode::vote_margin) {
                const int lead = v.votes[static_cast<std::size_t>(first)] -
                                 (second >= 0 ? v.votes[static_cast<std::size_t>(second)] : 0);
                uncertain += lead <= 1 ? 1 : 0;
                continue;
            }
            const auto lo = std::min(first, second);
            const auto hi = std::max(first, second);
            for (std::size_t b = 0; b < sol.binaries.size(); ++b)
                if (sol.binaries[b].class_pair == std::pair<int, int>{lo, hi}) {
                    uncertain += std::abs(v.decisions[b]) < 1.0 ? 1 : 0;
                    break;
                }
        }
        return static_cast<double>(uncertain) / static_cast<double>(votes.size());
    }

  private:
    static Matrix responsibility_rows(const MixtureModel& m, std::span<const Sample> xs) {
        Matrix r(static_cast<Eigen::Index>(xs.size()), static_cast<Eigen::Index>(m.size()));
        for (std::size_t i = 0; i < xs.size(); ++i) r.row(static_cast<Eigen::Index>(i)) = responsibilities(m, xs[i].continuous);
        return r;
    }

    [[nodiscard]] double posterior_error(const MulticlassSolution& sol, const Matrix& k,
                                         const std::vector<std::size_t>& train) const {
        const auto kk = rho_labeled_.cols();
        const auto nc = static_cast<Eigen::Index>(num_classes_);
        // p(c|k) with a uniform pseudo-count so components without labeled
        // mass stay uninformative.
        Matrix pck = Matrix::Constant(kk, nc, 1.0 / static_cast<double>(num_classes_));
        for (const auto p : train) pck.col(labels_[p]) += rho_labeled_.row(static_cast<Eigen::Index>(p)).transpose();
        for (Eigen::Index c = 0; c < kk; ++c) pck.row(c) /= pck.row(c).sum();
        const auto nt = static_cast<Eigen::Index>(train.size());
        Matrix ku(static_cast<Eigen::Index>(n_unlabeled_), nt);
        for (std::size_t u = 0; u < n_unlabeled_; ++u)
            for (Eigen::Index b = 0; b < nt; ++b)
                ku(static_cast<Eigen::Index>(u), b) =
                    k(static_cast<Eigen::Index>(train[static_cast<std::size_t>(b)]), static_cast<Eigen::Index>(n_labeled_ + u));
        const auto votes = vote_batch(sol, ku);
        double err = 0.0;
        for (std::size_t u = 0; u < n_unlabeled_; ++u) {
            const auto row = static_cast<Eigen::Index>(u);
            err += 1.0 - rho_unlabeled_.row(row).dot(pck.col(votes[u].predicted));
        }
        return err / static_cast<double>(n_unlabeled_);
    }

    std::size_t num_classes_;
    std::size_t n_labeled_;
    std::size_t n_unlabeled_ = 0;
    KernelFamily family_;
    std::vector<int> labels_;
    std::vector<std::vector<std::size_t>> folds_;
    PairTerms terms_;
    Matrix rho_labeled_;
    Matrix rho_unlabeled_;
};

namespace detail {

inline double pow10(int e) { return std::pow(10.0, e); }

// Strict "a is better than b": lower combined score, then smaller C, gamma,
// alpha, beta. Scores within 1e-12 count as equal.
inline bool better_cell(const CellRecord& a, const CellRecord& b) {
    if (a.valid != b.valid) return a.valid;
    if (std::abs(a.score.combined - b.score.combined) > 1e-12) return a.score.combined < b.score.combined;
    if (a.c != b.c) return a.c < b.c;
    if (a.gamma != b.gamma) return a.gamma < b.gamma;
    if (a.alpha != b.alpha) return a.alpha < b.alpha;
    return a.beta < b.beta;
}

struct CellRequest {
    double c, gamma, alpha, beta;
};

inline std::vector<CellRecord> evaluate_cells(const TuningProblem& p, const std::vector<CellRequest>& cells,
                                              const TuneOptions& opt, std::size_t& skipped) {
    std::vector<CellRecord> out(cells.size());
    std::vector<std::size_t> skips(cells.size(), 0);
    parallel_rows(cells.size(), opt.threads, [&](std::size_t i) {
        const auto& r = cells[i];
        out[i] = p.evaluate(r.c, r.gamma, r.alpha, r.beta, opt, &skips[i]);
    });
    for (const auto s : skips) skipped += s;
    return out;
}

inline CellRecord argmin(const std::vector<CellRecord>& cells) {
    if (cells.empty()) throw invalid_argument("tuning: no cells evaluated");
    CellRecord best = cells.front();
    for (const auto& c : cells)
        if (better_cell(c, best)) best = c;
    return best;
}

}  // namespace detail

/// Scores every (C, gamma, alpha, beta) cell and returns the argmin.
inline TuneResult grid_search(const TuningProblem& problem, const Grid& grid, const TuneOptions& opt = {}) {
    grid.validate();
    std::vector<detail::CellRequest> cells;
    const bool linear = problem.family() == KernelFamily::linear;
    for (const auto& [a, b] : grid.weight_pairs())
        for (const int ce : grid.c_exponents) {
            if (linear) {
                cells.push_back({detail::pow10(ce), 1.0, a, b});
                continue;
            }
            for (const int ge : grid.gamma_exponents) cells.push_back({detail::pow10(ce), detail::pow10(ge), a, b});
        }
    TuneResult res;
    res.table = detail::evaluate_cells(problem, cells, opt, res.skipped_folds);
    res.evaluations = res.table.size();
    res.best = detail::argmin(res.table);
    return res;
}

inline TuneResult grid_search(const Dataset& ds, const OuterSplit& split, const KernelSpec& spec_template,
                              const Grid& grid, const TuneOptions& opt = {}) {
    return grid_search(TuningProblem(ds, split, spec_template, opt.threads, opt.posterior_model.get()), grid, opt);
}

struct KeerthiLinResult {
    TuneResult result;
    /// Best linear-kernel penalty exponent from stage 1 (per alpha/beta pair
    /// when several are searched, the one of the winning pair).
    int c_tilde_exponent = 0;
    /// True when no line cell lay on the grid and all gammas at C~ were tried.
    bool fallback = false;
    std::size_t stage1_evaluations = 0;
    std::size_t line_length = 0;
};

/// Stage 1 picks C~ for a linear kernel; stage 2 scores the grid cells on the
/// slope -1 line log gamma = log C~ - log C, along which the kernel machine
/// tends to the linear one with penalty C~ as gamma shrinks.
inline KeerthiLinResult keerthi_lin_search(const TuningProblem& linear_problem, const TuningProblem& problem,
                                           const Grid& grid, const TuneOptions& opt = {}) {
    grid.validate();
    if (linear_problem.family() != KernelFamily::linear)
        throw invalid_argument("keerthi_lin_search: stage-1 problem must use the linear kernel");
    KeerthiLinResult out;
    bool have_best = false;
    for (const auto& [a, b] : grid.weight_pairs()) {
        std::vector<detail::CellRequest> stage1;
        for (const int ce : grid.c_exponents) stage1.push_back({detail::pow10(ce), 1.0, a, b});
        std::size_t skipped = 0;
        const auto s1 = detail::evaluate_cells(linear_problem, stage1, opt, skipped);
        const auto best_linear = detail::argmin(s1);
        int ct = grid.c_exponents.front();
        for (const int ce : grid.c_exponents)
            if (detail::pow10(ce) == best_linear.c) ct = ce;

        std::vector<detail::CellRequest> line;
        for (const int ce : grid.c_exponents) {
            const int ge = ct - ce;
            if (std::find(grid.gamma_exponents.begin(), grid.gamma_exponents.end(), ge) != grid.gamma_exponents.end())
                line.push_back({detail::pow10(ce), detail::pow10(ge), a, b});
        }
        bool fallback = false;
        if (line.empty()) {
            fallback = true;
            for (const int ge : grid.gamma_exponents) line.push_back({detail::pow10(ct), detail::pow10(ge), a, b});
        }
        auto s2 = detail::evaluate_cells(problem, line, opt, skipped);
        const auto best = detail::argmin(s2);
        out.stage1_evaluations += s1.size();
        out.line_length += s2.size();
        out.result.evaluations += s1.size() + s2.size();
        out.result.skipped_folds += skipped;
        out.result.table.insert(out.result.table.end(), s2.begin(), s2.end());
        if (!have_best || detail::better_cell(best, out.result.best)) {
            out.result.best = best;
            out.c_tilde_exponent = ct;
            out.fallback = fallback;
            have_best = true;
        }
    }
    return out;
}

inline KeerthiLinResult keerthi_lin_search(const Dataset& ds, const OuterSplit& split, const KernelSpec& spec_template,
                                           const Grid& grid, const TuneOptions& opt = {}) {
    KernelSpec linear;
    linear.family = KernelFamily::linear;
    const MixtureModel* posterior = opt.posterior_model ? opt.posterior_model.get() : spec_template.model.get();
    const TuningProblem lp(ds, split, linear, opt.threads, posterior);
    const TuningProblem p(ds, split, spec_template, opt.threads, posterior);
    return keerthi_lin_search(lp, p, grid, opt);
}

/// One line per evaluated cell: C gamma alpha beta fold errors and scores.
inline void write_tuning_trace(std::ostream& os, const TuneResult& r) {
    os << "# c gamma alpha beta valid val_error expected_error combined fold_errors...\n";
    for (const auto& cell : r.table) {
        os << format_real(cell.c) << ' ' << format_real(cell.gamma) << ' ' << format_real(cell.alpha) << ' '
           << format_real(cell.beta) << ' ' << (cell.valid ? 1 : 0) << ' ' << format_real(cell.score.val_error) << ' '
           << format_real(cell.score.expected_error) << ' ' << format_real(cell.score.combined);
        for (const double e : cell.fold_errors) os << ' ' << (std::isnan(e) ? std::string{"nan"} : format_real(e));
        os << '\n';
    }
}

}  // namespace rwm
