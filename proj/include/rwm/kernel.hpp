#pragma once

// Kernel family (RBF, GMM, RWM and a linear kernel for parameter search),
// Gram construction, PSD diagnostics and Gram export.

#include "rwm/common.hpp"
#include "rwm/data.hpp"
#include "rwm/gmm.hpp"
#include "rwm/similarity.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <istream>
#include <memory>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

namespace rwm {

enum class KernelFamily { rbf, gmm, rwm, linear };

inline const char* family_name(KernelFamily f) {
    switch (f) {
        case KernelFamily::rbf: return "rbf";
        case KernelFamily::gmm: return "gmm";
        case KernelFamily::rwm: return "rwm";
        case KernelFamily::linear: return "linear";
    }
    return "?";
}

inline KernelFamily parse_family(std::string_view s) {
    if (s == "rbf") return KernelFamily::rbf;
    if (s == "gmm") return KernelFamily::gmm;
    if (s == "rwm") return KernelFamily::rwm;
    if (s == "linear") return KernelFamily::linear;
    throw invalid_argument("unknown kernel family '" + std::string{s} + "'");
}

/// K(a, b) = exp(-gamma * (alpha * d_cont(a, b)^2 + beta * d01(a, b)^2)) where
/// d_cont is Euclidean (rbf), GMM distance (gmm) or RWM similarity (rwm).
/// The linear family evaluates alpha * <a, b> + beta * (number of equal
/// categorical blocks) and ignores gamma.
struct KernelSpec {
    KernelFamily family = KernelFamily::rbf;
    double gamma = 1.0;
    std::shared_ptr<const MixtureModel> model;
    double alpha = 1.0;
    double beta = 1.0;

    [[nodiscard]] bool needs_model() const noexcept {
        return family == KernelFamily::gmm || family == KernelFamily::rwm;
    }

    void validate() const {
        if (!(gamma > 0.0) || !std::isfinite(gamma)) throw invalid_argument("kernel: gamma must be positive");
        if (!(alpha >= 0.0 && alpha <= 1.0) || !(beta >= 0.0 && beta <= 1.0))
            throw invalid_argument("kernel: alpha and beta must lie in [0, 1]");
        if (needs_model() != static_cast<bool>(model))
            throw invalid_argument(needs_model() ? "kernel: family requires a mixture model"
                                                 : "kernel: family does not take a mixture model");
    }

    [[nodiscard]] KernelSpec with(double new_gamma, double new_alpha, double new_beta) const {
        KernelSpec s = *this;
        s.gamma = new_gamma;
        s.alpha = new_alpha;
        s.beta = new_beta;
        return s;
    }

    /// One-line identity of the kernel, used in Gram sidecars and model files.
    [[nodiscard]] std::string fingerprint() const {
        std::ostringstream os;
        os << "family " << family_name(family) << " gamma " << format_real(gamma) << " alpha " << format_real(alpha)
           << " beta " << format_real(beta) << " model ";
        if (model) {
            char buf[17];
            std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(model_hash(*model)));
            os << buf;
        } else {
            os << "none";
        }
        return os.str();
    }
};

namespace detail {

// Delta_01 for valid one-of-K samples: every differing block flips exactly
// two bits.
inline double categorical_mismatch(const std::vector<std::uint8_t>& a, const std::vector<std::uint8_t>& b) {
    if (a.size() != b.size()) throw invalid_argument("kernel: categorical width mismatch");
    std::size_t bits = 0;
    for (std::size_t i = 0; i < a.size(); ++i) bits += a[i] != b[i] ? 1U : 0U;
    return static_cast<double>(bits / 2);
}

inline double categorical_agreement(const std::vector<std::uint8_t>& a, const std::vector<std::uint8_t>& b) {
    if (a.size() != b.size()) throw invalid_argument("kernel: categorical width mismatch");
    std::size_t same = 0;
    for (std::size_t i = 0; i < a.size(); ++i) same += (a[i] != 0 && b[i] != 0) ? 1U : 0U;
    return static_cast<double>(same);
}

template <typename F>
void parallel_rows(std::size_t rows, unsigned threads, F&& body) {
    threads = std::max(1U, std::min<unsigned>(threads, static_cast<unsigned>(std::max<std::size_t>(rows, 1))));
    if (threads == 1) {
        for (std::size_t i = 0; i < rows; ++i) body(i);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(threads);
    for (unsigned t = 0; t < threads; ++t)
        pool.emplace_back([&, t] {
            for (std::size_t i = t; i < rows; i += threads) body(i);
        });
    for (auto& th : pool) th.join();
}

}  // namespace detail

/// Continuous distance between two samples for a kernel family, evaluated
/// straight from the similarity module.
inline double continuous_distance(const KernelSpec& spec, const Vector& a, const Vector& b) {
    switch (spec.family) {
        case KernelFamily::rbf: return euclidean(a, b);
        case KernelFamily::gmm: return gmm_distance(*spec.model, a, b);
        case KernelFamily::rwm: return rwm_similarity(*spec.model, a, b);
        case KernelFamily::linear: break;
    }
    throw invalid_argument("continuous_distance: linear kernel has no distance");
}

inline double kernel_eval(const KernelSpec& spec, const Sample& a, const Sample& b) {
    spec.validate();
    if (a.continuous.size() != b.continuous.size()) throw invalid_argument("kernel: continuous dimension mismatch");
    if (spec.family == KernelFamily::linear)
        return spec.alpha * a.continuous.dot(b.continuous) + spec.beta * detail::categorical_agreement(a.categorical, b.categorical);
    const double dc = a.continuous.size() > 0 ? continuous_distance(spec, a.continuous, b.continuous) : 0.0;
    const double d01 = detail::categorical_mismatch(a.categorical, b.categorical);
    return std::exp(-spec.gamma * (spec.alpha * dc * dc + spec.beta * d01 * d01));
}

/// Per-sample quantities reused across all pairs: whitened coordinates
/// L_k^{-1} x for every component and the responsibilities.
class FeatureCache {
  public:
    FeatureCache(const KernelSpec& spec, std::span<const Sample> samples)
        : family_{spec.family}, model_{spec.model}, samples_{samples.begin(), samples.end()} {
        spec.validate();
        if (!spec.needs_model()) return;
        const auto& m = *model_;
        const auto kk = static_cast<Eigen::Index>(m.size());
        whitened_.reserve(samples_.size());
        rho_.resize(static_cast<Eigen::Index>(samples_.size()), kk);
        for (std::size_t i = 0; i < samples_.size(); ++i) {
            const auto& x = samples_[i].continuous;
            detail::check_dim(m, x);
            Matrix z(m.dim(), kk);
            for (Eigen::Index k = 0; k < kk; ++k)
                z.col(k) = m[static_cast<std::size_t>(k)].cholesky_lower().triangularView<Eigen::Lower>().solve(x);
            whitened_.push_back(std::move(z));
            rho_.row(static_cast<Eigen::Index>(i)) = responsibilities(m, x).transpose();
        }
    }

    [[nodiscard]] std::size_t size() const noexcept { return samples_.size(); }
    [[nodiscard]] const Sample& sample(std::size_t i) const { return samples_.at(i); }

    /// Δ_cont(a_i, b_j); for the linear family the inner product instead.
    [[nodiscard]] static double continuous_term(const FeatureCache& a, std::size_t i, const FeatureCache& b,
                                                std::size_t j) {
        const auto& x = a.samples_[i].continuous;
        const auto& y = b.samples_[j].continuous;
        if (x.size() != y.size()) throw invalid_argument("kernel: continuous dimension mismatch");
        switch (a.family_) {
            case KernelFamily::linear: return x.dot(y);
            case KernelFamily::rbf: return (x - y).norm();
            case KernelFamily::gmm:
            case KernelFamily::rwm: break;
        }
        const auto& m = *a.model_;
        const Matrix& zx = a.whitened_[i];
        const Matrix& zy = b.whitened_[j];
        double sum = 0.0;
        for (Eigen::Index k = 0; k < zx.cols(); ++k) {
            const double w = a.family_ == KernelFamily::gmm ? m[static_cast<std::size_t>(k)].weight()
                                                            : 0.5 * (a.rho_(static_cast<Eigen::Index>(i), k) +
                                                                     b.rho_(static_cast<Eigen::Index>(j), k));
            sum += w * (zx.col(k) - zy.col(k)).norm();
        }
        return sum;
    }

    [[nodiscard]] KernelFamily family() const noexcept { return family_; }
    [[nodiscard]] const std::shared_ptr<const MixtureModel>& model() const noexcept { return model_; }

  private:
    KernelFamily family_;
    std::shared_ptr<const MixtureModel> model_;
    std::vector<Sample> samples_;
    std::vector<Matrix> whitened_;
    Matrix rho_;
};

/// Kernel-independent pair quantities between two sample sets. Any
/// (gamma, alpha, beta) Gram follows by an elementwise map, so parameter
/// search needs the distances only once.
struct PairTerms {
    KernelFamily family = KernelFamily::rbf;
    /// Δ_cont^2 (distance families) or <a, b> (linear).
    Matrix continuous;
    /// Δ_01^2 (distance families) or categorical agreement count (linear).
    Matrix categorical;

    [[nodiscard]] Matrix kernel(double gamma, double alpha, double beta) const {
        if (family == KernelFamily::linear) return alpha * continuous + beta * categorical;
        return (-gamma * (alpha * continuous + beta * categorical)).array().exp().matrix();
    }

    /// Sub-block restricted to the given row and column positions.
    [[nodiscard]] PairTerms select(std::span<const std::size_t> rows, std::span<const std::size_t> cols) const {
        PairTerms out;
        out.family = family;
        const auto r = static_cast<Eigen::Index>(rows.size());
        const auto c = static_cast<Eigen::Index>(cols.size());
        out.continuous.resize(r, c);
        out.categorical.resize(r, c);
        for (Eigen::Index i = 0; i < r; ++i)
            for (Eigen::Index j = 0; j < c; ++j) {
                const auto ri = static_cast<Eigen::Index>(rows[static_cast<std::size_t>(i)]);
                const auto cj = static_cast<Eigen::Index>(cols[static_cast<std::size_t>(j)]);
                out.continuous(i, j) = continuous(ri, cj);
                out.categorical(i, j) = categorical(ri, cj);
            }
        return out;
    }
};

inline PairTerms pair_terms(const FeatureCache& a, const FeatureCache& b, bool symmetric, unsigned threads = 1) {
    if (a.family() != b.family() || a.model() != b.model()) throw invalid_argument("pair_terms: caches use different kernels");
    if (symmetric && a.size() != b.size()) throw invalid_argument("pair_terms: symmetric block needs equal sets");
    PairTerms t;
    t.family = a.family();
    const auto n = static_cast<Eigen::Index>(a.size());
    const auto m = static_cast<Eigen::Index>(b.size());
    t.continuous.resize(n, m);
    t.categorical.resize(n, m);
    const bool linear = t.family == KernelFamily::linear;
    detail::parallel_rows(a.size(), threads, [&](std::size_t i) {
        const auto ii = static_cast<Eigen::Index>(i);
        for (std::size_t j = symmetric ? i : 0; j < b.size(); ++j) {
            const auto jj = static_cast<Eigen::Index>(j);
            const double dc = FeatureCache::continuous_term(a, i, b, j);
            const auto& ca = a.sample(i).categorical;
            const auto& cb = b.sample(j).categorical;
            double d01 = 0.0;
            if (linear) {
                t.continuous(ii, jj) = dc;
                d01 = detail::categorical_agreement(ca, cb);
                t.categorical(ii, jj) = d01;
            } else {
                t.continuous(ii, jj) = i == j && symmetric ? 0.0 : dc * dc;
                d01 = detail::categorical_mismatch(ca, cb);
                t.categorical(ii, jj) = d01 * d01;
            }
        }
    });
    if (symmetric)
        for (Eigen::Index i = 0; i < n; ++i)
            for (Eigen::Index j = 0; j < i; ++j) {
                t.continuous(i, j) = t.continuous(j, i);
                t.categorical(i, j) = t.categorical(j, i);
            }
    return t;
}

/// Symmetric kernel matrix over a sample list.
struct GramMatrix {
    Matrix values;
    std::vector<std::size_t> sample_ids;
    std::string fingerprint;

    [[nodiscard]] std::size_t size() const noexcept { return static_cast<std::size_t>(values.rows()); }
};

inline GramMatrix build_gram(const KernelSpec& spec, std::span<const Sample> samples, unsigned threads = 1,
                             std::vector<std::size_t> sample_ids = {}) {
    if (samples.empty()) throw invalid_argument("build_gram: empty sample list");
    if (sample_ids.empty()) {
        sample_ids.resize(samples.size());
        for (std::size_t i = 0; i < samples.size(); ++i) sample_ids[i] = i;
    }
    if (sample_ids.size() != samples.size()) throw invalid_argument("build_gram: sample id count mismatch");
    const FeatureCache cache(spec, samples);
    GramMatrix g;
    g.values = pair_terms(cache, cache, true, threads).kernel(spec.gamma, spec.alpha, spec.beta);
    g.sample_ids = std::move(sample_ids);
    g.fingerprint = spec.fingerprint();
    return g;
}

/// Rectangular kernel block K(a_i, b_j).
inline Matrix cross_kernel(const KernelSpec& spec, std::span<const Sample> a, std::span<const Sample> b,
                           unsigned threads = 1) {
    const FeatureCache ca(spec, a);
    const FeatureCache cb(spec, b);
    return pair_terms(ca, cb, false, threads).kernel(spec.gamma, spec.alpha, spec.beta);
}

struct PsdResult {
    bool is_psd = false;
    double min_eigenvalue = 0.0;
    double max_eigenvalue = 0.0;
};

/// PSD iff the smallest eigenvalue is at least -tol * |largest eigenvalue|
/// (absolute tol when the spectrum is zero).
inline PsdResult psd_check(const Matrix& values, double tol) {
    if (values.rows() != values.cols()) throw invalid_argument("psd_check: matrix not square");
    if (values.rows() == 0) return {true, 0.0, 0.0};
    const Eigen::SelfAdjointEigenSolver<Matrix> es(values, Eigen::EigenvaluesOnly);
    if (es.info() != Eigen::Success) throw error("psd_check: eigensolver failed");
    const double lo = es.eigenvalues().minCoeff();
    const double hi = es.eigenvalues().maxCoeff();
    const double scale = std::max(std::abs(lo), std::abs(hi));
    return {lo >= -tol * (scale > 0.0 ? scale : 1.0), lo, hi};
}

inline PsdResult psd_check(const GramMatrix& g, double tol) { return psd_check(g.values, tol); }

// ---------------------------------------------------------------------------
// Gram export: line 1 holds N, then N rows of N values. The sidecar holds
// the kernel fingerprint on one line.

inline void write_gram(std::ostream& os, const GramMatrix& g) {
    const auto n = g.values.rows();
    os << n << '\n';
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < n; ++j) os << (j ? " " : "") << format_real(g.values(i, j));
        os << '\n';
    }
}

inline void write_gram_sidecar(std::ostream& os, const GramMatrix& g) { os << g.fingerprint << '\n'; }

inline GramMatrix read_gram(std::istream& is) {
    std::string line;
    std::size_t lineno = 0;
    if (!std::getline(is, line)) throw parse_error("gram: empty input", 1);
    ++lineno;
    const auto n = parse_int<std::size_t>(trim(line), lineno);
    GramMatrix g;
    g.values.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i < n; ++i) {
        if (!std::getline(is, line)) throw parse_error("gram: missing row", lineno + 1);
        ++lineno;
        const auto toks = tokens(line);
        if (toks.size() != n) throw parse_error("gram: row has wrong length", lineno);
        for (std::size_t j = 0; j < n; ++j)
            g.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = parse_real(toks[j], lineno);
    }
    g.sample_ids.resize(n);
    for (std::size_t i = 0; i < n; ++i) g.sample_ids[i] = i;
    return g;
}

}  // namespace rwm
