#pragma once

// Gaussian mixture density models: component/mixture types, log-density and
// responsibility evaluation, EM and variational Bayesian fitting, the
// representativity score, and the text persistence format.

#include "rwm/common.hpp"

#include <boost/math/special_functions/digamma.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <istream>
#include <limits>
#include <numbers>
#include <ostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

namespace rwm {

/// One weighted multivariate normal with cached Cholesky factor, precision
/// and log-determinant.
class GaussianComponent {
  public:
    GaussianComponent(double weight, Vector mean, Matrix covariance)
        : weight_{weight}, mean_{std::move(mean)}, covariance_{std::move(covariance)} {
        const auto d = mean_.size();
        if (d == 0) throw invalid_argument("component: empty mean");
        if (covariance_.rows() != d || covariance_.cols() != d)
            throw invalid_argument("component: covariance shape does not match mean");
        if (!(weight_ > 0.0) || weight_ > 1.0 + 1e-12)
            throw invalid_argument("component: weight must lie in (0, 1]");
        if (!covariance_.allFinite() || !mean_.allFinite())
            throw invalid_argument("component: non-finite parameters");
        covariance_ = 0.5 * (covariance_ + covariance_.transpose()).eval();
        const Eigen::LLT<Matrix> llt(covariance_);
        if (llt.info() != Eigen::Success) throw invalid_argument("component: covariance is not positive definite");
        lower_ = llt.matrixL();
        precision_ = llt.solve(Matrix::Identity(d, d));
        precision_ = 0.5 * (precision_ + precision_.transpose()).eval();
        log_det_ = 2.0 * lower_.diagonal().array().log().sum();
    }

    [[nodiscard]] double weight() const noexcept { return weight_; }
    [[nodiscard]] const Vector& mean() const noexcept { return mean_; }
    [[nodiscard]] const Matrix& covariance() const noexcept { return covariance_; }
    [[nodiscard]] const Matrix& precision() const noexcept { return precision_; }
    /// Lower Cholesky factor L with covariance = L L^T.
    [[nodiscard]] const Matrix& cholesky_lower() const noexcept { return lower_; }
    [[nodiscard]] double log_det() const noexcept { return log_det_; }
    [[nodiscard]] Eigen::Index dim() const noexcept { return mean_.size(); }

    [[nodiscard]] GaussianComponent with_weight(double w) const {
        GaussianComponent c = *this;
        if (!(w > 0.0) || w > 1.0 + 1e-12) throw invalid_argument("component: weight must lie in (0, 1]");
        c.weight_ = w;
        return c;
    }

    /// Squared Mahalanobis distance of x to the component mean.
    [[nodiscard]] double mahalanobis_sq(const Vector& x) const {
        const Vector z = lower_.triangularView<Eigen::Lower>().solve(x - mean_);
        return z.squaredNorm();
    }

    /// log N(x | mean, covariance).
    [[nodiscard]] double log_normal(const Vector& x) const {
        constexpr double log_two_pi = 1.8378770664093454835606594728112;
        return -0.5 * (static_cast<double>(dim()) * log_two_pi + log_det_ + mahalanobis_sq(x));
    }

  private:
    double weight_;
    Vector mean_;
    Matrix covariance_;
    Matrix lower_;
    Matrix precision_;
    double log_det_ = 0.0;
};

/// K weighted Gaussian components over a common dimension. Immutable once
/// constructed; weights sum to one.
class MixtureModel {
  public:
    explicit MixtureModel(std::vector<GaussianComponent> components) : components_{std::move(components)} {
        if (components_.empty()) throw invalid_argument("mixture: at least one component required");
        double total = 0.0;
        for (const auto& c : components_) {
            if (c.dim() != components_.front().dim()) throw invalid_argument("mixture: component dimensions differ");
            total += c.weight();
        }
        if (std::abs(total - 1.0) > 1e-9) throw invalid_argument("mixture: weights must sum to 1");
    }

    /// Builds a mixture after rescaling the weights to sum to one.
    static MixtureModel normalized(std::vector<GaussianComponent> components) {
        double total = 0.0;
        for (const auto& c : components) total += c.weight();
        if (!(total > 0.0)) throw invalid_argument("mixture: weights must be positive");
        for (auto& c : components) c = c.with_weight(c.weight() / total);
        return MixtureModel{std::move(components)};
    }

    static MixtureModel from_parameters(const std::vector<double>& weights, const std::vector<Vector>& means,
                                        const std::vector<Matrix>& covariances) {
        if (weights.size() != means.size() || weights.size() != covariances.size())
            throw invalid_argument("mixture: parameter lists differ in length");
        std::vector<GaussianComponent> comps;
        comps.reserve(weights.size());
        for (std::size_t k = 0; k < weights.size(); ++k) comps.emplace_back(weights[k], means[k], covariances[k]);
        return MixtureModel{std::move(comps)};
    }

    [[nodiscard]] std::size_t size() const noexcept { return components_.size(); }
    [[nodiscard]] Eigen::Index dim() const noexcept { return components_.front().dim(); }
    [[nodiscard]] const std::vector<GaussianComponent>& components() const noexcept { return components_; }
    [[nodiscard]] const GaussianComponent& operator[](std::size_t k) const { return components_.at(k); }

  private:
    std::vector<GaussianComponent> components_;
};

namespace detail {

inline void check_dim(const MixtureModel& model, const Vector& x) {
    if (x.size() != model.dim())
        throw invalid_argument("dimension mismatch: model has D=" + std::to_string(model.dim()) + ", vector has " +
                               std::to_string(x.size()));
}

inline double log_sum_exp(const Vector& v) {
    const double m = v.maxCoeff();
    if (!std::isfinite(m)) return m;
    return m + std::log((v.array() - m).exp().sum());
}

// log(pi_k) + log N(x | k) for every component.
inline Vector joint_log_terms(const MixtureModel& model, const Vector& x) {
    Vector out(static_cast<Eigen::Index>(model.size()));
    for (std::size_t k = 0; k < model.size(); ++k) {
        const auto& c = model[k];
        out[static_cast<Eigen::Index>(k)] = std::log(c.weight()) + c.log_normal(x);
    }
    return out;
}

}  // namespace detail

/// log p(x) of the mixture, evaluated with log-sum-exp.
inline double log_density(const MixtureModel& model, const Vector& x) {
    detail::check_dim(model, x);
    return detail::log_sum_exp(detail::joint_log_terms(model, x));
}

/// Posterior component probabilities p(k | x). Entries are clamped away from
/// zero so that every component keeps a strictly positive share.
inline Vector responsibilities(const MixtureModel& model, const Vector& x) {
    detail::check_dim(model, x);
    const Vector terms = detail::joint_log_terms(model, x);
    const double lse = detail::log_sum_exp(terms);
    Vector r = (terms.array() - lse).exp().matrix();
    for (auto& v : r) v = std::max(v, std::numeric_limits<double>::min());
    return r / r.sum();
}

// ---------------------------------------------------------------------------
// Initialization shared by EM and VI.

namespace detail {

// k-means++ seeding: returns K row indices of X.
inline std::vector<Eigen::Index> kmeanspp_seeds(const Matrix& X, std::size_t K, Rng& rng) {
    const Eigen::Index n = X.rows();
    std::vector<Eigen::Index> seeds;
    seeds.reserve(K);
    auto first = static_cast<Eigen::Index>(uniform01(rng) * static_cast<double>(n));
    seeds.push_back(std::min(first, n - 1));
    Vector d2 = (X.rowwise() - X.row(seeds.front())).rowwise().squaredNorm();
    while (seeds.size() < K) {
        const double total = d2.sum();
        Eigen::Index pick = 0;
        if (total > 0.0) {
            const double u = uniform01(rng) * total;
            double acc = 0.0;
            pick = n - 1;
            for (Eigen::Index i = 0; i < n; ++i) {
                acc += d2[i];
                if (u < acc) {
                    pick = i;
                    break;
                }
            }
        } else {
            pick = std::min(static_cast<Eigen::Index>(uniform01(rng) * static_cast<double>(n)), n - 1);
        }
        seeds.push_back(pick);
        d2 = d2.cwiseMin((X.rowwise() - X.row(pick)).rowwise().squaredNorm());
    }
    return seeds;
}

// Hard assignment of every row to its nearest seed.
inline Matrix hard_assignment(const Matrix& X, const std::vector<Eigen::Index>& seeds) {
    Matrix r = Matrix::Zero(X.rows(), static_cast<Eigen::Index>(seeds.size()));
    for (Eigen::Index i = 0; i < X.rows(); ++i) {
        Eigen::Index best = 0;
        double best_d = std::numeric_limits<double>::infinity();
        for (std::size_t k = 0; k < seeds.size(); ++k) {
            const double d = (X.row(i) - X.row(seeds[k])).squaredNorm();
            if (d < best_d) {
                best_d = d;
                best = static_cast<Eigen::Index>(k);
            }
        }
        r(i, best) = 1.0;
    }
    return r;
}

inline double average_feature_variance(const Matrix& X) {
    const Eigen::RowVectorXd mean = X.colwise().mean();
    const double n = static_cast<double>(X.rows());
    const double denom = n > 1 ? n - 1 : 1.0;
    const double v = (X.rowwise() - mean).array().square().sum() / denom / static_cast<double>(X.cols());
    return v > 0.0 ? v : 1.0;
}

// Row-wise softmax of a matrix of log weights.
inline Matrix softmax_rows(const Matrix& logits) {
    Matrix r(logits.rows(), logits.cols());
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
        const double m = logits.row(i).maxCoeff();
        const Eigen::RowVectorXd e = (logits.row(i).array() - m).exp().matrix();
        r.row(i) = e / e.sum();
    }
    return r;
}

inline void validate_sample_matrix(const Matrix& X) {
    if (X.rows() == 0 || X.cols() == 0) throw invalid_argument("fit: empty sample matrix");
    if (!X.allFinite()) throw invalid_argument("fit: non-finite sample values");
}

}  // namespace detail

// ---------------------------------------------------------------------------
// EM

struct EmResult {
    MixtureModel model;
    /// Log-likelihood after each E-step.
    std::vector<double> log_likelihood;
    /// Log-likelihood minus the variance-floor penalty; this is the quantity
    /// EM ascends exactly.
    std::vector<double> objective;
    bool converged = false;
    /// A component collapsed onto the variance floor or lost all its mass.
    bool degenerate = false;
    std::size_t iterations = 0;
};

/// Maximum-likelihood mixture by EM with k-means++ seeding.
///
/// Every M-step covariance is regularized as S_k + (eps * N / (K * N_k)) I with
/// eps = variance_floor * (average feature variance). For K = 1 this is exactly
/// S + eps I. The floor is the MAP update for the penalty
/// -(eps N / 2K) sum_k tr(Sigma_k^{-1}), which keeps the penalized objective
/// monotone.
inline EmResult fit_em(const Matrix& X, std::size_t K, std::uint64_t seed, std::size_t max_iter = 500,
                       double tol = 1e-6, double variance_floor = 1e-6) {
    detail::validate_sample_matrix(X);
    const Eigen::Index n = X.rows();
    const Eigen::Index d = X.cols();
    if (K == 0) throw invalid_argument("fit_em: K must be at least 1");
    if (static_cast<Eigen::Index>(K) > n) throw invalid_argument("fit_em: need N >= K");

    Rng rng = make_rng(seed, 0x454d);
    Matrix resp = detail::hard_assignment(X, detail::kmeanspp_seeds(X, K, rng));
    const double eps = variance_floor * detail::average_feature_variance(X);
    const double penalty_scale = eps * static_cast<double>(n) / static_cast<double>(K);

    bool degenerate = false;
    std::vector<double> ll_trace;
    std::vector<double> obj_trace;
    std::vector<GaussianComponent> comps;
    bool converged = false;
    std::size_t iter = 0;

    auto m_step = [&](const Matrix& r) {
        std::vector<GaussianComponent> out;
        const Vector nk = r.colwise().sum().transpose();
        for (Eigen::Index k = 0; k < r.cols(); ++k) {
            if (nk[k] < 1e-8) {
                degenerate = true;
                continue;
            }
            const Vector mean = (X.transpose() * r.col(k)) / nk[k];
            const Matrix centered = X.rowwise() - mean.transpose();
            Matrix scatter = (centered.transpose() * r.col(k).asDiagonal() * centered) / nk[k];
            scatter = 0.5 * (scatter + scatter.transpose()).eval();
            if (d <= 16) {
                const Eigen::SelfAdjointEigenSolver<Matrix> es(scatter, Eigen::EigenvaluesOnly);
                if (es.eigenvalues().minCoeff() < eps) degenerate = true;
            }
            Matrix cov = scatter + (penalty_scale / nk[k]) * Matrix::Identity(d, d);
            out.emplace_back(nk[k] / static_cast<double>(n), mean, std::move(cov));
        }
        return MixtureModel::normalized(std::move(out)).components();
    };

    for (iter = 0; iter < std::max<std::size_t>(max_iter, 1); ++iter) {
        comps = m_step(resp);
        const MixtureModel model{comps};
        double ll = 0.0;
        Matrix logits(n, static_cast<Eigen::Index>(model.size()));
        for (Eigen::Index i = 0; i < n; ++i) {
            const Vector terms = detail::joint_log_terms(model, X.row(i).transpose());
            logits.row(i) = terms.transpose();
            ll += detail::log_sum_exp(terms);
        }
        double penalty = 0.0;
        for (const auto& c : comps) penalty += 0.5 * penalty_scale * c.precision().trace();
        ll_trace.push_back(ll);
        obj_trace.push_back(ll - penalty);
        resp = detail::softmax_rows(logits);
        if (obj_trace.size() > 1) {
            const double prev = obj_trace[obj_trace.size() - 2];
            if (std::abs(obj_trace.back() - prev) <= tol * std::max(1.0, std::abs(prev))) {
                converged = true;
                ++iter;
                break;
            }
        }
    }
    return EmResult{MixtureModel{std::move(comps)}, std::move(ll_trace), std::move(obj_trace), converged, degenerate,
                    iter};
}

// ---------------------------------------------------------------------------
// Variational Bayesian inference (Gaussian-Wishart prior on each component,
// Dirichlet prior on the weights).

struct ViHyperParams {
    /// Dirichlet concentration; small values prune aggressively.
    double alpha0 = 1e-3;
    /// Precision scaling of the prior on component means.
    double beta0 = 1.0;
    /// Wishart scale W0 = w0 * I; larger values allow tighter components.
    double w0 = 1.0;
    std::size_t k_init = 20;
    std::size_t max_iter = 500;
    double tol = 1e-6;
    double prune_weight = 1e-3;
    std::uint64_t seed = 1;
};

struct ViResult {
    MixtureModel model;
    /// Variational lower bound per iteration.
    std::vector<double> bound;
    /// Iterations after whose E-step at least one component was removed. The
    /// bound is only comparable between iterations not separated by a prune.
    std::vector<std::size_t> prune_iterations;
    bool converged = false;
    std::size_t iterations = 0;
};

namespace detail {

// Posterior parameters of the variational factors.
struct ViPosterior {
    Vector alpha, beta, nu, nk;
    std::vector<Vector> m, xbar;
    std::vector<Matrix> w, w_inv, s;
    Vector log_det_w;
};

inline double log_wishart_norm(double log_det_w, double nu, Eigen::Index d) {
    // ln B(W, nu)
    const double dd = static_cast<double>(d);
    double r = -0.5 * nu * log_det_w - 0.5 * nu * dd * std::numbers::ln2 -
               0.25 * dd * (dd - 1.0) * std::log(std::numbers::pi);
    for (Eigen::Index i = 1; i <= d; ++i) r -= std::lgamma(0.5 * (nu + 1.0 - static_cast<double>(i)));
    return r;
}

inline double log_dirichlet_norm(const Vector& alpha) {
    double r = std::lgamma(alpha.sum());
    for (const double a : alpha) r -= std::lgamma(a);
    return r;
}

}  // namespace detail

/// Variational Bayesian mixture fit with automatic component pruning.
///
/// The prior mean is the sample mean of X and the Wishart degrees of freedom
/// are nu0 = D + 1. A component is removed after an E-step when its effective
/// sample count drops below one or its weight drops below prune_weight. The
/// returned mixture uses weights N_k / N, posterior means m_k and the expected
/// covariances E[Sigma_k] = W_k^{-1} / (nu_k - D - 1).
inline ViResult fit_vi(const Matrix& X, const ViHyperParams& hp) {
    using boost::math::digamma;
    detail::validate_sample_matrix(X);
    const Eigen::Index n = X.rows();
    const Eigen::Index d = X.cols();
    const double dd = static_cast<double>(d);
    const double nn = static_cast<double>(n);
    if (!(hp.alpha0 > 0.0) || !(hp.beta0 > 0.0) || !(hp.w0 > 0.0) || !(hp.tol > 0.0) || !(hp.prune_weight > 0.0))
        throw invalid_argument("fit_vi: hyperparameters must be positive");
    if (hp.k_init == 0) throw invalid_argument("fit_vi: k_init must be at least 1");
    if (static_cast<Eigen::Index>(hp.k_init) > n) throw invalid_argument("fit_vi: k_init exceeds N");
    if (n <= d) throw invalid_argument("fit_vi: need N > D");

    constexpr double log_two_pi = 1.8378770664093454835606594728112;
    const Vector m0 = X.colwise().mean().transpose();
    const double nu0 = dd + 1.0;
    const Matrix w0_inv = Matrix::Identity(d, d) / hp.w0;
    const double log_det_w0 = dd * std::log(hp.w0);

    Rng rng = make_rng(hp.seed, 0x5649);
    Matrix resp = detail::hard_assignment(X, detail::kmeanspp_seeds(X, hp.k_init, rng));

    auto m_step = [&](const Matrix& r) {
        detail::ViPosterior q;
        const Eigen::Index K = r.cols();
        q.nk = r.colwise().sum().transpose();
        q.alpha = q.nk.array() + hp.alpha0;
        q.beta = q.nk.array() + hp.beta0;
        q.nu = q.nk.array() + nu0;
        q.log_det_w.resize(K);
        for (Eigen::Index k = 0; k < K; ++k) {
            const double nk = q.nk[k];
            Vector xbar = m0;
            Matrix s = Matrix::Zero(d, d);
            if (nk > 1e-10) {
                xbar = (X.transpose() * r.col(k)) / nk;
                const Matrix centered = X.rowwise() - xbar.transpose();
                s = (centered.transpose() * r.col(k).asDiagonal() * centered) / nk;
                s = 0.5 * (s + s.transpose()).eval();
            }
            const Vector diff = xbar - m0;
            Matrix w_inv = w0_inv + nk * s + (hp.beta0 * nk / (hp.beta0 + nk)) * diff * diff.transpose();
            w_inv = 0.5 * (w_inv + w_inv.transpose()).eval();
            const Eigen::LLT<Matrix> llt(w_inv);
            Matrix w = llt.solve(Matrix::Identity(d, d));
            q.log_det_w[k] = -2.0 * llt.matrixLLT().diagonal().array().log().sum();
            q.m.push_back((hp.beta0 * m0 + nk * xbar) / (hp.beta0 + nk));
            q.xbar.push_back(std::move(xbar));
            q.s.push_back(std::move(s));
            q.w_inv.push_back(std::move(w_inv));
            q.w.push_back(std::move(w));
        }
        return q;
    };

    auto expectations = [&](const detail::ViPosterior& q, Vector& ln_lambda, Vector& ln_pi) {
        const Eigen::Index K = q.nk.size();
        ln_lambda.resize(K);
        ln_pi.resize(K);
        const double alpha_hat = q.alpha.sum();
        for (Eigen::Index k = 0; k < K; ++k) {
            double acc = dd * std::numbers::ln2 + q.log_det_w[k];
            for (Eigen::Index i = 1; i <= d; ++i) acc += digamma(0.5 * (q.nu[k] + 1.0 - static_cast<double>(i)));
            ln_lambda[k] = acc;
            ln_pi[k] = digamma(q.alpha[k]) - digamma(alpha_hat);
        }
    };

    auto lower_bound = [&](const detail::ViPosterior& q, const Matrix& r) {
        const Eigen::Index K = q.nk.size();
        const double kk = static_cast<double>(K);
        Vector ln_lambda, ln_pi;
        expectations(q, ln_lambda, ln_pi);
        double e_px = 0.0, e_pz = 0.0, e_pmu = 0.0, e_qmu = 0.0;
        double sum_ln_lambda = 0.0, trace_term = 0.0;
        for (Eigen::Index k = 0; k < K; ++k) {
            const Vector dx = q.xbar[k] - q.m[k];
            e_px += 0.5 * q.nk[k] *
                    (ln_lambda[k] - dd / q.beta[k] - q.nu[k] * (q.s[k] * q.w[k]).trace() -
                     q.nu[k] * dx.dot(q.w[k] * dx) - dd * log_two_pi);
            e_pz += q.nk[k] * ln_pi[k];
            const Vector dm = q.m[k] - m0;
            e_pmu += 0.5 * (dd * std::log(hp.beta0 / (2.0 * std::numbers::pi)) + ln_lambda[k] -
                            dd * hp.beta0 / q.beta[k] - hp.beta0 * q.nu[k] * dm.dot(q.w[k] * dm));
            sum_ln_lambda += ln_lambda[k];
            trace_term += q.nu[k] * (w0_inv * q.w[k]).trace();
            const double entropy = -detail::log_wishart_norm(q.log_det_w[k], q.nu[k], d) -
                                   0.5 * (q.nu[k] - dd - 1.0) * ln_lambda[k] + 0.5 * q.nu[k] * dd;
            e_qmu += 0.5 * ln_lambda[k] + 0.5 * dd * std::log(q.beta[k] / (2.0 * std::numbers::pi)) - 0.5 * dd -
                     entropy;
        }
        e_pmu += kk * detail::log_wishart_norm(log_det_w0, nu0, d) + 0.5 * (nu0 - dd - 1.0) * sum_ln_lambda -
                 0.5 * trace_term;
        const double e_ppi =
            std::lgamma(kk * hp.alpha0) - kk * std::lgamma(hp.alpha0) + (hp.alpha0 - 1.0) * ln_pi.sum();
        double e_qz = 0.0;
        for (Eigen::Index i = 0; i < r.size(); ++i) {
            const double v = r.data()[i];
            if (v > 0.0) e_qz += v * std::log(v);
        }
        double e_qpi = detail::log_dirichlet_norm(q.alpha);
        for (Eigen::Index k = 0; k < K; ++k) e_qpi += (q.alpha[k] - 1.0) * ln_pi[k];
        return e_px + e_pz + e_ppi + e_pmu - e_qz - e_qpi - e_qmu;
    };

    std::vector<double> bound;
    std::vector<std::size_t> prunes;
    bool converged = false;
    std::size_t iter = 0;
    for (iter = 0; iter < std::max<std::size_t>(hp.max_iter, 1); ++iter) {
        const detail::ViPosterior q = m_step(resp);
        bound.push_back(lower_bound(q, resp));
        const bool pruned_before = !prunes.empty() && prunes.back() + 1 == iter;
        if (bound.size() > 1 && !pruned_before) {
            const double prev = bound[bound.size() - 2];
            if (std::abs(bound.back() - prev) <= hp.tol * std::max(1.0, std::abs(prev))) {
                converged = true;
                ++iter;
                break;
            }
        }

        // E-step.
        Vector ln_lambda, ln_pi;
        expectations(q, ln_lambda, ln_pi);
        const Eigen::Index K = q.nk.size();
        Matrix logits(n, K);
        for (Eigen::Index k = 0; k < K; ++k) {
            const double base = ln_pi[k] + 0.5 * ln_lambda[k] - 0.5 * dd * log_two_pi - 0.5 * dd / q.beta[k];
            const Matrix centered = X.rowwise() - q.m[k].transpose();
            const Vector quad = (centered * q.w[k]).cwiseProduct(centered).rowwise().sum();
            logits.col(k) = (base - 0.5 * q.nu[k] * quad.array()).matrix();
        }
        resp = detail::softmax_rows(logits);

        // Pruning of components that lost their support.
        const Vector nk = resp.colwise().sum().transpose();
        std::vector<Eigen::Index> keep;
        for (Eigen::Index k = 0; k < K; ++k)
            if (nk[k] >= 1.0 && nk[k] / nn >= hp.prune_weight) keep.push_back(k);
        if (keep.empty()) {
            Eigen::Index best = 0;
            nk.maxCoeff(&best);
            keep.push_back(best);
        }
        if (static_cast<Eigen::Index>(keep.size()) < K) {
            Matrix kept(n, static_cast<Eigen::Index>(keep.size()));
            for (std::size_t j = 0; j < keep.size(); ++j) kept.col(static_cast<Eigen::Index>(j)) = logits.col(keep[j]);
            resp = detail::softmax_rows(kept);
            prunes.push_back(iter);
        }
    }

    const detail::ViPosterior q = m_step(resp);
    std::vector<GaussianComponent> comps;
    for (Eigen::Index k = 0; k < q.nk.size(); ++k) {
        const double dof = q.nu[k] - dd - 1.0;
        Matrix cov = q.w_inv[k] / dof;
        comps.emplace_back(std::max(q.nk[k] / nn, std::numeric_limits<double>::min()), q.m[k], std::move(cov));
    }
    return ViResult{MixtureModel::normalized(std::move(comps)), std::move(bound), std::move(prunes), converged, iter};
}

// ---------------------------------------------------------------------------
// Representativity: symmetric Kullback-Leibler divergence between the mixture
// and an isotropic Parzen-window estimate over X, by Monte Carlo.

namespace detail {

inline Vector sample_mixture(const MixtureModel& model, Rng& rng) {
    const double u = uniform01(rng);
    double acc = 0.0;
    std::size_t k = model.size() - 1;
    for (std::size_t j = 0; j < model.size(); ++j) {
        acc += model[j].weight();
        if (u < acc) {
            k = j;
            break;
        }
    }
    Vector z(model.dim());
    for (auto& v : z) v = standard_normal(rng);
    return model[k].mean() + model[k].cholesky_lower() * z;
}

inline double parzen_log_density(const Matrix& X, double bandwidth, const Vector& x) {
    constexpr double log_two_pi = 1.8378770664093454835606594728112;
    const Vector d2 = (X.rowwise() - x.transpose()).rowwise().squaredNorm();
    const Vector terms = (-0.5 / (bandwidth * bandwidth)) * d2;
    const double dd = static_cast<double>(X.cols());
    return log_sum_exp(terms) - std::log(static_cast<double>(X.rows())) -
           0.5 * dd * (log_two_pi + 2.0 * std::log(bandwidth));
}

}  // namespace detail

/// MC estimate of KL(p || q) + KL(q || p) where p is the mixture and q the
/// Parzen estimate with isotropic Gaussian kernels of the given bandwidth.
inline double representativity(const MixtureModel& model, const Matrix& X, double bandwidth, std::size_t mc_samples,
                               std::uint64_t seed) {
    if (!(bandwidth > 0.0)) throw invalid_argument("representativity: bandwidth must be positive");
    if (mc_samples == 0) throw invalid_argument("representativity: mc_samples must be positive");
    if (X.rows() == 0 || X.cols() != model.dim()) throw invalid_argument("representativity: sample matrix shape");
    Rng rng = make_rng(seed, 0x5250);
    double kl_pq = 0.0;
    for (std::size_t s = 0; s < mc_samples; ++s) {
        const Vector x = detail::sample_mixture(model, rng);
        kl_pq += log_density(model, x) - detail::parzen_log_density(X, bandwidth, x);
    }
    double kl_qp = 0.0;
    for (std::size_t s = 0; s < mc_samples; ++s) {
        auto i = static_cast<Eigen::Index>(uniform01(rng) * static_cast<double>(X.rows()));
        i = std::min(i, X.rows() - 1);
        Vector x = X.row(i).transpose();
        for (auto& v : x) v += bandwidth * standard_normal(rng);
        kl_qp += detail::parzen_log_density(X, bandwidth, x) - log_density(model, x);
    }
    const double m = static_cast<double>(mc_samples);
    return kl_pq / m + kl_qp / m;
}

// ---------------------------------------------------------------------------
// Persistence.
//
//   rwm-gmm 1
//   K <K> D <D>
//   component <k>
//   weight <w>
//   mean <D values>
//   covariance <D*D values, row-major>

inline void write_model(std::ostream& os, const MixtureModel& model) {
    const auto d = model.dim();
    os << "rwm-gmm 1\n" << "K " << model.size() << " D " << d << '\n';
    for (std::size_t k = 0; k < model.size(); ++k) {
        const auto& c = model[k];
        os << "component " << k << '\n' << "weight " << format_real(c.weight()) << '\n' << "mean";
        for (Eigen::Index i = 0; i < d; ++i) os << ' ' << format_real(c.mean()[i]);
        os << "\ncovariance";
        for (Eigen::Index i = 0; i < d; ++i)
            for (Eigen::Index j = 0; j < d; ++j) os << ' ' << format_real(c.covariance()(i, j));
        os << '\n';
    }
}

inline std::string model_to_string(const MixtureModel& model) {
    std::ostringstream os;
    write_model(os, model);
    return os.str();
}

inline std::uint64_t model_hash(const MixtureModel& model) { return fnv1a(model_to_string(model)); }

/// Reads a model written by write_model. `line_offset` is added to reported
/// line numbers when the block is embedded in another file.
inline MixtureModel read_model(std::istream& is, std::size_t line_offset = 0) {
    std::string line;
    std::size_t lineno = line_offset;
    auto next = [&](std::string_view expect) {
        while (std::getline(is, line)) {
            ++lineno;
            if (!trim(line).empty()) break;
        }
        if (!is && line.empty()) throw parse_error("unexpected end of model, expected '" + std::string{expect} + "'", lineno);
        auto toks = tokens(line);
        if (toks.empty() || toks.front() != expect)
            throw parse_error("expected '" + std::string{expect} + "' in model file", lineno);
        return toks;
    };
    auto header = next("rwm-gmm");
    if (header.size() != 2 || header[1] != "1") throw parse_error("unsupported model version", lineno);
    auto dims = next("K");
    if (dims.size() != 4 || dims[2] != "D") throw parse_error("malformed K/D header", lineno);
    const auto K = parse_int<std::size_t>(dims[1], lineno);
    const auto D = parse_int<Eigen::Index>(dims[3], lineno);
    if (K == 0 || D <= 0) throw parse_error("K and D must be positive", lineno);
    std::vector<GaussianComponent> comps;
    for (std::size_t k = 0; k < K; ++k) {
        next("component");
        auto w = next("weight");
        if (w.size() != 2) throw parse_error("malformed weight", lineno);
        const double weight = parse_real(w[1], lineno);
        auto m = next("mean");
        if (static_cast<Eigen::Index>(m.size()) != D + 1) throw parse_error("mean has wrong length", lineno);
        Vector mean(D);
        for (Eigen::Index i = 0; i < D; ++i) mean[i] = parse_real(m[static_cast<std::size_t>(i) + 1], lineno);
        auto cv = next("covariance");
        if (static_cast<Eigen::Index>(cv.size()) != D * D + 1) throw parse_error("covariance has wrong length", lineno);
        Matrix cov(D, D);
        for (Eigen::Index i = 0; i < D; ++i)
            for (Eigen::Index j = 0; j < D; ++j)
                cov(i, j) = parse_real(cv[static_cast<std::size_t>(i * D + j) + 1], lineno);
        try {
            comps.emplace_back(weight, std::move(mean), std::move(cov));
        } catch (const invalid_argument& e) {
            throw parse_error(e.what(), lineno);
        }
    }
    try {
        return MixtureModel{std::move(comps)};
    } catch (const invalid_argument& e) {
        throw parse_error(e.what(), lineno);
    }
}

}  // namespace rwm
