#pragma once

// Dissimilarity measures over continuous and one-of-K categorical parts.

#include "rwm/common.hpp"
#include "rwm/data.hpp"
#include "rwm/gmm.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>

namespace rwm {

enum class SimilarityKind { euclidean, mahalanobis, gmm, rwm, categorical01 };

namespace detail {

inline void check_same_size(const Vector& x, const Vector& y) {
    if (x.size() != y.size()) throw invalid_argument("dimension mismatch");
}

}  // namespace detail

inline double euclidean(const Vector& x, const Vector& y) {
    detail::check_same_size(x, y);
    return (x - y).norm();
}

/// sqrt((x-y)^T P (x-y)) for a precision matrix P. The quadratic form is
/// clamped at zero before the square root.
inline double mahalanobis(const Matrix& precision, const Vector& x, const Vector& y) {
    detail::check_same_size(x, y);
    if (precision.rows() != x.size() || precision.cols() != x.size())
        throw invalid_argument("mahalanobis: precision shape mismatch");
    const Vector d = x - y;
    return std::sqrt(std::max(0.0, d.dot(precision * d)));
}

/// Sum over k of pi_k times the k-th component distance.
inline double gmm_distance(const MixtureModel& model, const Vector& x, const Vector& y) {
    detail::check_dim(model, x);
    detail::check_dim(model, y);
    double sum = 0.0;
    for (const auto& c : model.components()) sum += c.weight() * mahalanobis(c.precision(), x, y);
    return sum;
}

/// RWM similarity given responsibilities of both points.
inline double rwm_similarity(const MixtureModel& model, const Vector& x, const Vector& y, const Vector& rho_x,
                             const Vector& rho_y) {
    detail::check_dim(model, x);
    detail::check_dim(model, y);
    const auto k = static_cast<Eigen::Index>(model.size());
    if (rho_x.size() != k || rho_y.size() != k) throw invalid_argument("rwm_similarity: responsibility size mismatch");
    double sum = 0.0;
    for (Eigen::Index i = 0; i < k; ++i)
        sum += 0.5 * (rho_x[i] + rho_y[i]) * mahalanobis(model[static_cast<std::size_t>(i)].precision(), x, y);
    return sum;
}

inline double rwm_similarity(const MixtureModel& model, const Vector& x, const Vector& y) {
    return rwm_similarity(model, x, y, responsibilities(model, x), responsibilities(model, y));
}

/// Number of categorical dimensions whose one-of-K blocks differ.
inline std::size_t categorical_delta(std::span<const std::uint8_t> xc, std::span<const std::uint8_t> yc,
                                     const Schema& schema) {
    if (xc.size() != schema.encoded_dim() || yc.size() != schema.encoded_dim())
        throw invalid_argument("categorical_delta: block structure mismatch");
    std::size_t differing = 0;
    const auto& off = schema.block_offsets();
    const auto& len = schema.block_sizes();
    for (std::size_t e = 0; e < off.size(); ++e)
        if (!std::equal(xc.begin() + static_cast<std::ptrdiff_t>(off[e]),
                        xc.begin() + static_cast<std::ptrdiff_t>(off[e] + len[e]),
                        yc.begin() + static_cast<std::ptrdiff_t>(off[e])))
            ++differing;
    return differing;
}

}  // namespace rwm
