#pragma once

// C-SVM training on precomputed Gram matrices with SMO, one-vs-one
// multi-class decomposition, prediction and model persistence.

#include "rwm/common.hpp"
#include "rwm/data.hpp"
#include "rwm/gmm.hpp"
#include "rwm/kernel.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <istream>
#include <limits>
#include <map>
#include <memory>
#include <ostream>
#include <set>
#include <span>
#include <string>
#include <thread>
#include <utility>
#include <vector>

namespace rwm {

struct SmoOptions {
    /// Stopping tolerance on the maximal KKT violation m(a) - M(a).
    double tol = 1e-3;
    std::size_t max_iter = 10'000'000;
    /// Curvature substituted when a working pair has eta <= 0.
    double tau = 1e-12;
};

/// One binary C-SVM. Positive labels belong to class_pair.first.
/// f(x) = sum_i dual_coef_i K(x, sv_i) + bias.
struct BinarySvm {
    std::vector<std::size_t> sv_indices;
    std::vector<double> dual_coef;
    double bias = 0.0;
    double c = 1.0;
    std::pair<int, int> class_pair{0, 1};
    bool converged = false;
    std::size_t iterations = 0;
    /// Full dual vector over the training set (kept for diagnostics).
    std::vector<double> alpha;
};

namespace detail {

inline bool in_up(int y, double a, double c) { return (y > 0 && a < c) || (y < 0 && a > 0.0); }
inline bool in_low(int y, double a, double c) { return (y > 0 && a > 0.0) || (y < 0 && a < c); }

}  // namespace detail

/// Solves min 1/2 a^T Q a - e^T a, 0 <= a <= C, y^T a = 0 with Q_ij = y_i y_j K_ij.
/// Working pairs are chosen as the maximal violating pair; ties go to the
/// lowest index.
inline BinarySvm smo_train_binary(const Matrix& gram, const std::vector<int>& labels, double c,
                                  const SmoOptions& opt = {}) {
    const std::size_t n = labels.size();
    if (gram.rows() != static_cast<Eigen::Index>(n) || gram.cols() != static_cast<Eigen::Index>(n))
        throw invalid_argument("smo: gram size does not match labels");
    if (!(c > 0.0)) throw invalid_argument("smo: C must be positive");
    bool pos = false;
    bool neg = false;
    for (const int y : labels) {
        if (y != 1 && y != -1) throw invalid_argument("smo: labels must be +1 or -1");
        (y > 0 ? pos : neg) = true;
    }
    if (!pos || !neg) throw invalid_argument("smo: need at least one sample of each sign");

    std::vector<double> a(n, 0.0);
    std::vector<double> g(n, -1.0);
    const auto k = [&](std::size_t i, std::size_t j) {
        return gram(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
    };

    BinarySvm out;
    out.c = c;
    std::size_t iter = 0;
    for (;; ++iter) {
        double gmax = -std::numeric_limits<double>::infinity();
        double gmin = std::numeric_limits<double>::infinity();
        std::size_t i = n;
        std::size_t j = n;
        for (std::size_t t = 0; t < n; ++t) {
            const double v = -labels[t] * g[t];
            if (detail::in_up(labels[t], a[t], c) && v > gmax) {
                gmax = v;
                i = t;
            }
            if (detail::in_low(labels[t], a[t], c) && v < gmin) {
                gmin = v;
                j = t;
            }
        }
        if (i == n || j == n || gmax - gmin < opt.tol) {
            out.converged = true;
            break;
        }
        if (iter >= opt.max_iter) break;

        const double yi = labels[i];
        const double yj = labels[j];
        const double old_ai = a[i];
        const double old_aj = a[j];
        if (yi != yj) {
            double quad = k(i, i) + k(j, j) - 2.0 * k(i, j);
            if (quad <= 0.0) quad = opt.tau;
            const double delta = (-g[i] - g[j]) / quad;
            const double diff = a[i] - a[j];
            a[i] += delta;
            a[j] += delta;
            if (diff > 0.0) {
                if (a[j] < 0.0) {
                    a[j] = 0.0;
                    a[i] = diff;
                }
            } else if (a[i] < 0.0) {
                a[i] = 0.0;
                a[j] = -diff;
            }
            if (diff > 0.0) {
                if (a[i] > c) {
                    a[i] = c;
                    a[j] = c - diff;
                }
            } else if (a[j] > c) {
                a[j] = c;
                a[i] = c + diff;
            }
        } else {
            double quad = k(i, i) + k(j, j) - 2.0 * k(i, j);
            if (quad <= 0.0) quad = opt.tau;
            const double delta = (g[i] - g[j]) / quad;
            const double sum = a[i] + a[j];
            a[i] -= delta;
            a[j] += delta;
            if (sum > c) {
                if (a[i] > c) {
                    a[i] = c;
                    a[j] = sum - c;
                }
            } else if (a[j] < 0.0) {
                a[j] = 0.0;
                a[i] = sum;
            }
            if (sum > c) {
                if (a[j] > c) {
                    a[j] = c;
                    a[i] = sum - c;
                }
            } else if (a[i] < 0.0) {
                a[i] = 0.0;
                a[j] = sum;
            }
        }
        const double dai = a[i] - old_ai;
        const double daj = a[j] - old_aj;
        for (std::size_t t = 0; t < n; ++t)
            g[t] += labels[t] * (yi * k(t, i) * dai + yj * k(t, j) * daj);
    }
    out.iterations = iter;

    // Bias from free vectors, otherwise the midpoint of the feasible interval.
    double ub = std::numeric_limits<double>::infinity();
    double lb = -std::numeric_limits<double>::infinity();
    double sum_free = 0.0;
    std::size_t n_free = 0;
    for (std::size_t t = 0; t < n; ++t) {
        const double yg = labels[t] * g[t];
        if (a[t] >= c) {
            if (labels[t] < 0) ub = std::min(ub, yg);
            else lb = std::max(lb, yg);
        } else if (a[t] <= 0.0) {
            if (labels[t] > 0) ub = std::min(ub, yg);
            else lb = std::max(lb, yg);
        } else {
            ++n_free;
            sum_free += yg;
        }
    }
    const double rho = n_free > 0 ? sum_free / static_cast<double>(n_free) : 0.5 * (ub + lb);
    out.bias = -rho;
    for (std::size_t t = 0; t < n; ++t) {
        if (a[t] > 0.0) {
            out.sv_indices.push_back(t);
            out.dual_coef.push_back(a[t] * labels[t]);
        }
    }
    out.alpha = std::move(a);
    return out;
}

/// Decision values f(x_i) of a binary machine on its own training Gram.
inline std::vector<double> training_decision_values(const BinarySvm& m, const Matrix& gram) {
    std::vector<double> f(static_cast<std::size_t>(gram.rows()), m.bias);
    for (std::size_t s = 0; s < m.sv_indices.size(); ++s)
        for (Eigen::Index i = 0; i < gram.rows(); ++i)
            f[static_cast<std::size_t>(i)] += m.dual_coef[s] * gram(i, static_cast<Eigen::Index>(m.sv_indices[s]));
    return f;
}

/// Largest violation of the KKT conditions: a_i = 0 requires y f >= 1,
/// 0 < a_i < C requires y f = 1 and a_i = C requires y f <= 1.
inline double kkt_residual(const BinarySvm& m, const Matrix& gram, const std::vector<int>& labels) {
    const auto f = training_decision_values(m, gram);
    double worst = 0.0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const double margin = labels[i] * f[i] - 1.0;
        const double ai = m.alpha.at(i);
        double v = 0.0;
        if (ai <= 0.0) v = std::max(0.0, -margin);
        else if (ai >= m.c) v = std::max(0.0, margin);
        else v = std::abs(margin);
        worst = std::max(worst, v);
    }
    return worst;
}

/// One-vs-one ensemble over positions of a training Gram. sv_indices of the
/// binaries refer to those positions.
struct MulticlassSolution {
    std::size_t num_classes = 0;
    std::vector<BinarySvm> binaries;
    /// Class pairs without training material on one side.
    std::vector<std::pair<int, int>> skipped_pairs;

    [[nodiscard]] std::size_t support_vector_count() const {
        std::set<std::size_t> all;
        for (const auto& b : binaries) all.insert(b.sv_indices.begin(), b.sv_indices.end());
        return all.size();
    }

    [[nodiscard]] bool converged() const {
        return std::all_of(binaries.begin(), binaries.end(), [](const auto& b) { return b.converged; });
    }
};

inline MulticlassSolution solve_multiclass(const Matrix& gram, const std::vector<int>& labels, std::size_t num_classes,
                                           double c, const SmoOptions& opt = {}, unsigned threads = 1) {
    if (gram.rows() != static_cast<Eigen::Index>(labels.size()) || gram.cols() != gram.rows())
        throw invalid_argument("train_multiclass: gram size does not match labels");
    std::vector<std::vector<std::size_t>> members(num_classes);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= num_classes)
            throw invalid_argument("train_multiclass: class id out of range");
        members[static_cast<std::size_t>(labels[i])].push_back(i);
    }
    std::size_t present = 0;
    for (const auto& m : members) present += m.empty() ? 0 : 1;
    if (present < 2) throw invalid_argument("train_multiclass: need at least two classes");

    MulticlassSolution sol;
    sol.num_classes = num_classes;
    std::vector<std::pair<int, int>> pairs;
    for (std::size_t a = 0; a < num_classes; ++a)
        for (std::size_t b = a + 1; b < num_classes; ++b) {
            if (members[a].empty() || members[b].empty()) sol.skipped_pairs.emplace_back(int(a), int(b));
            else pairs.emplace_back(int(a), int(b));
        }
    sol.binaries.resize(pairs.size());
    detail::parallel_rows(pairs.size(), threads, [&](std::size_t p) {
        const auto [ca, cb] = pairs[p];
        std::vector<std::size_t> idx = members[static_cast<std::size_t>(ca)];
        idx.insert(idx.end(), members[static_cast<std::size_t>(cb)].begin(), members[static_cast<std::size_t>(cb)].end());
        std::sort(idx.begin(), idx.end());
        const auto m = static_cast<Eigen::Index>(idx.size());
        Matrix sub(m, m);
        std::vector<int> y(idx.size());
        for (Eigen::Index r = 0; r < m; ++r) {
            y[static_cast<std::size_t>(r)] = labels[idx[static_cast<std::size_t>(r)]] == ca ? 1 : -1;
            for (Eigen::Index s = 0; s < m; ++s)
                sub(r, s) = gram(static_cast<Eigen::Index>(idx[static_cast<std::size_t>(r)]),
                                 static_cast<Eigen::Index>(idx[static_cast<std::size_t>(s)]));
        }
        BinarySvm bin = smo_train_binary(sub, y, c, opt);
        bin.class_pair = {ca, cb};
        for (auto& s : bin.sv_indices) s = idx[s];
        std::vector<double> full(labels.size(), 0.0);
        for (std::size_t r = 0; r < idx.size(); ++r) full[idx[r]] = bin.alpha[r];
        bin.alpha = std::move(full);
        sol.binaries[p] = std::move(bin);
    });
    return sol;
}

/// Decision value of one binary machine given the kernel row K(x, train_j).
inline double decision_value(const BinarySvm& m, const Eigen::Ref<const Eigen::RowVectorXd>& krow) {
    double f = m.bias;
    for (std::size_t s = 0; s < m.sv_indices.size(); ++s) f += m.dual_coef[s] * krow[static_cast<Eigen::Index>(m.sv_indices[s])];
    return f;
}

/// Per-sample outcome of one-vs-one voting.
struct VoteResult {
    int predicted = 0;
    std::vector<int> votes;
    /// Decision value per binary machine, in MulticlassSolution order.
    std::vector<double> decisions;
};

/// A zero decision value votes for the lower class id; vote ties go to the
/// lowest class id.
inline VoteResult vote(const MulticlassSolution& sol, const Eigen::Ref<const Eigen::RowVectorXd>& krow) {
    VoteResult r;
    r.votes.assign(sol.num_classes, 0);
    r.decisions.reserve(sol.binaries.size());
    for (const auto& b : sol.binaries) {
        const double f = decision_value(b, krow);
        r.decisions.push_back(f);
        ++r.votes[static_cast<std::size_t>(f >= 0.0 ? b.class_pair.first : b.class_pair.second)];
    }
    r.predicted = static_cast<int>(std::max_element(r.votes.begin(), r.votes.end()) - r.votes.begin());
    return r;
}

/// Rows of `kernel` are probes, columns the training positions.
inline std::vector<VoteResult> vote_batch(const MulticlassSolution& sol, const Matrix& kernel) {
    std::vector<VoteResult> out;
    out.reserve(static_cast<std::size_t>(kernel.rows()));
    for (Eigen::Index i = 0; i < kernel.rows(); ++i) out.push_back(vote(sol, kernel.row(i)));
    return out;
}

/// Self-contained trained model: keeps only the support-vector samples.
struct SvmModel {
    KernelSpec kernel;
    std::vector<std::string> classes;
    std::vector<BinarySvm> binaries;
    std::vector<std::pair<int, int>> skipped_pairs;
    /// Support-vector samples referenced by binaries' sv_indices.
    std::vector<Sample> train_samples;
    /// Caller-supplied ids of train_samples (e.g. dataset row indices).
    std::vector<std::size_t> source_ids;

    [[nodiscard]] MulticlassSolution solution() const {
        return MulticlassSolution{classes.size(), binaries, skipped_pairs};
    }
};

/// Trains one machine per class pair on the sub-Gram of that pair.
inline SvmModel train_multiclass(const Matrix& gram, const std::vector<int>& labels, double c, const KernelSpec& kernel,
                                 std::span<const Sample> samples, std::vector<std::string> classes,
                                 std::vector<std::size_t> sample_ids = {}, const SmoOptions& opt = {},
                                 unsigned threads = 1) {
    if (samples.size() != labels.size()) throw invalid_argument("train_multiclass: sample count mismatch");
    if (sample_ids.empty()) {
        sample_ids.resize(samples.size());
        for (std::size_t i = 0; i < samples.size(); ++i) sample_ids[i] = i;
    }
    auto sol = solve_multiclass(gram, labels, classes.size(), c, opt, threads);
    SvmModel model;
    model.kernel = kernel;
    model.classes = std::move(classes);
    model.skipped_pairs = sol.skipped_pairs;
    std::map<std::size_t, std::size_t> compact;
    for (const auto& b : sol.binaries)
        for (const auto s : b.sv_indices) compact.emplace(s, 0);
    std::size_t next = 0;
    for (auto& [pos, slot] : compact) {
        slot = next++;
        model.train_samples.push_back(samples[pos]);
        model.source_ids.push_back(sample_ids.at(pos));
    }
    for (auto& b : sol.binaries) {
        for (auto& s : b.sv_indices) s = compact.at(s);
        b.alpha.clear();
        model.binaries.push_back(std::move(b));
    }
    return model;
}

inline SvmModel train_multiclass(const GramMatrix& gram, const std::vector<int>& labels, double c,
                                 const KernelSpec& kernel, std::span<const Sample> samples,
                                 std::vector<std::string> classes, const SmoOptions& opt = {}, unsigned threads = 1) {
    return train_multiclass(gram.values, labels, c, kernel, samples, std::move(classes), gram.sample_ids, opt, threads);
}

inline std::size_t count_support_vectors(const SvmModel& model) { return model.train_samples.size(); }

inline std::vector<VoteResult> predict_votes(const SvmModel& model, std::span<const Sample> xs, unsigned threads = 1) {
    if (xs.empty()) return {};
    if (model.train_samples.empty()) throw invalid_argument("predict: model has no support vectors");
    const Matrix k = cross_kernel(model.kernel, xs, model.train_samples, threads);
    return vote_batch(model.solution(), k);
}

inline std::vector<int> predict_batch(const SvmModel& model, std::span<const Sample> xs, unsigned threads = 1) {
    std::vector<int> out;
    for (const auto& v : predict_votes(model, xs, threads)) out.push_back(v.predicted);
    return out;
}

inline int predict(const SvmModel& model, const Sample& x) {
    return predict_batch(model, std::span<const Sample>(&x, 1)).front();
}

// ---------------------------------------------------------------------------
// Model file:
//
//   rwm-svm 1
//   kernel <fingerprint>
//   [rwm-gmm block]              (gmm and rwm families)
//   classes <n> <name...>
//   samples <n> <D> <E'>
//   sample <id> <continuous...> <bits...>
//   binary <a> <b> <C> <bias> <converged> <n_sv>
//   sv <index> <dual>
//   skipped <a> <b>
//   end

inline void write_svm_model(std::ostream& os, const SvmModel& m) {
    os << "rwm-svm 1\nkernel " << m.kernel.fingerprint() << '\n';
    if (m.kernel.model) write_model(os, *m.kernel.model);
    os << "classes " << m.classes.size();
    for (const auto& c : m.classes) os << ' ' << c;
    const auto d = m.train_samples.empty() ? 0 : m.train_samples.front().continuous.size();
    const auto e = m.train_samples.empty() ? 0 : m.train_samples.front().categorical.size();
    os << "\nsamples " << m.train_samples.size() << ' ' << d << ' ' << e << '\n';
    for (std::size_t i = 0; i < m.train_samples.size(); ++i) {
        const auto& s = m.train_samples[i];
        os << "sample " << m.source_ids.at(i);
        for (Eigen::Index j = 0; j < s.continuous.size(); ++j) os << ' ' << format_real(s.continuous[j]);
        for (const auto bit : s.categorical) os << ' ' << int(bit);
        os << '\n';
    }
    for (const auto& b : m.binaries) {
        os << "binary " << b.class_pair.first << ' ' << b.class_pair.second << ' ' << format_real(b.c) << ' '
           << format_real(b.bias) << ' ' << (b.converged ? 1 : 0) << ' ' << b.sv_indices.size() << '\n';
        for (std::size_t s = 0; s < b.sv_indices.size(); ++s)
            os << "sv " << b.sv_indices[s] << ' ' << format_real(b.dual_coef[s]) << '\n';
    }
    for (const auto& [a, b] : m.skipped_pairs) os << "skipped " << a << ' ' << b << '\n';
    os << "end\n";
}

inline SvmModel read_svm_model(std::istream& is) {
    SvmModel m;
    std::string line;
    std::size_t lineno = 0;
    const auto next = [&]() -> std::vector<std::string_view> {
        while (std::getline(is, line)) {
            ++lineno;
            auto t = tokens(line);
            if (!t.empty()) return t;
        }
        throw parse_error("svm model: unexpected end of input", lineno);
    };
    auto t = next();
    if (t.size() != 2 || t[0] != "rwm-svm" || t[1] != "1") throw parse_error("svm model: bad header", lineno);
    t = next();
    if (t.size() != 11 || t[0] != "kernel" || t[1] != "family" || t[3] != "gamma" || t[5] != "alpha" || t[7] != "beta" ||
        t[9] != "model")
        throw parse_error("svm model: bad kernel line", lineno);
    try {
        m.kernel.family = parse_family(t[2]);
    } catch (const invalid_argument& e) {
        throw parse_error(e.what(), lineno);
    }
    m.kernel.gamma = parse_real(t[4], lineno);
    m.kernel.alpha = parse_real(t[6], lineno);
    m.kernel.beta = parse_real(t[8], lineno);
    const std::string hash{t[10]};
    if (m.kernel.needs_model()) {
        m.kernel.model = std::make_shared<const MixtureModel>(read_model(is, lineno));
        lineno += 2 + 4 * m.kernel.model->size();
    }
    t = next();
    if (t.size() < 2 || t[0] != "classes") throw parse_error("svm model: expected classes", lineno);
    const auto nc = parse_int<std::size_t>(t[1], lineno);
    if (t.size() != 2 + nc) throw parse_error("svm model: class count mismatch", lineno);
    for (std::size_t i = 0; i < nc; ++i) m.classes.emplace_back(t[2 + i]);
    t = next();
    if (t.size() != 4 || t[0] != "samples") throw parse_error("svm model: expected samples", lineno);
    const auto ns = parse_int<std::size_t>(t[1], lineno);
    const auto d = parse_int<std::size_t>(t[2], lineno);
    const auto e = parse_int<std::size_t>(t[3], lineno);
    for (std::size_t i = 0; i < ns; ++i) {
        t = next();
        if (t.size() != 2 + d + e || t[0] != "sample") throw parse_error("svm model: bad sample row", lineno);
        m.source_ids.push_back(parse_int<std::size_t>(t[1], lineno));
        Sample s;
        s.continuous.resize(static_cast<Eigen::Index>(d));
        for (std::size_t j = 0; j < d; ++j) s.continuous[static_cast<Eigen::Index>(j)] = parse_real(t[2 + j], lineno);
        for (std::size_t j = 0; j < e; ++j) s.categorical.push_back(static_cast<std::uint8_t>(parse_int<int>(t[2 + d + j], lineno)));
        m.train_samples.push_back(std::move(s));
    }
    while (true) {
        t = next();
        if (t[0] == "end") break;
        if (t[0] == "skipped" && t.size() == 3) {
            m.skipped_pairs.emplace_back(parse_int<int>(t[1], lineno), parse_int<int>(t[2], lineno));
            continue;
        }
        if (t[0] != "binary" || t.size() != 7) throw parse_error("svm model: expected binary", lineno);
        BinarySvm b;
        b.class_pair = {parse_int<int>(t[1], lineno), parse_int<int>(t[2], lineno)};
        b.c = parse_real(t[3], lineno);
        b.bias = parse_real(t[4], lineno);
        b.converged = parse_int<int>(t[5], lineno) != 0;
        const auto nsv = parse_int<std::size_t>(t[6], lineno);
        for (std::size_t s = 0; s < nsv; ++s) {
            t = next();
            if (t.size() != 3 || t[0] != "sv") throw parse_error("svm model: bad sv row", lineno);
            const auto idx = parse_int<std::size_t>(t[1], lineno);
            if (idx >= ns) throw parse_error("svm model: sv index out of range", lineno);
            b.sv_indices.push_back(idx);
            b.dual_coef.push_back(parse_real(t[2], lineno));
        }
        m.binaries.push_back(std::move(b));
    }
    try {
        m.kernel.validate();
    } catch (const invalid_argument& ex) {
        throw parse_error(std::string{"svm model: "} + ex.what(), lineno);
    }
    const auto fp = m.kernel.fingerprint();
    if (fp.substr(fp.rfind(' ') + 1) != hash) throw parse_error("svm model: mixture hash does not match kernel line", lineno);
    return m;
}

}  // namespace rwm
