#pragma once

// Modality alignment objectives.
//
// Shapes: x (face) and v (voice) embeddings are N x D with row i belonging to
// identity label y[i]; the shared classifier W is D x M; s_hat holds one
// non-negative weight per row. Every loss returns its value, its exact
// gradients and the unweighted per-row terms.

#include "vfa/types.hpp"

#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace vfa {

struct LossOutput {
    double value = 0.0;
    Matrix grad_x;                 // N x D
    Matrix grad_v;                 // N x D
    std::optional<Matrix> grad_w;  // D x M, absent when W is not involved
    std::vector<double> per_sample;
};

/// Which terms of the objective are active.
struct LossTerms {
    bool implicit = true;
    bool explicit_ = true;
    bool normalize_anchor = false;
};

inline std::vector<double> uniform_weights(std::size_t n) {
    return std::vector<double>(n, n == 0 ? 0.0 : 1.0 / static_cast<double>(n));
}

/// log(exp(a) + exp(b)) without overflow; either argument may be -inf.
inline double log_add_exp(double a, double b) {
    if (a == -std::numeric_limits<double>::infinity()) return b;
    if (b == -std::numeric_limits<double>::infinity()) return a;
    const double hi = std::max(a, b);
    return hi + std::log1p(std::exp(-std::abs(a - b)));
}

namespace detail {

inline void check_batch(const Matrix& x, const Matrix& v, const Labels& y, std::span<const double> s_hat,
                        const char* who) {
    const auto n = static_cast<std::size_t>(x.rows());
    if (v.rows() != x.rows() || v.cols() != x.cols())
        throw std::invalid_argument(std::string(who) + ": x and v shapes differ");
    if (y.size() != n) throw std::invalid_argument(std::string(who) + ": label count != rows");
    if (s_hat.size() != n) throw std::invalid_argument(std::string(who) + ": weight count != rows");
    for (double s : s_hat)
        if (!(s >= 0.0)) throw std::invalid_argument(std::string(who) + ": negative weight");
}

/// Softmax cross-entropy of embeddings against W; accumulates into grad_e and grad_w.
inline void classify(const Matrix& e, const Labels& y, const Matrix& w, std::span<const double> s_hat,
                     std::vector<double>& terms, Matrix& grad_e, Matrix& grad_w, double& value) {
    const Matrix logits = e * w;  // N x M
    Matrix g(logits.rows(), logits.cols());
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
        const auto row = logits.row(i);
        const double mx = row.maxCoeff();
        const double lse = mx + std::log((row.array() - mx).exp().sum());
        const auto yi = static_cast<Eigen::Index>(y[static_cast<std::size_t>(i)]);
        const double term = lse - row(yi);
        const double s = s_hat[static_cast<std::size_t>(i)];
        terms[static_cast<std::size_t>(i)] += term;
        value += s * term;
        g.row(i) = s * (row.array() - lse).exp().matrix();
        g(i, yi) -= s;
    }
    grad_e.noalias() += g * w.transpose();
    grad_w.noalias() += e.transpose() * g;
}

inline Matrix normalized_rows(const Matrix& a, Vector& norms, const char* who) {
    norms = a.rowwise().norm();
    for (Eigen::Index i = 0; i < a.rows(); ++i)
        if (!(norms(i) > 0.0))
            throw std::invalid_argument(std::string(who) + ": zero-norm embedding row " + std::to_string(i));
    return norms.cwiseInverse().asDiagonal() * a;
}

/// Back-propagates grad through a row normalization a_hat = a / ||a||.
inline Matrix through_normalization(const Matrix& a_hat, const Vector& norms, const Matrix& grad_hat) {
    const Vector proj = (a_hat.array() * grad_hat.array()).rowwise().sum();
    Matrix out = grad_hat - proj.asDiagonal() * a_hat;
    return norms.cwiseInverse().asDiagonal() * out;
}

/// Similarities a_ij = anchor_i . gallery_hat_j for one direction of the N-pair loss.
struct Direction {
    Matrix anchor;   // as used (normalized or raw)
    Vector anchor_norms;
    Matrix gallery;  // normalized
    Vector gallery_norms;
    Matrix sim;      // N x N
};

inline Direction make_direction(const Matrix& anchor, const Matrix& gallery, bool normalize_anchor,
                                const char* who) {
    Direction d;
    d.gallery = normalized_rows(gallery, d.gallery_norms, who);
    if (normalize_anchor) {
        d.anchor = normalized_rows(anchor, d.anchor_norms, who);
    } else {
        d.anchor = anchor;
        d.anchor_norms = anchor.rowwise().norm();
    }
    d.sim.noalias() = d.anchor * d.gallery.transpose();
    return d;
}

/// log of the negative-set sum of exp(a_ij - a_ii); -inf when no negatives.
inline double negative_log_ratio(const Direction& d, const Labels& y, Eigen::Index i) {
    const double pos = d.sim(i, i);
    double mx = -std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < d.sim.cols(); ++j)
        if (y[static_cast<std::size_t>(j)] != y[static_cast<std::size_t>(i)]) mx = std::max(mx, d.sim(i, j) - pos);
    if (mx == -std::numeric_limits<double>::infinity()) return mx;
    double acc = 0.0;
    for (Eigen::Index j = 0; j < d.sim.cols(); ++j)
        if (y[static_cast<std::size_t>(j)] != y[static_cast<std::size_t>(i)]) acc += std::exp(d.sim(i, j) - pos - mx);
    return mx + std::log(acc);
}

/// One direction of the margin N-pair loss. Adds weighted gradients into the
/// raw anchor and gallery matrices.
inline void npair_direction(const Matrix& anchor, const Matrix& gallery, const Labels& y, double margin,
                            std::span<const double> s_hat, bool normalize_anchor, std::vector<double>& terms,
                            Matrix& grad_anchor, Matrix& grad_gallery, double& value) {
    const Direction d = make_direction(anchor, gallery, normalize_anchor, "explicit_loss");
    const Eigen::Index n = d.sim.rows();
    const double log_m = std::log(margin);
    Matrix c = Matrix::Zero(n, n);  // d(weighted loss)/d(sim)
    for (Eigen::Index i = 0; i < n; ++i) {
        const double r = negative_log_ratio(d, y, i);
        const double term = log_add_exp(log_m, r);
        const double s = s_hat[static_cast<std::size_t>(i)];
        terms[static_cast<std::size_t>(i)] += term;
        value += s * term;
        const double pos = d.sim(i, i);
        double total = 0.0;
        for (Eigen::Index j = 0; j < n; ++j) {
            if (y[static_cast<std::size_t>(j)] == y[static_cast<std::size_t>(i)]) continue;
            const double w = std::exp(d.sim(i, j) - pos - term);
            c(i, j) = s * w;
            total += w;
        }
        c(i, i) -= s * total;
    }
    const Matrix grad_anchor_used = c * d.gallery;
    const Matrix grad_gallery_hat = c.transpose() * d.anchor;
    if (normalize_anchor) {
        grad_anchor += through_normalization(d.anchor, d.anchor_norms, grad_anchor_used);
    } else {
        grad_anchor += grad_anchor_used;
    }
    grad_gallery += through_normalization(d.gallery, d.gallery_norms, grad_gallery_hat);
}

}  // namespace detail

/// Shared-classifier identity loss over both modalities:
///   sum_i s_i * [ -log softmax_{y_i}(W^T x_i) - log softmax_{y_i}(W^T v_i) ].
/// With s_i = 1/N this is the mean face loss plus the mean voice loss.
inline LossOutput implicit_loss(const Matrix& x, const Matrix& v, const Labels& y, const Matrix& w,
                                std::span<const double> s_hat) {
    detail::check_batch(x, v, y, s_hat, "implicit_loss");
    if (w.rows() != x.cols()) throw std::invalid_argument("implicit_loss: W rows != embedding dim");
    const auto classes = static_cast<std::size_t>(w.cols());
    for (auto label : y)
        if (label >= classes)
            throw std::invalid_argument("implicit_loss: label " + std::to_string(label) + " out of range [0, " +
                                        std::to_string(classes) + ")");
    LossOutput out;
    out.per_sample.assign(y.size(), 0.0);
    out.grad_x = Matrix::Zero(x.rows(), x.cols());
    out.grad_v = Matrix::Zero(v.rows(), v.cols());
    Matrix gw = Matrix::Zero(w.rows(), w.cols());
    detail::classify(x, y, w, s_hat, out.per_sample, out.grad_x, gw, out.value);
    detail::classify(v, y, w, s_hat, out.per_sample, out.grad_v, gw, out.value);
    out.grad_w = std::move(gw);
    return out;
}

/// Margin N-pair loss in both directions, anchors raw and gallery normalized:
///   sum_i s_i * [ log(m + sum_{y_j != y_i} exp(v_i.xh_j) / exp(v_i.xh_i))
///               + log(m + sum_{y_j != y_i} exp(x_i.vh_j) / exp(x_i.vh_i)) ]
/// normalize_anchor switches to unit-norm anchors as well.
inline LossOutput explicit_loss(const Matrix& x, const Matrix& v, const Labels& y, double margin,
                                std::span<const double> s_hat, bool normalize_anchor = false) {
    detail::check_batch(x, v, y, s_hat, "explicit_loss");
    if (!(margin > 0.0)) throw std::invalid_argument("explicit_loss: margin must be > 0");
    LossOutput out;
    out.per_sample.assign(y.size(), 0.0);
    out.grad_x = Matrix::Zero(x.rows(), x.cols());
    out.grad_v = Matrix::Zero(v.rows(), v.cols());
    detail::npair_direction(v, x, y, margin, s_hat, normalize_anchor, out.per_sample, out.grad_v, out.grad_x,
                            out.value);
    detail::npair_direction(x, v, y, margin, s_hat, normalize_anchor, out.per_sample, out.grad_x, out.grad_v,
                            out.value);
    return out;
}

inline LossOutput combine(const LossOutput& a, const LossOutput& b) {
    LossOutput out;
    out.value = a.value + b.value;
    out.grad_x = a.grad_x + b.grad_x;
    out.grad_v = a.grad_v + b.grad_v;
    if (a.grad_w && b.grad_w) {
        out.grad_w = *a.grad_w + *b.grad_w;
    } else if (a.grad_w) {
        out.grad_w = a.grad_w;
    } else {
        out.grad_w = b.grad_w;
    }
    out.per_sample.resize(a.per_sample.size());
    for (std::size_t i = 0; i < out.per_sample.size(); ++i) out.per_sample[i] = a.per_sample[i] + b.per_sample[i];
    return out;
}

/// implicit + explicit, honoring the ablation switches.
inline LossOutput total_loss(const Matrix& x, const Matrix& v, const Labels& y, const Matrix& w, double margin,
                             std::span<const double> s_hat, const LossTerms& terms = {}) {
    if (!terms.implicit && !terms.explicit_)
        throw std::invalid_argument("total_loss: both implicit and explicit terms disabled");
    if (!terms.explicit_) return implicit_loss(x, v, y, w, s_hat);
    if (!terms.implicit) return explicit_loss(x, v, y, margin, s_hat, terms.normalize_anchor);
    return combine(implicit_loss(x, v, y, w, s_hat), explicit_loss(x, v, y, margin, s_hat, terms.normalize_anchor));
}

struct BoundReport {
    double lhs = 0.0;  // unweighted implicit loss
    double C = 0.0;    // max_k ||omega_k||
    std::vector<double> D;
    double rhs = 0.0;  // 2 log M - C/(M N) * sum_j D_j
    bool holds = false;

    double slack() const { return lhs - rhs; }
};

/// Lower bound on the implicit loss from a norm cap on the classifier columns:
///   L >= 2 log M - C/(M N) sum_j || (M-1) sum_{y_i=j}(x_i+v_i) - sum_{y_i!=j}(x_i+v_i) ||.
/// Classes absent from the batch contribute an empty (zero) in-class sum.
inline BoundReport implicit_lower_bound(const Matrix& x, const Matrix& v, const Labels& y, const Matrix& w) {
    const auto n = static_cast<std::size_t>(x.rows());
    const auto classes = static_cast<std::size_t>(w.cols());
    BoundReport r;
    r.lhs = implicit_loss(x, v, y, w, uniform_weights(n)).value;
    r.C = classes == 0 ? 0.0 : w.colwise().norm().maxCoeff();

    const Matrix pair_sum = x + v;
    const Vector all = pair_sum.colwise().sum().transpose();
    Matrix in_class = Matrix::Zero(static_cast<Eigen::Index>(classes), x.cols());
    for (std::size_t i = 0; i < n; ++i) in_class.row(static_cast<Eigen::Index>(y[i])) += pair_sum.row(static_cast<Eigen::Index>(i));
    const double mm = static_cast<double>(classes);
    double total = 0.0;
    r.D.resize(classes);
    for (std::size_t j = 0; j < classes; ++j) {
        const Vector own = in_class.row(static_cast<Eigen::Index>(j)).transpose();
        r.D[j] = ((mm - 1.0) * own - (all - own)).norm();
        total += r.D[j];
    }
    r.rhs = 2.0 * std::log(mm) - r.C / (mm * static_cast<double>(n)) * total;
    r.holds = r.lhs >= r.rhs - 1e-9;
    return r;
}

struct HingeTerm {
    double delta = 0.0;  // max negative similarity minus positive similarity
    double lower = 0.0;  // log(m + exp(delta))
    double upper = 0.0;  // log(m + n_neg * exp(delta))
    double exact = 0.0;  // the N-pair term
    double hinge = 0.0;  // [delta + m - 1]_+
    bool inside = true;
};

struct HingeReport {
    std::vector<HingeTerm> voice_to_face;  // anchor v_i, gallery normalized x
    std::vector<HingeTerm> face_to_voice;  // anchor x_i, gallery normalized v
    std::size_t violations = 0;
};

/// Brackets each N-pair term between its single-negative and all-negatives-tied
/// values; the term tracks a hinge on the hardest negative.
inline HingeReport hinge_diagnostic(const Matrix& x, const Matrix& v, const Labels& y, double margin,
                                    bool normalize_anchor = false) {
    detail::check_batch(x, v, y, uniform_weights(y.size()), "hinge_diagnostic");
    if (!(margin > 0.0)) throw std::invalid_argument("hinge_diagnostic: margin must be > 0");
    HingeReport report;
    const double log_m = std::log(margin);
    auto run = [&](const Matrix& anchor, const Matrix& gallery, std::vector<HingeTerm>& out) {
        const auto d = detail::make_direction(anchor, gallery, normalize_anchor, "hinge_diagnostic");
        const Eigen::Index n = d.sim.rows();
        out.resize(static_cast<std::size_t>(n));
        for (Eigen::Index i = 0; i < n; ++i) {
            auto& t = out[static_cast<std::size_t>(i)];
            double best = -std::numeric_limits<double>::infinity();
            std::size_t negatives = 0;
            for (Eigen::Index j = 0; j < n; ++j) {
                if (y[static_cast<std::size_t>(j)] == y[static_cast<std::size_t>(i)]) continue;
                best = std::max(best, d.sim(i, j));
                ++negatives;
            }
            t.delta = best - d.sim(i, i);
            t.exact = log_add_exp(log_m, detail::negative_log_ratio(d, y, i));
            if (negatives == 0) {
                t.lower = t.upper = log_m;
                t.hinge = std::max(margin - 1.0, 0.0);
            } else {
                t.lower = log_add_exp(log_m, t.delta);
                t.upper = log_add_exp(log_m, std::log(static_cast<double>(negatives)) + t.delta);
                t.hinge = std::max(t.delta + margin - 1.0, 0.0);
            }
            const double tol = 1e-12 * std::max(1.0, std::abs(t.exact));
            t.inside = t.exact >= t.lower - tol && t.exact <= t.upper + tol;
            if (!t.inside) ++report.violations;
        }
    };
    run(v, x, report.voice_to_face);
    run(x, v, report.face_to_voice);
    return report;
}

}  // namespace vfa
