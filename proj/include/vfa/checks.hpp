#pragma once

// Self-checks exposed through `vfa check`: finite-difference gradient suites,
// the implicit-loss lower bound and the N-pair hinge bracketing.

#include "vfa/encoders.hpp"
#include "vfa/losses.hpp"
#include "vfa/rng.hpp"

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

namespace vfa {

struct CheckReport {
    std::string name;
    std::size_t instances = 0;
    std::size_t evaluations = 0;  // coordinates, instances or terms checked
    std::size_t failures = 0;
    double worst = 0.0;           // max relative error / most negative slack / max violation
    std::optional<std::uint64_t> failing_seed;

    bool passed() const { return failures == 0 && instances > 0; }
};

/// Seed of the i-th instance of a check run.
inline std::uint64_t instance_seed(std::uint64_t root, std::size_t i) { return mix64(root ^ mix64(i + 1)); }

/// Which objective the end-to-end gradient check differentiates.
enum class GradTarget { Implicit, Explicit, Total };

inline const char* to_string(GradTarget t) {
    switch (t) {
        case GradTarget::Implicit: return "implicit";
        case GradTarget::Explicit: return "explicit";
        case GradTarget::Total: return "total";
    }
    return "?";
}

/// A small random problem: two encoders, a classifier and one batch with
/// distinct labels.
struct GradProblem {
    EncoderParams params;
    Matrix faces, voices;
    Labels labels;
    std::vector<double> weights;
    double margin = 3.4;

    static GradProblem random(std::uint64_t seed) {
        Rng rng(seed);
        GradProblem p;
        const std::size_t n = 3 + rng.below(4);
        const EncoderDims d{4 + rng.below(3), 5 + rng.below(4), 3 + rng.below(3), n + rng.below(3)};
        p.params = init_params(d, rng);
        for (auto* b : {&p.params.face.b1, &p.params.face.b2, &p.params.voice.b1, &p.params.voice.b2})
            for (Eigen::Index i = 0; i < b->size(); ++i) (*b)(i) = rng.uniform(-0.3, 0.3);
        p.faces.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d.input));
        p.voices.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d.input));
        for (Eigen::Index i = 0; i < p.faces.size(); ++i) p.faces.data()[i] = rng.normal();
        for (Eigen::Index i = 0; i < p.voices.size(); ++i) p.voices.data()[i] = rng.normal();
        for (auto id : rng.choose(d.classes, n)) p.labels.push_back(id);
        for (std::size_t i = 0; i < n; ++i) p.weights.push_back(rng.uniform(0.1, 1.0));
        return p;
    }

    LossOutput loss(const EncoderParams& at, GradTarget target, ForwardCache* face_cache = nullptr,
                    ForwardCache* voice_cache = nullptr) const {
        auto [x, fc] = forward(at, faces, Modality::Face);
        auto [v, vc] = forward(at, voices, Modality::Voice);
        if (face_cache) *face_cache = std::move(fc);
        if (voice_cache) *voice_cache = std::move(vc);
        const LossTerms terms{target != GradTarget::Explicit, target != GradTarget::Implicit, false};
        return total_loss(x, v, labels, at.classifier, margin, weights, terms);
    }

    /// Smallest |pre-activation| over both encoders and the whole batch.
    double kink_distance(const EncoderParams& at) const {
        auto [x, fc] = forward(at, faces, Modality::Face);
        auto [v, vc] = forward(at, voices, Modality::Voice);
        return std::min(fc.hidden_pre.cwiseAbs().minCoeff(), vc.hidden_pre.cwiseAbs().minCoeff());
    }
};

inline ParamGrads analytic_grads(const GradProblem& p, GradTarget target) {
    ForwardCache fc, vc;
    const auto out = p.loss(p.params, target, &fc, &vc);
    ParamGrads g;
    g.face = backward(p.params, Modality::Face, fc, out.grad_x);
    g.voice = backward(p.params, Modality::Voice, vc, out.grad_v);
    g.classifier = out.grad_w ? *out.grad_w : Matrix::Zero(p.params.classifier.rows(), p.params.classifier.cols());
    return g;
}

/// |a - n| / max(|a|, |n|, floor)
inline double relative_error(double analytic, double numeric, double floor = 1e-3) {
    return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// Central differences with step h on `coords` random coordinates spread over
/// every parameter block of the instance drawn from `iseed`. Coordinates whose
/// perturbation comes within 5e-5 of a ReLU kink are redrawn; instances that
/// start within 1e-4 of a kink are skipped (instances stays 0).
inline CheckReport gradient_instance(std::uint64_t iseed, std::size_t coords, GradTarget target, double h = 1e-6,
                                     double tolerance = 1e-5) {
    CheckReport r;
    r.name = std::string("grad/") + to_string(target);
    GradProblem p = GradProblem::random(iseed);
    if (p.kink_distance(p.params) < 1e-4) return r;
    r.instances = 1;
    auto grads = analytic_grads(p, target);
    auto gblocks = blocks_of(grads);
    auto pblocks = blocks_of(p.params);
    Rng pick(iseed ^ 0xC0FFEEULL);
    std::size_t attempts = 0;
    while (r.evaluations < coords && attempts < coords * 20) {
        ++attempts;
        const auto b = static_cast<std::size_t>(pick.below(pblocks.size()));
        const auto i = static_cast<std::size_t>(pick.below(pblocks[b].size));
        double& slot = pblocks[b].data[i];
        const double saved = slot;
        slot = saved + h;
        const bool plus_ok = p.kink_distance(p.params) > 5e-5;
        const double fp = p.loss(p.params, target).value;
        slot = saved - h;
        const bool minus_ok = p.kink_distance(p.params) > 5e-5;
        const double fm = p.loss(p.params, target).value;
        slot = saved;
        if (!plus_ok || !minus_ok) continue;
        const double err = relative_error(gblocks[b].data[i], (fp - fm) / (2.0 * h));
        r.worst = std::max(r.worst, err);
        ++r.evaluations;
        if (!(err < tolerance)) ++r.failures;
    }
    if (r.failures > 0) r.failing_seed = iseed;
    return r;
}

inline void merge(CheckReport& into, const CheckReport& part) {
    if (part.instances > 0) {
        if (into.instances == 0) {
            into.worst = part.worst;
        } else if (into.name == "bound") {
            into.worst = std::min(into.worst, part.worst);
        } else {
            into.worst = std::max(into.worst, part.worst);
        }
    }
    into.instances += part.instances;
    into.evaluations += part.evaluations;
    into.failures += part.failures;
    if (!into.failing_seed) into.failing_seed = part.failing_seed;
}

/// Runs instances until `instances` non-degenerate ones have been checked.
inline CheckReport gradient_check(std::uint64_t seed, std::size_t instances, std::size_t coords, GradTarget target,
                                  double h = 1e-6, double tolerance = 1e-5) {
    CheckReport r;
    r.name = std::string("grad/") + to_string(target);
    for (std::size_t i = 0; r.instances < instances && i < instances * 10; ++i)
        merge(r, gradient_instance(instance_seed(seed, i), coords, target, h, tolerance));
    return r;
}

/// Random bound instance: N <= 16, 2 <= M <= 8, D <= 8, classifier columns with
/// norm <= 2.
struct BoundProblem {
    Matrix x, v, w;
    Labels labels;

    static BoundProblem random(std::uint64_t seed) {
        Rng rng(seed);
        BoundProblem p;
        const auto n = static_cast<Eigen::Index>(1 + rng.below(16));
        const auto m = static_cast<Eigen::Index>(2 + rng.below(7));
        const auto d = static_cast<Eigen::Index>(1 + rng.below(8));
        const double scale = std::exp(rng.uniform(-2.0, 2.0));
        p.x.resize(n, d);
        p.v.resize(n, d);
        for (Eigen::Index i = 0; i < p.x.size(); ++i) p.x.data()[i] = scale * rng.normal();
        for (Eigen::Index i = 0; i < p.v.size(); ++i) p.v.data()[i] = scale * rng.normal();
        p.w.resize(d, m);
        for (Eigen::Index k = 0; k < m; ++k) {
            for (Eigen::Index r = 0; r < d; ++r) p.w(r, k) = rng.normal();
            const double norm = p.w.col(k).norm();
            const double target = rng.uniform(0.0, 2.0);
            if (norm > 0.0) p.w.col(k) *= target / norm;
        }
        for (Eigen::Index i = 0; i < n; ++i) p.labels.push_back(static_cast<std::size_t>(rng.below(static_cast<std::uint64_t>(m))));
        return p;
    }
};

inline CheckReport bound_instance(std::uint64_t iseed) {
    CheckReport r;
    r.name = "bound";
    const auto p = BoundProblem::random(iseed);
    const auto rep = implicit_lower_bound(p.x, p.v, p.labels, p.w);
    r.instances = 1;
    r.evaluations = 1;
    r.worst = rep.slack();
    if (!rep.holds) {
        r.failures = 1;
        r.failing_seed = iseed;
    }
    return r;
}

inline CheckReport bound_check(std::uint64_t seed, std::size_t trials) {
    CheckReport r;
    r.name = "bound";
    for (std::size_t t = 0; t < trials; ++t) merge(r, bound_instance(instance_seed(seed, t)));
    return r;
}

/// Random N-pair batch with distinct labels; every term must lie inside its
/// bracketing interval.
inline CheckReport hinge_instance(std::uint64_t iseed, double margin = 3.4) {
    CheckReport r;
    r.name = "hinge";
    Rng rng(iseed);
    const auto n = static_cast<Eigen::Index>(2 + rng.below(15));
    const auto d = static_cast<Eigen::Index>(2 + rng.below(15));
    const double scale = std::exp(rng.uniform(-1.0, 2.0));
    Matrix x(n, d), v(n, d);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = scale * rng.normal();
    for (Eigen::Index i = 0; i < v.size(); ++i) v.data()[i] = scale * rng.normal();
    Labels y;
    for (Eigen::Index i = 0; i < n; ++i) y.push_back(static_cast<std::size_t>(i));
    const auto rep = hinge_diagnostic(x, v, y, margin);
    r.instances = 1;
    r.evaluations = rep.voice_to_face.size() + rep.face_to_voice.size();
    for (const auto* terms : {&rep.voice_to_face, &rep.face_to_voice})
        for (const auto& term : *terms)
            r.worst = std::max(r.worst, std::max(term.lower - term.exact, term.exact - term.upper));
    r.failures = rep.violations;
    if (r.failures > 0) r.failing_seed = iseed;
    return r;
}

inline CheckReport hinge_check(std::uint64_t seed, std::size_t batches, double margin = 3.4) {
    CheckReport r;
    r.name = "hinge";
    for (std::size_t t = 0; t < batches; ++t) merge(r, hinge_instance(instance_seed(seed, t), margin));
    return r;
}

}  // namespace vfa
