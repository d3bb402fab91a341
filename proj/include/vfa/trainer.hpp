#pragma once

// Three-stage training with identity weights:
//   1. warm-up for T_warm iterations with uniform weights
//   2. hardness tracking and weight learning until R_keep * M identities hold
//      a nonzero weight
//   3. re-initialization and T_max iterations with the frozen weights,
//      keeping the best model on the validation split

#include "vfa/encoders.hpp"
#include "vfa/errors.hpp"
#include "vfa/eval.hpp"
#include "vfa/losses.hpp"
#include "vfa/reweighting.hpp"
#include "vfa/rng.hpp"
#include "vfa/types.hpp"

#include <cmath>
#include <functional>
#include <tuple>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

namespace vfa {

struct TrainConfig {
    std::size_t N = 64;
    double m = 3.4;
    double beta = 0.9;
    double alpha = 0.99;
    std::size_t k = 22;
    std::size_t T_warm = 500;
    std::size_t T_update = 100;
    std::size_t T_max = 10000;
    double R_keep = 0.9;
    double lr = 1e-2;
    std::vector<std::size_t> lr_decay_iters{2000, 3000};
    double momentum = 0.9;
    double weight_decay = 5e-4;
    double init_fraction = 0.3;
    bool disable_explicit = false;
    bool disable_implicit = false;
    bool disable_reweighting = false;
    bool normalize_anchor = false;
    WeightNormalization weight_normalization = WeightNormalization::Batch;
    std::size_t hidden = 256;
    std::size_t embed = 128;
    std::size_t val_every = 500;
    std::size_t stage2_cap_updates = 50;  // stage 2 aborts after this many T_update periods
    QueryBudget val_budget{};
    std::uint64_t seed = 1;

    LossTerms terms() const { return {!disable_implicit, !disable_explicit, normalize_anchor}; }
};

inline void validate(const TrainConfig& c) {
    auto fail = [](const std::string& field, const std::string& why) {
        throw ConfigError("train." + field + ": " + why);
    };
    if (c.N < 1) fail("N", "must be >= 1");
    if (!(c.m > 0.0)) fail("m", "must be > 0");
    if (!(c.beta > 0.0 && c.beta < 1.0)) fail("beta", "must lie in (0, 1)");
    if (!(c.alpha > 0.0 && c.alpha < 1.0)) fail("alpha", "must lie in (0, 1)");
    if (c.k < 1) fail("k", "must be >= 1");
    if (c.T_update < 1) fail("T_update", "must be >= 1");
    if (!(c.T_warm < c.T_max)) fail("T_warm", "must be < T_max");
    if (!(c.R_keep > 0.0 && c.R_keep <= 1.0)) fail("R_keep", "must lie in (0, 1]");
    if (!(c.lr > 0.0)) fail("lr", "must be > 0");
    if (!(c.momentum >= 0.0 && c.momentum < 1.0)) fail("momentum", "must lie in [0, 1)");
    if (!(c.weight_decay >= 0.0)) fail("weight_decay", "must be >= 0");
    if (!(c.init_fraction > 0.0 && c.init_fraction <= 1.0)) fail("init_fraction", "must lie in (0, 1]");
    if (c.disable_explicit && c.disable_implicit)
        fail("disable_implicit", "disabling both implicit and explicit terms leaves an empty objective");
    if (c.hidden < 1) fail("hidden", "must be >= 1");
    if (c.embed < 1) fail("embed", "must be >= 1");
    if (c.val_every < 1) fail("val_every", "must be >= 1");
    if (c.stage2_cap_updates < 1) fail("stage2_cap_updates", "must be >= 1");
}

/// The train split with dense labels: label l is identity label_to_id[l].
struct TrainingSet {
    const SyntheticDataset* dataset;
    SampleIndex index;
    std::vector<std::size_t> label_to_id;

    explicit TrainingSet(const SyntheticDataset& ds)
        : dataset(&ds), index(ds), label_to_id(ds.train_ids) {
        for (auto id : label_to_id)
            if (index.face.at(id).empty() || index.voice.at(id).empty())
                throw std::invalid_argument("training identity " + std::to_string(id) + " lacks samples");
    }

    std::size_t size() const { return label_to_id.size(); }

    std::vector<std::size_t> all_labels() const {
        std::vector<std::size_t> out(size());
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = i;
        return out;
    }
};

struct Batch {
    Labels labels;                       // training labels
    std::vector<std::size_t> face_pos;   // into dataset face_samples
    std::vector<std::size_t> voice_pos;  // into dataset voice_samples
};

/// N distinct eligible identities uniformly without replacement, then one
/// face and one voice sample per identity uniformly from its pools.
inline Batch sample_batch(const TrainingSet& set, std::size_t n, std::span<const std::size_t> eligible, Rng& rng) {
    if (n > eligible.size())
        throw std::invalid_argument("sample_batch: batch size " + std::to_string(n) + " exceeds " +
                                    std::to_string(eligible.size()) + " eligible identities");
    Batch b;
    for (auto slot : rng.choose(eligible.size(), n)) b.labels.push_back(eligible[slot]);
    for (auto label : b.labels) {
        const auto id = set.label_to_id.at(label);
        const auto& faces = set.index.face[id];
        const auto& voices = set.index.voice[id];
        b.face_pos.push_back(faces[static_cast<std::size_t>(rng.below(faces.size()))]);
        b.voice_pos.push_back(voices[static_cast<std::size_t>(rng.below(voices.size()))]);
    }
    return b;
}

struct TraceRecord {
    int stage = 0;
    std::size_t t = 0;  // iteration within the stage, 1-based
    double loss_total = 0.0;
    double loss_implicit = 0.0;
    double loss_explicit = 0.0;
    double lr = 0.0;
    std::size_t nonzero_weight_count = 0;
};

struct WeightUpdateRecord {
    std::size_t iteration = 0;  // stage-2 iteration; 0 for the initial assignment
    std::string event;          // "init" or "update"
    std::vector<std::size_t> promoted;  // dataset identity ids
    std::uint64_t checksum = 0;
    std::size_t nonzero = 0;
};

struct ValidationRecord {
    std::size_t t = 0;
    double accuracy = 0.0;
};

struct TrainedModel {
    EncoderParams params;       // best on validation
    EncoderParams last_params;  // after the final stage-3 iteration
    IdentityWeightState weights;
    std::vector<std::size_t> label_to_id;
    std::vector<TraceRecord> trace;
    std::vector<WeightUpdateRecord> weight_history;
    std::vector<ValidationRecord> validation;
    std::size_t stage1_iterations = 0;
    std::size_t stage2_iterations = 0;
    std::size_t stage3_iterations = 0;
    bool stage2_skipped = false;
    std::size_t best_iteration = 0;
    double best_validation = -1.0;

    std::vector<std::size_t> excluded_identity_ids() const {
        std::vector<std::size_t> out;
        for (auto label : weights.excluded()) out.push_back(label_to_id.at(label));
        return out;
    }
};

/// Optional observer, called after every training iteration.
using IterationHook = std::function<void(const TraceRecord&)>;

namespace detail {

struct StepLosses {
    double total = 0.0;
    double implicit = 0.0;
    double explicit_ = 0.0;
};

struct Embedded {
    Matrix x, v;
    ForwardCache face_cache, voice_cache;
};

inline Embedded embed_batch(const EncoderParams& params, const SyntheticDataset& ds, const Batch& b) {
    Embedded e;
    std::tie(e.x, e.face_cache) = forward(params, gather_features(ds.face_samples, b.face_pos, ds.input_dim), Modality::Face);
    std::tie(e.v, e.voice_cache) =
        forward(params, gather_features(ds.voice_samples, b.voice_pos, ds.input_dim), Modality::Voice);
    return e;
}

/// One weighted SGD step on an embedded batch.
inline StepLosses sgd_iteration(EncoderParams& params, OptimizerState& opt, const Embedded& e, const Labels& labels,
                                std::span<const double> s_hat, const TrainConfig& cfg, int stage, std::size_t t) {
    const auto terms = cfg.terms();
    StepLosses out;
    std::optional<LossOutput> imp, exp;
    try {
        if (terms.implicit) {
            imp = implicit_loss(e.x, e.v, labels, params.classifier, s_hat);
            out.implicit = imp->value;
        }
        if (terms.explicit_) {
            exp = explicit_loss(e.x, e.v, labels, cfg.m, s_hat, terms.normalize_anchor);
            out.explicit_ = exp->value;
        }
    } catch (const std::invalid_argument& err) {
        // Degenerate embeddings (zero rows, non-finite entries) mean the run has diverged.
        throw TrainingAbort("stage " + std::to_string(stage) + " iteration " + std::to_string(t) + ": " + err.what());
    }
    out.total = out.implicit + out.explicit_;
    if (!std::isfinite(out.total)) {
        std::ostringstream msg;
        msg << "non-finite loss at stage " << stage << " iteration " << t << " (implicit " << out.implicit
            << ", explicit " << out.explicit_ << ")";
        throw TrainingAbort(msg.str());
    }
    const LossOutput grads = imp && exp ? combine(*imp, *exp) : (imp ? std::move(*imp) : std::move(*exp));
    ParamGrads g;
    g.face = backward(params, Modality::Face, e.face_cache, grads.grad_x);
    g.voice = backward(params, Modality::Voice, e.voice_cache, grads.grad_v);
    g.classifier = grads.grad_w ? *grads.grad_w : Matrix::Zero(params.classifier.rows(), params.classifier.cols());
    sgd_step(params, g, opt);
    return out;
}

inline EncoderDims dims_for(const TrainConfig& cfg, const SyntheticDataset& ds, std::size_t classes) {
    return {ds.input_dim, cfg.hidden, cfg.embed, classes};
}

}  // namespace detail

/// Random-number streams, all derived from TrainConfig::seed.
struct TrainStreams {
    Rng stage1_init;
    Rng batches;  // shared by stages 1 and 2
    Rng survey;   // hardness survey before the first weight assignment
    Rng stage3_init;
    Rng stage3_batches;

    explicit TrainStreams(std::uint64_t seed)
        : stage1_init(Rng::named(seed, "train/stage1/init")),
          batches(Rng::named(seed, "train/stage12/batch")),
          survey(Rng::named(seed, "train/stage2/survey")),
          stage3_init(Rng::named(seed, "train/stage3/init")),
          stage3_batches(Rng::named(seed, "train/stage3/batch")) {}
};

struct Stage1Result {
    EncoderParams params;
    OptimizerState optimizer;
};

/// Warm-up: T_warm unweighted iterations (s_hat = 1/N).
inline Stage1Result run_stage1(const TrainConfig& cfg, const TrainingSet& set, TrainStreams& rng,
                               std::vector<TraceRecord>& trace, const IterationHook& hook = {}) {
    Stage1Result r;
    r.params = init_params(detail::dims_for(cfg, *set.dataset, set.size()), rng.stage1_init);
    r.optimizer = OptimizerState::for_params(r.params, cfg.lr, cfg.momentum, cfg.weight_decay);
    const auto eligible = set.all_labels();
    const auto s_hat = uniform_weights(cfg.N);
    for (std::size_t t = 1; t <= cfg.T_warm; ++t) {
        r.optimizer.lr = scheduled_lr(cfg.lr, cfg.lr_decay_iters, t);
        const auto batch = sample_batch(set, cfg.N, eligible, rng.batches);
        const auto e = detail::embed_batch(r.params, *set.dataset, batch);
        const auto loss = detail::sgd_iteration(r.params, r.optimizer, e, batch.labels, s_hat, cfg, 1, t);
        trace.push_back({1, t, loss.total, loss.implicit, loss.explicit_, r.optimizer.lr, set.size()});
        if (hook) hook(trace.back());
    }
    return r;
}

/// Unweighted per-identity implicit loss for every training identity (one
/// random face/voice pair each), used to seed the hardness before the first
/// weight assignment.
inline void survey_hardness(const EncoderParams& params, const TrainingSet& set, const TrainConfig& cfg,
                            IdentityWeightState& state, Rng& rng) {
    const auto labels = set.all_labels();
    for (std::size_t start = 0; start < labels.size(); start += cfg.N) {
        const std::size_t end = std::min(labels.size(), start + cfg.N);
        Batch b;
        for (std::size_t i = start; i < end; ++i) {
            const auto id = set.label_to_id[labels[i]];
            b.labels.push_back(labels[i]);
            b.face_pos.push_back(set.index.face[id][static_cast<std::size_t>(rng.below(set.index.face[id].size()))]);
            b.voice_pos.push_back(set.index.voice[id][static_cast<std::size_t>(rng.below(set.index.voice[id].size()))]);
        }
        const auto e = detail::embed_batch(params, *set.dataset, b);
        const auto imp = implicit_loss(e.x, e.v, b.labels, params.classifier, uniform_weights(b.labels.size()));
        update_hardness(state, b.labels, imp.per_sample, cfg.beta);
    }
}

struct Stage2Result {
    IdentityWeightState weights;
    std::vector<WeightUpdateRecord> history;
    std::size_t iterations = 0;
};

/// Weight learning; continues the stage-1 parameters, optimizer state and
/// batch stream. The learning-rate schedule continues from T_warm.
inline Stage2Result run_stage2(const TrainConfig& cfg, const TrainingSet& set, EncoderParams& params,
                               OptimizerState& opt, TrainStreams& rng, std::vector<TraceRecord>& trace,
                               const IterationHook& hook = {}) {
    Stage2Result r;
    const std::size_t m = set.size();
    r.weights = IdentityWeightState::fresh(m);
    auto& state = r.weights;
    auto record = [&](std::size_t t, const char* event, const std::vector<std::size_t>& promoted_labels) {
        WeightUpdateRecord w{t, event, {}, weights_checksum(state.s), state.nonzero_count()};
        for (auto l : promoted_labels) w.promoted.push_back(set.label_to_id[l]);
        r.history.push_back(std::move(w));
    };

    survey_hardness(params, set, cfg, state, rng.survey);
    init_weights(state, cfg.init_fraction);
    {
        std::vector<std::size_t> initial;
        for (std::size_t l = 0; l < m; ++l)
            if (state.s[l] > 0.0) initial.push_back(l);
        record(0, "init", initial);
    }

    const auto eligible = set.all_labels();
    const auto uniform = uniform_weights(cfg.N);
    const std::size_t cap = cfg.stage2_cap_updates * cfg.T_update;
    std::size_t t = 0;
    while (!stop_condition(state, cfg.R_keep, m)) {
        ++t;
        if (t > cap)
            throw TrainingAbort("stage 2 did not reach R_keep within " + std::to_string(cap) + " iterations (" +
                                std::to_string(state.nonzero_count()) + " of " + std::to_string(m) + " nonzero)");
        state.iteration = t;
        opt.lr = scheduled_lr(cfg.lr, cfg.lr_decay_iters, cfg.T_warm + t);
        auto batch = sample_batch(set, cfg.N, eligible, rng.batches);
        auto e = detail::embed_batch(params, *set.dataset, batch);
        const auto hard = implicit_loss(e.x, e.v, batch.labels, params.classifier, uniform);
        update_hardness(state, batch.labels, hard.per_sample, cfg.beta);
        if (t % cfg.T_update == 0) record(t, "update", update_weights(state, cfg.k, cfg.alpha));

        std::vector<double> s_hat;
        for (int attempt = 0;; ++attempt) {
            try {
                s_hat = batch_weights(state, batch.labels, cfg.weight_normalization);
                break;
            } catch (const DegenerateBatch&) {
                if (attempt >= 100)
                    throw TrainingAbort("stage 2 iteration " + std::to_string(t) +
                                        ": 100 consecutive all-zero-weight batches");
                batch = sample_batch(set, cfg.N, eligible, rng.batches);
                e = detail::embed_batch(params, *set.dataset, batch);
            }
        }
        const auto loss = detail::sgd_iteration(params, opt, e, batch.labels, s_hat, cfg, 2, t);
        trace.push_back({2, t, loss.total, loss.implicit, loss.explicit_, opt.lr, state.nonzero_count()});
        if (hook) hook(trace.back());
    }
    r.iterations = t;
    return r;
}

struct Stage3Result {
    EncoderParams best;
    EncoderParams last;
    std::vector<ValidationRecord> validation;
    std::size_t best_iteration = 0;
    double best_accuracy = -1.0;
};

/// Labels eligible for stage-3 sampling: every identity with nonzero weight.
inline std::vector<std::size_t> eligible_labels(const IdentityWeightState& w) {
    std::vector<std::size_t> out;
    for (std::size_t l = 0; l < w.size(); ++l)
        if (w.s[l] > 0.0) out.push_back(l);
    return out;
}

/// Retrain from a fresh initialization with frozen weights. The model with the
/// highest unrestricted 1:2 V-F validation accuracy (checked every val_every
/// iterations and at the end) is retained.
inline Stage3Result run_stage3(const TrainConfig& cfg, const TrainingSet& set, const IdentityWeightState& weights,
                               TrainStreams& rng, std::vector<TraceRecord>& trace, const IterationHook& hook = {}) {
    const auto& ds = *set.dataset;
    Stage3Result r;
    EncoderParams params = init_params(detail::dims_for(cfg, ds, set.size()), rng.stage3_init);
    auto opt = OptimizerState::for_params(params, cfg.lr, cfg.momentum, cfg.weight_decay);
    const auto eligible = eligible_labels(weights);
    if (eligible.size() < cfg.N)
        throw ConfigError("train.N: " + std::to_string(cfg.N) + " exceeds the " + std::to_string(eligible.size()) +
                          " identities kept for retraining");

    std::optional<std::vector<Query>> val_queries;
    {
        Rng qrng = Rng::named(cfg.seed, "train/validation/queries");
        try {
            val_queries = generate_queries(ds, Split::Validation, {Task::Matching, Direction::VoiceToFace, 2},
                                           Restriction::Unrestricted, qrng, cfg.val_budget);
        } catch (const InsufficientIdentities&) {
            val_queries.reset();
        }
    }
    auto validate_now = [&](std::size_t t) {
        if (!val_queries || val_queries->empty()) {
            if (r.best_accuracy < 0.0) {
                r.best = params;
                r.best_iteration = t;
                r.best_accuracy = 0.0;
            }
            return;
        }
        const double acc = selection_accuracy(params, ds, Split::Validation, *val_queries);
        r.validation.push_back({t, acc});
        if (acc > r.best_accuracy) {
            r.best_accuracy = acc;
            r.best = params;
            r.best_iteration = t;
        }
    };

    const bool uniform = cfg.disable_reweighting;
    for (std::size_t t = 1; t <= cfg.T_max; ++t) {
        opt.lr = scheduled_lr(cfg.lr, cfg.lr_decay_iters, t);
        const auto batch = sample_batch(set, cfg.N, eligible, rng.stage3_batches);
        const auto s_hat = uniform ? uniform_weights(cfg.N) : batch_weights(weights, batch.labels, cfg.weight_normalization);
        const auto e = detail::embed_batch(params, ds, batch);
        const auto loss = detail::sgd_iteration(params, opt, e, batch.labels, s_hat, cfg, 3, t);
        trace.push_back({3, t, loss.total, loss.implicit, loss.explicit_, opt.lr, weights.nonzero_count()});
        if (hook) hook(trace.back());
        if (t % cfg.val_every == 0 || t == cfg.T_max) validate_now(t);
    }
    r.last = std::move(params);
    return r;
}

/// Full three-stage pipeline. With disable_reweighting, stage 2 is skipped and
/// every identity keeps weight 1.
inline TrainedModel train(const TrainConfig& cfg, const SyntheticDataset& ds, const IterationHook& hook = {}) {
    validate(cfg);
    const TrainingSet set(ds);
    if (cfg.N > set.size())
        throw ConfigError("train.N: " + std::to_string(cfg.N) + " exceeds the " + std::to_string(set.size()) +
                          " training identities");
    TrainStreams rng(cfg.seed);
    TrainedModel model;
    model.label_to_id = set.label_to_id;

    auto s1 = run_stage1(cfg, set, rng, model.trace, hook);
    model.stage1_iterations = cfg.T_warm;

    if (cfg.disable_reweighting) {
        model.stage2_skipped = true;
        model.weights = IdentityWeightState::all_ones(set.size());
    } else {
        auto s2 = run_stage2(cfg, set, s1.params, s1.optimizer, rng, model.trace, hook);
        model.weights = std::move(s2.weights);
        model.weight_history = std::move(s2.history);
        model.stage2_iterations = s2.iterations;
    }

    auto s3 = run_stage3(cfg, set, model.weights, rng, model.trace, hook);
    model.stage3_iterations = cfg.T_max;
    model.params = std::move(s3.best);
    model.last_params = std::move(s3.last);
    model.validation = std::move(s3.validation);
    model.best_iteration = s3.best_iteration;
    model.best_validation = s3.best_accuracy;
    return model;
}

}  // namespace vfa
