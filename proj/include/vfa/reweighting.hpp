#pragma once

#include "vfa/types.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace vfa {

/// Per-identity hardness and weight, indexed by training label.
struct IdentityWeightState {
    std::vector<double> H;       // smoothed implicit loss
    std::vector<double> s;       // weight in [0, 1]; 0 until promoted
    std::vector<bool> H_seen;
    std::size_t iteration = 0;
    std::size_t updates_applied = 0;

    static IdentityWeightState fresh(std::size_t identities) {
        return {std::vector<double>(identities, 0.0), std::vector<double>(identities, 0.0),
                std::vector<bool>(identities, false), 0, 0};
    }

    /// Weight state for runs without re-weighting: every identity at 1.
    static IdentityWeightState all_ones(std::size_t identities) {
        auto st = fresh(identities);
        std::fill(st.s.begin(), st.s.end(), 1.0);
        return st;
    }

    std::size_t size() const { return s.size(); }

    std::size_t nonzero_count() const {
        return static_cast<std::size_t>(std::count_if(s.begin(), s.end(), [](double w) { return w > 0.0; }));
    }

    bool all_seen() const { return std::all_of(H_seen.begin(), H_seen.end(), [](bool b) { return b; }); }

    std::vector<std::size_t> excluded() const {
        std::vector<std::size_t> out;
        for (std::size_t i = 0; i < s.size(); ++i)
            if (!(s[i] > 0.0)) out.push_back(i);
        return out;
    }
};

/// Exponential moving average of each batch identity's implicit loss. The
/// first observation of an identity initializes its hardness directly.
inline void update_hardness(IdentityWeightState& state, const Labels& batch_labels,
                            const std::vector<double>& per_identity_loss, double beta) {
    if (!(beta > 0.0 && beta < 1.0)) throw std::invalid_argument("update_hardness: beta must lie in (0, 1)");
    if (batch_labels.size() != per_identity_loss.size())
        throw std::invalid_argument("update_hardness: label/loss count mismatch");
    for (std::size_t b = 0; b < batch_labels.size(); ++b) {
        const auto id = batch_labels[b];
        if (id >= state.size()) throw std::invalid_argument("update_hardness: unknown identity " + std::to_string(id));
        if (state.H_seen[id]) {
            state.H[id] = beta * state.H[id] + (1.0 - beta) * per_identity_loss[b];
        } else {
            state.H[id] = per_identity_loss[b];
            state.H_seen[id] = true;
        }
    }
}

namespace detail {
/// Candidates ordered by (H ascending, id ascending).
inline void order_by_hardness(std::vector<std::size_t>& ids, const std::vector<double>& h) {
    std::sort(ids.begin(), ids.end(), [&](std::size_t a, std::size_t b) {
        if (h[a] != h[b]) return h[a] < h[b];
        return a < b;
    });
}
}  // namespace detail

/// s_i = 1 for the floor(fraction * M) easiest identities, 0 elsewhere.
inline std::vector<double> init_weights(const std::vector<double>& h0, double init_fraction = 0.3) {
    const std::size_t m = h0.size();
    std::vector<std::size_t> ids(m);
    std::iota(ids.begin(), ids.end(), std::size_t{0});
    detail::order_by_hardness(ids, h0);
    const auto keep = static_cast<std::size_t>(std::floor(init_fraction * static_cast<double>(m) + 1e-9));
    std::vector<double> s(m, 0.0);
    for (std::size_t r = 0; r < std::min(keep, m); ++r) s[ids[r]] = 1.0;
    return s;
}

inline void init_weights(IdentityWeightState& state, double init_fraction = 0.3) {
    if (!state.all_seen()) throw std::logic_error("init_weights: hardness not observed for every identity");
    state.s = init_weights(state.H, init_fraction);
}

/// Promotes the k easiest zero-weight identities to 1 and decays every other
/// weight by alpha. Returns the promoted ids in promotion order.
inline std::vector<std::size_t> update_weights(IdentityWeightState& state, std::size_t k, double alpha) {
    if (k < 1) throw std::invalid_argument("update_weights: k must be >= 1");
    if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("update_weights: alpha must lie in (0, 1)");
    std::vector<std::size_t> zero;
    for (std::size_t i = 0; i < state.size(); ++i)
        if (!(state.s[i] > 0.0)) zero.push_back(i);
    detail::order_by_hardness(zero, state.H);
    zero.resize(std::min(k, zero.size()));
    std::vector<bool> promoted(state.size(), false);
    for (auto id : zero) promoted[id] = true;
    for (std::size_t i = 0; i < state.size(); ++i) state.s[i] = promoted[i] ? 1.0 : alpha * state.s[i];
    ++state.updates_applied;
    return zero;
}

/// True once at least R_keep * M identities carry a nonzero weight.
inline bool stop_condition(const IdentityWeightState& state, double r_keep, std::size_t m) {
    if (!(r_keep > 0.0 && r_keep <= 1.0)) throw std::invalid_argument("stop_condition: R_keep must lie in (0, 1]");
    return static_cast<double>(state.nonzero_count()) >= r_keep * static_cast<double>(m) - 1e-9;
}

/// Thrown when every identity in a batch has zero weight.
struct DegenerateBatch : std::runtime_error {
    using std::runtime_error::runtime_error;
};

enum class WeightNormalization { Batch, Global };

/// s_hat_i = s_{y_i} / sum of s over the batch (or over all identities).
inline std::vector<double> batch_weights(const IdentityWeightState& state, const Labels& batch_labels,
                                         WeightNormalization scope = WeightNormalization::Batch) {
    std::vector<double> out(batch_labels.size());
    for (std::size_t b = 0; b < batch_labels.size(); ++b) out[b] = state.s.at(batch_labels[b]);
    double denom = 0.0;
    if (scope == WeightNormalization::Batch) {
        for (double w : out) denom += w;
    } else {
        for (double w : state.s) denom += w;
    }
    const double batch_mass = std::accumulate(out.begin(), out.end(), 0.0);
    if (!(batch_mass > 0.0) || !(denom > 0.0)) throw DegenerateBatch("batch_weights: every batch identity has zero weight");
    for (auto& w : out) w /= denom;
    return out;
}

/// FNV-1a over the little-endian bytes of the weight vector.
inline std::uint64_t weights_checksum(const std::vector<double>& s) {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (double w : s) {
        std::uint64_t bits;
        std::memcpy(&bits, &w, sizeof bits);
        for (int i = 0; i < 8; ++i) {
            h ^= (bits >> (8 * i)) & 0xFF;
            h *= 0x100000001B3ULL;
        }
    }
    return h;
}

}  // namespace vfa
