#pragma once

#include "vfa/errors.hpp"
#include "vfa/rng.hpp"
#include "vfa/types.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

namespace vfa {

struct SynthConfig {
    std::size_t M = 200;
    std::size_t L = 16;
    std::size_t d_in = 64;
    std::size_t samples_per_identity = 20;  // per modality
    double noise_easy = 0.5;
    double noise_hard = 1.0;
    double frac_hard = 0.2;
    double frac_personalized = 0.1;
    std::uint64_t seed = 7;
};

/// Identity counts per split, proportional to 924:112:189.
struct SplitSizes {
    std::size_t train = 0;
    std::size_t validation = 0;
    std::size_t test = 0;
};

inline SplitSizes split_sizes(std::size_t m) {
    constexpr double total = 924.0 + 112.0 + 189.0;
    SplitSizes s;
    s.validation = static_cast<std::size_t>(std::llround(static_cast<double>(m) * 112.0 / total));
    s.test = static_cast<std::size_t>(std::llround(static_cast<double>(m) * 189.0 / total));
    s.train = m >= s.validation + s.test ? m - s.validation - s.test : 0;
    return s;
}

/// floor(fraction * count), robust to representation error such as 0.29 * 100.
inline std::size_t fraction_count(double fraction, std::size_t count) {
    return static_cast<std::size_t>(std::floor(fraction * static_cast<double>(count) + 1e-9));
}

/// Throws ConfigError naming the first offending field.
inline void validate(const SynthConfig& c) {
    auto fail = [](const std::string& field, const std::string& why) {
        throw ConfigError("synth." + field + ": " + why);
    };
    if (c.M == 0) fail("M", "must be >= 1");
    if (c.L == 0) fail("L", "must be >= 1");
    if (c.d_in == 0) fail("d_in", "must be >= 1");
    if (c.samples_per_identity == 0) fail("samples_per_identity", "must be >= 1");
    if (!(c.noise_easy > 0.0)) fail("noise_easy", "must be > 0");
    if (!(c.noise_hard > c.noise_easy)) fail("noise_hard", "must be > noise_easy");
    if (!(c.frac_hard >= 0.0 && c.frac_hard <= 1.0)) fail("frac_hard", "must lie in [0, 1]");
    if (!(c.frac_personalized >= 0.0 && c.frac_personalized <= 1.0))
        fail("frac_personalized", "must lie in [0, 1]");
    if (c.frac_hard + c.frac_personalized > 1.0 + 1e-12)
        fail("frac_personalized", "frac_hard + frac_personalized must be <= 1");
    const auto sizes = split_sizes(c.M);
    if (sizes.train == 0 || sizes.validation == 0 || sizes.test == 0)
        fail("M", "too small: split sizes " + std::to_string(sizes.train) + "/" +
                      std::to_string(sizes.validation) + "/" + std::to_string(sizes.test) +
                      " leave an empty split");
}

/// Row-major d_in x L projection with N(0, 1/L) entries.
inline std::vector<double> draw_projection(Rng& rng, std::size_t d_in, std::size_t l) {
    std::vector<double> p(d_in * l);
    const double scale = 1.0 / std::sqrt(static_cast<double>(l));
    for (auto& v : p) v = scale * rng.normal();
    return p;
}

inline std::vector<double> observe(const std::vector<double>& projection, const std::vector<double>& z,
                                   std::size_t d_in, double sigma, Rng& noise) {
    const std::size_t l = z.size();
    std::vector<double> out(d_in);
    for (std::size_t r = 0; r < d_in; ++r) {
        double acc = 0.0;
        for (std::size_t c = 0; c < l; ++c) acc += projection[r * l + c] * z[c];
        out[r] = acc + sigma * noise.normal();
    }
    return out;
}

/// Draws a dataset whose face and voice observations are noisy linear images
/// of a shared identity latent. Personalized identities get an independent
/// voice latent; hard identities get the larger noise level.
inline SyntheticDataset generate(const SynthConfig& c) {
    validate(c);
    SyntheticDataset ds;
    ds.latent_dim = c.L;
    ds.input_dim = c.d_in;
    ds.generation = {c.seed, c.samples_per_identity, c.noise_easy, c.noise_hard, c.frac_hard,
                     c.frac_personalized};

    Rng proj_rng = Rng::named(c.seed, "synth/projection");
    const auto p_face = draw_projection(proj_rng, c.d_in, c.L);
    const auto p_voice = draw_projection(proj_rng, c.d_in, c.L);

    // Planted flags: the first n_personalized of a random order are
    // personalized, the next n_hard are hard, the remainder easy.
    Rng role_rng = Rng::named(c.seed, "synth/roles");
    std::vector<std::size_t> order(c.M);
    for (std::size_t i = 0; i < c.M; ++i) order[i] = i;
    role_rng.shuffle(order);
    const std::size_t n_pers = fraction_count(c.frac_personalized, c.M);
    const std::size_t n_hard = fraction_count(c.frac_hard, c.M);

    ds.identities.resize(c.M);
    for (std::size_t i = 0; i < c.M; ++i) ds.identities[i].id = i;
    for (std::size_t r = 0; r < n_pers; ++r) ds.identities[order[r]].is_personalized = true;
    for (std::size_t r = n_pers; r < n_pers + n_hard; ++r) ds.identities[order[r]].is_hard = true;

    Rng latent_rng = Rng::named(c.seed, "synth/latent");
    for (auto& ident : ds.identities) {
        ident.latent.resize(c.L);
        for (auto& v : ident.latent) v = latent_rng.normal();
        if (ident.is_personalized) {
            ident.voice_latent.resize(c.L);
            for (auto& v : ident.voice_latent) v = latent_rng.normal();
        } else {
            ident.voice_latent = ident.latent;
        }
        ident.attribute = ident.latent[0] >= 0.0 ? 1 : 0;
    }

    Rng noise_rng = Rng::named(c.seed, "synth/noise");
    ds.face_samples.reserve(c.M * c.samples_per_identity);
    ds.voice_samples.reserve(c.M * c.samples_per_identity);
    for (const auto& ident : ds.identities) {
        const double sigma = ident.is_hard ? c.noise_hard : c.noise_easy;
        for (std::size_t k = 0; k < c.samples_per_identity; ++k)
            ds.face_samples.push_back(
                {ident.id, Modality::Face, observe(p_face, ident.latent, c.d_in, sigma, noise_rng)});
        for (std::size_t k = 0; k < c.samples_per_identity; ++k)
            ds.voice_samples.push_back({ident.id, Modality::Voice,
                                        observe(p_voice, ident.voice_latent, c.d_in, sigma, noise_rng)});
    }

    Rng split_rng = Rng::named(c.seed, "synth/split");
    std::vector<std::size_t> perm(c.M);
    for (std::size_t i = 0; i < c.M; ++i) perm[i] = i;
    split_rng.shuffle(perm);
    const auto sizes = split_sizes(c.M);
    auto take = [&](std::size_t from, std::size_t count) {
        std::vector<std::size_t> ids(perm.begin() + static_cast<std::ptrdiff_t>(from),
                                     perm.begin() + static_cast<std::ptrdiff_t>(from + count));
        std::sort(ids.begin(), ids.end());
        return ids;
    };
    ds.train_ids = take(0, sizes.train);
    ds.validation_ids = take(sizes.train, sizes.validation);
    ds.test_ids = take(sizes.train + sizes.validation, sizes.test);
    return ds;
}

}  // namespace vfa
