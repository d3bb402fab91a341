#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace vfa {

/// Row-major dense matrix; batches are N x D with one sample per row.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using Labels = std::vector<std::size_t>;

enum class Modality : std::uint8_t { Face = 0, Voice = 1 };
enum class Split : std::uint8_t { Train = 0, Validation = 1, Test = 2 };

inline const char* to_string(Modality m) { return m == Modality::Face ? "face" : "voice"; }

inline const char* to_string(Split s) {
    switch (s) {
        case Split::Train: return "train";
        case Split::Validation: return "validation";
        case Split::Test: return "test";
    }
    return "?";
}

inline Split parse_split(const std::string& name) {
    if (name == "train") return Split::Train;
    if (name == "validation" || name == "val") return Split::Validation;
    if (name == "test") return Split::Test;
    throw std::invalid_argument("unknown split '" + name + "'");
}

struct Identity {
    std::size_t id = 0;
    std::vector<double> latent;
    std::vector<double> voice_latent;  // equals latent unless personalized
    bool is_personalized = false;
    bool is_hard = false;
    int attribute = 0;  // 0 or 1

    bool operator==(const Identity&) const = default;
};

struct Sample {
    std::size_t identity_id = 0;
    Modality modality = Modality::Face;
    std::vector<double> features;

    bool operator==(const Sample&) const = default;
};

/// Generation settings recorded in the dataset header. Hand-written fixtures
/// may leave these at their defaults.
struct GenerationInfo {
    std::uint64_t seed = 0;
    std::size_t samples_per_identity = 0;
    double noise_easy = 0.0;
    double noise_hard = 0.0;
    double frac_hard = 0.0;
    double frac_personalized = 0.0;

    bool operator==(const GenerationInfo&) const = default;
};

struct SyntheticDataset {
    std::size_t latent_dim = 0;  // L
    std::size_t input_dim = 0;   // d_in
    GenerationInfo generation;
    std::vector<Identity> identities;
    std::vector<Sample> face_samples;
    std::vector<Sample> voice_samples;
    // Identity ids per split. Well-formed datasets partition the id set.
    std::vector<std::size_t> train_ids;
    std::vector<std::size_t> validation_ids;
    std::vector<std::size_t> test_ids;

    std::size_t identity_count() const { return identities.size(); }

    const std::vector<std::size_t>& split_ids(Split s) const {
        switch (s) {
            case Split::Train: return train_ids;
            case Split::Validation: return validation_ids;
            case Split::Test: return test_ids;
        }
        throw std::invalid_argument("bad split");
    }

    const std::vector<Sample>& samples(Modality m) const {
        return m == Modality::Face ? face_samples : voice_samples;
    }

    bool operator==(const SyntheticDataset&) const = default;
};

/// Per-identity positions into face_samples / voice_samples.
struct SampleIndex {
    std::vector<std::vector<std::size_t>> face;
    std::vector<std::vector<std::size_t>> voice;

    explicit SampleIndex(const SyntheticDataset& ds)
        : face(ds.identity_count()), voice(ds.identity_count()) {
        for (std::size_t i = 0; i < ds.face_samples.size(); ++i) {
            const auto id = ds.face_samples[i].identity_id;
            if (id < face.size()) face[id].push_back(i);
        }
        for (std::size_t i = 0; i < ds.voice_samples.size(); ++i) {
            const auto id = ds.voice_samples[i].identity_id;
            if (id < voice.size()) voice[id].push_back(i);
        }
    }

    const std::vector<std::size_t>& of(std::size_t id, Modality m) const {
        return m == Modality::Face ? face.at(id) : voice.at(id);
    }
};

struct Violation {
    std::string rule;
    std::optional<std::size_t> identity;
    std::string detail;
};

struct ValidationReport {
    std::vector<Violation> violations;

    bool ok() const { return violations.empty(); }

    bool mentions(std::string_view rule) const {
        return std::any_of(violations.begin(), violations.end(),
                           [&](const Violation& v) { return v.rule == rule; });
    }

    std::string summary() const {
        std::string out;
        for (const auto& v : violations) {
            out += v.rule;
            if (v.identity) out += " (identity " + std::to_string(*v.identity) + ")";
            if (!v.detail.empty()) out += ": " + v.detail;
            out += '\n';
        }
        return out;
    }
};

namespace rules {
inline constexpr const char* kDenseIds = "ids are dense and unique";
inline constexpr const char* kLatentDim = "latent vectors have length L";
inline constexpr const char* kVoiceLatent = "voice_latent equals latent unless personalized";
inline constexpr const char* kAttribute = "attribute is binary";
inline constexpr const char* kSampleIdentity = "sample identity_id refers to an existing identity";
inline constexpr const char* kSampleModality = "sample modality matches its list";
inline constexpr const char* kSampleFeatures = "features has exactly d_in finite entries";
inline constexpr const char* kOwnsFace = "owns >= 1 face sample";
inline constexpr const char* kOwnsVoice = "owns >= 1 voice sample";
inline constexpr const char* kSplitOverlap = "splits do not overlap";
inline constexpr const char* kSplitCoverage = "every identity is assigned to a split";
}  // namespace rules

/// Checks every dataset invariant; never throws on malformed input.
inline ValidationReport validate_dataset(const SyntheticDataset& ds) {
    ValidationReport report;
    auto add = [&](const char* rule, std::optional<std::size_t> id, std::string detail = {}) {
        report.violations.push_back({rule, id, std::move(detail)});
    };

    const std::size_t m = ds.identity_count();
    std::vector<int> seen(m, 0);
    for (std::size_t pos = 0; pos < m; ++pos) {
        const auto& ident = ds.identities[pos];
        if (ident.id >= m) {
            add(rules::kDenseIds, ident.id, "id out of range [0, " + std::to_string(m) + ")");
            continue;
        }
        if (seen[ident.id]++) add(rules::kDenseIds, ident.id, "duplicate id");
        if (ident.latent.size() != ds.latent_dim || ident.voice_latent.size() != ds.latent_dim)
            add(rules::kLatentDim, ident.id);
        if (!ident.is_personalized && ident.latent != ident.voice_latent)
            add(rules::kVoiceLatent, ident.id);
        if (ident.attribute != 0 && ident.attribute != 1) add(rules::kAttribute, ident.id);
    }
    for (std::size_t id = 0; id < m; ++id)
        if (seen[id] == 0) add(rules::kDenseIds, id, "missing id");

    std::vector<std::size_t> face_count(m, 0), voice_count(m, 0);
    auto check_samples = [&](const std::vector<Sample>& samples, Modality expected,
                             std::vector<std::size_t>& counts) {
        for (std::size_t i = 0; i < samples.size(); ++i) {
            const auto& s = samples[i];
            if (s.identity_id >= m) {
                add(rules::kSampleIdentity, std::nullopt,
                    std::string(to_string(expected)) + " sample " + std::to_string(i));
                continue;
            }
            if (s.modality != expected)
                add(rules::kSampleModality, s.identity_id,
                    std::string(to_string(expected)) + " sample " + std::to_string(i));
            const bool finite = std::all_of(s.features.begin(), s.features.end(),
                                            [](double v) { return std::isfinite(v); });
            if (s.features.size() != ds.input_dim || !finite)
                add(rules::kSampleFeatures, s.identity_id,
                    std::string(to_string(expected)) + " sample " + std::to_string(i));
            ++counts[s.identity_id];
        }
    };
    check_samples(ds.face_samples, Modality::Face, face_count);
    check_samples(ds.voice_samples, Modality::Voice, voice_count);
    for (std::size_t id = 0; id < m; ++id) {
        if (face_count[id] == 0) add(rules::kOwnsFace, id);
        if (voice_count[id] == 0) add(rules::kOwnsVoice, id);
    }

    std::vector<int> split_of(m, -1);
    const std::vector<std::size_t>* lists[] = {&ds.train_ids, &ds.validation_ids, &ds.test_ids};
    for (int s = 0; s < 3; ++s) {
        for (auto id : *lists[s]) {
            if (id >= m) {
                add(rules::kSplitCoverage, id, "split lists unknown identity");
                continue;
            }
            if (split_of[id] != -1) {
                add(rules::kSplitOverlap, id,
                    std::string(to_string(static_cast<Split>(split_of[id]))) + " and " +
                        to_string(static_cast<Split>(s)));
            } else {
                split_of[id] = s;
            }
        }
    }
    for (std::size_t id = 0; id < m; ++id)
        if (split_of[id] == -1) add(rules::kSplitCoverage, id);
    return report;
}

/// Gathers the feature rows of the given sample positions into an N x d_in batch.
inline Matrix gather_features(const std::vector<Sample>& samples,
                              const std::vector<std::size_t>& positions, std::size_t input_dim) {
    Matrix out(static_cast<Eigen::Index>(positions.size()), static_cast<Eigen::Index>(input_dim));
    for (std::size_t r = 0; r < positions.size(); ++r) {
        const auto& f = samples.at(positions[r]).features;
        if (f.size() != input_dim) throw std::invalid_argument("sample feature length mismatch");
        for (std::size_t c = 0; c < input_dim; ++c)
            out(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = f[c];
    }
    return out;
}

}  // namespace vfa
