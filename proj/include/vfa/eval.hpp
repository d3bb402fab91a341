#pragma once

// Cross-modal evaluation: 1:n matching, verification AUC and retrieval mAP,
// voice-to-face and face-to-voice, over unrestricted or attribute-matched
// galleries.

#include "vfa/encoders.hpp"
#include "vfa/errors.hpp"
#include "vfa/rng.hpp"
#include "vfa/types.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace vfa {

enum class Direction { VoiceToFace, FaceToVoice };
enum class Restriction { Unrestricted, AttributeMatched };
enum class Task { Matching, Verification, Retrieval };
enum class Similarity { Cosine, Dot };

inline const char* to_string(Direction d) { return d == Direction::VoiceToFace ? "V-F" : "F-V"; }
inline const char* to_string(Restriction r) { return r == Restriction::Unrestricted ? "U" : "G"; }

inline const char* to_string(Task t) {
    switch (t) {
        case Task::Matching: return "matching";
        case Task::Verification: return "verification";
        case Task::Retrieval: return "retrieval";
    }
    return "?";
}

inline Modality probe_modality(Direction d) { return d == Direction::VoiceToFace ? Modality::Voice : Modality::Face; }
inline Modality gallery_modality(Direction d) { return d == Direction::VoiceToFace ? Modality::Face : Modality::Voice; }

/// Raised when a split cannot support the requested gallery.
struct InsufficientIdentities : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

/// Cosine similarity.
inline double score(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw std::invalid_argument("score: length mismatch");
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (!(na > 0.0) || !(nb > 0.0)) throw std::invalid_argument("score: zero-norm embedding");
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

/// Probe and gallery entries are positions into the dataset's sample list of
/// the respective modality; positives are positions within the gallery.
struct Query {
    Direction direction = Direction::VoiceToFace;
    Restriction restriction = Restriction::Unrestricted;
    std::size_t probe = 0;
    std::vector<std::size_t> gallery;
    std::vector<std::size_t> positives;

    bool operator==(const Query&) const = default;
};

struct Protocol {
    Task task = Task::Matching;
    Direction direction = Direction::VoiceToFace;
    std::size_t gallery_size = 2;  // matching only
};

struct QueryBudget {
    std::size_t per_probe = 20;
    std::size_t max_per_cell = 50000;
};

namespace detail {

inline std::vector<std::size_t> candidates_for(const SyntheticDataset& ds, const std::vector<std::size_t>& ids,
                                               std::size_t probe_id, Restriction r) {
    std::vector<std::size_t> out;
    const int attr = ds.identities.at(probe_id).attribute;
    for (auto id : ids) {
        if (id == probe_id) continue;
        if (r == Restriction::AttributeMatched && ds.identities[id].attribute != attr) continue;
        out.push_back(id);
    }
    return out;
}

template <typename T>
const T& pick(const std::vector<T>& pool, Rng& rng) {
    return pool.at(static_cast<std::size_t>(rng.below(pool.size())));
}

}  // namespace detail

/// Deterministic query generation for one (protocol, restriction) cell.
///   matching:     per probe sample, budget.per_probe galleries of gallery_size
///                 with exactly one positive at a random position
///   verification: per probe sample, budget.per_probe single-candidate queries,
///                 alternately positive and negative
///   retrieval:    one query per probe sample over every opposite-modality
///                 sample of the split (same-attribute identities if restricted)
/// Cells exceeding budget.max_per_cell keep a random subset of probes.
inline std::vector<Query> generate_queries(const SyntheticDataset& ds, Split split, const Protocol& protocol,
                                           Restriction restriction, Rng& rng, const QueryBudget& budget = {}) {
    const auto& ids = ds.split_ids(split);
    const SampleIndex index(ds);
    const Modality pm = probe_modality(protocol.direction);
    const Modality gm = gallery_modality(protocol.direction);
    if (protocol.task == Task::Matching && protocol.gallery_size < 2)
        throw std::invalid_argument("generate_queries: gallery size must be >= 2");

    const std::size_t distractors = protocol.task == Task::Matching ? protocol.gallery_size - 1 : 1;
    if (ids.size() < 2) throw InsufficientIdentities("split has fewer than 2 identities");
    for (auto id : ids) {
        const auto others = detail::candidates_for(ds, ids, id, restriction);
        if (protocol.task != Task::Retrieval && others.size() < distractors)
            throw InsufficientIdentities("identity " + std::to_string(id) + " has " + std::to_string(others.size()) +
                                         " eligible distractor identities, need " + std::to_string(distractors));
    }

    std::vector<std::size_t> probes;
    for (auto id : ids)
        for (auto pos : index.of(id, pm)) probes.push_back(pos);
    const std::size_t per_probe = protocol.task == Task::Retrieval ? 1 : budget.per_probe;
    if (per_probe == 0) return {};
    if (probes.size() * per_probe > budget.max_per_cell) {
        rng.shuffle(probes);
        probes.resize(std::max<std::size_t>(1, budget.max_per_cell / per_probe));
        std::sort(probes.begin(), probes.end());
    }

    std::vector<Query> out;
    out.reserve(probes.size() * per_probe);
    const auto& probe_list = ds.samples(pm);
    for (auto probe : probes) {
        const auto pid = probe_list[probe].identity_id;
        const auto others = detail::candidates_for(ds, ids, pid, restriction);
        if (protocol.task == Task::Retrieval) {
            Query q{protocol.direction, restriction, probe, {}, {}};
            for (auto id : ids) {
                if (restriction == Restriction::AttributeMatched &&
                    ds.identities[id].attribute != ds.identities[pid].attribute)
                    continue;
                for (auto pos : index.of(id, gm)) {
                    if (id == pid) q.positives.push_back(q.gallery.size());
                    q.gallery.push_back(pos);
                }
            }
            out.push_back(std::move(q));
            continue;
        }
        for (std::size_t rep = 0; rep < per_probe; ++rep) {
            Query q{protocol.direction, restriction, probe, {}, {}};
            if (protocol.task == Task::Verification) {
                if (rep % 2 == 0) {
                    q.gallery.push_back(detail::pick(index.of(pid, gm), rng));
                    q.positives.push_back(0);
                } else {
                    const auto neg = detail::pick(others, rng);
                    q.gallery.push_back(detail::pick(index.of(neg, gm), rng));
                }
            } else {
                const auto chosen = rng.choose(others.size(), distractors);
                for (auto c : chosen) q.gallery.push_back(detail::pick(index.of(others[c], gm), rng));
                const auto at = static_cast<std::size_t>(rng.below(protocol.gallery_size));
                q.gallery.insert(q.gallery.begin() + static_cast<std::ptrdiff_t>(at),
                                 detail::pick(index.of(pid, gm), rng));
                q.positives.push_back(at);
            }
            out.push_back(std::move(q));
        }
    }
    return out;
}

/// Scores of one query's gallery plus the positive positions.
struct ScoredQuery {
    std::vector<double> scores;
    std::vector<std::size_t> positives;
};

/// Fraction of queries whose single positive strictly beats every other
/// candidate; ties are failures.
inline double match_accuracy(std::span<const ScoredQuery> queries) {
    if (queries.empty()) throw std::invalid_argument("match_accuracy: no queries");
    std::size_t correct = 0;
    for (const auto& q : queries) {
        if (q.positives.size() != 1 || q.positives[0] >= q.scores.size())
            throw std::invalid_argument("match_accuracy: query needs exactly one positive");
        const double pos = q.scores[q.positives[0]];
        bool win = true;
        for (std::size_t j = 0; j < q.scores.size() && win; ++j)
            if (j != q.positives[0] && !(pos > q.scores[j])) win = false;
        correct += win ? 1 : 0;
    }
    return static_cast<double>(correct) / static_cast<double>(queries.size());
}

/// Mann-Whitney normalization: (concordant + ties / 2) / (P * N).
inline double verification_auc(std::span<const double> positive, std::span<const double> negative) {
    if (positive.empty() || negative.empty()) throw std::invalid_argument("verification_auc: empty class");
    std::vector<double> neg(negative.begin(), negative.end());
    std::sort(neg.begin(), neg.end());
    double credit = 0.0;
    for (double p : positive) {
        const auto lo = std::lower_bound(neg.begin(), neg.end(), p);
        const auto hi = std::upper_bound(lo, neg.end(), p);
        credit += static_cast<double>(lo - neg.begin()) + 0.5 * static_cast<double>(hi - lo);
    }
    return credit / (static_cast<double>(positive.size()) * static_cast<double>(neg.size()));
}

/// Mean over positives of precision at the positive's rank (descending score,
/// ties resolved by gallery order, ranks 1-based).
inline double average_precision(const ScoredQuery& q) {
    if (q.positives.empty()) throw std::invalid_argument("average_precision: no positives");
    std::vector<std::size_t> order(q.scores.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return q.scores[a] > q.scores[b]; });
    std::vector<bool> is_pos(q.scores.size(), false);
    for (auto p : q.positives) is_pos.at(p) = true;
    double sum = 0.0;
    std::size_t hits = 0;
    for (std::size_t rank = 0; rank < order.size(); ++rank) {
        if (!is_pos[order[rank]]) continue;
        ++hits;
        sum += static_cast<double>(hits) / static_cast<double>(rank + 1);
    }
    return sum / static_cast<double>(q.positives.size());
}

inline double mean_average_precision(std::span<const ScoredQuery> queries) {
    if (queries.empty()) throw std::invalid_argument("mean_average_precision: no queries");
    double sum = 0.0;
    for (const auto& q : queries) sum += average_precision(q);
    return sum / static_cast<double>(queries.size());
}

/// Throws DimensionMismatch unless both encoders accept the dataset's d_in.
inline void require_compatible(const EncoderParams& params, const SyntheticDataset& ds) {
    const auto d = params.dims();
    if (d.input != ds.input_dim || static_cast<std::size_t>(params.voice.w1.cols()) != ds.input_dim)
        throw DimensionMismatch("encoder input dimension " + std::to_string(d.input) + " does not match dataset d_in " +
                                std::to_string(ds.input_dim));
}

/// Embeddings of every sample of one split, computed once and reused by all
/// queries. Rows are unit-normalized for cosine similarity.
class EmbeddingTable {
public:
    EmbeddingTable(const EncoderParams& params, const SyntheticDataset& ds, Split split,
                   Similarity similarity = Similarity::Cosine)
        : similarity_(similarity) {
        require_compatible(params, ds);
        const SampleIndex index(ds);
        for (auto id : ds.split_ids(split)) {
            for (auto pos : index.face.at(id)) face_pos_.push_back(pos);
            for (auto pos : index.voice.at(id)) voice_pos_.push_back(pos);
        }
        std::sort(face_pos_.begin(), face_pos_.end());
        std::sort(voice_pos_.begin(), voice_pos_.end());
        face_ = embed_samples(params, ds.face_samples, face_pos_, Modality::Face, ds.input_dim);
        voice_ = embed_samples(params, ds.voice_samples, voice_pos_, Modality::Voice, ds.input_dim);
        face_row_.assign(ds.face_samples.size(), -1);
        voice_row_.assign(ds.voice_samples.size(), -1);
        for (std::size_t r = 0; r < face_pos_.size(); ++r) face_row_[face_pos_[r]] = static_cast<long>(r);
        for (std::size_t r = 0; r < voice_pos_.size(); ++r) voice_row_[voice_pos_[r]] = static_cast<long>(r);
        if (similarity_ == Similarity::Cosine) {
            normalize(face_);
            normalize(voice_);
        }
    }

    double score(Direction d, std::size_t probe, std::size_t candidate) const {
        const Modality pm = probe_modality(d);
        const auto pr = row(pm, probe);
        const auto cr = row(gallery_modality(d), candidate);
        return matrix(pm).row(pr).dot(matrix(gallery_modality(d)).row(cr));
    }

    const Matrix& matrix(Modality m) const { return m == Modality::Face ? face_ : voice_; }
    const std::vector<std::size_t>& positions(Modality m) const { return m == Modality::Face ? face_pos_ : voice_pos_; }

private:
    static void normalize(Matrix& m) {
        for (Eigen::Index r = 0; r < m.rows(); ++r) {
            const double n = m.row(r).norm();
            if (!(n > 0.0)) throw std::invalid_argument("EmbeddingTable: zero-norm embedding");
            m.row(r) /= n;
        }
    }

    Eigen::Index row(Modality m, std::size_t pos) const {
        const auto& rows = m == Modality::Face ? face_row_ : voice_row_;
        if (pos >= rows.size() || rows[pos] < 0) throw std::out_of_range("EmbeddingTable: sample not in split");
        return static_cast<Eigen::Index>(rows[pos]);
    }

    Similarity similarity_;
    std::vector<std::size_t> face_pos_, voice_pos_;
    std::vector<long> face_row_, voice_row_;
    Matrix face_, voice_;
};

/// Scores queries on `threads` workers; output order equals input order.
inline std::vector<ScoredQuery> score_queries(const EmbeddingTable& table, const std::vector<Query>& queries,
                                              unsigned threads = 1) {
    std::vector<ScoredQuery> out(queries.size());
    auto work = [&](std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i) {
            const auto& q = queries[i];
            auto& s = out[i];
            s.positives = q.positives;
            s.scores.reserve(q.gallery.size());
            for (auto g : q.gallery) s.scores.push_back(table.score(q.direction, q.probe, g));
        }
    };
    threads = std::max(1u, threads);
    if (threads == 1 || queries.size() < 1024) {
        work(0, queries.size());
        return out;
    }
    {
        std::vector<std::jthread> pool;
        const std::size_t chunk = (queries.size() + threads - 1) / threads;
        for (unsigned t = 0; t < threads; ++t) {
            const std::size_t b = t * chunk, e = std::min(queries.size(), b + chunk);
            if (b < e) pool.emplace_back(work, b, e);
        }
    }
    return out;
}

inline double match_accuracy(const EmbeddingTable& table, const std::vector<Query>& queries, std::size_t n) {
    for (const auto& q : queries)
        if (q.gallery.size() != n || q.positives.size() != 1)
            throw std::invalid_argument("match_accuracy: malformed gallery");
    const auto scored = score_queries(table, queries);
    return match_accuracy(scored);
}

inline double verification_auc(const EmbeddingTable& table, const std::vector<Query>& positive_pairs,
                               const std::vector<Query>& negative_pairs) {
    std::vector<double> pos, neg;
    for (const auto& q : positive_pairs) pos.push_back(table.score(q.direction, q.probe, q.gallery.at(0)));
    for (const auto& q : negative_pairs) neg.push_back(table.score(q.direction, q.probe, q.gallery.at(0)));
    return verification_auc(pos, neg);
}

/// Splits single-candidate queries into positive and negative pairs.
inline std::pair<std::vector<Query>, std::vector<Query>> split_pairs(const std::vector<Query>& pairs) {
    std::pair<std::vector<Query>, std::vector<Query>> out;
    for (const auto& q : pairs) (q.positives.empty() ? out.second : out.first).push_back(q);
    return out;
}

inline double retrieval_map(const EmbeddingTable& table, const std::vector<Query>& queries) {
    for (const auto& q : queries)
        if (q.positives.empty()) throw std::invalid_argument("retrieval_map: query without positives");
    const auto scored = score_queries(table, queries);
    return mean_average_precision(scored);
}

struct EvalConfig {
    QueryBudget budget;
    std::size_t max_gallery = 10;  // 1:n curve for n = 2..max_gallery
    Similarity similarity = Similarity::Cosine;
    std::uint64_t seed = 1;
    unsigned threads = 1;
};

struct MetricCell {
    std::optional<double> value;  // absent when the split cannot support the cell
    std::size_t queries = 0;
    std::string note;
};

struct MetricsReport {
    std::string split;
    // "<task>/<direction>/<restriction>", e.g. "matching/V-F/U"
    std::map<std::string, MetricCell> cells;
    // "<direction>/<restriction>" -> ACC at n = 2..max_gallery (index 0 is n = 2)
    std::map<std::string, std::vector<MetricCell>> curves;

    static std::string key(Task t, Direction d, Restriction r) {
        return std::string(to_string(t)) + "/" + to_string(d) + "/" + to_string(r);
    }
    static std::string curve_key(Direction d, Restriction r) {
        return std::string(to_string(d)) + "/" + to_string(r);
    }

    std::optional<double> get(Task t, Direction d, Restriction r) const {
        const auto it = cells.find(key(t, d, r));
        return it == cells.end() ? std::nullopt : it->second.value;
    }

    nlohmann::ordered_json to_json() const {
        nlohmann::ordered_json j;
        j["split"] = split;
        auto cell_json = [](const MetricCell& c) {
            nlohmann::ordered_json o;
            o["value"] = c.value ? nlohmann::ordered_json(*c.value) : nlohmann::ordered_json(nullptr);
            o["queries"] = c.queries;
            if (!c.note.empty()) o["note"] = c.note;
            return o;
        };
        auto& cj = j["cells"];
        cj = nlohmann::ordered_json::object();
        for (const auto& [k, c] : cells) cj[k] = cell_json(c);
        auto& cv = j["curves"];
        cv = nlohmann::ordered_json::object();
        for (const auto& [k, curve] : curves) {
            auto arr = nlohmann::ordered_json::array();
            for (std::size_t i = 0; i < curve.size(); ++i) {
                auto o = cell_json(curve[i]);
                o["n"] = i + 2;
                arr.push_back(o);
            }
            cv[k] = arr;
        }
        return j;
    }
};

/// Unrestricted 1:2 voice-to-face accuracy, the model-selection metric.
inline double selection_accuracy(const EncoderParams& params, const SyntheticDataset& ds, Split split,
                                 const std::vector<Query>& queries, Similarity similarity = Similarity::Cosine) {
    const EmbeddingTable table(params, ds, split, similarity);
    return match_accuracy(table, queries, 2);
}

/// Fills every (task, direction, restriction) cell plus the 1:n curves.
/// Each cell draws its queries from its own named stream of cfg.seed.
inline MetricsReport evaluate_all(const EncoderParams& params, const SyntheticDataset& ds, Split split,
                                  const EvalConfig& cfg = {}) {
    MetricsReport report;
    report.split = to_string(split);
    const EmbeddingTable table(params, ds, split, cfg.similarity);
    for (auto d : {Direction::VoiceToFace, Direction::FaceToVoice}) {
        for (auto r : {Restriction::Unrestricted, Restriction::AttributeMatched}) {
            auto& curve = report.curves[MetricsReport::curve_key(d, r)];
            for (std::size_t n = 2; n <= cfg.max_gallery; ++n) {
                MetricCell cell;
                Rng rng = Rng::named(cfg.seed, "eval/matching/" + MetricsReport::key(Task::Matching, d, r) +
                                                   "/n=" + std::to_string(n));
                try {
                    const auto qs = generate_queries(ds, split, {Task::Matching, d, n}, r, rng, cfg.budget);
                    cell.queries = qs.size();
                    if (!qs.empty()) cell.value = match_accuracy(score_queries(table, qs, cfg.threads));
                } catch (const InsufficientIdentities& e) {
                    cell.note = e.what();
                }
                curve.push_back(cell);
                if (n == 2) report.cells[MetricsReport::key(Task::Matching, d, r)] = cell;
            }

            MetricCell ver;
            Rng vrng = Rng::named(cfg.seed, "eval/" + MetricsReport::key(Task::Verification, d, r));
            try {
                const auto qs = generate_queries(ds, split, {Task::Verification, d, 1}, r, vrng, cfg.budget);
                ver.queries = qs.size();
                const auto [pos, neg] = split_pairs(qs);
                if (!pos.empty() && !neg.empty()) ver.value = verification_auc(table, pos, neg);
            } catch (const InsufficientIdentities& e) {
                ver.note = e.what();
            }
            report.cells[MetricsReport::key(Task::Verification, d, r)] = ver;

            MetricCell ret;
            Rng rrng = Rng::named(cfg.seed, "eval/" + MetricsReport::key(Task::Retrieval, d, r));
            try {
                const auto qs = generate_queries(ds, split, {Task::Retrieval, d, 0}, r, rrng, cfg.budget);
                ret.queries = qs.size();
                if (!qs.empty()) ret.value = mean_average_precision(score_queries(table, qs, cfg.threads));
            } catch (const InsufficientIdentities& e) {
                ret.note = e.what();
            }
            report.cells[MetricsReport::key(Task::Retrieval, d, r)] = ret;
        }
    }
    return report;
}

/// Two-column CSV (n, acc) of one 1:n curve; absent cells are left empty.
inline std::string curve_csv(const std::vector<MetricCell>& curve) {
    std::string out = "n,acc\n";
    char buf[64];
    for (std::size_t i = 0; i < curve.size(); ++i) {
        if (curve[i].value) {
            std::snprintf(buf, sizeof buf, "%zu,%.17g\n", i + 2, *curve[i].value);
        } else {
            std::snprintf(buf, sizeof buf, "%zu,\n", i + 2);
        }
        out += buf;
    }
    return out;
}

/// Writes identity,modality,e_0..e_{D-1} rows (face samples, then voice
/// samples, dataset order) for every sample in the split. Returns row count.
inline std::size_t export_embeddings(const EncoderParams& params, const SyntheticDataset& ds, Split split,
                                     const std::string& path) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw IoError("cannot write embeddings '" + path + "'");
    const auto d = params.dims().embed;
    os << "identity,modality";
    for (std::size_t c = 0; c < d; ++c) os << ",e" << c;
    os << '\n';
    const SampleIndex index(ds);
    std::size_t rows = 0;
    char buf[40];
    for (auto m : {Modality::Face, Modality::Voice}) {
        std::vector<std::size_t> pos;
        for (auto id : ds.split_ids(split))
            for (auto p : index.of(id, m)) pos.push_back(p);
        std::sort(pos.begin(), pos.end());
        const Matrix emb = embed_samples(params, ds.samples(m), pos, m, ds.input_dim);
        for (std::size_t r = 0; r < pos.size(); ++r) {
            os << ds.samples(m)[pos[r]].identity_id << ',' << to_string(m);
            for (Eigen::Index c = 0; c < emb.cols(); ++c) {
                std::snprintf(buf, sizeof buf, "%.17g", emb(static_cast<Eigen::Index>(r), c));
                os << ',' << buf;
            }
            os << '\n';
            ++rows;
        }
    }
    if (!os) throw IoError("write failed for '" + path + "'");
    return rows;
}

}  // namespace vfa
