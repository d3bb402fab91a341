#include "fixtures.hpp"
#include "oracles.hpp"

#include "vfa/eval.hpp"
#include "vfa/synthdata.hpp"

#include <gtest/gtest.h>

#include <fstream>
#include <set>
#include <sstream>

using namespace vfa;

namespace {

/// k identities whose samples are one-hot feature vectors of their id, all in
/// the test split, attributes alternating.
SyntheticDataset one_hot_dataset(std::size_t k, std::size_t samples) {
    SyntheticDataset ds;
    ds.latent_dim = 1;
    ds.input_dim = k;
    for (std::size_t id = 0; id < k; ++id) {
        Identity ident;
        ident.id = id;
        ident.latent = {static_cast<double>(id)};
        ident.voice_latent = ident.latent;
        ident.attribute = static_cast<int>(id % 2);
        ds.identities.push_back(ident);
        std::vector<double> f(k, 0.0);
        f[id] = 1.0;
        for (std::size_t s = 0; s < samples; ++s) {
            ds.face_samples.push_back({id, Modality::Face, f});
            ds.voice_samples.push_back({id, Modality::Voice, f});
        }
        ds.test_ids.push_back(id);
    }
    return ds;
}

/// Encoders that map one-hot inputs to themselves.
EncoderParams identity_model(std::size_t k) {
    Rng rng(0);
    auto p = init_params({k, k, k, 2}, rng);
    for (auto* e : {&p.face, &p.voice}) {
        e->w1 = Matrix::Identity(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(k));
        e->w2 = e->w1;
    }
    return p;
}

std::vector<double> random_scores(std::size_t n, Rng& rng, bool coarse) {
    std::vector<double> s(n);
    for (auto& x : s) x = coarse ? static_cast<double>(rng.below(5)) / 4.0 : rng.uniform();
    return s;
}

}  // namespace

TEST(Score, CosineExamples) {
    const std::vector<double> a{1.0, 0.0}, b{1.0, 1.0}, c{0.0, 3.0};
    EXPECT_DOUBLE_EQ(score(b, b), 1.0);
    EXPECT_EQ(score(a, c), 0.0);
    EXPECT_NEAR(score(a, b), 0.7071068, 1e-7);
    EXPECT_NEAR(score(a, b), 1.0 / std::sqrt(2.0), 1e-15);
    EXPECT_THROW(score(a, std::vector<double>{0.0, 0.0}), std::invalid_argument);
}

TEST(Queries, MinimalInstanceForcesTheGallery) {
    auto ds = fixtures::tiny();
    ds.validation_ids.clear();
    ds.test_ids = {2, 3};
    Rng rng(1);
    const auto qs = generate_queries(ds, Split::Test, {Task::Matching, Direction::VoiceToFace, 2},
                                     Restriction::Unrestricted, rng);
    std::set<std::size_t> probes;
    for (const auto& q : qs) {
        probes.insert(q.probe);
        ASSERT_EQ(q.gallery.size(), 2u);
        EXPECT_EQ(std::set<std::size_t>(q.gallery.begin(), q.gallery.end()), (std::set<std::size_t>{2, 3}));
        ASSERT_EQ(q.positives.size(), 1u);
        EXPECT_EQ(ds.face_samples[q.gallery[q.positives[0]]].identity_id, ds.voice_samples[q.probe].identity_id);
    }
    EXPECT_EQ(probes, (std::set<std::size_t>{2, 3}));
    Rng again(1);
    EXPECT_THROW(generate_queries(ds, Split::Test, {Task::Matching, Direction::VoiceToFace, 2},
                                  Restriction::AttributeMatched, again),
                 InsufficientIdentities);
}

TEST(Queries, RestrictedGalleriesShareTheProbeAttribute) {
    const auto ds = generate(fixtures::small_config());
    for (auto task : {Task::Matching, Task::Verification, Task::Retrieval}) {
        Rng rng(2);
        const auto qs = generate_queries(ds, Split::Train, {task, Direction::FaceToVoice, 4},
                                         Restriction::AttributeMatched, rng);
        ASSERT_FALSE(qs.empty());
        for (const auto& q : qs) {
            const int attr = ds.identities[ds.face_samples[q.probe].identity_id].attribute;
            for (auto g : q.gallery) ASSERT_EQ(ds.identities[ds.voice_samples[g].identity_id].attribute, attr);
        }
    }
}

TEST(Queries, MatchingGalleriesHoldOnePositiveAndDistinctDistractors) {
    const auto ds = generate(fixtures::small_config());
    Rng rng(3);
    const auto qs = generate_queries(ds, Split::Train, {Task::Matching, Direction::VoiceToFace, 6},
                                     Restriction::Unrestricted, rng, {3, 100000});
    EXPECT_EQ(qs.size(), ds.train_ids.size() * 5 * 3);
    for (const auto& q : qs) {
        const auto pid = ds.voice_samples[q.probe].identity_id;
        std::set<std::size_t> ids;
        std::size_t positives = 0;
        for (auto g : q.gallery) {
            ids.insert(ds.face_samples[g].identity_id);
            positives += ds.face_samples[g].identity_id == pid;
        }
        ASSERT_EQ(ids.size(), 6u);
        ASSERT_EQ(positives, 1u);
        ASSERT_EQ(ds.face_samples[q.gallery[q.positives[0]]].identity_id, pid);
    }
}

TEST(Queries, SameSeedSameQueries) {
    const auto ds = generate(fixtures::small_config());
    Rng a(4), b(4);
    const Protocol p{Task::Matching, Direction::VoiceToFace, 3};
    EXPECT_EQ(generate_queries(ds, Split::Test, p, Restriction::Unrestricted, a),
              generate_queries(ds, Split::Test, p, Restriction::Unrestricted, b));
}

TEST(Queries, BudgetCapsTheCell) {
    const auto ds = generate(fixtures::small_config());
    Rng rng(5);
    const auto qs = generate_queries(ds, Split::Train, {Task::Matching, Direction::VoiceToFace, 2},
                                     Restriction::Unrestricted, rng, {20, 100});
    EXPECT_EQ(qs.size(), 100u);
}

TEST(Metrics, WorkedExamples) {
    EXPECT_EQ(verification_auc(std::vector<double>{0.9}, std::vector<double>{0.1}), 1.0);
    EXPECT_EQ(verification_auc(std::vector<double>{0.3, 0.3}, std::vector<double>{0.3}), 0.5);
    EXPECT_EQ(verification_auc(std::vector<double>{0.8, 0.4}, std::vector<double>{0.6, 0.2}), 0.75);
    EXPECT_EQ(average_precision({{0.9, 0.1}, {0}}), 1.0);
    EXPECT_EQ(average_precision({{0.1, 0.9}, {0}}), 0.5);
    EXPECT_NEAR(average_precision({{0.9, 0.7, 0.5, 0.3}, {0, 2}}), (1.0 + 2.0 / 3.0) / 2.0, 1e-15);
    EXPECT_NEAR(average_precision({{0.9, 0.7, 0.5, 0.3}, {0, 2}}), 0.8333, 1e-4);
    const std::vector<ScoredQuery> tie{{{0.5, 0.5}, {0}}};
    EXPECT_EQ(match_accuracy(tie), 0.0);
    EXPECT_THROW(verification_auc(std::vector<double>{}, std::vector<double>{0.1}), std::invalid_argument);
    EXPECT_THROW(average_precision({{0.1}, {}}), std::invalid_argument);
    const std::vector<ScoredQuery> two_pos{{{0.5, 0.4}, {0, 1}}};
    EXPECT_THROW(match_accuracy(two_pos), std::invalid_argument);
}

TEST(Metrics, AgreeWithBruteForceOnRandomScoreSets) {
    Rng rng(6);
    for (int set = 0; set < 100; ++set) {
        const bool coarse = set % 2 == 0;  // half the sets are full of ties
        const auto pos = random_scores(1 + rng.below(20), rng, coarse);
        const auto neg = random_scores(1 + rng.below(20), rng, coarse);
        ASSERT_NEAR(verification_auc(pos, neg), oracle::auc(pos, neg), 1e-12);

        ScoredQuery q;
        q.scores = random_scores(2 + rng.below(30), rng, coarse);
        for (std::size_t i = 0; i < q.scores.size(); ++i)
            if (rng.below(3) == 0) q.positives.push_back(i);
        if (q.positives.empty()) q.positives.push_back(0);
        ASSERT_NEAR(average_precision(q), oracle::average_precision(q.scores, q.positives), 1e-12);

        std::vector<ScoredQuery> matching;
        std::vector<std::vector<double>> raw;
        std::vector<std::size_t> at;
        const auto n = 2 + rng.below(9);
        for (int k = 0; k < 30; ++k) {
            matching.push_back({random_scores(n, rng, coarse), {static_cast<std::size_t>(rng.below(n))}});
            raw.push_back(matching.back().scores);
            at.push_back(matching.back().positives[0]);
        }
        ASSERT_NEAR(match_accuracy(matching), oracle::match_accuracy(raw, at), 1e-12);
    }
}

TEST(Metrics, PairwiseMatchingEqualsPairComparison) {
    Rng rng(7);
    std::vector<ScoredQuery> qs;
    std::size_t wins = 0;
    for (int i = 0; i < 500; ++i) {
        const auto s = random_scores(2, rng, true);
        const std::size_t p = rng.below(2);
        qs.push_back({s, {p}});
        wins += s[p] > s[1 - p];
    }
    EXPECT_EQ(match_accuracy(qs), static_cast<double>(wins) / 500.0);
}

TEST(Metrics, RandomScoresSitAtChance) {
    Rng rng(8);
    const std::size_t queries = 20000;
    for (std::size_t n = 2; n <= 10; ++n) {
        std::vector<ScoredQuery> qs;
        for (std::size_t i = 0; i < queries; ++i) qs.push_back({random_scores(n, rng, false), {rng.below(n)}});
        const double p = 1.0 / static_cast<double>(n);
        EXPECT_NEAR(match_accuracy(qs), p, 3.0 * std::sqrt(p * (1 - p) / queries)) << "n=" << n;
    }
    const auto pos = random_scores(queries, rng, false), neg = random_scores(queries, rng, false);
    // Mann-Whitney null sd for equal class sizes: sqrt((P + N + 1) / (12 P N)).
    const double q = static_cast<double>(queries);
    EXPECT_NEAR(verification_auc(pos, neg), 0.5, 3.0 * std::sqrt((2 * q + 1) / (12 * q * q)));
}

TEST(EvaluateAll, PerfectModelScoresOneEverywhere) {
    const auto ds = one_hot_dataset(24, 2);
    const auto report = evaluate_all(identity_model(24), ds, Split::Test, {{4, 10000}, 10});
    for (const auto& [key, cell] : report.cells) {
        ASSERT_TRUE(cell.value.has_value()) << key << ": " << cell.note;
        EXPECT_EQ(*cell.value, 1.0) << key;
        EXPECT_GT(cell.queries, 0u);
    }
    EXPECT_EQ(report.cells.size(), 12u);
    for (const auto& [key, curve] : report.curves) {
        ASSERT_EQ(curve.size(), 9u);
        for (const auto& c : curve) EXPECT_EQ(c.value.value_or(-1.0), 1.0) << key;
    }
}

TEST(EvaluateAll, UnsupportedRestrictedCellsAreAbsent) {
    const auto ds = one_hot_dataset(8, 1);  // 4 identities per attribute
    const auto report = evaluate_all(identity_model(8), ds, Split::Test, {{2, 1000}, 10});
    const auto& curve = report.curves.at("V-F/G");
    EXPECT_TRUE(curve[2].value.has_value());   // n = 4: 3 distractors available
    EXPECT_FALSE(curve[3].value.has_value());  // n = 5 needs 4
    EXPECT_FALSE(curve[3].note.empty());
    EXPECT_TRUE(report.curves.at("V-F/U")[6].value.has_value());   // n = 8 uses every test identity
    EXPECT_FALSE(report.curves.at("V-F/U")[7].value.has_value());
}

TEST(EvaluateAll, UntrainedEncodersAreAtChanceOnAverage) {
    // One init's queries share probes and galleries, so chance is checked in
    // expectation over inits against the between-model standard error.
    const auto ds = generate(SynthConfig{});
    std::vector<double> accs;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        Rng rng(seed + 100);
        const auto params = init_params({ds.input_dim, 64, 32, ds.train_ids.size()}, rng);
        const auto report = evaluate_all(params, ds, Split::Test, {{20, 50000}, 2});
        accs.push_back(*report.cells.at("matching/V-F/U").value);
    }
    double mu = 0.0, var = 0.0;
    for (double a : accs) mu += a / 20.0;
    for (double a : accs) var += (a - mu) * (a - mu) / 19.0;
    EXPECT_NEAR(mu, 0.5, 3.0 * std::sqrt(var / 20.0));
}

TEST(EvaluateAll, SymmetricModelGivesMatchingDirections) {
    auto ds = generate(fixtures::small_config());
    for (std::size_t i = 0; i < ds.voice_samples.size(); ++i) ds.voice_samples[i].features = ds.face_samples[i].features;
    Rng rng(10);
    auto params = init_params({ds.input_dim, 32, 16, 4}, rng);
    params.voice = params.face;
    const auto report = evaluate_all(params, ds, Split::Train, {{20, 50000}, 2});
    for (auto task : {Task::Matching, Task::Verification, Task::Retrieval}) {
        const double vf = *report.get(task, Direction::VoiceToFace, Restriction::Unrestricted);
        const double fv = *report.get(task, Direction::FaceToVoice, Restriction::Unrestricted);
        EXPECT_NEAR(vf, fv, 0.03) << to_string(task);
    }
    // Retrieval uses every probe against the full gallery: no sampling at all.
    EXPECT_DOUBLE_EQ(*report.get(Task::Retrieval, Direction::VoiceToFace, Restriction::Unrestricted),
                     *report.get(Task::Retrieval, Direction::FaceToVoice, Restriction::Unrestricted));
}

TEST(EvaluateAll, ReportIsDeterministicAndThreadCountInvariant) {
    const auto ds = generate(fixtures::small_config());
    Rng rng(11);
    const auto params = init_params({ds.input_dim, 32, 16, 4}, rng);
    EvalConfig one{{20, 50000}, 10};
    EvalConfig many = one;
    many.threads = 4;
    const auto a = evaluate_all(params, ds, Split::Train, one).to_json().dump();
    const auto b = evaluate_all(params, ds, Split::Train, one).to_json().dump();
    const auto c = evaluate_all(params, ds, Split::Train, many).to_json().dump();
    EXPECT_EQ(a, b);
    EXPECT_EQ(a, c);
}

TEST(EvaluateAll, RejectsDimensionMismatch) {
    const auto ds = generate(fixtures::small_config());
    Rng rng(12);
    const auto params = init_params({ds.input_dim + 1, 8, 4, 4}, rng);
    EXPECT_THROW(evaluate_all(params, ds, Split::Test), DimensionMismatch);
}

TEST(Export, RowsAreDeterministicAndMatchForward) {
    const auto ds = generate(fixtures::small_config());
    Rng rng(13);
    const auto params = init_params({ds.input_dim, 16, 6, 4}, rng);
    const auto dir = fixtures::scratch_dir("export");
    const auto a = (dir / "a.csv").string(), b = (dir / "b.csv").string();
    const auto rows = export_embeddings(params, ds, Split::Test, a);
    export_embeddings(params, ds, Split::Test, b);
    EXPECT_EQ(rows, 2 * ds.test_ids.size() * 5);

    auto slurp = [](const std::string& p) {
        std::ifstream is(p);
        std::stringstream ss;
        ss << is.rdbuf();
        return ss.str();
    };
    EXPECT_EQ(slurp(a), slurp(b));

    std::ifstream is(a);
    std::string line;
    std::getline(is, line);
    EXPECT_EQ(line, "identity,modality,e0,e1,e2,e3,e4,e5");
    std::getline(is, line);  // first face sample of the first test identity
    const auto first = ds.test_ids.front() * 5;
    const auto [emb, cache] = forward(params, gather_features(ds.face_samples, {first}, ds.input_dim), Modality::Face);
    std::stringstream fields(line);
    std::string tok;
    std::getline(fields, tok, ',');
    EXPECT_EQ(std::stoul(tok), ds.test_ids.front());
    std::getline(fields, tok, ',');
    EXPECT_EQ(tok, "face");
    for (Eigen::Index c = 0; c < emb.cols(); ++c) {
        std::getline(fields, tok, ',');
        // Batched and single-row products may differ in the last bit.
        EXPECT_NEAR(std::stod(tok), emb(0, c), 1e-12);
    }
}
