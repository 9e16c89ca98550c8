#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "doctest.h"
#include "flowfoley/errors.hpp"
#include "flowfoley/hash.hpp"
#include "flowfoley/synthdata.hpp"
#include "flowfoley/tensor_io.hpp"

using namespace ff;
using namespace ff::synth;

namespace {

WorldConfig quiet_world(std::uint64_t seed, float sigma = 0.0f) {
    WorldConfig w;
    w.seed = seed;
    w.noise_sigma = sigma;
    return w;
}

std::string dataset_bytes(const Dataset& ds) {
    std::ostringstream os(std::ios::binary);
    write_dataset(ds, os);
    return os.str();
}

}  // namespace

TEST_SUITE_BEGIN("synthdata");

TEST_CASE("script validation enforces the world's limits") {
    WorldConfig w = quiet_world(1);
    EventScript s;
    CHECK_THROWS_AS(s.validate(w), ValidationError);  // empty
    s.events.push_back({99, 0.1f, 0.2f, 1.0f});
    CHECK_THROWS_AS(s.validate(w), ValidationError);  // type outside vocab
    s.events[0] = {1, 0.8f, 0.5f, 1.0f};
    CHECK_THROWS_AS(s.validate(w), ValidationError);  // extends past clip end
    s.events[0] = {1, 0.2f, 0.3f, 1.0f};
    CHECK_NOTHROW(s.validate(w));
    s.events.push_back({0, 0.1f, 0.2f, 1.0f});
    s.events.push_back({0, 0.4f, 0.2f, 1.0f});
    s.events.push_back({0, 0.6f, 0.2f, 1.0f});
    CHECK_THROWS_AS(s.validate(w), ValidationError);  // too many events
    CHECK(s.clip_seconds == doctest::Approx(9.1f));   // matches the corpus clip length
}

TEST_CASE("render: zero amplitude in a noiseless world leaves only the ambient") {
    WorldConfig w = quiet_world(2);
    EventScript s;
    s.events.push_back({0, 0.2f, 0.4f, 0.0f});
    Rng rng(3);
    DatasetRecord rec = render_record(s, w, rng);
    CHECK(rec.x1 == ambient_component(w));
}

TEST_CASE("render: disjoint events add independently") {
    WorldConfig w = quiet_world(4);
    EventScript s;
    s.events.push_back({0, 0.05f, 0.2f, 1.2f});  // active in the first frames
    s.events.push_back({1, 0.7f, 0.25f, 0.9f});  // active near the end
    Rng rng(5);
    DatasetRecord rec = render_record(s, w, rng);
    REQUIRE(rec.event_components.size() == 2);

    for (std::int64_t f = 0; f < w.latent_len; ++f) {
        bool b_active = false;
        for (std::int64_t c = 0; c < w.latent_dim; ++c) {
            b_active = b_active || rec.event_components[1].at(f, c) != 0.0f;
        }
        if (b_active) continue;
        // Frames without the second event: x1 == component A + ambient.
        for (std::int64_t c = 0; c < w.latent_dim; ++c) {
            float manual = rec.event_components[0].at(f, c) + rec.ambient.at(f, c);
            CHECK(rec.x1.at(f, c) == doctest::Approx(manual).epsilon(1e-7));
        }
    }
}

TEST_CASE("render: decomposition reassembles x1 bit-exactly") {
    WorldConfig w = quiet_world(6, /*sigma=*/0.1f);
    EventScript s;
    s.events.push_back({0, 0.1f, 0.3f, 1.0f});
    s.events.push_back({2, 0.5f, 0.3f, 1.4f});
    Rng rng(7);
    DatasetRecord rec = render_record(s, w, rng);

    Tensor sum = Tensor::zeros({w.latent_len, w.latent_dim});
    for (const Tensor& comp : rec.event_components) {
        for (std::int64_t i = 0; i < sum.numel(); ++i) sum[i] += comp[i];
    }
    for (std::int64_t i = 0; i < sum.numel(); ++i) sum[i] += rec.ambient[i];
    for (std::int64_t i = 0; i < sum.numel(); ++i) sum[i] += rec.noise[i];
    CHECK(sum == rec.x1);
}

TEST_CASE("render: identical seeds give identical bytes, fresh seeds differ") {
    EventScript s;
    s.events.push_back({1, 0.3f, 0.3f, 1.1f});

    std::set<std::string> hashes;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        WorldConfig w = quiet_world(seed);
        Rng rng(100 + seed);
        Dataset ds{w, {render_record(s, w, rng)}};
        hashes.insert(sha256_hex(dataset_bytes(ds)));
    }
    CHECK(hashes.size() == 10);  // distinct worlds

    WorldConfig w = quiet_world(42);
    Rng r1(9), r2(9);
    Dataset a{w, {render_record(s, w, r1)}};
    Dataset b{w, {render_record(s, w, r2)}};
    CHECK(sha256_hex(dataset_bytes(a)) == sha256_hex(dataset_bytes(b)));
}

TEST_CASE("render: conditional identifiability at sigma zero") {
    WorldConfig w = quiet_world(8);
    EventScript s;
    s.events.push_back({0, 0.25f, 0.4f, 1.0f});
    Rng r1(10), r2(11);
    DatasetRecord a = render_record(s, w, r1);
    DatasetRecord b = render_record(s, w, r2);  // different rng, sigma 0
    CHECK(a.x1 == b.x1);

    EventScript other = s;
    other.events[0].type = 1;
    DatasetRecord c = render_record(other, w, r1);
    CHECK(l2_distance(a.x1, c.x1) > 0.0);
}

TEST_CASE("cot tokens: one per event, jitter varies with the stream") {
    WorldConfig w = quiet_world(12);
    EventScript s;
    s.events.push_back({0, 0.1f, 0.2f, 1.0f});
    s.events.push_back({1, 0.5f, 0.3f, 0.7f});
    Rng r1(13), r2(14);
    Tensor t1 = cot_for_script(w, s, r1);
    Tensor t2 = cot_for_script(w, s, r2);
    CHECK(t1.shape() == std::vector<std::int64_t>{2, w.text_dim});
    CHECK(l2_distance(t1, t2) > 0.0);           // jitter differs
    CHECK(l2_distance(t1, t2) < 0.1 * l2_norm(t1) + 1.0);  // but stays small
}

TEST_CASE("roi: isolates the designated event's video contribution") {
    WorldConfig w = quiet_world(15);
    EventScript s;
    s.events.push_back({0, 0.05f, 0.2f, 1.0f});
    s.events.push_back({1, 0.7f, 0.2f, 1.0f});
    Tensor roi0 = roi_for_event(w, s, 0);
    Tensor roi1 = roi_for_event(w, s, 1);
    CHECK(l2_distance(roi0, roi1) > 0.0);
    CHECK_THROWS_AS(roi_for_event(w, s, 5), ContractError);

    Rng rng(16);
    DatasetRecord rec = render_record(s, w, rng);
    Tensor sum = roi0;
    for (std::int64_t i = 0; i < sum.numel(); ++i) sum[i] += roi1[i];
    CHECK(max_abs_diff(sum, *rec.bundle.video_feats) < 1e-6f);  // two events cover the video track
}

TEST_CASE("difficulty: tertile sizes follow the floor rule") {
    auto make_scores = [](int n) {
        std::vector<RecordScores> scores;
        for (int i = 0; i < n; ++i) {
            RecordScores s;
            s.semantic = 0.9f - 0.01f * static_cast<float>(i);
            s.clap = 0.8f;
            s.desync = 0.1f;
            s.n_events = 1;
            scores.push_back(s);
        }
        return scores;
    };
    for (int n : {9, 10, 100}) {
        auto labels = assign_difficulty(make_scores(n));
        std::int64_t easy = std::count(labels.begin(), labels.end(), Difficulty::easy);
        std::int64_t medium = std::count(labels.begin(), labels.end(), Difficulty::medium);
        std::int64_t hard = std::count(labels.begin(), labels.end(), Difficulty::hard);
        CHECK(easy == n / 3);
        CHECK(medium == n / 3);
        CHECK(hard == n - 2 * (n / 3));
    }
    CHECK_THROWS_AS(assign_difficulty(std::vector<RecordScores>(2)), ContractError);
}

TEST_CASE("difficulty: band-aligned record lands in easy") {
    // A population straddling the published score bands: three records per
    // tier, with the probe record sitting inside every easy band.
    std::vector<RecordScores> scores = {
        {0.35f, 0.45f, 0.20f, 1},  // the probe: easy on all four dimensions
        {0.33f, 0.42f, 0.25f, 1},
        {0.31f, 0.41f, 0.28f, 1},
        {0.27f, 0.35f, 0.45f, 2},
        {0.26f, 0.33f, 0.50f, 2},
        {0.28f, 0.36f, 0.40f, 3},
        {0.22f, 0.25f, 0.70f, 4},
        {0.21f, 0.22f, 0.80f, 5},
        {0.23f, 0.28f, 0.65f, 4},
    };
    auto labels = assign_difficulty(scores);
    CHECK(labels[0] == Difficulty::easy);
    CHECK(labels[7] == Difficulty::hard);

    BandLabels bands = score_bands(scores[0]);
    CHECK(bands.semantic == Difficulty::easy);
    CHECK(bands.clap == Difficulty::easy);
    CHECK(bands.temporal == Difficulty::easy);
    CHECK(bands.complexity == Difficulty::easy);
    BandLabels hard_bands = score_bands(scores[7]);
    CHECK(hard_bands.semantic == Difficulty::hard);
    CHECK(hard_bands.clap == Difficulty::hard);
    CHECK(hard_bands.temporal == Difficulty::hard);
    CHECK(hard_bands.complexity == Difficulty::hard);
}

TEST_CASE("difficulty: permutation consistency with the index tie-break") {
    std::vector<RecordScores> scores;
    for (int i = 0; i < 9; ++i) {
        RecordScores s;
        s.semantic = 0.5f - 0.05f * static_cast<float>(i);
        s.clap = 0.5f;
        s.desync = 0.2f;
        s.n_events = 1;
        scores.push_back(s);
    }
    auto labels = assign_difficulty(scores);
    std::vector<RecordScores> shuffled = {scores[4], scores[1], scores[8], scores[0], scores[6],
                                          scores[2], scores[5], scores[7], scores[3]};
    auto labels2 = assign_difficulty(shuffled);
    std::vector<int> order = {4, 1, 8, 0, 6, 2, 5, 7, 3};
    for (std::size_t i = 0; i < order.size(); ++i) {
        CHECK(labels2[i] == labels[static_cast<std::size_t>(order[i])]);
    }

    // Ties resolve by record index: identical scores get labels in order.
    std::vector<RecordScores> tied(9, scores[0]);
    auto tied_labels = assign_difficulty(tied);
    for (int i = 0; i < 3; ++i) CHECK(tied_labels[static_cast<std::size_t>(i)] == Difficulty::easy);
    for (int i = 3; i < 6; ++i) CHECK(tied_labels[static_cast<std::size_t>(i)] == Difficulty::medium);
    for (int i = 6; i < 9; ++i) CHECK(tied_labels[static_cast<std::size_t>(i)] == Difficulty::hard);
}

TEST_CASE("qc filter: keep, regenerate, drop") {
    WorldConfig w = quiet_world(17);
    EventScript s;
    s.events.push_back({0, 0.1f, 0.2f, 1.0f});
    Rng rng(18);
    DatasetRecord base = render_record(s, w, rng);

    auto with_clap = [&](float clap) {
        DatasetRecord r = base;
        r.scores.clap = clap;
        return r;
    };
    auto regen_to = [&](float clap) {
        return [&, clap](const DatasetRecord& r) {
            DatasetRecord out = r;
            out.scores.clap = clap;
            return out;
        };
    };

    {
        QcResult res = qc_filter({with_clap(0.5f)}, 0.2f, regen_to(0.0f));
        CHECK(res.ledger.kept == 1);
        CHECK(res.ledger.regenerated == 0);
        CHECK(res.ledger.dropped == 0);
    }
    {
        QcResult res = qc_filter({with_clap(0.15f)}, 0.2f, regen_to(0.25f));
        CHECK(res.ledger.kept == 1);
        CHECK(res.ledger.regenerated == 1);
        CHECK(res.ledger.dropped == 0);
        CHECK(res.kept[0].scores.clap == doctest::Approx(0.25f));
    }
    {
        QcResult res = qc_filter({with_clap(0.10f)}, 0.2f, regen_to(0.12f));
        CHECK(res.ledger.kept == 0);
        CHECK(res.ledger.regenerated == 1);
        CHECK(res.ledger.dropped == 1);
        CHECK(res.ledger.total() == 1);
    }
    {
        std::vector<DatasetRecord> batch = {with_clap(0.5f), with_clap(0.15f), with_clap(0.1f),
                                            with_clap(0.9f)};
        QcResult res = qc_filter(batch, 0.2f, regen_to(0.21f));
        CHECK(res.ledger.total() == 4);
        CHECK(res.ledger.kept + res.ledger.dropped == 4);
        CHECK(res.ledger.regenerated == 2);
    }
    CHECK_THROWS_AS(qc_filter({with_clap(0.5f)}, 0.0f, regen_to(0.5f)), ContractError);
}

TEST_CASE("qc regeneration rescores the clap dimension") {
    WorldConfig w = quiet_world(19, 0.05f);
    EventScript s;
    s.events.push_back({0, 0.2f, 0.3f, 1.0f});
    Rng rng(20);
    DatasetRecord rec = render_record(s, w, rng);
    Rng regen_rng(21);
    DatasetRecord again = regenerate_cot(rec, w, regen_rng);
    CHECK(l2_distance(*again.bundle.cot_tokens, *rec.bundle.cot_tokens) > 0.0);
    CHECK(again.x1 == rec.x1);
    CHECK(again.scores.clap != rec.scores.clap);
    CHECK(again.scores.semantic == rec.scores.semantic);
}

TEST_CASE("human audit: ceiling counts and no duplicates") {
    Rng rng(22);
    CHECK(human_audit_sample(100, 0.05f, rng).size() == 5);
    CHECK(human_audit_sample(10, 0.05f, rng).size() == 1);
    CHECK(human_audit_sample(0, 0.05f, rng).empty());
    CHECK_THROWS_AS(human_audit_sample(10, 0.0f, rng), ContractError);

    for (int trial = 0; trial < 1000; ++trial) {
        auto picks = human_audit_sample(20, 0.3f, rng);
        std::set<std::size_t> uniq(picks.begin(), picks.end());
        CHECK(uniq.size() == picks.size());
        for (std::size_t p : picks) CHECK(p < 20);
    }
}

TEST_CASE("pairing surrogate: identical types are never pairable") {
    WorldConfig w = quiet_world(23);
    CHECK_FALSE(types_pairable(w, 1, 1));  // cosine 1 with itself
    int pairable = 0;
    for (std::int64_t a = 0; a < w.vocab; ++a)
        for (std::int64_t b = a + 1; b < w.vocab; ++b) pairable += types_pairable(w, a, b) ? 1 : 0;
    CHECK(pairable > 0);  // random signatures in R^4 are mostly distinct
}

TEST_CASE("dataset file round-trips byte-identically") {
    WorldConfig w = quiet_world(24, 0.02f);
    Rng rng(25);
    Dataset ds;
    ds.world = w;
    for (int i = 0; i < 4; ++i) {
        EventScript s = random_script(w, rng);
        ds.records.push_back(render_record(s, w, rng));
    }
    ds.records[1].difficulty = Difficulty::hard;

    std::string bytes = dataset_bytes(ds);
    std::istringstream is(bytes, std::ios::binary);
    Dataset back = read_dataset(is);
    REQUIRE(back.records.size() == ds.records.size());
    CHECK(back.world.seed == w.seed);
    CHECK(back.records[1].difficulty == Difficulty::hard);
    CHECK(back.records[2].x1 == ds.records[2].x1);
    CHECK(back.records[2].bundle.cot_tokens == ds.records[2].bundle.cot_tokens);
    CHECK(dataset_bytes(back) == bytes);

    std::string corrupt = bytes;
    corrupt[1] = 'X';
    std::istringstream bad(corrupt, std::ios::binary);
    CHECK_THROWS_AS(read_dataset(bad), FormatError);
}

TEST_CASE("record scores are deterministic functions of the world") {
    WorldConfig w = quiet_world(26, 0.05f);
    EventScript s;
    s.events.push_back({0, 0.3f, 0.3f, 1.0f});
    Rng r1(27), r2(27);
    DatasetRecord a = render_record(s, w, r1);
    DatasetRecord b = render_record(s, w, r2);
    CHECK(a.scores.semantic == b.scores.semantic);
    CHECK(a.scores.clap == b.scores.clap);
    CHECK(a.scores.desync == b.scores.desync);
    CHECK(a.scores.n_events == 1);
    CHECK(a.scores.clap >= 0.0f);
    CHECK(a.scores.clap <= 1.0f);
}

TEST_SUITE_END();
