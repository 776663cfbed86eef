#include <doctest.h>

#include <chrono>
#include <cmath>

#include "fixtures.hpp"
#include "voxseg/mws.hpp"
#include "voxseg/synthgen.hpp"

using namespace voxseg;
using voxseg::testing::map_affinities;
using voxseg::testing::random_graph;

namespace {

std::vector<std::uint32_t> labels_of(const Volume& v) {
    const auto s = v.values<std::uint32_t>();
    return {s.begin(), s.end()};
}

// Path 0 - 1 - 2 along x: attractive (-1,0,0), repulsive (-2,0,0).
MetricGraph path_graph(float a01, float a12, float a02) {
    const VoxelGeometry g({3, 1, 1});
    std::vector<EdgeSpec> e{{{-1, 0, 0}, Polarity::attractive}, {{-2, 0, 0}, Polarity::repulsive}};
    const float nan = kInvalidAffinity;
    return MetricGraph(g, e, {nan, a01, a12, nan, nan, a02});
}

// Cubes every priority: attractive a -> a^3, repulsive a -> 1 - (1 - a)^3. Exact for k/256.
MetricGraph cube_priorities(const MetricGraph& g) {
    return map_affinities(g, [](float a, Polarity p) {
        const double x = p == Polarity::attractive ? double(a) : 1.0 - double(a);
        const double y = x * x * x;
        return float(p == Polarity::attractive ? y : 1.0 - y);
    });
}

}  // namespace

TEST_CASE("hand trace on a three-node path") {
    const auto g = path_graph(0.9f, 0.8f, 0.05f);
    MwsTrace trace;
    const auto seg = mutex_watershed(g, &trace);
    CHECK(labels_of(seg) == std::vector<std::uint32_t>{1, 1, 2});
    REQUIRE(trace.mutex_edges.size() == 1);
    CHECK(trace.mutex_edges[0] == std::pair<std::int64_t, std::int64_t>{2, 0});
    CHECK(labels_of(mutex_watershed_reference(g)) == labels_of(seg));

    // Edge order: priority descending, attractive before repulsive on ties.
    const auto edges = enumerate_signed_edges(g);
    REQUIRE(edges.size() == 3);
    std::vector<SignedEdge> sorted = edges;
    std::sort(sorted.begin(), sorted.end(), precedes);
    CHECK(sorted[0].polarity == Polarity::repulsive);
    CHECK(sorted[0].priority == doctest::Approx(0.95));
    CHECK(sorted[1].priority == 0.9f);
    CHECK(sorted[2].priority == 0.8f);
    const SignedEdge att{0, 1, 0.5f, Polarity::attractive, 0}, rep{0, 2, 0.5f, Polarity::repulsive, 1};
    CHECK(precedes(att, rep));
    CHECK_FALSE(precedes(rep, att));
}

TEST_CASE("without repulsion segments are attractive components") {
    const auto g = path_graph(0.3f, 0.0f, kInvalidAffinity);
    // a(1,2) = 0 has priority 0 but is still attractive and merges.
    CHECK(labels_of(mutex_watershed(g)) == std::vector<std::uint32_t>{1, 1, 1});
    const auto h = path_graph(0.3f, kInvalidAffinity, kInvalidAffinity);
    CHECK(labels_of(mutex_watershed(h)) == std::vector<std::uint32_t>{1, 1, 2});
}

TEST_CASE("empty foreground") {
    auto g = random_graph({4, 4, 3}, 1, 256, 0.0, 1.0);
    CHECK(labels_of(mutex_watershed(g)) == std::vector<std::uint32_t>(48, 0));
    CHECK(labels_of(mutex_watershed_reference(g)) == std::vector<std::uint32_t>(48, 0));
}

TEST_CASE("ideal two-object graph recovers the truth") {
    SynthSpec s;
    s.shape = {32, 32, 10};
    s.objects = 2;
    s.seed = 4;
    const auto gt = generate_ground_truth(s);
    EmbeddingSpec es;
    es.seed = 1;
    const auto g = restrict_foreground(build_metric_graph(generate_embeddings(gt, es), default_edges(), 1.5),
                                       generate_background_mask(gt.labels, 0.0, 0).mask, MaskParams{});
    const auto seg = mutex_watershed(g);
    CHECK(same_partition(seg, gt.labels));
    CHECK(same_partition(mutex_watershed_reference(g), gt.labels));
}

TEST_CASE("optimized and reference implementations agree on random graphs") {
    int checked = 0;
    for (std::uint64_t seed = 1; seed <= 200; ++seed) {
        rng::Stream s(seed * 7919);
        const Vec3 shape{2 + int(s.below(5)), 2 + int(s.below(5)), 1 + int(s.below(6))};
        const int levels = seed % 3 == 0 ? 4 : 256;  // coarse levels force many ties
        const auto g = random_graph(shape, seed, levels, 0.05, 0.1);
        MwsTrace ta, tb;
        const auto a = mutex_watershed(g, &ta);
        const auto b = mutex_watershed_reference(g, &tb);
        CHECK(a == b);
        CHECK(ta.mutex_edges == tb.mutex_edges);
        ++checked;
    }
    CHECK(checked == 200);
}

TEST_CASE("strictly increasing priority transforms keep the partition") {
    for (std::uint64_t seed = 1; seed <= 200; ++seed) {
        const auto g = random_graph({6, 6, 6}, seed + 1000);
        const auto t = cube_priorities(g);
        CHECK(same_partition(mutex_watershed(g), mutex_watershed(t)));
    }
}

TEST_CASE("recorded mutex edges end up in different segments") {
    for (std::uint64_t seed = 1; seed <= 50; ++seed) {
        const auto g = random_graph({6, 6, 4}, seed + 5000);
        MwsTrace trace;
        const auto seg = mutex_watershed(g, &trace);
        const auto v = seg.values<std::uint32_t>();
        for (const auto& [u, w] : trace.mutex_edges) CHECK(v[std::size_t(u)] != v[std::size_t(w)]);
        // Labels are dense in first-visit order.
        std::uint32_t next = 1;
        for (auto x : v) {
            if (!x) continue;
            CHECK(x <= next);
            if (x == next) ++next;
        }
        CHECK(compact_labels(seg) == seg);
    }
}

TEST_CASE("output is deterministic") {
    const auto g = random_graph({10, 10, 6}, 77);
    const auto a = mutex_watershed(g);
    CHECK(mutex_watershed(g) == a);
    CHECK(encode_volume(mutex_watershed(g)) == encode_volume(a));
}

TEST_CASE("label helpers") {
    const VoxelGeometry g({5, 1, 1});
    const auto a = make_labels(g, {7, 7, 0, 3, 9});
    CHECK(labels_of(compact_labels(a)) == std::vector<std::uint32_t>{1, 1, 0, 2, 3});
    CHECK(same_partition(a, make_labels(g, {2, 2, 0, 5, 1})));
    CHECK_FALSE(same_partition(a, make_labels(g, {2, 2, 0, 5, 5})));
    CHECK_FALSE(same_partition(a, make_labels(g, {2, 2, 4, 5, 1})));
}
