#pragma once

#include <cstdint>
#include <vector>

#include "voxseg/agglo.hpp"
#include "voxseg/metricgraph.hpp"
#include "voxseg/random.hpp"
#include "voxseg/synthgen.hpp"
#include "voxseg/volume.hpp"

namespace voxseg::testing {

/// Uniform labels in [0, k] on a grid of `shape`.
inline Volume random_labels(Vec3 shape, std::uint32_t k, std::uint64_t seed) {
    rng::Stream s(seed);
    const VoxelGeometry g(shape);
    std::vector<std::uint32_t> v(std::size_t(g.voxel_count()));
    for (auto& x : v) x = std::uint32_t(s.below(k + 1));
    return make_labels(g, std::move(v));
}

/// Labels grown from a few seeds so that segments are spatially coherent blobs.
inline Volume blob_labels(Vec3 shape, std::uint32_t k, std::uint64_t seed, double background = 0.2) {
    rng::Stream s(seed);
    const VoxelGeometry g(shape);
    std::vector<Vec3> seeds;
    for (std::uint32_t i = 0; i < k; ++i)
        seeds.push_back({int(s.below(std::uint64_t(shape.x))), int(s.below(std::uint64_t(shape.y))),
                         int(s.below(std::uint64_t(shape.z)))});
    std::vector<std::uint32_t> v(std::size_t(g.voxel_count()));
    for (std::int64_t i = 0; i < g.voxel_count(); ++i) {
        const Vec3 p = g.delinearize(i);
        int best = 1 << 30;
        std::uint32_t id = 0;
        for (std::uint32_t j = 0; j < k; ++j) {
            const Vec3 d = p - seeds[j];
            const int dist = std::abs(d.x) + std::abs(d.y) + 2 * std::abs(d.z);
            if (dist < best) best = dist, id = j + 1;
        }
        v[std::size_t(i)] = s.uniform() < background ? 0 : id;
    }
    return make_labels(g, std::move(v));
}

inline Volume random_floats(Vec3 shape, int channels, std::uint64_t seed, double lo = -1.0, double hi = 1.0,
                            Vec3 origin = {}) {
    rng::Stream s(seed);
    const VoxelGeometry g(shape, origin);
    std::vector<float> v(std::size_t(channels) * std::size_t(g.voxel_count()));
    for (auto& x : v) x = float(s.uniform(lo, hi));
    return Volume(g, channels, std::move(v));
}

/// Random metric graph with the default edge set. Affinities are multiples of 1/`levels` (ties
/// happen often), `invalid_rate` of them are INVALID and `background_rate` of the voxels are not
/// nodes.
inline MetricGraph random_graph(Vec3 shape, std::uint64_t seed, int levels = 256, double invalid_rate = 0.05,
                                double background_rate = 0.1) {
    rng::Stream s(seed);
    const VoxelGeometry g(shape);
    auto edges = default_edges();
    const auto n = std::size_t(g.voxel_count());
    std::vector<float> aff(edges.size() * n);
    for (std::size_t c = 0; c < edges.size(); ++c)
        for (std::size_t i = 0; i < n; ++i) {
            const Vec3 q = g.delinearize(std::int64_t(i)) + edges[c].offset;
            float a = float(double(s.below(std::uint64_t(levels) + 1)) / levels);
            if (s.uniform() < invalid_rate || !g.in_bounds(q)) a = kInvalidAffinity;
            aff[c * n + i] = a;
        }
    std::vector<std::uint8_t> fg(n);
    for (auto& f : fg) f = s.uniform() < background_rate ? 0 : 1;
    return MetricGraph(g, std::move(edges), std::move(aff), std::move(fg));
}

/// Same graph with every affinity replaced by f(affinity, polarity).
template <class F>
MetricGraph map_affinities(const MetricGraph& g, F f) {
    std::vector<float> aff(g.affinities().begin(), g.affinities().end());
    const auto n = std::size_t(g.geometry().voxel_count());
    for (std::size_t c = 0; c < g.edges().size(); ++c)
        for (std::size_t i = 0; i < n; ++i)
            if (!is_invalid(aff[c * n + i])) aff[c * n + i] = f(aff[c * n + i], g.edges()[c].polarity);
    return MetricGraph(g.geometry(), g.edges(), std::move(aff), g.node_mask());
}

/// Number of distinct nonzero labels.
inline std::size_t segment_count(const Volume& labels) {
    auto v = label_values(labels);
    std::sort(v.begin(), v.end());
    v.erase(std::unique(v.begin(), v.end()), v.end());
    return v.size() - (!v.empty() && v.front() == 0 ? 1 : 0);
}

/// Two straight bars along x (truth ids 1 and 2) joined by two face bridges; `blurred_bridge`
/// receives a high nearest-neighbour affinity in the graph so that the pair becomes a candidate.
struct DecoyFixture {
    Volume truth;
    Volume embeddings;
    MetricGraph graph;
    Vec3 bridge_a;  // global voxel of the blurred bridge
    Vec3 bridge_b;
};

inline DecoyFixture decoy_fixture(std::uint64_t seed, double sigma, double bridge_affinity = 0.6) {
    const Vec3 shape{48, 16, 8};
    const VoxelGeometry g(shape);
    std::vector<std::uint32_t> v(std::size_t(g.voxel_count()), 0);
    auto set = [&](Vec3 p, std::uint32_t id) { v[std::size_t(g.linear_index(p))] = id; };
    for (int x = 4; x < 44; ++x)
        for (int z = 2; z < 6; ++z) {
            for (int y = 3; y < 7; ++y) set({x, y, z}, 1);
            for (int y = 8; y < 12; ++y) set({x, y, z}, 2);
        }
    // Bridges: the row y = 7 between the bars, filled for a few x, split between both objects.
    DecoyFixture f;
    f.bridge_a = {12, 7, 3};
    f.bridge_b = {34, 7, 3};
    for (Vec3 b : {f.bridge_a, f.bridge_b})
        for (int dx = -1; dx <= 1; ++dx)
            for (int z = 2; z < 6; ++z) set({b.x + dx, 7, z}, 1);
    f.truth = make_labels(g, std::move(v));
    EmbeddingSpec es;
    es.sigma = sigma;
    es.seed = seed;
    f.embeddings = generate_embeddings(f.truth, es);
    MetricGraph raw = build_metric_graph(f.embeddings, default_edges(), es.delta_d);
    std::vector<float> aff(raw.affinities().begin(), raw.affinities().end());
    const auto n = std::size_t(g.voxel_count());
    // Channel 1 is the -y nearest neighbour: voxel (x, 8, z) against (x, 7, z).
    for (int dx = -1; dx <= 1; ++dx)
        for (int z = 2; z < 6; ++z)
            aff[1 * n + std::size_t(g.linear_index({f.bridge_a.x + dx, 8, z}))] = float(bridge_affinity);
    f.graph = MetricGraph(g, raw.edges(), std::move(aff));
    return f;
}

}  // namespace voxseg::testing
