#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "fixtures.hpp"
#include "voxseg/metricgraph.hpp"
#include "voxseg/pipeline.hpp"
#include "voxseg/synthgen.hpp"

using namespace voxseg;
using voxseg::testing::random_floats;

namespace {

const EdgeSpec kLeft{{-1, 0, 0}, Polarity::attractive};

MetricGraph constant_patch(Box box, float value, std::vector<EdgeSpec> edges = {kLeft}) {
    const VoxelGeometry g(box.shape(), box.lo);
    return MetricGraph(g, edges, std::vector<float>(edges.size() * std::size_t(g.voxel_count()), value));
}

}  // namespace

TEST_CASE("affinity values") {
    const std::vector<double> a{0.0, 0.0}, b{1.0, 0.5}, c{2.0, 1.0}, d{-2, 3};
    CHECK(affinity(a, a, 1.5) == 1.0);
    CHECK(affinity(a, c, 1.5) == 0.0);
    CHECK(affinity(a, b, 1.5) == doctest::Approx(0.25).epsilon(1e-12));
    CHECK(affinity(a, d, 1.5) == 0.0);
    CHECK(affinity(b, d, 1.5) == affinity(d, b, 1.5));
    CHECK_THROWS(affinity(a, std::vector<double>{1.0}, 1.5));

    // Strictly decreasing on [0, 2 delta), zero beyond.
    double prev = 2.0;
    for (int k = 0; k <= 40; ++k) {
        const std::vector<double> x{0.1 * k, 0.0};
        const double v = affinity(a, x, 1.5);
        if (0.1 * k < 3.0 - 1e-9) CHECK(v < prev);
        else CHECK(v == 0.0);
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
        prev = v;
    }
}

TEST_CASE("default edge set") {
    const auto e = default_edges();
    REQUIRE(e.size() == 12);
    for (int i = 0; i < 3; ++i) CHECK(e[std::size_t(i)].polarity == Polarity::attractive);
    for (int i = 3; i < 12; ++i) CHECK(e[std::size_t(i)].polarity == Polarity::repulsive);
    CHECK(e[0].offset == Vec3{-1, 0, 0});
    CHECK(e[1].offset == Vec3{0, -1, 0});
    CHECK(e[2].offset == Vec3{0, 0, -1});
    CHECK(parse_edges("default12") == e);
    CHECK(parse_edges(edges_to_json(e)) == e);
    CHECK(parse_edges(R"([{"offset":[0,0,-3],"polarity":"repulsive"}])") ==
          std::vector<EdgeSpec>{{{0, 0, -3}, Polarity::repulsive}});
    CHECK_THROWS(parse_edges(R"([{"offset":[0,0],"polarity":"repulsive"}])"));
}

TEST_CASE("metric graph matches a per-edge loop") {
    const auto emb = random_floats({7, 6, 5}, 3, 8, -1, 1, {2, 0, -3});
    const auto edges = default_edges();
    const auto g = build_metric_graph(emb, edges, 1.5);
    const auto& geo = emb.geometry();
    for (int c = 0; c < 12; ++c)
        for (std::int64_t i = 0; i < geo.voxel_count(); ++i) {
            const Vec3 p = geo.delinearize(i), q = p + edges[std::size_t(c)].offset;
            const float got = g.affinity(c, i);
            if (!geo.in_bounds(q)) {
                CHECK(is_invalid(got));
                continue;
            }
            std::vector<float> x, y;
            for (int d = 0; d < 3; ++d) x.push_back(emb.at<float>(d, p)), y.push_back(emb.at<float>(d, q));
            CHECK(got == float(affinity(std::span<const float>(x), std::span<const float>(y), 1.5)));
        }
    CHECK_THROWS(build_metric_graph(emb, {}, 1.5));

    const VoxelGeometry cg({4, 4, 4});
    const Volume constant(cg, 2, std::vector<float>(128, 0.3f));
    const auto gc = build_metric_graph(constant, edges, 1.5);
    for (float a : gc.affinities()) CHECK((is_invalid(a) || a == 1.0f));
}

TEST_CASE("ideal two-object embeddings give 0 across and 1 within") {
    SynthSpec s;
    s.shape = {24, 24, 8};
    s.objects = 2;
    s.seed = 2;
    const auto gt = generate_ground_truth(s);
    EmbeddingSpec es;
    es.min_separation = 3.0;
    es.seed = 5;
    const auto g = build_metric_graph(generate_embeddings(gt, es), default_edges(), 1.5);
    const auto lab = gt.labels.values<std::uint32_t>();
    const auto& geo = gt.labels.geometry();
    for (int c = 0; c < 12; ++c)
        for (std::int64_t i = 0; i < geo.voxel_count(); ++i) {
            const Vec3 q = geo.delinearize(i) + g.edges()[std::size_t(c)].offset;
            if (!geo.in_bounds(q)) continue;
            const auto a = lab[std::size_t(i)], b = lab[std::size_t(geo.linear_index(q))];
            if (a && b) CHECK(g.affinity(c, i) == (a == b ? 1.0f : 0.0f));
        }
}

TEST_CASE("foreground restriction") {
    const auto emb = random_floats({6, 6, 4}, 2, 3);
    const auto g = build_metric_graph(emb, default_edges(), 1.5);
    const VoxelGeometry& geo = emb.geometry();
    const MaskParams mp;
    const auto n = std::size_t(geo.voxel_count());
    CHECK(restrict_foreground(g, Volume(geo, 1, std::vector<float>(n, 0.0f)), mp).affinities().size() == g.affinities().size());
    const auto unchanged = restrict_foreground(g, Volume(geo, 1, std::vector<float>(n, 0.0f)), mp);
    CHECK(std::equal(unchanged.affinities().begin(), unchanged.affinities().end(), g.affinities().begin(),
                     [](float a, float b) { return (is_invalid(a) && is_invalid(b)) || a == b; }));
    const auto none = restrict_foreground(g, Volume(geo, 1, std::vector<float>(n, 1.0f)), mp);
    for (float a : none.affinities()) CHECK(is_invalid(a));
    CHECK_THROWS(restrict_foreground(g, Volume(VoxelGeometry({6, 6, 3}), 1, std::vector<float>(108, 0.0f)), mp));
    MaskParams bad;
    bad.theta_mask = 1.0;
    CHECK_THROWS(bad.validate());
}

TEST_CASE("synthetic mask invalidates exactly the edges touching background") {
    SynthSpec s;
    s.shape = {20, 20, 8};
    s.objects = 2;
    s.seed = 6;
    const auto gt = generate_ground_truth(s);
    EmbeddingSpec es;
    es.sigma = 0.05;
    const auto g = build_metric_graph(generate_embeddings(gt, es), default_edges(), 1.5);
    const auto mask = generate_background_mask(gt.labels, 0.0, 1).mask;
    const auto r = restrict_foreground(g, mask, MaskParams{});
    const auto lab = gt.labels.values<std::uint32_t>();
    const auto& geo = gt.labels.geometry();
    for (int c = 0; c < 12; ++c)
        for (std::int64_t i = 0; i < geo.voxel_count(); ++i) {
            const Vec3 q = geo.delinearize(i) + g.edges()[std::size_t(c)].offset;
            const bool touches_bg = !geo.in_bounds(q) || !lab[std::size_t(i)] || !lab[std::size_t(geo.linear_index(q))];
            CHECK(is_invalid(r.affinity(c, i)) == touches_bg);
            if (!touches_bg) CHECK(r.affinity(c, i) == g.affinity(c, i));
        }
    for (std::int64_t i = 0; i < geo.voxel_count(); ++i) CHECK(r.is_foreground(i) == (lab[std::size_t(i)] != 0));
    // Idempotent.
    CHECK(restrict_foreground(r, mask, MaskParams{}) == r);
}

TEST_CASE("blending") {
    const VoxelGeometry full({11, 3, 2});
    SUBCASE("single patch is the identity") {
        const auto emb = random_floats({11, 3, 2}, 2, 4);
        const auto g = build_metric_graph(emb, default_edges(), 1.5);
        CHECK(blend_patches(std::vector<MetricGraph>{g}, full) == g);
    }
    SUBCASE("identical constants blend exactly") {
        std::vector<MetricGraph> p{constant_patch({{0, 0, 0}, {8, 3, 2}}, 0.7f),
                                   constant_patch({{3, 0, 0}, {11, 3, 2}}, 0.7f)};
        const auto b = blend_patches(p, full);
        for (std::int64_t i = 0; i < full.voxel_count(); ++i) {
            if (full.delinearize(i).x == 0) CHECK(is_invalid(b.affinity(0, i)));
            else CHECK(b.affinity(0, i) == 0.7f);
        }
    }
    SUBCASE("equal weights average 0 and 1 to one half") {
        std::vector<MetricGraph> p{constant_patch({{0, 0, 0}, {8, 3, 2}}, 0.0f),
                                   constant_patch({{3, 0, 0}, {11, 3, 2}}, 1.0f)};
        CHECK(tent_weight({5, 1, 0}, {8, 3, 2}) == tent_weight({2, 1, 0}, {8, 3, 2}));
        const auto b = blend_patches(p, full);
        CHECK(std::abs(b.affinity(0, full.linear_index({5, 1, 0})) - 0.5) <= 1e-12);
        CHECK(b.affinity(0, full.linear_index({2, 1, 0})) == 0.0f);
        CHECK(b.affinity(0, full.linear_index({9, 1, 1})) == 1.0f);
        for (float a : b.affinities()) CHECK((is_invalid(a) || (a >= 0.0f && a <= 1.0f)));
    }
    SUBCASE("a gap in the layout is rejected") {
        std::vector<MetricGraph> p{constant_patch({{0, 0, 0}, {4, 3, 2}}, 0.5f),
                                   constant_patch({{6, 0, 0}, {11, 3, 2}}, 0.5f)};
        try {
            blend_patches(p, full);
            FAIL("expected a coverage error");
        } catch (const CoverageError& e) {
            CHECK(e.where().x >= 4);
            CHECK(e.where().x <= 6);
        }
        const std::vector<Box> boxes{{{0, 0, 0}, {4, 3, 2}}, {{6, 0, 0}, {11, 3, 2}}};
        CHECK(find_coverage_gap(boxes, full.extent()).value() == Vec3{4, 0, 0});
        const std::vector<Box> ok{{{0, 0, 0}, {6, 3, 2}}, {{5, 0, 0}, {11, 3, 2}}};
        CHECK_FALSE(find_coverage_gap(ok, full.extent()).has_value());
    }
    SUBCASE("invalid entries do not contribute") {
        auto a = constant_patch({{0, 0, 0}, {8, 3, 2}}, kInvalidAffinity);
        auto b = constant_patch({{3, 0, 0}, {11, 3, 2}}, 0.25f);
        const auto g = blend_patches(std::vector<MetricGraph>{a, b}, full);
        CHECK(g.affinity(0, full.linear_index({5, 0, 0})) == 0.25f);
        CHECK(is_invalid(g.affinity(0, full.linear_index({2, 0, 0}))));
    }
    SUBCASE("tent weights are positive and peak in the middle") {
        const Vec3 shape{8, 8, 4};
        CHECK(tent_weight({0, 0, 0}, shape) > 0);
        CHECK(tent_weight({3, 3, 1}, shape) > tent_weight({1, 3, 1}, shape));
        CHECK(tent_weight({3, 3, 1}, shape) == tent_weight({4, 4, 2}, shape));
    }
}

TEST_CASE("blending overlapping patch graphs of one embedding") {
    const auto emb = random_floats({20, 18, 6}, 3, 12);
    const auto edges = default_edges();
    const auto whole = build_metric_graph(emb, edges, 1.5);
    GraphBlender blender(emb.geometry(), edges);
    // 8-wide patches at 50% overlap step by 4 and cannot see the 5-voxel edges whole.
    GraphBlender narrow(emb.geometry(), edges);
    for (const auto& box : schedule_patches(emb.geometry().extent(), {8, 8, 6}, 0.5))
        narrow.add(build_metric_graph(crop(emb, box), edges, 1.5));
    CHECK_THROWS_AS(std::move(narrow).finish(), CoverageError);
    for (const auto& box : schedule_patches(emb.geometry().extent(), {12, 12, 6}, 0.5))
        blender.add(build_metric_graph(crop(emb, box), edges, 1.5));
    const auto blended = std::move(blender).finish();
    // Every patch sees the same embeddings, so every valid edge equals the whole-volume value.
    for (std::size_t k = 0; k < whole.affinities().size(); ++k) {
        const float a = whole.affinities()[k], b = blended.affinities()[k];
        CHECK(((is_invalid(a) && is_invalid(b)) || std::abs(a - b) <= 1e-6f));
    }
}

TEST_CASE("graph files round-trip") {
    const auto dir = std::filesystem::temp_directory_path() / "voxseg_tests";
    std::filesystem::create_directories(dir);
    const auto emb = random_floats({5, 4, 3}, 2, 2);
    const auto g = build_metric_graph(emb, default_edges(), 1.5);
    write_graph(g, dir / "g.vxv", 1.5);
    CHECK(read_graph(dir / "g.vxv") == g);
    CHECK(read_graph(dir / "g.vxv", dir / "g.json") == g);
    CHECK(parse_edges((dir / "g.json").string()) == default_edges());

    std::vector<float> mask(60, 0.0f);
    mask[7] = 1.0f;
    const auto r = restrict_foreground(g, Volume(emb.geometry(), 1, mask), MaskParams{});
    write_graph(r, dir / "r.vxv", 1.5);
    const auto back = read_graph(dir / "r.vxv");
    CHECK(back == r);
    CHECK_FALSE(back.is_foreground(7));
}
