#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "fixtures.hpp"
#include "voxseg/pipeline.hpp"

using namespace voxseg;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path fresh_dir(const std::string& name) {
    const auto d = fs::temp_directory_path() / "voxseg_tests" / name;
    fs::remove_all(d);
    return d;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

PipelineConfig small_config() {
    PipelineConfig c;
    c.synth.shape = {64, 64, 16};
    c.synth.objects = 4;
    c.patch = {32, 32, 16};
    c.seed = 5;
    return c;
}

PipelineConfig self_contact_config(std::uint64_t seed) {
    PipelineConfig c;
    c.synth.shape = {128, 128, 16};
    c.synth.objects = 4;
    c.synth.self_contacts = 2;
    c.embedding.sigma = 0.01;
    c.embedding.context_radius = 64.0;
    c.patch = {64, 64, 16};
    c.seed = seed;
    return c;
}

}  // namespace

TEST_CASE("patch schedule") {
    const Box extent{{0, 0, 0}, {100, 64, 10}};
    const auto boxes = schedule_patches(extent, {32, 32, 16}, 0.5);
    // x: 0 16 32 48 64 68, y: 0 16 32, z: whole extent.
    CHECK(boxes.size() == 6 * 3);
    for (const auto& b : boxes) {
        CHECK(b.shape() == Vec3{32, 32, 10});
        CHECK(extent.contains(b));
    }
    CHECK(boxes.back().lo == Vec3{68, 32, 0});
    CHECK_FALSE(find_coverage_gap(boxes, extent).has_value());
    CHECK(schedule_patches(extent, {100, 64, 10}, 0.0).size() == 1);
    CHECK_THROWS(schedule_patches(extent, {8, 8, 8}, 0.95));
    const auto shifted = schedule_patches({{5, -3, 2}, {25, 7, 4}}, {8, 8, 8}, 0.25);
    for (const auto& b : shifted) CHECK(Box{{5, -3, 2}, {25, 7, 4}}.contains(b));
}

TEST_CASE("ideal embeddings without self-contacts segment exactly") {
    auto c = small_config();
    c.out_dir = fresh_dir("exact");
    const auto r = run_pipeline(c);
    REQUIRE(r.vi_final.has_value());
    CHECK(r.vi_final->vi == 0.0);
    CHECK(*r.rand_final == 0.0);
    CHECK(r.candidates.empty());
    for (const char* f : {"segmentation_mws.vxv", "segmentation.vxv", "candidates.json", "metrics.json", "timing.json",
                          "config.json"})
        CHECK(fs::exists(c.out_dir / f));

    const auto timing = json::parse(slurp(c.out_dir / "timing.json"));
    REQUIRE(timing["stages"].size() == 4);
    double pct = 0;
    for (std::size_t k = 0; k < 4; ++k) {
        CHECK(timing["stages"][k]["stage"] == stage_names()[k]);
        pct += timing["stages"][k]["percent"].get<double>();
    }
    CHECK(std::abs(pct - 100.0) < 0.1);
}

TEST_CASE("agglomeration lowers the split error on a self-contact fixture") {
    auto on = self_contact_config(3);
    auto off = on;
    off.agglomerate = false;
    const auto a = run_pipeline(on), b = run_pipeline(off);
    CHECK(a.vi_mws->vi_split == b.vi_final->vi_split);
    CHECK(b.vi_final->vi_split > 0.0);
    CHECK(a.vi_final->vi_split < b.vi_final->vi_split);
    CHECK(a.vi_final->vi_merge == b.vi_final->vi_merge);
    CHECK(!a.candidates.empty());
    for (const auto& cand : a.candidates) {
        CHECK(cand.decision.merge());
        REQUIRE(cand.vi_diff.has_value());
        CHECK(cand.vi_diff->value < 0.0);
    }
}

TEST_CASE("reruns produce identical artifacts at any thread count") {
    auto c = self_contact_config(7);
    c.patch = {48, 48, 16};
    c.mask_flip_rate = 0.001;
    c.out_dir = fresh_dir("det1");
    run_pipeline(c);
    auto d = c;
    d.out_dir = fresh_dir("det2");
    d.threads = 3;
    run_pipeline(d);
    for (const char* f : {"segmentation_mws.vxv", "segmentation.vxv", "candidates.json", "metrics.json"})
        CHECK(slurp(c.out_dir / f) == slurp(d.out_dir / f));
    // config.json records the thread count; everything else matches.
    auto ja = json::parse(slurp(c.out_dir / "config.json")), jb = json::parse(slurp(d.out_dir / "config.json"));
    ja.erase("threads");
    jb.erase("threads");
    CHECK(ja == jb);
}

TEST_CASE("file inputs reproduce the synthetic run") {
    auto c = small_config();
    c.synth.self_contacts = 1;
    c.embedding.sigma = 0.02;
    c.embedding.context_radius = 40.0;
    c.out_dir = fresh_dir("synthetic");
    c.write_intermediates = true;
    c.agglomerate = false;
    const auto a = run_pipeline(c);

    // Write the embeddings the synthetic run used, then run from files.
    SynthSpec ss = c.synth;
    ss.seed = c.seed;
    const auto gt = generate_ground_truth(ss);
    EmbeddingSpec es = c.embedding;
    es.seed = rng::mix(c.seed, 1);
    write_volume(SyntheticEmbeddingField(gt.labels, &gt.arc, es).render_all(), c.out_dir / "emb.vxv");
    PipelineConfig f;
    f.source = PipelineConfig::Source::files;
    f.embeddings_path = c.out_dir / "emb.vxv";
    f.mask_path = c.out_dir / "mask.vxv";
    f.truth_path = c.out_dir / "truth.vxv";
    f.patch = c.patch;
    f.agglomerate = false;
    const auto b = run_pipeline(f);
    CHECK(a.segmentation_mws == b.segmentation_mws);
    CHECK(read_graph(c.out_dir / "graph.vxv").geometry() == gt.labels.geometry());
}

TEST_CASE("failures name their stage") {
    PipelineConfig c;
    c.overlap = 0.95;
    try {
        run_pipeline(c);
        FAIL("expected an error");
    } catch (const PipelineError& e) {
        CHECK(e.stage() == "config");
    }

    PipelineConfig f;
    f.source = PipelineConfig::Source::files;
    f.embeddings_path = "/nonexistent/emb.vxv";
    CHECK_THROWS_AS(run_pipeline(f), PipelineError);

    // A patch too small for the long edges leaves a coverage gap during graph construction.
    auto g = small_config();
    g.patch = {6, 6, 16};
    g.out_dir = fresh_dir("fail");
    try {
        run_pipeline(g);
        FAIL("expected an error");
    } catch (const PipelineError& e) {
        CHECK(e.stage() == "graph_construction");
    }
    const auto err = json::parse(slurp(g.out_dir / "error.json"));
    CHECK(err["stage"] == "graph_construction");
    CHECK(fs::exists(g.out_dir / "timing.json"));
}
