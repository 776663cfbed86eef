#include "voxseg/pipeline.hpp"

#include <chrono>
#include <cmath>
#include <functional>
#include <fstream>
#include <memory>
#include <thread>

#include "voxseg/mws.hpp"
#include "voxseg/random.hpp"

namespace voxseg {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json vec_json(Vec3 v) { return json::array({v.x, v.y, v.z}); }

json vi_json(const VIReport& r) {
    return {{"vi_split", r.vi_split}, {"vi_merge", r.vi_merge}, {"vi", r.vi}, {"foreground_voxels", r.foreground}};
}

void write_json(const json& j, const fs::path& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << j.dump(2) << '\n';
}

class Stopwatch {
public:
    Stopwatch() : start_(std::chrono::steady_clock::now()) {}
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    }

private:
    std::chrono::steady_clock::time_point start_;
};

/// Builds patch graphs on `threads` workers and folds them into the blender in patch order.
MetricGraph build_blended_graph(const std::vector<Box>& patches, const VoxelGeometry& full,
                                const std::vector<EdgeSpec>& edges, double delta_d, int threads,
                                const std::function<Volume(const Box&)>& embeddings) {
    GraphBlender blender(full, edges);
    const auto workers = std::size_t(std::max(1, threads));
    if (workers == 1) {
        for (const auto& box : patches) blender.add(build_metric_graph(embeddings(box), edges, delta_d));
        return std::move(blender).finish();
    }
    // Waves of `workers` patches: built concurrently, blended sequentially.
    for (std::size_t begin = 0; begin < patches.size(); begin += workers) {
        const auto end = std::min(patches.size(), begin + workers);
        std::vector<MetricGraph> built(end - begin);
        std::vector<std::exception_ptr> errors(end - begin);
        std::vector<std::thread> pool;
        for (std::size_t k = begin; k < end; ++k)
            pool.emplace_back([&, k] {
                try {
                    built[k - begin] = build_metric_graph(embeddings(patches[k]), edges, delta_d);
                } catch (...) {
                    errors[k - begin] = std::current_exception();
                }
            });
        for (auto& t : pool) t.join();
        for (auto& e : errors)
            if (e) std::rethrow_exception(e);
        for (const auto& g : built) blender.add(g);
    }
    return std::move(blender).finish();
}

}  // namespace

void PipelineConfig::validate() const {
    if (!(overlap >= 0.0 && overlap <= 0.9)) throw std::invalid_argument("overlap must be in [0, 0.9]");
    if (patch.x < 1 || patch.y < 1 || patch.z < 1) throw std::invalid_argument("patch shape must be positive");
    if (!(delta_d > 0)) throw std::invalid_argument("delta_d must be positive");
    if (threads < 1) throw std::invalid_argument("threads must be >= 1");
    mask.validate();
    agglo.validate();
    if (source == Source::synthetic) {
        synth.validate();
        embedding.validate();
        if (!(mask_flip_rate >= 0 && mask_flip_rate <= 1)) throw std::invalid_argument("mask flip rate must be in [0, 1]");
    } else {
        if (embeddings_path.empty()) throw std::invalid_argument("file mode needs an embeddings path");
        for (const auto& p : {embeddings_path, mask_path, truth_path})
            if (!p.empty() && !fs::exists(p)) throw std::invalid_argument("input file not found: " + p.string());
    }
}

json to_json(const PipelineConfig& c) {
    json j;
    j["source"] = c.source == PipelineConfig::Source::synthetic ? "synthetic" : "files";
    if (c.source == PipelineConfig::Source::synthetic) {
        const auto& s = c.synth;
        j["synth"] = {{"shape", vec_json(s.shape)}, {"objects", s.objects}, {"radius_min", s.radius_min},
                      {"radius_max", s.radius_max}, {"gap", s.gap}, {"self_contacts", s.self_contacts},
                      {"ring_radius_min", s.ring_radius_min}, {"ring_radius_max", s.ring_radius_max}};
        const auto& e = c.embedding;
        j["embedding"] = {{"dims", e.dims},
                          {"min_separation", e.min_separation},
                          {"sigma", e.sigma},
                          {"background_amplitude", e.background_amplitude},
                          {"context_radius", e.context_radius ? json(*e.context_radius) : json(nullptr)},
                          {"ramp_length", e.ramp_length},
                          {"split_distance", e.split_distance},
                          {"inference_context",
                           c.inference_context == SyntheticEmbeddingField::Context::global ? "global" : "patch"}};
        j["mask_flip_rate"] = c.mask_flip_rate;
    } else {
        j["embeddings"] = c.embeddings_path.string();
        j["mask"] = c.mask_path.empty() ? json(nullptr) : json(c.mask_path.string());
        j["truth"] = c.truth_path.empty() ? json(nullptr) : json(c.truth_path.string());
    }
    j["edges"] = c.edges;
    j["delta_d"] = c.delta_d;
    j["theta_mask"] = c.mask.theta_mask;
    j["agglomeration"] = {{"enabled", c.agglomerate},
                          {"theta_contact", c.agglo.theta_contact},
                          {"theta_d", c.agglo.theta_d},
                          {"focal", vec_json(c.agglo.focal)},
                          {"patch", vec_json(c.agglo.patch)}};
    j["patch"] = vec_json(c.patch);
    j["overlap"] = c.overlap;
    j["seed"] = c.seed;
    return j;
}

std::vector<Box> schedule_patches(const Box& extent, Vec3 patch, double overlap) {
    if (!(overlap >= 0.0 && overlap <= 0.9)) throw std::invalid_argument("overlap must be in [0, 0.9]");
    std::vector<int> starts[3];
    Vec3 size{};
    for (int a = 0; a < 3; ++a) {
        const int n = extent.hi[a] - extent.lo[a];
        size[a] = std::min(patch[a], n);
        const int step = std::max(1, int(std::floor(size[a] * (1.0 - overlap))));
        for (int s = 0;; s += step) {
            if (s + size[a] >= n) {
                starts[a].push_back(n - size[a]);
                break;
            }
            starts[a].push_back(s);
        }
    }
    std::vector<Box> out;
    for (int z : starts[2])
        for (int y : starts[1])
            for (int x : starts[0]) {
                const Vec3 lo = extent.lo + Vec3{x, y, z};
                out.push_back({lo, lo + size});
            }
    return out;
}

json candidates_json(const std::vector<CandidateReport>& candidates) {
    json arr = json::array();
    for (const auto& r : candidates) {
        const auto& d = r.decision;
        json item = {{"s1", d.candidate.s1},
                     {"s2", d.candidate.s2},
                     {"centroid", vec_json(d.candidate.centroid)},
                     {"max_score", d.candidate.max_score},
                     {"contacts", d.candidate.contacts},
                     {"distance", std::isnan(d.distance) ? json(nullptr) : json(d.distance)},
                     {"decision", to_string(d.outcome)},
                     {"focal_voxels", {d.focal_voxels_s1, d.focal_voxels_s2}}};
        if (r.vi_diff) {
            item["vi_diff"] = r.vi_diff->present ? json(r.vi_diff->value) : json(nullptr);
        }
        arr.push_back(std::move(item));
    }
    return {{"candidates", arr}};
}

json metrics_json(const PipelineResult& r) {
    json j;
    const auto segments = [](const Volume& v) {
        std::uint32_t k = 0;
        for (auto x : v.values<std::uint32_t>()) k = std::max(k, x);
        return k;
    };
    j["segments_mws"] = segments(r.segmentation_mws);
    j["segments_final"] = segments(r.segmentation);
    j["candidates"] = r.candidates.size();
    std::size_t merges = 0;
    for (const auto& c : r.candidates) merges += c.decision.merge();
    j["merges"] = merges;
    if (r.vi_mws) {
        j["mws"] = vi_json(*r.vi_mws);
        j["mws"]["adapted_rand_error"] = *r.rand_mws;
        j["final"] = vi_json(*r.vi_final);
        j["final"]["adapted_rand_error"] = *r.rand_final;
    }
    return j;
}

json timing_json(const std::vector<StageTiming>& stages) {
    double total = 0;
    for (const auto& s : stages) total += s.seconds;
    json arr = json::array();
    for (const auto& s : stages)
        arr.push_back({{"stage", s.name},
                       {"seconds", s.seconds},
                       {"percent", total > 0 ? 100.0 * s.seconds / total : 100.0 / double(stages.size())}});
    return {{"stages", arr}, {"total_seconds", total}};
}

PipelineResult run_pipeline(const PipelineConfig& cfg) {
    try {
        cfg.validate();
    } catch (const std::exception& e) {
        throw PipelineError("config", e.what());
    }
    const bool write = !cfg.out_dir.empty();
    if (write) fs::create_directories(cfg.out_dir);

    PipelineResult r;
    std::string stage = "input";
    const auto fail = [&](const std::exception& e) {
        if (write) {
            try {
                if (r.segmentation_mws.geometry().voxel_count() > 1 || !r.stages.empty())
                    write_volume(r.segmentation_mws, cfg.out_dir / "segmentation_mws.vxv");
                write_json(timing_json(r.stages), cfg.out_dir / "timing.json");
                write_json({{"stage", stage}, {"error", e.what()}}, cfg.out_dir / "error.json");
            } catch (...) {
            }
        }
        throw PipelineError(stage, e.what());
    };

    try {
        // Inputs.
        std::optional<Volume> truth;
        std::optional<Volume> mask;
        std::shared_ptr<const SyntheticEmbeddingField> field;
        std::optional<Volume> embeddings;
        VoxelGeometry geom;
        if (cfg.source == PipelineConfig::Source::synthetic) {
            SynthSpec ss = cfg.synth;
            ss.seed = cfg.seed;
            auto gt = generate_ground_truth(ss);
            EmbeddingSpec es = cfg.embedding;
            es.delta_d = cfg.delta_d;
            es.seed = rng::mix(cfg.seed, 1);
            field = std::make_shared<SyntheticEmbeddingField>(gt.labels, &gt.arc, es);
            mask = generate_background_mask(gt.labels, cfg.mask_flip_rate, rng::mix(cfg.seed, 2)).mask;
            truth = std::move(gt.labels);
            geom = truth->geometry();
        } else {
            embeddings = read_volume(cfg.embeddings_path);
            if (embeddings->dtype() != DType::float32) throw std::invalid_argument("embeddings must be float32");
            geom = embeddings->geometry();
            if (!cfg.mask_path.empty()) mask = read_volume(cfg.mask_path);
            if (!cfg.truth_path.empty()) truth = read_volume(cfg.truth_path);
        }
        if (write && cfg.write_intermediates && cfg.source == PipelineConfig::Source::synthetic) {
            write_volume(*truth, cfg.out_dir / "truth.vxv");
            write_volume(*mask, cfg.out_dir / "mask.vxv");
        }
        const auto edges = parse_edges(cfg.edges);

        stage = stage_names()[0];
        Stopwatch sw;
        const auto patches = schedule_patches(geom.extent(), cfg.patch, cfg.overlap);
        r.patch_count = std::int64_t(patches.size());
        const auto render = [&](const Box& box) {
            return field ? field->render(box, cfg.inference_context) : crop(*embeddings, box);
        };
        MetricGraph graph = build_blended_graph(patches, geom, edges, cfg.delta_d, cfg.threads, render);
        if (mask) graph = restrict_foreground(graph, *mask, cfg.mask);
        if (write && cfg.write_intermediates) write_graph(graph, cfg.out_dir / "graph.vxv", cfg.delta_d);
        r.stages.push_back({stage, sw.seconds()});

        stage = stage_names()[1];
        sw = Stopwatch();
        r.segmentation_mws = mutex_watershed(graph);
        if (write) write_volume(r.segmentation_mws, cfg.out_dir / "segmentation_mws.vxv");
        r.stages.push_back({stage, sw.seconds()});

        stage = stage_names()[2];
        sw = Stopwatch();
        std::vector<Candidate> candidates;
        if (cfg.agglomerate) candidates = select_candidates(find_contacts(r.segmentation_mws, graph), cfg.agglo);
        graph = MetricGraph();
        r.stages.push_back({stage, sw.seconds()});

        stage = stage_names()[3];
        sw = Stopwatch();
        std::vector<Decision> decisions;
        if (cfg.agglomerate) {
            std::unique_ptr<EmbeddingProvider> provider;
            if (field) provider = std::make_unique<SyntheticEmbeddingProvider>(field);
            else provider = std::make_unique<VolumeEmbeddingProvider>(*embeddings);
            decisions = decide_all(candidates, r.segmentation_mws, *provider, cfg.agglo, cfg.threads);
            r.segmentation = apply_merges(r.segmentation_mws, decisions);
        } else {
            r.segmentation = r.segmentation_mws;
        }
        r.stages.push_back({stage, sw.seconds()});

        stage = "evaluation";
        for (auto& d : decisions) {
            CandidateReport rep{d, std::nullopt};
            if (truth) rep.vi_diff = vi_diff_local(r.segmentation_mws, *truth, d.candidate, cfg.agglo.patch);
            r.candidates.push_back(std::move(rep));
        }
        if (truth) {
            r.vi_mws = variation_of_information(r.segmentation_mws, *truth);
            r.vi_final = variation_of_information(r.segmentation, *truth);
            r.rand_mws = adapted_rand_error(r.segmentation_mws, *truth);
            r.rand_final = adapted_rand_error(r.segmentation, *truth);
        }

        if (write) {
            stage = "output";
            write_volume(r.segmentation, cfg.out_dir / "segmentation.vxv");
            write_json(candidates_json(r.candidates), cfg.out_dir / "candidates.json");
            write_json(metrics_json(r), cfg.out_dir / "metrics.json");
            write_json(timing_json(r.stages), cfg.out_dir / "timing.json");
            write_json(to_json(cfg), cfg.out_dir / "config.json");
        }
    } catch (const PipelineError&) {
        throw;
    } catch (const std::exception& e) {
        fail(e);
    }
    return r;
}

}  // namespace voxseg
