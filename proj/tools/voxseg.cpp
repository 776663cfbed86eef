// voxseg command-line front end. Every subcommand reads and writes VXV1 volumes and JSON.
#include <algorithm>
#include <chrono>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "voxseg/agglo.hpp"
#include "voxseg/embloss.hpp"
#include "voxseg/eval.hpp"
#include "voxseg/metricgraph.hpp"
#include "voxseg/mws.hpp"
#include "voxseg/pipeline.hpp"
#include "voxseg/synthgen.hpp"

using namespace voxseg;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

Vec3 parse_vec3(const std::string& text) {
    Vec3 v;
    char sep1 = 0, sep2 = 0;
    std::istringstream in(text);
    if (!(in >> v.x >> sep1 >> v.y >> sep2 >> v.z) || sep1 != ',' || sep2 != ',' || !in.eof())
        throw CLI::ValidationError("expected three integers X,Y,Z, got '" + text + "'");
    return v;
}

/// Registers a "X,Y,Z" option writing into `target`.
CLI::Option* add_vec3(CLI::App* app, const std::string& name, Vec3& target, const std::string& help) {
    std::ostringstream def;
    def << target.x << ',' << target.y << ',' << target.z;
    return app
        ->add_option_function<std::string>(name, [&target](const std::string& s) { target = parse_vec3(s); }, help)
        ->default_str(def.str());
}

void emit(const json& j, bool pretty) { std::cout << (pretty ? j.dump(2) : j.dump()) << '\n'; }

struct SynthFlags {
    SynthSpec spec;
    void add(CLI::App* app) {
        add_vec3(app, "--shape", spec.shape, "volume shape X,Y,Z");
        app->add_option("--objects", spec.objects, "object count")->capture_default_str();
        app->add_option("--self-contacts", spec.self_contacts, "objects drawn as self-touching rings")
            ->capture_default_str();
        app->add_option("--gap", spec.gap, "background voxels between distinct objects")->capture_default_str();
        app->add_option("--radius-min", spec.radius_min, "minimum tube radius")->capture_default_str();
        app->add_option("--radius-max", spec.radius_max, "maximum tube radius")->capture_default_str();
        app->add_option("--ring-radius-min", spec.ring_radius_min)->capture_default_str();
        app->add_option("--ring-radius-max", spec.ring_radius_max)->capture_default_str();
    }
};

struct EmbeddingFlags {
    EmbeddingSpec spec;
    double context_radius = 0.0;
    void add(CLI::App* app) {
        app->add_option("--dims", spec.dims, "embedding dimension")->capture_default_str();
        app->add_option("--sigma", spec.sigma, "foreground noise standard deviation")->capture_default_str();
        app->add_option("--separation", spec.min_separation, "minimum L1 distance between centers")
            ->capture_default_str();
        app->add_option("--background", spec.background_amplitude, "background noise amplitude")
            ->capture_default_str();
        app->add_option("--context-radius", context_radius, "context radius; 0 disables context splitting")
            ->capture_default_str();
        app->add_option("--ramp", spec.ramp_length, "length of the transition between split centers")
            ->capture_default_str();
        app->add_option("--split", spec.split_distance, "L1 distance between split centers")->capture_default_str();
    }
    EmbeddingSpec resolved(double delta, std::uint64_t seed) const {
        EmbeddingSpec s = spec;
        s.delta_d = delta;
        s.seed = seed;
        if (context_radius > 0) s.context_radius = context_radius;
        return s;
    }
};

Volume load_or_generate_labels(const std::string& path, const SynthFlags& synth, std::uint64_t seed,
                               std::optional<Volume>& arc) {
    if (!path.empty()) return read_volume(path);
    SynthSpec s = synth.spec;
    s.seed = seed;
    auto gt = generate_ground_truth(s);
    arc = std::move(gt.arc);
    return std::move(gt.labels);
}

json loss_json(const LossBreakdown& b) {
    return {{"internal", b.internal}, {"external", b.external}, {"regularization", b.regularization}, {"total", b.total}};
}

void add_pipeline_options(CLI::App* app, PipelineConfig& cfg, SynthFlags& synth, EmbeddingFlags& emb,
                          std::string& context, std::string& emb_path, std::string& mask_path,
                          std::string& truth_path, std::string& out_dir, bool& no_agglo) {
    synth.add(app);
    emb.add(app);
    app->add_option("--flip-rate", cfg.mask_flip_rate, "synthetic mask flip rate")->capture_default_str();
    app->add_option("--inference-context", context, "context for inference patches: global or patch")
        ->check(CLI::IsMember({"global", "patch"}))
        ->capture_default_str();
    app->add_option("--emb", emb_path, "embeddings VXV1 (switches to file inputs)");
    app->add_option("--mask", mask_path, "background mask VXV1 (file inputs)");
    app->add_option("--truth", truth_path, "ground-truth labels VXV1 (file inputs)");
    app->add_option("--edges", cfg.edges, "default12, a JSON edge list or a sidecar path")->capture_default_str();
    app->add_option("--delta", cfg.delta_d, "margin delta_d")->capture_default_str();
    app->add_option("--theta-mask", cfg.mask.theta_mask, "background threshold")->capture_default_str();
    app->add_option("--theta-contact", cfg.agglo.theta_contact, "self-contact score threshold")->capture_default_str();
    app->add_option("--theta-d", cfg.agglo.theta_d, "mean embedding distance threshold")->capture_default_str();
    add_vec3(app, "--focal", cfg.agglo.focal, "focal window X,Y,Z");
    add_vec3(app, "--agglo-patch", cfg.agglo.patch, "embedding patch around each candidate X,Y,Z");
    app->add_flag("--no-agglomerate", no_agglo, "stop after the mutex watershed");
    add_vec3(app, "--patch", cfg.patch, "inference patch shape X,Y,Z");
    app->add_option("--overlap", cfg.overlap, "patch overlap fraction per axis")->capture_default_str();
    app->add_option("--out-dir", out_dir, "artifact directory");
    app->add_option("--seed", cfg.seed, "seed")->capture_default_str();
    app->add_option("--threads", cfg.threads, "worker threads")->capture_default_str();
    app->add_flag("--write-intermediates", cfg.write_intermediates, "also write truth, mask and graph");
}

void finish_pipeline_config(PipelineConfig& cfg, const SynthFlags& synth, const EmbeddingFlags& emb,
                            const std::string& context, const std::string& emb_path, const std::string& mask_path,
                            const std::string& truth_path, const std::string& out_dir, bool no_agglo) {
    cfg.synth = synth.spec;
    cfg.embedding = emb.resolved(cfg.delta_d, 0);
    cfg.inference_context = context == "patch" ? SyntheticEmbeddingField::Context::patch_limited
                                               : SyntheticEmbeddingField::Context::global;
    if (!emb_path.empty()) {
        cfg.source = PipelineConfig::Source::files;
        cfg.embeddings_path = emb_path;
        cfg.mask_path = mask_path;
        cfg.truth_path = truth_path;
    }
    cfg.out_dir = out_dir;
    cfg.agglomerate = !no_agglo;
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

/// Splices `key = value` lines from a --config file into the arguments (without argv[0]).
/// Keys already given on the command line are skipped so flags take precedence.
std::vector<std::string> expand_config(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    auto it = std::find(args.begin(), args.end(), "--config");
    std::string file;
    if (it != args.end() && it + 1 != args.end()) {
        file = *(it + 1);
        args.erase(it, it + 2);
    } else {
        for (auto a = args.begin(); a != args.end(); ++a)
            if (a->rfind("--config=", 0) == 0) {
                file = a->substr(9);
                args.erase(a);
                break;
            }
    }
    if (file.empty()) return args;
    std::ifstream in(file);
    if (!in) throw std::runtime_error("cannot read config file " + file);
    const auto given = [&](const std::string& flag) {
        return std::any_of(args.begin(), args.end(),
                           [&](const std::string& a) { return a == flag || a.rfind(flag + "=", 0) == 0; });
    };
    std::vector<std::string> extra;
    for (std::string line; std::getline(in, line);) {
        line = trim(line.substr(0, line.find_first_of("#;")));
        if (line.empty() || line.front() == '[') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw std::runtime_error("config line without '=': " + line);
        std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
        std::replace(key.begin(), key.end(), '_', '-');
        if (value.size() >= 2 && (value.front() == '"' || value.front() == '\'') && value.back() == value.front())
            value = value.substr(1, value.size() - 2);
        const std::string flag = "--" + key;
        if (given(flag)) continue;
        if (value == "true") {
            extra.push_back(flag);
        } else if (value != "false") {
            extra.push_back(flag);
            extra.push_back(value);
        }
    }
    args.insert(args.end(), extra.begin(), extra.end());
    return args;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"voxseg: dense voxel embeddings to instance segmentations"};
    app.require_subcommand(1);
    bool as_json = false;
    app.add_flag("--json", as_json, "pretty-print JSON output");
    app.fallthrough();

    std::uint64_t seed = 0;
    std::string out, labels_path, arc_path, emb_path, mask_path, graph_path, edges_path, seg_path, truth_path;

    // synth-gt
    SynthFlags gt_flags;
    std::string arc_out;
    auto* synth_gt = app.add_subcommand("synth-gt", "generate a synthetic ground-truth label volume");
    gt_flags.add(synth_gt);
    synth_gt->add_option("--seed", seed)->capture_default_str();
    synth_gt->add_option("--out", out, "labels VXV1 (uint32)")->required();
    synth_gt->add_option("--arc-out", arc_out, "centerline position VXV1 (float32)");
    synth_gt->callback([&] {
        SynthSpec s = gt_flags.spec;
        s.seed = seed;
        const auto gt = generate_ground_truth(s);
        write_volume(gt.labels, out);
        if (!arc_out.empty()) write_volume(gt.arc, arc_out);
        json objs = json::array();
        for (const auto& o : gt.objects)
            objs.push_back({{"id", o.id},
                            {"kind", o.kind == ObjectKind::ring ? "ring" : "tube"},
                            {"voxels", o.voxels},
                            {"arc_length", o.arc_length}});
        emit({{"out", out}, {"objects", objs}}, as_json);
    });

    // synth-emb
    SynthFlags emb_synth;
    EmbeddingFlags emb_flags;
    double emb_delta = 1.5;
    auto* synth_emb = app.add_subcommand("synth-emb", "generate ideal noisy embeddings for a label volume");
    synth_emb->add_option("--labels", labels_path, "labels VXV1; generated from the synth flags when absent");
    synth_emb->add_option("--arc", arc_path, "centerline position VXV1 matching --labels");
    emb_synth.add(synth_emb);
    emb_flags.add(synth_emb);
    synth_emb->add_option("--delta", emb_delta)->capture_default_str();
    synth_emb->add_option("--seed", seed)->capture_default_str();
    synth_emb->add_option("--out", out, "embeddings VXV1 (float32)")->required();
    synth_emb->callback([&] {
        std::optional<Volume> arc;
        const Volume labels = load_or_generate_labels(labels_path, emb_synth, seed, arc);
        if (!arc_path.empty()) arc = read_volume(arc_path);
        const auto e = generate_embeddings(labels, emb_flags.resolved(emb_delta, seed), arc ? &*arc : nullptr);
        write_volume(e, out);
        emit({{"out", out}, {"dims", e.channels()}}, as_json);
    });

    // synth-mask
    SynthFlags mask_synth;
    double flip_rate = 0.0;
    auto* synth_mask = app.add_subcommand("synth-mask", "generate a background mask for a label volume");
    synth_mask->add_option("--labels", labels_path, "labels VXV1; generated from the synth flags when absent");
    mask_synth.add(synth_mask);
    synth_mask->add_option("--flip-rate", flip_rate, "fraction of voxels flipped")->capture_default_str();
    synth_mask->add_option("--sigma", flip_rate, "alias of --flip-rate");
    synth_mask->add_option("--seed", seed)->capture_default_str();
    synth_mask->add_option("--out", out, "mask VXV1 (float32)")->required();
    synth_mask->callback([&] {
        std::optional<Volume> arc;
        const Volume labels = load_or_generate_labels(labels_path, mask_synth, seed, arc);
        const auto m = generate_background_mask(labels, flip_rate, seed);
        write_volume(m.mask, out);
        emit({{"out", out}, {"flips", m.flips}}, as_json);
    });

    // optimize-emb
    OptimizeOptions opt;
    LossParams opt_params;
    bool local_cc = false;
    int log_every = 0;
    auto* optimize = app.add_subcommand("optimize-emb", "fit embeddings to labels by gradient descent on the loss");
    optimize->add_option("--labels", labels_path)->required();
    optimize->add_option("--dims", opt.dims)->capture_default_str();
    optimize->add_option("--iters", opt.iterations)->capture_default_str();
    optimize->add_option("--step", opt.step)->capture_default_str();
    optimize->add_option("--seed", opt.seed)->capture_default_str();
    optimize->add_option("--init-scale", opt.init_scale)->capture_default_str();
    optimize->add_option("--delta", opt_params.delta_d)->capture_default_str();
    optimize->add_option("--alpha", opt_params.alpha)->capture_default_str();
    optimize->add_option("--beta", opt_params.beta)->capture_default_str();
    optimize->add_option("--gamma", opt_params.gamma)->capture_default_str();
    optimize->add_flag("--local-components", local_cc, "split labels into connected components first");
    optimize->add_option("--log-every", log_every, "print the loss every N steps as JSON lines");
    optimize->add_option("--out", out)->required();
    optimize->callback([&] {
        const Volume labels = read_volume(labels_path);
        LocalComponents comps = local_cc ? relabel_local_components(labels) : LocalComponents{};
        if (!local_cc) {
            comps.labels = labels;
            // Every label its own origin.
            const auto vals = label_values(labels);
            std::uint64_t max_id = 0;
            for (auto v : vals) max_id = std::max(max_id, v);
            comps.origin.resize(std::size_t(max_id) + 1);
            for (std::uint64_t k = 0; k <= max_id; ++k) comps.origin[std::size_t(k)] = k;
        }
        if (log_every > 0)
            opt.on_step = [&](int it, const LossBreakdown& b) {
                if (it % log_every == 0) std::cout << json{{"iteration", it}, {"loss", loss_json(b)}}.dump() << '\n';
            };
        const auto field = optimize_embeddings(comps, opt_params, opt);
        write_volume(field.to_volume(), out);
        emit({{"out", out}, {"loss", loss_json(total_embedding_loss(field, comps, opt_params))}}, as_json);
    });

    // loss
    LossParams loss_params;
    auto* loss = app.add_subcommand("loss", "evaluate the embedding loss terms");
    loss->add_option("--emb", emb_path)->required();
    loss->add_option("--labels", labels_path)->required();
    loss->add_option("--delta", loss_params.delta_d)->capture_default_str();
    loss->add_option("--alpha", loss_params.alpha)->capture_default_str();
    loss->add_option("--beta", loss_params.beta)->capture_default_str();
    loss->add_option("--gamma", loss_params.gamma)->capture_default_str();
    loss->add_flag("--local-components", local_cc, "exclude pairs of parts of the same label");
    loss->callback([&] {
        const auto field = EmbeddingField::from_volume(read_volume(emb_path));
        const Volume labels = read_volume(labels_path);
        const auto b = local_cc ? total_embedding_loss(field, relabel_local_components(labels), loss_params)
                                : total_embedding_loss(field, labels, loss_params);
        for (const char* term : {"internal", "external", "regularization", "total"})
            std::cout << json{{"term", term}, {"value", loss_json(b)[term]}}.dump() << '\n';
    });

    // affinity
    std::string edges_spec = "default12";
    double aff_delta = 1.5;
    MaskParams aff_mask;
    Vec3 aff_patch{0, 0, 0};
    double aff_overlap = 0.5;
    auto* affinity = app.add_subcommand("affinity", "build the (foreground-restricted) metric graph");
    affinity->add_option("--emb", emb_path)->required();
    affinity->add_option("--edges", edges_spec)->capture_default_str();
    affinity->add_option("--delta", aff_delta)->capture_default_str();
    affinity->add_option("--mask", mask_path, "background mask VXV1");
    affinity->add_option("--theta-mask", aff_mask.theta_mask)->capture_default_str();
    add_vec3(affinity, "--patch", aff_patch, "blend over patches of this shape (0,0,0: whole volume)");
    affinity->add_option("--overlap", aff_overlap)->capture_default_str();
    affinity->add_option("--out", out, "graph VXV1; the sidecar goes next to it")->required();
    affinity->callback([&] {
        const Volume emb = read_volume(emb_path);
        const auto edges = parse_edges(edges_spec);
        MetricGraph g;
        if (aff_patch.x > 0 && aff_patch.y > 0 && aff_patch.z > 0) {
            GraphBlender blender(emb.geometry(), edges);
            for (const auto& box : schedule_patches(emb.geometry().extent(), aff_patch, aff_overlap))
                blender.add(build_metric_graph(crop(emb, box), edges, aff_delta));
            g = std::move(blender).finish();
        } else {
            g = build_metric_graph(emb, edges, aff_delta);
        }
        if (!mask_path.empty()) g = restrict_foreground(g, read_volume(mask_path), aff_mask);
        write_graph(g, out, aff_delta);
        emit({{"out", out}, {"sidecar", sidecar_path(out).string()}, {"channels", g.channels()}}, as_json);
    });

    // mws
    bool reference = false;
    auto* mws = app.add_subcommand("mws", "partition a metric graph with the mutex watershed");
    mws->add_option("--graph", graph_path)->required();
    mws->add_option("--edges", edges_path, "sidecar JSON (default: next to the graph)");
    mws->add_option("--out", out)->required();
    mws->add_flag("--reference", reference, "use the naive reference implementation");
    mws->callback([&] {
        const auto g = read_graph(graph_path, edges_path.empty() ? std::nullopt : std::optional<fs::path>(edges_path));
        const auto t0 = std::chrono::steady_clock::now();
        const Volume seg = reference ? mutex_watershed_reference(g) : mutex_watershed(g);
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        write_volume(seg, out);
        std::uint32_t k = 0;
        for (auto v : seg.values<std::uint32_t>()) k = std::max(k, v);
        emit({{"out", out}, {"segments", k}, {"seconds", secs}}, as_json);
    });

    // agglomerate
    AggloParams agglo;
    std::string report_path;
    int agglo_threads = 1;
    auto* agglomerate = app.add_subcommand("agglomerate", "mean embedding agglomeration of self-contact splits");
    agglomerate->add_option("--seg", seg_path)->required();
    agglomerate->add_option("--graph", graph_path)->required();
    agglomerate->add_option("--emb", emb_path, "embeddings VXV1 providing the candidate patches")->required();
    agglomerate->add_option("--truth", truth_path, "labels for per-candidate VI differences");
    agglomerate->add_option("--theta-contact", agglo.theta_contact)->capture_default_str();
    agglomerate->add_option("--theta-d", agglo.theta_d)->capture_default_str();
    add_vec3(agglomerate, "--focal", agglo.focal, "focal window X,Y,Z");
    add_vec3(agglomerate, "--patch", agglo.patch, "embedding patch X,Y,Z");
    agglomerate->add_option("--threads", agglo_threads)->capture_default_str();
    agglomerate->add_option("--out", out)->required();
    agglomerate->add_option("--report", report_path, "candidate report JSON");
    agglomerate->callback([&] {
        agglo.validate();
        const Volume seg = read_volume(seg_path);
        const auto g = read_graph(graph_path);
        const auto cands = select_candidates(find_contacts(seg, g), agglo);
        const VolumeEmbeddingProvider provider(read_volume(emb_path));
        const auto decisions = decide_all(cands, seg, provider, agglo, agglo_threads);
        write_volume(apply_merges(seg, decisions), out);
        std::optional<Volume> truth;
        if (!truth_path.empty()) truth = read_volume(truth_path);
        std::vector<CandidateReport> reports;
        for (const auto& d : decisions)
            reports.push_back({d, truth ? std::optional(vi_diff_local(seg, *truth, d.candidate, agglo.patch))
                                        : std::nullopt});
        const auto rep = candidates_json(reports);
        if (!report_path.empty()) std::ofstream(report_path) << rep.dump(2) << '\n';
        std::size_t merges = 0;
        for (const auto& d : decisions) merges += d.merge();
        emit({{"out", out}, {"candidates", decisions.size()}, {"merges", merges}}, as_json);
    });

    // eval
    std::string metrics = "vi,rand";
    auto* eval = app.add_subcommand("eval", "compare a segmentation with ground truth");
    eval->add_option("--seg", seg_path)->required();
    eval->add_option("--truth", truth_path)->required();
    eval->add_option("--metrics", metrics, "comma-separated subset of vi,rand")->capture_default_str();
    eval->callback([&] {
        const Volume s = read_volume(seg_path), t = read_volume(truth_path);
        json j;
        std::stringstream list(metrics);
        for (std::string m; std::getline(list, m, ',');) {
            if (m == "vi") {
                const auto r = variation_of_information(s, t);
                j["vi"] = {{"vi_split", r.vi_split}, {"vi_merge", r.vi_merge}, {"vi", r.vi},
                           {"foreground_voxels", r.foreground}, {"empty", r.empty}};
            } else if (m == "rand") {
                j["adapted_rand_error"] = adapted_rand_error(s, t);
            } else {
                throw CLI::ValidationError("unknown metric '" + m + "'");
            }
        }
        emit(j, as_json);
    });

    // pipeline and bench share their options.
    PipelineConfig pcfg;
    SynthFlags p_synth;
    EmbeddingFlags p_emb;
    std::string p_context = "global", p_emb_path, p_mask, p_truth, p_out;
    bool p_no_agglo = false;
    auto* pipeline = app.add_subcommand("pipeline", "run every stage end to end");
    pipeline->add_option("--config", "key = value file; command-line flags take precedence");
    add_pipeline_options(pipeline, pcfg, p_synth, p_emb, p_context, p_emb_path, p_mask, p_truth, p_out, p_no_agglo);
    pipeline->callback([&] {
        finish_pipeline_config(pcfg, p_synth, p_emb, p_context, p_emb_path, p_mask, p_truth, p_out, p_no_agglo);
        const auto r = run_pipeline(pcfg);
        emit(metrics_json(r), as_json);
    });

    PipelineConfig bcfg;
    bcfg.synth.shape = {512, 512, 100};
    bcfg.synth.objects = 60;
    bcfg.synth.self_contacts = 10;
    bcfg.patch = {128, 128, 32};
    SynthFlags b_synth;
    b_synth.spec = bcfg.synth;
    EmbeddingFlags b_emb;
    b_emb.spec.sigma = 0.01;
    b_emb.context_radius = 64.0;
    std::string b_context = "global", b_emb_path, b_mask, b_truth, b_out;
    bool b_no_agglo = false;
    auto* bench = app.add_subcommand("bench", "time the four pipeline stages");
    bench->add_option("--config", "key = value file; command-line flags take precedence");
    add_pipeline_options(bench, bcfg, b_synth, b_emb, b_context, b_emb_path, b_mask, b_truth, b_out, b_no_agglo);
    bench->callback([&] {
        finish_pipeline_config(bcfg, b_synth, b_emb, b_context, b_emb_path, b_mask, b_truth, b_out, b_no_agglo);
        const auto t0 = std::chrono::steady_clock::now();
        const auto r = run_pipeline(bcfg);
        auto j = timing_json(r.stages);
        j["wall_seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        j["shape"] = {bcfg.synth.shape.x, bcfg.synth.shape.y, bcfg.synth.shape.z};
        j["patches"] = r.patch_count;
        if (!bcfg.out_dir.empty()) std::ofstream(bcfg.out_dir / "bench.json") << j.dump(2) << '\n';
        emit(j, as_json);
    });

    try {
        auto args = expand_config(argc, argv);
        std::reverse(args.begin(), args.end());
        app.parse(std::move(args));
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    } catch (const std::exception& e) {
        std::cerr << "voxseg: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
