#pragma once

#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "voxseg/agglo.hpp"
#include "voxseg/eval.hpp"
#include "voxseg/metricgraph.hpp"
#include "voxseg/synthgen.hpp"

namespace voxseg {

struct PipelineConfig {
    enum class Source { synthetic, files };
    Source source = Source::synthetic;

    // Synthetic inputs. Their seeds are derived from `seed`.
    SynthSpec synth;
    EmbeddingSpec embedding;
    double mask_flip_rate = 0.0;
    /// Context used when rendering inference patches.
    SyntheticEmbeddingField::Context inference_context = SyntheticEmbeddingField::Context::global;

    // File inputs (empty path: not provided).
    std::filesystem::path embeddings_path;
    std::filesystem::path mask_path;
    std::filesystem::path truth_path;

    std::string edges = "default12";
    double delta_d = 1.5;
    MaskParams mask;
    AggloParams agglo;
    bool agglomerate = true;
    Vec3 patch{64, 64, 16};
    double overlap = 0.5;

    std::filesystem::path out_dir;
    std::uint64_t seed = 0;
    int threads = 1;
    /// Also write truth, mask and the blended graph to out_dir.
    bool write_intermediates = false;

    void validate() const;
};

nlohmann::json to_json(const PipelineConfig& cfg);

/// Regular grid of patch boxes covering `extent` with the given overlap fraction per axis. The
/// last patch along an axis is shifted inward so every patch keeps its shape; a patch larger than
/// the volume is cut to it.
std::vector<Box> schedule_patches(const Box& extent, Vec3 patch, double overlap);

inline const std::vector<std::string>& stage_names() {
    static const std::vector<std::string> names{"graph_construction", "mutex_watershed",
                                                "self_contact_split_detection", "mean_embedding_agglomeration"};
    return names;
}

struct StageTiming {
    std::string name;
    double seconds = 0.0;
};

struct CandidateReport {
    Decision decision;
    std::optional<LocalVIDiff> vi_diff;
};

struct PipelineResult {
    Volume segmentation_mws;
    Volume segmentation;
    std::vector<CandidateReport> candidates;
    std::optional<VIReport> vi_mws;
    std::optional<VIReport> vi_final;
    std::optional<double> rand_mws;
    std::optional<double> rand_final;
    std::vector<StageTiming> stages;
    std::int64_t patch_count = 0;
};

nlohmann::json candidates_json(const std::vector<CandidateReport>& candidates);
nlohmann::json metrics_json(const PipelineResult& r);
/// Per-stage seconds and percentage of the total, in stage order.
nlohmann::json timing_json(const std::vector<StageTiming>& stages);

class PipelineError : public std::runtime_error {
public:
    PipelineError(std::string stage, const std::string& what)
        : std::runtime_error(stage + ": " + what), stage_(std::move(stage)) {}
    const std::string& stage() const { return stage_; }

private:
    std::string stage_;
};

/// Runs every stage and, when out_dir is set, writes segmentation_mws.vxv, segmentation.vxv,
/// candidates.json, metrics.json, timing.json and config.json there.
PipelineResult run_pipeline(const PipelineConfig& cfg);

}  // namespace voxseg
