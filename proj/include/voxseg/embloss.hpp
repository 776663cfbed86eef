#pragma once

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <vector>

#include "voxseg/volume.hpp"

namespace voxseg {

/// Weights and margin of the means-based embedding loss.
struct LossParams {
    double delta_d = 1.5;
    double alpha = 1.0;
    double beta = 1.0;
    double gamma = 0.001;

    void validate() const;
};

/// Double-precision dense embeddings, laid out like a Volume (channel-major, x fastest).
struct EmbeddingField {
    VoxelGeometry geometry;
    int dims = 0;
    std::vector<double> values;

    EmbeddingField() = default;
    EmbeddingField(const VoxelGeometry& g, int d) : geometry(g), dims(d), values(std::size_t(d) * std::size_t(g.voxel_count()), 0.0) {}

    std::size_t voxel_count() const { return std::size_t(geometry.voxel_count()); }
    double& at(int d, std::size_t voxel) { return values[std::size_t(d) * voxel_count() + voxel]; }
    double at(int d, std::size_t voxel) const { return values[std::size_t(d) * voxel_count() + voxel]; }

    static EmbeddingField from_volume(const Volume& embeddings);
    Volume to_volume() const;
};

/// Connected-component relabeling of a label volume. `origin[k]` is the global label local id
/// `k` came from; `origin[0] == 0` stands for background.
struct LocalComponents {
    Volume labels;
    std::vector<std::uint64_t> origin;
};

/// Splits every label into its 6-connected components. Local ids are 1..K in scan order of each
/// component's first voxel; background stays 0.
LocalComponents relabel_local_components(const Volume& labels);

struct Cluster {
    std::uint64_t id = 0;
    std::int64_t count = 0;
    std::vector<double> mean;
    std::uint64_t origin_id = 0;
};

/// Per-object voxel counts and mean embeddings, ordered by ascending id.
struct ClusterStats {
    int dims = 0;
    std::vector<Cluster> clusters;

    std::size_t size() const { return clusters.size(); }
};

ClusterStats cluster_stats(const EmbeddingField& embeddings, const Volume& labels);
ClusterStats cluster_stats(const EmbeddingField& embeddings, const LocalComponents& components);

/// (1/C) sum_c (1/N_c) sum_i ||mu_c - x_i||_1^2 over foreground voxels.
double internal_loss(const ClusterStats& stats, const EmbeddingField& embeddings, const Volume& labels);

/// Hinged push between cluster means over ordered pairs, skipping pairs that share an origin.
double external_loss(const ClusterStats& stats, const LossParams& params);

/// (1/C) sum_c ||mu_c||_1.
double regularization_loss(const ClusterStats& stats);

struct LossBreakdown {
    double internal = 0.0;
    double external = 0.0;
    double regularization = 0.0;
    double total = 0.0;
};

/// Every label is its own origin: no pair is excluded from the external term.
LossBreakdown total_embedding_loss(const EmbeddingField& embeddings, const Volume& labels,
                                   const LossParams& params);
LossBreakdown total_embedding_loss(const EmbeddingField& embeddings, const LocalComponents& components,
                                   const LossParams& params);

/// Subgradient of the total loss w.r.t. every voxel embedding; zero on background voxels.
EmbeddingField embedding_loss_gradient(const EmbeddingField& embeddings, const Volume& labels,
                                       const LossParams& params);
EmbeddingField embedding_loss_gradient(const EmbeddingField& embeddings, const LocalComponents& components,
                                       const LossParams& params);

struct OptimizeOptions {
    int dims = 24;
    int iterations = 1000;
    double step = 0.1;
    std::uint64_t seed = 0;
    double init_scale = 0.01;
    /// Called with (iteration, loss before that iteration's update).
    std::function<void(int, const LossBreakdown&)> on_step;
};

class DivergenceError : public std::runtime_error {
public:
    DivergenceError(int iteration, const std::string& what) : std::runtime_error(what), iteration_(iteration) {}
    int iteration() const { return iteration_; }

private:
    int iteration_;
};

/// Fixed-step gradient descent on the loss from iid N(0, init_scale^2) embeddings.
EmbeddingField optimize_embeddings(const LocalComponents& components, const LossParams& params,
                                   const OptimizeOptions& options);

}  // namespace voxseg
