#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "voxseg/volume.hpp"

namespace voxseg {

enum class Polarity : std::uint8_t { attractive, repulsive };

std::string to_string(Polarity p);
Polarity polarity_from_string(const std::string& s);

/// Edge (i, i + offset), keyed at the reference voxel i.
struct EdgeSpec {
    Vec3 offset;
    Polarity polarity = Polarity::attractive;

    friend bool operator==(const EdgeSpec&, const EdgeSpec&) = default;
};

/// Three nearest-neighbour attractive edges followed by nine long-range repulsive edges,
/// tuned for z-anisotropic volumes.
std::vector<EdgeSpec> default_edges();

/// Marker for "no data" affinities (masked or out of bounds). Distinct from 0, which is evidence.
inline constexpr float kInvalidAffinity = std::numeric_limits<float>::quiet_NaN();
inline bool is_invalid(float a) { return std::isnan(a); }

/// Affinity map per edge over a voxel grid, plus the set of voxels that are graph nodes.
class MetricGraph {
public:
    MetricGraph() = default;
    /// `foreground` is either empty (every voxel is a node) or one byte per voxel.
    MetricGraph(const VoxelGeometry& geometry, std::vector<EdgeSpec> edges, std::vector<float> affinities,
                std::vector<std::uint8_t> foreground = {});

    const VoxelGeometry& geometry() const { return geometry_; }
    const std::vector<EdgeSpec>& edges() const { return edges_; }
    int channels() const { return int(edges_.size()); }

    std::span<const float> affinities() const { return affinities_; }
    std::span<const float> channel(int c) const {
        const auto n = std::size_t(geometry_.voxel_count());
        return std::span<const float>(affinities_).subspan(std::size_t(c) * n, n);
    }
    float affinity(int c, std::int64_t voxel) const {
        return affinities_[std::size_t(c) * std::size_t(geometry_.voxel_count()) + std::size_t(voxel)];
    }

    bool has_node_mask() const { return !foreground_.empty(); }
    const std::vector<std::uint8_t>& node_mask() const { return foreground_; }
    bool is_foreground(std::int64_t voxel) const {
        return foreground_.empty() || foreground_[std::size_t(voxel)] != 0;
    }

    /// Affinities as a multi-channel float32 volume (NaN marks invalid entries).
    Volume to_volume() const;

    friend bool operator==(const MetricGraph& a, const MetricGraph& b);

private:
    VoxelGeometry geometry_{};
    std::vector<EdgeSpec> edges_;
    std::vector<float> affinities_;
    std::vector<std::uint8_t> foreground_;
};

/// max((2 delta_d - ||a - b||_1) / (2 delta_d), 0)^2.
double affinity(std::span<const double> a, std::span<const double> b, double delta_d);
double affinity(std::span<const float> a, std::span<const float> b, double delta_d);

MetricGraph build_metric_graph(const Volume& embeddings, const std::vector<EdgeSpec>& edges, double delta_d);

struct MaskParams {
    /// A voxel is background when its mask value (background probability) exceeds this.
    double theta_mask = 0.6;

    void validate() const;
};

/// Removes background voxels and every affinity incident to them.
MetricGraph restrict_foreground(const MetricGraph& graph, const Volume& mask, const MaskParams& params);

/// Separable tent weight of a voxel at `local` inside a patch of `shape`; positive everywhere.
double tent_weight(Vec3 local, Vec3 shape);

/// Thrown when some in-bounds edge of the output is covered by no patch.
class CoverageError : public std::runtime_error {
public:
    CoverageError(Vec3 where, int channel, const std::string& what)
        : std::runtime_error(what), where_(where), channel_(channel) {}
    Vec3 where() const { return where_; }
    int channel() const { return channel_; }

private:
    Vec3 where_;
    int channel_;
};

/// First voxel of `target` contained in none of `covers`, if any.
std::optional<Vec3> find_coverage_gap(std::span<const Box> covers, const Box& target);

/// Incremental tent-weighted blend of patch graphs into one full-volume graph. Patches are folded
/// in arrival order as a running weighted mean, so blending identical values is exact.
class GraphBlender {
public:
    GraphBlender(const VoxelGeometry& full, std::vector<EdgeSpec> edges);

    void add(const MetricGraph& patch);
    /// Checks coverage and produces the blended graph. Entries valid in no patch are invalid.
    MetricGraph finish() &&;

    std::size_t patch_count() const { return footprints_.size(); }

private:
    VoxelGeometry full_;
    std::vector<EdgeSpec> edges_;
    std::vector<float> mean_;
    std::vector<float> weight_;
    std::vector<Box> footprints_;
};

MetricGraph blend_patches(std::span<const MetricGraph> patches, const VoxelGeometry& full);

// Serialization: a float32 VXV1 volume with one channel per edge plus a JSON sidecar listing the
// edges in channel order. Graphs with a node mask also write a uint8 VXV1 mask referenced by the
// sidecar.
std::filesystem::path sidecar_path(const std::filesystem::path& graph_path);
void write_graph(const MetricGraph& graph, const std::filesystem::path& path, double delta_d);
MetricGraph read_graph(const std::filesystem::path& path, std::optional<std::filesystem::path> sidecar = {});

std::string edges_to_json(const std::vector<EdgeSpec>& edges);
/// Accepts "default12", a JSON edge list, or a path to a sidecar / edge-list JSON file.
std::vector<EdgeSpec> parse_edges(const std::string& spec);

}  // namespace voxseg
