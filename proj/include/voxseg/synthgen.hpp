#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <vector>

#include "voxseg/volume.hpp"

namespace voxseg {

/// Parameters of a synthetic ground-truth volume.
struct SynthSpec {
    Vec3 shape{64, 64, 16};
    int objects = 4;
    double radius_min = 1.5;
    double radius_max = 2.5;
    /// Minimum number of background voxels between two distinct objects along any axis.
    int gap = 2;
    /// Objects drawn as closed rings whose end meets their own start.
    int self_contacts = 0;
    double ring_radius_min = 12.0;
    double ring_radius_max = 15.0;
    std::uint64_t seed = 0;
    int max_attempts = 500;

    void validate() const;
};

class InfeasibleSpecError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class ObjectKind : std::uint8_t { tube, ring };

struct ObjectInfo {
    std::uint32_t id = 0;
    ObjectKind kind = ObjectKind::tube;
    std::int64_t voxels = 0;
    double arc_length = 0.0;
    /// Global voxel where the object's end touches its start (rings only).
    Vec3 seam{};
};

struct GroundTruth {
    Volume labels;  // uint32
    /// Position along each object's centerline (float32, 0 on background).
    Volume arc;
    std::vector<ObjectInfo> objects;
};

GroundTruth generate_ground_truth(const SynthSpec& spec);

struct EmbeddingSpec {
    int dims = 24;
    double delta_d = 1.5;
    /// Minimum L1 distance between any two sampled centers.
    double min_separation = 3.0;
    double sigma = 0.0;
    double background_amplitude = 1.0;
    /// When set, an object with two touching parts more than this far apart along its centerline
    /// gets a second center, reached over a linear ramp around the middle of the object.
    std::optional<double> context_radius;
    double ramp_length = 24.0;
    /// L1 distance between an object's two centers.
    double split_distance = 3.5;
    std::uint64_t seed = 0;

    void validate() const;
};

/// Deterministic ideal embeddings for a label volume, renderable on any sub-box.
class SyntheticEmbeddingField {
public:
    enum class Context {
        /// Context splitting decided on the whole object.
        global,
        /// Context splitting decided only from what lies inside the rendered box.
        patch_limited,
    };

    /// `arc` is an optional float32 centerline position per voxel; without one, a geodesic
    /// distance from an extremal voxel of each object is used.
    SyntheticEmbeddingField(const Volume& labels, const Volume* arc, const EmbeddingSpec& spec);

    const EmbeddingSpec& spec() const { return spec_; }
    const VoxelGeometry& geometry() const { return geometry_; }

    /// Float32 embeddings on the global box `box` (clipped to the volume), channel d = dimension d.
    Volume render(const Box& box, Context context = Context::global) const;
    Volume render_all() const { return render(geometry().extent()); }

    std::size_t object_count() const { return ids_.size(); }
    /// Whether the object gets two centers in the given box.
    bool is_split(std::uint64_t id, const Box& box, Context context) const;
    const std::vector<double>& center(std::uint64_t id, int which = 0) const;

private:
    struct Object {
        std::uint64_t id = 0;
        std::vector<double> center_a;
        std::vector<double> center_b;
        double arc_length = 0.0;
        /// 6-adjacent voxel pairs whose centerline positions differ by more than the context radius.
        std::vector<std::pair<Vec3, Vec3>> jumps;
    };

    std::size_t object_index(std::uint64_t id) const;

    VoxelGeometry geometry_;
    /// Object index + 1 per voxel, 0 on background.
    std::vector<std::uint32_t> slot_;
    std::vector<float> arc_;
    EmbeddingSpec spec_;
    std::vector<std::uint64_t> ids_;
    std::vector<Object> objects_;
};

Volume generate_embeddings(const Volume& labels, const EmbeddingSpec& spec, const Volume* arc = nullptr);
Volume generate_embeddings(const GroundTruth& truth, const EmbeddingSpec& spec);

/// Geodesic (6-connected BFS) distance per object from the far end of a double sweep.
Volume geodesic_arc(const Volume& labels);

struct MaskResult {
    /// Background probability: 1 on background, 0 on foreground, inverted where flipped.
    Volume mask;
    std::int64_t flips = 0;
};

MaskResult generate_background_mask(const Volume& labels, double flip_rate, std::uint64_t seed);

}  // namespace voxseg
