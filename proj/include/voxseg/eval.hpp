#pragma once

#include <cstdint>

#include "voxseg/agglo.hpp"
#include "voxseg/volume.hpp"

namespace voxseg {

/// Conditional entropies in nats over voxels where the truth is nonzero.
struct VIReport {
    double vi_split = 0.0;  // H(S|T)
    double vi_merge = 0.0;  // H(T|S)
    double vi = 0.0;
    std::int64_t foreground = 0;
    bool empty = false;
};

/// Segment 0 inside the truth foreground counts as one more segment.
VIReport variation_of_information(const Volume& seg, const Volume& truth);

/// 1 - F1 of pair-counting precision and recall over the truth foreground.
double adapted_rand_error(const Volume& seg, const Volume& truth);

struct LocalVIDiff {
    double value = 0.0;
    /// False when s1 or s2 does not occur inside the patch (value is then 0).
    bool present = true;
    Box patch;
};

/// VI(after merging s2 into s1) - VI(before), both on the patch centred on the candidate.
LocalVIDiff vi_diff_local(const Volume& seg, const Volume& truth, const Candidate& candidate, Vec3 patch_shape);

}  // namespace voxseg
