#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "voxseg/metricgraph.hpp"
#include "voxseg/volume.hpp"

namespace voxseg {

struct SignedEdge {
    std::int64_t u = 0;  // reference voxel
    std::int64_t v = 0;  // u + offset
    float priority = 0.0f;
    Polarity polarity = Polarity::attractive;
    int channel = 0;
};

/// Every valid edge between two foreground voxels, in (channel, voxel) order. Attractive edges
/// get priority a, repulsive edges 1 - a.
std::vector<SignedEdge> enumerate_signed_edges(const MetricGraph& g);

/// Processing order: priority descending, attractive before repulsive, then channel, then voxel.
bool precedes(const SignedEdge& a, const SignedEdge& b);

/// Optional record of the repulsive edges that became mutex constraints, as voxel pairs.
struct MwsTrace {
    std::vector<std::pair<std::int64_t, std::int64_t>> mutex_edges;
};

/// Mutex Watershed over the foreground nodes of `g`. Labels are uint32, dense 1..K in first-visit
/// scan order, 0 on background.
Volume mutex_watershed(const MetricGraph& g, MwsTrace* trace = nullptr);

/// Same contract with naive data structures: full relabeling on merge, linear mutex lookup.
Volume mutex_watershed_reference(const MetricGraph& g, MwsTrace* trace = nullptr);

/// Relabels so that ids are 1..K in order of first appearance; 0 stays 0.
Volume compact_labels(const Volume& labels);

/// True when both label volumes induce the same partition (0 must match 0).
bool same_partition(const Volume& a, const Volume& b);

}  // namespace voxseg
