#pragma once

#include <cstdint>
#include <memory>
#include <utility>
#include <vector>

#include "voxseg/metricgraph.hpp"
#include "voxseg/synthgen.hpp"
#include "voxseg/volume.hpp"

namespace voxseg {

using SegmentPair = std::pair<std::uint64_t, std::uint64_t>;

/// Sorted pairs (a, b), a < b, of nonzero labels that are face neighbours somewhere.
std::vector<SegmentPair> build_rag(const Volume& labels);

/// Face-adjacent voxels i (in s1) and j = i + e_axis (in s2), local linear indices.
struct InterfacePair {
    std::int64_t i = 0;
    std::int64_t j = 0;
    int axis = 0;
    float affinity = kInvalidAffinity;
};

struct Contact {
    std::uint64_t s1 = 0;  // s1 < s2
    std::uint64_t s2 = 0;
    std::vector<InterfacePair> pairs;
    /// Mean valid nearest-neighbour affinity; 0 when no pair has a valid affinity.
    double score = 0.0;
    std::int64_t valid_pairs = 0;
    /// Rounded mean of the pair midpoints, global coordinates.
    Vec3 centroid{};
};

/// Interfaces between every adjacent segment pair, split into contacts: groups of pairs whose
/// midpoints are 26-connected. Sorted by (s1, s2), then by first pair in scan order.
std::vector<Contact> find_contacts(const Volume& labels, const MetricGraph& graph);

struct AggloParams {
    double theta_contact = 0.25;
    double theta_d = 1.5;
    Vec3 focal{32, 32, 5};
    /// Shape of the embedding patch requested around each candidate.
    Vec3 patch{32, 32, 16};

    void validate() const;
};

struct Candidate {
    std::uint64_t s1 = 0;
    std::uint64_t s2 = 0;
    Vec3 centroid{};
    double max_score = 0.0;
    int contacts = 0;
};

/// Pairs with at least two contacts whose best score exceeds theta_contact, ordered by ids.
std::vector<Candidate> select_candidates(const std::vector<Contact>& contacts, const AggloParams& params);

/// Supplies embeddings for a requested global box.
class EmbeddingProvider {
public:
    virtual ~EmbeddingProvider() = default;
    /// Float32 embeddings whose geometry is exactly `box`.
    virtual Volume patch(const Box& box) const = 0;
};

/// Slices a precomputed full-volume embedding.
class VolumeEmbeddingProvider : public EmbeddingProvider {
public:
    explicit VolumeEmbeddingProvider(Volume embeddings);
    Volume patch(const Box& box) const override;

private:
    Volume embeddings_;
};

/// Re-renders synthetic embeddings with context limited to the requested patch.
class SyntheticEmbeddingProvider : public EmbeddingProvider {
public:
    explicit SyntheticEmbeddingProvider(std::shared_ptr<const SyntheticEmbeddingField> field)
        : field_(std::move(field)) {}
    Volume patch(const Box& box) const override;

private:
    std::shared_ptr<const SyntheticEmbeddingField> field_;
};

enum class DecisionOutcome : std::uint8_t { merge, keep, empty_focal };
const char* to_string(DecisionOutcome o);

struct Decision {
    Candidate candidate;
    double distance = 0.0;
    DecisionOutcome outcome = DecisionOutcome::keep;
    std::int64_t focal_voxels_s1 = 0;
    std::int64_t focal_voxels_s2 = 0;

    bool merge() const { return outcome == DecisionOutcome::merge; }
};

Decision mean_embedding_decision(const Candidate& c, const Volume& labels, const EmbeddingProvider& provider,
                                 const AggloParams& params);

/// Decisions for every candidate, computed independently on `threads` workers; output order
/// follows the input order.
std::vector<Decision> decide_all(const std::vector<Candidate>& candidates, const Volume& labels,
                                 const EmbeddingProvider& provider, const AggloParams& params, int threads = 1);

/// Union of the merged pairs, transitively closed, then compacted in scan order.
Volume apply_merges(const Volume& labels, const std::vector<SegmentPair>& merges);
Volume apply_merges(const Volume& labels, const std::vector<Decision>& decisions);

}  // namespace voxseg
