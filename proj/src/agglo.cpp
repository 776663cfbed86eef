#include "voxseg/agglo.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <deque>
#include <map>
#include <set>
#include <thread>
#include <unordered_map>

#include "voxseg/mws.hpp"

namespace voxseg {

namespace {

constexpr std::array<Vec3, 3> kAxes{{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}};

template <class F>
void for_each_interface(const std::vector<std::uint64_t>& lab, const VoxelGeometry& geom, F&& f) {
    const Vec3 s = geom.shape();
    std::int64_t i = 0;
    for (int z = 0; z < s.z; ++z)
        for (int y = 0; y < s.y; ++y)
            for (int x = 0; x < s.x; ++x, ++i) {
                const auto a = lab[std::size_t(i)];
                if (a == 0) continue;
                const Vec3 p{x, y, z};
                for (int axis = 0; axis < 3; ++axis) {
                    if (p[axis] + 1 >= s[axis]) continue;
                    const std::int64_t j = i + geom.linear_index(kAxes[std::size_t(axis)]);
                    const auto b = lab[std::size_t(j)];
                    if (b == 0 || b == a) continue;
                    f(i, j, axis, a, b);
                }
            }
}

/// Midpoint of pair (i, i + e_axis) in doubled local coordinates.
Vec3 doubled_midpoint(const VoxelGeometry& geom, std::int64_t i, int axis) {
    const Vec3 p = geom.delinearize(i);
    Vec3 m{2 * p.x, 2 * p.y, 2 * p.z};
    m[axis] += 1;
    return m;
}

std::uint64_t pack(Vec3 m) {
    return (std::uint64_t(std::uint32_t(m.z)) << 42) | (std::uint64_t(std::uint32_t(m.y)) << 21) |
           std::uint64_t(std::uint32_t(m.x));
}

}  // namespace

std::vector<SegmentPair> build_rag(const Volume& labels) {
    const auto lab = label_values(labels);
    std::set<SegmentPair> pairs;
    for_each_interface(lab, labels.geometry(), [&](std::int64_t, std::int64_t, int, std::uint64_t a, std::uint64_t b) {
        pairs.emplace(std::min(a, b), std::max(a, b));
    });
    return {pairs.begin(), pairs.end()};
}

std::vector<Contact> find_contacts(const Volume& labels, const MetricGraph& graph) {
    const auto& geom = labels.geometry();
    if (!(graph.geometry() == geom)) throw std::invalid_argument("labels and graph geometries differ");

    // Nearest-neighbour channel per axis: offset +e stored at i, offset -e stored at j.
    std::array<int, 3> channel{-1, -1, -1};
    std::array<bool, 3> at_j{};
    for (int c = 0; c < graph.channels(); ++c) {
        const auto& e = graph.edges()[std::size_t(c)];
        if (e.polarity != Polarity::attractive) continue;
        for (int axis = 0; axis < 3; ++axis) {
            if (channel[std::size_t(axis)] >= 0) continue;
            if (e.offset == kAxes[std::size_t(axis)]) channel[std::size_t(axis)] = c;
            else if (e.offset == -kAxes[std::size_t(axis)]) {
                channel[std::size_t(axis)] = c;
                at_j[std::size_t(axis)] = true;
            }
        }
    }

    const auto lab = label_values(labels);
    std::map<SegmentPair, std::vector<InterfacePair>> by_pair;
    for_each_interface(lab, geom, [&](std::int64_t i, std::int64_t j, int axis, std::uint64_t a, std::uint64_t b) {
        float aff = kInvalidAffinity;
        const int c = channel[std::size_t(axis)];
        if (c >= 0) aff = graph.affinity(c, at_j[std::size_t(axis)] ? j : i);
        if (a < b) by_pair[{a, b}].push_back({i, j, axis, aff});
        else by_pair[{b, a}].push_back({j, i, axis, aff});
    });

    std::vector<Contact> out;
    for (auto& [key, pairs] : by_pair) {
        std::unordered_map<std::uint64_t, std::size_t> at;
        at.reserve(pairs.size() * 2);
        std::vector<Vec3> mids(pairs.size());
        for (std::size_t k = 0; k < pairs.size(); ++k) {
            const auto lo = std::min(pairs[k].i, pairs[k].j);
            mids[k] = doubled_midpoint(geom, lo, pairs[k].axis);
            at.emplace(pack(mids[k]), k);
        }
        std::vector<std::uint8_t> seen(pairs.size(), 0);
        for (std::size_t k0 = 0; k0 < pairs.size(); ++k0) {
            if (seen[k0]) continue;
            std::vector<std::size_t> members;
            std::deque<std::size_t> q{k0};
            seen[k0] = 1;
            while (!q.empty()) {
                const auto k = q.front();
                q.pop_front();
                members.push_back(k);
                const Vec3 m = mids[k];
                for (int dz = -2; dz <= 2; ++dz)
                    for (int dy = -2; dy <= 2; ++dy)
                        for (int dx = -2; dx <= 2; ++dx) {
                            const Vec3 n{m.x + dx, m.y + dy, m.z + dz};
                            if (n.x < 0 || n.y < 0 || n.z < 0) continue;
                            const auto it = at.find(pack(n));
                            if (it == at.end() || seen[it->second]) continue;
                            seen[it->second] = 1;
                            q.push_back(it->second);
                        }
            }
            std::sort(members.begin(), members.end());
            Contact c;
            c.s1 = key.first;
            c.s2 = key.second;
            double sum = 0.0;
            std::array<std::int64_t, 3> msum{};
            for (auto k : members) {
                const auto& p = pairs[k];
                c.pairs.push_back(p);
                if (!is_invalid(p.affinity)) {
                    sum += p.affinity;
                    ++c.valid_pairs;
                }
                for (int a = 0; a < 3; ++a) msum[std::size_t(a)] += mids[k][a];
            }
            c.score = c.valid_pairs > 0 ? sum / double(c.valid_pairs) : 0.0;
            const double n2 = 2.0 * double(members.size());
            for (int a = 0; a < 3; ++a)
                c.centroid[a] = int(std::lround(double(msum[std::size_t(a)]) / n2)) + geom.origin()[a];
            out.push_back(std::move(c));
        }
    }
    return out;
}

void AggloParams::validate() const {
    if (!(theta_contact > 0) || !(theta_d > 0)) throw std::invalid_argument("agglomeration thresholds must be positive");
    for (int a = 0; a < 3; ++a) {
        if (focal[a] < 1 || patch[a] < 1) throw std::invalid_argument("focal window and patch must be positive");
        if (focal[a] > patch[a]) throw std::invalid_argument("focal window must fit inside the patch");
    }
}

std::vector<Candidate> select_candidates(const std::vector<Contact>& contacts, const AggloParams& params) {
    std::map<SegmentPair, std::vector<const Contact*>> grouped;
    for (const auto& c : contacts) grouped[{c.s1, c.s2}].push_back(&c);
    std::vector<Candidate> out;
    for (const auto& [key, list] : grouped) {
        if (list.size() < 2) continue;
        const Contact* best = list.front();
        for (const auto* c : list)
            if (c->score > best->score) best = c;
        if (!(best->score > params.theta_contact)) continue;
        out.push_back({key.first, key.second, best->centroid, best->score, int(list.size())});
    }
    return out;
}

VolumeEmbeddingProvider::VolumeEmbeddingProvider(Volume embeddings) : embeddings_(std::move(embeddings)) {
    if (embeddings_.dtype() != DType::float32) throw std::invalid_argument("embeddings must be float32");
}

Volume VolumeEmbeddingProvider::patch(const Box& box) const { return crop(embeddings_, box); }

Volume SyntheticEmbeddingProvider::patch(const Box& box) const {
    return field_->render(box, SyntheticEmbeddingField::Context::patch_limited);
}

const char* to_string(DecisionOutcome o) {
    switch (o) {
        case DecisionOutcome::merge: return "merge";
        case DecisionOutcome::keep: return "keep";
        case DecisionOutcome::empty_focal: return "empty_focal";
    }
    return "unknown";
}

Decision mean_embedding_decision(const Candidate& c, const Volume& labels, const EmbeddingProvider& provider,
                                 const AggloParams& params) {
    const auto& geom = labels.geometry();
    const Box patch = centered_box(c.centroid, params.patch, geom.extent());
    const Volume emb = provider.patch(patch);
    if (!(emb.geometry().extent() == patch) || emb.dtype() != DType::float32)
        throw std::runtime_error("embedding provider returned a patch of the wrong geometry");

    const Box focal = centered_box(c.centroid, params.focal, patch);

    const int D = emb.channels();
    const auto values = emb.values<float>();
    const auto m = std::size_t(emb.geometry().voxel_count());
    const auto lab = labels.dtype() == DType::uint32 ? std::vector<std::uint64_t>{} : label_values(labels);
    const auto label_at = [&](std::int64_t v) -> std::uint64_t {
        return lab.empty() ? labels.values<std::uint32_t>()[std::size_t(v)] : lab[std::size_t(v)];
    };

    std::vector<double> mu1(std::size_t(D), 0.0), mu2(std::size_t(D), 0.0);
    Decision out;
    out.candidate = c;
    for (int z = focal.lo.z; z < focal.hi.z; ++z)
        for (int y = focal.lo.y; y < focal.hi.y; ++y)
            for (int x = focal.lo.x; x < focal.hi.x; ++x) {
                const Vec3 g{x, y, z};
                const auto id = label_at(geom.linear_index(g - geom.origin()));
                std::vector<double>* mu = nullptr;
                if (id == c.s1) {
                    mu = &mu1;
                    ++out.focal_voxels_s1;
                } else if (id == c.s2) {
                    mu = &mu2;
                    ++out.focal_voxels_s2;
                } else {
                    continue;
                }
                const auto k = std::size_t(emb.geometry().linear_index(g - patch.lo));
                for (int d = 0; d < D; ++d) (*mu)[std::size_t(d)] += values[std::size_t(d) * m + k];
            }
    if (out.focal_voxels_s1 == 0 || out.focal_voxels_s2 == 0) {
        out.outcome = DecisionOutcome::empty_focal;
        out.distance = std::numeric_limits<double>::quiet_NaN();
        return out;
    }
    double dist = 0.0;
    for (int d = 0; d < D; ++d)
        dist += std::abs(mu1[std::size_t(d)] / double(out.focal_voxels_s1) -
                         mu2[std::size_t(d)] / double(out.focal_voxels_s2));
    out.distance = dist;
    out.outcome = dist < params.theta_d ? DecisionOutcome::merge : DecisionOutcome::keep;
    return out;
}

std::vector<Decision> decide_all(const std::vector<Candidate>& candidates, const Volume& labels,
                                 const EmbeddingProvider& provider, const AggloParams& params, int threads) {
    params.validate();
    std::vector<Decision> out(candidates.size());
    const auto work = [&](std::size_t begin, std::size_t stride) {
        for (std::size_t k = begin; k < candidates.size(); k += stride)
            out[k] = mean_embedding_decision(candidates[k], labels, provider, params);
    };
    const auto n = std::size_t(std::max(1, std::min<int>(threads, int(candidates.size()))));
    if (n <= 1) {
        work(0, 1);
        return out;
    }
    std::vector<std::exception_ptr> errors(n);
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < n; ++t)
        pool.emplace_back([&, t] {
            try {
                work(t, n);
            } catch (...) {
                errors[t] = std::current_exception();
            }
        });
    for (auto& th : pool) th.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
    return out;
}

Volume apply_merges(const Volume& labels, const std::vector<SegmentPair>& merges) {
    const auto lab = label_values(labels);
    std::map<std::uint64_t, std::uint64_t> parent;
    for (auto v : lab)
        if (v != 0) parent.emplace(v, v);
    const auto find = [&](std::uint64_t x) {
        while (parent[x] != x) x = parent[x] = parent[parent[x]];
        return x;
    };
    for (const auto& [a, b] : merges) {
        if (!parent.count(a) || !parent.count(b))
            throw std::invalid_argument("merge references missing segment " + std::to_string(parent.count(a) ? b : a));
        const auto ra = find(a), rb = find(b);
        if (ra != rb) parent[std::max(ra, rb)] = std::min(ra, rb);
    }
    std::vector<std::uint64_t> out(lab.size());
    for (std::size_t i = 0; i < lab.size(); ++i) out[i] = lab[i] == 0 ? 0 : find(lab[i]);
    return compact_labels(Volume(labels.geometry(), 1, std::move(out)));
}

Volume apply_merges(const Volume& labels, const std::vector<Decision>& decisions) {
    std::vector<SegmentPair> merges;
    for (const auto& d : decisions)
        if (d.merge()) merges.emplace_back(d.candidate.s1, d.candidate.s2);
    return apply_merges(labels, merges);
}

}  // namespace voxseg
