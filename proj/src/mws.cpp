#include "voxseg/mws.hpp"

#include <algorithm>
#include <bit>
#include <cassert>
#include <functional>
#include <unordered_map>
#include <unordered_set>

namespace voxseg {

namespace {

float priority_of(float a, Polarity p) { return p == Polarity::attractive ? a : 1.0f - a; }

/// Calls f(u, v, channel) for each edge whose endpoints are in-bounds foreground nodes with a
/// valid affinity, channel by channel, u ascending.
template <class F>
void for_each_edge(const MetricGraph& g, F&& f) {
    const auto& geom = g.geometry();
    const Vec3 s = geom.shape();
    for (int c = 0; c < g.channels(); ++c) {
        const Vec3 o = g.edges()[std::size_t(c)].offset;
        const auto aff = g.channel(c);
        const std::int64_t step = geom.linear_index(o);
        for (int z = std::max(0, -o.z); z < std::min(s.z, s.z - o.z); ++z)
            for (int y = std::max(0, -o.y); y < std::min(s.y, s.y - o.y); ++y) {
                const std::int64_t row = geom.linear_index({0, y, z});
                for (int x = std::max(0, -o.x); x < std::min(s.x, s.x - o.x); ++x) {
                    const std::int64_t u = row + x;
                    const float a = aff[std::size_t(u)];
                    if (is_invalid(a)) continue;
                    const std::int64_t v = u + step;
                    if (!g.is_foreground(u) || !g.is_foreground(v)) continue;
                    f(u, v, c, a);
                }
            }
    }
}

Volume labels_from_roots(const VoxelGeometry& geom, const MetricGraph& g,
                         const std::function<std::int64_t(std::int64_t)>& root) {
    const std::int64_t n = geom.voxel_count();
    std::vector<std::uint32_t> out(std::size_t(n), 0);
    std::unordered_map<std::int64_t, std::uint32_t> ids;
    for (std::int64_t i = 0; i < n; ++i) {
        if (!g.is_foreground(i)) continue;
        auto [it, fresh] = ids.try_emplace(root(i), std::uint32_t(ids.size() + 1));
        out[std::size_t(i)] = it->second;
    }
    return make_labels(geom, std::move(out));
}

class MutexForest {
public:
    explicit MutexForest(std::int64_t n) : parent_(std::size_t(n)), slot_(std::size_t(n), kNone) {
        for (std::size_t i = 0; i < parent_.size(); ++i) parent_[i] = std::uint32_t(i);
    }

    std::uint32_t find(std::uint32_t x) {
        while (parent_[x] != x) {
            parent_[x] = parent_[parent_[x]];
            x = parent_[x];
        }
        return x;
    }

    bool mutex(std::uint32_t ra, std::uint32_t rb) const {
        const auto* sa = set_of(ra);
        const auto* sb = set_of(rb);
        if (!sa || !sb) return false;
        return sa->size() <= sb->size() ? sa->count(rb) != 0 : sb->count(ra) != 0;
    }

    void add_mutex(std::uint32_t ra, std::uint32_t rb) {
        ensure(ra).insert(rb);
        ensure(rb).insert(ra);
    }

    /// Unions two roots; the one with the larger mutex set survives. Returns the new root.
    std::uint32_t merge(std::uint32_t ra, std::uint32_t rb) {
        if (size_of(ra) < size_of(rb)) std::swap(ra, rb);
        parent_[rb] = ra;
        if (slot_[rb] != kNone) {
            auto& from = sets_[slot_[rb]];
            if (!from.empty()) {
                auto& into = ensure(ra);
                for (auto p : from) {
                    auto& back = sets_[slot_[p]];
                    back.erase(rb);
                    back.insert(ra);
                    into.insert(p);
                }
            }
            from = {};
            free_.push_back(slot_[rb]);
            slot_[rb] = kNone;
        }
        assert(!mutex(ra, ra));
        return ra;
    }

private:
    static constexpr std::uint32_t kNone = 0xffffffffu;

    const std::unordered_set<std::uint32_t>* set_of(std::uint32_t r) const {
        return slot_[r] == kNone ? nullptr : &sets_[slot_[r]];
    }
    std::size_t size_of(std::uint32_t r) const {
        const auto* s = set_of(r);
        return s ? s->size() : 0;
    }
    std::unordered_set<std::uint32_t>& ensure(std::uint32_t r) {
        if (slot_[r] == kNone) {
            if (!free_.empty()) {
                slot_[r] = free_.back();
                free_.pop_back();
            } else {
                slot_[r] = std::uint32_t(sets_.size());
                sets_.emplace_back();
            }
        }
        return sets_[slot_[r]];
    }

    std::vector<std::uint32_t> parent_;
    std::vector<std::uint32_t> slot_;
    std::vector<std::unordered_set<std::uint32_t>> sets_;
    std::vector<std::uint32_t> free_;
};

}  // namespace

std::vector<SignedEdge> enumerate_signed_edges(const MetricGraph& g) {
    std::vector<SignedEdge> edges;
    for_each_edge(g, [&](std::int64_t u, std::int64_t v, int c, float a) {
        const auto pol = g.edges()[std::size_t(c)].polarity;
        edges.push_back({u, v, priority_of(a, pol), pol, c});
    });
    return edges;
}

bool precedes(const SignedEdge& a, const SignedEdge& b) {
    if (a.priority != b.priority) return a.priority > b.priority;
    if (a.polarity != b.polarity) return a.polarity == Polarity::attractive;
    if (a.channel != b.channel) return a.channel < b.channel;
    return a.u < b.u;
}

Volume mutex_watershed(const MetricGraph& g, MwsTrace* trace) {
    const auto& geom = g.geometry();
    const std::int64_t n = geom.voxel_count();
    if (n >= std::int64_t(0xffffffffu)) throw std::length_error("volume too large for the mutex watershed");
    const int C = g.channels();

    // Channel ranks: attractive channels first, each group in channel order.
    std::vector<int> rank(std::size_t(C), 0);
    std::vector<int> by_rank;
    for (auto pol : {Polarity::attractive, Polarity::repulsive})
        for (int c = 0; c < C; ++c)
            if (g.edges()[std::size_t(c)].polarity == pol) {
                rank[std::size_t(c)] = int(by_rank.size());
                by_rank.push_back(c);
            }

    const int vbits = std::max(1, int(std::bit_width(std::uint64_t(n))));
    const int cbits = std::max(1, int(std::bit_width(std::uint64_t(std::max(C - 1, 1)))));
    constexpr int pbits = 30;  // float bits of a value in [0, 1] fit in 30 bits
    constexpr std::uint32_t kOne = 0x3f800000u;

    std::vector<std::int64_t> step(std::size_t(C), 0);
    for (int c = 0; c < C; ++c) step[std::size_t(c)] = geom.linear_index(g.edges()[std::size_t(c)].offset);

    MutexForest forest(n);
    const auto process = [&](std::int64_t ref, int channel) {
        const auto u = std::uint32_t(ref), v = std::uint32_t(ref + step[std::size_t(channel)]);
        const auto ru = forest.find(u), rv = forest.find(v);
        if (ru == rv || forest.mutex(ru, rv)) return;
        if (g.edges()[std::size_t(channel)].polarity == Polarity::attractive) {
            forest.merge(ru, rv);
        } else {
            forest.add_mutex(ru, rv);
            if (trace) trace->mutex_edges.emplace_back(u, v);
        }
    };

    if (pbits + cbits + vbits <= 64) {
        // One sortable word per edge: inverted priority bits, channel rank, reference voxel.
        std::vector<std::uint64_t> keys;
        for_each_edge(g, [&](std::int64_t u, std::int64_t, int c, float a) {
            const float p = std::clamp(priority_of(a, g.edges()[std::size_t(c)].polarity), 0.0f, 1.0f);
            const std::uint64_t inv = kOne - std::bit_cast<std::uint32_t>(p);
            keys.push_back((inv << (cbits + vbits)) | (std::uint64_t(rank[std::size_t(c)]) << vbits) |
                           std::uint64_t(u));
        });
        std::sort(keys.begin(), keys.end());
        const std::uint64_t vmask = (std::uint64_t(1) << vbits) - 1, cmask = (std::uint64_t(1) << cbits) - 1;
        for (auto k : keys) process(std::int64_t(k & vmask), by_rank[std::size_t((k >> vbits) & cmask)]);
    } else {
        auto edges = enumerate_signed_edges(g);
        std::sort(edges.begin(), edges.end(), precedes);
        for (const auto& e : edges) process(e.u, e.channel);
    }
    return labels_from_roots(geom, g, [&](std::int64_t i) { return std::int64_t(forest.find(std::uint32_t(i))); });
}

Volume mutex_watershed_reference(const MetricGraph& g, MwsTrace* trace) {
    const auto& geom = g.geometry();
    const std::int64_t n = geom.voxel_count();
    auto edges = enumerate_signed_edges(g);
    std::stable_sort(edges.begin(), edges.end(), [](const SignedEdge& a, const SignedEdge& b) {
        if (a.priority != b.priority) return a.priority > b.priority;
        return a.polarity == Polarity::attractive && b.polarity == Polarity::repulsive;
    });

    std::vector<std::int64_t> comp(std::size_t(n), 0);
    for (std::int64_t i = 0; i < n; ++i) comp[std::size_t(i)] = i;
    std::vector<std::pair<std::int64_t, std::int64_t>> mutexes;
    const auto is_mutex = [&](std::int64_t a, std::int64_t b) {
        for (const auto& [p, q] : mutexes) {
            const auto cp = comp[std::size_t(p)], cq = comp[std::size_t(q)];
            if ((cp == a && cq == b) || (cp == b && cq == a)) return true;
        }
        return false;
    };

    for (const auto& e : edges) {
        const auto a = comp[std::size_t(e.u)], b = comp[std::size_t(e.v)];
        if (a == b || is_mutex(a, b)) continue;
        if (e.polarity == Polarity::attractive) {
            for (auto& c : comp)
                if (c == b) c = a;
        } else {
            mutexes.emplace_back(e.u, e.v);
            if (trace) trace->mutex_edges.emplace_back(e.u, e.v);
        }
    }
    return labels_from_roots(geom, g, [&](std::int64_t i) { return comp[std::size_t(i)]; });
}

Volume compact_labels(const Volume& labels) {
    const auto lab = label_values(labels);
    std::vector<std::uint32_t> out(lab.size(), 0);
    std::unordered_map<std::uint64_t, std::uint32_t> ids;
    for (std::size_t i = 0; i < lab.size(); ++i) {
        if (lab[i] == 0) continue;
        auto [it, fresh] = ids.try_emplace(lab[i], std::uint32_t(ids.size() + 1));
        out[i] = it->second;
    }
    return make_labels(labels.geometry(), std::move(out));
}

bool same_partition(const Volume& a, const Volume& b) {
    if (!(a.geometry() == b.geometry())) return false;
    return compact_labels(a) == compact_labels(b);
}

}  // namespace voxseg
