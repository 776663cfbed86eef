#include "voxseg/metricgraph.hpp"

#include <algorithm>
#include <cstring>
#include <sstream>

namespace voxseg {

namespace {

// Local reference-voxel range [lo, hi) whose partner at `offset` stays inside `shape`.
Box reference_range(Vec3 shape, Vec3 offset) {
    Box r;
    for (int k = 0; k < 3; ++k) {
        r.lo[k] = std::max(0, -offset[k]);
        r.hi[k] = std::max(r.lo[k], std::min(shape[k], shape[k] - offset[k]));
    }
    return r;
}

template <class T>
double l1_affinity(std::span<const T> a, std::span<const T> b, double delta_d) {
    if (a.size() != b.size()) throw std::invalid_argument("affinity: embedding dimensions differ");
    if (!(delta_d > 0.0)) throw std::invalid_argument("affinity: delta_d must be positive");
    double dist = 0.0;
    for (std::size_t d = 0; d < a.size(); ++d) dist += std::abs(double(a[d]) - double(b[d]));
    const double h = std::max((2.0 * delta_d - dist) / (2.0 * delta_d), 0.0);
    return h * h;
}

}  // namespace

std::string to_string(Polarity p) { return p == Polarity::attractive ? "attractive" : "repulsive"; }

Polarity polarity_from_string(const std::string& s) {
    if (s == "attractive") return Polarity::attractive;
    if (s == "repulsive") return Polarity::repulsive;
    throw std::invalid_argument("unknown edge polarity '" + s + "'");
}

std::vector<EdgeSpec> default_edges() {
    using P = Polarity;
    return {
        {{-1, 0, 0}, P::attractive},  {{0, -1, 0}, P::attractive},  {{0, 0, -1}, P::attractive},
        {{0, 0, -2}, P::repulsive},   {{-5, 0, 0}, P::repulsive},   {{0, -5, 0}, P::repulsive},
        {{-5, -5, 0}, P::repulsive},  {{-5, 5, 0}, P::repulsive},   {{-5, 0, -1}, P::repulsive},
        {{0, -5, -1}, P::repulsive},  {{-5, 0, 1}, P::repulsive},   {{0, -5, 1}, P::repulsive},
    };
}

MetricGraph::MetricGraph(const VoxelGeometry& geometry, std::vector<EdgeSpec> edges, std::vector<float> affinities,
                         std::vector<std::uint8_t> foreground)
    : geometry_(geometry), edges_(std::move(edges)), affinities_(std::move(affinities)), foreground_(std::move(foreground)) {
    const auto n = std::size_t(geometry_.voxel_count());
    if (edges_.empty()) throw std::invalid_argument("metric graph needs at least one edge");
    for (const auto& e : edges_)
        if (e.offset == Vec3{}) throw std::invalid_argument("edge offset must be non-zero");
    if (affinities_.size() != n * edges_.size())
        throw std::invalid_argument("metric graph affinity array has the wrong size");
    if (!foreground_.empty() && foreground_.size() != n)
        throw std::invalid_argument("metric graph node mask has the wrong size");
}

Volume MetricGraph::to_volume() const { return Volume(geometry_, channels(), affinities_); }

bool operator==(const MetricGraph& a, const MetricGraph& b) {
    return a.geometry_ == b.geometry_ && a.edges_ == b.edges_ && a.foreground_ == b.foreground_ &&
           a.affinities_.size() == b.affinities_.size() &&
           std::memcmp(a.affinities_.data(), b.affinities_.data(), a.affinities_.size() * sizeof(float)) == 0;
}

double affinity(std::span<const double> a, std::span<const double> b, double delta_d) {
    return l1_affinity(a, b, delta_d);
}

double affinity(std::span<const float> a, std::span<const float> b, double delta_d) {
    return l1_affinity(a, b, delta_d);
}

MetricGraph build_metric_graph(const Volume& embeddings, const std::vector<EdgeSpec>& edges, double delta_d) {
    if (edges.empty()) throw std::invalid_argument("build_metric_graph: empty edge list");
    if (!(delta_d > 0.0)) throw std::invalid_argument("build_metric_graph: delta_d must be positive");
    const auto& g = embeddings.geometry();
    const Vec3 shape = g.shape();
    const auto n = std::size_t(g.voxel_count());
    const int dims = embeddings.channels();
    const auto x = embeddings.values<float>();
    std::vector<float> out(n * edges.size(), kInvalidAffinity);
    std::vector<double> dist(std::size_t(shape.x));

    // Same accumulation order as affinity(): dimensions ascending, in double.
    for (std::size_t c = 0; c < edges.size(); ++c) {
        const Vec3 o = edges[c].offset;
        const Box r = reference_range(shape, o);
        if (r.empty()) continue;
        const auto delta = std::ptrdiff_t(g.linear_index(o + Vec3{0, 0, 0}) - g.linear_index({0, 0, 0}));
        const int run = r.hi.x - r.lo.x;
        for (int z = r.lo.z; z < r.hi.z; ++z)
            for (int y = r.lo.y; y < r.hi.y; ++y) {
                const auto base = std::size_t(g.linear_index({r.lo.x, y, z}));
                std::fill_n(dist.begin(), run, 0.0);
                for (int d = 0; d < dims; ++d) {
                    const float* xa = x.data() + std::size_t(d) * n + base;
                    const float* xb = xa + delta;
                    for (int k = 0; k < run; ++k) dist[std::size_t(k)] += std::abs(double(xa[k]) - double(xb[k]));
                }
                float* dst = out.data() + c * n + base;
                for (int k = 0; k < run; ++k) {
                    const double h = std::max((2.0 * delta_d - dist[std::size_t(k)]) / (2.0 * delta_d), 0.0);
                    dst[k] = float(h * h);
                }
            }
    }
    return MetricGraph(g, edges, std::move(out));
}

void MaskParams::validate() const {
    if (!(theta_mask > 0.0 && theta_mask < 1.0)) throw std::invalid_argument("theta_mask must lie in (0, 1)");
}

MetricGraph restrict_foreground(const MetricGraph& graph, const Volume& mask, const MaskParams& params) {
    params.validate();
    const auto& g = graph.geometry();
    if (mask.geometry().shape() != g.shape() || mask.channels() != 1)
        throw std::invalid_argument("restrict_foreground: mask must be single-channel with the graph's shape");
    const auto m = mask.values<float>();
    const auto n = std::size_t(g.voxel_count());

    std::vector<std::uint8_t> fg(n);
    for (std::size_t i = 0; i < n; ++i)
        fg[i] = (graph.is_foreground(std::int64_t(i)) && !(double(m[i]) > params.theta_mask)) ? 1 : 0;

    std::vector<float> aff(graph.affinities().begin(), graph.affinities().end());
    const Vec3 shape = g.shape();
    for (int c = 0; c < graph.channels(); ++c) {
        const Vec3 o = graph.edges()[std::size_t(c)].offset;
        float* dst = aff.data() + std::size_t(c) * n;
        std::size_t i = 0;
        for (int z = 0; z < shape.z; ++z)
            for (int y = 0; y < shape.y; ++y)
                for (int x = 0; x < shape.x; ++x, ++i) {
                    if (is_invalid(dst[i])) continue;
                    const Vec3 q{x + o.x, y + o.y, z + o.z};
                    if (!fg[i] || !g.in_bounds(q) || !fg[std::size_t(g.linear_index(q))]) dst[i] = kInvalidAffinity;
                }
    }
    return MetricGraph(g, graph.edges(), std::move(aff), std::move(fg));
}

double tent_weight(Vec3 local, Vec3 shape) {
    constexpr double kFloor = 1e-6;
    double w = 1.0;
    for (int k = 0; k < 3; ++k) {
        const double half = 0.5 * shape[k];
        const double t = 1.0 - std::abs(local[k] + 0.5 - half) / half;
        w *= std::max(t, kFloor);
    }
    return w;
}

std::optional<Vec3> find_coverage_gap(std::span<const Box> covers, const Box& target) {
    if (target.empty()) return std::nullopt;
    std::vector<int> cuts[3];
    for (int k = 0; k < 3; ++k) {
        cuts[k] = {target.lo[k], target.hi[k]};
        for (const auto& b : covers) {
            if (b.empty()) continue;
            cuts[k].push_back(std::clamp(b.lo[k], target.lo[k], target.hi[k]));
            cuts[k].push_back(std::clamp(b.hi[k], target.lo[k], target.hi[k]));
        }
        std::sort(cuts[k].begin(), cuts[k].end());
        cuts[k].erase(std::unique(cuts[k].begin(), cuts[k].end()), cuts[k].end());
    }
    // Every compressed cell lies entirely inside or outside each box, so testing its corner suffices.
    std::vector<const Box*> in_x;
    for (std::size_t ix = 0; ix + 1 < cuts[0].size(); ++ix) {
        const int x = cuts[0][ix];
        in_x.clear();
        for (const auto& b : covers)
            if (!b.empty() && b.lo.x <= x && x < b.hi.x) in_x.push_back(&b);
        for (std::size_t iy = 0; iy + 1 < cuts[1].size(); ++iy)
            for (std::size_t iz = 0; iz + 1 < cuts[2].size(); ++iz) {
                const Vec3 p{x, cuts[1][iy], cuts[2][iz]};
                const bool covered = std::any_of(in_x.begin(), in_x.end(), [&](const Box* b) { return b->contains(p); });
                if (!covered) return p;
            }
    }
    return std::nullopt;
}

GraphBlender::GraphBlender(const VoxelGeometry& full, std::vector<EdgeSpec> edges)
    : full_(full), edges_(std::move(edges)) {
    if (edges_.empty()) throw std::invalid_argument("blend: empty edge list");
    const auto n = std::size_t(full_.voxel_count()) * edges_.size();
    mean_.assign(n, 0.0f);
    weight_.assign(n, 0.0f);
}

void GraphBlender::add(const MetricGraph& patch) {
    if (patch.edges() != edges_) throw std::invalid_argument("blend: patch edge set differs from the output's");
    const auto& pg = patch.geometry();
    const Box foot = pg.extent();
    if (!full_.extent().contains(foot)) {
        std::ostringstream msg;
        msg << "blend: patch " << foot << " lies outside the output extent " << full_.extent();
        throw std::invalid_argument(msg.str());
    }
    footprints_.push_back(foot);

    const Vec3 shape = pg.shape();
    const auto n_full = std::size_t(full_.voxel_count());
    std::vector<double> wx(std::size_t(shape.x));
    for (std::size_t c = 0; c < edges_.size(); ++c) {
        const auto src = patch.channel(int(c));
        float* mean = mean_.data() + c * n_full;
        float* weight = weight_.data() + c * n_full;
        // Only edges with both ends inside the patch are taken.
        const Box seen = reference_range(shape, edges_[c].offset);
        for (int z = seen.lo.z; z < seen.hi.z; ++z)
            for (int y = seen.lo.y; y < seen.hi.y; ++y) {
                for (int x = 0; x < shape.x; ++x) wx[std::size_t(x)] = tent_weight({x, y, z}, shape);
                const auto local = std::size_t(pg.linear_index({0, y, z}));
                const auto global = std::size_t(full_.linear_index(pg.origin() + Vec3{0, y, z} - full_.origin()));
                for (int x = seen.lo.x; x < seen.hi.x; ++x) {
                    const float a = src[local + std::size_t(x)];
                    if (is_invalid(a)) continue;
                    const auto i = global + std::size_t(x);
                    const double w = wx[std::size_t(x)];
                    const double total = double(weight[i]) + w;
                    if (weight[i] == 0.0f) {
                        mean[i] = a;
                    } else {
                        const double m = mean[i];
                        mean[i] = float(m + (w / total) * (double(a) - m));
                    }
                    weight[i] = float(total);
                }
            }
    }
}

MetricGraph GraphBlender::finish() && {
    const Box full_box = full_.extent();
    std::vector<Box> covers(footprints_.size());
    for (std::size_t c = 0; c < edges_.size(); ++c) {
        const Vec3 o = edges_[c].offset;
        // Reference voxels whose partner is in bounds, and per patch the ones it can see whole.
        const Box target = intersect(full_box, translate(full_box, -o));
        for (std::size_t p = 0; p < footprints_.size(); ++p)
            covers[p] = intersect(footprints_[p], translate(footprints_[p], -o));
        if (auto gap = find_coverage_gap(covers, target)) {
            std::ostringstream msg;
            msg << "blend: coverage gap for edge " << c << " offset " << o << " at voxel " << *gap;
            throw CoverageError(*gap, int(c), msg.str());
        }
    }
    for (std::size_t i = 0; i < mean_.size(); ++i) {
        if (weight_[i] == 0.0f) mean_[i] = kInvalidAffinity;
        else mean_[i] = std::clamp(mean_[i], 0.0f, 1.0f);
    }
    weight_.clear();
    weight_.shrink_to_fit();
    return MetricGraph(full_, std::move(edges_), std::move(mean_));
}

MetricGraph blend_patches(std::span<const MetricGraph> patches, const VoxelGeometry& full) {
    if (patches.empty()) throw std::invalid_argument("blend: no patches");
    GraphBlender blender(full, patches.front().edges());
    for (const auto& p : patches) blender.add(p);
    return std::move(blender).finish();
}

}  // namespace voxseg
