#include "voxseg/synthgen.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <deque>
#include <numbers>
#include <string>
#include <unordered_map>

#include "voxseg/random.hpp"

namespace voxseg {

namespace {

struct Point {
    double x, y, z;
};

struct Candidate {
    std::vector<std::int64_t> voxels;  // ascending
    std::vector<float> arc;            // parallel to voxels
    double arc_length = 0.0;
    Vec3 seam{};
};

std::uint64_t coord_key(Vec3 g) {
    const auto enc = [](int v) { return std::uint64_t(std::uint32_t(v + (1 << 20)) & 0x1fffffu); };
    return (enc(g.z) << 42) | (enc(g.y) << 21) | enc(g.x);
}

class Occupancy {
public:
    Occupancy(Vec3 shape, int gap) : geom_(shape), gap_(gap), forbidden_(std::size_t(geom_.voxel_count()), 0) {}

    bool fits(const Candidate& c) const {
        return std::none_of(c.voxels.begin(), c.voxels.end(),
                            [&](std::int64_t v) { return forbidden_[std::size_t(v)] != 0; });
    }

    void claim(const Candidate& c) {
        const Vec3 s = geom_.shape();
        for (auto v : c.voxels) {
            const Vec3 p = geom_.delinearize(v);
            for (int z = std::max(0, p.z - gap_); z <= std::min(s.z - 1, p.z + gap_); ++z)
                for (int y = std::max(0, p.y - gap_); y <= std::min(s.y - 1, p.y + gap_); ++y)
                    for (int x = std::max(0, p.x - gap_); x <= std::min(s.x - 1, p.x + gap_); ++x)
                        forbidden_[std::size_t(geom_.linear_index({x, y, z}))] = 1;
        }
    }

private:
    VoxelGeometry geom_;
    int gap_;
    std::vector<std::uint8_t> forbidden_;
};

bool is_connected(const VoxelGeometry& geom, const std::vector<std::int64_t>& voxels) {
    if (voxels.empty()) return false;
    std::unordered_map<std::int64_t, bool> seen;
    seen.reserve(voxels.size() * 2);
    for (auto v : voxels) seen.emplace(v, false);
    std::deque<std::int64_t> queue{voxels.front()};
    seen[voxels.front()] = true;
    std::size_t reached = 1;
    static constexpr std::array<Vec3, 6> nb{{{1, 0, 0}, {-1, 0, 0}, {0, 1, 0}, {0, -1, 0}, {0, 0, 1}, {0, 0, -1}}};
    while (!queue.empty()) {
        const Vec3 p = geom.delinearize(queue.front());
        queue.pop_front();
        for (const auto& o : nb) {
            const Vec3 q = p + o;
            if (!geom.in_bounds(q)) continue;
            auto it = seen.find(geom.linear_index(q));
            if (it == seen.end() || it->second) continue;
            it->second = true;
            ++reached;
            queue.push_back(it->first);
        }
    }
    return reached == voxels.size();
}

Candidate finalize(std::unordered_map<std::int64_t, std::pair<double, double>>& best) {
    Candidate c;
    std::vector<std::pair<std::int64_t, double>> items;
    items.reserve(best.size());
    for (const auto& [v, da] : best) items.emplace_back(v, da.second);
    std::sort(items.begin(), items.end());
    for (const auto& [v, a] : items) {
        c.voxels.push_back(v);
        c.arc.push_back(float(a));
    }
    return c;
}

Candidate make_tube(const VoxelGeometry& geom, const SynthSpec& spec, rng::Stream& rs) {
    const Vec3 s = geom.shape();
    const int segments = 1 + int(rs.below(3));
    std::vector<Point> pts;
    std::vector<double> radius;
    const auto draw = [&](int n, double margin) {
        const double lo = std::min(margin, (n - 1) / 2.0);
        return rs.uniform(lo, n - 1 - lo);
    };
    const double margin = std::ceil(spec.radius_max);
    // Random walk of segments no longer than a third of the larger in-plane extent, so that several
    // tubes fit side by side.
    const double max_len = std::max(6.0, std::max(s.x, s.y) / 3.0);
    const auto inside = [&](const Point& p) {
        const auto ok = [&](double v, int n) {
            const double lo = std::min(margin, (n - 1) / 2.0);
            return v >= lo && v <= n - 1 - lo;
        };
        return ok(p.x, s.x) && ok(p.y, s.y) && ok(p.z, s.z);
    };
    pts.push_back({draw(s.x, margin), draw(s.y, margin), draw(s.z, margin)});
    for (int k = 0; k < segments; ++k) {
        Point p{};
        bool ok = false;
        for (int tries = 0; tries < 32 && !ok; ++tries) {
            const double len = rs.uniform(6.0, max_len);
            const double cz = rs.uniform(-1.0, 1.0), phi = rs.uniform(0.0, 2.0 * std::numbers::pi);
            const double sz = std::sqrt(1.0 - cz * cz);
            const Point& q = pts.back();
            p = {q.x + len * sz * std::cos(phi), q.y + len * sz * std::sin(phi), q.z + len * cz};
            ok = inside(p);
        }
        if (!ok) break;
        pts.push_back(p);
        radius.push_back(rs.uniform(spec.radius_min, spec.radius_max));
    }
    if (radius.empty()) return {};

    // voxel -> (distance to the closest segment, centerline position there)
    std::unordered_map<std::int64_t, std::pair<double, double>> best;
    double arc0 = 0.0;
    for (int k = 0; k < int(radius.size()); ++k) {
        const Point a = pts[std::size_t(k)], b = pts[std::size_t(k) + 1];
        const double r = radius[std::size_t(k)];
        const double dx = b.x - a.x, dy = b.y - a.y, dz = b.z - a.z;
        const double len2 = dx * dx + dy * dy + dz * dz, len = std::sqrt(len2);
        const Vec3 lo{std::max(0, int(std::floor(std::min(a.x, b.x) - r))),
                      std::max(0, int(std::floor(std::min(a.y, b.y) - r))),
                      std::max(0, int(std::floor(std::min(a.z, b.z) - r)))};
        const Vec3 hi{std::min(s.x - 1, int(std::ceil(std::max(a.x, b.x) + r))),
                      std::min(s.y - 1, int(std::ceil(std::max(a.y, b.y) + r))),
                      std::min(s.z - 1, int(std::ceil(std::max(a.z, b.z) + r)))};
        for (int z = lo.z; z <= hi.z; ++z)
            for (int y = lo.y; y <= hi.y; ++y)
                for (int x = lo.x; x <= hi.x; ++x) {
                    double t = len2 > 0 ? ((x - a.x) * dx + (y - a.y) * dy + (z - a.z) * dz) / len2 : 0.0;
                    t = std::clamp(t, 0.0, 1.0);
                    const double ex = x - (a.x + t * dx), ey = y - (a.y + t * dy), ez = z - (a.z + t * dz);
                    const double d = std::sqrt(ex * ex + ey * ey + ez * ez);
                    if (d > r) continue;
                    const auto v = geom.linear_index({x, y, z});
                    auto [it, fresh] = best.try_emplace(v, d, arc0 + t * len);
                    if (!fresh && d < it->second.first) it->second = {d, arc0 + t * len};
                }
        arc0 += len;
    }
    Candidate c = finalize(best);
    c.arc_length = arc0;
    // A polyline folding back onto itself would touch itself; such tubes are redrawn.
    const double max_jump = 2.0 * spec.radius_max + 2.0;
    for (std::size_t k = 0; k < c.voxels.size(); ++k) {
        const Vec3 p = geom.delinearize(c.voxels[k]);
        for (int axis = 0; axis < 3; ++axis) {
            Vec3 q = p;
            ++q[axis];
            if (!geom.in_bounds(q)) continue;
            const auto it = std::lower_bound(c.voxels.begin(), c.voxels.end(), geom.linear_index(q));
            if (it == c.voxels.end() || *it != geom.linear_index(q)) continue;
            if (std::abs(c.arc[k] - c.arc[std::size_t(it - c.voxels.begin())]) > max_jump) return {};
        }
    }
    return c;
}

Candidate make_ring(const VoxelGeometry& geom, const SynthSpec& spec, rng::Stream& rs) {
    const Vec3 s = geom.shape();
    const double R = rs.uniform(spec.ring_radius_min, spec.ring_radius_max);
    const double r = rs.uniform(spec.radius_min, spec.radius_max);
    const double reach = R + r + 1.0;
    const auto draw = [&](int n, double margin) {
        const double lo = std::min(margin, (n - 1) / 2.0);
        return rs.uniform(lo, n - 1 - lo);
    };
    const double cx = draw(s.x, reach), cy = draw(s.y, reach), cz = draw(s.z, std::ceil(r));
    const double theta0 = rs.uniform(0.0, 2.0 * std::numbers::pi);

    std::unordered_map<std::int64_t, std::pair<double, double>> best;
    const Vec3 lo{std::max(0, int(std::floor(cx - reach))), std::max(0, int(std::floor(cy - reach))),
                  std::max(0, int(std::floor(cz - r)))};
    const Vec3 hi{std::min(s.x - 1, int(std::ceil(cx + reach))), std::min(s.y - 1, int(std::ceil(cy + reach))),
                  std::min(s.z - 1, int(std::ceil(cz + r)))};
    for (int z = lo.z; z <= hi.z; ++z)
        for (int y = lo.y; y <= hi.y; ++y)
            for (int x = lo.x; x <= hi.x; ++x) {
                const double rho = std::hypot(x - cx, y - cy);
                if (std::hypot(rho - R, z - cz) > r) continue;
                double ang = std::atan2(y - cy, x - cx) - theta0;
                ang = std::fmod(ang, 2.0 * std::numbers::pi);
                if (ang < 0) ang += 2.0 * std::numbers::pi;
                best.emplace(geom.linear_index({x, y, z}), std::pair{0.0, R * ang});
            }
    Candidate c = finalize(best);
    c.arc_length = 2.0 * std::numbers::pi * R;
    c.seam = {int(std::lround(cx + R * std::cos(theta0))), int(std::lround(cy + R * std::sin(theta0))),
              int(std::lround(cz))};
    return c;
}

}  // namespace

void SynthSpec::validate() const {
    if (shape.x < 1 || shape.y < 1 || shape.z < 1) throw std::invalid_argument("shape must be positive");
    if (objects < 1) throw std::invalid_argument("object count must be >= 1");
    if (self_contacts < 0 || self_contacts > objects)
        throw std::invalid_argument("self_contacts must be in [0, objects]");
    if (!(radius_min >= 1.0) || !(radius_max >= radius_min))
        throw std::invalid_argument("tube radius range must satisfy 1 <= min <= max");
    if (!(ring_radius_min > radius_max) || !(ring_radius_max >= ring_radius_min))
        throw std::invalid_argument("ring radius range must exceed the tube radius");
    if (gap < 1) throw std::invalid_argument("gap must be >= 1");
    if (max_attempts < 1) throw std::invalid_argument("max_attempts must be >= 1");
}

GroundTruth generate_ground_truth(const SynthSpec& spec) {
    spec.validate();
    const VoxelGeometry geom(spec.shape);
    const auto n = std::size_t(geom.voxel_count());
    std::vector<std::uint32_t> labels(n, 0);
    std::vector<float> arc(n, 0.0f);
    Occupancy occ(spec.shape, spec.gap);
    GroundTruth gt;

    for (int k = 0; k < spec.objects; ++k) {
        const bool ring = k < spec.self_contacts;
        rng::Stream rs(rng::mix(spec.seed, std::uint64_t(k) + 1));
        bool placed = false;
        for (int attempt = 0; attempt < spec.max_attempts && !placed; ++attempt) {
            Candidate c = ring ? make_ring(geom, spec, rs) : make_tube(geom, spec, rs);
            if (c.voxels.empty() || !occ.fits(c) || !is_connected(geom, c.voxels)) continue;
            occ.claim(c);
            const auto id = std::uint32_t(k + 1);
            for (std::size_t i = 0; i < c.voxels.size(); ++i) {
                labels[std::size_t(c.voxels[i])] = id;
                arc[std::size_t(c.voxels[i])] = c.arc[i];
            }
            gt.objects.push_back({id, ring ? ObjectKind::ring : ObjectKind::tube, std::int64_t(c.voxels.size()),
                                  c.arc_length, c.seam});
            placed = true;
        }
        if (!placed)
            throw InfeasibleSpecError("could not place object " + std::to_string(k + 1) + " after " +
                                      std::to_string(spec.max_attempts) + " attempts");
    }
    gt.labels = Volume(geom, 1, std::move(labels));
    gt.arc = Volume(geom, 1, std::move(arc));
    return gt;
}

void EmbeddingSpec::validate() const {
    if (dims < 1) throw std::invalid_argument("embedding dimension must be >= 1");
    if (!(delta_d > 0)) throw std::invalid_argument("delta_d must be positive");
    if (!(min_separation >= 2 * delta_d)) throw std::invalid_argument("center separation must be >= 2 delta_d");
    if (!(sigma >= 0)) throw std::invalid_argument("sigma must be >= 0");
    if (!(background_amplitude >= 0)) throw std::invalid_argument("background amplitude must be >= 0");
    if (context_radius && !(*context_radius > 0)) throw std::invalid_argument("context radius must be positive");
    if (!(ramp_length >= 0)) throw std::invalid_argument("ramp length must be >= 0");
    if (!(split_distance > 0)) throw std::invalid_argument("split distance must be positive");
}

Volume geodesic_arc(const Volume& labels) {
    const auto lab = label_values(labels);
    const auto& geom = labels.geometry();
    const std::int64_t n = geom.voxel_count();
    std::vector<std::int32_t> dist(std::size_t(n), -1);
    std::vector<float> out(std::size_t(n), 0.0f);
    std::vector<std::int64_t> comp;
    static constexpr std::array<Vec3, 6> nb{{{1, 0, 0}, {-1, 0, 0}, {0, 1, 0}, {0, -1, 0}, {0, 0, 1}, {0, 0, -1}}};

    const auto bfs = [&](std::int64_t start, bool collect) {
        std::deque<std::int64_t> q{start};
        dist[std::size_t(start)] = 0;
        std::int64_t last = start;
        if (collect) comp.push_back(start);
        while (!q.empty()) {
            const auto v = q.front();
            q.pop_front();
            last = v;
            const Vec3 p = geom.delinearize(v);
            for (const auto& o : nb) {
                const Vec3 w = p + o;
                if (!geom.in_bounds(w)) continue;
                const auto wi = geom.linear_index(w);
                if (lab[std::size_t(wi)] != lab[std::size_t(v)] || dist[std::size_t(wi)] >= 0) continue;
                dist[std::size_t(wi)] = dist[std::size_t(v)] + 1;
                if (collect) comp.push_back(wi);
                q.push_back(wi);
            }
        }
        return last;
    };

    for (std::int64_t v = 0; v < n; ++v) {
        if (lab[std::size_t(v)] == 0 || dist[std::size_t(v)] >= 0) continue;
        comp.clear();
        const auto far = bfs(v, true);
        for (auto c : comp) dist[std::size_t(c)] = -1;
        bfs(far, false);
        for (auto c : comp) out[std::size_t(c)] = float(dist[std::size_t(c)]);
    }
    return Volume(geom, 1, std::move(out));
}

SyntheticEmbeddingField::SyntheticEmbeddingField(const Volume& labels, const Volume* arc, const EmbeddingSpec& spec)
    : geometry_(labels.geometry()), spec_(spec) {
    spec_.validate();
    const auto lab = label_values(labels);
    if (arc) {
        if (arc->dtype() != DType::float32 || arc->channels() != 1 || !(arc->geometry() == labels.geometry()))
            throw std::invalid_argument("arc volume must be single-channel float32 on the label geometry");
        const auto a = arc->values<float>();
        arc_.assign(a.begin(), a.end());
    } else {
        const auto a = geodesic_arc(labels).values<float>();
        arc_.assign(a.begin(), a.end());
    }

    for (auto v : lab)
        if (v != 0) ids_.push_back(v);
    std::sort(ids_.begin(), ids_.end());
    ids_.erase(std::unique(ids_.begin(), ids_.end()), ids_.end());
    objects_.resize(ids_.size());
    for (std::size_t k = 0; k < ids_.size(); ++k) objects_[k].id = ids_[k];
    slot_.assign(lab.size(), 0);
    for (std::size_t v = 0; v < lab.size(); ++v)
        if (lab[v] != 0) slot_[v] = std::uint32_t(object_index(lab[v]) + 1);

    const auto& geom = labels.geometry();
    const Vec3 s = geom.shape();
    for (std::int64_t v = 0; v < geom.voxel_count(); ++v) {
        const auto id = lab[std::size_t(v)];
        if (id == 0) continue;
        auto& obj = objects_[slot_[std::size_t(v)] - 1];
        obj.arc_length = std::max(obj.arc_length, double(arc_[std::size_t(v)]));
        if (!spec_.context_radius) continue;
        const Vec3 p = geom.delinearize(v);
        for (int axis = 0; axis < 3; ++axis) {
            Vec3 q = p;
            ++q[axis];
            if (q[axis] >= s[axis]) continue;
            const auto w = geom.linear_index(q);
            if (lab[std::size_t(w)] != id) continue;
            if (std::abs(double(arc_[std::size_t(v)]) - double(arc_[std::size_t(w)])) > *spec_.context_radius)
                obj.jumps.emplace_back(p + geom.origin(), q + geom.origin());
        }
    }

    // Centers in [-3 delta, 3 delta]^D by rejection; second centers only for context-split objects.
    rng::Stream rs(rng::mix(spec_.seed, 0x63656e74657273ull));
    const int D = spec_.dims;
    std::vector<const std::vector<double>*> accepted;
    const auto far_enough = [&](const std::vector<double>& c, const std::vector<double>* skip) {
        for (const auto* other : accepted) {
            if (other == skip) continue;
            double l1 = 0;
            for (int d = 0; d < D; ++d) l1 += std::abs(c[std::size_t(d)] - (*other)[std::size_t(d)]);
            if (l1 < spec_.min_separation) return false;
        }
        return true;
    };
    constexpr int kMaxDraws = 100000;
    const double box = 3.0 * spec_.delta_d;
    for (auto& obj : objects_) {
        obj.center_a.assign(std::size_t(D), 0.0);
        int draws = 0;
        do {
            if (++draws > kMaxDraws)
                throw std::runtime_error("cannot sample " + std::to_string(objects_.size()) +
                                         " centers at the required separation");
            for (auto& x : obj.center_a) x = rs.uniform(-box, box);
        } while (!far_enough(obj.center_a, nullptr));
        accepted.push_back(&obj.center_a);
        if (obj.jumps.empty()) continue;
        obj.center_b.assign(std::size_t(D), 0.0);
        const double step = spec_.split_distance / D;
        draws = 0;
        do {
            if (++draws > kMaxDraws) throw std::runtime_error("cannot sample a context-split center");
            for (int d = 0; d < D; ++d)
                obj.center_b[std::size_t(d)] = obj.center_a[std::size_t(d)] + (rs.next() & 1 ? step : -step);
        } while (!far_enough(obj.center_b, &obj.center_a));
        accepted.push_back(&obj.center_b);
    }
}

std::size_t SyntheticEmbeddingField::object_index(std::uint64_t id) const {
    const auto it = std::lower_bound(ids_.begin(), ids_.end(), id);
    if (it == ids_.end() || *it != id) throw std::out_of_range("unknown object id " + std::to_string(id));
    return std::size_t(it - ids_.begin());
}

const std::vector<double>& SyntheticEmbeddingField::center(std::uint64_t id, int which) const {
    const auto& obj = objects_[object_index(id)];
    return which == 1 && !obj.center_b.empty() ? obj.center_b : obj.center_a;
}

bool SyntheticEmbeddingField::is_split(std::uint64_t id, const Box& box, Context context) const {
    const auto& obj = objects_[object_index(id)];
    if (context == Context::global) return !obj.jumps.empty();
    return std::any_of(obj.jumps.begin(), obj.jumps.end(),
                       [&](const auto& j) { return box.contains(j.first) && box.contains(j.second); });
}

Volume SyntheticEmbeddingField::render(const Box& box, Context context) const {
    const auto& geom = geometry_;
    const Box clip = intersect(box, geom.extent());
    if (clip.empty()) throw std::invalid_argument("render box does not intersect the volume");
    const VoxelGeometry out_geom(clip.shape(), clip.lo);
    const auto m = std::size_t(out_geom.voxel_count());
    const int D = spec_.dims;
    std::vector<float> out(m * std::size_t(D));

    std::vector<std::uint8_t> split(objects_.size());
    for (std::size_t k = 0; k < objects_.size(); ++k) split[k] = is_split(objects_[k].id, clip, context);

    const std::uint64_t noise_seed = rng::mix(spec_.seed, 0x6e6f697365ull);
    std::size_t i = 0;
    for (int z = clip.lo.z; z < clip.hi.z; ++z)
        for (int y = clip.lo.y; y < clip.hi.y; ++y)
            for (int x = clip.lo.x; x < clip.hi.x; ++x, ++i) {
                const Vec3 g{x, y, z};
                const auto v = std::size_t(geom.linear_index(g - geom.origin()));
                const auto key = coord_key(g);
                const auto slot = slot_[v];
                if (slot == 0) {
                    for (int d = 0; d < D; ++d)
                        out[std::size_t(d) * m + i] = float(
                            spec_.background_amplitude * (2.0 * rng::hashed_uniform(noise_seed, key, std::uint64_t(d)) - 1.0));
                    continue;
                }
                const std::size_t k = slot - 1;
                const auto& obj = objects_[k];
                double t = 0.0;
                if (split[k]) {
                    const double start = 0.5 * (obj.arc_length - spec_.ramp_length);
                    const double a = arc_[v];
                    t = spec_.ramp_length > 0 ? std::clamp((a - start) / spec_.ramp_length, 0.0, 1.0)
                                              : (a >= 0.5 * obj.arc_length ? 1.0 : 0.0);
                }
                for (int d = 0; d < D; ++d) {
                    double val = obj.center_a[std::size_t(d)];
                    if (t > 0) val = (1.0 - t) * val + t * obj.center_b[std::size_t(d)];
                    if (spec_.sigma > 0) val += spec_.sigma * rng::hashed_normal(noise_seed, key, std::uint64_t(d));
                    out[std::size_t(d) * m + i] = float(val);
                }
            }
    return Volume(out_geom, D, std::move(out));
}

Volume generate_embeddings(const Volume& labels, const EmbeddingSpec& spec, const Volume* arc) {
    return SyntheticEmbeddingField(labels, arc, spec).render_all();
}

Volume generate_embeddings(const GroundTruth& truth, const EmbeddingSpec& spec) {
    return generate_embeddings(truth.labels, spec, &truth.arc);
}

MaskResult generate_background_mask(const Volume& labels, double flip_rate, std::uint64_t seed) {
    if (!(flip_rate >= 0.0 && flip_rate <= 1.0)) throw std::invalid_argument("flip_rate must be in [0, 1]");
    const auto lab = label_values(labels);
    MaskResult r;
    std::vector<float> mask(lab.size());
    const std::uint64_t s = rng::mix(seed, 0x6d61736bull);
    for (std::size_t v = 0; v < lab.size(); ++v) {
        const bool flip = rng::hashed_uniform(s, v, 0) < flip_rate;
        r.flips += flip;
        mask[v] = (lab[v] == 0) != flip ? 1.0f : 0.0f;
    }
    r.mask = Volume(labels.geometry(), 1, std::move(mask));
    return r;
}

}  // namespace voxseg
