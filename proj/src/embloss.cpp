#include "voxseg/embloss.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <unordered_map>

#include "voxseg/random.hpp"

namespace voxseg {

namespace {

constexpr double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

// Dense cluster numbering of a label volume, shared by the loss terms and the gradient.
struct ClusterIndex {
    std::vector<std::int32_t> of_voxel;  // -1 on background
    std::vector<std::uint64_t> ids;
    std::vector<std::uint64_t> origins;
    std::vector<std::int64_t> counts;

    std::size_t size() const { return ids.size(); }
};

ClusterIndex index_clusters(const Volume& labels, const std::vector<std::uint64_t>* origin) {
    const auto values = label_values(labels);
    ClusterIndex ci;
    ci.ids = values;
    std::sort(ci.ids.begin(), ci.ids.end());
    ci.ids.erase(std::unique(ci.ids.begin(), ci.ids.end()), ci.ids.end());
    if (!ci.ids.empty() && ci.ids.front() == 0) ci.ids.erase(ci.ids.begin());

    std::unordered_map<std::uint64_t, std::int32_t> slot;
    slot.reserve(ci.ids.size());
    for (std::size_t c = 0; c < ci.ids.size(); ++c) slot.emplace(ci.ids[c], std::int32_t(c));

    ci.counts.assign(ci.ids.size(), 0);
    ci.of_voxel.assign(values.size(), -1);
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (values[i] == 0) continue;
        const auto c = slot.at(values[i]);
        ci.of_voxel[i] = c;
        ++ci.counts[std::size_t(c)];
    }
    ci.origins.resize(ci.ids.size());
    for (std::size_t c = 0; c < ci.ids.size(); ++c) {
        const auto id = ci.ids[c];
        if (origin) {
            if (id >= origin->size())
                throw std::invalid_argument("label " + std::to_string(id) + " missing from origin map");
            ci.origins[c] = (*origin)[id];
        } else {
            ci.origins[c] = id;
        }
    }
    return ci;
}

void check_geometry(const EmbeddingField& f, const Volume& labels) {
    if (f.geometry.shape() != labels.geometry().shape())
        throw std::invalid_argument("embedding and label geometry differ");
}

// Row-major C x D means.
std::vector<double> cluster_means(const ClusterIndex& ci, const EmbeddingField& f) {
    const std::size_t C = ci.size();
    const std::size_t D = std::size_t(f.dims);
    const std::size_t N = f.voxel_count();
    std::vector<double> sums(C * D, 0.0);
    for (std::size_t d = 0; d < D; ++d) {
        const double* x = f.values.data() + d * N;
        for (std::size_t i = 0; i < N; ++i) {
            const auto c = ci.of_voxel[i];
            if (c >= 0) sums[std::size_t(c) * D + d] += x[i];
        }
    }
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t d = 0; d < D; ++d) sums[c * D + d] /= double(ci.counts[c]);
    return sums;
}

ClusterStats make_stats(const ClusterIndex& ci, const std::vector<double>& means, int dims) {
    ClusterStats s;
    s.dims = dims;
    s.clusters.resize(ci.size());
    for (std::size_t c = 0; c < ci.size(); ++c) {
        auto& cl = s.clusters[c];
        cl.id = ci.ids[c];
        cl.count = ci.counts[c];
        cl.origin_id = ci.origins[c];
        cl.mean.assign(means.begin() + std::ptrdiff_t(c * std::size_t(dims)),
                       means.begin() + std::ptrdiff_t((c + 1) * std::size_t(dims)));
    }
    return s;
}

// Loss and, when `grad` is set, its subgradient. Single pass structure:
// residual norms s_i, then the three terms, then the per-voxel chain rule through the means.
LossBreakdown evaluate(const ClusterIndex& ci, const EmbeddingField& f, const LossParams& p,
                       EmbeddingField* grad) {
    LossBreakdown out;
    const std::size_t C = ci.size();
    const std::size_t D = std::size_t(f.dims);
    const std::size_t N = f.voxel_count();
    if (grad) *grad = EmbeddingField(f.geometry, f.dims);
    if (C == 0) return out;

    const auto mu = cluster_means(ci, f);

    std::vector<double> s(N, 0.0);
    for (std::size_t d = 0; d < D; ++d) {
        const double* x = f.values.data() + d * N;
        for (std::size_t i = 0; i < N; ++i) {
            const auto c = ci.of_voxel[i];
            if (c >= 0) s[i] += std::abs(mu[std::size_t(c) * D + d] - x[i]);
        }
    }
    std::vector<double> sq(C, 0.0);
    for (std::size_t i = 0; i < N; ++i)
        if (ci.of_voxel[i] >= 0) sq[std::size_t(ci.of_voxel[i])] += s[i] * s[i];
    for (std::size_t c = 0; c < C; ++c) out.internal += sq[c] / double(ci.counts[c]);
    out.internal /= double(C);

    // Gradient w.r.t. each cluster mean from the external and regularization terms.
    std::vector<double> gmu(grad ? C * D : 0, 0.0);
    if (C >= 2) {
        const double norm = double(C) * double(C - 1);
        double sum = 0.0;
        for (std::size_t a = 0; a < C; ++a)
            for (std::size_t b = a + 1; b < C; ++b) {
                if (ci.origins[a] == ci.origins[b]) continue;
                double dist = 0.0;
                for (std::size_t d = 0; d < D; ++d) dist += std::abs(mu[a * D + d] - mu[b * D + d]);
                const double h = 2.0 * p.delta_d - dist;
                if (h <= 0.0) continue;
                sum += 2.0 * h * h;  // both ordered pairs
                if (grad) {
                    const double k = -4.0 * h / norm * p.beta;
                    for (std::size_t d = 0; d < D; ++d) {
                        const double sg = sign(mu[a * D + d] - mu[b * D + d]);
                        gmu[a * D + d] += k * sg;
                        gmu[b * D + d] -= k * sg;
                    }
                }
            }
        out.external = sum / norm;
    }

    for (std::size_t c = 0; c < C; ++c) {
        double l1 = 0.0;
        for (std::size_t d = 0; d < D; ++d) {
            l1 += std::abs(mu[c * D + d]);
            if (grad) gmu[c * D + d] += p.gamma * sign(mu[c * D + d]) / double(C);
        }
        out.regularization += l1;
    }
    out.regularization /= double(C);
    out.total = p.alpha * out.internal + p.beta * out.external + p.gamma * out.regularization;

    if (!grad) return out;

    // d/dx_k of the internal term: 2/(C N_c) * (-s_k sign(r_k) + (1/N_c) sum_i s_i sign(r_i)),
    // with r = mu_c - x; the second part is the pull through mu_c.
    std::vector<double> acc(C, 0.0);
    for (std::size_t d = 0; d < D; ++d) {
        const double* x = f.values.data() + d * N;
        double* g = grad->values.data() + d * N;
        std::fill(acc.begin(), acc.end(), 0.0);
        for (std::size_t i = 0; i < N; ++i) {
            const auto c = ci.of_voxel[i];
            if (c >= 0) acc[std::size_t(c)] += s[i] * sign(mu[std::size_t(c) * D + d] - x[i]);
        }
        for (std::size_t i = 0; i < N; ++i) {
            const auto c = ci.of_voxel[i];
            if (c < 0) continue;
            const auto cu = std::size_t(c);
            const double n = double(ci.counts[cu]);
            const double r_sign = sign(mu[cu * D + d] - x[i]);
            const double internal = 2.0 / (double(C) * n) * (-s[i] * r_sign + acc[cu] / n);
            g[i] = p.alpha * internal + gmu[cu * D + d] / n;
        }
    }
    return out;
}

}  // namespace

void LossParams::validate() const {
    if (!(delta_d > 0.0)) throw std::invalid_argument("delta_d must be positive");
    if (alpha < 0.0 || beta < 0.0 || gamma < 0.0)
        throw std::invalid_argument("loss weights must be non-negative");
}

EmbeddingField EmbeddingField::from_volume(const Volume& embeddings) {
    const auto src = embeddings.values<float>();
    EmbeddingField f;
    f.geometry = embeddings.geometry();
    f.dims = embeddings.channels();
    f.values.assign(src.begin(), src.end());
    return f;
}

Volume EmbeddingField::to_volume() const {
    std::vector<float> out(values.size());
    std::transform(values.begin(), values.end(), out.begin(), [](double v) { return float(v); });
    return Volume(geometry, dims, std::move(out));
}

LocalComponents relabel_local_components(const Volume& labels) {
    const auto& g = labels.geometry();
    const auto values = label_values(labels);
    std::vector<std::uint32_t> out(values.size(), 0);
    LocalComponents lc;
    lc.origin.push_back(0);

    constexpr Vec3 kNeighbors[6] = {{1, 0, 0}, {-1, 0, 0}, {0, 1, 0}, {0, -1, 0}, {0, 0, 1}, {0, 0, -1}};
    std::vector<std::int64_t> queue;
    for (std::int64_t seed = 0; seed < std::int64_t(values.size()); ++seed) {
        if (values[std::size_t(seed)] == 0 || out[std::size_t(seed)] != 0) continue;
        const auto id = std::uint32_t(lc.origin.size());
        const auto global = values[std::size_t(seed)];
        lc.origin.push_back(global);
        out[std::size_t(seed)] = id;
        queue.assign(1, seed);
        for (std::size_t head = 0; head < queue.size(); ++head) {
            const Vec3 p = g.delinearize(queue[head]);
            for (const Vec3& o : kNeighbors) {
                const Vec3 q = p + o;
                if (!g.in_bounds(q)) continue;
                const auto j = std::size_t(g.linear_index(q));
                if (out[j] == 0 && values[j] == global) {
                    out[j] = id;
                    queue.push_back(std::int64_t(j));
                }
            }
        }
    }
    lc.labels = make_labels(g, std::move(out));
    return lc;
}

ClusterStats cluster_stats(const EmbeddingField& embeddings, const Volume& labels) {
    check_geometry(embeddings, labels);
    const auto ci = index_clusters(labels, nullptr);
    return make_stats(ci, cluster_means(ci, embeddings), embeddings.dims);
}

ClusterStats cluster_stats(const EmbeddingField& embeddings, const LocalComponents& components) {
    check_geometry(embeddings, components.labels);
    const auto ci = index_clusters(components.labels, &components.origin);
    return make_stats(ci, cluster_means(ci, embeddings), embeddings.dims);
}

double internal_loss(const ClusterStats& stats, const EmbeddingField& embeddings, const Volume& labels) {
    check_geometry(embeddings, labels);
    if (stats.size() == 0) return 0.0;
    std::unordered_map<std::uint64_t, std::size_t> slot;
    for (std::size_t c = 0; c < stats.size(); ++c) slot.emplace(stats.clusters[c].id, c);

    const auto values = label_values(labels);
    const std::size_t D = std::size_t(embeddings.dims);
    std::vector<double> sq(stats.size(), 0.0);
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (values[i] == 0) continue;
        const auto c = slot.at(values[i]);
        const auto& mu = stats.clusters[c].mean;
        double s = 0.0;
        for (std::size_t d = 0; d < D; ++d) s += std::abs(mu[d] - embeddings.at(int(d), i));
        sq[c] += s * s;
    }
    double total = 0.0;
    for (std::size_t c = 0; c < stats.size(); ++c) total += sq[c] / double(stats.clusters[c].count);
    return total / double(stats.size());
}

double external_loss(const ClusterStats& stats, const LossParams& params) {
    const std::size_t C = stats.size();
    if (C < 2) return 0.0;
    double sum = 0.0;
    for (std::size_t a = 0; a < C; ++a)
        for (std::size_t b = 0; b < C; ++b) {
            if (a == b || stats.clusters[a].origin_id == stats.clusters[b].origin_id) continue;
            double dist = 0.0;
            for (int d = 0; d < stats.dims; ++d)
                dist += std::abs(stats.clusters[a].mean[std::size_t(d)] - stats.clusters[b].mean[std::size_t(d)]);
            const double h = std::max(2.0 * params.delta_d - dist, 0.0);
            sum += h * h;
        }
    return sum / (double(C) * double(C - 1));
}

double regularization_loss(const ClusterStats& stats) {
    if (stats.size() == 0) return 0.0;
    double sum = 0.0;
    for (const auto& c : stats.clusters)
        for (double m : c.mean) sum += std::abs(m);
    return sum / double(stats.size());
}

LossBreakdown total_embedding_loss(const EmbeddingField& embeddings, const Volume& labels,
                                   const LossParams& params) {
    params.validate();
    check_geometry(embeddings, labels);
    return evaluate(index_clusters(labels, nullptr), embeddings, params, nullptr);
}

LossBreakdown total_embedding_loss(const EmbeddingField& embeddings, const LocalComponents& components,
                                   const LossParams& params) {
    params.validate();
    check_geometry(embeddings, components.labels);
    return evaluate(index_clusters(components.labels, &components.origin), embeddings, params, nullptr);
}

EmbeddingField embedding_loss_gradient(const EmbeddingField& embeddings, const Volume& labels,
                                       const LossParams& params) {
    params.validate();
    check_geometry(embeddings, labels);
    EmbeddingField grad;
    evaluate(index_clusters(labels, nullptr), embeddings, params, &grad);
    return grad;
}

EmbeddingField embedding_loss_gradient(const EmbeddingField& embeddings, const LocalComponents& components,
                                       const LossParams& params) {
    params.validate();
    check_geometry(embeddings, components.labels);
    EmbeddingField grad;
    evaluate(index_clusters(components.labels, &components.origin), embeddings, params, &grad);
    return grad;
}

EmbeddingField optimize_embeddings(const LocalComponents& components, const LossParams& params,
                                   const OptimizeOptions& options) {
    params.validate();
    if (options.dims < 1) throw std::invalid_argument("embedding dimension must be positive");
    if (options.iterations < 0) throw std::invalid_argument("iteration count must be non-negative");

    const auto ci = index_clusters(components.labels, &components.origin);
    EmbeddingField x(components.labels.geometry(), options.dims);
    rng::Stream stream(options.seed);
    for (double& v : x.values) v = options.init_scale * stream.normal();

    EmbeddingField grad;
    for (int it = 0; it < options.iterations; ++it) {
        const auto loss = evaluate(ci, x, params, &grad);
        if (!std::isfinite(loss.total))
            throw DivergenceError(it, "embedding loss diverged at iteration " + std::to_string(it));
        if (options.on_step) options.on_step(it, loss);
        for (std::size_t k = 0; k < x.values.size(); ++k) x.values[k] -= options.step * grad.values[k];
    }
    return x;
}

}  // namespace voxseg
