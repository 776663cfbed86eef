#include "voxseg/eval.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>
#include <vector>

namespace voxseg {

namespace {

struct Contingency {
    // Sorted (s, t) with counts, plus the marginals in first-seen order of the sorted table.
    std::vector<std::pair<SegmentPair, std::int64_t>> joint;
    std::unordered_map<std::uint64_t, std::int64_t> seg;
    std::unordered_map<std::uint64_t, std::int64_t> truth;
    std::int64_t n = 0;
};

Contingency contingency(const std::vector<std::uint64_t>& s, const std::vector<std::uint64_t>& t) {
    std::vector<SegmentPair> cells;
    for (std::size_t i = 0; i < t.size(); ++i)
        if (t[i] != 0) cells.emplace_back(s[i], t[i]);
    std::sort(cells.begin(), cells.end());
    Contingency c;
    c.n = std::int64_t(cells.size());
    for (std::size_t i = 0; i < cells.size();) {
        std::size_t j = i;
        while (j < cells.size() && cells[j] == cells[i]) ++j;
        c.joint.emplace_back(cells[i], std::int64_t(j - i));
        c.seg[cells[i].first] += std::int64_t(j - i);
        c.truth[cells[i].second] += std::int64_t(j - i);
        i = j;
    }
    return c;
}

void check_geometry(const Volume& a, const Volume& b) {
    if (!(a.geometry() == b.geometry())) throw std::invalid_argument("segmentation and truth geometries differ");
}

VIReport vi_of(const std::vector<std::uint64_t>& s, const std::vector<std::uint64_t>& t) {
    const auto c = contingency(s, t);
    VIReport r;
    r.foreground = c.n;
    if (c.n == 0) {
        r.empty = true;
        return r;
    }
    const double n = double(c.n);
    for (const auto& [cell, count] : c.joint) {
        const double p = double(count) / n;
        r.vi_split += p * std::log(double(c.truth.at(cell.second)) / double(count));
        r.vi_merge += p * std::log(double(c.seg.at(cell.first)) / double(count));
    }
    r.vi = r.vi_split + r.vi_merge;
    return r;
}

}  // namespace

VIReport variation_of_information(const Volume& seg, const Volume& truth) {
    check_geometry(seg, truth);
    return vi_of(label_values(seg), label_values(truth));
}

double adapted_rand_error(const Volume& seg, const Volume& truth) {
    check_geometry(seg, truth);
    const auto c = contingency(label_values(seg), label_values(truth));
    if (c.n == 0) return 0.0;
    double sum_n2 = 0, sum_s2 = 0, sum_t2 = 0;
    for (const auto& [cell, count] : c.joint) sum_n2 += double(count) * double(count);
    std::vector<std::int64_t> sizes;
    for (const auto& [id, count] : c.seg) sizes.push_back(count);
    std::sort(sizes.begin(), sizes.end());
    for (auto k : sizes) sum_s2 += double(k) * double(k);
    sizes.clear();
    for (const auto& [id, count] : c.truth) sizes.push_back(count);
    std::sort(sizes.begin(), sizes.end());
    for (auto k : sizes) sum_t2 += double(k) * double(k);
    const double precision = sum_n2 / sum_s2, recall = sum_n2 / sum_t2;
    return 1.0 - 2.0 * precision * recall / (precision + recall);
}

LocalVIDiff vi_diff_local(const Volume& seg, const Volume& truth, const Candidate& candidate, Vec3 patch_shape) {
    check_geometry(seg, truth);
    LocalVIDiff out;
    out.patch = centered_box(candidate.centroid, patch_shape, seg.geometry().extent());
    auto s = label_values(crop(seg, out.patch));
    const auto t = label_values(crop(truth, out.patch));
    const bool has1 = std::find(s.begin(), s.end(), candidate.s1) != s.end();
    const bool has2 = std::find(s.begin(), s.end(), candidate.s2) != s.end();
    if (!has1 || !has2) {
        out.present = false;
        return out;
    }
    const double before = vi_of(s, t).vi;
    for (auto& v : s)
        if (v == candidate.s2) v = candidate.s1;
    out.value = vi_of(s, t).vi - before;
    return out;
}

}  // namespace voxseg
