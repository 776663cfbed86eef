#include <fstream>

#include <json.hpp>

#include "voxseg/metricgraph.hpp"

namespace voxseg {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json edges_json(const std::vector<EdgeSpec>& edges) {
    json arr = json::array();
    for (const auto& e : edges)
        arr.push_back({{"offset", {e.offset.x, e.offset.y, e.offset.z}}, {"polarity", to_string(e.polarity)}});
    return arr;
}

std::vector<EdgeSpec> edges_from(const json& arr) {
    if (!arr.is_array()) throw std::invalid_argument("edge list must be a JSON array");
    std::vector<EdgeSpec> edges;
    for (const auto& item : arr) {
        const auto& o = item.at("offset");
        if (!o.is_array() || o.size() != 3) throw std::invalid_argument("edge offset must be [x, y, z]");
        edges.push_back({{o[0].get<int>(), o[1].get<int>(), o[2].get<int>()},
                         polarity_from_string(item.at("polarity").get<std::string>())});
    }
    return edges;
}

json load_json(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    return json::parse(in);
}

}  // namespace

fs::path sidecar_path(const fs::path& graph_path) {
    auto p = graph_path;
    return p.replace_extension(".json");
}

std::string edges_to_json(const std::vector<EdgeSpec>& edges) { return edges_json(edges).dump(); }

std::vector<EdgeSpec> parse_edges(const std::string& spec) {
    if (spec == "default12") return default_edges();
    const auto first = spec.find_first_not_of(" \t\r\n");
    if (first != std::string::npos && (spec[first] == '[' || spec[first] == '{')) {
        const auto j = json::parse(spec);
        return edges_from(j.is_object() ? j.at("edges") : j);
    }
    const auto j = load_json(spec);
    return edges_from(j.is_object() ? j.at("edges") : j);
}

void write_graph(const MetricGraph& graph, const fs::path& path, double delta_d) {
    write_volume(graph.to_volume(), path);
    json side = {{"format", "voxseg.metric_graph"},
                 {"version", 1},
                 {"delta_d", delta_d},
                 {"edges", edges_json(graph.edges())},
                 {"node_mask", nullptr}};
    if (graph.has_node_mask()) {
        auto mask_path = path;
        mask_path.replace_extension(".mask.vxv");
        write_volume(Volume(graph.geometry(), 1, graph.node_mask()), mask_path);
        side["node_mask"] = mask_path.filename().string();
    }
    std::ofstream out(sidecar_path(path));
    if (!out) throw std::runtime_error("cannot write sidecar for " + path.string());
    out << side.dump(2) << '\n';
}

MetricGraph read_graph(const fs::path& path, std::optional<fs::path> sidecar) {
    const auto side_path = sidecar.value_or(sidecar_path(path));
    const auto side = load_json(side_path);
    auto edges = edges_from(side.at("edges"));
    const Volume v = read_volume(path);
    if (v.dtype() != DType::float32 || v.channels() != int(edges.size()))
        throw std::invalid_argument("graph volume must be float32 with one channel per sidecar edge");
    std::vector<std::uint8_t> mask;
    if (side.contains("node_mask") && side["node_mask"].is_string()) {
        const auto mask_path = side_path.parent_path() / side["node_mask"].get<std::string>();
        Volume m = read_volume(mask_path);
        if (m.dtype() != DType::uint8 || !(m.geometry() == v.geometry()))
            throw std::invalid_argument("graph node mask does not match the graph volume");
        mask = std::move(m).release<std::uint8_t>();
    }
    const VoxelGeometry geometry = v.geometry();
    Volume owned = v;
    return MetricGraph(geometry, std::move(edges), std::move(owned).release<float>(), std::move(mask));
}

}  // namespace voxseg
