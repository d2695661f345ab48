#include "segvae/core/ops.hpp"

#include <sstream>
#include <stdexcept>

namespace segvae::core {

LabelSet make_label_set(const std::vector<std::string>& classes, const ClassCatalog& catalog) {
    LabelSet out(catalog.size());
    for (const auto& name : classes) {
        out.set(catalog.index_of(name));
    }
    return out;
}

std::vector<std::string> label_set_names(const LabelSet& labels, const ClassCatalog& catalog) {
    if (labels.size() != catalog.size()) {
        throw std::invalid_argument("label-set length does not match catalog");
    }
    std::vector<std::string> out;
    for (int k : labels.members()) out.push_back(catalog.name(k));
    return out;
}

IndexMap compose_index_map(const SemanticMap& map, const GenerationOrder& order) {
    if (order.size() != map.classes()) {
        throw std::invalid_argument("compose_index_map: order covers " + std::to_string(order.size()) +
                                    " classes, map has " + std::to_string(map.classes()));
    }
    IndexMap out{map.height(), map.width(), std::vector<std::uint8_t>(map.plane(), 0)};
    for (int k : order.sequence()) {
        const auto ch = map.channel(k);
        for (std::size_t i = 0; i < ch.size(); ++i) {
            if (ch[i] != 0.0f) out.pixels[i] = static_cast<std::uint8_t>(k + 1);
        }
    }
    return out;
}

SemanticMap explode_index_map(const IndexMap& index, int classes) {
    SemanticMap out(classes, index.height, index.width);
    for (std::size_t i = 0; i < index.pixels.size(); ++i) {
        const int v = index.pixels[i];
        if (v == 0) continue;
        if (v > classes) {
            throw std::invalid_argument("index map value " + std::to_string(v) + " exceeds class count " +
                                        std::to_string(classes));
        }
        out.values()[static_cast<std::size_t>(v - 1) * out.plane() + i] = 1.0f;
    }
    return out;
}

GenerationOrder parse_order(const std::string& comma_list, const ClassCatalog& catalog) {
    std::vector<int> seq;
    std::stringstream ss(comma_list);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) seq.push_back(catalog.index_of(item));
    }
    return GenerationOrder(std::move(seq));
}

ValidationReport validate_semantic_map(const SemanticMap& map, const ClassCatalog& catalog,
                                       std::optional<Resolution> resolution) {
    constexpr int kMaxListed = 16;
    ValidationReport report;
    if (map.classes() != catalog.size()) {
        report.issues.push_back({"shape", "map has " + std::to_string(map.classes()) + " channels, catalog has " +
                                              std::to_string(catalog.size()) + " classes"});
    }
    if (resolution && (map.height() != resolution->height || map.width() != resolution->width)) {
        report.issues.push_back({"shape", "map resolution " + std::to_string(map.height()) + "x" +
                                              std::to_string(map.width()) + " differs from configured " +
                                              std::to_string(resolution->height) + "x" +
                                              std::to_string(resolution->width)});
    }
    if (map.values().size() != static_cast<std::size_t>(map.classes()) * map.plane()) {
        report.issues.push_back({"shape", "value buffer size does not match C x H x W"});
        return report;
    }
    int bad = 0;
    for (int c = 0; c < map.classes(); ++c) {
        for (int y = 0; y < map.height(); ++y) {
            for (int x = 0; x < map.width(); ++x) {
                const float v = map.at(c, y, x);
                if (v == 0.0f || v == 1.0f) continue;
                if (++bad <= kMaxListed) {
                    std::ostringstream msg;
                    msg << "non-binary value " << v << " at (channel " << c;
                    if (c < catalog.size()) msg << " " << catalog.name(c);
                    msg << ", y " << y << ", x " << x << ")";
                    report.issues.push_back({"non_binary", msg.str()});
                }
            }
        }
    }
    if (bad > kMaxListed) {
        report.issues.push_back(
            {"non_binary", std::to_string(bad - kMaxListed) + " further non-binary values not listed"});
    }
    return report;
}

}  // namespace segvae::core
