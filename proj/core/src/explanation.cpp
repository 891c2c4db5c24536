#include <map>
#include <sstream>

#include "json.hpp"
#include "treematch/beam_retrieval.hpp"
#include "treematch/memory_tree.hpp"

namespace treematch {

using nlohmann::json;

std::string explanation_json(const ExplanationTree& tree) {
    json out = json::array();
    for (const auto& node : tree.nodes) {
        out.push_back({{"description", node.description},
                       {"level", node.level},
                       {"weight", node.weight},
                       {"path", node.path}});
    }
    return out.dump(2);
}

namespace {

std::string join_path(const std::vector<std::string>& path, std::size_t count) {
    std::string key;
    for (std::size_t i = 0; i < count; ++i) {
        key += path[i];
        key += '\x1f';
    }
    return key;
}

std::string dot_escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        if (c == '"' || c == '\\') out.push_back('\\');
        out.push_back(c);
    }
    return out;
}

}  // namespace

// One digraph from the root through every attended node; attended nodes carry
// their weight in the label and are drawn filled.
std::string explanation_dot(const ExplanationTree& tree) {
    std::map<std::string, std::pair<std::string, double>> nodes;  // key -> (label, weight)
    std::map<std::string, std::string> edges;                     // child key -> parent key
    for (const auto& node : tree.nodes) {
        for (std::size_t depth = 1; depth <= node.path.size(); ++depth) {
            const std::string key = join_path(node.path, depth);
            const std::string parent = depth > 1 ? join_path(node.path, depth - 1) : "root";
            nodes.emplace(key, std::make_pair(node.path[depth - 1], -1.0));
            edges.emplace(key, parent);
        }
        nodes[join_path(node.path, node.path.size())] = {node.description, node.weight};
    }

    std::ostringstream out;
    out << "digraph explanation {\n  rankdir=TB;\n  node [shape=box];\n";
    out << "  n0 [label=\"patient\"];\n";
    std::map<std::string, std::string> ids{{"root", "n0"}};
    std::size_t next = 1;
    for (const auto& [key, info] : nodes) {
        const std::string id = "n" + std::to_string(next++);
        ids[key] = id;
        out << "  " << id << " [label=\"" << dot_escape(info.first);
        if (info.second >= 0.0) {
            char buf[32];
            std::snprintf(buf, sizeof(buf), "\\nweight %.4f", info.second);
            out << buf << "\" style=filled fillcolor=lightgoldenrod";
        } else {
            out << "\"";
        }
        out << "];\n";
    }
    for (const auto& [child, parent] : edges) {
        out << "  " << ids[parent] << " -> " << ids[child] << ";\n";
    }
    out << "}\n";
    return out.str();
}

std::string explanation_text(const ExplanationTree& tree) {
    std::ostringstream out;
    for (const auto& node : tree.nodes) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%.4f", node.weight);
        out << buf << "  L" << node.level << "  " << node.description << "\n";
        out << "        path: ";
        for (std::size_t i = 0; i < node.path.size(); ++i) {
            if (i) out << " > ";
            out << node.path[i];
        }
        out << "\n";
    }
    return out.str();
}

namespace {

json snapshot_to_json(const TreeSnapshot& snap) {
    json j{{"key", snap.key},
           {"level", snap.level},
           {"update_count", snap.update_count},
           {"memory", snap.memory}};
    j["children"] = json::array();
    for (const auto& child : snap.children) j["children"].push_back(snapshot_to_json(child));
    return j;
}

}  // namespace

std::string tree_snapshot_json(const TreeSnapshot& snapshot) {
    return snapshot_to_json(snapshot).dump(2);
}

}  // namespace treematch
