#include "json.hpp"
#include "treematch/matcher_model.hpp"

namespace treematch {

std::string prediction_json(const PredictionRecord& record) {
    nlohmann::json j{{"patient_id", record.patient_id},
                     {"trial_id", record.trial_id},
                     {"criterion_id", record.criterion_id},
                     {"probs", record.probs},
                     {"predicted_class", match_class_name(record.predicted)}};
    if (record.has_explanation) {
        nlohmann::json nodes = nlohmann::json::array();
        for (const auto& node : record.explanation.nodes) {
            nodes.push_back({{"description", node.description},
                             {"level", node.level},
                             {"weight", node.weight},
                             {"path", node.path}});
        }
        j["explanation"] = std::move(nodes);
    }
    return j.dump();
}

}  // namespace treematch
