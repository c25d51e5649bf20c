#include "poisonlab/paper_reference.hpp"

#include "json.hpp"
#include "poisonlab/errors.hpp"

namespace poisonlab::metrics {

double PaperReferenceTable::value(const std::string& name) const { return at(name).value; }

const ReferenceConstant& PaperReferenceTable::at(const std::string& name) const {
    for (const auto& c : constants)
        if (c.name == name) return c;
    throw ConfigError("unknown reference constant: " + name);
}

namespace {

// Headline numbers from the full-scale reference study (Stable Diffusion v2
// on real data). They are not desk-scale targets; reports show them next to
// desk-scale results for orientation only.
constexpr const char* kBundle = R"json([
  {"name": "baseline_fid", "value": 40.404,
   "citation": "full-scale study: FID of the pre-trained model on its validation prompts"},
  {"name": "poisoned_fid", "value": 91.853,
   "citation": "full-scale study: FID after the basic attack on the meme target at 20 poisons"},
  {"name": "sanitized_fid", "value": 49.375,
   "citation": "full-scale study: FID after adding a one-sample sanitizing set"},
  {"name": "target_similarity_dp20_pct", "value": 81.34,
   "citation": "full-scale study: target similarity reached with 20 poisoning samples"},
  {"name": "target_similarity_dp5_pct", "value": 77.31,
   "citation": "full-scale study: target similarity with only 5 poisoning samples"},
  {"name": "frog_similarity_dp5_pct", "value": 52.85,
   "citation": "full-scale study: harder cartoon target at 5 poisoning samples"},
  {"name": "truck_cat_conceptual_similarity_pct", "value": 60.49,
   "citation": "full-scale study: model-perceived similarity between the truck and cat prompts"},
  {"name": "fid_increase_reduction_pct", "value": 82.47,
   "citation": "full-scale study: sanitizing removes this share of the attack-induced FID increase"},
  {"name": "template_effect_a_photo_of_pct", "value": 80.93,
   "citation": "full-scale study: attack effect queried through the first template"},
  {"name": "template_effect_an_image_of_pct", "value": 80.50,
   "citation": "full-scale study: attack effect queried through the second template"},
  {"name": "template_effect_a_picture_of_pct", "value": 82.05,
   "citation": "full-scale study: attack effect queried through the third template"},
  {"name": "shortcut_effect_pct", "value": 84.86,
   "citation": "full-scale study: shortcut prompt effect at 5 poisoning samples"},
  {"name": "non_shortcut_effect_pct", "value": 49.32,
   "citation": "full-scale study: plain-class prompt effect at 5 poisoning samples"},
  {"name": "sanitized_concept_drop_pct", "value": 10.92,
   "citation": "full-scale study: effect drop on the sanitized concept"},
  {"name": "target_concept_drop_pct", "value": 5.39,
   "citation": "full-scale study: effect drop on the targeted concept under sanitizing"},
  {"name": "defense_persistence_floor_pct", "value": 75.0,
   "citation": "full-scale study: target similarity persists above this after a 10-sample defense fine-tune"}
])json";

}  // namespace

PaperReferenceTable parse_paper_reference(std::string_view json_text) {
    nlohmann::json doc = nlohmann::json::parse(json_text, nullptr, /*allow_exceptions=*/false);
    if (doc.is_discarded() || !doc.is_array())
        throw IoError("reference-constant bundle is corrupt: not a JSON array");
    PaperReferenceTable table;
    for (const auto& item : doc) {
        if (!item.is_object() || !item.contains("name") || !item.contains("value") ||
            !item.contains("citation") || !item["name"].is_string() ||
            !item["value"].is_number() || !item["citation"].is_string())
            throw IoError("reference-constant bundle is corrupt: bad entry");
        table.constants.push_back({item["name"].get<std::string>(), item["value"].get<double>(),
                                   item["citation"].get<std::string>()});
    }
    if (table.constants.empty()) throw IoError("reference-constant bundle is corrupt: empty");
    return table;
}

PaperReferenceTable load_paper_reference() { return parse_paper_reference(kBundle); }

}  // namespace poisonlab::metrics
