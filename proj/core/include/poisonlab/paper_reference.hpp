#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace poisonlab::metrics {

struct ReferenceConstant {
    std::string name;
    double value = 0.0;
    std::string citation;
};

// Headline numbers from the reference study, bundled for side-by-side
// display next to desk-scale results. Read-only.
struct PaperReferenceTable {
    std::vector<ReferenceConstant> constants;

    double value(const std::string& name) const;
    const ReferenceConstant& at(const std::string& name) const;
};

PaperReferenceTable load_paper_reference();

// exposed for corrupt-bundle handling tests
PaperReferenceTable parse_paper_reference(std::string_view json_text);

}  // namespace poisonlab::metrics
