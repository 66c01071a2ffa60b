#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "vfd/model.hpp"

namespace vfd {

/// Which enrichment components feed the final prompt. Vanilla runs the
/// simplified patch-only prompt with no components.
struct AblationMode {
    ComponentSet enabled;
    bool vanilla = false;

    static AblationMode full() { return {{Component::CCI, Component::DA, Component::HV}, false}; }
    static AblationMode vanilla_mode() { return {{}, true}; }
    static AblationMode without(Component c) {
        auto m = full();
        m.enabled.erase(c);
        return m;
    }

    bool has(Component c) const { return enabled.count(c) != 0; }
    bool valid() const { return !vanilla || enabled.empty(); }

    /// "full", "no-cci", "no-da", "no-hv", "vanilla", or a "+"-joined list
    /// such as "cci+hv" for other subsets.
    std::string name() const;
    static std::optional<AblationMode> parse(std::string_view name);

    bool operator==(const AblationMode&) const = default;
};

/// The five settings compared by the ablation run, in table order.
std::vector<AblationMode> standard_ablation_modes();

}  // namespace vfd
