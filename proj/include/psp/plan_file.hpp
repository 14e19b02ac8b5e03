#pragma once

#include <filesystem>
#include <string>

#include "json.hpp"

#include "psp/scheduler.hpp"

namespace psp {

/// An edit plan loaded from JSON.
///
/// Recognised top-level sections: prompt_source, prompt_target, task, spans,
/// softbox, window, scheduler, capture, flags. Unknown keys anywhere are
/// rejected. Errors are ConfigError with a message of the form
/// "<json-pointer>: <reason>".
struct PlanFile {
    EditPlan plan;
    SchedulerConfig config;
    std::filesystem::path softbox_pgm;  // absolute; empty unless the softbox came from a PGM
};

PlanFile parse_plan(const nlohmann::json& doc, const std::filesystem::path& base_dir = {});
PlanFile load_plan(const std::filesystem::path& path);

// The plan with every default filled in, in the same schema parse_plan reads.
nlohmann::json resolved_plan(const PlanFile& pf);

}  // namespace psp
