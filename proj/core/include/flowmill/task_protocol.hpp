#pragma once

#include "flowmill/cas.hpp"
#include "flowmill/flow_spec.hpp"
#include "flowmill/pathspec.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace flowmill {

// One upstream task feeding this one: its artifact bindings and, for a
// foreach body task, the list element assigned to this child.
struct InputBinding {
  int64_t parent_task = 0;
  std::map<std::string, ContentHash> artifacts;
  std::optional<ContentHash> foreach_item;

  bool operator==(const InputBinding&) const = default;
};

// Everything a backend needs to run one attempt of one task.
struct TaskContext {
  Pathspec task;  // Depth::Task
  std::string command;
  DecoratorSet decorators;
  int64_t attempt = 1;
  std::vector<InputBinding> inputs;
  std::map<std::string, ContentHash> auto_artifacts;
  std::map<std::string, ContentHash> parameters;
};

// Work-order handoff between the coordinator and a supervisor process.
Json context_to_json(const TaskContext& ctx);
TaskContext context_from_json(const Json& doc);

struct MaterializedTask {
  std::filesystem::path manifest;  // manifest.json
  std::filesystem::path out_dir;   // empty staging directory
};

// Lays out `work_dir` for one attempt: every input artifact written as a
// file (json payloads as canonical JSON text, bytes raw), an empty out/
// staging directory, and manifest.json describing it all with absolute
// paths. Layout:
//   inputs/<parent_task>/<name>    per-parent artifacts
//   inputs/<parent_task>/.foreach  the bound list element, when present
//   inputs/auto/<name>             auto-propagated artifacts
//   inputs/params/<name>           run parameters
MaterializedTask materialize_task_inputs(const CasStore& store,
                                         const TaskContext& ctx,
                                         const std::filesystem::path& work_dir);

// Decorator environment overlaid with the FLOWMILL_* protocol variables;
// the protocol wins on collision.
std::map<std::string, std::string> protocol_env(
    const TaskContext& ctx, const std::filesystem::path& manifest,
    const std::filesystem::path& out_dir);

// Scans the staging directory after a successful exit. Every entry must be
// a regular file `<name>.json` (strict JSON text) or `<name>.bin` (raw
// bytes) with <name> a plain identifier. Anything else — subdirectories,
// other suffixes, a name staged under both suffixes, leading-underscore
// names (reserved for the engine), unparsable or unencodable JSON — throws
// Error(ProtocolViolation).
std::map<std::string, ArtifactValue> collect_outputs(
    const std::filesystem::path& out_dir);

}  // namespace flowmill
