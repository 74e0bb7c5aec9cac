#pragma once

#include "flowmill/backends.hpp"
#include "flowmill/flow_graph.hpp"
#include "flowmill/flow_spec.hpp"
#include "flowmill/metadata.hpp"
#include "flowmill/task_protocol.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace flowmill {

// Where a run keeps its state and finds the code to ship.
struct RuntimeEnv {
  CasStore* store = nullptr;
  MetadataStore* meta = nullptr;
  std::filesystem::path scratch;     // per-attempt working directories
  std::filesystem::path flow_dir;    // the flow's source tree; LOCAL tasks
                                     // run here, packages are built from it
  std::filesystem::path worker_bin;  // flowmill-worker, for SIM_REMOTE
  std::vector<std::string> package_includes{"**"};
};

struct RuntimeOptions {
  std::string user = "anonymous";
  std::vector<std::string> tags;
  std::map<std::string, Json> parameters;
  BackendKind backend = BackendKind::Local;  // steps with remote=true use
                                             // SIM_REMOTE regardless
  int max_parallel = 0;                      // 0: one per cpu slot
  BackendCapacity capacity = BackendCapacity::detect();
};

struct RunResult {
  RunRecord run;
  std::vector<TaskRecord> tasks;  // final records, task_id ascending
  RunStatus status = RunStatus::Failed;
  std::optional<std::string> failed_step;
  std::string error;  // diagnostic for the first failure, empty on success
};

// Validates, packages the source tree, registers the run and drives it to a
// terminal state. Ready steps with no dependency between them execute
// concurrently; after a failure, in-flight tasks run to completion but
// nothing new starts. Throws Error(InvalidFlow | MissingParameter |
// UnknownParameter); task failures are reported through the result instead.
RunResult run_flow(const RuntimeEnv& env, const FlowSpec& spec,
                   const RuntimeOptions& opts);

// Re-executes `source` from from_step onward under a new run id. from_step
// defaults to the step of the source's first failed task. Every task
// strictly outside the re-executed region is cloned: a fresh record
// bound to the source's artifact hashes, with zero recompute. The new run
// reuses the source's code package and parameters. Throws
// Error(UnknownRun | RunNotTerminal | UnknownStep | NothingToResume).
RunResult resume_run(const RuntimeEnv& env, const FlowSpec& spec,
                     const Pathspec& source,
                     const std::optional<std::string>& from_step,
                     const RuntimeOptions& opts);

// The artifact bindings a child receives from one parent: every recorded
// artifact except the engine's underscore-prefixed ones.
InputBinding binding_of(const TaskRecord& parent);

// Splits a json-array artifact into one stored artifact per element,
// returned in list order. Throws Error(NotAList).
std::vector<ContentHash> split_list_artifact(const CasStore& store,
                                             const ContentHash& list);

struct JoinInputs {
  std::vector<InputBinding> inputs;
  std::map<std::string, ContentHash> auto_artifacts;
};

// Orders and checks fan-in. Foreach joins are sorted by foreach index and
// must cover 0..n-1 of one frame exactly (Error(IncompleteFanIn)
// otherwise); static joins follow branch_order. auto_artifacts carries the
// names bound to the identical hash in every parent; conflicting names are
// reachable only through inputs.
JoinInputs collect_join_inputs(const std::vector<TaskRecord>& parents,
                               bool is_foreach_join,
                               const std::vector<std::string>& branch_order = {});

}  // namespace flowmill
