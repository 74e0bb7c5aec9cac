#pragma once

#include "flowmill/cas.hpp"
#include "flowmill/metadata.hpp"
#include "flowmill/pathspec.hpp"

#include <optional>
#include <string>
#include <vector>

namespace flowmill {

// What a pathspec resolves to. Exactly the fields implied by the depth are
// populated: a flow yields its runs, a run its record plus tasks, a step
// the tasks of that step, a task its record, an artifact the stored value.
struct Resolved {
  Pathspec::Depth depth = Pathspec::Depth::Flow;
  std::vector<RunRecord> runs;
  std::optional<RunRecord> run;
  std::vector<TaskRecord> tasks;
  std::optional<TaskRecord> task;
  std::optional<ArtifactValue> value;
};

// One node of an ancestry tree: the producing task and, recursively, the
// tasks its inputs came from, back to `start`. Shared ancestors repeat on
// every path that reaches them.
struct LineageNode {
  TaskRecord task;
  std::vector<LineageNode> parents;
};

// Read-only access to past runs: artifacts, records and lineage, across
// users. Lookups are confined to runs tagged user:<nspace>; the escape
// flag lifts the filter. Safe under concurrent writer activity: records
// are immutable once terminal and the event log is append-only.
class Client {
 public:
  Client(const CasStore& store, const MetadataStore& meta)
      : store_(&store), meta_(&meta) {}

  // Throws Error(NotFound) when nothing exists at `path` and
  // Error(NamespaceMismatch) when it exists but only outside `nspace`.
  Resolved resolve(const Pathspec& path, const std::string& nspace,
                   bool escape_namespace = false) const;

  // Highest succeeded run_id of the flow within the namespace;
  // Error(NotFound) when there is none.
  RunRecord latest_successful_run(const std::string& flow,
                                  const std::string& nspace,
                                  bool escape_namespace = false) const;

  // Ancestry of the task producing `artifact` (depth Artifact, or Task to
  // trace the whole task). Throws NotFound / NamespaceMismatch like
  // resolve.
  LineageNode lineage(const Pathspec& artifact, const std::string& nspace,
                      bool escape_namespace = false) const;

 private:
  // The run, after the namespace gate; throws NotFound / NamespaceMismatch.
  RunRecord visible_run(const Pathspec& path, const std::string& nspace,
                        bool escape_namespace) const;

  const CasStore* store_;
  const MetadataStore* meta_;
};

}  // namespace flowmill
