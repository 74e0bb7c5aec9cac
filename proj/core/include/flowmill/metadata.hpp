#pragma once

#include "flowmill/artifact.hpp"
#include "flowmill/cas.hpp"
#include "flowmill/pathspec.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace flowmill {

enum class RunStatus { Running, Succeeded, Failed };
enum class TaskStatus { Pending, Running, Succeeded, Failed };
enum class BackendKind { Local, SimRemote };

std::string to_string(RunStatus s);
std::string to_string(TaskStatus s);
std::string to_string(BackendKind b);
RunStatus run_status_from(const std::string& s);
TaskStatus task_status_from(const std::string& s);
BackendKind backend_from(const std::string& s);

struct ForeachFrameRef {
  std::string step;
  int64_t index = 0;
  int64_t cardinality = 0;

  bool operator==(const ForeachFrameRef&) const = default;
};

struct RunRecord {
  std::string flow;
  int64_t run_id = 0;
  std::string user;
  std::vector<std::string> tags;  // sorted, deduplicated; includes user:<user>
  RunStatus status = RunStatus::Running;
  int64_t created_at = 0;  // microseconds since epoch
  ContentHash code_package;
  std::map<std::string, ContentHash> parameters;
  std::optional<Pathspec> cloned_from;
};

struct TaskRecord {
  std::string flow;
  int64_t run_id = 0;
  int64_t task_id = 0;
  std::string step;
  std::vector<ForeachFrameRef> foreach_stack;
  int64_t attempt = 1;
  TaskStatus status = TaskStatus::Pending;
  std::vector<int64_t> parents;
  std::map<std::string, ContentHash> artifacts;
  BackendKind backend = BackendKind::Local;
  int64_t started_at = 0;   // 0 until first RUNNING
  int64_t finished_at = 0;  // 0 until terminal
};

// Timestamps render as ISO-8601 UTC; they are informational and excluded
// from determinism comparisons.
Json to_json(const RunRecord& run);
Json to_json(const TaskRecord& task);

struct QueryFilter {
  std::optional<std::string> flow;
  std::optional<std::string> nspace;  // matches runs tagged user:<nspace>
  std::vector<std::string> tags;      // every listed tag must be present
  std::optional<RunStatus> run_status;
  std::optional<TaskStatus> task_status;
  std::optional<std::string> step;
};

// System of record: one append-only JSON-lines event log per flow under
// <root>, one exclusive file lock per flow serializing writers. Readers
// never lock; a torn final line (writer mid-append) is ignored. Records
// are materialized by replaying the log on every read.
class MetadataStore {
 public:
  explicit MetadataStore(std::filesystem::path root);

  const std::filesystem::path& root() const { return root_; }

  // run_id = 1 + highest existing id for the flow, gap-free under
  // concurrent registration. The user:<user> tag is injected.
  RunRecord register_run(const std::string& flow, const std::string& user,
                         const std::vector<std::string>& tags,
                         const ContentHash& code_package,
                         const std::map<std::string, ContentHash>& parameters,
                         const std::optional<Pathspec>& cloned_from = std::nullopt);

  TaskRecord register_task(const Pathspec& run, const std::string& step,
                           const std::vector<ForeachFrameRef>& foreach_stack,
                           const std::vector<int64_t>& parents, BackendKind backend);

  // Legal transitions: RUNNING -> {SUCCEEDED, FAILED}.
  void record_run_status(const Pathspec& run, RunStatus status);

  // Legal transitions: PENDING -> RUNNING -> {SUCCEEDED, FAILED}; a repeat
  // RUNNING with a larger attempt records a retry. attempt 0 keeps the
  // current attempt.
  void record_task_status(const Pathspec& task, TaskStatus status, int64_t attempt = 0);

  // Write-once per name: rebinding a name to a different hash is
  // ArtifactRebind; recording the identical hash again is a no-op. New
  // names may still be appended after the task succeeds, which is how the
  // run card attaches to the end task.
  void record_artifacts(const Pathspec& task,
                        const std::map<std::string, ContentHash>& artifacts);

  std::vector<std::string> list_flows() const;
  std::optional<RunRecord> find_run(const Pathspec& run) const;
  std::optional<TaskRecord> find_task(const Pathspec& task) const;
  std::vector<TaskRecord> tasks_of_run(const Pathspec& run) const;

  // Sorted by (flow, run_id desc) / (flow, run_id desc, task_id asc).
  // Namespace and tag filters on tasks apply to the owning run's tags.
  std::vector<RunRecord> query_runs(const QueryFilter& filter) const;
  std::vector<TaskRecord> query_tasks(const QueryFilter& filter) const;

  // Referential integrity sweep: returns the artifact hashes recorded for
  // the run's tasks that do not resolve in the store (empty = sound).
  std::vector<std::string> audit_run(const Pathspec& run, const CasStore& store) const;

 private:
  std::filesystem::path root_;
};

}  // namespace flowmill
