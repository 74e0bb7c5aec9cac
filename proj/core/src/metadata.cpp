#include "flowmill/metadata.hpp"

#include "flowmill/errors.hpp"
#include "flowmill/flow_spec.hpp"
#include "flowmill/strict_json.hpp"
#include "flowmill/timeutil.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

namespace fs = std::filesystem;

namespace flowmill {

std::string to_string(RunStatus s) {
  switch (s) {
    case RunStatus::Running: return "RUNNING";
    case RunStatus::Succeeded: return "SUCCEEDED";
    case RunStatus::Failed: return "FAILED";
  }
  return "?";
}

std::string to_string(TaskStatus s) {
  switch (s) {
    case TaskStatus::Pending: return "PENDING";
    case TaskStatus::Running: return "RUNNING";
    case TaskStatus::Succeeded: return "SUCCEEDED";
    case TaskStatus::Failed: return "FAILED";
  }
  return "?";
}

std::string to_string(BackendKind b) {
  return b == BackendKind::Local ? "LOCAL" : "SIM_REMOTE";
}

RunStatus run_status_from(const std::string& s) {
  if (s == "RUNNING") return RunStatus::Running;
  if (s == "SUCCEEDED") return RunStatus::Succeeded;
  if (s == "FAILED") return RunStatus::Failed;
  raise(Errc::StoreIOError, "unknown run status '" + s + "'");
}

TaskStatus task_status_from(const std::string& s) {
  if (s == "PENDING") return TaskStatus::Pending;
  if (s == "RUNNING") return TaskStatus::Running;
  if (s == "SUCCEEDED") return TaskStatus::Succeeded;
  if (s == "FAILED") return TaskStatus::Failed;
  raise(Errc::StoreIOError, "unknown task status '" + s + "'");
}

BackendKind backend_from(const std::string& s) {
  if (s == "LOCAL") return BackendKind::Local;
  if (s == "SIM_REMOTE") return BackendKind::SimRemote;
  raise(Errc::StoreIOError, "unknown backend '" + s + "'");
}

Json to_json(const RunRecord& run) {
  Json doc{{"flow", run.flow},
           {"run_id", run.run_id},
           {"user", run.user},
           {"tags", run.tags},
           {"status", to_string(run.status)},
           {"created_at", format_utc(run.created_at)},
           {"code_package", run.code_package.hex}};
  Json params = Json::object();
  for (const auto& [name, hash] : run.parameters) params[name] = hash.hex;
  doc["parameters"] = std::move(params);
  if (run.cloned_from) doc["cloned_from"] = run.cloned_from->to_string();
  return doc;
}

Json to_json(const TaskRecord& task) {
  Json frames = Json::array();
  for (const auto& f : task.foreach_stack)
    frames.push_back(Json{{"step", f.step}, {"index", f.index}, {"cardinality", f.cardinality}});
  Json artifacts = Json::object();
  for (const auto& [name, hash] : task.artifacts) artifacts[name] = hash.hex;
  Json doc{{"flow", task.flow},
           {"run_id", task.run_id},
           {"task_id", task.task_id},
           {"step", task.step},
           {"foreach_stack", std::move(frames)},
           {"attempt", task.attempt},
           {"status", to_string(task.status)},
           {"parents", task.parents},
           {"artifacts", std::move(artifacts)},
           {"backend", to_string(task.backend)}};
  if (task.started_at) doc["started_at"] = format_utc(task.started_at);
  if (task.finished_at) doc["finished_at"] = format_utc(task.finished_at);
  return doc;
}

namespace {

constexpr const char* kLogSuffix = ".events.jsonl";

// Exclusive advisory lock per flow. Each guard opens its own descriptor,
// so the lock also serializes threads within one process.
class FlowLock {
 public:
  explicit FlowLock(const fs::path& lock_path) {
    fd_ = ::open(lock_path.c_str(), O_CREAT | O_RDWR | O_CLOEXEC, 0644);
    if (fd_ < 0)
      raise(Errc::StoreIOError, "cannot open lock file " + lock_path.string());
    if (::flock(fd_, LOCK_EX) != 0) {
      ::close(fd_);
      raise(Errc::StoreIOError, "cannot lock " + lock_path.string());
    }
  }
  ~FlowLock() {
    if (fd_ >= 0) ::close(fd_);  // releases the flock
  }
  FlowLock(const FlowLock&) = delete;
  FlowLock& operator=(const FlowLock&) = delete;

 private:
  int fd_ = -1;
};

struct FlowState {
  std::map<int64_t, RunRecord> runs;
  std::map<int64_t, std::map<int64_t, TaskRecord>> tasks;  // run_id -> task_id -> record
};

void apply_event(const std::string& flow, const Json& ev, FlowState& state) {
  const std::string kind = ev.at("ev").get<std::string>();
  int64_t at = parse_utc(ev.at("at").get<std::string>());
  if (kind == "run_created") {
    RunRecord run;
    run.flow = flow;
    run.run_id = ev.at("run_id").get<int64_t>();
    run.user = ev.at("user").get<std::string>();
    run.tags = ev.at("tags").get<std::vector<std::string>>();
    run.status = RunStatus::Running;
    run.created_at = at;
    run.code_package.hex = ev.at("code_package").get<std::string>();
    for (const auto& [name, hex] : ev.at("parameters").items())
      run.parameters[name] = ContentHash{hex.get<std::string>()};
    if (ev.contains("cloned_from"))
      run.cloned_from = Pathspec::parse(ev.at("cloned_from").get<std::string>());
    state.runs[run.run_id] = std::move(run);
    return;
  }
  int64_t run_id = ev.at("run_id").get<int64_t>();
  if (kind == "task_created") {
    TaskRecord task;
    task.flow = flow;
    task.run_id = run_id;
    task.task_id = ev.at("task_id").get<int64_t>();
    task.step = ev.at("step").get<std::string>();
    for (const auto& frame : ev.at("foreach_stack"))
      task.foreach_stack.push_back({frame.at("step").get<std::string>(),
                                    frame.at("index").get<int64_t>(),
                                    frame.at("cardinality").get<int64_t>()});
    task.parents = ev.at("parents").get<std::vector<int64_t>>();
    task.backend = backend_from(ev.at("backend").get<std::string>());
    state.tasks[run_id][task.task_id] = std::move(task);
    return;
  }
  if (kind == "status") {
    if (ev.contains("task_id")) {
      TaskRecord& task = state.tasks.at(run_id).at(ev.at("task_id").get<int64_t>());
      task.status = task_status_from(ev.at("status").get<std::string>());
      task.attempt = ev.at("attempt").get<int64_t>();
      if (task.status == TaskStatus::Running && task.started_at == 0)
        task.started_at = at;
      if (task.status == TaskStatus::Succeeded || task.status == TaskStatus::Failed)
        task.finished_at = at;
    } else {
      state.runs.at(run_id).status = run_status_from(ev.at("status").get<std::string>());
    }
    return;
  }
  if (kind == "artifacts") {
    TaskRecord& task = state.tasks.at(run_id).at(ev.at("task_id").get<int64_t>());
    for (const auto& [name, hex] : ev.at("artifacts").items())
      task.artifacts[name] = ContentHash{hex.get<std::string>()};
    return;
  }
  raise(Errc::StoreIOError, "unknown event type '" + kind + "' in log for " + flow);
}

}  // namespace

MetadataStore::MetadataStore(fs::path root) : root_(std::move(root)) {
  std::error_code ec;
  fs::create_directories(root_, ec);
  if (ec) raise(Errc::StoreIOError, "cannot create metadata root " + root_.string());
}

namespace {

fs::path log_path(const fs::path& root, const std::string& flow) {
  return root / (flow + kLogSuffix);
}

FlowState load_state(const fs::path& root, const std::string& flow) {
  FlowState state;
  std::ifstream in(log_path(root, flow), std::ios::binary);
  if (!in.is_open()) return state;
  std::stringstream buffer;
  buffer << in.rdbuf();
  const std::string content = buffer.str();

  size_t begin = 0;
  while (begin < content.size()) {
    size_t nl = content.find('\n', begin);
    bool torn = nl == std::string::npos;  // writer mid-append
    std::string line = content.substr(begin, torn ? std::string::npos : nl - begin);
    if (!line.empty()) {
      try {
        apply_event(flow, strict_parse_json(line), state);
      } catch (const std::exception& e) {
        if (torn) break;
        raise(Errc::StoreIOError,
              "corrupt metadata log for '" + flow + "': " + e.what());
      }
    }
    if (torn) break;
    begin = nl + 1;
  }
  return state;
}

void append_event(const fs::path& root, const std::string& flow, Json event) {
  event["at"] = format_utc(now_micros());
  const std::string line = event.dump() + "\n";
  int fd = ::open(log_path(root, flow).c_str(), O_CREAT | O_WRONLY | O_APPEND | O_CLOEXEC, 0644);
  if (fd < 0) raise(Errc::StoreIOError, "cannot open log for flow '" + flow + "'");
  size_t written = 0;
  while (written < line.size()) {
    ssize_t n = ::write(fd, line.data() + written, line.size() - written);
    if (n < 0) {
      ::close(fd);
      raise(Errc::StoreIOError, "write failed on log for flow '" + flow + "'");
    }
    written += static_cast<size_t>(n);
  }
  ::close(fd);
}

const RunRecord* run_of(const FlowState& state, int64_t run_id) {
  auto it = state.runs.find(run_id);
  return it == state.runs.end() ? nullptr : &it->second;
}

const TaskRecord* task_of(const FlowState& state, const Pathspec& spec) {
  auto runs = state.tasks.find(spec.run_id);
  if (runs == state.tasks.end()) return nullptr;
  auto it = runs->second.find(spec.task_id);
  if (it == runs->second.end()) return nullptr;
  if (it->second.step != spec.step) return nullptr;
  return &it->second;
}

void require_depth(const Pathspec& spec, Pathspec::Depth depth, const char* what) {
  if (spec.depth != depth)
    raise(Errc::PathError, std::string("pathspec '") + spec.to_string() + "' does not address a " + what);
}

}  // namespace

RunRecord MetadataStore::register_run(const std::string& flow, const std::string& user,
                                      const std::vector<std::string>& tags,
                                      const ContentHash& code_package,
                                      const std::map<std::string, ContentHash>& parameters,
                                      const std::optional<Pathspec>& cloned_from) {
  if (!valid_identifier(flow)) raise(Errc::PathError, "bad flow name '" + flow + "'");
  std::set<std::string> tag_set(tags.begin(), tags.end());
  tag_set.insert("user:" + user);

  FlowLock lock(root_ / (flow + ".lock"));
  FlowState state = load_state(root_, flow);
  int64_t run_id = state.runs.empty() ? 1 : state.runs.rbegin()->first + 1;

  Json params = Json::object();
  for (const auto& [name, hash] : parameters) params[name] = hash.hex;
  Json event{{"ev", "run_created"},
             {"flow", flow},
             {"run_id", run_id},
             {"user", user},
             {"tags", std::vector<std::string>(tag_set.begin(), tag_set.end())},
             {"code_package", code_package.hex},
             {"parameters", std::move(params)}};
  if (cloned_from) event["cloned_from"] = cloned_from->to_string();
  append_event(root_, flow, std::move(event));

  return *find_run(Pathspec::of_run(flow, run_id));
}

TaskRecord MetadataStore::register_task(const Pathspec& run, const std::string& step,
                                        const std::vector<ForeachFrameRef>& foreach_stack,
                                        const std::vector<int64_t>& parents,
                                        BackendKind backend) {
  require_depth(run, Pathspec::Depth::Run, "run");
  for (const auto& frame : foreach_stack)
    if (frame.index < 0 || frame.index >= frame.cardinality)
      raise(Errc::PathError, "foreach frame index out of range in step '" + step + "'");

  FlowLock lock(root_ / (run.flow + ".lock"));
  FlowState state = load_state(root_, run.flow);
  const RunRecord* record = run_of(state, run.run_id);
  if (!record) raise(Errc::UnknownRun, "no run " + run.to_string());
  if (record->status != RunStatus::Running)
    raise(Errc::RunClosed, "run " + run.to_string() + " is " + to_string(record->status));

  const auto& existing = state.tasks[run.run_id];
  int64_t task_id = existing.empty() ? 1 : existing.rbegin()->first + 1;
  for (int64_t parent : parents)
    if (!existing.count(parent))
      raise(Errc::NotFound, "parent task " + std::to_string(parent) + " not in " + run.to_string());

  Json frames = Json::array();
  for (const auto& f : foreach_stack)
    frames.push_back(Json{{"step", f.step}, {"index", f.index}, {"cardinality", f.cardinality}});
  append_event(root_, run.flow,
               Json{{"ev", "task_created"},
                    {"run_id", run.run_id},
                    {"task_id", task_id},
                    {"step", step},
                    {"foreach_stack", std::move(frames)},
                    {"parents", parents},
                    {"backend", to_string(backend)}});

  return *find_task(Pathspec::of_task(run.flow, run.run_id, step, task_id));
}

void MetadataStore::record_run_status(const Pathspec& run, RunStatus status) {
  require_depth(run, Pathspec::Depth::Run, "run");
  FlowLock lock(root_ / (run.flow + ".lock"));
  FlowState state = load_state(root_, run.flow);
  const RunRecord* record = run_of(state, run.run_id);
  if (!record) raise(Errc::UnknownRun, "no run " + run.to_string());
  if (record->status != RunStatus::Running || status == RunStatus::Running)
    raise(Errc::IllegalTransition, "run " + run.to_string() + ": " +
                                       to_string(record->status) + " -> " + to_string(status));
  append_event(root_, run.flow,
               Json{{"ev", "status"}, {"run_id", run.run_id}, {"status", to_string(status)}});
}

void MetadataStore::record_task_status(const Pathspec& task, TaskStatus status, int64_t attempt) {
  require_depth(task, Pathspec::Depth::Task, "task");
  FlowLock lock(root_ / (task.flow + ".lock"));
  FlowState state = load_state(root_, task.flow);
  const TaskRecord* record = task_of(state, task);
  if (!record) raise(Errc::NotFound, "no task " + task.to_string());

  const auto illegal = [&]() {
    raise(Errc::IllegalTransition, "task " + task.to_string() + ": " +
                                       to_string(record->status) + " -> " + to_string(status));
  };
  int64_t next_attempt = attempt == 0 ? record->attempt : attempt;
  if (next_attempt < record->attempt) illegal();
  switch (record->status) {
    case TaskStatus::Pending:
      if (status != TaskStatus::Running) illegal();
      break;
    case TaskStatus::Running:
      if (status == TaskStatus::Pending) illegal();
      if (status == TaskStatus::Running && next_attempt <= record->attempt)
        illegal();  // a retry must bump the attempt
      break;
    case TaskStatus::Succeeded:
    case TaskStatus::Failed:
      illegal();
  }
  append_event(root_, task.flow, Json{{"ev", "status"},
                                      {"run_id", task.run_id},
                                      {"task_id", task.task_id},
                                      {"status", to_string(status)},
                                      {"attempt", next_attempt}});
}

void MetadataStore::record_artifacts(const Pathspec& task,
                                     const std::map<std::string, ContentHash>& artifacts) {
  require_depth(task, Pathspec::Depth::Task, "task");
  if (artifacts.empty()) return;
  FlowLock lock(root_ / (task.flow + ".lock"));
  FlowState state = load_state(root_, task.flow);
  const TaskRecord* record = task_of(state, task);
  if (!record) raise(Errc::NotFound, "no task " + task.to_string());

  Json fresh = Json::object();
  for (const auto& [name, hash] : artifacts) {
    auto bound = record->artifacts.find(name);
    if (bound != record->artifacts.end()) {
      if (bound->second.hex != hash.hex)
        raise(Errc::ArtifactRebind, "artifact '" + name + "' of " + task.to_string() +
                                        " is already bound to a different value");
      continue;  // identical rebind is a no-op
    }
    fresh[name] = hash.hex;
  }
  if (fresh.empty()) return;
  append_event(root_, task.flow, Json{{"ev", "artifacts"},
                                      {"run_id", task.run_id},
                                      {"task_id", task.task_id},
                                      {"artifacts", std::move(fresh)}});
}

std::vector<std::string> MetadataStore::list_flows() const {
  std::vector<std::string> flows;
  std::error_code ec;
  for (const auto& entry : fs::directory_iterator(root_, ec)) {
    const std::string name = entry.path().filename().string();
    if (name.size() > std::strlen(kLogSuffix) &&
        name.ends_with(kLogSuffix))
      flows.push_back(name.substr(0, name.size() - std::strlen(kLogSuffix)));
  }
  std::sort(flows.begin(), flows.end());
  return flows;
}

std::optional<RunRecord> MetadataStore::find_run(const Pathspec& run) const {
  FlowState state = load_state(root_, run.flow);
  const RunRecord* record = run_of(state, run.run_id);
  if (!record) return std::nullopt;
  return *record;
}

std::optional<TaskRecord> MetadataStore::find_task(const Pathspec& task) const {
  require_depth(task, Pathspec::Depth::Task, "task");
  FlowState state = load_state(root_, task.flow);
  const TaskRecord* record = task_of(state, task);
  if (!record) return std::nullopt;
  return *record;
}

std::vector<TaskRecord> MetadataStore::tasks_of_run(const Pathspec& run) const {
  FlowState state = load_state(root_, run.flow);
  std::vector<TaskRecord> out;
  auto it = state.tasks.find(run.run_id);
  if (it != state.tasks.end())
    for (const auto& [id, task] : it->second) out.push_back(task);
  return out;  // map order = task_id ascending
}

namespace {

bool run_matches(const RunRecord& run, const QueryFilter& filter) {
  if (filter.nspace) {
    const std::string want = "user:" + *filter.nspace;
    if (std::find(run.tags.begin(), run.tags.end(), want) == run.tags.end()) return false;
  }
  for (const auto& tag : filter.tags)
    if (std::find(run.tags.begin(), run.tags.end(), tag) == run.tags.end()) return false;
  if (filter.run_status && run.status != *filter.run_status) return false;
  return true;
}

}  // namespace

std::vector<RunRecord> MetadataStore::query_runs(const QueryFilter& filter) const {
  std::vector<std::string> flows =
      filter.flow ? std::vector<std::string>{*filter.flow} : list_flows();
  std::vector<RunRecord> out;
  for (const auto& flow : flows) {
    FlowState state = load_state(root_, flow);
    for (auto it = state.runs.rbegin(); it != state.runs.rend(); ++it)
      if (run_matches(it->second, filter)) out.push_back(it->second);
  }
  return out;
}

std::vector<TaskRecord> MetadataStore::query_tasks(const QueryFilter& filter) const {
  std::vector<std::string> flows =
      filter.flow ? std::vector<std::string>{*filter.flow} : list_flows();
  std::vector<TaskRecord> out;
  for (const auto& flow : flows) {
    FlowState state = load_state(root_, flow);
    for (auto runs = state.tasks.rbegin(); runs != state.tasks.rend(); ++runs) {
      const RunRecord* run = run_of(state, runs->first);
      if (!run || !run_matches(*run, filter)) continue;
      for (const auto& [id, task] : runs->second) {
        if (filter.step && task.step != *filter.step) continue;
        if (filter.task_status && task.status != *filter.task_status) continue;
        out.push_back(task);
      }
    }
  }
  return out;
}

std::vector<std::string> MetadataStore::audit_run(const Pathspec& run,
                                                  const CasStore& store) const {
  std::set<std::string> missing;
  for (const auto& task : tasks_of_run(run))
    for (const auto& [name, hash] : task.artifacts)
      if (!store.contains(hash)) missing.insert(hash.hex);
  return {missing.begin(), missing.end()};
}

}  // namespace flowmill
