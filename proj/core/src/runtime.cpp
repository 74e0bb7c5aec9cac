#include "flowmill/runtime.hpp"

#include "flowmill/cards.hpp"
#include "flowmill/errors.hpp"

#include <algorithm>
#include <condition_variable>
#include <deque>
#include <fstream>
#include <mutex>
#include <thread>

namespace fs = std::filesystem;

namespace flowmill {
namespace {

std::string read_file_or_empty(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return {};
  return std::string((std::istreambuf_iterator<char>(in)),
                     std::istreambuf_iterator<char>());
}

// Identity of one schedulable node: the step plus the foreach frames it
// runs under. Split branches need no extra qualifier — the step name alone
// distinguishes them.
std::string node_key(const std::string& step,
                     const std::vector<ForeachFrameRef>& stack) {
  std::string key = step;
  for (const auto& frame : stack)
    key += "|" + frame.step + ":" + std::to_string(frame.index) + "/" +
           std::to_string(frame.cardinality);
  return key;
}

struct WorkItem {
  std::string step;
  std::vector<ForeachFrameRef> stack;
  std::vector<InputBinding> inputs;
  std::map<std::string, ContentHash> auto_artifacts;
  std::vector<int64_t> parents;
  std::optional<int64_t> clone_source;  // source-run task id to clone
};

struct JoinGate {
  bool is_foreach = false;
  size_t expected = 0;
  std::vector<TaskRecord> arrived;
};

std::map<std::string, ContentHash> auto_view(const TaskRecord& rec) {
  return binding_of(rec).artifacts;
}

std::vector<int64_t> parents_of(const std::vector<InputBinding>& inputs) {
  std::vector<int64_t> ids;
  ids.reserve(inputs.size());
  for (const auto& b : inputs) ids.push_back(b.parent_task);
  return ids;
}

class Scheduler {
 public:
  Scheduler(const RuntimeEnv& env, const FlowSpec& spec,
            const FlowAnalysis& analysis, const RuntimeOptions& opts,
            const RunRecord& run, Backend& local, Backend& remote,
            std::map<std::string, ContentHash> params,
            const std::set<std::string>* reexec_steps,
            const std::map<std::string, TaskRecord>* source_nodes)
      : env_(env),
        spec_(spec),
        analysis_(analysis),
        opts_(opts),
        run_(run),
        local_(local),
        remote_(remote),
        params_(std::move(params)),
        reexec_(reexec_steps),
        source_nodes_(source_nodes),
        run_path_(Pathspec::of_run(run.flow, run.run_id)) {
    flow_artifact_ = env_.store->put(
        ArtifactValue::from_json(strict_parse_json(serialize_flow(spec_))));
  }

  bool drive() {
    {
      std::lock_guard lock(mu_);
      enqueue_locked(WorkItem{"start", {}, {}, {}, {}, std::nullopt});
    }
    int threads = opts_.max_parallel > 0
                      ? opts_.max_parallel
                      : static_cast<int>(opts_.capacity.cpu_slots);
    if (threads < 1) threads = 1;
    std::vector<std::thread> pool;
    pool.reserve(static_cast<size_t>(threads));
    for (int i = 0; i < threads; ++i)
      pool.emplace_back([this] { executor(); });
    for (auto& t : pool) t.join();
    return done_ && !failed_;
  }

  const std::optional<std::string>& failed_step() const { return failed_step_; }
  const std::string& error() const { return error_; }

 private:
  void executor() {
    for (;;) {
      WorkItem item;
      {
        std::unique_lock lock(mu_);
        cv_.wait(lock, [&] {
          return done_ || failed_ || !ready_.empty() || in_flight_ == 0;
        });
        if (done_ || failed_) return;
        if (ready_.empty()) {
          if (in_flight_ == 0) {
            // nothing queued and nothing running: the graph cannot advance
            mark_failed_locked("", "scheduler stalled before reaching end");
            cv_.notify_all();
            return;
          }
          continue;
        }
        item = std::move(ready_.front());
        ready_.pop_front();
        ++in_flight_;
      }
      execute(std::move(item));
    }
  }

  // Every path through execute ends in exactly one finish() call, which
  // decrements in_flight_.
  void execute(WorkItem item) {
    Pathspec tp;
    try {
      const StepSpec& step = *spec_.find_step(item.step);
      TaskRecord rec = env_.meta->register_task(
          run_path_, item.step, item.stack, item.parents, pick(step).kind());
      tp = Pathspec::of_task(run_.flow, run_.run_id, item.step, rec.task_id);
    } catch (const std::exception& e) {
      finish(std::nullopt, false, item.step,
             std::string("task registration failed: ") + e.what());
      return;
    }
    try {
      if (item.clone_source)
        run_clone(item, tp);
      else
        run_fresh(item, tp);
    } catch (const std::exception& e) {
      finish(std::nullopt, false, item.step, e.what());
    }
  }

  void run_clone(const WorkItem& item, const Pathspec& tp) {
    const TaskRecord& src = source_nodes_->at(node_key(item.step, item.stack));
    env_.meta->record_task_status(tp, TaskStatus::Running, 1);
    env_.meta->record_artifacts(tp, src.artifacts);
    env_.meta->record_task_status(tp, TaskStatus::Succeeded);
    finish(env_.meta->find_task(tp), true, item.step, "");
  }

  void run_fresh(const WorkItem& item, const Pathspec& tp) {
    const StepSpec& step = *spec_.find_step(item.step);
    Backend& backend = pick(step);

    TaskContext ctx;
    ctx.task = tp;
    ctx.command = step.command;
    ctx.decorators = step.decorators;
    ctx.inputs = item.inputs;
    ctx.auto_artifacts = item.auto_artifacts;
    ctx.parameters = params_;

    const int max_attempts = std::max(1, step.decorators.max_attempts);
    bool ok = false;
    std::string why;
    fs::path attempt_dir;
    for (int attempt = 1; attempt <= max_attempts; ++attempt) {
      ctx.attempt = attempt;
      attempt_dir = env_.scratch / run_.flow /
                    ("run" + std::to_string(run_.run_id)) /
                    (item.step + "-" + std::to_string(tp.task_id)) /
                    ("a" + std::to_string(attempt));
      bool admitted = false;
      try {
        backend.admit(step.decorators.resources);
        admitted = true;
        env_.meta->record_task_status(tp, TaskStatus::Running, attempt);
        SubmitHandle handle = backend.launch(ctx, attempt_dir);
        admitted = false;  // await releases from here on
        TaskOutcome outcome = backend.await(handle);
        if (outcome.worker_crashed) {
          why = "worker-level crash";
          break;
        }
        if (outcome.protocol_violation) {
          why = "staged outputs violate the task protocol";
          break;
        }
        if (outcome.exit_code == 0) {
          persist_success(item, tp, backend.kind(), attempt_dir);
          ok = true;
          break;
        }
        if (attempt == max_attempts) {
          why = "command exited with code " + std::to_string(outcome.exit_code);
          break;
        }
      } catch (const std::exception& e) {
        if (admitted) backend.ledger().release(step.decorators.resources);
        // the record must be RUNNING before it can be failed
        try {
          env_.meta->record_task_status(tp, TaskStatus::Running, attempt);
        } catch (...) {
        }
        why = e.what();
        break;
      }
    }

    record_stdio(tp, attempt_dir);
    try {
      env_.meta->record_task_status(
          tp, ok ? TaskStatus::Succeeded : TaskStatus::Failed);
    } catch (const std::exception& e) {
      if (ok) {
        ok = false;
        why = std::string("cannot record task status: ") + e.what();
      }
    }
    finish(env_.meta->find_task(tp), ok, item.step, why);
  }

  // On exit 0 the task's record receives its full downstream-visible state:
  // the auto-propagated names (parameters seed them at start), overlaid by
  // whatever the task staged. SIM_REMOTE workers have already persisted the
  // staged names, so only the rest is appended here.
  void persist_success(const WorkItem& item, const Pathspec& tp,
                       BackendKind kind, const fs::path& attempt_dir) {
    std::map<std::string, ContentHash> merged;
    if (item.step == "start") merged = params_;
    for (const auto& [name, hash] : item.auto_artifacts) merged[name] = hash;
    if (kind == BackendKind::Local) {
      auto staged = collect_outputs(attempt_dir / "out");
      for (const auto& [name, value] : staged)
        merged[name] = env_.store->put(value);
    } else {
      if (auto fresh = env_.meta->find_task(tp))
        for (const auto& [name, hash] : fresh->artifacts) merged[name] = hash;
    }
    if (item.step == "start") merged["_flow"] = flow_artifact_;
    env_.meta->record_artifacts(tp, merged);
  }

  void record_stdio(const Pathspec& tp, const fs::path& attempt_dir) {
    try {
      std::map<std::string, ContentHash> io;
      io["_stdout"] = env_.store->put(
          ArtifactValue::from_bytes(read_file_or_empty(attempt_dir / "stdout")));
      io["_stderr"] = env_.store->put(
          ArtifactValue::from_bytes(read_file_or_empty(attempt_dir / "stderr")));
      env_.meta->record_artifacts(tp, io);
    } catch (...) {
    }
  }

  Backend& pick(const StepSpec& step) {
    if (opts_.backend == BackendKind::SimRemote || step.decorators.remote)
      return remote_;
    return local_;
  }

  void finish(std::optional<TaskRecord> rec, bool ok, const std::string& step,
              const std::string& why) {
    std::lock_guard lock(mu_);
    if (!ok) {
      mark_failed_locked(step, why);
    } else if (!failed_ && rec) {
      try {
        advance_locked(*rec);
      } catch (const std::exception& e) {
        mark_failed_locked(rec->step, e.what());
      }
    }
    --in_flight_;
    cv_.notify_all();
  }

  void mark_failed_locked(const std::string& step, const std::string& why) {
    if (failed_) return;
    failed_ = true;
    if (!step.empty()) failed_step_ = step;
    error_ = why;
    ready_.clear();  // after a failure nothing new is scheduled
  }

  void enqueue_locked(WorkItem item) {
    if (reexec_ && !reexec_->count(item.step)) {
      auto it = source_nodes_->find(node_key(item.step, item.stack));
      if (it != source_nodes_->end())
        item.clone_source = it->second.task_id;
    }
    ready_.push_back(std::move(item));
    cv_.notify_all();
  }

  void advance_locked(const TaskRecord& rec) {
    if (rec.step == "end") {
      done_ = true;
      return;
    }
    const StepSpec& step = *spec_.find_step(rec.step);
    const Transition& t = *step.transition;
    switch (t.kind) {
      case Transition::Kind::Linear: {
        const std::string& target = t.targets[0];
        const StepInfo& info = analysis_.steps.at(target);
        if (info.role == StepInfo::Role::StaticJoin) {
          arrive_static_locked(target, rec);
          break;
        }
        if (info.role == StepInfo::Role::ForeachJoin) {
          if (rec.foreach_stack.empty() ||
              info.joins != rec.foreach_stack.back().step)
            raise(Errc::IncompleteFanIn,
                  "arrival at '" + target + "' without its foreach frame");
          arrive_foreach_locked(target, rec);
          break;
        }
        enqueue_locked(WorkItem{target,
                                rec.foreach_stack,
                                {binding_of(rec)},
                                auto_view(rec),
                                {rec.task_id},
                                std::nullopt});
        break;
      }
      case Transition::Kind::Split: {
        for (const auto& target : t.targets)
          enqueue_locked(WorkItem{target,
                                  rec.foreach_stack,
                                  {binding_of(rec)},
                                  auto_view(rec),
                                  {rec.task_id},
                                  std::nullopt});
        break;
      }
      case Transition::Kind::Foreach: {
        auto art = rec.artifacts.find(t.foreach_key);
        if (art == rec.artifacts.end())
          raise(Errc::NotFound, "foreach artifact '" + t.foreach_key +
                                    "' was not produced by step '" + rec.step + "'");
        std::vector<ContentHash> elems =
            split_list_artifact(*env_.store, art->second);
        const auto n = static_cast<int64_t>(elems.size());
        if (n == 0) {
          // degenerate fan-out: the join runs immediately with no inputs
          enqueue_locked(WorkItem{analysis_.foreach_join.at(rec.step),
                                  rec.foreach_stack,
                                  {},
                                  {},
                                  {rec.task_id},
                                  std::nullopt});
          break;
        }
        for (int64_t i = 0; i < n; ++i) {
          InputBinding binding = binding_of(rec);
          binding.foreach_item = elems[static_cast<size_t>(i)];
          std::vector<ForeachFrameRef> stack = rec.foreach_stack;
          stack.push_back(ForeachFrameRef{rec.step, i, n});
          enqueue_locked(WorkItem{t.targets[0],
                                  std::move(stack),
                                  {std::move(binding)},
                                  auto_view(rec),
                                  {rec.task_id},
                                  std::nullopt});
        }
        break;
      }
    }
  }

  void arrive_static_locked(const std::string& join, const TaskRecord& rec) {
    const std::string key = node_key(join, rec.foreach_stack);
    JoinGate& gate = gates_[key];
    gate.is_foreach = false;
    gate.expected = analysis_.steps.at(join).join_sources.size();
    gate.arrived.push_back(rec);
    if (gate.arrived.size() < gate.expected) return;
    JoinInputs ji = collect_join_inputs(gate.arrived, false,
                                        analysis_.steps.at(join).join_sources);
    gates_.erase(key);
    enqueue_locked(WorkItem{join, rec.foreach_stack, ji.inputs,
                            ji.auto_artifacts, parents_of(ji.inputs),
                            std::nullopt});
  }

  void arrive_foreach_locked(const std::string& join, const TaskRecord& rec) {
    std::vector<ForeachFrameRef> outer(rec.foreach_stack.begin(),
                                       rec.foreach_stack.end() - 1);
    const std::string key = node_key(join, outer);
    JoinGate& gate = gates_[key];
    gate.is_foreach = true;
    gate.expected = static_cast<size_t>(rec.foreach_stack.back().cardinality);
    gate.arrived.push_back(rec);
    if (gate.arrived.size() < gate.expected) return;
    JoinInputs ji = collect_join_inputs(gate.arrived, true);
    gates_.erase(key);
    enqueue_locked(WorkItem{join, std::move(outer), ji.inputs,
                            ji.auto_artifacts, parents_of(ji.inputs),
                            std::nullopt});
  }

  const RuntimeEnv& env_;
  const FlowSpec& spec_;
  const FlowAnalysis& analysis_;
  const RuntimeOptions& opts_;
  RunRecord run_;
  Backend& local_;
  Backend& remote_;
  std::map<std::string, ContentHash> params_;
  const std::set<std::string>* reexec_;
  const std::map<std::string, TaskRecord>* source_nodes_;
  Pathspec run_path_;
  ContentHash flow_artifact_;

  std::mutex mu_;
  std::condition_variable cv_;
  std::deque<WorkItem> ready_;
  std::map<std::string, JoinGate> gates_;
  int in_flight_ = 0;
  bool done_ = false;
  bool failed_ = false;
  std::optional<std::string> failed_step_;
  std::string error_;
};

void require_valid(const FlowSpec& spec) {
  ValidationReport report = validate_dag(spec);
  if (report.ok) return;
  std::string detail = "flow is invalid";
  if (!report.diagnostics.empty())
    detail = report.diagnostics.front().code + ": " +
             report.diagnostics.front().message;
  raise(Errc::InvalidFlow, detail);
}

// Shared tail of run_flow and resume_run: drives the registered run to a
// terminal state and reports it.
RunResult drive_run(const RuntimeEnv& env, const FlowSpec& spec,
                    const FlowAnalysis& analysis, const RuntimeOptions& opts,
                    const RunRecord& run, const ContentHash& package,
                    const std::map<std::string, ContentHash>& params,
                    const std::set<std::string>* reexec_steps,
                    const std::map<std::string, TaskRecord>* source_nodes) {
  LocalBackend local(*env.store, env.flow_dir, opts.capacity);
  SimRemoteBackend remote(*env.store, *env.meta, env.worker_bin, package,
                          opts.capacity);
  Scheduler scheduler(env, spec, analysis, opts, run, local, remote, params,
                      reexec_steps, source_nodes);
  const bool ok = scheduler.drive();

  const Pathspec run_path = Pathspec::of_run(run.flow, run.run_id);
  // reaper: no record may stay non-terminal once the coordinator is done
  for (const auto& t : env.meta->tasks_of_run(run_path)) {
    if (t.status != TaskStatus::Pending && t.status != TaskStatus::Running)
      continue;
    const Pathspec tp =
        Pathspec::of_task(t.flow, t.run_id, t.step, t.task_id);
    try {
      if (t.status == TaskStatus::Pending)
        env.meta->record_task_status(tp, TaskStatus::Running);
      env.meta->record_task_status(tp, TaskStatus::Failed);
    } catch (...) {
    }
  }
  env.meta->record_run_status(run_path,
                              ok ? RunStatus::Succeeded : RunStatus::Failed);

  // the card decorator documents successful runs; best-effort, the run's
  // outcome never depends on rendering
  const bool wants_card = std::any_of(
      spec.steps.begin(), spec.steps.end(),
      [](const StepSpec& s) { return s.decorators.card; });
  if (ok && wants_card) {
    try {
      std::string html =
          render_card(*env.store, spec, *env.meta->find_run(run_path),
                      env.meta->tasks_of_run(run_path));
      store_card(*env.store, *env.meta, run_path, html);
    } catch (...) {
    }
  }

  RunResult result;
  result.run = *env.meta->find_run(run_path);
  result.tasks = env.meta->tasks_of_run(run_path);
  result.status = ok ? RunStatus::Succeeded : RunStatus::Failed;
  result.failed_step = scheduler.failed_step();
  result.error = scheduler.error();
  return result;
}

std::set<std::string> downstream_closure(const FlowSpec& spec,
                                         const std::set<std::string>& seeds) {
  std::set<std::string> closed = seeds;
  std::deque<std::string> frontier(seeds.begin(), seeds.end());
  while (!frontier.empty()) {
    const StepSpec* step = spec.find_step(frontier.front());
    frontier.pop_front();
    if (!step || !step->transition) continue;
    for (const auto& target : step->transition->targets)
      if (closed.insert(target).second) frontier.push_back(target);
  }
  return closed;
}

}  // namespace

InputBinding binding_of(const TaskRecord& parent) {
  InputBinding binding;
  binding.parent_task = parent.task_id;
  for (const auto& [name, hash] : parent.artifacts)
    if (!name.empty() && name[0] != '_') binding.artifacts[name] = hash;
  return binding;
}

std::vector<ContentHash> split_list_artifact(const CasStore& store,
                                             const ContentHash& list) {
  ArtifactValue value = store.get(list);
  if (value.tag != ArtifactValue::Tag::Json || !value.json.is_array())
    raise(Errc::NotAList, "foreach artifact does not decode to a json array");
  std::vector<ContentHash> elements;
  elements.reserve(value.json.size());
  for (const Json& element : value.json)
    elements.push_back(store.put(ArtifactValue::from_json(element)));
  return elements;
}

JoinInputs collect_join_inputs(const std::vector<TaskRecord>& parents,
                               bool is_foreach_join,
                               const std::vector<std::string>& branch_order) {
  std::vector<TaskRecord> ordered = parents;
  if (is_foreach_join && !ordered.empty()) {
    for (const auto& p : ordered)
      if (p.foreach_stack.empty())
        raise(Errc::IncompleteFanIn,
              "foreach join parent " + std::to_string(p.task_id) +
                  " carries no foreach frame");
    const ForeachFrameRef& first = ordered.front().foreach_stack.back();
    for (const auto& p : ordered) {
      const ForeachFrameRef& frame = p.foreach_stack.back();
      if (frame.step != first.step || frame.cardinality != first.cardinality)
        raise(Errc::IncompleteFanIn,
              "foreach join parents disagree on their frame");
    }
    if (static_cast<int64_t>(ordered.size()) != first.cardinality)
      raise(Errc::IncompleteFanIn,
            "foreach join expected " + std::to_string(first.cardinality) +
                " inputs, got " + std::to_string(ordered.size()));
    std::sort(ordered.begin(), ordered.end(),
              [](const TaskRecord& a, const TaskRecord& b) {
                return a.foreach_stack.back().index <
                       b.foreach_stack.back().index;
              });
    for (size_t i = 0; i < ordered.size(); ++i)
      if (ordered[i].foreach_stack.back().index != static_cast<int64_t>(i))
        raise(Errc::IncompleteFanIn,
              "foreach join is missing index " + std::to_string(i));
  } else if (!is_foreach_join && !branch_order.empty()) {
    auto position = [&](const TaskRecord& p) {
      auto it = std::find(branch_order.begin(), branch_order.end(), p.step);
      if (it == branch_order.end())
        raise(Errc::IncompleteFanIn,
              "unexpected join arrival from step '" + p.step + "'");
      return it - branch_order.begin();
    };
    std::sort(ordered.begin(), ordered.end(),
              [&](const TaskRecord& a, const TaskRecord& b) {
                return position(a) < position(b);
              });
    for (size_t i = 1; i < ordered.size(); ++i)
      if (ordered[i].step == ordered[i - 1].step)
        raise(Errc::IncompleteFanIn,
              "duplicate join arrival from step '" + ordered[i].step + "'");
  }

  JoinInputs result;
  result.inputs.reserve(ordered.size());
  for (const auto& p : ordered) result.inputs.push_back(binding_of(p));
  if (!result.inputs.empty()) {
    for (const auto& [name, hash] : result.inputs.front().artifacts) {
      bool everywhere = true;
      for (const auto& binding : result.inputs) {
        auto it = binding.artifacts.find(name);
        if (it == binding.artifacts.end() || !(it->second == hash)) {
          everywhere = false;
          break;
        }
      }
      if (everywhere) result.auto_artifacts[name] = hash;
    }
  }
  return result;
}

RunResult run_flow(const RuntimeEnv& env, const FlowSpec& spec,
                   const RuntimeOptions& opts) {
  require_valid(spec);
  FlowAnalysis analysis = analyze_flow(spec);

  std::map<std::string, Json> values;
  for (const auto& ps : spec.parameters) {
    auto supplied = opts.parameters.find(ps.name);
    if (supplied != opts.parameters.end())
      values[ps.name] = supplied->second;
    else if (ps.default_value)
      values[ps.name] = *ps.default_value;
    else if (ps.required)
      raise(Errc::MissingParameter,
            "required parameter '" + ps.name + "' was not supplied");
  }
  for (const auto& [name, _] : opts.parameters)
    if (std::none_of(spec.parameters.begin(), spec.parameters.end(),
                     [&](const ParameterSpec& ps) { return ps.name == name; }))
      raise(Errc::UnknownParameter,
            "flow '" + spec.name + "' declares no parameter '" + name + "'");

  std::map<std::string, ContentHash> param_hashes;
  for (const auto& [name, value] : values)
    param_hashes[name] = env.store->put(ArtifactValue::from_json(value));

  CodePackage package =
      package_code(*env.store, env.flow_dir, env.package_includes);
  RunRecord run = env.meta->register_run(spec.name, opts.user, opts.tags,
                                         package.hash, param_hashes);
  return drive_run(env, spec, analysis, opts, run, package.hash, param_hashes,
                   nullptr, nullptr);
}

RunResult resume_run(const RuntimeEnv& env, const FlowSpec& spec,
                     const Pathspec& source,
                     const std::optional<std::string>& from_step,
                     const RuntimeOptions& opts) {
  require_valid(spec);
  FlowAnalysis analysis = analyze_flow(spec);

  if (source.depth != Pathspec::Depth::Run)
    raise(Errc::PathError, "resume expects a flow/run pathspec");
  auto src_run = env.meta->find_run(source);
  if (!src_run)
    raise(Errc::UnknownRun, "no run " + source.to_string());
  if (src_run->status == RunStatus::Running)
    raise(Errc::RunNotTerminal,
          "run " + source.to_string() + " has not finished");
  std::vector<TaskRecord> src_tasks = env.meta->tasks_of_run(source);

  std::string origin;
  if (from_step) {
    if (!spec.find_step(*from_step))
      raise(Errc::UnknownStep, "flow '" + spec.name + "' has no step '" +
                                   *from_step + "'");
    origin = *from_step;
  } else {
    for (const auto& t : src_tasks)
      if (t.status == TaskStatus::Failed) {
        origin = t.step;
        break;
      }
    if (origin.empty())
      raise(Errc::NothingToResume,
            "run " + source.to_string() +
                " has no failed task; pass an explicit step to resume from");
  }

  // The re-executed region: the origin and everything downstream of it,
  // plus every step whose source tasks did not all succeed (a step that
  // never ran cannot be cloned) and everything downstream of those.
  std::set<std::string> seeds{origin};
  for (const auto& step : spec.steps) {
    bool clean = false;
    for (const auto& t : src_tasks)
      if (t.step == step.name) {
        clean = t.status == TaskStatus::Succeeded;
        if (!clean) break;
      }
    if (!clean) seeds.insert(step.name);
  }
  std::set<std::string> reexec = downstream_closure(spec, seeds);

  std::map<std::string, TaskRecord> source_nodes;
  for (const auto& t : src_tasks)
    if (t.status == TaskStatus::Succeeded)
      source_nodes[node_key(t.step, t.foreach_stack)] = t;

  RunRecord run =
      env.meta->register_run(spec.name, opts.user, opts.tags,
                             src_run->code_package, src_run->parameters, source);
  return drive_run(env, spec, analysis, opts, run, src_run->code_package,
                   src_run->parameters, &reexec, &source_nodes);
}

}  // namespace flowmill
