#include "flowmill/client.hpp"

#include "flowmill/errors.hpp"

#include <algorithm>
#include <functional>
#include <map>

namespace flowmill {
namespace {

bool owned_by(const RunRecord& run, const std::string& nspace) {
  const std::string tag = "user:" + nspace;
  return std::find(run.tags.begin(), run.tags.end(), tag) != run.tags.end();
}

}  // namespace

RunRecord Client::visible_run(const Pathspec& path, const std::string& nspace,
                              bool escape_namespace) const {
  auto run = meta_->find_run(Pathspec::of_run(path.flow, path.run_id));
  if (!run)
    raise(Errc::NotFound, "no run " + path.flow + "/" + std::to_string(path.run_id));
  if (!escape_namespace && !owned_by(*run, nspace))
    raise(Errc::NamespaceMismatch,
          path.flow + "/" + std::to_string(path.run_id) +
              " exists outside namespace " + nspace);
  return *run;
}

Resolved Client::resolve(const Pathspec& path, const std::string& nspace,
                         bool escape_namespace) const {
  Resolved out;
  out.depth = path.depth;

  if (path.depth == Pathspec::Depth::Flow) {
    QueryFilter filter;
    filter.flow = path.flow;
    std::vector<RunRecord> all = meta_->query_runs(filter);
    if (all.empty()) raise(Errc::NotFound, "no runs of flow " + path.flow);
    for (const auto& run : all)
      if (escape_namespace || owned_by(run, nspace)) out.runs.push_back(run);
    if (out.runs.empty())
      raise(Errc::NamespaceMismatch,
            path.flow + " has runs only outside namespace " + nspace);
    return out;
  }

  out.run = visible_run(path, nspace, escape_namespace);
  const Pathspec run_path = Pathspec::of_run(path.flow, path.run_id);

  if (path.depth == Pathspec::Depth::Run) {
    out.tasks = meta_->tasks_of_run(run_path);
    return out;
  }

  if (path.depth == Pathspec::Depth::Step) {
    for (const auto& task : meta_->tasks_of_run(run_path))
      if (task.step == path.step) out.tasks.push_back(task);
    if (out.tasks.empty())
      raise(Errc::NotFound, "step " + path.step + " has no tasks in " +
                                run_path.to_string());
    return out;
  }

  auto task = meta_->find_task(Pathspec::of_task(path.flow, path.run_id,
                                                 path.step, path.task_id));
  if (!task) raise(Errc::NotFound, "no task at " + path.to_string());
  out.task = *task;

  if (path.depth == Pathspec::Depth::Artifact) {
    auto it = task->artifacts.find(path.artifact);
    if (it == task->artifacts.end())
      raise(Errc::NotFound, "no artifact " + path.artifact + " on " +
                                Pathspec::of_task(path.flow, path.run_id,
                                                  path.step, path.task_id)
                                    .to_string());
    out.value = store_->get(it->second);
  }
  return out;
}

RunRecord Client::latest_successful_run(const std::string& flow,
                                        const std::string& nspace,
                                        bool escape_namespace) const {
  QueryFilter filter;
  filter.flow = flow;
  if (!escape_namespace) filter.nspace = nspace;
  filter.run_status = RunStatus::Succeeded;
  std::vector<RunRecord> runs = meta_->query_runs(filter);
  if (runs.empty())
    raise(Errc::NotFound, "no successful runs of " + flow +
                              (escape_namespace ? "" : " in namespace " + nspace));
  // query order is run_id descending
  return runs.front();
}

LineageNode Client::lineage(const Pathspec& artifact, const std::string& nspace,
                            bool escape_namespace) const {
  if (artifact.depth != Pathspec::Depth::Artifact &&
      artifact.depth != Pathspec::Depth::Task)
    raise(Errc::PathError, "lineage needs a task or artifact pathspec, got " +
                               artifact.to_string());

  Resolved target = resolve(artifact, nspace, escape_namespace);
  std::map<int64_t, const TaskRecord*> by_id;
  std::vector<TaskRecord> all =
      meta_->tasks_of_run(Pathspec::of_run(artifact.flow, artifact.run_id));
  for (const auto& task : all) by_id[task.task_id] = &task;

  std::function<LineageNode(const TaskRecord&)> build =
      [&](const TaskRecord& task) {
        LineageNode node{task, {}};
        for (int64_t parent : task.parents) {
          auto it = by_id.find(parent);
          if (it == by_id.end())
            raise(Errc::NotFound, "dangling parent task " +
                                      std::to_string(parent) + " in lineage");
          node.parents.push_back(build(*it->second));
        }
        return node;
      };
  return build(*target.task);
}

}  // namespace flowmill
