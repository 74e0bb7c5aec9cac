#pragma once

#include <cstdint>
#include <string>

namespace flowmill {

// Slash-separated address of a flow, run, step, task, or artifact:
//   sumsq / sumsq/3 / sumsq/3/train / sumsq/3/train/7 / sumsq/3/train/7/model
// Prefixes only: a task needs a step, an artifact needs a task.
struct Pathspec {
  enum class Depth { Flow, Run, Step, Task, Artifact };

  Depth depth = Depth::Flow;
  std::string flow;
  int64_t run_id = 0;  // valid from Depth::Run
  std::string step;    // valid from Depth::Step
  int64_t task_id = 0; // valid from Depth::Task
  std::string artifact;

  // Throws Error(PathError) on malformed text. Run and task components must
  // be canonical positive decimals; artifact names may start with '_'
  // (system artifacts such as _stdout, _card).
  static Pathspec parse(const std::string& text);

  static Pathspec of_run(const std::string& flow, int64_t run_id);
  static Pathspec of_task(const std::string& flow, int64_t run_id,
                          const std::string& step, int64_t task_id);

  std::string to_string() const;

  bool operator==(const Pathspec&) const = default;
};

}  // namespace flowmill
