#pragma once

#include "flowmill/cas.hpp"
#include "flowmill/metadata.hpp"
#include "flowmill/process.hpp"
#include "flowmill/task_protocol.hpp"

#include <condition_variable>
#include <filesystem>
#include <mutex>

namespace flowmill {

struct BackendCapacity {
  int64_t cpu_slots = 1;
  int64_t memory_mb = 1;
  int64_t gpu_slots = 0;

  // Host CPU count, effectively unbounded memory, no GPUs.
  static BackendCapacity detect();
};

// Admission control for one backend instance. Requests within capacity
// block until enough slots free; requests that can never fit are rejected
// outright. Summed admitted requests never exceed capacity in any
// dimension at any instant.
class CapacityLedger {
 public:
  explicit CapacityLedger(BackendCapacity capacity);

  const BackendCapacity& capacity() const { return capacity_; }

  // Blocks until the request fits. Throws Error(BackendRejected) when the
  // request exceeds total capacity in some dimension.
  void acquire(const Resources& request);
  void release(const Resources& request);

 private:
  bool fits(const Resources& request) const;

  BackendCapacity capacity_;
  int64_t cpu_used_ = 0;
  int64_t memory_used_ = 0;
  int64_t gpu_used_ = 0;
  mutable std::mutex mutex_;
  std::condition_variable freed_;
};

// A submitted attempt; resolvable through await exactly once.
struct SubmitHandle {
  Pathspec task;
  BackendKind kind = BackendKind::Local;
  pid_t pid = -1;  // LOCAL: the task process; SIM_REMOTE: the supervisor
  std::filesystem::path attempt_dir;
  Resources admitted;
  bool reaped = false;
};

struct TaskOutcome {
  int exit_code = -1;             // task process exit (128+signal if killed)
  bool worker_crashed = false;    // supervisor-level failure, not a task exit
  bool protocol_violation = false;  // staged outputs malformed
};

// A backend executes one attempt per submit. Submission acquires admission
// (blocking), materializes whatever the attempt needs under attempt_dir and
// spawns the process tree; await reaps it and releases admission. The
// scheduler drives the two halves separately (admit, then launch) so task
// records only show RUNNING while capacity is actually held.
class Backend {
 public:
  virtual ~Backend() = default;

  virtual BackendKind kind() const = 0;

  // Blocks until the request fits; Error(BackendRejected) when it never can.
  void admit(const Resources& request) { ledger_.acquire(request); }

  // Spawns the attempt; the caller must have admitted the request and must
  // release it if launch throws.
  virtual SubmitHandle launch(const TaskContext& ctx,
                              const std::filesystem::path& attempt_dir) = 0;

  // admit + launch, releasing admission on launch failure.
  SubmitHandle submit(const TaskContext& ctx,
                      const std::filesystem::path& attempt_dir);

  // Blocks until the attempt is terminal and releases its admission.
  // Throws Error(AlreadyReaped) on a second await of the same handle.
  TaskOutcome await(SubmitHandle& handle);

  CapacityLedger& ledger() { return ledger_; }

 protected:
  explicit Backend(BackendCapacity capacity) : ledger_(capacity) {}

  virtual TaskOutcome decode(const ExitStatus& status,
                             const SubmitHandle& handle) = 0;

  CapacityLedger ledger_;
};

// Runs the command directly as a child process in the flow's source
// directory. Inputs are materialized under attempt_dir; stdout/stderr are
// captured to attempt_dir/stdout and attempt_dir/stderr. Staged outputs
// are left in attempt_dir/out for the coordinator to persist.
class LocalBackend : public Backend {
 public:
  LocalBackend(const CasStore& store, std::filesystem::path flow_dir,
               BackendCapacity capacity);

  BackendKind kind() const override { return BackendKind::Local; }
  SubmitHandle launch(const TaskContext& ctx,
                      const std::filesystem::path& attempt_dir) override;

 protected:
  TaskOutcome decode(const ExitStatus& status,
                     const SubmitHandle& handle) override;

 private:
  const CasStore& store_;
  std::filesystem::path flow_dir_;
};

// Ships the code package: writes a work order under attempt_dir and spawns
// a supervisor process (`<worker_bin> supervise <attempt_dir>`), which
// unpacks the package into a sandbox, materializes inputs there, and runs
// the task through a worker process. The worker persists staged outputs to
// the store and metadata log itself; the supervisor relays status through
// its exit code: 0 task succeeded, 10 task exited nonzero, 20 protocol
// violation, 30 worker-level crash.
class SimRemoteBackend : public Backend {
 public:
  SimRemoteBackend(const CasStore& store, const MetadataStore& meta,
                   std::filesystem::path worker_bin, ContentHash code_package,
                   BackendCapacity capacity);

  BackendKind kind() const override { return BackendKind::SimRemote; }
  SubmitHandle launch(const TaskContext& ctx,
                      const std::filesystem::path& attempt_dir) override;

 protected:
  TaskOutcome decode(const ExitStatus& status,
                     const SubmitHandle& handle) override;

 private:
  const CasStore& store_;
  const MetadataStore& meta_;
  std::filesystem::path worker_bin_;
  ContentHash code_package_;
};

// Supervisor and worker entry points behind `flowmill-worker supervise` and
// `flowmill-worker exec`. Both return the process exit code.
int supervise_main(const std::filesystem::path& attempt_dir);
int worker_exec_main(const std::filesystem::path& attempt_dir);

}  // namespace flowmill
