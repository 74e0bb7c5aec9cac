#include "flowmill/backends.hpp"

#include "flowmill/errors.hpp"

#include <fstream>
#include <thread>

namespace fs = std::filesystem;

namespace flowmill {
namespace {

// Supervisor exit protocol, relayed to the coordinator.
constexpr int kTaskFailed = 10;
constexpr int kProtocolViolation = 20;
constexpr int kWorkerCrash = 30;

void write_text(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  out.flush();
  if (!out)
    raise(Errc::StoreIOError, "cannot write " + path.string());
}

Json read_json(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    raise(Errc::StoreIOError, "cannot read " + path.string());
  std::string content((std::istreambuf_iterator<char>(in)),
                      std::istreambuf_iterator<char>());
  return strict_parse_json(content);
}

}  // namespace

BackendCapacity BackendCapacity::detect() {
  auto cpus = static_cast<int64_t>(std::thread::hardware_concurrency());
  if (cpus < 1) cpus = 1;
  return BackendCapacity{cpus, int64_t{1} << 20, 0};
}

CapacityLedger::CapacityLedger(BackendCapacity capacity) : capacity_(capacity) {}

bool CapacityLedger::fits(const Resources& request) const {
  return cpu_used_ + request.cpu <= capacity_.cpu_slots &&
         memory_used_ + request.memory_mb <= capacity_.memory_mb &&
         gpu_used_ + request.gpu <= capacity_.gpu_slots;
}

void CapacityLedger::acquire(const Resources& request) {
  if (request.cpu > capacity_.cpu_slots || request.memory_mb > capacity_.memory_mb ||
      request.gpu > capacity_.gpu_slots)
    raise(Errc::BackendRejected,
          "request cpu=" + std::to_string(request.cpu) +
              " memory_mb=" + std::to_string(request.memory_mb) +
              " gpu=" + std::to_string(request.gpu) + " exceeds capacity cpu=" +
              std::to_string(capacity_.cpu_slots) + " memory_mb=" +
              std::to_string(capacity_.memory_mb) + " gpu=" +
              std::to_string(capacity_.gpu_slots));
  std::unique_lock lock(mutex_);
  freed_.wait(lock, [&] { return fits(request); });
  cpu_used_ += request.cpu;
  memory_used_ += request.memory_mb;
  gpu_used_ += request.gpu;
}

void CapacityLedger::release(const Resources& request) {
  {
    std::lock_guard lock(mutex_);
    cpu_used_ -= request.cpu;
    memory_used_ -= request.memory_mb;
    gpu_used_ -= request.gpu;
  }
  freed_.notify_all();
}

SubmitHandle Backend::submit(const TaskContext& ctx,
                             const fs::path& attempt_dir) {
  ledger_.acquire(ctx.decorators.resources);
  try {
    return launch(ctx, attempt_dir);
  } catch (...) {
    ledger_.release(ctx.decorators.resources);
    throw;
  }
}

TaskOutcome Backend::await(SubmitHandle& handle) {
  if (handle.reaped)
    raise(Errc::AlreadyReaped,
          "attempt for " + handle.task.to_string() + " was already awaited");
  ExitStatus status = wait_process(handle.pid);
  handle.reaped = true;
  ledger_.release(handle.admitted);
  return decode(status, handle);
}

LocalBackend::LocalBackend(const CasStore& store, fs::path flow_dir,
                           BackendCapacity capacity)
    : Backend(capacity), store_(store), flow_dir_(std::move(flow_dir)) {}

SubmitHandle LocalBackend::launch(const TaskContext& ctx,
                                  const fs::path& attempt_dir) {
  fs::create_directories(attempt_dir);
  MaterializedTask mat = materialize_task_inputs(store_, ctx, attempt_dir);
  SpawnSpec spec;
  spec.shell_command = ctx.command;
  spec.cwd = flow_dir_;
  spec.env = protocol_env(ctx, mat.manifest, mat.out_dir);
  spec.stdout_file = attempt_dir / "stdout";
  spec.stderr_file = attempt_dir / "stderr";
  spec.stdin_null = true;
  pid_t pid = spawn_process(spec);
  return SubmitHandle{ctx.task, BackendKind::Local, pid,
                      fs::absolute(attempt_dir), ctx.decorators.resources,
                      false};
}

TaskOutcome LocalBackend::decode(const ExitStatus& status, const SubmitHandle&) {
  // A signal-killed task command is an ordinary task failure locally; the
  // 128+signal convention flows through as its exit code.
  return TaskOutcome{status.code, false, false};
}

SimRemoteBackend::SimRemoteBackend(const CasStore& store,
                                   const MetadataStore& meta,
                                   fs::path worker_bin, ContentHash code_package,
                                   BackendCapacity capacity)
    : Backend(capacity),
      store_(store),
      meta_(meta),
      worker_bin_(std::move(worker_bin)),
      code_package_(std::move(code_package)) {}

SubmitHandle SimRemoteBackend::launch(const TaskContext& ctx,
                                      const fs::path& attempt_dir) {
  if (!store_.contains(code_package_))
    raise(Errc::NotFound, "code package " + code_package_.hex + " is not in the store");
  fs::create_directories(attempt_dir);
  Json order{{"store", fs::absolute(store_.root()).string()},
             {"metadata", fs::absolute(meta_.root()).string()},
             {"package", code_package_.hex},
             {"context", context_to_json(ctx)}};
  write_text(attempt_dir / "work_order.json", canonical_json(order) + "\n");
  SpawnSpec spec;
  spec.argv = {worker_bin_.string(), "supervise",
               fs::absolute(attempt_dir).string()};
  // Detach the worker tree from the coordinator's stdio so no descendant
  // can outlive the supervisor holding our pipes open.
  spec.stdout_file = attempt_dir / "supervisor_stdout";
  spec.stderr_file = attempt_dir / "supervisor_stderr";
  spec.stdin_null = true;
  pid_t pid = spawn_process(spec);
  return SubmitHandle{ctx.task, BackendKind::SimRemote, pid,
                      fs::absolute(attempt_dir), ctx.decorators.resources,
                      false};
}

TaskOutcome SimRemoteBackend::decode(const ExitStatus& status,
                                     const SubmitHandle& handle) {
  TaskOutcome outcome;
  if (!status.exited) {
    outcome.worker_crashed = true;
    return outcome;
  }
  switch (status.code) {
    case 0:
      outcome.exit_code = 0;
      return outcome;
    case kTaskFailed:
      outcome.exit_code = 1;
      try {
        // the true exit code is relayed through the attempt directory
        Json result = read_json(handle.attempt_dir / "task_result.json");
        outcome.exit_code = result.at("exit_code").get<int>();
      } catch (...) {
      }
      return outcome;
    case kProtocolViolation:
      outcome.exit_code = 0;
      outcome.protocol_violation = true;
      return outcome;
    default:
      outcome.worker_crashed = true;
      return outcome;
  }
}

int supervise_main(const fs::path& attempt_dir) {
  try {
    Json order = read_json(attempt_dir / "work_order.json");
    CasStore store(order.at("store").get<std::string>());
    TaskContext ctx = context_from_json(order.at("context"));
    ContentHash package{order.at("package").get<std::string>()};

    // The sandbox holds exactly the shipped package, the materialized
    // inputs with their manifest, and an empty staging directory.
    fs::path sandbox = attempt_dir / "sandbox";
    unpack_code(store, package, sandbox);
    materialize_task_inputs(store, ctx, sandbox);

    SpawnSpec spec;
    spec.argv = {"/proc/self/exe", "exec", attempt_dir.string()};
    ExitStatus status = wait_process(spawn_process(spec));
    if (!status.exited) return kWorkerCrash;
    if (status.code == 0 || status.code == kTaskFailed ||
        status.code == kProtocolViolation)
      return status.code;
    return kWorkerCrash;
  } catch (...) {
    return kWorkerCrash;
  }
}

int worker_exec_main(const fs::path& attempt_dir) {
  try {
    Json order = read_json(attempt_dir / "work_order.json");
    CasStore store(order.at("store").get<std::string>());
    MetadataStore meta(order.at("metadata").get<std::string>());
    TaskContext ctx = context_from_json(order.at("context"));
    fs::path sandbox = attempt_dir / "sandbox";

    SpawnSpec spec;
    spec.shell_command = ctx.command;
    spec.cwd = sandbox;
    spec.env = protocol_env(ctx, sandbox / "manifest.json", sandbox / "out");
    spec.stdout_file = attempt_dir / "stdout";
    spec.stderr_file = attempt_dir / "stderr";
    spec.stdin_null = true;
    ExitStatus status = wait_process(spawn_process(spec));
    write_text(attempt_dir / "task_result.json",
               canonical_json(Json{{"exit_code", status.code}}) + "\n");
    if (status.code != 0) return kTaskFailed;

    std::map<std::string, ArtifactValue> staged;
    try {
      staged = collect_outputs(sandbox / "out");
    } catch (const Error& e) {
      if (e.code() == Errc::ProtocolViolation) return kProtocolViolation;
      throw;
    }
    std::map<std::string, ContentHash> hashes;
    for (const auto& [name, value] : staged) hashes[name] = store.put(value);
    meta.record_artifacts(ctx.task, hashes);
    return 0;
  } catch (...) {
    return kWorkerCrash;
  }
}

}  // namespace flowmill
