#include <flowmill/backends.hpp>
#include <flowmill/errors.hpp>

#include "doctest.h"
#include "temp_home.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <fstream>
#include <functional>
#include <thread>

#include <signal.h>

using namespace flowmill;
using flowmill::testing::TempHome;

namespace fs = std::filesystem;

namespace {

Errc code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  return Errc::SyntaxError;  // sentinel: "did not throw"
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  return std::string((std::istreambuf_iterator<char>(in)),
                     std::istreambuf_iterator<char>());
}

void put_file(const fs::path& path, const std::string& content) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  out << content;
}

TaskContext simple_ctx(const std::string& step, int64_t task_id,
                       const std::string& command) {
  TaskContext ctx;
  ctx.task = Pathspec::of_task("demo", 1, step, task_id);
  ctx.command = command;
  return ctx;
}

// Everything a SIM_REMOTE attempt needs: a packaged source tree plus a
// registered run and task for the worker to report against.
struct RemoteRig {
  TempHome home;
  CasStore store;
  MetadataStore meta;
  fs::path flow_dir;
  ContentHash package;
  RunRecord run;

  explicit RemoteRig(const std::vector<std::string>& includes = {"**"})
      : store(home / "store"), meta(home / "metadata"), flow_dir(home / "flow") {
    put_file(flow_dir / "greeting.txt", "hello from the package\n");
    put_file(flow_dir / "excluded.txt", "not shipped\n");
    package = package_code(store, flow_dir, includes).hash;
    run = meta.register_run("demo", "alice", {}, package, {});
  }

  TaskContext task(const std::string& step, const std::string& command) {
    TaskRecord rec = meta.register_task(Pathspec::of_run("demo", run.run_id),
                                        step, {}, {}, BackendKind::SimRemote);
    TaskContext ctx;
    ctx.task = Pathspec::of_task("demo", run.run_id, step, rec.task_id);
    ctx.command = command;
    return ctx;
  }

  SimRemoteBackend backend(BackendCapacity cap = {4, 1 << 20, 0}) {
    return SimRemoteBackend(store, meta, FLOWMILL_WORKER_BIN, package, cap);
  }
};

}  // namespace

TEST_CASE("ledger admits within capacity and rejects impossible requests") {
  CapacityLedger ledger(BackendCapacity{2, 1024, 1});
  ledger.acquire(Resources{2, 1024, 1});
  ledger.release(Resources{2, 1024, 1});

  CHECK(code_of([&] { ledger.acquire(Resources{3, 1, 0}); }) ==
        Errc::BackendRejected);
  CHECK(code_of([&] { ledger.acquire(Resources{1, 2048, 0}); }) ==
        Errc::BackendRejected);
  CHECK(code_of([&] { ledger.acquire(Resources{1, 1, 2}); }) ==
        Errc::BackendRejected);
}

TEST_CASE("ledger blocks a satisfiable request until capacity frees") {
  CapacityLedger ledger(BackendCapacity{2, 1024, 0});
  ledger.acquire(Resources{2, 64, 0});

  std::atomic<bool> acquired{false};
  std::thread waiter([&] {
    ledger.acquire(Resources{1, 64, 0});
    acquired = true;
  });
  std::this_thread::sleep_for(std::chrono::milliseconds(50));
  CHECK(!acquired.load());

  ledger.release(Resources{2, 64, 0});
  waiter.join();
  CHECK(acquired.load());
  ledger.release(Resources{1, 64, 0});
}

TEST_CASE("ledger never oversubscribes under concurrent load") {
  const BackendCapacity cap{3, 3000, 0};
  CapacityLedger ledger(cap);
  std::atomic<int64_t> cpu_now{0};
  std::atomic<int64_t> cpu_peak{0};
  std::atomic<bool> overshoot{false};

  std::vector<std::thread> threads;
  for (int t = 0; t < 8; ++t) {
    threads.emplace_back([&, t] {
      Resources r{1 + t % 2, 100, 0};
      for (int i = 0; i < 25; ++i) {
        ledger.acquire(r);
        int64_t now = cpu_now.fetch_add(r.cpu) + r.cpu;
        int64_t peak = cpu_peak.load();
        while (peak < now && !cpu_peak.compare_exchange_weak(peak, now)) {
        }
        if (now > cap.cpu_slots) overshoot = true;
        std::this_thread::yield();
        cpu_now.fetch_sub(r.cpu);
        ledger.release(r);
      }
    });
  }
  for (auto& t : threads) t.join();
  CHECK(!overshoot.load());
  CHECK(cpu_peak.load() <= cap.cpu_slots);
  CHECK(cpu_peak.load() >= 2);  // some concurrency actually happened
}

TEST_CASE("local backend runs the command with captured stdio") {
  TempHome home;
  CasStore store(home / "store");
  fs::create_directories(home / "flow");
  LocalBackend backend(store, home / "flow", BackendCapacity{4, 1 << 20, 0});

  TaskContext ctx = simple_ctx("start", 1, "echo out-line; echo err-line >&2");
  SubmitHandle handle = backend.submit(ctx, home / "a1");
  TaskOutcome outcome = backend.await(handle);

  CHECK(outcome.exit_code == 0);
  CHECK(!outcome.worker_crashed);
  CHECK(slurp(home / "a1" / "stdout") == "out-line\n");
  CHECK(slurp(home / "a1" / "stderr") == "err-line\n");
}

TEST_CASE("local tasks see the protocol environment and run in the flow dir") {
  TempHome home;
  CasStore store(home / "store");
  fs::create_directories(home / "flow");
  LocalBackend backend(store, home / "flow", BackendCapacity{4, 1 << 20, 0});

  TaskContext ctx = simple_ctx(
      "train", 9,
      "printf %s \"$FLOWMILL_STEP/$FLOWMILL_TASK_ID/$FLOWMILL_ATTEMPT\" "
      "> \"$FLOWMILL_OUTPUT_DIR/tag.bin\"; pwd > \"$FLOWMILL_OUTPUT_DIR/cwd.bin\"");
  SubmitHandle handle = backend.submit(ctx, home / "a1");
  CHECK(backend.await(handle).exit_code == 0);

  auto staged = collect_outputs(home / "a1" / "out");
  CHECK(staged.at("tag").bytes == "train/9/1");
  const std::string cwd = staged.at("cwd").bytes;
  CHECK(fs::path(cwd.substr(0, cwd.size() - 1)) ==
        fs::canonical(home / "flow"));
}

TEST_CASE("local backend reports exit codes and signals") {
  TempHome home;
  CasStore store(home / "store");
  fs::create_directories(home / "flow");
  LocalBackend backend(store, home / "flow", BackendCapacity{4, 1 << 20, 0});

  TaskContext bad = simple_ctx("a", 1, "exit 3");
  SubmitHandle h1 = backend.submit(bad, home / "a1");
  CHECK(backend.await(h1).exit_code == 3);

  TaskContext killed = simple_ctx("a", 2, "kill -KILL $$");
  SubmitHandle h2 = backend.submit(killed, home / "a2");
  TaskOutcome outcome = backend.await(h2);
  CHECK(outcome.exit_code == 137);  // 128 + SIGKILL
  CHECK(!outcome.worker_crashed);
}

TEST_CASE("a handle resolves exactly once") {
  TempHome home;
  CasStore store(home / "store");
  fs::create_directories(home / "flow");
  LocalBackend backend(store, home / "flow", BackendCapacity{4, 1 << 20, 0});

  SubmitHandle handle = backend.submit(simple_ctx("a", 1, "true"), home / "a1");
  CHECK(backend.await(handle).exit_code == 0);
  CHECK(code_of([&] { backend.await(handle); }) == Errc::AlreadyReaped);
}

TEST_CASE("requests beyond total capacity are rejected at submission") {
  TempHome home;
  CasStore store(home / "store");
  fs::create_directories(home / "flow");
  LocalBackend backend(store, home / "flow", BackendCapacity{4, 1 << 20, 0});

  TaskContext ctx = simple_ctx("a", 1, "true");
  ctx.decorators.resources.gpu = 1;  // no gpu slots exist
  CHECK(code_of([&] { backend.submit(ctx, home / "a1"); }) ==
        Errc::BackendRejected);
}

TEST_CASE("admission caps concurrent execution at capacity") {
  TempHome home;
  CasStore store(home / "store");
  fs::create_directories(home / "flow");
  LocalBackend backend(store, home / "flow", BackendCapacity{4, 1 << 20, 0});

  // 5 tasks requesting 2 of 4 cpu slots each: at most 2 run at any instant
  const std::string command =
      "date +%s%N > \"$FLOWMILL_OUTPUT_DIR/../began\"; sleep 0.15; "
      "date +%s%N > \"$FLOWMILL_OUTPUT_DIR/../ended\"";
  std::vector<std::thread> submitters;
  std::vector<fs::path> dirs;
  std::mutex mu;
  for (int i = 0; i < 5; ++i) {
    fs::path dir = home / ("a" + std::to_string(i));
    dirs.push_back(dir);
    submitters.emplace_back([&, dir, i] {
      TaskContext ctx = simple_ctx("a", i + 1, command);
      ctx.decorators.resources.cpu = 2;
      SubmitHandle handle = backend.submit(ctx, dir);
      TaskOutcome outcome = backend.await(handle);
      std::lock_guard lock(mu);
      CHECK(outcome.exit_code == 0);
    });
  }
  for (auto& t : submitters) t.join();

  std::vector<std::pair<int64_t, int64_t>> spans;
  for (const auto& dir : dirs)
    spans.emplace_back(std::stoll(slurp(dir / "began")),
                       std::stoll(slurp(dir / "ended")));
  int worst = 0;
  for (const auto& [b, e] : spans) {
    int overlap = 0;
    for (const auto& [b2, e2] : spans)
      if (b2 <= b && b < e2) ++overlap;
    worst = std::max(worst, overlap);
  }
  CHECK(worst <= 2);
  CHECK(worst == 2);  // the slots were actually used in parallel
}

TEST_CASE("sim-remote runs shipped code in a sandbox and persists outputs") {
  RemoteRig rig;
  SimRemoteBackend backend = rig.backend();

  TaskContext ctx = rig.task(
      "start",
      "cp greeting.txt \"$FLOWMILL_OUTPUT_DIR/copy.bin\"; "
      "ls -A | sort | tr '\\n' ' ' > \"$FLOWMILL_OUTPUT_DIR/listing.bin\"");
  SubmitHandle handle = backend.submit(ctx, rig.home / "a1");
  TaskOutcome outcome = backend.await(handle);
  REQUIRE(outcome.exit_code == 0);
  CHECK(!outcome.worker_crashed);
  CHECK(!outcome.protocol_violation);

  // the worker, not the coordinator, persisted the staged artifacts
  auto rec = rig.meta.find_task(ctx.task);
  REQUIRE(rec.has_value());
  REQUIRE(rec->artifacts.count("copy"));
  CHECK(rig.store.get(rec->artifacts.at("copy")).bytes ==
        "hello from the package\n");
  // the sandbox held exactly the package and the protocol files
  CHECK(rig.store.get(rec->artifacts.at("listing")).bytes ==
        "excluded.txt greeting.txt inputs manifest.json out ");
}

TEST_CASE("code outside the package is absent remotely") {
  RemoteRig rig({"greeting.txt"});  // ship only one file
  SimRemoteBackend backend = rig.backend();

  TaskContext ctx = rig.task("start", "cat excluded.txt");
  SubmitHandle handle = backend.submit(ctx, rig.home / "a1");
  TaskOutcome outcome = backend.await(handle);
  CHECK(outcome.exit_code != 0);
  CHECK(!outcome.worker_crashed);
}

TEST_CASE("sim-remote relays the task exit code") {
  RemoteRig rig;
  SimRemoteBackend backend = rig.backend();

  TaskContext ctx = rig.task("start", "exit 7");
  SubmitHandle handle = backend.submit(ctx, rig.home / "a1");
  CHECK(backend.await(handle).exit_code == 7);
}

TEST_CASE("sim-remote surfaces staging violations distinctly") {
  RemoteRig rig;
  SimRemoteBackend backend = rig.backend();

  TaskContext ctx =
      rig.task("start", "printf '{oops' > \"$FLOWMILL_OUTPUT_DIR/x.json\"");
  SubmitHandle handle = backend.submit(ctx, rig.home / "a1");
  TaskOutcome outcome = backend.await(handle);
  CHECK(outcome.protocol_violation);
  CHECK(!outcome.worker_crashed);
}

TEST_CASE("killing the supervisor reads as a worker crash") {
  RemoteRig rig;
  SimRemoteBackend backend = rig.backend();

  TaskContext ctx = rig.task("start", "sleep 30");
  SubmitHandle handle = backend.submit(ctx, rig.home / "a1");
  std::this_thread::sleep_for(std::chrono::milliseconds(100));
  ::kill(handle.pid, SIGKILL);
  TaskOutcome outcome = backend.await(handle);
  CHECK(outcome.worker_crashed);
}

TEST_CASE("an unlaunchable worker binary is a crash, not a task failure") {
  RemoteRig rig;
  SimRemoteBackend backend(rig.store, rig.meta, rig.home / "no-such-binary",
                           rig.package, BackendCapacity{4, 1 << 20, 0});

  TaskContext ctx = rig.task("start", "true");
  SubmitHandle handle = backend.submit(ctx, rig.home / "a1");
  CHECK(backend.await(handle).worker_crashed);
}

TEST_CASE("a missing code package is rejected before any spawn") {
  RemoteRig rig;
  SimRemoteBackend backend(rig.store, rig.meta, FLOWMILL_WORKER_BIN,
                           ContentHash{std::string(64, 'f')},
                           BackendCapacity{4, 1 << 20, 0});

  TaskContext ctx = rig.task("start", "true");
  CHECK(code_of([&] { backend.submit(ctx, rig.home / "a1"); }) ==
        Errc::NotFound);
}
