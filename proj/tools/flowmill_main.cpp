// flowmill — run, resume and inspect DAG workflows from the shell.
//
// State lives under FLOWMILL_HOME (default ~/.flowmill): store/ for
// artifacts, metadata/ for the run registry, cards/ for rendered cards,
// scratch/ for per-attempt working directories. FLOWMILL_USER names the
// namespace runs are tagged with. Exit codes: 0 success, 1 user error,
// 2 execution failure.

#include <flowmill/cards.hpp>
#include <flowmill/client.hpp>
#include <flowmill/errors.hpp>
#include <flowmill/flow_graph.hpp>
#include <flowmill/http_service.hpp>
#include <flowmill/runtime.hpp>

#include <CLI11.hpp>

#include <cstdlib>
#include <fstream>
#include <future>
#include <iostream>
#include <sstream>

namespace fs = std::filesystem;
using namespace flowmill;

namespace {

constexpr int kOk = 0;
constexpr int kUserError = 1;
constexpr int kExecutionFailure = 2;

struct Workspace {
  fs::path home;
  CasStore store;
  MetadataStore meta;
  std::string user;

  static fs::path home_dir() {
    if (const char* env = std::getenv("FLOWMILL_HOME")) return env;
    const char* base = std::getenv("HOME");
    return fs::path(base ? base : ".") / ".flowmill";
  }

  static std::string user_name() {
    if (const char* env = std::getenv("FLOWMILL_USER")) return env;
    if (const char* env = std::getenv("USER")) return env;
    return "anonymous";
  }

  Workspace()
      : home(home_dir()),
        store((fs::create_directories(home / "store"), home / "store")),
        meta((fs::create_directories(home / "metadata"), home / "metadata")),
        user(user_name()) {
    fs::create_directories(home / "cards");
    fs::create_directories(home / "scratch");
  }

  RuntimeEnv env_for(const fs::path& flow_doc) {
    RuntimeEnv env;
    env.store = &store;
    env.meta = &meta;
    env.scratch = home / "scratch";
    env.flow_dir = fs::absolute(flow_doc).parent_path();
    env.worker_bin =
        fs::read_symlink("/proc/self/exe").parent_path() / "flowmill-worker";
    return env;
  }
};

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) raise(Errc::StoreIOError, "cannot read " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

// `k=v` with v read as JSON when it parses, else as a plain string.
std::pair<std::string, Json> parse_param(const std::string& text) {
  const auto eq = text.find('=');
  if (eq == std::string::npos || eq == 0)
    raise(Errc::SchemaError, "--param needs name=value, got \"" + text + "\"");
  const std::string name = text.substr(0, eq);
  const std::string raw = text.substr(eq + 1);
  try {
    return {name, strict_parse_json(raw)};
  } catch (const Error&) {
    return {name, Json(raw)};
  }
}

std::string frames_suffix(const TaskRecord& task) {
  std::string out;
  for (const auto& frame : task.foreach_stack)
    out += "[" + std::to_string(frame.index) + "]";
  return out;
}

void print_task_line(std::ostream& out, const TaskRecord& task) {
  out << "  " << task.step << frames_suffix(task) << "/" << task.task_id
      << " " << to_string(task.status) << " " << to_string(task.backend)
      << "\n";
}

Json run_result_json(const RunResult& result) {
  Json tasks = Json::array();
  for (const auto& task : result.tasks) tasks.push_back(to_json(task));
  return Json{{"run", to_json(result.run)},
              {"tasks", std::move(tasks)},
              {"status", to_string(result.status)},
              {"failed_step",
               result.failed_step ? Json(*result.failed_step) : Json(nullptr)},
              {"error", result.error.empty() ? Json(nullptr)
                                             : Json(result.error)}};
}

int report_run(const RunResult& result, bool json) {
  if (json) {
    std::cout << run_result_json(result).dump() << "\n";
  } else {
    std::cout << result.run.flow << "/" << result.run.run_id << " "
              << to_string(result.status) << "\n";
    for (const auto& task : result.tasks) print_task_line(std::cout, task);
  }
  if (result.status == RunStatus::Succeeded) return kOk;
  if (!json)
    std::cerr << "failed at " << result.failed_step.value_or("?") << ": "
              << result.error << "\n";
  return kExecutionFailure;
}

// The normalized flow document recorded on the run's start task; lets
// inspection subcommands work without the original flow.json.
FlowSpec recorded_flow(const Workspace& ws, const Pathspec& run) {
  for (const auto& task : ws.meta.tasks_of_run(run)) {
    if (task.step != "start") continue;
    auto it = task.artifacts.find("_flow");
    if (it == task.artifacts.end()) break;
    return parse_flow(canonical_json(ws.store.get(it->second).json));
  }
  raise(Errc::NotFound,
        run.to_string() + " has no recorded flow document to render from");
}

struct Options {
  bool json = false;
  std::string flow_doc;
  std::vector<std::string> params;
  std::vector<std::string> tags;
  std::string backend = "local";
  int max_parallel = 0;
  std::string origin;
  std::string from_step;
  std::string pathspec;
  std::string flow_name;
  bool all_namespaces = false;
  std::string host = "127.0.0.1";
  int port = 8080;
};

RuntimeOptions runtime_options(const Workspace& ws, const Options& opt) {
  RuntimeOptions ro;
  ro.user = ws.user;
  ro.tags = opt.tags;
  ro.backend =
      opt.backend == "sim-remote" ? BackendKind::SimRemote : BackendKind::Local;
  ro.max_parallel = opt.max_parallel;
  for (const auto& kv : opt.params) {
    auto [name, value] = parse_param(kv);
    ro.parameters[name] = std::move(value);
  }
  return ro;
}

int cmd_run(Workspace& ws, const Options& opt) {
  FlowSpec spec = parse_flow(read_file(opt.flow_doc));
  RunResult result =
      run_flow(ws.env_for(opt.flow_doc), spec, runtime_options(ws, opt));
  return report_run(result, opt.json);
}

int cmd_resume(Workspace& ws, const Options& opt) {
  FlowSpec spec = parse_flow(read_file(opt.flow_doc));
  Pathspec origin = Pathspec::parse(opt.origin);
  if (origin.depth != Pathspec::Depth::Run)
    raise(Errc::PathError, "--origin needs flow/run, got " + opt.origin);
  std::optional<std::string> from;
  if (!opt.from_step.empty()) from = opt.from_step;
  RunResult result = resume_run(ws.env_for(opt.flow_doc), spec, origin, from,
                                runtime_options(ws, opt));
  return report_run(result, opt.json);
}

int cmd_validate(const Options& opt) {
  FlowSpec spec = parse_flow(read_file(opt.flow_doc));
  ValidationReport report = validate_dag(spec);
  if (opt.json) {
    Json diags = Json::array();
    for (const auto& d : report.diagnostics)
      diags.push_back(Json{{"code", d.code},
                           {"step", d.step},
                           {"message", d.message}});
    std::cout << Json{{"ok", report.ok}, {"diagnostics", std::move(diags)}}.dump()
              << "\n";
  } else if (report.ok) {
    std::cout << "ok\n";
  } else {
    for (const auto& d : report.diagnostics)
      std::cerr << d.code << " at " << d.step << ": " << d.message << "\n";
  }
  return report.ok ? kOk : kUserError;
}

int cmd_plan(const Options& opt) {
  FlowSpec spec = parse_flow(read_file(opt.flow_doc));
  std::cout << serialize_plan(topological_plan(spec));
  return kOk;
}

int cmd_list_runs(const Workspace& ws, const Options& opt) {
  Client client(ws.store, ws.meta);
  Resolved resolved = client.resolve(Pathspec::parse(opt.flow_name), ws.user,
                                     opt.all_namespaces);
  if (opt.json) {
    Json runs = Json::array();
    for (const auto& run : resolved.runs) runs.push_back(to_json(run));
    std::cout << runs.dump() << "\n";
  } else {
    for (const auto& run : resolved.runs)
      std::cout << run.flow << "/" << run.run_id << " " << to_string(run.status)
                << " user:" << run.user << "\n";
  }
  return kOk;
}

int cmd_show(const Workspace& ws, const Options& opt) {
  Client client(ws.store, ws.meta);
  const Pathspec path = Pathspec::parse(opt.pathspec);
  Resolved resolved = client.resolve(path, ws.user, opt.all_namespaces);

  switch (path.depth) {
    case Pathspec::Depth::Flow: {
      if (opt.json) {
        Json runs = Json::array();
        for (const auto& run : resolved.runs) runs.push_back(to_json(run));
        std::cout << Json{{"runs", std::move(runs)}}.dump() << "\n";
      } else {
        for (const auto& run : resolved.runs)
          std::cout << run.flow << "/" << run.run_id << " "
                    << to_string(run.status) << " user:" << run.user << "\n";
      }
      return kOk;
    }
    case Pathspec::Depth::Run: {
      if (opt.json) {
        Json tasks = Json::array();
        for (const auto& task : resolved.tasks) tasks.push_back(to_json(task));
        std::cout << Json{{"run", to_json(*resolved.run)},
                          {"tasks", std::move(tasks)}}
                         .dump()
                  << "\n";
      } else {
        std::cout << resolved.run->flow << "/" << resolved.run->run_id << " "
                  << to_string(resolved.run->status) << " user:"
                  << resolved.run->user << "\n";
        for (const auto& task : resolved.tasks)
          print_task_line(std::cout, task);
      }
      return kOk;
    }
    case Pathspec::Depth::Step: {
      if (opt.json) {
        Json tasks = Json::array();
        for (const auto& task : resolved.tasks) tasks.push_back(to_json(task));
        std::cout << Json{{"tasks", std::move(tasks)}}.dump() << "\n";
      } else {
        for (const auto& task : resolved.tasks)
          print_task_line(std::cout, task);
      }
      return kOk;
    }
    case Pathspec::Depth::Task: {
      if (opt.json) {
        std::cout << Json{{"task", to_json(*resolved.task)}}.dump() << "\n";
      } else {
        print_task_line(std::cout, *resolved.task);
        for (const auto& [name, hash] : resolved.task->artifacts)
          std::cout << "    " << name << " " << hash.hex << "\n";
      }
      return kOk;
    }
    case Pathspec::Depth::Artifact: {
      const ArtifactValue& value = *resolved.value;
      if (opt.json) {
        Json body{{"kind", value.tag == ArtifactValue::Tag::Json ? "json"
                                                                 : "bytes"},
                  {"hash", hash_of(value).hex}};
        if (value.tag == ArtifactValue::Tag::Json)
          body["value"] = value.json;
        else
          body["size"] = value.bytes.size();
        std::cout << body.dump() << "\n";
      } else if (value.tag == ArtifactValue::Tag::Json) {
        std::cout << canonical_json(value.json) << "\n";
      } else {
        std::cout << value.bytes;  // raw, uninterpreted
      }
      return kOk;
    }
  }
  return kUserError;
}

int cmd_card(Workspace& ws, const Options& opt) {
  const Pathspec path = Pathspec::parse(opt.pathspec);
  if (path.depth != Pathspec::Depth::Run)
    raise(Errc::PathError, "card needs flow/run, got " + opt.pathspec);
  Client client(ws.store, ws.meta);
  client.resolve(path, ws.user, opt.all_namespaces);  // namespace gate

  // reuse the recorded card when one exists so repeat invocations are
  // byte-stable; otherwise render and bind it now
  std::string html;
  std::vector<TaskRecord> tasks = ws.meta.tasks_of_run(path);
  const TaskRecord* end_task = nullptr;
  for (const auto& task : tasks)
    if (task.step == "end") end_task = &task;
  if (end_task && end_task->artifacts.count("_card")) {
    html = ws.store.get(end_task->artifacts.at("_card")).bytes;
  } else {
    html = render_card(ws.store, recorded_flow(ws, path),
                       *ws.meta.find_run(path), tasks);
    if (end_task) store_card(ws.store, ws.meta, path, html);
  }

  const std::string rel = "cards/" + path.flow + "-run" +
                          std::to_string(path.run_id) + ".html";
  std::ofstream out(ws.home / rel, std::ios::binary | std::ios::trunc);
  out << html;
  if (!out) raise(Errc::StoreIOError, "cannot write " + rel);
  if (opt.json)
    std::cout << Json{{"card", rel},
                      {"hash", hash_of(ArtifactValue::from_bytes(html)).hex}}
                     .dump()
              << "\n";
  else
    std::cout << rel << "\n";
  return kOk;
}

int cmd_serve(const Workspace& ws, const Options& opt) {
  HttpService service(ws.meta);
  int port = service.start(opt.host, opt.port);
  if (opt.json)
    std::cout << Json{{"host", opt.host}, {"port", port}}.dump() << "\n"
              << std::flush;
  else
    std::cout << "serving metadata on " << opt.host << ":" << port << "\n"
              << std::flush;
  std::promise<void>().get_future().wait();  // until killed
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"flowmill — DAG workflow engine"};
  app.require_subcommand(1);
  Options opt;

  auto add_json = [&](CLI::App* cmd) {
    cmd->add_flag("--json", opt.json, "single-document JSON output");
  };

  CLI::App* run = app.add_subcommand("run", "execute a flow document");
  run->add_option("flow", opt.flow_doc, "path to flow.json")
      ->required()
      ->check(CLI::ExistingFile);
  run->add_option("--param", opt.params, "parameter as name=value");
  run->add_option("--tag", opt.tags, "extra run tag");
  run->add_option("--backend", opt.backend, "task placement")
      ->check(CLI::IsMember({"local", "sim-remote"}));
  run->add_option("--max-parallel", opt.max_parallel,
                  "concurrent task limit (0 = one per cpu slot)");
  add_json(run);

  CLI::App* resume = app.add_subcommand("resume", "re-execute from a past run");
  resume->add_option("flow", opt.flow_doc, "path to flow.json")
      ->required()
      ->check(CLI::ExistingFile);
  resume->add_option("--origin", opt.origin, "source run as flow/run")
      ->required();
  resume->add_option("--from", opt.from_step,
                     "step to restart at (default: first failed)");
  resume->add_option("--backend", opt.backend, "task placement")
      ->check(CLI::IsMember({"local", "sim-remote"}));
  resume->add_option("--max-parallel", opt.max_parallel, "concurrent task limit");
  add_json(resume);

  CLI::App* validate = app.add_subcommand("validate", "lint a flow document");
  validate->add_option("flow", opt.flow_doc, "path to flow.json")
      ->required()
      ->check(CLI::ExistingFile);
  add_json(validate);

  CLI::App* plan = app.add_subcommand("plan", "export the orchestration plan");
  plan->add_option("flow", opt.flow_doc, "path to flow.json")
      ->required()
      ->check(CLI::ExistingFile);
  add_json(plan);

  CLI::App* list = app.add_subcommand("list", "list registry contents");
  CLI::App* list_runs = list->add_subcommand("runs", "runs of a flow");
  list_runs->add_option("flow", opt.flow_name, "flow name")->required();
  list_runs->add_flag("--all-namespaces", opt.all_namespaces,
                      "include other users' runs");
  add_json(list_runs);
  list->require_subcommand(1);

  CLI::App* show = app.add_subcommand("show", "resolve a pathspec");
  show->add_option("pathspec", opt.pathspec, "flow[/run[/step[/task[/artifact]]]]")
      ->required();
  show->add_flag("--all-namespaces", opt.all_namespaces,
                 "include other users' runs");
  add_json(show);

  CLI::App* card = app.add_subcommand("card", "write a run's card");
  card->add_option("run", opt.pathspec, "run as flow/run")->required();
  card->add_flag("--all-namespaces", opt.all_namespaces,
                 "include other users' runs");
  add_json(card);

  CLI::App* serve = app.add_subcommand("serve", "read-only metadata http api");
  serve->add_option("--host", opt.host, "bind address");
  serve->add_option("--port", opt.port, "port (0 = pick free)");
  add_json(serve);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kUserError;
  }

  try {
    Workspace ws;
    if (run->parsed()) return cmd_run(ws, opt);
    if (resume->parsed()) return cmd_resume(ws, opt);
    if (validate->parsed()) return cmd_validate(opt);
    if (plan->parsed()) return cmd_plan(opt);
    if (list->parsed()) return cmd_list_runs(ws, opt);
    if (show->parsed()) return cmd_show(ws, opt);
    if (card->parsed()) return cmd_card(ws, opt);
    if (serve->parsed()) return cmd_serve(ws, opt);
  } catch (const Error& e) {
    if (opt.json)
      std::cerr << Json{{"error", errc_name(e.code())},
                        {"message", e.what()}}
                       .dump()
                << "\n";
    else
      std::cerr << "error: " << e.what() << "\n";
    return kUserError;
  } catch (const std::exception& e) {
    if (opt.json)
      std::cerr << Json{{"error", "Internal"}, {"message", e.what()}}.dump()
                << "\n";
    else
      std::cerr << "error: " << e.what() << "\n";
    return kUserError;
  }
  return kUserError;
}
