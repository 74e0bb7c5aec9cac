// Acceptance suite: ten engine-level properties, each reported as a single
// PASS or FAIL line. The binary exits nonzero when any property fails, so
// the suite doubles as a release gate under ctest.
#include <flowmill/cards.hpp>
#include <flowmill/cas.hpp>
#include <flowmill/client.hpp>
#include <flowmill/flow_graph.hpp>
#include <flowmill/flow_spec.hpp>
#include <flowmill/metadata.hpp>
#include <flowmill/runtime.hpp>

#include <sys/wait.h>

#include <atomic>
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "flow_builder.hpp"
#include "graph_oracle.hpp"
#include "temp_home.hpp"

using namespace flowmill;
using flowmill::testing::StepDecl;
using flowmill::testing::TempHome;
using flowmill::testing::make_flow;
using flowmill::testing::oracle_valid;

namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

void check(bool ok, const std::string& what) {
  if (!ok) throw std::runtime_error(what);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  check(in.good(), "cannot open " + p.string());
  std::ostringstream out;
  out << in.rdbuf();
  return out.str();
}

double seconds_since(Clock::time_point begin) {
  return std::chrono::duration<double>(Clock::now() - begin).count();
}

std::string py(const std::string& args) { return "python3 steps.py " + args; }

// Workspace with the step helper script installed as the flow's source tree.
struct Rig {
  TempHome home;
  CasStore store;
  MetadataStore meta;
  RuntimeEnv env;

  Rig() : store(home / "store"), meta(home / "metadata") {
    fs::create_directories(home / "flow");
    fs::copy_file(fs::path(FLOWMILL_FIXTURE_DIR) / "steps.py",
                  home / "flow" / "steps.py");
    env.store = &store;
    env.meta = &meta;
    env.scratch = home / "scratch";
    env.flow_dir = home / "flow";
    env.worker_bin = FLOWMILL_WORKER_BIN;
  }

  RuntimeOptions opts(const std::string& user = "tester") const {
    RuntimeOptions o;
    o.user = user;
    o.capacity = BackendCapacity{4, 1 << 20, 0};
    o.max_parallel = 4;
    return o;
  }
};

// step -> user-visible artifact hashes, keyed so foreach siblings stay
// distinct. Two runs agree exactly when these maps are equal.
std::map<std::string, std::map<std::string, std::string>> user_artifacts(
    const RunResult& result) {
  std::map<std::string, std::map<std::string, std::string>> out;
  for (const auto& t : result.tasks) {
    std::string key = t.step;
    for (const auto& f : t.foreach_stack)
      key += "@" + std::to_string(f.index) + "/" + std::to_string(f.cardinality);
    for (const auto& [name, hash] : t.artifacts)
      if (name[0] != '_') out[key][name] = hash.hex;
  }
  return out;
}

// Steps that actually executed in a run: clones never create scratch
// attempt directories, so the run's scratch listing is an execution marker.
std::set<std::string> executed_steps(const Rig& rig, const RunResult& result) {
  std::set<std::string> steps;
  fs::path dir = rig.env.scratch / result.run.flow /
                 ("run" + std::to_string(result.run.run_id));
  if (!fs::exists(dir)) return steps;
  for (const auto& entry : fs::directory_iterator(dir)) {
    std::string name = entry.path().filename().string();
    steps.insert(name.substr(0, name.rfind('-')));
  }
  return steps;
}

constexpr const char* kReferenceFlow = R"({
  "name": "ref",
  "parameters": [
    {"name": "bias", "default": 0}
  ],
  "steps": [
    {"name": "start", "command": "python3 steps.py const items [1,2,3]",
     "next": {"type": "foreach", "foreach_key": "items", "targets": ["sq"]}},
    {"name": "sq", "command": "python3 steps.py square s",
     "next": {"type": "linear", "targets": ["total"]}},
    {"name": "total", "command": "python3 steps.py sum s total",
     "next": {"type": "linear", "targets": ["end"]}},
    {"name": "end", "command": "python3 steps.py incr total", "card": true}
  ]
}
)";

// ---------------------------------------------------------------------------
// Fixture corpus shared by the linting and plan-export properties.

struct Fixture {
  std::string name;
  FlowSpec spec;
  bool valid;
};

std::vector<Fixture> corpus() {
  std::vector<Fixture> out;
  auto add = [&](const std::string& name, bool valid,
                 const std::vector<StepDecl>& steps) {
    out.push_back({name, make_flow(name, steps), valid});
  };

  // valid shapes
  add("minimal", true, {{"start", "end"}, {"end", ""}});
  add("chain5", true, {{"start", "a"}, {"a", "b"}, {"b", "c"},
                       {"c", "end"}, {"end", ""}});
  add("diamond", true, {{"start", "split:left,right"}, {"left", "join"},
                        {"right", "join"}, {"join", "end"}, {"end", ""}});
  add("split3", true, {{"start", "split:a,b,c"}, {"a", "j"}, {"b", "j"},
                       {"c", "j"}, {"j", "end"}, {"end", ""}});
  add("unequal_branches", true,
      {{"start", "split:a,b"}, {"a", "a2"}, {"a2", "j"}, {"b", "j"},
       {"j", "end"}, {"end", ""}});
  add("foreach", true, {{"start", "foreach:items:body"}, {"body", "gather"},
                        {"gather", "end"}, {"end", ""}});
  add("foreach_long_body", true,
      {{"start", "foreach:xs:body"}, {"body", "body2"}, {"body2", "gather"},
       {"gather", "end"}, {"end", ""}});
  add("foreach_joined_by_end", true,
      {{"start", "foreach:xs:body"}, {"body", "end"}, {"end", ""}});
  add("nested_foreach", true,
      {{"start", "foreach:outer:mid"}, {"mid", "foreach:inner:leaf"},
       {"leaf", "j1"}, {"j1", "j2"}, {"j2", "end"}, {"end", ""}});
  add("split_in_foreach", true,
      {{"start", "foreach:xs:body"}, {"body", "split:u,v"}, {"u", "j"},
       {"v", "j"}, {"j", "gather"}, {"gather", "end"}, {"end", ""}});
  add("foreaches_in_split", true,
      {{"start", "split:f1,f2"}, {"f1", "foreach:xs:b1"}, {"b1", "g1"},
       {"g1", "j"}, {"f2", "foreach:ys:b2"}, {"b2", "g2"}, {"g2", "j"},
       {"j", "end"}, {"end", ""}});
  add("sequential_foreaches", true,
      {{"start", "foreach:xs:b1"}, {"b1", "g1"}, {"g1", "foreach:ys:b2"},
       {"b2", "g2"}, {"g2", "end"}, {"end", ""}});
  add("sequential_splits", true,
      {{"start", "split:a,b"}, {"a", "j1"}, {"b", "j1"},
       {"j1", "split:c,d"}, {"c", "j2"}, {"d", "j2"}, {"j2", "end"},
       {"end", ""}});
  add("branch_straight_to_end", true,
      {{"start", "split:a,b"}, {"a", "end"}, {"b", "j"}, {"j", "end"},
       {"end", ""}});
  add("nested_splits", true,
      {{"start", "split:a,b"}, {"a", "split:c,d"}, {"c", "j"}, {"d", "j"},
       {"j", "jo"}, {"b", "jo"}, {"jo", "end"}, {"end", ""}});

  // invalid shapes
  add("cycle_pair", false,
      {{"start", "a"}, {"a", "b"}, {"b", "a"}, {"end", ""}});
  add("self_loop", false, {{"start", "a"}, {"a", "a"}, {"end", ""}});
  add("orphan_step", false,
      {{"start", "end"}, {"orphan", "end"}, {"end", ""}});
  add("partial_split_join", false,
      {{"start", "split:a,b,c"}, {"a", "j"}, {"b", "j"}, {"c", "end"},
       {"j", "end"}, {"end", ""}});
  add("empty_branch_to_join", false,
      {{"start", "split:a,j"}, {"a", "j"}, {"j", "end"}, {"end", ""}});
  add("colliding_joins", false,
      {{"start", "split:a,b"}, {"a", "split:c,d"}, {"b", "j"}, {"c", "j"},
       {"d", "j"}, {"j", "end"}, {"end", ""}});
  add("foreach_join_with_sibling", false,
      {{"start", "split:f,x"}, {"f", "foreach:xs:body"}, {"body", "g"},
       {"x", "g"}, {"g", "end"}, {"end", ""}});
  add("foreach_into_shared_step", false,
      {{"start", "split:f,x"}, {"f", "foreach:xs:body"}, {"x", "body"},
       {"body", "g"}, {"g", "end"}, {"end", ""}});
  add("foreach_body_loop", false,
      {{"start", "foreach:xs:body"}, {"body", "body"}, {"end", ""}});
  add("cycle_behind_join", false,
      {{"start", "split:a,b"}, {"a", "j"}, {"b", "j"}, {"j", "j2"},
       {"j2", "j"}, {"end", ""}});
  add("unreachable_cycle_island", false,
      {{"start", "end"}, {"x", "y"}, {"y", "x"}, {"end", ""}});
  add("foreach_join_crossing_split", false,
      {{"start", "split:f1,f2"}, {"f1", "foreach:xs:b1"}, {"b1", "j"},
       {"f2", "j"}, {"j", "end"}, {"end", ""}});

  return out;
}

// ---------------------------------------------------------------------------
// 1. Linting verdicts agree with the brute-force oracle on every fixture.

void dag_linting() {
  auto begin = Clock::now();
  std::vector<Fixture> fixtures = corpus();
  check(fixtures.size() >= 20, "fixture corpus is too small");
  for (const auto& f : fixtures) {
    ValidationReport report = validate_dag(f.spec);
    check(report.ok == f.valid, f.name + ": unexpected verdict");
    check(report.ok == oracle_valid(f.spec),
          f.name + ": verdict disagrees with the brute-force oracle");
    if (!report.ok)
      check(!report.diagnostics.empty(), f.name + ": no diagnostics");
  }
  check(seconds_since(begin) < 1.0, "linting exceeded its 1s budget");
}

// ---------------------------------------------------------------------------
// 2. Object-store properties over 10,000 random values.

Json random_json(std::mt19937_64& rng, int depth) {
  auto pick = [&](int n) { return static_cast<int>(rng() % n); };
  static const std::vector<std::string> pieces = {
      "a", "Z", "0", " ", "\"", "\\", "\n", "\t", "é", "✓", "key", "--"};
  auto random_string = [&] {
    std::string s;
    int n = pick(6);
    for (int i = 0; i < n; ++i) s += pieces[pick(pieces.size())];
    return s;
  };
  switch (pick(depth >= 3 ? 5 : 7)) {
    case 0: return Json(nullptr);
    case 1: return Json(rng() % 2 == 0);
    case 2: return Json(static_cast<int64_t>(rng()));
    case 3: {
      double d = std::ldexp(static_cast<double>(rng() % (1 << 30)),
                            pick(60) - 30);
      return Json(rng() % 2 == 0 ? d : -d);
    }
    case 4: return Json(random_string());
    case 5: {
      Json arr = Json::array();
      int n = pick(5);
      for (int i = 0; i < n; ++i) arr.push_back(random_json(rng, depth + 1));
      return arr;
    }
    default: {
      Json obj = Json::object();
      int n = pick(5);
      for (int i = 0; i < n; ++i)
        obj["k" + std::to_string(pick(40))] = random_json(rng, depth + 1);
      return obj;
    }
  }
}

ArtifactValue random_value(std::mt19937_64& rng) {
  if (rng() % 5 == 0) {
    std::string data;
    size_t n = rng() % 65;
    for (size_t i = 0; i < n; ++i)
      data += static_cast<char>(rng() % 256);
    return ArtifactValue::from_bytes(std::move(data));
  }
  return ArtifactValue::from_json(random_json(rng, 0));
}

void cas_properties() {
  auto begin = Clock::now();
  TempHome home{"flowmill-accept-cas"};
  CasStore store(home / "cas");
  std::mt19937_64 rng(20260823);

  std::set<std::string> distinct;
  std::vector<Json> objects;  // non-empty object values, for key-order checks
  for (int i = 0; i < 10000; ++i) {
    ArtifactValue value = random_value(rng);
    std::string encoded = canonical_encode(value);
    distinct.insert(encoded);

    ContentHash hash = store.put(value);
    check(hash == hash_of(value), "put returned a foreign hash");
    ArtifactValue back = store.get(hash);
    check(artifact_equal(back, value), "round trip lost the value");
    check(canonical_encode(back) == encoded, "round trip changed the encoding");
    store.put(value);  // idempotent; counted at the end

    if (objects.size() < 300 && value.tag == ArtifactValue::Tag::Json &&
        value.json.is_object() && value.json.size() >= 2)
      objects.push_back(value.json);
  }
  check(store.object_count() == distinct.size(),
        "object count diverged from the number of distinct values");

  // textual key order must not affect the hash
  check(objects.size() >= 50, "too few object values for key-order checks");
  for (const Json& obj : objects) {
    std::vector<std::string> keys;
    for (auto it = obj.begin(); it != obj.end(); ++it) keys.push_back(it.key());
    auto text_with = [&](const std::vector<std::string>& order) {
      std::string t = "{";
      for (size_t i = 0; i < order.size(); ++i) {
        if (i) t += ",";
        t += Json(order[i]).dump() + ":" + obj.at(order[i]).dump();
      }
      return t + "}";
    };
    std::vector<std::string> reversed(keys.rbegin(), keys.rend());
    ContentHash fwd = hash_of(
        ArtifactValue::from_json(strict_parse_json(text_with(keys))));
    ContentHash rev = hash_of(
        ArtifactValue::from_json(strict_parse_json(text_with(reversed))));
    check(fwd == rev, "key order leaked into the hash");
    check(fwd == hash_of(ArtifactValue::from_json(obj)),
          "parsed object hashed differently from the in-memory one");
  }

  // concurrent put of one fresh value from 8 workers yields one object
  ArtifactValue fresh = ArtifactValue::from_json(
      Json{{"concurrent-probe", static_cast<int64_t>(rng())}});
  while (distinct.contains(canonical_encode(fresh)))
    fresh.json["concurrent-probe"] = static_cast<int64_t>(rng());
  uint64_t before = store.object_count();
  std::atomic<bool> go{false};
  std::vector<ContentHash> hashes(8);
  std::vector<std::thread> workers;
  for (int i = 0; i < 8; ++i)
    workers.emplace_back([&, i] {
      while (!go.load()) std::this_thread::yield();
      hashes[i] = store.put(fresh);
    });
  go.store(true);
  for (auto& w : workers) w.join();
  for (const auto& h : hashes)
    check(h == hashes[0], "concurrent writers disagreed on the hash");
  check(store.object_count() == before + 1,
        "concurrent put left more than one new object");

  check(seconds_since(begin) < 30.0, "store checks exceeded their 30s budget");
}

// ---------------------------------------------------------------------------
// 3. Foreach fan-out matches a brute-force sum of squares for several n.

void foreach_correctness() {
  for (int n : {0, 1, 2, 7, 32}) {
    std::string items = "[";
    int64_t expected = 0;
    for (int k = 0; k < n; ++k) {
      items += (k ? "," : "") + std::to_string(k);
      expected += static_cast<int64_t>(k) * k;
    }
    items += "]";

    Rig rig;
    FlowSpec spec = make_flow(
        "squares",
        {{"start", "foreach:items:body", py("const items " + items)},
         {"body", "join", py("square sq")},
         {"join", "end", py("sum sq total")},
         {"end", "", py("sum total final")}});
    RunResult result = run_flow(rig.env, spec, rig.opts());
    std::string where = "n=" + std::to_string(n) + ": ";
    check(result.status == RunStatus::Succeeded, where + result.error);

    int bodies = 0;
    const TaskRecord* join = nullptr;
    for (const auto& t : result.tasks) {
      if (t.step == "body") ++bodies;
      if (t.step == "join") join = &t;
    }
    check(bodies == n, where + "wrong body task count");
    check(join != nullptr, where + "join task missing");
    ArtifactValue total = rig.store.get(join->artifacts.at("total"));
    check(total.json == Json(expected), where + "join total " +
                                            total.json.dump() + " != " +
                                            std::to_string(expected));
  }
}

// ---------------------------------------------------------------------------
// 4. The reference flow agrees hash-for-hash across backends.

void backend_equivalence() {
  Rig local_rig;
  RuntimeOptions local_opts = local_rig.opts();
  local_opts.backend = BackendKind::Local;
  RunResult local = run_flow(local_rig.env, parse_flow(kReferenceFlow),
                             local_opts);
  check(local.status == RunStatus::Succeeded, "local run failed: " +
                                                  local.error);

  Rig remote_rig;
  RuntimeOptions remote_opts = remote_rig.opts();
  remote_opts.backend = BackendKind::SimRemote;
  RunResult remote = run_flow(remote_rig.env, parse_flow(kReferenceFlow),
                              remote_opts);
  check(remote.status == RunStatus::Succeeded, "sim-remote run failed: " +
                                                   remote.error);

  check(user_artifacts(local) == user_artifacts(remote),
        "backends produced different artifact hashes");
  for (const auto& t : remote.tasks)
    check(t.backend == BackendKind::SimRemote,
          "sim-remote run recorded a local task");
}

// ---------------------------------------------------------------------------
// 5. Failing any step of a 5-step chain, then resuming, matches an
//    uninterrupted run; clones leave no execution markers.

void resume_equivalence() {
  const std::vector<std::string> chain = {"start", "a", "b", "c", "end"};
  auto flow_failing_at = [&](const std::string& broken) {
    std::vector<StepDecl> steps;
    for (size_t i = 0; i < chain.size(); ++i) {
      std::string next = i + 1 < chain.size() ? chain[i + 1] : "";
      std::string command = i == 0 ? py("const x 1") : py("incr x");
      if (chain[i] == broken)
        command = "[ -f fixed ] || exit 1; " + command;
      steps.push_back({chain[i], next, command});
    }
    return make_flow("chain", steps);
  };

  Rig baseline_rig;
  RunResult baseline =
      run_flow(baseline_rig.env, flow_failing_at(""), baseline_rig.opts());
  check(baseline.status == RunStatus::Succeeded, "baseline run failed");
  auto expected = user_artifacts(baseline);

  for (size_t k = 0; k < chain.size(); ++k) {
    const std::string& broken = chain[k];
    Rig rig;
    FlowSpec spec = flow_failing_at(broken);

    RunResult first = run_flow(rig.env, spec, rig.opts());
    check(first.status == RunStatus::Failed, broken + ": run should fail");
    check(first.failed_step == broken, broken + ": wrong failed step");

    std::ofstream(rig.env.flow_dir / "fixed") << "";
    RunResult second =
        resume_run(rig.env, spec,
                   Pathspec::of_run(first.run.flow, first.run.run_id),
                   std::nullopt, rig.opts());
    check(second.status == RunStatus::Succeeded,
          broken + ": resume failed: " + second.error);
    check(user_artifacts(second) == expected,
          broken + ": resumed hashes differ from the uninterrupted run");

    std::set<std::string> recomputed(chain.begin() + k, chain.end());
    check(executed_steps(rig, second) == recomputed,
          broken + ": cloned tasks left execution markers");
  }
}

// ---------------------------------------------------------------------------
// 6. Four concurrent runs under two users: dense run ids, no record
//    contamination, exact namespace queries.

void isolation() {
  Rig rig;
  FlowSpec spec = parse_flow(R"({
    "name": "iso",
    "parameters": [{"name": "p", "required": true}],
    "steps": [
      {"name": "start", "command": "python3 steps.py param p out",
       "next": {"type": "linear", "targets": ["end"]}},
      {"name": "end", "command": "python3 steps.py incr out"}
    ]
  })");

  std::vector<RunResult> results(4);
  std::vector<std::thread> threads;
  for (int i = 0; i < 4; ++i)
    threads.emplace_back([&, i] {
      RuntimeOptions opts = rig.opts(i < 2 ? "alice" : "bob");
      opts.parameters["p"] = Json(10 + i);
      results[i] = run_flow(rig.env, spec, opts);
    });
  for (auto& t : threads) t.join();

  std::set<int64_t> ids;
  std::map<std::string, std::set<int64_t>> ids_of_user;
  for (int i = 0; i < 4; ++i) {
    const RunResult& r = results[i];
    check(r.status == RunStatus::Succeeded,
          "run " + std::to_string(i) + " failed: " + r.error);
    ids.insert(r.run.run_id);
    ids_of_user[r.run.user].insert(r.run.run_id);
    for (const auto& t : r.tasks) {
      check(t.run_id == r.run.run_id && t.flow == "iso",
            "task record leaked across runs");
    }
    // each run's artifacts reflect its own parameter, nobody else's
    for (const auto& t : r.tasks) {
      int64_t want = t.step == "start" ? 10 + i : 11 + i;
      ArtifactValue out = rig.store.get(t.artifacts.at("out"));
      check(out.json == Json(want), "artifact value crossed runs");
    }
  }
  check(ids == std::set<int64_t>{1, 2, 3, 4}, "run ids are not dense 1..4");

  QueryFilter alice;
  alice.flow = "iso";
  alice.nspace = "alice";
  std::set<int64_t> alice_ids;
  for (const auto& run : rig.meta.query_runs(alice))
    alice_ids.insert(run.run_id);
  check(alice_ids == ids_of_user["alice"], "alice's namespace query is wrong");

  QueryFilter bob = alice;
  bob.nspace = "bob";
  std::set<int64_t> bob_ids;
  for (const auto& run : rig.meta.query_runs(bob)) bob_ids.insert(run.run_id);
  check(bob_ids == ids_of_user["bob"], "bob's namespace query is wrong");
  check(alice_ids.size() == 2 && bob_ids.size() == 2,
        "namespace queries returned the wrong cardinality");
}

// ---------------------------------------------------------------------------
// 7. Eight 2-cpu tasks on a 4-cpu ledger never overlap more than twice.

void admission_control() {
  Rig rig;
  Json doc{{"name", "fan"}, {"steps", Json::array()}};
  Json targets = Json::array();
  for (int i = 1; i <= 8; ++i) targets.push_back("a" + std::to_string(i));
  doc["steps"].push_back(Json{
      {"name", "start"},
      {"command", "true"},
      {"next", Json{{"type", "split"}, {"targets", targets}}}});
  for (int i = 1; i <= 8; ++i) {
    std::string n = std::to_string(i);
    doc["steps"].push_back(Json{
        {"name", "a" + n},
        {"command", "date +%s%N > began_" + n +
                        "; sleep 0.35; date +%s%N > ended_" + n},
        {"resources", Json{{"cpu", 2}, {"memory_mb", 1}}},
        {"next", Json{{"type", "linear"}, {"targets", Json::array({"j"})}}}});
  }
  doc["steps"].push_back(Json{
      {"name", "j"},
      {"command", "true"},
      {"next", Json{{"type", "linear"}, {"targets", Json::array({"end"})}}}});
  doc["steps"].push_back(Json{{"name", "end"}, {"command", "true"}});

  RuntimeOptions opts = rig.opts();
  opts.max_parallel = 8;  // parallelism must not be the binding constraint
  RunResult result = run_flow(rig.env, parse_flow(doc.dump()), opts);
  check(result.status == RunStatus::Succeeded, "fan run failed: " +
                                                   result.error);

  struct Event {
    int64_t at;
    int delta;
  };
  std::vector<Event> events;
  for (int i = 1; i <= 8; ++i) {
    std::string n = std::to_string(i);
    events.push_back({std::stoll(slurp(rig.env.flow_dir / ("began_" + n))), 1});
    events.push_back({std::stoll(slurp(rig.env.flow_dir / ("ended_" + n))), -1});
  }
  std::sort(events.begin(), events.end(), [](const Event& a, const Event& b) {
    return a.at != b.at ? a.at < b.at : a.delta < b.delta;
  });
  int running = 0;
  int peak = 0;
  for (const auto& e : events) {
    running += e.delta;
    peak = std::max(peak, running);
  }
  check(peak <= 2, "admission let " + std::to_string(peak) +
                       " 2-cpu tasks share 4 cpus");
  check(peak == 2, "tasks serialized; admission was never exercised");
}

// ---------------------------------------------------------------------------
// 8. Card rendering is deterministic and the card resolves via `_card`.

void card_determinism() {
  Rig rig;
  FlowSpec spec = parse_flow(kReferenceFlow);
  RunResult result = run_flow(rig.env, spec, rig.opts());
  check(result.status == RunStatus::Succeeded, "reference run failed");

  Pathspec run_path = Pathspec::of_run(result.run.flow, result.run.run_id);
  std::vector<TaskRecord> tasks = rig.meta.tasks_of_run(run_path);
  std::string first =
      render_card(rig.store, spec, *rig.meta.find_run(run_path), tasks);
  std::string second =
      render_card(rig.store, spec, *rig.meta.find_run(run_path), tasks);
  check(determinism_region(first) == determinism_region(second),
        "two renders differ outside the timestamp");

  int64_t end_task = 0;
  for (const auto& t : result.tasks)
    if (t.step == "end") end_task = t.task_id;
  check(end_task != 0, "no end task recorded");

  Client client(rig.store, rig.meta);
  Resolved resolved = client.resolve(
      Pathspec::parse("ref/1/end/" + std::to_string(end_task) + "/_card"),
      "tester");
  check(resolved.value.has_value(), "_card did not resolve");
  check(resolved.value->tag == ArtifactValue::Tag::Bytes,
        "_card is not a bytes artifact");
  check(resolved.value->bytes.rfind("<!DOCTYPE html>", 0) == 0,
        "_card does not hold an html document");
  check(determinism_region(resolved.value->bytes) == determinism_region(first),
        "stored card differs from a fresh render");
}

// ---------------------------------------------------------------------------
// 9. Exported plans are valid topological orders and byte-stable.

void plan_export() {
  for (const auto& f : corpus()) {
    if (!f.valid) continue;
    std::string once = serialize_plan(topological_plan(f.spec));
    std::string twice = serialize_plan(topological_plan(f.spec));
    check(once == twice, f.name + ": plan bytes unstable");

    Json plan = Json::parse(once);
    std::map<std::string, size_t> position;
    for (const auto& node : plan["nodes"])
      position[node["step"].get<std::string>()] = position.size();
    check(position.size() == f.spec.steps.size(),
          f.name + ": plan dropped steps");
    for (const auto& step : f.spec.steps) {
      if (!step.transition) continue;
      for (const auto& target : step.transition->targets)
        check(position.at(step.name) < position.at(target),
              f.name + ": edge " + step.name + "->" + target +
                  " violates the order");
    }
  }
}

// ---------------------------------------------------------------------------
// 10. The command-line transcript: validate, run, show, resume, card.

struct CliResult {
  int code = -1;
  std::string out;
  std::string err;
};

void cli_golden() {
  auto begin = Clock::now();
  TempHome root{"flowmill-accept-cli"};
  fs::path flow_dir = root / "flow";
  fs::path state = root / "state";
  fs::create_directories(flow_dir);
  fs::copy_file(fs::path(FLOWMILL_FIXTURE_DIR) / "steps.py",
                flow_dir / "steps.py");
  std::ofstream(flow_dir / "ref.json") << kReferenceFlow;

  auto cli = [&](const std::string& args) -> CliResult {
    fs::path out_file = root / "cli_stdout";
    fs::path err_file = root / "cli_stderr";
    std::string command = "cd " + flow_dir.string() +
                          " && env FLOWMILL_HOME=" + state.string() +
                          " FLOWMILL_USER=casey " + FLOWMILL_CLI_BIN + " " +
                          args + " > " + out_file.string() + " 2> " +
                          err_file.string();
    int raw = std::system(command.c_str());
    check(raw != -1 && WIFEXITED(raw), "could not spawn the cli");
    return {WEXITSTATUS(raw), slurp(out_file), slurp(err_file)};
  };

  CliResult validate = cli("validate ref.json");
  check(validate.code == 0 && validate.out == "ok\n", "validate transcript");

  const std::string transcript =
      "  start/1 SUCCEEDED LOCAL\n"
      "  sq[0]/2 SUCCEEDED LOCAL\n"
      "  sq[1]/3 SUCCEEDED LOCAL\n"
      "  sq[2]/4 SUCCEEDED LOCAL\n"
      "  total/5 SUCCEEDED LOCAL\n"
      "  end/6 SUCCEEDED LOCAL\n";

  CliResult run = cli("run ref.json --max-parallel 1");
  check(run.code == 0, "run exit code");
  check(run.out == "ref/1 SUCCEEDED\n" + transcript, "run transcript");

  CliResult show = cli("show ref/1");
  check(show.code == 0, "show exit code");
  check(show.out == "ref/1 SUCCEEDED user:casey\n" + transcript,
        "show transcript");

  CliResult value = cli("show ref/1/total/5/total");
  check(value.code == 0 && value.out == "14\n", "artifact value transcript");

  CliResult resume = cli("resume ref.json --origin ref/1 --from total"
                         " --max-parallel 1");
  check(resume.code == 0, "resume exit code");
  check(resume.out == "ref/2 SUCCEEDED\n" + transcript, "resume transcript");

  CliResult card = cli("card ref/1");
  check(card.code == 0 && card.out == "cards/ref-run1.html\n",
        "card transcript");
  fs::path card_path = state / "cards" / "ref-run1.html";
  check(fs::exists(card_path), "card file missing");
  std::string bytes = slurp(card_path);
  check(cli("card ref/1").code == 0 && slurp(card_path) == bytes,
        "repeated card invocation changed the bytes");

  check(seconds_since(begin) < 10.0, "cli transcript exceeded its 10s budget");
}

}  // namespace

int main() {
  struct Criterion {
    int id;
    const char* title;
    void (*body)();
  };
  const std::vector<Criterion> criteria = {
      {1, "dag linter agrees with the brute-force oracle", dag_linting},
      {2, "store round-trips, dedups and canonicalizes 10k random values",
       cas_properties},
      {3, "foreach fan-out matches the brute-force sum of squares",
       foreach_correctness},
      {4, "local and sim-remote backends agree hash-for-hash",
       backend_equivalence},
      {5, "resume after any failure matches an uninterrupted run",
       resume_equivalence},
      {6, "concurrent runs under two users stay isolated", isolation},
      {7, "admission keeps 2-cpu tasks within the 4-cpu ledger",
       admission_control},
      {8, "cards render deterministically and resolve via _card",
       card_determinism},
      {9, "exported plans are topological and byte-stable", plan_export},
      {10, "cli transcript: validate, run, show, resume, card", cli_golden},
  };

  int failures = 0;
  for (const auto& c : criteria) {
    auto begin = Clock::now();
    try {
      c.body();
      std::printf("[%2d] PASS %s (%.2fs)\n", c.id, c.title,
                  seconds_since(begin));
    } catch (const std::exception& e) {
      ++failures;
      std::printf("[%2d] FAIL %s: %s\n", c.id, c.title, e.what());
    }
    std::fflush(stdout);
  }
  std::printf("%zu of %zu criteria passed\n", criteria.size() - failures,
              criteria.size());
  return failures == 0 ? 0 : 1;
}
