#include "flowmill/flow_graph.hpp"

#include "flowmill/errors.hpp"

#include <algorithm>
#include <deque>
#include <queue>
#include <set>

namespace flowmill {
namespace {

struct Edges {
  // adjacency by step index; edge order follows target declaration order
  std::vector<std::vector<int>> out;
  std::vector<std::vector<int>> in;
};

Edges build_edges(const FlowSpec& spec) {
  Edges e;
  e.out.resize(spec.steps.size());
  e.in.resize(spec.steps.size());
  for (size_t i = 0; i < spec.steps.size(); ++i) {
    if (!spec.steps[i].transition) continue;
    for (const auto& target : spec.steps[i].transition->targets) {
      int j = spec.index_of(target);
      e.out[i].push_back(j);
      e.in[j].push_back(static_cast<int>(i));
    }
  }
  return e;
}

// Kahn's algorithm; returns steps left with unresolved in-edges (cycle
// members and their downstream) or an empty set when acyclic.
std::set<int> cycle_residue(const FlowSpec& spec, const Edges& e) {
  std::vector<int> degree(spec.steps.size());
  for (size_t i = 0; i < spec.steps.size(); ++i)
    degree[i] = static_cast<int>(e.in[i].size());
  std::deque<int> frontier;
  for (size_t i = 0; i < spec.steps.size(); ++i)
    if (degree[i] == 0) frontier.push_back(static_cast<int>(i));
  size_t emitted = 0;
  while (!frontier.empty()) {
    int n = frontier.front();
    frontier.pop_front();
    ++emitted;
    for (int m : e.out[n])
      if (--degree[m] == 0) frontier.push_back(m);
  }
  std::set<int> residue;
  if (emitted < spec.steps.size())
    for (size_t i = 0; i < spec.steps.size(); ++i)
      if (degree[i] > 0) residue.insert(static_cast<int>(i));
  return residue;
}

std::vector<bool> reach_from(int origin, const std::vector<std::vector<int>>& adj) {
  std::vector<bool> seen(adj.size(), false);
  std::deque<int> frontier{origin};
  seen[origin] = true;
  while (!frontier.empty()) {
    int n = frontier.front();
    frontier.pop_front();
    for (int m : adj[n])
      if (!seen[m]) {
        seen[m] = true;
        frontier.push_back(m);
      }
  }
  return seen;
}

// One in-edge as seen by the step it arrives at, with the frame stack it
// carries. Linear edges leaving a step whose top frame is a foreach pop
// that frame en route: they are the fan-in edges of the dynamic join.
struct Arrival {
  enum class Kind { Plain, BranchEntry, BodyEntry, ForeachJoin };

  Kind kind = Kind::Plain;
  int source = -1;
  std::vector<Frame> stack;  // after any en-route pop
  Frame popped;              // ForeachJoin only
};

struct StackPhase {
  const FlowSpec& spec;
  const Edges& edges;
  FlowAnalysis analysis;
  std::vector<Diagnostic>& diagnostics;
  std::vector<bool> computed;

  StackPhase(const FlowSpec& s, const Edges& e, std::vector<Diagnostic>& d)
      : spec(s), edges(e), diagnostics(d), computed(s.steps.size(), false) {}

  void fail(const std::string& code, const std::string& step, std::string message) {
    diagnostics.push_back({code, step, std::move(message), Diagnostic::Severity::Error});
  }

  const StepInfo& info(int idx) const {
    return analysis.steps.at(spec.steps[idx].name);
  }

  Arrival arrival_via(int source, int target) {
    const StepSpec& src = spec.steps[source];
    Arrival a;
    a.source = source;
    a.stack = info(source).stack;
    switch (src.transition->kind) {
      case Transition::Kind::Split: {
        const auto& targets = src.transition->targets;
        auto it = std::find(targets.begin(), targets.end(), spec.steps[target].name);
        a.kind = Arrival::Kind::BranchEntry;
        a.stack.push_back({Frame::Kind::Split, src.name,
                           static_cast<int>(it - targets.begin())});
        break;
      }
      case Transition::Kind::Foreach:
        a.kind = Arrival::Kind::BodyEntry;
        a.stack.push_back({Frame::Kind::Foreach, src.name, 0});
        break;
      case Transition::Kind::Linear:
        if (!a.stack.empty() && a.stack.back().kind == Frame::Kind::Foreach) {
          a.kind = Arrival::Kind::ForeachJoin;
          a.popped = a.stack.back();
          a.stack.pop_back();
        } else {
          a.kind = Arrival::Kind::Plain;
        }
        break;
    }
    return a;
  }

  // True when the step's frame stack could be settled; false aborts the
  // phase (a structural error makes downstream stacks meaningless).
  bool settle(int idx) {
    const std::string& name = spec.steps[idx].name;
    StepInfo entry;
    entry.decl_index = static_cast<int>(idx);

    std::vector<Arrival> arrivals;
    for (int p : edges.in[idx])
      if (computed[p]) arrivals.push_back(arrival_via(p, idx));

    if (arrivals.empty()) {
      analysis.steps[name] = std::move(entry);  // start: empty stack
      return true;
    }

    if (arrivals.size() == 1) {
      Arrival& a = arrivals.front();
      entry.stack = std::move(a.stack);
      switch (a.kind) {
        case Arrival::Kind::Plain:
          entry.role = StepInfo::Role::Plain;
          break;
        case Arrival::Kind::BranchEntry:
          entry.role = StepInfo::Role::BranchEntry;
          break;
        case Arrival::Kind::BodyEntry:
          entry.role = StepInfo::Role::BodyEntry;
          break;
        case Arrival::Kind::ForeachJoin: {
          entry.role = StepInfo::Role::ForeachJoin;
          entry.joins = a.popped.opener;
          entry.join_sources = {spec.steps[a.source].name};
          auto [it, inserted] = analysis.foreach_join.emplace(a.popped.opener, name);
          if (!inserted && it->second != name) {
            fail("UNMATCHED_SPLIT", name,
                 "foreach '" + a.popped.opener + "' closes at both '" + it->second +
                     "' and '" + name + "'");
            return false;
          }
          break;
        }
      }
      analysis.steps[name] = std::move(entry);
      return true;
    }

    // in-degree >= 2: the step must be the join of exactly one split, fed
    // by one edge per branch carrying identical stacks beneath the top
    // frame. Any foreach-flavoured edge in the mix is a nesting error.
    for (const Arrival& a : arrivals) {
      if (a.kind == Arrival::Kind::BodyEntry) {
        fail("MIXED_JOIN", name,
             "foreach '" + spec.steps[a.source].name + "' fans out into '" + name +
                 "', which has other inbound edges");
        return false;
      }
      if (a.kind == Arrival::Kind::BranchEntry) {
        fail("UNMATCHED_SPLIT", name,
             "split '" + spec.steps[a.source].name + "' targets convergence step '" +
                 name + "' directly (empty branch)");
        return false;
      }
      if (a.kind == Arrival::Kind::ForeachJoin) {
        fail("MIXED_JOIN", name,
             "foreach join for '" + a.popped.opener +
                 "' also receives a non-foreach edge");
        return false;
      }
      if (a.stack.empty() || a.stack.back().kind != Frame::Kind::Split) {
        fail("UNMATCHED_SPLIT", name, "multiple edges converge without an open split");
        return false;
      }
    }
    const std::string opener = arrivals.front().stack.back().opener;
    std::set<int> branches;
    for (const Arrival& a : arrivals) {
      if (a.stack.back().opener != opener) {
        fail("UNMATCHED_SPLIT", name,
             "join mixes branches of '" + opener + "' and '" + a.stack.back().opener + "'");
        return false;
      }
      if (!branches.insert(a.stack.back().branch).second) {
        fail("UNMATCHED_SPLIT", name,
             "two edges arrive from the same branch of '" + opener + "'");
        return false;
      }
    }
    size_t width = spec.find_step(opener)->transition->targets.size();
    if (arrivals.size() != width) {
      fail("UNMATCHED_SPLIT", name,
           "'" + opener + "' opens " + std::to_string(width) + " branches but " +
               std::to_string(arrivals.size()) + " converge at '" + name + "'");
      return false;
    }
    std::vector<Frame> beneath(arrivals.front().stack.begin(),
                               arrivals.front().stack.end() - 1);
    for (const Arrival& a : arrivals) {
      if (!std::equal(beneath.begin(), beneath.end(), a.stack.begin(),
                      a.stack.end() - 1)) {
        fail("UNMATCHED_SPLIT", name,
             "branches of '" + opener + "' reach '" + name + "' under different nesting");
        return false;
      }
    }
    entry.role = StepInfo::Role::StaticJoin;
    entry.joins = opener;
    entry.stack = std::move(beneath);
    entry.join_sources.resize(arrivals.size());
    std::sort(arrivals.begin(), arrivals.end(), [](const Arrival& a, const Arrival& b) {
      return a.stack.back().branch < b.stack.back().branch;
    });
    for (size_t i = 0; i < arrivals.size(); ++i)
      entry.join_sources[i] = spec.steps[arrivals[i].source].name;
    analysis.split_join[opener] = name;
    analysis.steps[name] = std::move(entry);
    return true;
  }

  // Topological sweep over the reachable subgraph, declaration order as
  // tie-break so diagnostics come out in a stable order.
  bool run(const std::vector<bool>& reachable) {
    std::vector<int> pending(spec.steps.size(), 0);
    for (size_t i = 0; i < spec.steps.size(); ++i)
      for (int p : edges.in[i])
        if (reachable[p]) ++pending[i];
    std::priority_queue<int, std::vector<int>, std::greater<>> ready;
    for (size_t i = 0; i < spec.steps.size(); ++i)
      if (reachable[i] && pending[i] == 0) ready.push(static_cast<int>(i));
    while (!ready.empty()) {
      int n = ready.top();
      ready.pop();
      if (!settle(n)) return false;
      computed[n] = true;
      for (int m : edges.out[n])
        if (reachable[m] && --pending[m] == 0) ready.push(m);
    }
    int end_idx = spec.index_of("end");
    if (computed[end_idx] && !info(end_idx).stack.empty()) {
      fail("UNMATCHED_SPLIT", "end",
           "'" + info(end_idx).stack.back().opener + "' is never closed");
      return false;
    }
    return true;
  }
};

void validate_into(const FlowSpec& spec, ValidationReport& report, FlowAnalysis* analysis) {
  Edges edges = build_edges(spec);

  std::set<int> cyclic = cycle_residue(spec, edges);
  for (int i : cyclic)
    report.diagnostics.push_back({"CYCLE", spec.steps[i].name,
                                  "step lies on or behind a cycle",
                                  Diagnostic::Severity::Error});

  std::vector<bool> from_start = reach_from(spec.index_of("start"), edges.out);
  for (size_t i = 0; i < spec.steps.size(); ++i)
    if (!from_start[i])
      report.diagnostics.push_back({"UNREACHABLE", spec.steps[i].name,
                                    "no path from 'start' reaches this step",
                                    Diagnostic::Severity::Error});

  std::vector<bool> to_end = reach_from(spec.index_of("end"), edges.in);
  for (size_t i = 0; i < spec.steps.size(); ++i)
    if (from_start[i] && !to_end[i])
      report.diagnostics.push_back({"NO_PATH_TO_END", spec.steps[i].name,
                                    "no path from this step reaches 'end'",
                                    Diagnostic::Severity::Error});

  if (cyclic.empty()) {
    StackPhase phase(spec, edges, report.diagnostics);
    bool settled = phase.run(from_start);
    if (settled && report.diagnostics.empty() && analysis)
      *analysis = std::move(phase.analysis);
  }

  report.ok = report.diagnostics.empty();
}

}  // namespace

ValidationReport validate_dag(const FlowSpec& spec) {
  ValidationReport report;
  validate_into(spec, report, nullptr);
  return report;
}

FlowAnalysis analyze_flow(const FlowSpec& spec) {
  ValidationReport report;
  FlowAnalysis analysis;
  validate_into(spec, report, &analysis);
  if (!report.ok) {
    std::string detail = "flow '" + spec.name + "' fails validation:";
    for (const auto& d : report.diagnostics)
      detail += " [" + d.code + " at " + d.step + "]";
    raise(Errc::InvalidFlow, detail);
  }
  return analysis;
}

OrchestrationPlan topological_plan(const FlowSpec& spec) {
  FlowAnalysis analysis = analyze_flow(spec);

  std::vector<int> order;
  {
    Edges edges = build_edges(spec);
    std::vector<int> pending(spec.steps.size(), 0);
    for (size_t i = 0; i < spec.steps.size(); ++i)
      pending[i] = static_cast<int>(edges.in[i].size());
    std::priority_queue<int, std::vector<int>, std::greater<>> ready;
    for (size_t i = 0; i < spec.steps.size(); ++i)
      if (pending[i] == 0) ready.push(static_cast<int>(i));
    while (!ready.empty()) {
      int n = ready.top();
      ready.pop();
      order.push_back(n);
      for (int m : edges.out[n])
        if (--pending[m] == 0) ready.push(m);
    }
  }

  OrchestrationPlan plan;
  plan.flow = spec.name;
  for (int idx : order) {
    const StepSpec& step = spec.steps[idx];
    const StepInfo& info = analysis.steps.at(step.name);
    PlanNode node;
    node.step = step.name;
    if (step.transition) {
      node.targets = step.transition->targets;
      if (step.transition->kind == Transition::Kind::Foreach)
        node.foreach_key = step.transition->foreach_key;
    }
    // precedence: join > dynamic-fan-out > split-branch > static
    if (info.role == StepInfo::Role::StaticJoin || info.role == StepInfo::Role::ForeachJoin) {
      node.annotation = "join";
      node.joins = info.joins;
    } else if (step.transition && step.transition->kind == Transition::Kind::Foreach) {
      node.annotation = "dynamic-fan-out";
    } else if (info.role == StepInfo::Role::BranchEntry ||
               info.role == StepInfo::Role::BodyEntry) {
      node.annotation = "split-branch";
    } else {
      node.annotation = "static";
    }
    plan.nodes.push_back(std::move(node));
  }
  return plan;
}

std::string serialize_plan(const OrchestrationPlan& plan) {
  Json nodes = Json::array();
  for (const PlanNode& node : plan.nodes) {
    Json entry{{"step", node.step}, {"annotation", node.annotation}};
    entry["targets"] = node.targets;
    if (!node.foreach_key.empty()) entry["foreach_key"] = node.foreach_key;
    if (!node.joins.empty()) entry["joins"] = node.joins;
    nodes.push_back(std::move(entry));
  }
  Json doc{{"flow", plan.flow}, {"nodes", std::move(nodes)}};
  return doc.dump(2) + "\n";
}

}  // namespace flowmill
