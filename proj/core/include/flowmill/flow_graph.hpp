#pragma once

#include "flowmill/flow_spec.hpp"

#include <map>
#include <string>
#include <vector>

namespace flowmill {

struct Diagnostic {
  enum class Severity { Error, Warning };

  std::string code;  // CYCLE, UNREACHABLE, NO_PATH_TO_END, UNMATCHED_SPLIT,
                     // MIXED_JOIN
  std::string step;
  std::string message;
  Severity severity = Severity::Error;
};

struct ValidationReport {
  bool ok = false;
  std::vector<Diagnostic> diagnostics;
};

// Well-formedness check. A flow passes iff the graph is acyclic, every step
// is reachable from `start`, `end` is reachable from every step, and the
// split/foreach structure is properly nested:
//   - a split's branches reconverge at exactly one join whose in-degree
//     equals the branch count, every in-edge arriving from a distinct
//     branch of that same split;
//   - a foreach body is one step (possibly containing nested splits or
//     foreaches, closed by their own joins); the body's single linear
//     successor is the dynamic join and pops the foreach;
//   - frames close in LIFO order, which the per-step frame stacks enforce.
// Pure: no side effects, identical report for identical specs.
ValidationReport validate_dag(const FlowSpec& spec);

// One open construct (split or foreach) enclosing a step.
struct Frame {
  enum class Kind { Split, Foreach };

  Kind kind = Kind::Split;
  std::string opener;  // the step whose transition opened this frame
  int branch = 0;      // split target index; 0 for foreach

  bool operator==(const Frame&) const = default;
};

// Static facts the scheduler and plan export need about one step.
struct StepInfo {
  enum class Role { Plain, BranchEntry, BodyEntry, StaticJoin, ForeachJoin };

  Role role = Role::Plain;
  std::vector<Frame> stack;  // frames open while this step executes
  std::string joins;         // opener step closed here (join roles only)
  // static joins: the tail step of each branch, in branch declaration order
  std::vector<std::string> join_sources;
  int decl_index = 0;
};

struct FlowAnalysis {
  std::map<std::string, StepInfo> steps;
  std::map<std::string, std::string> split_join;    // split step -> its join
  std::map<std::string, std::string> foreach_join;  // foreach step -> its join
};

// Pre: validate_dag(spec).ok. Throws Error(InvalidFlow) otherwise.
FlowAnalysis analyze_flow(const FlowSpec& spec);

struct PlanNode {
  std::string step;
  std::string annotation;  // static | split-branch | dynamic-fan-out | join
  std::vector<std::string> targets;
  std::string foreach_key;  // set when the step's transition is a foreach
  std::string joins;        // set on join nodes: the opener being closed
};

// Static, topologically ordered execution plan for handoff to an external
// scheduler. Ties are broken by declaration order, so the emitted order and
// its serialized bytes are stable across invocations.
struct OrchestrationPlan {
  std::string flow;
  std::vector<PlanNode> nodes;
};

OrchestrationPlan topological_plan(const FlowSpec& spec);

std::string serialize_plan(const OrchestrationPlan& plan);

}  // namespace flowmill
