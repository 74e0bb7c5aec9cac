#include "flowmill/cards.hpp"

#include "flowmill/errors.hpp"
#include "flowmill/flow_graph.hpp"
#include "flowmill/timeutil.hpp"

#include <set>
#include <sstream>

namespace flowmill {
namespace {

std::string escape(const std::string& text) {
  std::string out;
  out.reserve(text.size());
  for (char c : text) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

// Scalars and short arrays show their value; everything else shows its
// kind and canonical size, keeping the card bounded and deterministic.
std::string preview(const ArtifactValue& value) {
  if (value.tag == ArtifactValue::Tag::Bytes)
    return "bytes · " + std::to_string(value.bytes.size()) + " B";
  const Json& j = value.json;
  if (!j.is_object() && (!j.is_array() || j.size() <= 16)) {
    std::string text = canonical_json(j);
    if (text.size() <= 256) return escape(text);
  }
  // 5 = strlen("json\n"), the tag line of the canonical encoding
  return "json · " + std::to_string(canonical_encode(value).size() - 5) + " B";
}

struct StructureWriter {
  const FlowSpec& spec;
  const FlowAnalysis& analysis;
  std::map<std::string, int64_t> fanout;  // foreach opener -> cardinality
  std::ostream& out;

  StructureWriter(const FlowSpec& s, const FlowAnalysis& a,
                  const std::vector<TaskRecord>& tasks, std::ostream& os)
      : spec(s), analysis(a), out(os) {
    std::set<std::string> ran;
    for (const auto& t : tasks) {
      ran.insert(t.step);
      for (const auto& f : t.foreach_stack)
        fanout.emplace(f.step, f.cardinality);
    }
    // a join that executed without sibling bodies marks an empty fan-out
    for (const auto& [opener, join] : analysis.foreach_join)
      if (!fanout.count(opener) && ran.count(join)) fanout.emplace(opener, 0);
  }

  // Renders `from` up to but not including `stop` ("" = through the sink).
  void sequence(const std::string& from, const std::string& stop) {
    std::string cur = from;
    while (cur != stop) {
      const StepSpec& step = *spec.find_step(cur);
      const StepInfo& info = analysis.steps.at(cur);
      out << "<li><strong>" << escape(cur) << "</strong>";
      if (info.role == StepInfo::Role::StaticJoin ||
          info.role == StepInfo::Role::ForeachJoin)
        out << " <em>join of " << escape(info.joins) << "</em>";

      if (!step.transition) {  // the sink
        out << "</li>\n";
        return;
      }
      const Transition& tr = *step.transition;
      switch (tr.kind) {
        case Transition::Kind::Linear:
          out << "</li>\n";
          cur = tr.targets[0];
          break;
        case Transition::Kind::Split: {
          out << " <em>split</em>\n<ul>\n";
          for (const auto& target : tr.targets) {
            out << "<li><ol>\n";
            sequence(target, analysis.split_join.at(cur));
            out << "</ol></li>\n";
          }
          out << "</ul>\n</li>\n";
          cur = analysis.split_join.at(cur);
          break;
        }
        case Transition::Kind::Foreach: {
          out << " <em>foreach over " << escape(tr.foreach_key);
          auto it = fanout.find(cur);
          if (it != fanout.end()) out << " ×" << it->second;
          out << "</em>\n<ul>\n<li><ol>\n";
          sequence(tr.targets[0], analysis.foreach_join.at(cur));
          out << "</ol></li>\n</ul>\n</li>\n";
          cur = analysis.foreach_join.at(cur);
          break;
        }
      }
    }
  }
};

}  // namespace

std::string render_card(const CasStore& store, const FlowSpec& spec,
                        const RunRecord& run,
                        const std::vector<TaskRecord>& tasks) {
  if (run.status == RunStatus::Running)
    raise(Errc::RunNotTerminal,
          run.flow + "/" + std::to_string(run.run_id) + " is still running");
  FlowAnalysis analysis = analyze_flow(spec);

  std::ostringstream out;
  out << "<!DOCTYPE html>\n<html lang=\"en\">\n<head>\n"
      << "<meta charset=\"utf-8\">\n"
      << "<title>" << escape(run.flow) << " · run " << run.run_id
      << "</title>\n"
      << "<style>\n"
      << "body{font:14px/1.5 system-ui,sans-serif;margin:2rem auto;"
         "max-width:60rem;color:#1a1a24}\n"
      << "h1{border-bottom:2px solid #1a1a24}\n"
      << "table{border-collapse:collapse;width:100%;margin:1rem 0}\n"
      << "th,td{border:1px solid #c8c8d0;padding:.3rem .6rem;"
         "text-align:left;vertical-align:top}\n"
      << "th{background:#eef}\n"
      << "code{font:12px/1.4 ui-monospace,monospace;word-break:break-all}\n"
      << "ol{margin:.2rem 0}\n"
      << "em{color:#555;font-size:12px}\n"
      << ".ok{color:#060}.bad{color:#a00}\n"
      << "</style>\n</head>\n<body>\n"
      << "<h1>" << escape(run.flow) << " · run " << run.run_id << "</h1>\n"
      << "<p>rendered <time>" << format_utc(now_micros()) << "</time></p>\n";

  out << "<h2>Run</h2>\n<table>\n";
  auto row = [&](const std::string& key, const std::string& value_html) {
    out << "<tr><th>" << key << "</th><td>" << value_html << "</td></tr>\n";
  };
  row("flow", escape(run.flow));
  row("run", std::to_string(run.run_id));
  row("user", escape(run.user));
  std::string tags;
  for (const auto& tag : run.tags) tags += (tags.empty() ? "" : ", ") + escape(tag);
  row("tags", tags);
  const bool ok = run.status == RunStatus::Succeeded;
  row("status", std::string("<span class=\"") + (ok ? "ok" : "bad") + "\">" +
                    to_string(run.status) + "</span>");
  row("code package", "<code>" + run.code_package.hex + "</code>");
  if (run.cloned_from) row("cloned from", escape(run.cloned_from->to_string()));
  std::string params;
  for (const auto& [name, hash] : run.parameters)
    params += "<code>" + escape(name) + "</code> = " + preview(store.get(hash)) +
              "<br>";
  row("parameters", params);
  out << "</table>\n";

  out << "<h2>Structure</h2>\n<ol>\n";
  StructureWriter(spec, analysis, tasks, out).sequence("start", "");
  out << "</ol>\n";

  out << "<h2>Tasks</h2>\n<table>\n"
      << "<tr><th>step</th><th>task</th><th>attempt</th><th>status</th>"
      << "<th>backend</th><th>artifacts</th></tr>\n";
  for (const auto& task : tasks) {
    out << "<tr><td>" << escape(task.step);
    for (const auto& f : task.foreach_stack) out << "[" << f.index << "]";
    out << "</td><td>" << task.task_id << "</td><td>" << task.attempt
        << "</td><td>" << to_string(task.status) << "</td><td>"
        << to_string(task.backend) << "</td><td>";
    for (const auto& [name, hash] : task.artifacts) {
      // a card cannot list its own hash, so `_card` never appears
      if (name == "_card") continue;
      out << "<code>" << escape(name) << "</code> <code>" << hash.hex
          << "</code> " << preview(store.get(hash)) << "<br>";
    }
    out << "</td></tr>\n";
  }
  out << "</table>\n</body>\n</html>\n";
  return out.str();
}

std::string determinism_region(const std::string& html) {
  const auto open = html.find("<time>");
  const auto close = html.find("</time>", open);
  if (open == std::string::npos || close == std::string::npos) return html;
  return html.substr(0, open + 6) + html.substr(close);
}

ContentHash store_card(const CasStore& store, MetadataStore& meta,
                       const Pathspec& run, const std::string& html) {
  std::vector<TaskRecord> tasks = meta.tasks_of_run(run);
  const TaskRecord* end_task = nullptr;
  for (const auto& task : tasks)
    if (task.step == "end") end_task = &task;
  if (!end_task)
    raise(Errc::NotFound, run.to_string() + " has no end task to carry a card");

  ContentHash hash = store.put(ArtifactValue::from_bytes(html));
  meta.record_artifacts(Pathspec::of_task(run.flow, run.run_id, "end",
                                          end_task->task_id),
                        {{"_card", hash}});
  return hash;
}

}  // namespace flowmill
