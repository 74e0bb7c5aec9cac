#pragma once

#include <flowmill/flow_spec.hpp>

#include <string>
#include <vector>

namespace flowmill::testing {

// Terse graph notation for building flow documents in tests:
//   {"start", "a"}                 linear edge
//   {"a", "split:x,y"}             split
//   {"a", "foreach:items:body"}    foreach over artifact `items`
//   {"end", ""}                    no transition
// Commands default to `true`; decorators are omitted.
struct StepDecl {
  std::string name;
  std::string next;
  std::string command = "true";
};

inline std::string make_flow_doc(const std::string& name,
                                 const std::vector<StepDecl>& steps) {
  Json doc{{"name", name}, {"steps", Json::array()}};
  for (const auto& s : steps) {
    Json step{{"name", s.name}, {"command", s.command}};
    if (!s.next.empty()) {
      Json next;
      if (s.next.rfind("split:", 0) == 0) {
        next["type"] = "split";
        Json targets = Json::array();
        std::string rest = s.next.substr(6);
        size_t pos = 0;
        while (pos != std::string::npos) {
          size_t comma = rest.find(',', pos);
          targets.push_back(rest.substr(pos, comma - pos));
          pos = comma == std::string::npos ? comma : comma + 1;
        }
        next["targets"] = std::move(targets);
      } else if (s.next.rfind("foreach:", 0) == 0) {
        std::string rest = s.next.substr(8);
        size_t colon = rest.find(':');
        next["type"] = "foreach";
        next["foreach_key"] = rest.substr(0, colon);
        next["targets"] = Json::array({rest.substr(colon + 1)});
      } else {
        next["type"] = "linear";
        next["targets"] = Json::array({s.next});
      }
      step["next"] = std::move(next);
    }
    doc["steps"].push_back(std::move(step));
  }
  return doc.dump(2) + "\n";
}

inline FlowSpec make_flow(const std::string& name, const std::vector<StepDecl>& steps) {
  return parse_flow(make_flow_doc(name, steps));
}

}  // namespace flowmill::testing
