#include "flowmill/pathspec.hpp"

#include "flowmill/errors.hpp"
#include "flowmill/flow_spec.hpp"

#include <charconv>
#include <vector>

namespace flowmill {
namespace {

int64_t parse_id(const std::string& text, const std::string& what) {
  // canonical positive decimal: no sign, no leading zero, fits int64
  bool canonical = !text.empty() && text.size() <= 18 &&
                   (text.size() == 1 || text[0] != '0');
  for (char c : text)
    if (c < '0' || c > '9') canonical = false;
  int64_t value = 0;
  if (canonical) {
    auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
    canonical = ec == std::errc() && ptr == text.data() + text.size();
  }
  if (!canonical || value < 1)
    raise(Errc::PathError, "bad " + what + " '" + text + "': expected a positive integer");
  return value;
}

bool valid_artifact_name(const std::string& name) {
  if (name.empty() || name.size() > 64) return false;
  if (!(name[0] == '_' || (name[0] >= 'a' && name[0] <= 'z'))) return false;
  for (char c : name)
    if (!((c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == '_')) return false;
  return true;
}

}  // namespace

Pathspec Pathspec::parse(const std::string& text) {
  std::vector<std::string> parts;
  size_t begin = 0;
  while (true) {
    size_t slash = text.find('/', begin);
    parts.push_back(text.substr(begin, slash - begin));
    if (slash == std::string::npos) break;
    begin = slash + 1;
  }
  if (parts.size() > 5)
    raise(Errc::PathError, "pathspec '" + text + "' has more than five components");

  Pathspec p;
  if (!valid_identifier(parts[0]))
    raise(Errc::PathError, "bad flow name '" + parts[0] + "'");
  p.flow = parts[0];
  p.depth = Depth::Flow;
  if (parts.size() >= 2) {
    p.run_id = parse_id(parts[1], "run id");
    p.depth = Depth::Run;
  }
  if (parts.size() >= 3) {
    if (!valid_identifier(parts[2]))
      raise(Errc::PathError, "bad step name '" + parts[2] + "'");
    p.step = parts[2];
    p.depth = Depth::Step;
  }
  if (parts.size() >= 4) {
    p.task_id = parse_id(parts[3], "task id");
    p.depth = Depth::Task;
  }
  if (parts.size() == 5) {
    if (!valid_artifact_name(parts[4]))
      raise(Errc::PathError, "bad artifact name '" + parts[4] + "'");
    p.artifact = parts[4];
    p.depth = Depth::Artifact;
  }
  return p;
}

Pathspec Pathspec::of_run(const std::string& flow, int64_t run_id) {
  Pathspec p;
  p.depth = Depth::Run;
  p.flow = flow;
  p.run_id = run_id;
  return p;
}

Pathspec Pathspec::of_task(const std::string& flow, int64_t run_id,
                           const std::string& step, int64_t task_id) {
  Pathspec p;
  p.depth = Depth::Task;
  p.flow = flow;
  p.run_id = run_id;
  p.step = step;
  p.task_id = task_id;
  return p;
}

std::string Pathspec::to_string() const {
  std::string out = flow;
  if (depth == Depth::Flow) return out;
  out += "/" + std::to_string(run_id);
  if (depth == Depth::Run) return out;
  out += "/" + step;
  if (depth == Depth::Step) return out;
  out += "/" + std::to_string(task_id);
  if (depth == Depth::Task) return out;
  return out + "/" + artifact;
}

}  // namespace flowmill
