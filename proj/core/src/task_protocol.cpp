#include "flowmill/task_protocol.hpp"

#include "flowmill/errors.hpp"

#include <fstream>

namespace fs = std::filesystem;

namespace flowmill {
namespace {

// The stored object minus its tag line: canonical JSON text for json
// artifacts, the raw bytes for bytes artifacts.
std::string payload_of(const ArtifactValue& value) {
  std::string encoded = canonical_encode(value);
  return encoded.substr(encoded.find('\n') + 1);
}

void write_file(const fs::path& path, std::string_view content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  out.flush();
  if (!out)
    raise(Errc::StoreIOError, "cannot write " + path.string());
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    raise(Errc::StoreIOError, "cannot read " + path.string());
  std::string content((std::istreambuf_iterator<char>(in)),
                      std::istreambuf_iterator<char>());
  return content;
}

// Writes the artifact behind `hash` to `file` and returns its manifest
// entry {"hash", "path"}.
Json materialize_one(const CasStore& store, const ContentHash& hash,
                     const fs::path& file) {
  write_file(file, payload_of(store.get(hash)));
  return Json{{"hash", hash.hex}, {"path", file.string()}};
}

Json hash_map_to_json(const std::map<std::string, ContentHash>& m) {
  Json out = Json::object();
  for (const auto& [name, hash] : m) out[name] = hash.hex;
  return out;
}

std::map<std::string, ContentHash> hash_map_from_json(const Json& doc) {
  std::map<std::string, ContentHash> out;
  for (const auto& [name, hex] : doc.items())
    out[name] = ContentHash{hex.get<std::string>()};
  return out;
}

}  // namespace

Json context_to_json(const TaskContext& ctx) {
  Json inputs = Json::array();
  for (const auto& binding : ctx.inputs) {
    Json entry{{"parent_task", binding.parent_task},
               {"artifacts", hash_map_to_json(binding.artifacts)}};
    if (binding.foreach_item)
      entry["foreach_item"] = binding.foreach_item->hex;
    inputs.push_back(std::move(entry));
  }
  const DecoratorSet& d = ctx.decorators;
  return Json{
      {"task", ctx.task.to_string()},
      {"command", ctx.command},
      {"attempt", ctx.attempt},
      {"decorators",
       Json{{"cpu", d.resources.cpu},
            {"memory_mb", d.resources.memory_mb},
            {"gpu", d.resources.gpu},
            {"environment", Json(d.environment)},
            {"max_attempts", d.max_attempts},
            {"remote", d.remote},
            {"card", d.card}}},
      {"inputs", std::move(inputs)},
      {"auto", hash_map_to_json(ctx.auto_artifacts)},
      {"parameters", hash_map_to_json(ctx.parameters)},
  };
}

TaskContext context_from_json(const Json& doc) {
  try {
    TaskContext ctx;
    ctx.task = Pathspec::parse(doc.at("task").get<std::string>());
    ctx.command = doc.at("command").get<std::string>();
    ctx.attempt = doc.at("attempt").get<int64_t>();
    const Json& d = doc.at("decorators");
    ctx.decorators.resources.cpu = d.at("cpu").get<int64_t>();
    ctx.decorators.resources.memory_mb = d.at("memory_mb").get<int64_t>();
    ctx.decorators.resources.gpu = d.at("gpu").get<int64_t>();
    ctx.decorators.environment =
        d.at("environment").get<std::map<std::string, std::string>>();
    ctx.decorators.max_attempts = d.at("max_attempts").get<int>();
    ctx.decorators.remote = d.at("remote").get<bool>();
    ctx.decorators.card = d.at("card").get<bool>();
    for (const Json& entry : doc.at("inputs")) {
      InputBinding binding;
      binding.parent_task = entry.at("parent_task").get<int64_t>();
      binding.artifacts = hash_map_from_json(entry.at("artifacts"));
      if (entry.contains("foreach_item"))
        binding.foreach_item =
            ContentHash{entry.at("foreach_item").get<std::string>()};
      ctx.inputs.push_back(std::move(binding));
    }
    ctx.auto_artifacts = hash_map_from_json(doc.at("auto"));
    ctx.parameters = hash_map_from_json(doc.at("parameters"));
    return ctx;
  } catch (const Json::exception& e) {
    raise(Errc::SchemaError, std::string("malformed task context: ") + e.what());
  }
}

MaterializedTask materialize_task_inputs(const CasStore& store,
                                         const TaskContext& ctx,
                                         const fs::path& work_dir) {
  const fs::path base = fs::absolute(work_dir);
  fs::create_directories(base / "inputs");
  fs::create_directories(base / "out");

  Json inputs = Json::array();
  for (const auto& binding : ctx.inputs) {
    fs::path dir = base / "inputs" / std::to_string(binding.parent_task);
    fs::create_directories(dir);
    Json artifacts = Json::object();
    for (const auto& [name, hash] : binding.artifacts)
      artifacts[name] = materialize_one(store, hash, dir / name);
    Json entry{{"parent_task", binding.parent_task},
               {"artifacts", std::move(artifacts)}};
    if (binding.foreach_item)
      entry["foreach_item"] =
          materialize_one(store, *binding.foreach_item, dir / ".foreach");
    inputs.push_back(std::move(entry));
  }

  fs::create_directories(base / "inputs" / "auto");
  Json auto_obj = Json::object();
  for (const auto& [name, hash] : ctx.auto_artifacts)
    auto_obj[name] = materialize_one(store, hash, base / "inputs" / "auto" / name);

  fs::create_directories(base / "inputs" / "params");
  Json params = Json::object();
  for (const auto& [name, hash] : ctx.parameters)
    params[name] = materialize_one(store, hash, base / "inputs" / "params" / name);

  Json manifest{{"inputs", std::move(inputs)},
                {"auto", std::move(auto_obj)},
                {"parameters", std::move(params)}};
  MaterializedTask result{base / "manifest.json", base / "out"};
  write_file(result.manifest, canonical_json(manifest) + "\n");
  return result;
}

std::map<std::string, std::string> protocol_env(const TaskContext& ctx,
                                                const fs::path& manifest,
                                                const fs::path& out_dir) {
  std::map<std::string, std::string> env = ctx.decorators.environment;
  env["FLOWMILL_FLOW"] = ctx.task.flow;
  env["FLOWMILL_RUN_ID"] = std::to_string(ctx.task.run_id);
  env["FLOWMILL_STEP"] = ctx.task.step;
  env["FLOWMILL_TASK_ID"] = std::to_string(ctx.task.task_id);
  env["FLOWMILL_ATTEMPT"] = std::to_string(ctx.attempt);
  env["FLOWMILL_INPUT_MANIFEST"] = fs::absolute(manifest).string();
  env["FLOWMILL_OUTPUT_DIR"] = fs::absolute(out_dir).string();
  return env;
}

std::map<std::string, ArtifactValue> collect_outputs(const fs::path& out_dir) {
  if (!fs::is_directory(out_dir))
    raise(Errc::ProtocolViolation, "staging directory missing: " + out_dir.string());

  std::map<std::string, ArtifactValue> outputs;
  for (const auto& entry : fs::directory_iterator(out_dir)) {
    const std::string fname = entry.path().filename().string();
    if (!entry.is_regular_file())
      raise(Errc::ProtocolViolation, "staged entry is not a regular file: " + fname);

    const auto dot = fname.rfind('.');
    const std::string suffix = dot == std::string::npos ? "" : fname.substr(dot);
    const std::string name = fname.substr(0, dot);
    if (suffix != ".json" && suffix != ".bin")
      raise(Errc::ProtocolViolation, "staged file is neither .json nor .bin: " + fname);
    if (!name.empty() && name[0] == '_')
      raise(Errc::ProtocolViolation, "artifact name '" + name + "' is reserved for the engine");
    if (!valid_identifier(name))
      raise(Errc::ProtocolViolation, "invalid artifact name: '" + name + "'");
    if (outputs.count(name))
      raise(Errc::ProtocolViolation, "artifact '" + name + "' staged as both .json and .bin");

    const std::string content = read_file(entry.path());
    ArtifactValue value;
    if (suffix == ".json") {
      try {
        value = ArtifactValue::from_json(strict_parse_json(content));
        canonical_encode(value);  // unrepresentable values (e.g. overflow to
                                  // infinity) must fail here, not at persist
      } catch (const Error& e) {
        raise(Errc::ProtocolViolation,
              "staged file " + fname + " is not canonicalizable JSON: " + e.what());
      }
    } else {
      value = ArtifactValue::from_bytes(content);
    }
    outputs.emplace(name, std::move(value));
  }
  return outputs;
}

}  // namespace flowmill
