#include "safeadapt/diffcore/checkpoint.hpp"

#include <fstream>

namespace safeadapt::diff {

using nlohmann::json;

json checkpoint_to_json(const ParameterSet& params, const json& metadata) {
  json doc;
  doc["format_version"] = kCheckpointFormatVersion;
  json& p = doc["parameters"] = json::object();
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Tensor& t = params[i];
    p[params.name(i)] = {{"shape", t.shape()},
                         {"values", std::vector<double>(t.values().begin(), t.values().end())}};
  }
  doc["metadata"] = metadata;
  return doc;
}

Checkpoint checkpoint_from_json(const json& doc) {
  if (!doc.contains("format_version") || doc.at("format_version").get<int>() != kCheckpointFormatVersion)
    throw std::runtime_error("checkpoint: unsupported or missing format_version");
  Checkpoint ck;
  for (const auto& [name, entry] : doc.at("parameters").items()) {
    ck.parameters.add(name, Tensor(entry.at("shape").get<Shape>(), entry.at("values").get<std::vector<double>>()));
  }
  if (doc.contains("metadata")) ck.metadata = doc.at("metadata");
  return ck;
}

void save_checkpoint(const std::filesystem::path& path, const ParameterSet& params, const json& metadata) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
  out << checkpoint_to_json(params, metadata).dump() << '\n';
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read checkpoint " + path.string());
  return checkpoint_from_json(json::parse(in));
}

void assign_by_name(ParameterSet& target, const ParameterSet& source) {
  for (std::size_t i = 0; i < target.size(); ++i) {
    const Tensor& src = source[source.index_of(target.name(i))];
    if (src.shape() != target[i].shape())
      throw ShapeError("checkpoint parameter " + target.name(i) + " has shape " + to_string(src.shape()) +
                       ", model expects " + to_string(target[i].shape()));
    target[i] = src;
  }
}

}  // namespace safeadapt::diff
