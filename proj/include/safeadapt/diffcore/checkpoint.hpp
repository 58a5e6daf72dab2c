#pragma once

#include "safeadapt/diffcore/params.hpp"

#include <json.hpp>

#include <filesystem>

namespace safeadapt::diff {

inline constexpr int kCheckpointFormatVersion = 1;

struct Checkpoint {
  ParameterSet parameters;
  nlohmann::json metadata = nlohmann::json::object();
};

/// {format_version, parameters: {name: {shape, values}}, metadata}. Doubles are written in
/// shortest round-trip form, so a load reproduces every value bit-exactly.
nlohmann::json checkpoint_to_json(const ParameterSet& params, const nlohmann::json& metadata = nlohmann::json::object());
Checkpoint checkpoint_from_json(const nlohmann::json& doc);

void save_checkpoint(const std::filesystem::path& path, const ParameterSet& params,
                     const nlohmann::json& metadata = nlohmann::json::object());
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Copies values by name into `target`; every target parameter must be present with the same shape.
void assign_by_name(ParameterSet& target, const ParameterSet& source);

}  // namespace safeadapt::diff
