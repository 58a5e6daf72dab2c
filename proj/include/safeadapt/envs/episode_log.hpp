#pragma once

#include "safeadapt/envs/env.hpp"

#include <filesystem>
#include <fstream>

namespace safeadapt::env {

/// One CSV row per executed step:
/// episode,t,<state...>,<action...>,reward,state_violation,action_violation,<params...>
class EpisodeLogWriter {
 public:
  EpisodeLogWriter(const std::filesystem::path& path, const Environment& env);

  void write(int episode, int t, const Vector& state, const Vector& action, const StepResult& result,
             const EnvParams& params);

 private:
  std::ofstream out_;
};

std::vector<std::string> episode_log_header(const Environment& env);

}  // namespace safeadapt::env
