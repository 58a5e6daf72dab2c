#include "safeadapt/envs/episode_log.hpp"

#include "safeadapt/csv.hpp"

namespace safeadapt::env {

std::vector<std::string> episode_log_header(const Environment& env) {
  std::vector<std::string> h{"episode", "t"};
  for (const auto& n : env.state_names()) h.push_back(n);
  for (Eigen::Index i = 0; i < env.action_dim(); ++i) h.push_back("action_" + std::to_string(i));
  h.insert(h.end(), {"reward", "state_violation", "action_violation"});
  for (const auto& n : env.param_names()) h.push_back(n);
  return h;
}

EpisodeLogWriter::EpisodeLogWriter(const std::filesystem::path& path, const Environment& env) : out_(path) {
  if (!out_) throw std::runtime_error("cannot write episode log " + path.string());
  out_ << join_csv(episode_log_header(env)) << '\n';
}

void EpisodeLogWriter::write(int episode, int t, const Vector& state, const Vector& action, const StepResult& result,
                             const EnvParams& params) {
  std::vector<std::string> f{std::to_string(episode), std::to_string(t)};
  for (double v : state) f.push_back(format_double(v));
  for (double v : action) f.push_back(format_double(v));
  f.push_back(format_double(result.reward));
  f.push_back(result.state_violation ? "1" : "0");
  f.push_back(result.action_violation ? "1" : "0");
  for (double v : params.values) f.push_back(format_double(v));
  out_ << join_csv(f) << '\n';
}

}  // namespace safeadapt::env
