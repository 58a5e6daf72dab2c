#include "safeadapt/harness/config.hpp"
#include "safeadapt/harness/pipeline.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <functional>
#include <iostream>
#include <map>
#include <optional>

namespace {

using safeadapt::harness::RunConfig;
using Runner = std::function<void(const RunConfig&, const std::filesystem::path&)>;

int fail(const std::string& kind, const std::string& message) {
  std::cerr << nlohmann::json{{"error", kind}, {"message", message}}.dump() << '\n';
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  namespace h = safeadapt::harness;
  CLI::App app{"safe model-based adaptation experiments"};
  app.require_subcommand(1);

  std::string config_path, out, env;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> overrides;
  const std::map<std::string, Runner> modes{{"pretrain", h::run_pretrain},
                                            {"adapt", h::run_adapt},
                                            {"eval-grid", h::run_eval_grid},
                                            {"ablate", h::run_ablate},
                                            {"mse-report", h::run_mse_report}};
  for (const auto& [name, _] : modes) {
    auto* sub = app.add_subcommand(name);
    sub->add_option("--config", config_path, "JSON run config")->check(CLI::ExistingFile);
    sub->add_option("--seed", seed, "master seed");
    sub->add_option("--out", out, "output directory")->required();
    sub->add_option("--env", env, "environment")->check(CLI::IsMember({"cartpole", "planarfeed"}));
    sub->add_option("--override", overrides, "dot-path assignment key=value")->take_all();
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail("usage", e.what());
  }

  try {
    if (seed) overrides.push_back("seed=" + std::to_string(*seed));
    if (!env.empty()) overrides.push_back("env=\"" + env + "\"");
    const RunConfig config = h::resolve_config(
        config_path.empty() ? std::nullopt : std::optional<std::filesystem::path>(config_path), overrides);
    const std::string mode = app.get_subcommands().front()->get_name();
    modes.at(mode)(config, out);
    std::cout << nlohmann::json{{"status", "ok"}, {"mode", mode}, {"out", out}}.dump() << '\n';
    return 0;
  } catch (const std::invalid_argument& e) {
    return fail("invalid_config", e.what());
  } catch (const std::exception& e) {
    return fail("runtime", e.what());
  }
}
