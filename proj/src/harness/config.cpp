#include "safeadapt/harness/config.hpp"

#include <fstream>
#include <set>

namespace safeadapt::harness {

using nlohmann::json;

namespace {

// Reads known keys of one object and rejects the rest.
class Reader {
 public:
  Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw std::invalid_argument("config: '" + path_ + "' must be an object");
  }
  template <class T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception& e) {
      throw std::invalid_argument("config: bad value for '" + where(key) + "': " + e.what());
    }
  }
  const json* child(const char* key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }
  std::string where(const char* key) const { return path_.empty() ? key : path_ + "." + key; }
  void finish() const {
    for (const auto& [k, v] : j_.items())
      if (!seen_.count(k)) throw std::invalid_argument("config: unknown key '" + where(k.c_str()) + "'");
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

}  // namespace

json to_json(const RunConfig& c) {
  return {
      {"env", c.env},
      {"seed", c.seed},
      {"horizon", c.horizon},
      {"model",
       {{"prior_hidden", c.model.prior_hidden},
        {"prior_variant", dyn::to_string(c.model.prior_variant)},
        {"anp_hidden", c.model.anp_hidden},
        {"latent", c.model.latent},
        {"deterministic", c.model.deterministic}}},
      {"pretrain",
       {{"episodes", c.pretrain.episodes},
        {"random_episodes", c.pretrain.random_episodes},
        {"train_steps", c.pretrain.train_steps},
        {"batch_size", c.pretrain.batch_size},
        {"learning_rate", c.pretrain.learning_rate},
        {"max_divergences", c.pretrain.max_divergences}}},
      {"adapt",
       {{"episodes", c.adapt.episodes},
        {"train_steps", c.adapt.train_steps},
        {"tasks_per_batch", c.adapt.tasks_per_batch},
        {"max_context", c.adapt.max_context},
        {"n_target", c.adapt.n_target},
        {"learning_rate", c.adapt.learning_rate},
        {"buffer_capacity", c.adapt.buffer_capacity}}},
      {"planner", plan::to_json(c.planner)},
      {"ablation",
       {{"prior_constraint", c.ablation.prior_constraint},
        {"context", c.ablation.context},
        {"prioritized", c.ablation.prioritized},
        {"pretrain", c.ablation.pretrain}}},
      {"grid",
       {{"axes", c.grid.axes}, {"size", c.grid.size}, {"episodes_per_cell", c.grid.episodes_per_cell}}},
      {"checkpoints", {{"pretrain", c.checkpoints.pretrain}, {"adapt", c.checkpoints.adapt}}},
      {"eval_buffer", c.eval_buffer},
      {"planner_diagnostics", c.planner_diagnostics},
  };
}

RunConfig run_config_from_json(const json& j) {
  RunConfig c;
  Reader top(j, "");
  top.get("env", c.env);
  top.get("seed", c.seed);
  top.get("horizon", c.horizon);
  top.get("eval_buffer", c.eval_buffer);
  top.get("planner_diagnostics", c.planner_diagnostics);
  if (const json* m = top.child("model")) {
    Reader r(*m, "model");
    r.get("prior_hidden", c.model.prior_hidden);
    std::string variant(dyn::to_string(c.model.prior_variant));
    r.get("prior_variant", variant);
    c.model.prior_variant = dyn::parse_prior_variant(variant);
    r.get("anp_hidden", c.model.anp_hidden);
    r.get("latent", c.model.latent);
    r.get("deterministic", c.model.deterministic);
    r.finish();
  }
  if (const json* p = top.child("pretrain")) {
    Reader r(*p, "pretrain");
    r.get("episodes", c.pretrain.episodes);
    r.get("random_episodes", c.pretrain.random_episodes);
    r.get("train_steps", c.pretrain.train_steps);
    r.get("batch_size", c.pretrain.batch_size);
    r.get("learning_rate", c.pretrain.learning_rate);
    r.get("max_divergences", c.pretrain.max_divergences);
    r.finish();
  }
  if (const json* a = top.child("adapt")) {
    Reader r(*a, "adapt");
    r.get("episodes", c.adapt.episodes);
    r.get("train_steps", c.adapt.train_steps);
    r.get("tasks_per_batch", c.adapt.tasks_per_batch);
    r.get("max_context", c.adapt.max_context);
    r.get("n_target", c.adapt.n_target);
    r.get("learning_rate", c.adapt.learning_rate);
    r.get("buffer_capacity", c.adapt.buffer_capacity);
    r.finish();
  }
  if (const json* p = top.child("planner")) c.planner = plan::plan_config_from_json(*p);
  if (const json* a = top.child("ablation")) {
    Reader r(*a, "ablation");
    r.get("prior_constraint", c.ablation.prior_constraint);
    r.get("context", c.ablation.context);
    r.get("prioritized", c.ablation.prioritized);
    r.get("pretrain", c.ablation.pretrain);
    r.finish();
  }
  if (const json* g = top.child("grid")) {
    Reader r(*g, "grid");
    r.get("axes", c.grid.axes);
    r.get("size", c.grid.size);
    r.get("episodes_per_cell", c.grid.episodes_per_cell);
    r.finish();
  }
  if (const json* k = top.child("checkpoints")) {
    Reader r(*k, "checkpoints");
    r.get("pretrain", c.checkpoints.pretrain);
    r.get("adapt", c.checkpoints.adapt);
    r.finish();
  }
  top.finish();
  return c;
}

void apply_override(json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0)
    throw std::invalid_argument("override '" + assignment + "' is not of the form key=value");
  const std::string path = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const auto dot = path.find('.', start);
    const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (key.empty()) throw std::invalid_argument("override '" + assignment + "' has an empty path segment");
    if (!node->is_object()) throw std::invalid_argument("override '" + path + "' descends into a non-object");
    if (dot == std::string::npos) {
      (*node)[key] = value;
      return;
    }
    node = &(*node)[key];
    if (node->is_null()) *node = json::object();
    start = dot + 1;
  }
}

void validate(const RunConfig& c) {
  auto fail = [](const std::string& m) { throw std::invalid_argument("config: " + m); };
  env::parse_env_id(c.env);
  if (c.horizon < 0) fail("horizon must be >= 0");
  if (c.model.prior_hidden.empty() || c.model.anp_hidden.empty()) fail("hidden sizes must be nonempty");
  if (c.model.latent < 1 || c.model.deterministic < 1) fail("latent and deterministic sizes must be >= 1");
  if (c.pretrain.episodes < 1) fail("pretrain.episodes must be >= 1");
  if (c.pretrain.random_episodes < 0) fail("pretrain.random_episodes must be >= 0");
  if (c.pretrain.train_steps < 0) fail("pretrain.train_steps must be >= 0");
  if (c.pretrain.batch_size < 1) fail("pretrain.batch_size must be >= 1");
  if (c.adapt.episodes < 0) fail("adapt.episodes must be >= 0");
  if (c.adapt.train_steps < 0) fail("adapt.train_steps must be >= 0");
  if (c.adapt.tasks_per_batch < 1) fail("adapt.tasks_per_batch must be >= 1");
  if (c.adapt.max_context < 1 || c.adapt.n_target < 1) fail("adapt.max_context and adapt.n_target must be >= 1");
  if (c.adapt.buffer_capacity < 1) fail("adapt.buffer_capacity must be >= 1");
  if (c.grid.size < 1 || c.grid.episodes_per_cell < 1) fail("grid.size and grid.episodes_per_cell must be >= 1");
  const auto e = env::make_environment(env::parse_env_id(c.env));
  const auto axes = grid_axes(c, *e);
  if (axes.size() != 2 || axes[0] == axes[1]) fail("grid.axes must name two distinct parameters");
  const auto names = e->param_names();
  for (const auto& a : axes)
    if (std::find(names.begin(), names.end(), a) == names.end()) fail("grid axis '" + a + "' is not a parameter of " + c.env);
  c.planner.validate(e->max_abs_reward());
}

std::vector<std::string> grid_axes(const RunConfig& c, const env::Environment& e) {
  if (!c.grid.axes.empty()) return c.grid.axes;
  const auto names = e.param_names();
  return {names.begin(), names.begin() + std::min<std::size_t>(2, names.size())};
}

RunConfig resolve_config(const std::optional<std::filesystem::path>& file, const std::vector<std::string>& overrides) {
  json doc = to_json(RunConfig{});
  if (file) {
    std::ifstream in(*file);
    if (!in) throw std::invalid_argument("cannot read config " + file->string());
    json user;
    try {
      user = json::parse(in);
    } catch (const json::parse_error& e) {
      throw std::invalid_argument("config " + file->string() + " is not valid JSON: " + e.what());
    }
    doc.merge_patch(user);
  }
  for (const auto& o : overrides) apply_override(doc, o);
  RunConfig c = run_config_from_json(doc);
  validate(c);
  return c;
}

}  // namespace safeadapt::harness
