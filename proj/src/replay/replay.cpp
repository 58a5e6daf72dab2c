#include "safeadapt/replay/replay.hpp"

#include "safeadapt/csv.hpp"

#include <json.hpp>

#include <algorithm>
#include <fstream>
#include <numeric>

namespace safeadapt::replay {

namespace {

// Moves m uniformly chosen elements of `pool` to its front, in draw order.
void partial_shuffle(std::vector<std::size_t>& pool, std::size_t m, Rng& rng) {
  m = std::min(m, pool.size());
  for (std::size_t i = 0; i < m; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
    std::swap(pool[i], pool[pick(rng)]);
  }
}

std::vector<std::string> header(std::size_t ds, std::size_t da, std::size_t dy) {
  std::vector<std::string> h;
  for (std::size_t i = 0; i < ds; ++i) h.push_back("s" + std::to_string(i));
  for (std::size_t i = 0; i < da; ++i) h.push_back("a" + std::to_string(i));
  for (std::size_t i = 0; i < dy; ++i) h.push_back("y" + std::to_string(i));
  for (std::size_t i = 0; i < ds; ++i) h.push_back("next_s" + std::to_string(i));
  h.push_back("state_violation");
  h.push_back("action_violation");
  return h;
}

void append(std::vector<std::string>& out, const Vector& v) {
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(format_double(v[i]));
}

Vector take(const std::vector<std::string>& f, std::size_t& pos, std::size_t n) {
  Vector v(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) v[static_cast<Eigen::Index>(i)] = std::stod(f.at(pos++));
  return v;
}

}  // namespace

std::size_t EpisodeRecord::unsafe_count() const {
  return static_cast<std::size_t>(std::count_if(transitions.begin(), transitions.end(),
                                                [](const Transition& t) { return t.unsafe(); }));
}

void sample_rows(const EpisodeRecord& episode, const SampleSpec& spec, Rng& rng, std::vector<std::size_t>& context,
                 std::vector<std::size_t>& target) {
  const std::size_t len = episode.size();
  if (spec.n_target < 1) throw std::invalid_argument("sample_rows: n_T must be at least 1");
  if (spec.n_context + spec.n_target > len) {
    throw std::invalid_argument("sample_rows: episode " + std::to_string(episode.id) + " has " + std::to_string(len) +
                                " transitions, fewer than n_C + n_T = " +
                                std::to_string(spec.n_context + spec.n_target));
  }
  context.clear();
  target.clear();

  std::vector<std::size_t> unsafe, safe;
  for (std::size_t i = 0; i < len; ++i) (spec.prioritized && episode.transitions[i].unsafe() ? unsafe : safe).push_back(i);

  const std::size_t k = std::min(unsafe.size(), spec.n_target);
  partial_shuffle(unsafe, k, rng);
  target.assign(unsafe.begin(), unsafe.begin() + static_cast<std::ptrdiff_t>(k));

  const std::size_t t_rest = spec.n_target - k;
  partial_shuffle(safe, t_rest + spec.n_context, rng);
  std::size_t pos = 0;
  for (; pos < t_rest; ++pos) target.push_back(safe[pos]);
  for (; pos < safe.size() && context.size() < spec.n_context; ++pos) context.push_back(safe[pos]);
  // Safe rows exhausted: unused unsafe rows first, then the unsafe targets themselves.
  for (std::size_t i = k; i < unsafe.size() && context.size() < spec.n_context; ++i) context.push_back(unsafe[i]);
  for (std::size_t i = 0; i < k && context.size() < spec.n_context; ++i) context.push_back(unsafe[i]);
}

anp::Task make_task(const EpisodeRecord& episode, const std::vector<std::size_t>& context,
                    const std::vector<std::size_t>& target) {
  if (episode.transitions.empty()) throw std::invalid_argument("make_task: empty episode");
  const auto& t0 = episode.transitions.front();
  const Eigen::Index ds = t0.state.size(), da = t0.action.size(), dy = t0.residual.size();
  auto fill = [&](const std::vector<std::size_t>& rows, Matrix& x, Matrix& y) {
    x.resize(static_cast<Eigen::Index>(rows.size()), ds + da);
    y.resize(static_cast<Eigen::Index>(rows.size()), dy);
    for (std::size_t r = 0; r < rows.size(); ++r) {
      const auto& t = episode.transitions.at(rows[r]);
      const auto i = static_cast<Eigen::Index>(r);
      x.row(i).head(ds) = t.state.transpose();
      x.row(i).tail(da) = t.action.transpose();
      y.row(i) = t.residual.transpose();
    }
  };
  anp::Task task;
  fill(context, task.context.x, task.context.y);
  Matrix ty;
  fill(target, task.target.x, ty);
  task.target.y = std::move(ty);
  return task;
}

ReplayBuffer::ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
  if (capacity_ == 0) throw std::invalid_argument("ReplayBuffer: capacity must be positive");
}

void ReplayBuffer::add_episode(EpisodeRecord record) {
  if (record.transitions.empty()) throw std::invalid_argument("add_episode: empty episode");
  episodes_.push_back(std::move(record));
  while (episodes_.size() > capacity_) episodes_.pop_front();
}

SampledTask ReplayBuffer::sample_task(const SampleSpec& spec, Rng& rng) const {
  if (episodes_.empty()) throw std::invalid_argument("sample_task: buffer is empty");
  std::uniform_int_distribution<std::size_t> pick(0, episodes_.size() - 1);
  const EpisodeRecord& ep = episodes_[pick(rng)];
  SampledTask s;
  s.episode_id = ep.id;
  sample_rows(ep, spec, rng, s.context_rows, s.target_rows);
  s.task = make_task(ep, s.context_rows, s.target_rows);
  return s;
}

SampledTask ReplayBuffer::sample_training_task(std::size_t max_context, std::size_t n_target, bool prioritized,
                                               Rng& rng) const {
  if (episodes_.empty()) throw std::invalid_argument("sample_training_task: buffer is empty");
  std::uniform_int_distribution<std::size_t> pick(0, episodes_.size() - 1);
  const EpisodeRecord& ep = episodes_[pick(rng)];
  std::uniform_int_distribution<std::size_t> n_c(1, std::max<std::size_t>(max_context, 1));
  SampleSpec spec;
  spec.prioritized = prioritized;
  const std::size_t drawn = n_c(rng);
  // Short episodes (early termination) keep at least one target and at most half the rows as context.
  spec.n_target = std::max<std::size_t>(1, std::min(n_target, ep.size() - ep.size() / 2));
  spec.n_context = std::min(drawn, ep.size() - spec.n_target);
  SampledTask s;
  s.episode_id = ep.id;
  sample_rows(ep, spec, rng, s.context_rows, s.target_rows);
  s.task = make_task(ep, s.context_rows, s.target_rows);
  return s;
}

void ReplayBuffer::save(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  nlohmann::json manifest{{"capacity", capacity_}, {"episodes", nlohmann::json::array()}};
  for (const auto& ep : episodes_) {
    const auto& t0 = ep.transitions.front();
    const auto ds = static_cast<std::size_t>(t0.state.size()), da = static_cast<std::size_t>(t0.action.size()),
               dy = static_cast<std::size_t>(t0.residual.size());
    const std::string file = "episode_" + std::to_string(ep.id) + ".csv";
    std::ofstream out(dir / file);
    if (!out) throw std::runtime_error("cannot write " + (dir / file).string());
    out << join_csv(header(ds, da, dy)) << '\n';
    for (const auto& t : ep.transitions) {
      std::vector<std::string> f;
      append(f, t.state);
      append(f, t.action);
      append(f, t.residual);
      append(f, t.next_state);
      f.push_back(t.state_violation ? "1" : "0");
      f.push_back(t.action_violation ? "1" : "0");
      out << join_csv(f) << '\n';
    }
    manifest["episodes"].push_back(
        {{"id", ep.id}, {"file", file}, {"rows", ep.size()}, {"state_dim", ds}, {"action_dim", da}, {"residual_dim", dy}});
  }
  std::ofstream(dir / "manifest.json") << manifest.dump(2) << '\n';
}

ReplayBuffer ReplayBuffer::load(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw std::runtime_error("cannot read " + (dir / "manifest.json").string());
  const auto manifest = nlohmann::json::parse(in);
  ReplayBuffer buf(manifest.at("capacity").get<std::size_t>());
  for (const auto& e : manifest.at("episodes")) {
    EpisodeRecord ep;
    ep.id = e.at("id").get<std::int64_t>();
    const auto ds = e.at("state_dim").get<std::size_t>(), da = e.at("action_dim").get<std::size_t>(),
               dy = e.at("residual_dim").get<std::size_t>();
    std::ifstream csv(dir / e.at("file").get<std::string>());
    std::string line;
    std::getline(csv, line);
    while (std::getline(csv, line)) {
      if (line.empty()) continue;
      const auto f = split_csv_line(line);
      std::size_t pos = 0;
      Transition t;
      t.state = take(f, pos, ds);
      t.action = take(f, pos, da);
      t.residual = take(f, pos, dy);
      t.next_state = take(f, pos, ds);
      t.state_violation = f.at(pos++) == "1";
      t.action_violation = f.at(pos++) == "1";
      ep.transitions.push_back(std::move(t));
    }
    if (ep.size() != e.at("rows").get<std::size_t>())
      throw std::runtime_error("replay episode " + std::to_string(ep.id) + " row count does not match manifest");
    buf.add_episode(std::move(ep));
  }
  return buf;
}

}  // namespace safeadapt::replay
