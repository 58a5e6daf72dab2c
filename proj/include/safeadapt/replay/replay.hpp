#pragma once

#include "safeadapt/anp/anp.hpp"

#include <deque>
#include <filesystem>
#include <vector>

namespace safeadapt::replay {

struct Transition {
  Vector state;
  Vector action;
  Vector residual;
  Vector next_state;
  bool state_violation = false;
  bool action_violation = false;

  bool unsafe() const { return state_violation || action_violation; }
  friend bool operator==(const Transition&, const Transition&) = default;
};

/// Transitions of one episode, i.e. one disturbance realization.
struct EpisodeRecord {
  std::int64_t id = 0;
  std::vector<Transition> transitions;

  std::size_t size() const { return transitions.size(); }
  std::size_t unsafe_count() const;
  friend bool operator==(const EpisodeRecord&, const EpisodeRecord&) = default;
};

struct SampleSpec {
  std::size_t n_context = 0;
  std::size_t n_target = 1;
  bool prioritized = true;
};

/// A sampled task plus the row indices it was built from.
struct SampledTask {
  anp::Task task;
  std::int64_t episode_id = 0;
  std::vector<std::size_t> context_rows;
  std::vector<std::size_t> target_rows;
};

/// Draws row indices of `episode` for one task. Prioritized: unsafe rows go to the target set first (a
/// random subset if there are more than n_T), then shuffled safe rows fill the remaining target slots and
/// the context; leftover unsafe rows are used for the context only once safe rows run out. With no unsafe
/// rows both modes consume the generator identically and return the same draw.
void sample_rows(const EpisodeRecord& episode, const SampleSpec& spec, Rng& rng, std::vector<std::size_t>& context,
                 std::vector<std::size_t>& target);

/// Builds a task from chosen rows; x = [s, a], y = residual.
anp::Task make_task(const EpisodeRecord& episode, const std::vector<std::size_t>& context,
                    const std::vector<std::size_t>& target);

/// FIFO store of whole episodes; the oldest is evicted beyond capacity.
class ReplayBuffer {
 public:
  static constexpr std::size_t kDefaultCapacity = 500;

  explicit ReplayBuffer(std::size_t capacity = kDefaultCapacity);

  void add_episode(EpisodeRecord record);
  std::size_t size() const { return episodes_.size(); }
  std::size_t capacity() const { return capacity_; }
  bool empty() const { return episodes_.empty(); }
  const EpisodeRecord& at(std::size_t i) const { return episodes_.at(i); }
  const std::deque<EpisodeRecord>& episodes() const { return episodes_; }

  /// Picks an episode uniformly and samples from it; throws if it is shorter than n_C + n_T.
  SampledTask sample_task(const SampleSpec& spec, Rng& rng) const;

  /// Training draw: n_C ~ U[1, max_context] and n_T = n_target, both reduced to fit the chosen episode.
  SampledTask sample_training_task(std::size_t max_context, std::size_t n_target, bool prioritized, Rng& rng) const;

  /// One CSV per episode plus manifest.json in `dir`.
  void save(const std::filesystem::path& dir) const;
  static ReplayBuffer load(const std::filesystem::path& dir);

 private:
  std::size_t capacity_;
  std::deque<EpisodeRecord> episodes_;
};

}  // namespace safeadapt::replay
