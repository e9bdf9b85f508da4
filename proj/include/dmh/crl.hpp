/*
 * Copyright 2026 The dmh-bench Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <deque>
#include <fstream>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "dmh/engine.hpp"
#include "dmh/neural.hpp"
#include "dmh/util.hpp"

namespace dmh::crl {

using nn::Matrix;
using nn::Mlp;
using nn::Vector;

/// Logit written over invalid actions before the softmax.
inline constexpr double kMaskedLogit = -1e8;

// ---------------------------------------------------------------------------
// Invalid action masking

/// Softmax of `logits` with invalid entries pushed to kMaskedLogit.
inline std::vector<double> mask_logits(std::span<const double> logits, std::span<const std::uint8_t> valid) {
  if (logits.size() != valid.size()) throw PreconditionError("mask_logits: logits and mask differ in length");
  if (std::none_of(valid.begin(), valid.end(), [](std::uint8_t v) { return v != 0; }))
    throw PreconditionError("mask_logits: no valid action");
  std::vector<double> out(logits.size());
  double hi = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = valid[i] ? logits[i] : kMaskedLogit;
    hi = std::max(hi, out[i]);
  }
  double z = 0.0;
  for (double& v : out) {
    v = std::exp(v - hi);
    z += v;
  }
  for (double& v : out) v /= z;
  return out;
}

/// Column-wise masked softmax and log-probabilities (actions x batch).
struct MaskedDistribution {
  Matrix prob;
  Matrix logp;
};

inline MaskedDistribution masked_softmax(const Matrix& logits, const Matrix& mask) {
  MaskedDistribution d;
  Matrix masked = (mask.array() > 0.5).select(logits, kMaskedLogit);
  const Eigen::RowVectorXd hi = masked.colwise().maxCoeff();
  Matrix shifted = masked.rowwise() - hi;
  Matrix e = shifted.array().exp();
  const Eigen::RowVectorXd z = e.colwise().sum();
  d.prob = e.array().rowwise() / z.array();
  d.logp = shifted.array().rowwise() - z.array().log();
  return d;
}

inline std::size_t draw(std::span<const double> prob, Rng& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double x = u(rng);
  double acc = 0.0;
  std::size_t last = 0;
  for (std::size_t i = 0; i < prob.size(); ++i) {
    if (prob[i] <= 0.0) continue;
    last = i;
    acc += prob[i];
    if (x < acc) return i;
  }
  return last;
}

/// One draw from the masked policy; never returns an invalid index.
inline std::size_t sample_action(const Mlp& policy, std::span<const double> features, std::span<const std::uint8_t> mask,
                                 Rng& rng) {
  const Vector x = Eigen::Map<const Vector>(features.data(), static_cast<Eigen::Index>(features.size()));
  const Vector logits = nn::forward(policy, x);
  const auto prob = mask_logits(std::span<const double>(logits.data(), static_cast<std::size_t>(logits.size())), mask);
  return draw(prob, rng);
}

/// Most probable valid action, lowest index on ties.
inline std::size_t greedy_action(const Mlp& policy, std::span<const double> features,
                                 std::span<const std::uint8_t> mask) {
  const Vector x = Eigen::Map<const Vector>(features.data(), static_cast<Eigen::Index>(features.size()));
  const Vector logits = nn::forward(policy, x);
  std::size_t best = mask.size();
  for (std::size_t i = 0; i < mask.size(); ++i)
    if (mask[i] && (best == mask.size() || logits[static_cast<Eigen::Index>(i)] > logits[static_cast<Eigen::Index>(best)]))
      best = i;
  if (best == mask.size()) throw PreconditionError("greedy_action: no valid action");
  return best;
}

// ---------------------------------------------------------------------------
// Reward shaping and the Lagrange multiplier

inline double shape_reward(double r, double beta, double bias) {
  if (!(beta > 0.0)) throw PreconditionError("shape_reward: beta must be positive");
  return beta * r + bias;
}

struct LagrangeState {
  double lambda = 0.001;
  double eta = 1e-4;
  double epsilon = 50.0;
  std::size_t window = 10;
  std::deque<double> episode_costs;  // most recent episodic cost sums

  void record(double episodic_cost) {
    episode_costs.push_back(episodic_cost);
    while (episode_costs.size() > window) episode_costs.pop_front();
  }

  /// Mean episodic cost over the window; 0 before any episode finished.
  double estimate() const {
    if (episode_costs.empty()) return 0.0;
    return std::accumulate(episode_costs.begin(), episode_costs.end(), 0.0) / static_cast<double>(episode_costs.size());
  }
};

/// Projected ascent on the constraint violation: max(lambda + eta (J_C - eps), 0).
inline LagrangeState update_lambda(LagrangeState state, double cost_estimate) {
  if (!(cost_estimate >= 0.0)) throw PreconditionError("update_lambda: cost estimate must be >= 0");
  state.lambda = std::max(state.lambda + state.eta * (cost_estimate - state.epsilon), 0.0);
  return state;
}

// ---------------------------------------------------------------------------
// Replay

struct Transition {
  std::vector<double> state;
  std::vector<std::uint8_t> mask;  // valid actions at `state`
  std::size_t action = 0;          // flat rule * n + vehicle
  std::vector<double> next_state;
  std::vector<std::uint8_t> next_mask;
  double reward = 0.0;
  double cost = 0.0;
  bool terminal = false;
};

class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
    if (capacity == 0) throw PreconditionError("replay buffer capacity must be positive");
    items_.reserve(std::min<std::size_t>(capacity, 1 << 16));
  }

  void push(Transition t) {
    if (items_.size() < capacity_) {
      items_.push_back(std::move(t));
    } else {
      items_[inserted_ % capacity_] = std::move(t);
    }
    ++inserted_;
  }

  std::size_t size() const { return items_.size(); }
  std::size_t capacity() const { return capacity_; }
  std::uint64_t inserted() const { return inserted_; }
  const Transition& operator[](std::size_t i) const { return items_.at(i); }

  /// Uniform draw with replacement.
  std::vector<std::size_t> sample(std::size_t batch, Rng& rng) const {
    if (items_.empty()) throw PreconditionError("cannot sample an empty replay buffer");
    std::vector<std::size_t> idx(batch);
    for (auto& i : idx) i = uniform_index(rng, items_.size());
    return idx;
  }

 private:
  std::size_t capacity_;
  std::vector<Transition> items_;
  std::uint64_t inserted_ = 0;
};

/// Column-stacked minibatch.
struct Batch {
  Matrix states, next_states;  // features x B
  Matrix masks, next_masks;    // actions x B
  std::vector<std::size_t> actions;
  Vector rewards, costs;
  std::vector<bool> terminal;

  std::size_t size() const { return actions.size(); }
};

inline Batch make_batch(const ReplayBuffer& buffer, std::span<const std::size_t> idx) {
  Batch b;
  const auto B = static_cast<Eigen::Index>(idx.size());
  const auto D = static_cast<Eigen::Index>(buffer[idx[0]].state.size());
  const auto A = static_cast<Eigen::Index>(buffer[idx[0]].mask.size());
  b.states.resize(D, B);
  b.next_states.resize(D, B);
  b.masks.resize(A, B);
  b.next_masks.resize(A, B);
  b.rewards.resize(B);
  b.costs.resize(B);
  for (Eigen::Index j = 0; j < B; ++j) {
    const Transition& t = buffer[idx[static_cast<std::size_t>(j)]];
    b.states.col(j) = Eigen::Map<const Vector>(t.state.data(), D);
    b.next_states.col(j) = Eigen::Map<const Vector>(t.next_state.data(), D);
    for (Eigen::Index a = 0; a < A; ++a) {
      b.masks(a, j) = t.mask[static_cast<std::size_t>(a)];
      b.next_masks(a, j) = t.next_mask[static_cast<std::size_t>(a)];
    }
    b.actions.push_back(t.action);
    b.rewards[j] = t.reward;
    b.costs[j] = t.cost;
    b.terminal.push_back(t.terminal);
  }
  return b;
}

// ---------------------------------------------------------------------------
// Discrete soft actor-critic with twin critics

struct SacHyper {
  double gamma = 0.97;
  double alpha = 0.1;
  double tau = 0.005;
  // Expectation over the masked next-state distribution in the TD target;
  // false draws one next action per transition instead.
  bool exact_expectation = true;
};

class SacAgent {
 public:
  SacAgent() = default;

  SacAgent(std::size_t obs_dim, std::size_t action_dim, const std::vector<std::size_t>& hidden, Rng& rng,
           SacHyper hyper = {}, nn::AdamConfig actor_opt = {}, nn::AdamConfig critic_opt = {})
      : hyper_(hyper) {
    std::vector<std::size_t> dims{obs_dim};
    dims.insert(dims.end(), hidden.begin(), hidden.end());
    dims.push_back(action_dim);
    actor = Mlp::init(dims, rng);
    critic1 = Mlp::init(dims, rng);
    critic2 = Mlp::init(dims, rng);
    target1 = critic1;
    target2 = critic2;
    reset_optimizers(actor_opt, critic_opt);
  }

  void reset_optimizers(nn::AdamConfig actor_opt, nn::AdamConfig critic_opt) {
    actor_state = nn::AdamState::for_net(actor, actor_opt);
    critic1_state = nn::AdamState::for_net(critic1, critic_opt);
    critic2_state = nn::AdamState::for_net(critic2, critic_opt);
  }

  const SacHyper& hyper() const { return hyper_; }
  void set_hyper(const SacHyper& h) { hyper_ = h; }

  /// y = r - lambda c + gamma (1 - done) E_{a'~pi'}[min_j Qtarg_j(s',a') - alpha log pi'(a'|s')]
  Vector td_targets(const Batch& b, double lambda, Rng* rng = nullptr) const {
    const auto B = static_cast<Eigen::Index>(b.size());
    const Matrix q1 = nn::forward(target1, b.next_states);
    const Matrix q2 = nn::forward(target2, b.next_states);
    const MaskedDistribution pi = masked_softmax(nn::forward(actor, b.next_states), b.next_masks);
    Vector y(B);
    for (Eigen::Index j = 0; j < B; ++j) {
      double y_j = b.rewards[j] - lambda * b.costs[j];
      if (!b.terminal[static_cast<std::size_t>(j)]) {
        double soft_value = 0.0;
        if (hyper_.exact_expectation || rng == nullptr) {
          for (Eigen::Index a = 0; a < q1.rows(); ++a) {
            if (b.next_masks(a, j) < 0.5) continue;
            soft_value += pi.prob(a, j) * (std::min(q1(a, j), q2(a, j)) - hyper_.alpha * pi.logp(a, j));
          }
        } else {
          std::vector<double> p(pi.prob.col(j).data(), pi.prob.col(j).data() + pi.prob.rows());
          const auto a = static_cast<Eigen::Index>(draw(p, *rng));
          soft_value = std::min(q1(a, j), q2(a, j)) - hyper_.alpha * pi.logp(a, j);
        }
        y_j += hyper_.gamma * soft_value;
      }
      y[j] = y_j;
    }
    return y;
  }

  struct CriticLosses {
    double critic1 = 0.0;
    double critic2 = 0.0;
  };

  /// One Adam step per critic on 0.5 * mean (y - Q_j(s,a))^2.
  CriticLosses update_critics(const Batch& b, const Vector& y) {
    CriticLosses out;
    out.critic1 = critic_step(critic1, critic1_state, b, y);
    out.critic2 = critic_step(critic2, critic2_state, b, y);
    return out;
  }

  /// One Adam step on mean_s sum_a pi'(a|s) (alpha log pi'(a|s) - min_j Q_j(s,a)),
  /// i.e. maximising the soft value under the masked policy. Critics are constant.
  double update_actor(const Batch& b) {
    const auto B = static_cast<Eigen::Index>(b.size());
    const Matrix q1 = nn::forward(critic1, b.states);
    const Matrix q2 = nn::forward(critic2, b.states);
    nn::Tape tape;
    const Matrix logits = nn::forward(actor, b.states, &tape);
    const MaskedDistribution pi = masked_softmax(logits, b.masks);
    Matrix upstream = Matrix::Zero(logits.rows(), B);
    double loss = 0.0;
    for (Eigen::Index j = 0; j < B; ++j) {
      double mean_h = 0.0;
      for (Eigen::Index a = 0; a < logits.rows(); ++a) {
        if (b.masks(a, j) < 0.5) continue;
        const double h = hyper_.alpha * pi.logp(a, j) - std::min(q1(a, j), q2(a, j));
        mean_h += pi.prob(a, j) * h;
      }
      loss += mean_h;
      for (Eigen::Index a = 0; a < logits.rows(); ++a) {
        if (b.masks(a, j) < 0.5) continue;
        const double h = hyper_.alpha * pi.logp(a, j) - std::min(q1(a, j), q2(a, j));
        upstream(a, j) = pi.prob(a, j) * (h - mean_h) / static_cast<double>(B);
      }
    }
    nn::adam_step(actor, nn::backward(actor, tape, upstream), actor_state);
    return loss / static_cast<double>(B);
  }

  void soft_update_targets() {
    nn::soft_update(target1, critic1, hyper_.tau);
    nn::soft_update(target2, critic2, hyper_.tau);
  }

  Mlp actor, critic1, critic2, target1, target2;
  nn::AdamState actor_state, critic1_state, critic2_state;

 private:
  static double critic_step(Mlp& critic, nn::AdamState& state, const Batch& b, const Vector& y) {
    const auto B = static_cast<Eigen::Index>(b.size());
    nn::Tape tape;
    const Matrix q = nn::forward(critic, b.states, &tape);
    Matrix upstream = Matrix::Zero(q.rows(), B);
    double loss = 0.0;
    for (Eigen::Index j = 0; j < B; ++j) {
      const auto a = static_cast<Eigen::Index>(b.actions[static_cast<std::size_t>(j)]);
      const double err = q(a, j) - y[j];
      loss += 0.5 * err * err;
      upstream(a, j) = err / static_cast<double>(B);
    }
    nn::adam_step(critic, nn::backward(critic, tape, upstream), state);
    return loss / static_cast<double>(B);
  }

  SacHyper hyper_;
};

// ---------------------------------------------------------------------------
// Policy artifact

struct PolicyArtifact {
  Mlp actor, critic1, critic2, target1, target2;
  std::uint64_t feature_hash = 0;
  double gamma = 0.97;
  double alpha = 0.1;
  double lambda = 0.0;
  std::uint64_t seed = 0;

  std::size_t vehicle_count() const { return actor.output_dim() / kRuleCount; }
};

namespace detail {

inline constexpr char kArtifactMagic[8] = {'D', 'M', 'H', 'P', 'O', 'L', 'I', 'C'};
inline constexpr std::uint32_t kArtifactVersion = 1;

template <class T>
void put_le(std::string& out, T value) {
  static_assert(sizeof(T) == 4 || sizeof(T) == 8);
  std::uint64_t bits = 0;
  std::memcpy(&bits, &value, sizeof(T));
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

template <class T>
T get_le(std::string_view in, std::size_t& pos) {
  if (pos + sizeof(T) > in.size()) throw ParseError("policy artifact: truncated");
  std::uint64_t bits = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i)
    bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  pos += sizeof(T);
  T value;
  std::memcpy(&value, &bits, sizeof(T));
  return value;
}

}  // namespace detail

/// Header (magic, version, dims, feature hash, gamma, alpha, lambda, seed)
/// followed by little-endian float64 parameters of the actor, both critics
/// and both target critics.
inline std::string serialize(const PolicyArtifact& art) {
  std::string out(detail::kArtifactMagic, sizeof detail::kArtifactMagic);
  detail::put_le<std::uint32_t>(out, detail::kArtifactVersion);
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(art.actor.dims.size()));
  for (std::size_t d : art.actor.dims) detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(d));
  detail::put_le<std::uint64_t>(out, art.feature_hash);
  detail::put_le<double>(out, art.gamma);
  detail::put_le<double>(out, art.alpha);
  detail::put_le<double>(out, art.lambda);
  detail::put_le<std::uint64_t>(out, art.seed);
  for (const Mlp* net : {&art.actor, &art.critic1, &art.critic2, &art.target1, &art.target2}) {
    if (net->dims != art.actor.dims) throw PreconditionError("policy artifact: networks differ in shape");
    for (double v : net->flatten()) detail::put_le<double>(out, v);
  }
  return out;
}

inline PolicyArtifact deserialize(std::string_view in) {
  if (in.size() < sizeof detail::kArtifactMagic ||
      std::memcmp(in.data(), detail::kArtifactMagic, sizeof detail::kArtifactMagic) != 0)
    throw ParseError("policy artifact: bad magic");
  std::size_t pos = sizeof detail::kArtifactMagic;
  const auto version = detail::get_le<std::uint32_t>(in, pos);
  if (version != detail::kArtifactVersion) throw ParseError("policy artifact: unsupported version " + std::to_string(version));
  const auto ndims = detail::get_le<std::uint32_t>(in, pos);
  if (ndims < 2 || ndims > 64) throw ParseError("policy artifact: bad layer count");
  std::vector<std::size_t> dims;
  for (std::uint32_t i = 0; i < ndims; ++i) dims.push_back(detail::get_le<std::uint32_t>(in, pos));
  PolicyArtifact art;
  art.feature_hash = detail::get_le<std::uint64_t>(in, pos);
  art.gamma = detail::get_le<double>(in, pos);
  art.alpha = detail::get_le<double>(in, pos);
  art.lambda = detail::get_le<double>(in, pos);
  art.seed = detail::get_le<std::uint64_t>(in, pos);
  for (Mlp* net : {&art.actor, &art.critic1, &art.critic2, &art.target1, &art.target2}) {
    *net = Mlp::zeros(dims);
    std::vector<double> flat(net->parameter_count());
    for (double& v : flat) v = detail::get_le<double>(in, pos);
    net->assign(flat);
  }
  if (pos != in.size()) throw ParseError("policy artifact: trailing bytes");
  if (art.actor.output_dim() % kRuleCount != 0) throw ParseError("policy artifact: output size is not 4 * vehicles");
  return art;
}

inline void save_artifact(const PolicyArtifact& art, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write policy artifact '" + path + "'");
  const std::string bytes = serialize(art);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

inline PolicyArtifact load_artifact(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open policy artifact '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return deserialize(buf.str());
}

/// Masked actor as a dispatching policy: greedy by default, sampling otherwise.
class NeuralPolicy final : public Policy {
 public:
  NeuralPolicy(Mlp actor, std::string name, bool greedy = true, std::uint64_t seed = 0)
      : actor_(std::move(actor)), name_(std::move(name)), greedy_(greedy), rng_(mix_seed(seed)) {}

  std::string name() const override { return name_; }
  void seed(std::uint64_t s) override { rng_.seed(mix_seed(s)); }

  Action act(const Observation& obs) override {
    const std::size_t n = actor_.output_dim() / kRuleCount;
    const std::size_t a = greedy_ ? greedy_action(actor_, obs.features, obs.mask)
                                  : sample_action(actor_, obs.features, obs.mask, rng_);
    return Action::from_flat(a, n);
  }

 private:
  Mlp actor_;
  std::string name_;
  bool greedy_;
  Rng rng_;
};

// ---------------------------------------------------------------------------
// Evaluation

struct TrialSummary {
  std::size_t trials = 0;
  double mean_makespan = 0.0, std_makespan = 0.0;
  double mean_tardiness = 0.0, std_tardiness = 0.0;
  double satisfaction_pct = 0.0;
  double mean_decision_ms = 0.0;
  std::vector<EpisodeMetrics> episodes;
};

inline TrialSummary summarize(std::vector<EpisodeMetrics> episodes) {
  TrialSummary s;
  s.trials = episodes.size();
  if (episodes.empty()) return s;
  const double n = static_cast<double>(episodes.size());
  std::size_t satisfied = 0;
  for (const auto& e : episodes) {
    s.mean_makespan += e.makespan / n;
    s.mean_tardiness += e.tardiness / n;
    s.mean_decision_ms += e.decision_ms / n;
    satisfied += e.constraint_satisfied ? 1 : 0;
  }
  for (const auto& e : episodes) {
    s.std_makespan += (e.makespan - s.mean_makespan) * (e.makespan - s.mean_makespan) / n;
    s.std_tardiness += (e.tardiness - s.mean_tardiness) * (e.tardiness - s.mean_tardiness) / n;
  }
  s.std_makespan = std::sqrt(s.std_makespan);
  s.std_tardiness = std::sqrt(s.std_tardiness);
  s.satisfaction_pct = 100.0 * static_cast<double>(satisfied) / n;
  s.episodes = std::move(episodes);
  return s;
}

inline std::uint64_t trial_seed(std::uint64_t seed, std::size_t trial) { return combine_seed(seed, trial); }

/// `trials` independent episodes of the artifact's actor on `instance`.
inline TrialSummary evaluate(const PolicyArtifact& art, const Instance& instance, const Layout& layout,
                             std::size_t trials, std::uint64_t seed, double epsilon = 50.0, bool greedy = true,
                             const EngineOptions& opts = {}) {
  if (trials == 0) throw PreconditionError("evaluate: trials must be >= 1");
  const std::size_t n = instance.vehicles.size();
  if (art.feature_hash != feature_layout_hash(n, opts) || art.actor.input_dim() != feature_size(n, opts) ||
      art.vehicle_count() != n)
    throw ValidationError("policy artifact feature layout does not match instance '" + instance.name + "' (" +
                          std::to_string(n) + " vehicles)");
  NeuralPolicy policy(art.actor, "nn", greedy);
  std::vector<EpisodeMetrics> eps;
  for (std::size_t t = 0; t < trials; ++t)
    eps.push_back(rollout(policy, instance, layout, trial_seed(seed, t), opts, epsilon));
  return summarize(std::move(eps));
}

// ---------------------------------------------------------------------------
// Training

enum class LambdaMode { Adaptive, Fixed, Zero };

struct TrainerConfig {
  double gamma = 0.97;
  double alpha = 0.1;
  double lambda0 = 0.001;
  double eta = 1e-4;
  double epsilon = 50.0;
  double beta = 1.0;
  double bias = 2000.0;
  std::size_t total_steps = 50000;
  std::size_t batch_size = 256;
  std::size_t buffer_capacity = 100000;
  std::size_t warmup_steps = 256;  // updates start once this many transitions are stored
  std::size_t random_steps = 0;    // initial steps acting uniformly over the valid actions
  double tau = 0.005;
  std::size_t lambda_window = 10;
  double actor_lr = 1e-3;
  double critic_lr = 1e-3;
  std::vector<std::size_t> hidden = {128, 128};
  bool shaping = true;
  LambdaMode lambda_mode = LambdaMode::Adaptive;
  bool exact_expectation = true;
  std::size_t eval_interval = 2500;
  std::size_t eval_trials = 1;
  bool greedy_eval = true;
  std::uint64_t seed = 1;
};

inline std::vector<Violation> check(const TrainerConfig& c) {
  std::vector<Violation> out;
  auto bad = [&](bool cond, const char* field, const char* msg) {
    if (cond) out.push_back({field, msg});
  };
  bad(!(c.gamma > 0.0 && c.gamma < 1.0), "gamma", "must lie in (0, 1)");
  bad(!(c.alpha > 0.0), "alpha", "must be > 0");
  bad(!(c.beta > 0.0), "beta", "must be > 0");
  bad(!(c.bias >= 0.0), "bias", "must be >= 0");
  bad(!(c.lambda0 >= 0.0), "lambda0", "must be >= 0");
  bad(!(c.eta >= 0.0), "eta", "must be >= 0");
  bad(c.batch_size == 0, "batch_size", "must be >= 1");
  bad(c.buffer_capacity == 0, "buffer_capacity", "must be >= 1");
  bad(!(c.tau > 0.0 && c.tau <= 1.0), "tau", "must lie in (0, 1]");
  bad(c.lambda_window == 0, "lambda_window", "must be >= 1");
  bad(!(c.actor_lr > 0.0) || !(c.critic_lr > 0.0), "actor_lr", "learning rates must be > 0");
  bad(c.eval_trials == 0, "eval_trials", "must be >= 1");
  return out;
}

/// Named agent presets sharing one training path.
inline TrainerConfig apply_variant(TrainerConfig c, std::string_view variant) {
  if (variant == "rcpom") {
    c.shaping = true;
    c.lambda_mode = LambdaMode::Adaptive;
  } else if (variant == "rcpo-ns") {
    c.shaping = false;
    c.lambda_mode = LambdaMode::Adaptive;
  } else if (variant == "l-sac") {
    c.shaping = true;
    c.lambda_mode = LambdaMode::Fixed;
  } else if (variant == "sac") {
    c.shaping = true;
    c.lambda_mode = LambdaMode::Zero;
  } else {
    throw PreconditionError("unknown agent variant '" + std::string(variant) + "'");
  }
  return c;
}

inline const std::vector<std::string>& variant_names() {
  static const std::vector<std::string> names = {"rcpom", "rcpo-ns", "l-sac", "sac"};
  return names;
}

inline void from_json(const nlohmann::json& j, TrainerConfig& c) {
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) field = j.at(key).get<std::remove_reference_t<decltype(field)>>();
  };
  get("gamma", c.gamma);
  get("alpha", c.alpha);
  get("lambda0", c.lambda0);
  get("eta", c.eta);
  get("epsilon", c.epsilon);
  get("beta", c.beta);
  get("bias", c.bias);
  get("total_steps", c.total_steps);
  get("batch_size", c.batch_size);
  get("buffer_capacity", c.buffer_capacity);
  get("warmup_steps", c.warmup_steps);
  get("random_steps", c.random_steps);
  get("tau", c.tau);
  get("lambda_window", c.lambda_window);
  get("actor_lr", c.actor_lr);
  get("critic_lr", c.critic_lr);
  get("hidden", c.hidden);
  get("shaping", c.shaping);
  get("exact_expectation", c.exact_expectation);
  get("eval_interval", c.eval_interval);
  get("eval_trials", c.eval_trials);
  get("greedy_eval", c.greedy_eval);
  get("seed", c.seed);
  if (j.contains("lambda_mode")) {
    const auto mode = j.at("lambda_mode").get<std::string>();
    if (mode == "adaptive") c.lambda_mode = LambdaMode::Adaptive;
    else if (mode == "fixed") c.lambda_mode = LambdaMode::Fixed;
    else if (mode == "zero") c.lambda_mode = LambdaMode::Zero;
    else throw ParseError("lambda_mode: expected adaptive | fixed | zero");
  }
}

struct EnvState {
  std::vector<double> features;
  std::vector<std::uint8_t> mask;
  double reward = 0.0;
  double cost = 0.0;
  bool terminal = false;
};

/// What the trainer needs from an environment.
template <class E>
concept Environment = requires(E env, Rng& rng, std::size_t action) {
  { env.obs_dim() } -> std::convertible_to<std::size_t>;
  { env.action_dim() } -> std::convertible_to<std::size_t>;
  { env.reset(rng) } -> std::same_as<EnvState>;
  { env.step(action) } -> std::same_as<EnvState>;
};

/// DMH episodes drawn uniformly from a set of same-fleet instances.
class DmhEnv {
 public:
  DmhEnv(std::vector<Instance> instances, const Layout& layout, EngineOptions opts = {})
      : instances_(std::move(instances)), engine_(layout, opts) {
    if (instances_.empty()) throw PreconditionError("training needs at least one instance");
    n_ = instances_.front().vehicles.size();
    bool any_tasks = false;
    for (const auto& inst : instances_) {
      if (inst.vehicles.size() != n_) throw ValidationError("training instances must share one vehicle count");
      if (auto vs = validate(inst, layout); !vs.empty()) throw ValidationError("instance '" + inst.name + "': " + describe(vs));
      any_tasks = any_tasks || !inst.tasks.empty();
    }
    if (!any_tasks) throw ValidationError("training instances contain no tasks");
  }

  std::size_t obs_dim() const { return feature_size(n_, engine_.options()); }
  std::size_t action_dim() const { return kRuleCount * n_; }

  EnvState reset(Rng& rng) {
    for (;;) {
      const Instance& inst = instances_[uniform_index(rng, instances_.size())];
      engine_.reset(inst, rng());
      if (!engine_.terminal()) return pack(engine_.observation(), 0.0, 0.0);
    }
  }

  EnvState step(std::size_t action) {
    const StepOutcome out = engine_.step(Action::from_flat(action, n_));
    return pack(out.observation, out.reward, out.cost);
  }

  const Engine& engine() const { return engine_; }

 private:
  static EnvState pack(const Observation& obs, double reward, double cost) {
    return {obs.features, obs.mask, reward, cost, obs.terminal};
  }

  std::vector<Instance> instances_;
  Engine engine_;
  std::size_t n_ = 0;
};

struct EvalPoint {
  double makespan = std::numeric_limits<double>::quiet_NaN();
  double tardiness = std::numeric_limits<double>::quiet_NaN();
};

/// Checkpoint preference: constraint-satisfying checkpoints first, lowest
/// makespan among them; otherwise lowest tardiness.
inline bool better_checkpoint(const EvalPoint& a, const EvalPoint& b, double epsilon) {
  if (std::isnan(b.makespan)) return !std::isnan(a.makespan);
  if (std::isnan(a.makespan)) return false;
  const bool sa = a.tardiness <= epsilon, sb = b.tardiness <= epsilon;
  if (sa != sb) return sa;
  if (sa) return a.makespan < b.makespan;
  return a.tardiness < b.tardiness;
}

struct LogRecord {
  std::size_t step = 0;
  std::size_t episode = 0;
  double eval_makespan = std::numeric_limits<double>::quiet_NaN();
  double eval_tardiness = std::numeric_limits<double>::quiet_NaN();
  double lambda = 0.0;
  double actor_loss = std::numeric_limits<double>::quiet_NaN();
  double critic_loss = std::numeric_limits<double>::quiet_NaN();
};

inline std::string format_log_header() { return "step,episode,eval_makespan,eval_tardiness,lambda,actor_loss,critic_loss"; }

inline std::string format_log(const LogRecord& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%zu,%zu,%.6f,%.6f,%.10g,%.10g,%.10g", r.step, r.episode, r.eval_makespan,
                r.eval_tardiness, r.lambda, r.actor_loss, r.critic_loss);
  return buf;
}

struct TrainResult {
  SacAgent best;            // best checkpoint (final agent when nothing was evaluated)
  SacAgent last;
  EvalPoint best_eval;
  std::vector<LogRecord> log;
  std::vector<double> lambda_history;  // lambda after every episode
  std::vector<double> episode_costs;
  std::size_t episodes = 0;
  std::size_t invalid_actions = 0;  // sampled actions outside the mask (must stay 0)
};

using Evaluator = std::function<EvalPoint(const Mlp& actor)>;

/// Lagrangian-relaxed soft actor-critic with invalid action masking.
template <Environment Env>
TrainResult train(const TrainerConfig& cfg, Env& env, const Evaluator& evaluate_actor = {},
                  const std::function<void(const LogRecord&)>& on_log = {}) {
  if (auto vs = check(cfg); !vs.empty()) throw PreconditionError("trainer config: " + describe(vs));
  Rng rng(mix_seed(cfg.seed));
  SacHyper hyper{cfg.gamma, cfg.alpha, cfg.tau, cfg.exact_expectation};
  SacAgent agent(env.obs_dim(), env.action_dim(), cfg.hidden, rng, hyper, {cfg.actor_lr}, {cfg.critic_lr});
  ReplayBuffer buffer(cfg.buffer_capacity);

  LagrangeState lag;
  lag.lambda = cfg.lambda_mode == LambdaMode::Zero ? 0.0 : cfg.lambda0;
  lag.eta = cfg.eta;
  lag.epsilon = cfg.epsilon;
  lag.window = cfg.lambda_window;

  TrainResult result;
  result.best = agent;
  LogRecord current;
  double episode_cost = 0.0;
  EnvState obs = env.reset(rng);

  for (std::size_t step = 1; step <= cfg.total_steps; ++step) {
    std::size_t action = 0;
    if (step <= cfg.random_steps) {
      std::vector<std::size_t> valid;
      for (std::size_t a = 0; a < obs.mask.size(); ++a)
        if (obs.mask[a]) valid.push_back(a);
      action = valid.at(uniform_index(rng, valid.size()));
    } else {
      action = sample_action(agent.actor, obs.features, obs.mask, rng);
    }
    if (action >= obs.mask.size() || !obs.mask[action]) ++result.invalid_actions;
    EnvState next = env.step(action);
    const double reward = cfg.shaping ? shape_reward(next.reward, cfg.beta, cfg.bias) : next.reward;
    episode_cost += next.cost;
    buffer.push({obs.features, obs.mask, action, next.features, next.mask, reward, next.cost, next.terminal});

    if (buffer.size() >= std::max(cfg.batch_size, cfg.warmup_steps)) {
      const auto idx = buffer.sample(cfg.batch_size, rng);
      const Batch batch = make_batch(buffer, idx);
      const Vector y = agent.td_targets(batch, lag.lambda, &rng);
      const auto losses = agent.update_critics(batch, y);
      current.critic_loss = 0.5 * (losses.critic1 + losses.critic2);
      current.actor_loss = agent.update_actor(batch);
      agent.soft_update_targets();
    }

    if (next.terminal) {
      ++result.episodes;
      result.episode_costs.push_back(episode_cost);
      lag.record(episode_cost);
      if (cfg.lambda_mode == LambdaMode::Adaptive) lag = update_lambda(lag, lag.estimate());
      result.lambda_history.push_back(lag.lambda);
      episode_cost = 0.0;
      obs = env.reset(rng);
    } else {
      obs = std::move(next);
    }

    if (cfg.eval_interval > 0 && (step % cfg.eval_interval == 0 || step == cfg.total_steps)) {
      current.step = step;
      current.episode = result.episodes;
      current.lambda = lag.lambda;
      if (evaluate_actor) {
        const EvalPoint e = evaluate_actor(agent.actor);
        current.eval_makespan = e.makespan;
        current.eval_tardiness = e.tardiness;
        if (better_checkpoint(e, result.best_eval, cfg.epsilon)) {
          result.best_eval = e;
          result.best = agent;
        }
      }
      result.log.push_back(current);
      if (on_log) on_log(current);
    }
  }
  result.last = agent;
  if (!evaluate_actor) result.best = agent;
  return result;
}

inline PolicyArtifact make_artifact(const SacAgent& agent, const TrainerConfig& cfg, double lambda, std::size_t n,
                                    const EngineOptions& opts = {}) {
  PolicyArtifact art;
  art.actor = agent.actor;
  art.critic1 = agent.critic1;
  art.critic2 = agent.critic2;
  art.target1 = agent.target1;
  art.target2 = agent.target2;
  art.feature_hash = feature_layout_hash(n, opts);
  art.gamma = cfg.gamma;
  art.alpha = cfg.alpha;
  art.lambda = lambda;
  art.seed = cfg.seed;
  return art;
}

/// Rollout seed base for checkpoint selection, kept apart from the
/// trial_seed() stream that evaluation uses for the same seed.
inline std::uint64_t selection_seed(std::uint64_t seed) { return combine_seed(seed, 0x73656c656374ULL); }

/// Evaluator averaging greedy rollouts over the given instances.
inline Evaluator instance_evaluator(std::vector<Instance> instances, const Layout& layout, std::size_t trials,
                                    std::uint64_t seed, double epsilon, bool greedy = true,
                                    EngineOptions opts = {}) {
  return [instances = std::move(instances), &layout, trials, seed, epsilon, greedy, opts](const Mlp& actor) {
    EvalPoint p{0.0, 0.0};
    NeuralPolicy policy(actor, "nn", greedy);
    const double total = static_cast<double>(instances.size() * trials);
    for (std::size_t i = 0; i < instances.size(); ++i)
      for (std::size_t t = 0; t < trials; ++t) {
        const auto m = rollout(policy, instances[i], layout, combine_seed(seed, i * 1000 + t), opts, epsilon);
        p.makespan += m.makespan / total;
        p.tardiness += m.tardiness / total;
      }
    return p;
  };
}

}  // namespace dmh::crl
