#include "head/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "head/errors.hpp"
#include "head/rng.hpp"

namespace head {

namespace {

constexpr double kCosineOffset = 0.008;
constexpr double kMaxBeta = 0.999;
constexpr double kMinVariance = 1e-12;

double cosine_level(double u, int steps) {
  const double x = (u / steps + kCosineOffset) / (1.0 + kCosineOffset) * std::numbers::pi / 2.0;
  const double c = std::cos(x);
  return c * c;
}

Grid epsilon_from_posterior(const MixturePosterior& post, const Grid& z, double alpha,
                            double sigma) {
  Grid eps(z.height(), z.width());
  const double scale = sigma / post.noisy_variance;
  for (std::size_t i = 0; i < z.size(); ++i)
    eps[i] = scale * (z[i] - alpha * post.mean_of_means[i]);
  return eps;
}

Grid attention_from_posterior(const MixtureSpec& mixture, const MixturePosterior& post,
                              int target) {
  Grid map(mixture.grid_size, mixture.grid_size);
  const auto o = static_cast<std::size_t>(target);
  for (std::size_t k = 0; k < mixture.components.size(); ++k) {
    const auto& comp = mixture.components[k];
    if (!comp.present[o]) continue;
    const double r = post.responsibilities[k];
    const Grid& g = mixture.placed_templates[o][static_cast<std::size_t>(comp.position_choice[o])];
    for (std::size_t i = 0; i < map.size(); ++i) map[i] += r * g[i];
  }
  for (double& v : map.values()) v = std::clamp(v, 0.0, 1.0);
  return map;
}

void check_latent_index(const NoiseSchedule& schedule, int t, int lowest) {
  if (t < lowest || t > schedule.steps)
    throw InvalidArgument("timestep " + std::to_string(t) + " outside [" + std::to_string(lowest) +
                          ", " + std::to_string(schedule.steps) + "]");
}

}  // namespace

double NoiseSchedule::alpha(int t) const { return std::sqrt(alphabar.at(static_cast<std::size_t>(t))); }

double NoiseSchedule::sigma(int t) const {
  return std::sqrt(1.0 - alphabar.at(static_cast<std::size_t>(t)));
}

NoiseSchedule make_schedule(int steps) {
  if (steps < 2) throw InvalidT("need at least 2 steps, got " + std::to_string(steps));
  NoiseSchedule schedule;
  schedule.steps = steps;
  schedule.alphabar.resize(static_cast<std::size_t>(steps) + 1);
  const double f0 = cosine_level(0.0, steps);
  schedule.alphabar[0] = 1.0;
  for (int t = 1; t <= steps; ++t) {
    const double previous = schedule.alphabar[static_cast<std::size_t>(t - 1)];
    const double level = cosine_level(t, steps) / f0;
    // Equivalent to clipping beta_t = 1 - alphabar_t / alphabar_{t-1} at kMaxBeta.
    schedule.alphabar[static_cast<std::size_t>(t)] = std::max(level, (1.0 - kMaxBeta) * previous);
  }
  return schedule;
}

MixturePosterior mixture_posterior(const MixtureSpec& mixture, const LatentState& state,
                                   const NoiseSchedule& schedule) {
  check_latent_index(schedule, state.t, 0);
  const double alpha = schedule.alpha(state.t);
  const double sigma = schedule.sigma(state.t);
  MixturePosterior post;
  post.noisy_variance = alpha * alpha * mixture.variance + sigma * sigma;
  if (post.noisy_variance < kMinVariance)
    throw DegenerateVariance("alpha^2 s^2 + sigma^2 = " + std::to_string(post.noisy_variance));

  const std::size_t n = mixture.components.size();
  const auto dim = static_cast<double>(state.z.size());
  std::vector<double> logits(n);
  for (std::size_t k = 0; k < n; ++k) {
    const Grid& mu = mixture.components[k].mean_image;
    double dist2 = 0.0;
    for (std::size_t i = 0; i < state.z.size(); ++i) {
      const double d = state.z[i] - alpha * mu[i];
      dist2 += d * d;
    }
    logits[k] = std::log(mixture.components[k].weight) - dist2 / (2.0 * post.noisy_variance);
  }
  const double top = *std::max_element(logits.begin(), logits.end());
  double total = 0.0;
  for (double l : logits) total += std::exp(l - top);
  const double lse = top + std::log(total);
  post.log_density = lse - 0.5 * dim * std::log(2.0 * std::numbers::pi * post.noisy_variance);

  post.responsibilities.resize(n);
  post.mean_of_means = Grid(state.z.height(), state.z.width());
  for (std::size_t k = 0; k < n; ++k) {
    const double r = std::exp(logits[k] - lse);
    post.responsibilities[k] = r;
    const Grid& mu = mixture.components[k].mean_image;
    for (std::size_t i = 0; i < mu.size(); ++i) post.mean_of_means[i] += r * mu[i];
  }
  return post;
}

Grid exact_epsilon(const MixtureSpec& mixture, const LatentState& state,
                   const NoiseSchedule& schedule) {
  check_latent_index(schedule, state.t, 1);
  const auto post = mixture_posterior(mixture, state, schedule);
  return epsilon_from_posterior(post, state.z, schedule.alpha(state.t), schedule.sigma(state.t));
}

Grid ddim_step(const Grid& z, const Grid& eps, int t_from, int t_to,
               const NoiseSchedule& schedule) {
  if (!(0 <= t_to && t_to <= t_from && t_from <= schedule.steps))
    throw InvalidArgument("ddim_step requires 0 <= t' <= t <= T");
  if (!z.same_shape(eps)) throw DimensionMismatch("latent and noise shapes differ");
  if (t_to == t_from) return z;
  const double a = schedule.alpha(t_from);
  const double s = schedule.sigma(t_from);
  const double a_to = schedule.alpha(t_to);
  const double s_to = schedule.sigma(t_to);
  Grid out(z.height(), z.width());
  for (std::size_t i = 0; i < z.size(); ++i) {
    const double x0 = (z[i] - s * eps[i]) / a;
    out[i] = a_to * x0 + s_to * eps[i];
  }
  return out;
}

Grid predict_final_image(const MixtureSpec& mixture, const LatentState& state,
                         const NoiseSchedule& schedule) {
  check_latent_index(schedule, state.t, 0);
  if (state.t == 0) return state.z;
  const Grid eps = exact_epsilon(mixture, state, schedule);
  return ddim_step(state.z, eps, state.t, 0, schedule);
}

Grid attention_map(const MixtureSpec& mixture, const LatentState& state,
                   const NoiseSchedule& schedule, std::string_view object) {
  const int target = mixture.target_index(object);
  const auto post = mixture_posterior(mixture, state, schedule);
  return attention_from_posterior(mixture, post, target);
}

const CapturedStep* GenerationRecord::capture_at(int step) const {
  for (const auto& c : captures) {
    if (c.step == step) return &c;
  }
  return nullptr;
}

int nearest_component(const MixtureSpec& mixture, const Grid& image) {
  int best = -1;
  double best_dist = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < mixture.components.size(); ++k) {
    const Grid& mu = mixture.components[k].mean_image;
    double d2 = 0.0;
    for (std::size_t i = 0; i < mu.size(); ++i) {
      const double d = image[i] - mu[i];
      d2 += d * d;
    }
    if (d2 < best_dist) {
      best_dist = d2;
      best = static_cast<int>(k);
    }
  }
  return best;
}

Trajectory::Trajectory(const MixtureSpec& mixture, const NoiseSchedule& schedule,
                       std::uint64_t seed)
    : mixture_(&mixture), schedule_(&schedule),
      z_(mixture.grid_size, mixture.grid_size), t_(schedule.steps) {
  SplitMix64 rng(seed);
  for (double& v : z_.values()) v = rng.normal();
}

const MixturePosterior& Trajectory::posterior() {
  if (!cache_valid_) {
    cached_ = mixture_posterior(*mixture_, {z_, t_}, *schedule_);
    cache_valid_ = true;
  }
  return cached_;
}

CapturedStep Trajectory::capture() {
  if (finished()) throw InvalidArgument("cannot capture after the final step");
  const auto& post = posterior();
  const Grid eps = epsilon_from_posterior(post, z_, schedule_->alpha(t_), schedule_->sigma(t_));
  CapturedStep cap;
  cap.step = steps_done();
  cap.t = t_;
  cap.pfi = ddim_step(z_, eps, t_, 0, *schedule_);
  for (std::size_t o = 0; o < mixture_->targets.size(); ++o)
    cap.attention.emplace(mixture_->targets[o],
                          attention_from_posterior(*mixture_, post, static_cast<int>(o)));
  cap.epsilon_norm = std::sqrt(eps.squared_norm());
  return cap;
}

void Trajectory::advance() {
  if (finished()) return;
  const auto& post = posterior();
  const Grid eps = epsilon_from_posterior(post, z_, schedule_->alpha(t_), schedule_->sigma(t_));
  z_ = ddim_step(z_, eps, t_, t_ - 1, *schedule_);
  --t_;
  cache_valid_ = false;
}

void Trajectory::run_to_step(int step) {
  while (!finished() && steps_done() < step) advance();
}

const Grid& Trajectory::finish() {
  while (!finished()) advance();
  return z_;
}

GenerationRecord sample_with_capture(const MixtureSpec& mixture, const NoiseSchedule& schedule,
                                     std::uint64_t seed, std::span<const int> critical_steps) {
  std::vector<int> steps(critical_steps.begin(), critical_steps.end());
  std::sort(steps.begin(), steps.end());
  steps.erase(std::unique(steps.begin(), steps.end()), steps.end());
  for (int s : steps) {
    if (s < 0 || s >= schedule.steps)
      throw InvalidArgument("critical step " + std::to_string(s) + " outside [0, T)");
  }

  GenerationRecord record;
  record.seed = seed;
  Trajectory traj(mixture, schedule, seed);
  for (int s : steps) {
    traj.run_to_step(s);
    record.captures.push_back(traj.capture());
  }
  record.final_image = traj.finish();
  record.nearest_component = nearest_component(mixture, record.final_image);
  return record;
}

}  // namespace head
