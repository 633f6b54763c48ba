#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "head/grid.hpp"
#include "head/scene.hpp"

namespace head {

inline constexpr int kDefaultSteps = 50;

// Discrete variance-preserving schedule. Index t = 0 is clean data, t = T is
// (almost) pure noise.
struct NoiseSchedule {
  int steps = 0;                 // T
  std::vector<double> alphabar;  // length T + 1

  double alpha(int t) const;  // sqrt(alphabar_t)
  double sigma(int t) const;  // sqrt(1 - alphabar_t)
};

// Cosine schedule (s = 0.008) with per-step betas clipped at 0.999 so that
// alphabar_T stays strictly positive.
NoiseSchedule make_schedule(int steps = kDefaultSteps);

struct LatentState {
  Grid z;
  int t = 0;
};

// Everything the mixture posterior says about one latent.
struct MixturePosterior {
  std::vector<double> responsibilities;  // r_k, sums to 1
  Grid mean_of_means;                    // sum_k r_k mu_k
  double noisy_variance = 0.0;           // alpha^2 s^2 + sigma^2
  double log_density = 0.0;              // log p_t(z)
};

MixturePosterior mixture_posterior(const MixtureSpec& mixture, const LatentState& state,
                                   const NoiseSchedule& schedule);

// eps = -sigma_t * grad log p_t(z) for the noised mixture.
Grid exact_epsilon(const MixtureSpec& mixture, const LatentState& state,
                   const NoiseSchedule& schedule);

// Deterministic DDIM (eta = 0) transition from t_from to t_to <= t_from.
Grid ddim_step(const Grid& z, const Grid& eps, int t_from, int t_to, const NoiseSchedule& schedule);

// Projection of the latent to t = 0 with the exact noise prediction.
Grid predict_final_image(const MixtureSpec& mixture, const LatentState& state,
                         const NoiseSchedule& schedule);

// Responsibility-weighted, peak-normalized template of `object`.
Grid attention_map(const MixtureSpec& mixture, const LatentState& state,
                   const NoiseSchedule& schedule, std::string_view object);

// Critical steps count denoising steps already taken: step c sees the latent
// at diffusion index T - c.
constexpr int latent_index_for_step(int step, int total_steps) { return total_steps - step; }

struct CapturedStep {
  int step = 0;  // critical step (steps completed)
  int t = 0;     // diffusion index of the captured latent
  Grid pfi;
  std::map<std::string, Grid> attention;  // keyed by target id
  double epsilon_norm = 0.0;
};

struct GenerationRecord {
  std::string prompt_id;
  std::uint64_t seed = 0;
  std::vector<CapturedStep> captures;  // generation order (ascending step)
  Grid final_image;
  int nearest_component = -1;

  const CapturedStep* capture_at(int step) const;
};

// Index of the component mean closest (L2) to `image`.
int nearest_component(const MixtureSpec& mixture, const Grid& image);

// Step-by-step DDIM sampler over a mixture. The noise prediction evaluated
// for a capture is reused for the following transition, so capturing never
// changes the trajectory.
class Trajectory {
public:
  Trajectory(const MixtureSpec& mixture, const NoiseSchedule& schedule, std::uint64_t seed);

  int steps_done() const noexcept { return schedule_->steps - t_; }
  int t() const noexcept { return t_; }
  bool finished() const noexcept { return t_ == 0; }
  const Grid& latent() const noexcept { return z_; }

  CapturedStep capture();
  void advance();
  void run_to_step(int step);
  const Grid& finish();

private:
  const MixturePosterior& posterior();

  const MixtureSpec* mixture_;
  const NoiseSchedule* schedule_;
  Grid z_;
  int t_;
  MixturePosterior cached_;
  bool cache_valid_ = false;
};

// Full generation from seeded noise, recording PFI and attention maps at each
// critical step in `critical_steps` (each in [0, T)).
GenerationRecord sample_with_capture(const MixtureSpec& mixture, const NoiseSchedule& schedule,
                                     std::uint64_t seed, std::span<const int> critical_steps);

}  // namespace head
