#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

#include "head/detector.hpp"
#include "head/scene.hpp"

namespace head {

inline constexpr std::size_t kDefaultRestartCap = 1'000'000;
inline constexpr double kReferenceCompleteness = 0.59;

// Abort-policy economics inputs. Costs are in units of one full generation.
struct PolicyParams {
  double abort_fraction = 1.0;  // f = t_last / T
  std::vector<double> recall;   // per object, in (0, 1]
  std::vector<double> tn_rate;  // per object, in [0, 1]

  static PolicyParams uniform(std::size_t objects, double abort_fraction, double recall,
                              double tn_rate);
  std::size_t objects() const noexcept { return recall.size(); }
  void validate() const;
};

// Distribution of the true presence pattern of one attempt. Bit o of the
// pattern index is object o's presence.
struct AttemptDistribution {
  std::size_t objects = 0;
  std::vector<double> probability;  // size 2^objects

  static AttemptDistribution independent(std::span<const double> faithfulness);
  static AttemptDistribution from_mixture(const MixtureSpec& mixture);
  // Independent objects whose joint completeness equals `completeness`.
  static AttemptDistribution with_completeness(double completeness, std::size_t objects);

  std::size_t complete_pattern() const noexcept { return (std::size_t{1} << objects) - 1; }
  double completeness() const { return probability.at(complete_pattern()); }
  void validate() const;
};

struct SimReport {
  double expected_cost = 0.0;
  double baseline_cost = 0.0;
  double relative_saving = 0.0;
  std::size_t trials = 0;
  double standard_error = 0.0;
  double ci_low = 0.0;   // 95% CI of the expected cost
  double ci_high = 0.0;
  double saving_ci_low = 0.0;
  double saving_ci_high = 0.0;
};

// Probability that every verdict is "present" for true pattern `pattern`.
double continue_probability(const PolicyParams& params, std::size_t pattern);

// Exact expected cost until a complete image is accepted:
//   E = sum_s P(s) (C(s) + (1 - C(s)) f) / (P(1..1) prod_o r_o).
double expected_cost_closed_form(const AttemptDistribution& dist, const PolicyParams& params);
double baseline_cost(const AttemptDistribution& dist);
double relative_saving(double head_cost, double baseline);

struct MonteCarloOptions {
  std::size_t trials = 100'000;
  std::uint64_t seed = 1;
  int jobs = 1;
  std::size_t restart_cap = kDefaultRestartCap;
};

// Trials are split into fixed-size chunks with derived seeds and reduced in
// chunk order, so the result does not depend on `jobs`.
inline constexpr std::size_t kTrialsPerChunk = 4096;

SimReport monte_carlo_cost(const AttemptDistribution& dist, const PolicyParams& params,
                           const MonteCarloOptions& options);
SimReport monte_carlo_cost_serial(const AttemptDistribution& dist, const PolicyParams& params,
                                  const MonteCarloOptions& options);

// One detector operating point per t_last.
struct TlastInput {
  int t_last = 0;
  ConfusionReport report;
};

struct TlastRow {
  int t_last = 0;
  double f = 0.0;
  double recall = 0.0;
  double tn_rate = 0.0;
  double saving_cf = 0.0;
  double saving_mc = 0.0;
  double ci_lo = 0.0;
  double ci_hi = 0.0;
};

// Per-object rates come from the report's per-slot counts when they cover
// every object of `dist`, otherwise from the pooled counts.
PolicyParams params_from_report(const ConfusionReport& report, double abort_fraction,
                                std::size_t objects);

std::vector<TlastRow> sweep_tlast(std::span<const TlastInput> inputs, const AttemptDistribution& dist,
                                  int total_steps, const MonteCarloOptions& options);
void write_sweep_tlast_csv(std::ostream& out, std::span<const TlastRow> rows);

struct TlastParams {
  int t_last = 0;
  PolicyParams params;
};

struct ProbabilityRow {
  double p = 0.0;
  int t_last = 0;
  double saving_cf = 0.0;
};

// Closed-form saving vs completeness p (independent objects), one curve per
// t_last. Rows at `marker_p` are always included.
std::vector<ProbabilityRow> sweep_probability(std::span<const TlastParams> curves,
                                              std::span<const double> p_grid,
                                              double marker_p = kReferenceCompleteness);
void write_sweep_p_csv(std::ostream& out, std::span<const ProbabilityRow> rows);

}  // namespace head
