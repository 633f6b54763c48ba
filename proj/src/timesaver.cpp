#include "head/timesaver.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <exception>
#include <ostream>

#include "head/errors.hpp"
#include "head/rng.hpp"

namespace head {

namespace {

constexpr double kZ95 = 1.959963984540054;
constexpr std::uint64_t kChunkSalt = 0xc4a11c4a11ULL;

struct ChunkSums {
  double sum = 0.0;
  double sum_sq = 0.0;
};

// Cost of one trial: attempts until a complete image survives every check.
double simulate_trial(const std::vector<double>& cumulative, const PolicyParams& params,
                      std::size_t complete, std::size_t restart_cap, SplitMix64& rng) {
  const std::size_t n = params.objects();
  double cost = 0.0;
  for (std::size_t attempt = 0; attempt < restart_cap; ++attempt) {
    const double u = rng.uniform();
    std::size_t pattern = static_cast<std::size_t>(
        std::upper_bound(cumulative.begin(), cumulative.end(), u) - cumulative.begin());
    pattern = std::min(pattern, cumulative.size() - 1);
    bool keep_going = true;
    for (std::size_t o = 0; o < n; ++o) {
      const bool present = (pattern >> o) & 1U;
      const double p_present_verdict = present ? params.recall[o] : 1.0 - params.tn_rate[o];
      if (!(rng.uniform() < p_present_verdict)) keep_going = false;
    }
    if (!keep_going) {
      cost += params.abort_fraction;
      continue;
    }
    cost += 1.0;
    if (pattern == complete) return cost;
  }
  throw TrialBudgetExceeded("no acceptance within " + std::to_string(restart_cap) + " attempts");
}

ChunkSums run_chunk(const std::vector<double>& cumulative, const PolicyParams& params,
                    std::size_t complete, const MonteCarloOptions& options, std::size_t chunk) {
  const std::size_t begin = chunk * kTrialsPerChunk;
  const std::size_t end = std::min(options.trials, begin + kTrialsPerChunk);
  SplitMix64 rng(mix64(options.seed ^ mix64(chunk ^ kChunkSalt)));
  ChunkSums sums;
  for (std::size_t i = begin; i < end; ++i) {
    const double c = simulate_trial(cumulative, params, complete, options.restart_cap, rng);
    sums.sum += c;
    sums.sum_sq += c * c;
  }
  return sums;
}

std::vector<double> cumulative_of(const AttemptDistribution& dist) {
  std::vector<double> cum(dist.probability.size());
  double acc = 0.0;
  for (std::size_t s = 0; s < cum.size(); ++s) {
    acc += dist.probability[s];
    cum[s] = acc;
  }
  return cum;
}

SimReport finish_report(const AttemptDistribution& dist, const std::vector<ChunkSums>& chunks,
                        std::size_t trials) {
  double sum = 0.0, sum_sq = 0.0;
  for (const auto& c : chunks) {
    sum += c.sum;
    sum_sq += c.sum_sq;
  }
  const auto n = static_cast<double>(trials);
  SimReport r;
  r.trials = trials;
  r.expected_cost = sum / n;
  const double var = trials > 1 ? std::max(0.0, (sum_sq - n * r.expected_cost * r.expected_cost) / (n - 1.0)) : 0.0;
  r.standard_error = std::sqrt(var / n);
  r.ci_low = r.expected_cost - kZ95 * r.standard_error;
  r.ci_high = r.expected_cost + kZ95 * r.standard_error;
  r.baseline_cost = baseline_cost(dist);
  r.relative_saving = relative_saving(r.expected_cost, r.baseline_cost);
  r.saving_ci_low = relative_saving(r.ci_high, r.baseline_cost);
  r.saving_ci_high = relative_saving(r.ci_low, r.baseline_cost);
  return r;
}

void check_mc_inputs(const AttemptDistribution& dist, const PolicyParams& params,
                     const MonteCarloOptions& options) {
  dist.validate();
  params.validate();
  if (params.objects() != dist.objects) throw DimensionMismatch("policy and distribution object counts differ");
  if (options.trials < 1) throw InvalidArgument("trials must be >= 1");
  if (options.restart_cap < 1) throw InvalidArgument("restart cap must be >= 1");
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

}  // namespace

PolicyParams PolicyParams::uniform(std::size_t objects, double abort_fraction, double recall,
                                   double tn_rate) {
  return {abort_fraction, std::vector<double>(objects, recall), std::vector<double>(objects, tn_rate)};
}

void PolicyParams::validate() const {
  if (recall.empty()) throw InvalidArgument("policy needs at least one object");
  if (recall.size() != tn_rate.size()) throw DimensionMismatch("recall and tn_rate differ in length");
  if (!(abort_fraction > 0.0 && abort_fraction <= 1.0)) throw InvalidArgument("abort fraction must lie in (0, 1]");
  for (double r : recall) {
    if (!(r > 0.0 && r <= 1.0)) throw InvalidArgument("recall must lie in (0, 1]");
  }
  for (double t : tn_rate) {
    if (!(t >= 0.0 && t <= 1.0)) throw InvalidArgument("tn_rate must lie in [0, 1]");
  }
}

AttemptDistribution AttemptDistribution::independent(std::span<const double> faithfulness) {
  if (faithfulness.empty() || faithfulness.size() > 20)
    throw InvalidArgument("independent distribution needs 1..20 objects");
  AttemptDistribution d;
  d.objects = faithfulness.size();
  d.probability.assign(std::size_t{1} << d.objects, 1.0);
  for (std::size_t s = 0; s < d.probability.size(); ++s) {
    for (std::size_t o = 0; o < d.objects; ++o) {
      const double q = faithfulness[o];
      d.probability[s] *= ((s >> o) & 1U) ? q : 1.0 - q;
    }
  }
  return d;
}

AttemptDistribution AttemptDistribution::from_mixture(const MixtureSpec& mixture) {
  AttemptDistribution d;
  d.objects = mixture.targets.size();
  d.probability.assign(std::size_t{1} << d.objects, 0.0);
  for (const auto& comp : mixture.components) {
    std::size_t pattern = 0;
    for (std::size_t o = 0; o < d.objects; ++o) {
      if (comp.present[o]) pattern |= std::size_t{1} << o;
    }
    d.probability[pattern] += comp.weight;
  }
  return d;
}

AttemptDistribution AttemptDistribution::with_completeness(double completeness, std::size_t objects) {
  if (!(completeness > 0.0 && completeness <= 1.0)) throw InvalidArgument("completeness must lie in (0, 1]");
  const std::vector<double> q(objects, std::pow(completeness, 1.0 / static_cast<double>(objects)));
  return independent(q);
}

void AttemptDistribution::validate() const {
  if (objects == 0) throw InvalidArgument("distribution needs at least one object");
  if (probability.size() != (std::size_t{1} << objects)) throw DimensionMismatch("pattern table has the wrong size");
  double total = 0.0;
  for (double p : probability) {
    if (!(p >= 0.0)) throw InvalidArgument("pattern probabilities must be non-negative");
    total += p;
  }
  if (std::abs(total - 1.0) > 1e-9) throw InvalidArgument("pattern probabilities must sum to 1");
  if (!(completeness() > 0.0)) throw NeverAccepts("the complete pattern has zero probability");
}

double continue_probability(const PolicyParams& params, std::size_t pattern) {
  double c = 1.0;
  for (std::size_t o = 0; o < params.objects(); ++o)
    c *= ((pattern >> o) & 1U) ? params.recall[o] : 1.0 - params.tn_rate[o];
  return c;
}

double expected_cost_closed_form(const AttemptDistribution& dist, const PolicyParams& params) {
  dist.validate();
  params.validate();
  if (params.objects() != dist.objects) throw DimensionMismatch("policy and distribution object counts differ");
  double per_attempt = 0.0;
  for (std::size_t s = 0; s < dist.probability.size(); ++s) {
    const double c = continue_probability(params, s);
    per_attempt += dist.probability[s] * (c + (1.0 - c) * params.abort_fraction);
  }
  const double accept = dist.completeness() * continue_probability(params, dist.complete_pattern());
  if (!(accept > 0.0)) throw NeverAccepts("acceptance probability per attempt is zero");
  return per_attempt / accept;
}

double baseline_cost(const AttemptDistribution& dist) {
  const double p = dist.completeness();
  if (!(p > 0.0)) throw NeverAccepts("the complete pattern has zero probability");
  return 1.0 / p;
}

double relative_saving(double head_cost, double baseline) {
  if (!(baseline > 0.0)) throw InvalidArgument("baseline cost must be positive");
  return 1.0 - head_cost / baseline;
}

SimReport monte_carlo_cost(const AttemptDistribution& dist, const PolicyParams& params,
                           const MonteCarloOptions& options) {
  check_mc_inputs(dist, params, options);
  const auto cumulative = cumulative_of(dist);
  const std::size_t chunks = (options.trials + kTrialsPerChunk - 1) / kTrialsPerChunk;
  std::vector<ChunkSums> sums(chunks);
  std::exception_ptr failure;
  const auto n = static_cast<std::ptrdiff_t>(chunks);
#pragma omp parallel for num_threads(std::max(options.jobs, 1)) schedule(dynamic)
  for (std::ptrdiff_t c = 0; c < n; ++c) {
    try {
      sums[static_cast<std::size_t>(c)] =
          run_chunk(cumulative, params, dist.complete_pattern(), options, static_cast<std::size_t>(c));
    } catch (...) {
#pragma omp critical
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);
  return finish_report(dist, sums, options.trials);
}

SimReport monte_carlo_cost_serial(const AttemptDistribution& dist, const PolicyParams& params,
                                  const MonteCarloOptions& options) {
  check_mc_inputs(dist, params, options);
  const auto cumulative = cumulative_of(dist);
  const std::size_t chunks = (options.trials + kTrialsPerChunk - 1) / kTrialsPerChunk;
  std::vector<ChunkSums> sums;
  for (std::size_t c = 0; c < chunks; ++c)
    sums.push_back(run_chunk(cumulative, params, dist.complete_pattern(), options, c));
  return finish_report(dist, sums, options.trials);
}

PolicyParams params_from_report(const ConfusionReport& report, double abort_fraction,
                                std::size_t objects) {
  auto rate_or = [](std::optional<double> v, double fallback) { return v ? *v : fallback; };
  PolicyParams params;
  params.abort_fraction = abort_fraction;
  const bool per_slot = report.per_slot.size() == objects &&
                        std::all_of(report.per_slot.begin(), report.per_slot.end(),
                                    [](const ConfusionCounts& c) { return c.recall().has_value(); });
  for (std::size_t o = 0; o < objects; ++o) {
    const ConfusionCounts& counts = per_slot ? report.per_slot[o] : report.pooled;
    if (!counts.recall()) throw MissingReport("report has no present examples, recall undefined");
    params.recall.push_back(*counts.recall());
    // No absent examples: assume the detector never aborts.
    params.tn_rate.push_back(rate_or(counts.tn_rate(), 0.0));
  }
  return params;
}

std::vector<TlastRow> sweep_tlast(std::span<const TlastInput> inputs, const AttemptDistribution& dist,
                                  int total_steps, const MonteCarloOptions& options) {
  if (inputs.size() < 2) throw MissingReport("sweep needs reports for at least two t_last values");
  if (total_steps < 2) throw InvalidT("total steps must be >= 2");
  std::vector<TlastRow> rows;
  for (const auto& in : inputs) {
    if (in.t_last <= 0 || in.t_last > total_steps)
      throw InvalidArgument("t_last " + std::to_string(in.t_last) + " outside (0, T]");
    TlastRow row;
    row.t_last = in.t_last;
    row.f = static_cast<double>(in.t_last) / static_cast<double>(total_steps);
    if (!in.report.pooled.recall()) throw MissingReport("report for t_last " + std::to_string(in.t_last) + " has no positives");
    row.recall = *in.report.pooled.recall();
    row.tn_rate = in.report.pooled.tn_rate().value_or(0.0);
    const auto params = params_from_report(in.report, row.f, dist.objects);
    row.saving_cf = relative_saving(expected_cost_closed_form(dist, params), baseline_cost(dist));
    MonteCarloOptions opts = options;
    opts.seed = mix64(options.seed ^ static_cast<std::uint64_t>(in.t_last));
    const auto mc = monte_carlo_cost(dist, params, opts);
    row.saving_mc = mc.relative_saving;
    row.ci_lo = mc.saving_ci_low;
    row.ci_hi = mc.saving_ci_high;
    rows.push_back(row);
  }
  std::sort(rows.begin(), rows.end(), [](const TlastRow& a, const TlastRow& b) { return a.t_last < b.t_last; });
  return rows;
}

void write_sweep_tlast_csv(std::ostream& out, std::span<const TlastRow> rows) {
  out << "t_last,f,recall,tn_rate,saving_cf,saving_mc,ci_lo,ci_hi\n";
  for (const auto& r : rows) {
    out << r.t_last << ',' << fmt(r.f) << ',' << fmt(r.recall) << ',' << fmt(r.tn_rate) << ','
        << fmt(r.saving_cf) << ',' << fmt(r.saving_mc) << ',' << fmt(r.ci_lo) << ',' << fmt(r.ci_hi)
        << '\n';
  }
}

std::vector<ProbabilityRow> sweep_probability(std::span<const TlastParams> curves,
                                              std::span<const double> p_grid, double marker_p) {
  std::vector<double> grid(p_grid.begin(), p_grid.end());
  for (double p : grid) {
    if (!(p > 0.0 && p < 1.0)) throw InvalidArgument("p grid values must lie in (0, 1)");
  }
  if (std::find(grid.begin(), grid.end(), marker_p) == grid.end()) grid.push_back(marker_p);
  std::sort(grid.begin(), grid.end());

  std::vector<ProbabilityRow> rows;
  for (const auto& curve : curves) {
    for (double p : grid) {
      const auto dist = AttemptDistribution::with_completeness(p, curve.params.objects());
      const double saving = relative_saving(expected_cost_closed_form(dist, curve.params), baseline_cost(dist));
      rows.push_back({p, curve.t_last, saving});
    }
  }
  return rows;
}

void write_sweep_p_csv(std::ostream& out, std::span<const ProbabilityRow> rows) {
  out << "p,t_last,saving_cf\n";
  for (const auto& r : rows) out << fmt(r.p) << ',' << r.t_last << ',' << fmt(r.saving_cf) << '\n';
}

}  // namespace head
