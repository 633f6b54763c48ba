#include "head/runtime.hpp"

#include <algorithm>
#include <array>
#include <cstdio>
#include <exception>
#include <numeric>
#include <ostream>

#include "head/dataset.hpp"
#include "head/errors.hpp"
#include "head/rng.hpp"

namespace head {

namespace {

constexpr std::uint64_t kBootstrapSalt = 0xb007b007ULL;

CapturedStep rounded(CapturedStep cap) {
  cap.pfi = cap.pfi.to_float_precision();
  for (auto& [id, map] : cap.attention) map = map.to_float_precision();
  return cap;
}

Attempt run_attempt(const MixtureSpec& mixture, const RunPolicy& policy, std::uint64_t seed,
                    const NoiseSchedule& schedule, const Catalog& catalog) {
  Attempt attempt;
  attempt.seed = seed;
  Trajectory traj(mixture, schedule, seed);
  if (policy.mode == RunMode::head) {
    const auto& model = *policy.model;
    std::vector<CapturedStep> captures;
    for (int step : model.steps) {
      traj.run_to_step(step);
      captures.push_back(rounded(traj.capture()));
    }
    bool abort = false;
    for (const auto& id : mixture.targets) {
      const auto features = extract_features(captures, id, model.variant, model.steps, catalog);
      const auto verdict = predict_presence(model, features).present;
      attempt.verdicts.push_back(verdict);
      if (!verdict) abort = true;
    }
    if (abort) {
      attempt.outcome = AttemptOutcome::aborted;
      attempt.steps = model.decision_step();
      return attempt;
    }
  }
  const Grid final_image = traj.finish().to_float_precision();
  attempt.labels = label_image(final_image, mixture.targets, catalog, policy.label_threshold);
  attempt.steps = schedule.steps;
  const bool complete = std::all_of(attempt.labels.begin(), attempt.labels.end(),
                                    [](std::uint8_t l) { return l != 0; });
  attempt.outcome = complete ? AttemptOutcome::completed_complete : AttemptOutcome::completed_incomplete;
  return attempt;
}

struct RunPair {
  RunTrace reference;
  RunTrace candidate;
};

RunPair run_pair(const CampaignPrompt& prompt, std::size_t prompt_index, std::size_t run,
                 const RunPolicy& reference, const RunPolicy& candidate,
                 const NoiseSchedule& schedule, const Catalog& catalog, std::uint64_t root_seed) {
  const std::uint64_t stream_root = derive_seed(root_seed, prompt_index, run);
  SeedStream ref_seeds(stream_root);
  SeedStream cand_seeds(stream_root);
  return {run_until_complete(prompt.mixture, reference, ref_seeds, schedule, catalog),
          run_until_complete(prompt.mixture, candidate, cand_seeds, schedule, catalog)};
}

double saving_of(const std::vector<long long>& ref, const std::vector<long long>& cand,
                 std::span<const std::size_t> idx) {
  double r = 0.0, c = 0.0;
  for (std::size_t i : idx) {
    r += static_cast<double>(ref[i]);
    c += static_cast<double>(cand[i]);
  }
  return 1.0 - c / r;
}

// Paired percentile bootstrap over the runs in [begin, end).
std::pair<double, double> bootstrap_ci(const std::vector<long long>& ref,
                                       const std::vector<long long>& cand, std::size_t begin,
                                       std::size_t end, std::size_t resamples, std::uint64_t seed) {
  const std::size_t n = end - begin;
  if (n == 0 || resamples == 0) return {0.0, 0.0};
  SplitMix64 rng(seed);
  std::vector<double> stats;
  stats.reserve(resamples);
  std::vector<std::size_t> idx(n);
  for (std::size_t b = 0; b < resamples; ++b) {
    for (auto& i : idx) i = begin + static_cast<std::size_t>(rng.next_u64() % n);
    stats.push_back(saving_of(ref, cand, idx));
  }
  std::sort(stats.begin(), stats.end());
  auto at = [&](double q) {
    const auto k = static_cast<std::size_t>(q * static_cast<double>(resamples - 1) + 0.5);
    return stats[std::min(k, resamples - 1)];
  };
  return {at(0.025), at(0.975)};
}

CampaignReport summarize(std::span<const CampaignPrompt> prompts, const RunPolicy& reference,
                         const RunPolicy& candidate, const CampaignOptions& options,
                         std::vector<RunPair> pairs) {
  CampaignReport report;
  for (const auto& p : pairs) {
    report.reference_steps.push_back(p.reference.total_steps);
    report.candidate_steps.push_back(p.candidate.total_steps);
    report.reference_attempts.push_back(p.reference.attempts.size());
    report.candidate_attempts.push_back(p.candidate.attempts.size());
  }
  const std::size_t runs = options.runs_per_prompt;
  auto mean_steps = [](const std::vector<long long>& v, std::size_t b, std::size_t e) {
    return static_cast<double>(std::accumulate(v.begin() + static_cast<std::ptrdiff_t>(b),
                                               v.begin() + static_cast<std::ptrdiff_t>(e), 0LL)) /
           static_cast<double>(e - b);
  };
  auto emit = [&](const std::string& id, std::size_t b, std::size_t e, std::uint64_t salt) {
    std::vector<std::size_t> all(e - b);
    std::iota(all.begin(), all.end(), b);
    const double saving = saving_of(report.reference_steps, report.candidate_steps, all);
    const auto [lo, hi] = bootstrap_ci(report.reference_steps, report.candidate_steps, b, e,
                                       options.bootstrap_resamples,
                                       mix64(options.root_seed ^ kBootstrapSalt ^ mix64(salt)));
    report.rows.push_back({id, to_string(reference.mode), e - b,
                           mean_steps(report.reference_steps, b, e), 0.0, 0.0, 0.0});
    report.rows.push_back({id, to_string(candidate.mode), e - b,
                           mean_steps(report.candidate_steps, b, e), saving, lo, hi});
    return std::array<double, 3>{saving, lo, hi};
  };
  for (std::size_t p = 0; p < prompts.size(); ++p) emit(prompts[p].prompt_id, p * runs, (p + 1) * runs, p + 1);
  const auto pooled = emit("all", 0, pairs.size(), 0);
  report.pooled_saving = pooled[0];
  report.pooled_ci_lo = pooled[1];
  report.pooled_ci_hi = pooled[2];
  return report;
}

void check_campaign(std::span<const CampaignPrompt> prompts, const RunPolicy& reference,
                    const RunPolicy& candidate, const NoiseSchedule& schedule,
                    const CampaignOptions& options) {
  if (prompts.empty()) throw InvalidArgument("campaign needs at least one prompt");
  if (options.runs_per_prompt == 0) throw InvalidArgument("runs per prompt must be >= 1");
  reference.validate(schedule);
  candidate.validate(schedule);
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

}  // namespace

std::string to_string(RunMode mode) { return mode == RunMode::head ? "head" : "baseline"; }

std::string to_string(AttemptOutcome outcome) {
  switch (outcome) {
    case AttemptOutcome::aborted: return "aborted";
    case AttemptOutcome::completed_incomplete: return "completed-incomplete";
    case AttemptOutcome::completed_complete: return "completed-complete";
  }
  return "aborted";
}

RunPolicy RunPolicy::baseline() { return {}; }

RunPolicy RunPolicy::head(DetectorModel model) {
  RunPolicy p;
  p.mode = RunMode::head;
  p.model = std::move(model);
  return p;
}

void RunPolicy::validate(const NoiseSchedule& schedule) const {
  if (max_restarts == 0) throw InvalidArgument("max_restarts must be >= 1");
  if (mode == RunMode::baseline) return;
  if (!model) throw InvalidArgument("head mode requires a detector model");
  model->validate();
  for (int s : model->steps) {
    if (s < 0 || s >= schedule.steps)
      throw InvalidArgument("detector step " + std::to_string(s) + " is not capturable with T = " +
                            std::to_string(schedule.steps));
  }
}

RunTrace run_until_complete(const MixtureSpec& mixture, const RunPolicy& policy, SeedStream& seeds,
                            const NoiseSchedule& schedule, const Catalog& catalog) {
  policy.validate(schedule);
  RunTrace trace;
  for (std::size_t i = 0; i < policy.max_restarts; ++i) {
    Attempt attempt = run_attempt(mixture, policy, seeds.next(), schedule, catalog);
    trace.total_steps += attempt.steps;
    const bool accepted = attempt.outcome == AttemptOutcome::completed_complete;
    if (accepted) trace.accepted_seed = attempt.seed;
    trace.attempts.push_back(std::move(attempt));
    if (accepted) return trace;
  }
  throw RestartLimitExceeded("no complete image within " + std::to_string(policy.max_restarts) + " attempts");
}

CampaignReport measure_campaign(std::span<const CampaignPrompt> prompts, const RunPolicy& reference,
                                const RunPolicy& candidate, const NoiseSchedule& schedule,
                                const Catalog& catalog, const CampaignOptions& options) {
  check_campaign(prompts, reference, candidate, schedule, options);
  const std::size_t total = prompts.size() * options.runs_per_prompt;
  std::vector<RunPair> pairs(total);
  std::exception_ptr failure;
  const auto n = static_cast<std::ptrdiff_t>(total);
#pragma omp parallel for num_threads(std::max(options.jobs, 1)) schedule(dynamic, 4)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    const auto k = static_cast<std::size_t>(i);
    const std::size_t p = k / options.runs_per_prompt;
    try {
      pairs[k] = run_pair(prompts[p], p, k % options.runs_per_prompt, reference, candidate, schedule,
                          catalog, options.root_seed);
    } catch (...) {
#pragma omp critical
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);
  return summarize(prompts, reference, candidate, options, std::move(pairs));
}

CampaignReport measure_campaign_serial(std::span<const CampaignPrompt> prompts,
                                       const RunPolicy& reference, const RunPolicy& candidate,
                                       const NoiseSchedule& schedule, const Catalog& catalog,
                                       const CampaignOptions& options) {
  check_campaign(prompts, reference, candidate, schedule, options);
  std::vector<RunPair> pairs;
  for (std::size_t p = 0; p < prompts.size(); ++p) {
    for (std::size_t r = 0; r < options.runs_per_prompt; ++r)
      pairs.push_back(run_pair(prompts[p], p, r, reference, candidate, schedule, catalog, options.root_seed));
  }
  return summarize(prompts, reference, candidate, options, std::move(pairs));
}

void write_campaign_csv(std::ostream& out, std::span<const CampaignRow> rows) {
  out << "prompt_id,policy,runs,mean_steps,saving,ci_lo,ci_hi\n";
  for (const auto& r : rows) {
    out << r.prompt_id << ',' << r.policy << ',' << r.runs << ',' << fmt(r.mean_steps) << ','
        << fmt(r.saving) << ',' << fmt(r.ci_lo) << ',' << fmt(r.ci_hi) << '\n';
  }
}

}  // namespace head
