#include <cmath>
#include <sstream>

#include "doctest.h"
#include "head/errors.hpp"
#include "head/runtime.hpp"

using namespace head;

namespace {

const Catalog& catalog() {
  static const Catalog cat = Catalog::builtin();
  return cat;
}

MixtureSpec mixture(double q) {
  const std::vector<std::string> t{"cat", "bench"};
  return build_conditional_mixture(t, q, catalog());
}

DetectorModel inert_model(int step) {
  DetectorModel m;
  m.steps = {step};
  m.feature_mean.assign(kFeaturesPerStep, 0.0);
  m.feature_std.assign(kFeaturesPerStep, 1.0);
  m.weights.assign(kFeaturesPerStep, 0.0);
  return m;
}

DetectorModel trained_model() {
  auto cfg = DatasetConfig::defaults();
  cfg.seeds_per_prompt = 4;
  cfg.critical_steps = {8};
  const auto ds = generate_dataset(cfg, catalog());
  return train_detector(ds, DetectorVariant::combined, std::vector<int>{8}, TrainingHyper{}, catalog());
}

void check_trace(const RunTrace& trace, int t_last, int T) {
  REQUIRE(!trace.attempts.empty());
  long long steps = 0;
  for (std::size_t i = 0; i < trace.attempts.size(); ++i) {
    const auto& a = trace.attempts[i];
    const bool last = i + 1 == trace.attempts.size();
    CHECK((a.outcome == AttemptOutcome::completed_complete) == last);
    if (a.outcome == AttemptOutcome::aborted) {
      CHECK(a.steps == t_last);
      CHECK(std::find(a.verdicts.begin(), a.verdicts.end(), 0) != a.verdicts.end());
      CHECK(a.labels.empty());
    } else {
      CHECK(a.steps == T);
    }
    steps += a.steps;
  }
  CHECK(steps == trace.total_steps);
  CHECK(trace.accepted_seed == trace.attempts.back().seed);
}

}  // namespace

TEST_CASE("faithful mixture accepts the first attempt") {
  const auto s = make_schedule(50);
  SeedStream seeds(1);
  const auto trace = run_until_complete(mixture(1.0), RunPolicy::head(inert_model(8)), seeds, s, catalog());
  REQUIRE(trace.attempts.size() == 1);
  CHECK(trace.total_steps == 50);
  CHECK(trace.attempts[0].outcome == AttemptOutcome::completed_complete);
  CHECK(trace.accepted_seed == derive_seed(1, 0, 0));
}

TEST_CASE("baseline attempts are geometric") {
  const auto s = make_schedule(50);
  const auto m = mixture(std::sqrt(0.59));
  const int runs = 1000;
  double attempts = 0;
  for (int r = 0; r < runs; ++r) {
    SeedStream seeds(7, static_cast<std::uint64_t>(r));
    const auto trace = run_until_complete(m, RunPolicy::baseline(), seeds, s, catalog());
    check_trace(trace, 0, 50);
    attempts += static_cast<double>(trace.attempts.size());
  }
  const double p = 0.59;
  const double se = std::sqrt((1 - p) / (p * p) / runs);
  CHECK(std::abs(attempts / runs - 1 / p) <= 3 * se);
}

TEST_CASE("inert detector reproduces the baseline seed-for-seed") {
  const auto s = make_schedule(50);
  const auto m = mixture(0.6);
  for (std::uint64_t r = 0; r < 30; ++r) {
    SeedStream a(3, r), b(3, r);
    const auto base = run_until_complete(m, RunPolicy::baseline(), a, s, catalog());
    const auto head = run_until_complete(m, RunPolicy::head(inert_model(16)), b, s, catalog());
    REQUIRE(base.attempts.size() == head.attempts.size());
    for (std::size_t i = 0; i < base.attempts.size(); ++i) {
      CHECK(base.attempts[i].seed == head.attempts[i].seed);
      CHECK(base.attempts[i].labels == head.attempts[i].labels);
    }
    CHECK(base.total_steps == head.total_steps);
  }
}

TEST_CASE("trained detector traces obey the accounting identity") {
  const auto s = make_schedule(50);
  const auto m = mixture(std::sqrt(0.59));
  const auto policy = RunPolicy::head(trained_model());
  bool saw_abort = false;
  for (std::uint64_t r = 0; r < 60; ++r) {
    SeedStream seeds(11, r);
    const auto trace = run_until_complete(m, policy, seeds, s, catalog());
    check_trace(trace, 8, 50);
    for (const auto& a : trace.attempts) saw_abort |= a.outcome == AttemptOutcome::aborted;
  }
  CHECK(saw_abort);
}

TEST_CASE("restart limit") {
  const auto s = make_schedule(50);
  auto policy = RunPolicy::head(inert_model(8));
  policy.model->bias = -10.0;  // always aborts
  policy.max_restarts = 5;
  SeedStream seeds(1);
  CHECK_THROWS_AS(run_until_complete(mixture(0.9), policy, seeds, s, catalog()), RestartLimitExceeded);
  RunPolicy missing;
  missing.mode = RunMode::head;
  CHECK_THROWS(missing.validate(s));
}

TEST_CASE("campaigns") {
  const auto s = make_schedule(50);
  const std::vector<CampaignPrompt> prompts{{"0", mixture(0.7)}, {"1", mixture(0.8)}};
  CampaignOptions opts;
  opts.runs_per_prompt = 12;
  opts.bootstrap_resamples = 200;

  const auto same = measure_campaign(prompts, RunPolicy::baseline(), RunPolicy::baseline(), s, catalog(), opts);
  CHECK(same.pooled_saving == 0.0);
  CHECK(same.reference_steps == same.candidate_steps);

  const auto inert = measure_campaign(prompts, RunPolicy::baseline(), RunPolicy::head(inert_model(8)), s,
                                      catalog(), opts);
  CHECK(inert.reference_steps == inert.candidate_steps);
  CHECK(inert.reference_attempts == inert.candidate_attempts);

  const auto model = trained_model();
  opts.jobs = 3;
  const auto par = measure_campaign(prompts, RunPolicy::baseline(), RunPolicy::head(model), s, catalog(), opts);
  const auto ser = measure_campaign_serial(prompts, RunPolicy::baseline(), RunPolicy::head(model), s, catalog(), opts);
  CHECK(par.candidate_steps == ser.candidate_steps);
  CHECK(par.pooled_saving == ser.pooled_saving);
  CHECK(par.pooled_ci_lo == ser.pooled_ci_lo);
  CHECK(par.pooled_ci_lo <= par.pooled_saving);
  CHECK(par.pooled_saving <= par.pooled_ci_hi);
  REQUIRE(par.rows.size() == 6);
  CHECK(par.rows.back().prompt_id == "all");
  CHECK(par.rows.back().runs == 24);

  std::ostringstream csv;
  write_campaign_csv(csv, par.rows);
  CHECK(csv.str().rfind("prompt_id,policy,runs,mean_steps,saving,ci_lo,ci_hi\n0,baseline,12,", 0) == 0);
}
