// Serial reference vs OpenMP kernels: dataset generation, Monte Carlo, campaign.
// Usage: bench_kernels [jobs] [repeats]
#include <omp.h>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <functional>

#include "head/dataset.hpp"
#include "head/runtime.hpp"
#include "head/timesaver.hpp"

using namespace head;

namespace {

double best_of(int repeats, const std::function<void()>& fn) {
  double best = 1e300;
  for (int r = 0; r < repeats; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    fn();
    best = std::min(best, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  }
  return best;
}

void row(const char* name, double serial, double parallel, bool same) {
  std::printf("%-22s %10.3f %10.3f %8.2fx  %s\n", name, serial, parallel, serial / parallel,
              same ? "identical" : "MISMATCH");
}

}  // namespace

int main(int argc, char** argv) {
  const int jobs = argc > 1 ? std::atoi(argv[1]) : omp_get_max_threads();
  const int repeats = argc > 2 ? std::atoi(argv[2]) : 3;
  const auto catalog = Catalog::builtin();
  std::printf("jobs %d, best of %d\n", jobs, repeats);
  std::printf("%-22s %10s %10s %9s\n", "kernel", "serial s", "omp s", "speedup");

  {
    auto cfg = DatasetConfig::defaults();
    Dataset a, b;
    const double s = best_of(repeats, [&] { a = generate_dataset_serial(cfg, catalog); });
    const double p = best_of(repeats, [&] { b = generate_dataset(cfg, catalog, jobs); });
    bool same = a.tensors.size() == b.tensors.size();
    for (std::size_t i = 0; same && i < a.tensors.size(); ++i) same = a.tensors[i].final_image == b.tensors[i].final_image;
    row("generate_dataset", s, p, same);
  }
  {
    const auto dist = AttemptDistribution::with_completeness(0.59, 2);
    const auto params = PolicyParams::uniform(2, 0.16, 0.95, 0.8);
    MonteCarloOptions opts;
    opts.trials = 2'000'000;
    opts.jobs = jobs;
    SimReport a, b;
    const double s = best_of(repeats, [&] { a = monte_carlo_cost_serial(dist, params, opts); });
    const double p = best_of(repeats, [&] { b = monte_carlo_cost(dist, params, opts); });
    row("monte_carlo_cost", s, p, a.expected_cost == b.expected_cost);
  }
  {
    const auto cfg = DatasetConfig::defaults();
    std::vector<CampaignPrompt> prompts;
    for (const auto& pr : build_prompt_grid(cfg, catalog))
      prompts.push_back({pr.text, build_conditional_mixture(pr.targets, cfg.faithfulness, catalog)});
    DetectorModel inert;
    inert.steps = {8};
    inert.feature_mean.assign(kFeaturesPerStep, 0.0);
    inert.feature_std.assign(kFeaturesPerStep, 1.0);
    inert.weights.assign(kFeaturesPerStep, 0.0);
    inert.bias = 1.0;
    CampaignOptions opts;
    opts.runs_per_prompt = 10;
    opts.jobs = jobs;
    const auto schedule = make_schedule(cfg.steps);
    CampaignReport a, b;
    const double s = best_of(repeats, [&] {
      a = measure_campaign_serial(prompts, RunPolicy::baseline(), RunPolicy::head(inert), schedule, catalog, opts);
    });
    const double p = best_of(repeats, [&] {
      b = measure_campaign(prompts, RunPolicy::baseline(), RunPolicy::head(inert), schedule, catalog, opts);
    });
    row("measure_campaign", s, p, a.candidate_steps == b.candidate_steps);
  }
  return 0;
}
