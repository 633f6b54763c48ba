#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "head/detector.hpp"
#include "head/diffusion.hpp"
#include "head/rng.hpp"
#include "head/scene.hpp"

namespace head {

enum class RunMode { baseline, head };
std::string to_string(RunMode mode);

struct RunPolicy {
  RunMode mode = RunMode::baseline;
  std::optional<DetectorModel> model;  // required in head mode
  std::size_t max_restarts = 1000;     // attempts allowed per run
  double label_threshold = 0.5;

  static RunPolicy baseline();
  static RunPolicy head(DetectorModel model);
  void validate(const NoiseSchedule& schedule) const;
};

enum class AttemptOutcome { aborted, completed_incomplete, completed_complete };
std::string to_string(AttemptOutcome outcome);

struct Attempt {
  std::uint64_t seed = 0;
  AttemptOutcome outcome = AttemptOutcome::completed_incomplete;
  int steps = 0;                       // denoising steps consumed
  std::vector<std::uint8_t> verdicts;  // detector verdicts, empty in baseline mode
  std::vector<std::uint8_t> labels;    // oracle labels, empty when aborted
};

struct RunTrace {
  std::vector<Attempt> attempts;
  long long total_steps = 0;
  std::uint64_t accepted_seed = 0;
};

// Attempt seeds: derive_seed(root, stream, 0), derive_seed(root, stream, 1), ...
class SeedStream {
public:
  SeedStream(std::uint64_t root, std::uint64_t stream = 0) : root_(root), stream_(stream) {}
  std::uint64_t next() { return derive_seed(root_, stream_, counter_++); }

private:
  std::uint64_t root_;
  std::uint64_t stream_;
  std::uint64_t counter_ = 0;
};

// Generates with fresh seeds until an oracle-complete image is accepted. In
// head mode the detector is consulted once, at its latest step, and any
// "absent" verdict aborts the attempt.
RunTrace run_until_complete(const MixtureSpec& mixture, const RunPolicy& policy, SeedStream& seeds,
                            const NoiseSchedule& schedule, const Catalog& catalog);

struct CampaignPrompt {
  std::string prompt_id;
  MixtureSpec mixture;
};

struct CampaignRow {
  std::string prompt_id;  // "all" for the pooled rows
  std::string policy;
  std::size_t runs = 0;
  double mean_steps = 0.0;
  double saving = 0.0;  // relative to the reference policy
  double ci_lo = 0.0;
  double ci_hi = 0.0;
};

struct CampaignReport {
  std::vector<CampaignRow> rows;
  double pooled_saving = 0.0;
  double pooled_ci_lo = 0.0;
  double pooled_ci_hi = 0.0;
  std::vector<long long> reference_steps;  // per run, prompt-major
  std::vector<long long> candidate_steps;
  std::vector<std::size_t> reference_attempts;
  std::vector<std::size_t> candidate_attempts;
};

struct CampaignOptions {
  std::size_t runs_per_prompt = 100;
  std::uint64_t root_seed = 1;
  int jobs = 1;
  std::size_t bootstrap_resamples = 1000;
};

// Runs both policies on the same seed streams. Savings are 1 - steps(candidate)
// / steps(reference) with paired bootstrap 95% CIs.
CampaignReport measure_campaign(std::span<const CampaignPrompt> prompts, const RunPolicy& reference,
                                const RunPolicy& candidate, const NoiseSchedule& schedule,
                                const Catalog& catalog, const CampaignOptions& options);
CampaignReport measure_campaign_serial(std::span<const CampaignPrompt> prompts,
                                       const RunPolicy& reference, const RunPolicy& candidate,
                                       const NoiseSchedule& schedule, const Catalog& catalog,
                                       const CampaignOptions& options);

void write_campaign_csv(std::ostream& out, std::span<const CampaignRow> rows);

}  // namespace head
