#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "head/diffusion.hpp"
#include "head/scene.hpp"

#include "json.hpp"

namespace head {

inline constexpr int kManifestFormatVersion = 1;
inline constexpr double kDefaultLabelThreshold = 0.5;

// sqrt(0.59): two independent objects complete together 59% of the time.
double faithfulness_for_completeness(double completeness, std::size_t objects);

struct DatasetConfig {
  std::vector<std::string> subjects;
  std::vector<std::string> objects;
  int seeds_per_prompt = 12;
  int steps = kDefaultSteps;
  std::vector<int> critical_steps{0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 12, 14, 16, 18, 20, 25, 40};
  double faithfulness = 0.0;
  std::uint64_t global_seed = 20240601;
  double label_threshold = kDefaultLabelThreshold;

  // Built-in catalog lists, faithfulness tuned to 59% completeness.
  static DatasetConfig defaults();
  void validate() const;

  nlohmann::json to_json() const;
  static DatasetConfig from_json(const nlohmann::json& j);
};

enum class Split { train, validation, test };
std::string to_string(Split split);
Split split_from_string(const std::string& name);

// |subjects| x |objects| prompts "a {subject} and a {object}", subject-major.
std::vector<Prompt> build_prompt_grid(const DatasetConfig& config, const Catalog& catalog);

// Normalized matched-filter response <image, g> / ||g||^2 of `object` at `at`.
double matched_filter_response(const Grid& image, const ObjectSpec& object, Position at);

// 1 for each target whose best response over its candidate positions is >= threshold.
std::vector<std::uint8_t> label_image(const Grid& image, std::span<const std::string> targets,
                                      const Catalog& catalog,
                                      double threshold = kDefaultLabelThreshold);

struct SampleEntry {
  std::string sample_id;
  int prompt_index = 0;
  int seed_index = 0;
  std::uint64_t seed = 0;
  std::vector<std::string> targets;
  std::vector<std::uint8_t> labels;
  int nearest_component = -1;
  Split split = Split::train;
  std::vector<int> capture_steps;
  std::vector<double> epsilon_norms;

  bool complete() const;
};

struct PromptStats {
  int prompt_index = 0;
  std::string prompt;
  Split split = Split::train;
  int samples = 0;
  int complete = 0;
};

struct DatasetManifest {
  int format_version = kManifestFormatVersion;
  DatasetConfig config;
  std::vector<SampleEntry> samples;  // prompt-major, seed-minor
  std::vector<PromptStats> prompts;
};

struct SampleTensors {
  std::vector<CapturedStep> captures;  // ascending step, float-rounded
  Grid final_image;                    // float-rounded

  const CapturedStep& at_step(int step) const;  // throws MissingCapture
};

struct Dataset {
  DatasetManifest manifest;
  std::vector<SampleTensors> tensors;  // parallel to manifest.samples

  std::vector<std::size_t> indices(Split split) const;
};

// Prompt-disjoint 70/15/15 split from a seeded shuffle of prompt indices.
std::vector<Split> split_prompts(std::size_t prompt_count, std::uint64_t global_seed);

// Runs every (prompt, seed) generation, labels it and assembles the manifest.
// The parallel and serial variants produce identical datasets.
Dataset generate_dataset(const DatasetConfig& config, const Catalog& catalog, int jobs = 1);
Dataset generate_dataset_serial(const DatasetConfig& config, const Catalog& catalog);

// manifest.jsonl plus tensors/<sample_id>/<step>_{pfi|attn_<obj>}.bin and final.bin.
void save_dataset(const Dataset& dataset, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);
DatasetManifest load_manifest(const std::filesystem::path& dir);
void write_manifest(std::ostream& out, const DatasetManifest& manifest);
DatasetManifest read_manifest(std::istream& in);

struct DatasetStats {
  std::size_t samples = 0;
  double complete_fraction = 0.0;
  double prompts_at_least_1 = 0.0;
  double prompts_at_least_3 = 0.0;
  std::map<std::string, double> object_presence;  // marginal label rate per object id
  std::map<std::string, std::size_t> object_counts;
};

// Derives everything from the sample labels; stored prompt stats are not trusted.
DatasetStats dataset_stats(const DatasetManifest& manifest);

}  // namespace head
