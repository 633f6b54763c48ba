#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "head/dataset.hpp"
#include "head/detector.hpp"

#include "json.hpp"

namespace head {

struct DetectorSettings {
  DetectorVariant variant = DetectorVariant::combined;
  std::vector<int> steps{16};
  TrainingHyper hyper;
};

struct TimesaverSettings {
  std::size_t trials = 100'000;
  std::uint64_t seed = 1;
  double completeness = 0.59;
  std::vector<double> p_grid{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
};

struct RuntimeSettings {
  std::size_t runs = 100;
  std::uint64_t root_seed = 1;
  std::size_t max_restarts = 1000;
};

// Everything an experiment needs. Read from JSON; unknown keys are rejected.
struct ExperimentConfig {
  DatasetConfig dataset = DatasetConfig::defaults();
  std::optional<std::filesystem::path> catalog;  // built-in catalog when empty
  DetectorSettings detector;
  TimesaverSettings timesaver;
  RuntimeSettings runtime;
  int jobs = 1;

  nlohmann::json to_json() const;
  static ExperimentConfig from_json(const nlohmann::json& j);
  static ExperimentConfig load(const std::filesystem::path& path);
};

std::vector<int> parse_int_list(const std::string& text);
std::vector<double> parse_double_list(const std::string& text);
std::vector<std::string> parse_string_list(const std::string& text);

}  // namespace head
