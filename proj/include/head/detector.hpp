#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "head/dataset.hpp"
#include "head/diffusion.hpp"
#include "head/scene.hpp"

namespace head {

enum class DetectorVariant { combined, attention_only, multi_timestep };
std::string to_string(DetectorVariant variant);
DetectorVariant variant_from_string(std::string_view name);

// Per critical step: attn_max, attn_mean, attn_topmass, pfi_match,
// pfi_match_gap, pfi_local_energy.
inline constexpr std::size_t kFeaturesPerStep = 6;
inline constexpr std::size_t kFirstPfiFeature = 3;

// One block of features for `object` from a single capture. The PFI block is
// zeroed when `with_pfi` is false.
std::vector<double> step_features(const CapturedStep& capture, const ObjectSpec& object,
                                  bool with_pfi);

// Concatenates per-step blocks in ascending step order.
std::vector<double> extract_features(std::span<const CapturedStep> captures, std::string_view object,
                                     DetectorVariant variant, std::span<const int> steps,
                                     const Catalog& catalog);

struct DetectorModel {
  DetectorVariant variant = DetectorVariant::combined;
  std::vector<int> steps;  // critical steps consumed, ascending
  std::vector<double> feature_mean;
  std::vector<double> feature_std;
  std::vector<double> weights;
  double bias = 0.0;
  double threshold = 0.5;

  std::size_t dimension() const noexcept { return weights.size(); }
  int decision_step() const;  // max(steps)
  void validate() const;

  void write(std::ostream& out) const;
  static DetectorModel read(std::istream& in);
  void save(const std::filesystem::path& path) const;
  static DetectorModel load(const std::filesystem::path& path);
};

struct TrainingHyper {
  double learning_rate = 0.1;
  int epochs = 500;
  double l2 = 1e-4;
  std::uint64_t seed = 7;
  // When set, the threshold is calibrated on the validation split.
  std::optional<double> target_recall;
};

// Flattened per-(sample, target) examples of one split.
struct ExampleSet {
  std::vector<std::vector<double>> features;
  std::vector<std::uint8_t> labels;
  std::vector<std::string> objects;  // target id of each example
  std::vector<int> slots;            // target position within its prompt
};

ExampleSet build_examples(const Dataset& dataset, Split split, DetectorVariant variant,
                          std::span<const int> steps, const Catalog& catalog);

// Full-batch gradient descent on the L2-regularized logistic loss over
// standardized features. Threshold 0.5.
DetectorModel fit_logistic(const ExampleSet& train, DetectorVariant variant,
                           std::span<const int> steps, const TrainingHyper& hyper);

double training_loss(const DetectorModel& model, const ExampleSet& examples, double l2);

DetectorModel train_detector(const Dataset& dataset, DetectorVariant variant,
                             std::span<const int> steps, const TrainingHyper& hyper,
                             const Catalog& catalog);

struct Prediction {
  std::uint8_t present = 1;
  double score = 0.5;
};

// Present iff sigmoid(w . x_std + b) >= threshold; ties keep generating.
Prediction predict_presence(const DetectorModel& model, std::span<const double> features);

// Largest threshold whose recall on (scores, labels) is at least `target`.
double calibrate_threshold(std::span<const double> scores, std::span<const std::uint8_t> labels,
                           double target_recall);

struct ConfusionCounts {
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;

  void add(bool predicted_present, bool actually_present);
  std::optional<double> recall() const;   // TP / (TP + FN)
  std::optional<double> tn_rate() const;  // TN / (TN + FP)
  std::size_t total() const { return tp + fp + tn + fn; }
};

struct ConfusionReport {
  ConfusionCounts pooled;
  std::map<std::string, ConfusionCounts> per_object;
  std::vector<ConfusionCounts> per_slot;

  void add(const std::string& object, int slot, bool predicted_present, bool actually_present);
};

ConfusionReport evaluate_predictions(const ExampleSet& examples,
                                     std::span<const std::uint8_t> predicted_present);
ConfusionReport evaluate_detector(const DetectorModel& model, const Dataset& dataset, Split split,
                                  const Catalog& catalog);

}  // namespace head
