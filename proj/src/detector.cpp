#include "head/detector.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "head/errors.hpp"
#include "head/rng.hpp"

namespace head {

namespace {

constexpr double kTopFraction = 0.05;
constexpr int kEnergyRadius = 2;  // 5x5 window
constexpr const char* kModelMagic = "head-detector";
constexpr int kModelVersion = 1;

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

std::vector<int> sorted_steps(std::span<const int> steps) {
  std::vector<int> out(steps.begin(), steps.end());
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

void check_step_count(DetectorVariant variant, std::size_t count) {
  if (variant == DetectorVariant::multi_timestep ? count < 2 : count != 1)
    throw InvalidArgument(to_string(variant) +
                          (variant == DetectorVariant::multi_timestep ? " needs at least two steps"
                                                                      : " needs exactly one step"));
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

template <typename T>
void write_list(std::ostream& out, const char* key, const std::vector<T>& values) {
  out << key;
  for (const auto& v : values) {
    if constexpr (std::is_floating_point_v<T>)
      out << ' ' << format_double(v);
    else
      out << ' ' << v;
  }
  out << '\n';
}

std::vector<std::string> read_line(std::istream& in, const char* key) {
  std::string line;
  if (!std::getline(in, line)) throw IoError(std::string("model file: missing '") + key + "'");
  std::istringstream ls(line);
  std::string head;
  ls >> head;
  if (head != key) throw IoError(std::string("model file: expected '") + key + "', got '" + head + "'");
  std::vector<std::string> values;
  for (std::string v; ls >> v;) values.push_back(v);
  return values;
}

std::vector<double> to_doubles(const std::vector<std::string>& tokens) {
  std::vector<double> out;
  for (const auto& t : tokens) {
    try {
      out.push_back(std::stod(t));
    } catch (const std::exception&) {
      throw IoError("model file: bad number '" + t + "'");
    }
  }
  return out;
}

}  // namespace

std::string to_string(DetectorVariant variant) {
  switch (variant) {
    case DetectorVariant::combined: return "combined";
    case DetectorVariant::attention_only: return "attention_only";
    case DetectorVariant::multi_timestep: return "multi_timestep";
  }
  return "combined";
}

DetectorVariant variant_from_string(std::string_view name) {
  if (name == "combined") return DetectorVariant::combined;
  if (name == "attention_only") return DetectorVariant::attention_only;
  if (name == "multi_timestep") return DetectorVariant::multi_timestep;
  throw InvalidArgument("unknown detector variant '" + std::string(name) + "'");
}

std::vector<double> step_features(const CapturedStep& capture, const ObjectSpec& object,
                                  bool with_pfi) {
  const auto it = capture.attention.find(object.id);
  if (it == capture.attention.end())
    throw UnknownObject("capture has no attention map for '" + object.id + "'");
  const Grid& attn = it->second;

  std::vector<double> f(kFeaturesPerStep, 0.0);
  f[0] = attn.max();
  f[1] = attn.mean();
  std::vector<double> sorted(attn.values().begin(), attn.values().end());
  const auto top = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::ceil(kTopFraction * static_cast<double>(sorted.size()))));
  std::partial_sort(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(top), sorted.end(),
                    std::greater<>());
  double top_sum = 0.0;
  for (std::size_t i = 0; i < top; ++i) top_sum += sorted[i];
  f[2] = top_sum / static_cast<double>(top);

  if (!with_pfi) return f;

  const Grid& pfi = capture.pfi;
  const int n = pfi.height();
  double best = -std::numeric_limits<double>::infinity();
  double second = -std::numeric_limits<double>::infinity();
  Position best_pos{};
  for (const auto& pos : object.candidate_positions) {
    const Grid g = object.placed(pos, n);
    const double response = pfi.dot(g) / g.squared_norm();
    if (response > best) {
      second = best;
      best = response;
      best_pos = pos;
    } else if (response > second) {
      second = response;
    }
  }
  f[3] = best;
  f[4] = object.candidate_positions.size() > 1 ? best - second : 0.0;
  double energy = 0.0;
  int cells = 0;
  for (int r = std::max(0, best_pos.row - kEnergyRadius); r <= std::min(n - 1, best_pos.row + kEnergyRadius); ++r) {
    for (int c = std::max(0, best_pos.col - kEnergyRadius); c <= std::min(pfi.width() - 1, best_pos.col + kEnergyRadius); ++c) {
      energy += pfi(r, c) * pfi(r, c);
      ++cells;
    }
  }
  f[5] = energy / cells;
  return f;
}

std::vector<double> extract_features(std::span<const CapturedStep> captures, std::string_view object,
                                     DetectorVariant variant, std::span<const int> steps,
                                     const Catalog& catalog) {
  const auto& obj = catalog.at(object);
  const bool with_pfi = variant != DetectorVariant::attention_only;
  std::vector<double> out;
  for (int step : sorted_steps(steps)) {
    const auto it = std::find_if(captures.begin(), captures.end(),
                                 [&](const CapturedStep& c) { return c.step == step; });
    if (it == captures.end()) throw MissingCapture("no capture at step " + std::to_string(step));
    const auto block = step_features(*it, obj, with_pfi);
    out.insert(out.end(), block.begin(), block.end());
  }
  return out;
}

int DetectorModel::decision_step() const {
  if (steps.empty()) throw InvalidArgument("detector has no steps");
  return *std::max_element(steps.begin(), steps.end());
}

void DetectorModel::validate() const {
  check_step_count(variant, steps.size());
  const std::size_t dim = steps.size() * kFeaturesPerStep;
  if (weights.size() != dim || feature_mean.size() != dim || feature_std.size() != dim)
    throw DimensionMismatch("detector parameter sizes do not match its steps");
  for (double s : feature_std) {
    if (!(s > 0.0)) throw InvalidArgument("feature std must be positive");
  }
  if (!(threshold >= 0.0 && threshold <= 1.0)) throw InvalidArgument("threshold must lie in [0, 1]");
}

void DetectorModel::write(std::ostream& out) const {
  out << kModelMagic << ' ' << kModelVersion << '\n';
  out << "variant " << to_string(variant) << '\n';
  write_list(out, "steps", steps);
  out << "threshold " << format_double(threshold) << '\n';
  out << "dimension " << dimension() << '\n';
  write_list(out, "mean", feature_mean);
  write_list(out, "std", feature_std);
  out << "bias " << format_double(bias) << '\n';
  write_list(out, "weights", weights);
}

DetectorModel DetectorModel::read(std::istream& in) {
  DetectorModel m;
  const auto magic = read_line(in, kModelMagic);
  if (magic.size() != 1 || magic[0] != std::to_string(kModelVersion))
    throw IoError("model file: unsupported version");
  const auto variant = read_line(in, "variant");
  if (variant.size() != 1) throw IoError("model file: bad variant line");
  m.variant = variant_from_string(variant[0]);
  for (const auto& s : read_line(in, "steps")) m.steps.push_back(std::stoi(s));
  m.threshold = to_doubles(read_line(in, "threshold")).at(0);
  const auto dim = static_cast<std::size_t>(to_doubles(read_line(in, "dimension")).at(0));
  m.feature_mean = to_doubles(read_line(in, "mean"));
  m.feature_std = to_doubles(read_line(in, "std"));
  m.bias = to_doubles(read_line(in, "bias")).at(0);
  m.weights = to_doubles(read_line(in, "weights"));
  if (m.weights.size() != dim) throw IoError("model file: dimension mismatch");
  m.validate();
  return m;
}

void DetectorModel::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  write(out);
}

DetectorModel DetectorModel::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  return read(in);
}

ExampleSet build_examples(const Dataset& dataset, Split split, DetectorVariant variant,
                          std::span<const int> steps, const Catalog& catalog) {
  ExampleSet set;
  for (std::size_t i : dataset.indices(split)) {
    const auto& entry = dataset.manifest.samples[i];
    const auto& captures = dataset.tensors[i].captures;
    for (std::size_t o = 0; o < entry.targets.size(); ++o) {
      set.features.push_back(extract_features(captures, entry.targets[o], variant, steps, catalog));
      set.labels.push_back(entry.labels[o]);
      set.objects.push_back(entry.targets[o]);
      set.slots.push_back(static_cast<int>(o));
    }
  }
  return set;
}

DetectorModel fit_logistic(const ExampleSet& train, DetectorVariant variant,
                           std::span<const int> steps, const TrainingHyper& hyper) {
  DetectorModel model;
  model.variant = variant;
  model.steps = sorted_steps(steps);
  check_step_count(variant, model.steps.size());
  if (train.features.empty()) throw DegenerateLabels("training split is empty");
  const std::size_t dim = model.steps.size() * kFeaturesPerStep;
  const std::size_t n = train.features.size();
  for (const auto& x : train.features) {
    if (x.size() != dim) throw DimensionMismatch("example dimension does not match steps");
  }
  const auto positives = static_cast<std::size_t>(std::count(train.labels.begin(), train.labels.end(), 1));
  if (positives == 0 || positives == n) throw DegenerateLabels("training labels contain a single class");

  // Standardization from the training split; constant features keep std 1.
  model.feature_mean.assign(dim, 0.0);
  model.feature_std.assign(dim, 0.0);
  for (const auto& x : train.features)
    for (std::size_t j = 0; j < dim; ++j) model.feature_mean[j] += x[j];
  for (double& m : model.feature_mean) m /= static_cast<double>(n);
  for (const auto& x : train.features)
    for (std::size_t j = 0; j < dim; ++j) {
      const double d = x[j] - model.feature_mean[j];
      model.feature_std[j] += d * d;
    }
  for (double& s : model.feature_std) {
    s = std::sqrt(s / static_cast<double>(n));
    if (!(s > 1e-12)) s = 1.0;
  }

  std::vector<double> xs(n * dim);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < dim; ++j)
      xs[i * dim + j] = (train.features[i][j] - model.feature_mean[j]) / model.feature_std[j];

  SplitMix64 rng(hyper.seed);
  model.weights.resize(dim);
  for (double& w : model.weights) w = 0.01 * rng.normal();
  model.bias = 0.0;

  std::vector<double> grad(dim);
  for (int epoch = 0; epoch < hyper.epochs; ++epoch) {
    std::fill(grad.begin(), grad.end(), 0.0);
    double grad_b = 0.0;
    double loss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double* x = &xs[i * dim];
      double logit = model.bias;
      for (std::size_t j = 0; j < dim; ++j) logit += model.weights[j] * x[j];
      const double p = sigmoid(logit);
      const double y = train.labels[i] ? 1.0 : 0.0;
      // log(1 + e^{-|l|}) form of the cross-entropy
      loss += std::max(logit, 0.0) - logit * y + std::log1p(std::exp(-std::abs(logit)));
      const double r = p - y;
      for (std::size_t j = 0; j < dim; ++j) grad[j] += r * x[j];
      grad_b += r;
    }
    if (!std::isfinite(loss)) throw NonFiniteLoss("loss diverged at epoch " + std::to_string(epoch));
    const double inv_n = 1.0 / static_cast<double>(n);
    for (std::size_t j = 0; j < dim; ++j)
      model.weights[j] -= hyper.learning_rate * (grad[j] * inv_n + hyper.l2 * model.weights[j]);
    model.bias -= hyper.learning_rate * grad_b * inv_n;
  }
  model.threshold = 0.5;
  return model;
}

double training_loss(const DetectorModel& model, const ExampleSet& examples, double l2) {
  double loss = 0.0;
  for (std::size_t i = 0; i < examples.features.size(); ++i) {
    const double p = predict_presence(model, examples.features[i]).score;
    const double y = examples.labels[i] ? 1.0 : 0.0;
    loss -= y * std::log(std::max(p, 1e-300)) + (1.0 - y) * std::log(std::max(1.0 - p, 1e-300));
  }
  loss /= static_cast<double>(examples.features.size());
  double w2 = 0.0;
  for (double w : model.weights) w2 += w * w;
  return loss + 0.5 * l2 * w2;
}

DetectorModel train_detector(const Dataset& dataset, DetectorVariant variant,
                             std::span<const int> steps, const TrainingHyper& hyper,
                             const Catalog& catalog) {
  const auto train = build_examples(dataset, Split::train, variant, steps, catalog);
  DetectorModel model = fit_logistic(train, variant, steps, hyper);
  if (hyper.target_recall) {
    const auto val = build_examples(dataset, Split::validation, variant, steps, catalog);
    std::vector<double> scores;
    for (const auto& x : val.features) scores.push_back(predict_presence(model, x).score);
    model.threshold = calibrate_threshold(scores, val.labels, *hyper.target_recall);
  }
  return model;
}

Prediction predict_presence(const DetectorModel& model, std::span<const double> features) {
  if (features.size() != model.dimension())
    throw DimensionMismatch("expected " + std::to_string(model.dimension()) + " features, got " +
                            std::to_string(features.size()));
  double logit = model.bias;
  for (std::size_t j = 0; j < features.size(); ++j)
    logit += model.weights[j] * (features[j] - model.feature_mean[j]) / model.feature_std[j];
  Prediction p;
  p.score = sigmoid(logit);
  p.present = p.score >= model.threshold ? 1 : 0;
  return p;
}

double calibrate_threshold(std::span<const double> scores, std::span<const std::uint8_t> labels,
                           double target_recall) {
  if (scores.size() != labels.size()) throw DimensionMismatch("scores and labels differ in length");
  if (!(target_recall > 0.0 && target_recall <= 1.0)) throw InvalidArgument("target recall must lie in (0, 1]");
  std::vector<double> positive;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (labels[i]) positive.push_back(scores[i]);
  }
  if (positive.empty()) throw DegenerateLabels("calibration split has no positive examples");
  std::sort(positive.begin(), positive.end(), std::greater<>());
  const auto needed = static_cast<std::size_t>(
      std::ceil(target_recall * static_cast<double>(positive.size()) - 1e-9));
  return positive[std::max<std::size_t>(needed, 1) - 1];
}

void ConfusionCounts::add(bool predicted_present, bool actually_present) {
  if (actually_present)
    ++(predicted_present ? tp : fn);
  else
    ++(predicted_present ? fp : tn);
}

std::optional<double> ConfusionCounts::recall() const {
  if (tp + fn == 0) return std::nullopt;
  return static_cast<double>(tp) / static_cast<double>(tp + fn);
}

std::optional<double> ConfusionCounts::tn_rate() const {
  if (tn + fp == 0) return std::nullopt;
  return static_cast<double>(tn) / static_cast<double>(tn + fp);
}

void ConfusionReport::add(const std::string& object, int slot, bool predicted_present,
                          bool actually_present) {
  pooled.add(predicted_present, actually_present);
  per_object[object].add(predicted_present, actually_present);
  if (slot >= 0) {
    if (per_slot.size() <= static_cast<std::size_t>(slot)) per_slot.resize(static_cast<std::size_t>(slot) + 1);
    per_slot[static_cast<std::size_t>(slot)].add(predicted_present, actually_present);
  }
}

ConfusionReport evaluate_predictions(const ExampleSet& examples,
                                     std::span<const std::uint8_t> predicted_present) {
  if (predicted_present.size() != examples.labels.size())
    throw DimensionMismatch("one prediction per example is required");
  ConfusionReport report;
  for (std::size_t i = 0; i < examples.labels.size(); ++i)
    report.add(examples.objects[i], examples.slots[i], predicted_present[i] != 0, examples.labels[i] != 0);
  return report;
}

ConfusionReport evaluate_detector(const DetectorModel& model, const Dataset& dataset, Split split,
                                  const Catalog& catalog) {
  const auto examples = build_examples(dataset, split, model.variant, model.steps, catalog);
  if (examples.features.empty()) throw InvalidArgument("evaluation split is empty");
  std::vector<std::uint8_t> predicted;
  predicted.reserve(examples.features.size());
  for (const auto& x : examples.features) predicted.push_back(predict_presence(model, x).present);
  return evaluate_predictions(examples, predicted);
}

}  // namespace head
