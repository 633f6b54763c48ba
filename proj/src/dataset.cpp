#include "head/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "head/errors.hpp"
#include "head/rng.hpp"
#include "head/tensor_io.hpp"

namespace head {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::uint64_t kSplitSalt = 0x5b1175eedULL;

std::string make_sample_id(int prompt_index, int seed_index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "p%04d_s%03d", prompt_index, seed_index);
  return buf;
}

// Runs one generation and rounds every stored tensor to float, so that the
// in-memory dataset equals what a save/load round-trip returns.
std::pair<SampleEntry, SampleTensors> generate_sample(const DatasetConfig& config,
                                                      const Catalog& catalog,
                                                      const std::vector<Prompt>& prompts,
                                                      const std::vector<MixtureSpec>& mixtures,
                                                      const std::vector<Split>& splits,
                                                      const NoiseSchedule& schedule,
                                                      std::size_t flat_index) {
  const auto per_prompt = static_cast<std::size_t>(config.seeds_per_prompt);
  const int prompt_index = static_cast<int>(flat_index / per_prompt);
  const int seed_index = static_cast<int>(flat_index % per_prompt);
  const auto p = static_cast<std::size_t>(prompt_index);

  SampleEntry entry;
  entry.sample_id = make_sample_id(prompt_index, seed_index);
  entry.prompt_index = prompt_index;
  entry.seed_index = seed_index;
  entry.seed = derive_seed(config.global_seed, static_cast<std::uint64_t>(prompt_index),
                           static_cast<std::uint64_t>(seed_index));
  entry.targets = prompts[p].targets;
  entry.split = splits[p];

  auto record = sample_with_capture(mixtures[p], schedule, entry.seed, config.critical_steps);
  SampleTensors tensors;
  tensors.final_image = record.final_image.to_float_precision();
  entry.labels = label_image(tensors.final_image, entry.targets, catalog, config.label_threshold);
  entry.nearest_component = record.nearest_component;
  for (auto& cap : record.captures) {
    entry.capture_steps.push_back(cap.step);
    entry.epsilon_norms.push_back(cap.epsilon_norm);
    cap.pfi = cap.pfi.to_float_precision();
    for (auto& [id, map] : cap.attention) map = map.to_float_precision();
    tensors.captures.push_back(std::move(cap));
  }
  return {std::move(entry), std::move(tensors)};
}

struct GenerationPlan {
  std::vector<Prompt> prompts;
  std::vector<MixtureSpec> mixtures;
  std::vector<Split> splits;
  NoiseSchedule schedule;
  std::size_t total = 0;
};

GenerationPlan plan_generation(const DatasetConfig& config, const Catalog& catalog) {
  config.validate();
  GenerationPlan plan;
  plan.prompts = build_prompt_grid(config, catalog);
  for (const auto& prompt : plan.prompts)
    plan.mixtures.push_back(build_conditional_mixture(prompt.targets, config.faithfulness, catalog));
  plan.splits = split_prompts(plan.prompts.size(), config.global_seed);
  plan.schedule = make_schedule(config.steps);
  plan.total = plan.prompts.size() * static_cast<std::size_t>(config.seeds_per_prompt);
  return plan;
}

Dataset assemble(const DatasetConfig& config, const GenerationPlan& plan,
                 std::vector<SampleEntry> entries, std::vector<SampleTensors> tensors) {
  Dataset ds;
  ds.manifest.config = config;
  ds.manifest.samples = std::move(entries);
  ds.tensors = std::move(tensors);
  for (std::size_t p = 0; p < plan.prompts.size(); ++p) {
    PromptStats stats;
    stats.prompt_index = static_cast<int>(p);
    stats.prompt = plan.prompts[p].text;
    stats.split = plan.splits[p];
    ds.manifest.prompts.push_back(stats);
  }
  for (const auto& s : ds.manifest.samples) {
    auto& stats = ds.manifest.prompts[static_cast<std::size_t>(s.prompt_index)];
    ++stats.samples;
    if (s.complete()) ++stats.complete;
  }
  return ds;
}

json split_json(Split s) { return to_string(s); }

json sample_to_json(const SampleEntry& s) {
  return {{"record", "sample"},
          {"sample_id", s.sample_id},
          {"prompt_index", s.prompt_index},
          {"seed_index", s.seed_index},
          {"seed", s.seed},
          {"targets", s.targets},
          {"labels", s.labels},
          {"nearest_component", s.nearest_component},
          {"split", split_json(s.split)},
          {"capture_steps", s.capture_steps},
          {"epsilon_norms", s.epsilon_norms}};
}

SampleEntry sample_from_json(const json& j) {
  SampleEntry s;
  s.sample_id = j.at("sample_id").get<std::string>();
  s.prompt_index = j.at("prompt_index").get<int>();
  s.seed_index = j.at("seed_index").get<int>();
  s.seed = j.at("seed").get<std::uint64_t>();
  s.targets = j.at("targets").get<std::vector<std::string>>();
  s.labels = j.at("labels").get<std::vector<std::uint8_t>>();
  s.nearest_component = j.at("nearest_component").get<int>();
  s.split = split_from_string(j.at("split").get<std::string>());
  s.capture_steps = j.at("capture_steps").get<std::vector<int>>();
  s.epsilon_norms = j.at("epsilon_norms").get<std::vector<double>>();
  return s;
}

std::string capture_file(int step, const std::string& kind) {
  return std::to_string(step) + "_" + kind + ".bin";
}

}  // namespace

double faithfulness_for_completeness(double completeness, std::size_t objects) {
  if (!(completeness > 0.0 && completeness <= 1.0) || objects == 0)
    throw InvalidArgument("completeness must lie in (0, 1] with at least one object");
  return std::pow(completeness, 1.0 / static_cast<double>(objects));
}

DatasetConfig DatasetConfig::defaults() {
  DatasetConfig config;
  Catalog::builtin_subjects_and_objects(&config.subjects, &config.objects);
  config.faithfulness = faithfulness_for_completeness(0.59, 2);
  return config;
}

void DatasetConfig::validate() const {
  if (subjects.empty() || objects.empty()) throw EmptyCatalog("subject and object lists must be non-empty");
  if (seeds_per_prompt < 1) throw InvalidArgument("seeds_per_prompt must be >= 1");
  if (steps < 2) throw InvalidT("steps must be >= 2");
  for (int s : critical_steps) {
    if (s < 0 || s >= steps) throw InvalidArgument("critical steps must lie in [0, T)");
  }
  if (!(faithfulness > 0.0 && faithfulness <= 1.0)) throw InvalidArgument("faithfulness must lie in (0, 1]");
  if (!(label_threshold > 0.0 && label_threshold < 1.0))
    throw InvalidArgument("label threshold must lie in (0, 1)");
}

json DatasetConfig::to_json() const {
  return {{"subjects", subjects},
          {"objects", objects},
          {"seeds_per_prompt", seeds_per_prompt},
          {"steps", steps},
          {"critical_steps", critical_steps},
          {"faithfulness", faithfulness},
          {"global_seed", global_seed},
          {"label_threshold", label_threshold}};
}

DatasetConfig DatasetConfig::from_json(const json& j) {
  DatasetConfig c = defaults();
  static const char* const kKeys[] = {"subjects", "objects", "seeds_per_prompt", "steps",
                                      "critical_steps", "faithfulness", "global_seed",
                                      "label_threshold"};
  for (const auto& [key, value] : j.items()) {
    if (std::find_if(std::begin(kKeys), std::end(kKeys), [&](const char* k) { return key == k; }) ==
        std::end(kKeys))
      throw InvalidArgument("unknown dataset config key '" + key + "'");
  }
  try {
    if (j.contains("subjects")) c.subjects = j["subjects"].get<std::vector<std::string>>();
    if (j.contains("objects")) c.objects = j["objects"].get<std::vector<std::string>>();
    if (j.contains("seeds_per_prompt")) c.seeds_per_prompt = j["seeds_per_prompt"].get<int>();
    if (j.contains("steps")) c.steps = j["steps"].get<int>();
    if (j.contains("critical_steps")) c.critical_steps = j["critical_steps"].get<std::vector<int>>();
    if (j.contains("faithfulness")) c.faithfulness = j["faithfulness"].get<double>();
    if (j.contains("global_seed")) c.global_seed = j["global_seed"].get<std::uint64_t>();
    if (j.contains("label_threshold")) c.label_threshold = j["label_threshold"].get<double>();
  } catch (const json::exception& e) {
    throw InvalidArgument(std::string("dataset config: ") + e.what());
  }
  return c;
}

std::string to_string(Split split) {
  switch (split) {
    case Split::train: return "train";
    case Split::validation: return "validation";
    case Split::test: return "test";
  }
  return "train";
}

Split split_from_string(const std::string& name) {
  if (name == "train") return Split::train;
  if (name == "validation" || name == "val") return Split::validation;
  if (name == "test") return Split::test;
  throw InvalidArgument("unknown split '" + name + "'");
}

std::vector<Prompt> build_prompt_grid(const DatasetConfig& config, const Catalog& catalog) {
  if (config.subjects.empty() || config.objects.empty())
    throw EmptyCatalog("subject and object lists must be non-empty");
  std::vector<Prompt> prompts;
  prompts.reserve(config.subjects.size() * config.objects.size());
  for (const auto& subject : config.subjects) {
    for (const auto& object : config.objects) {
      const std::string pair[] = {subject, object};
      prompts.push_back(make_prompt(pair, catalog));
    }
  }
  return prompts;
}

double matched_filter_response(const Grid& image, const ObjectSpec& object, Position at) {
  const Grid g = object.placed(at, image.height());
  return image.dot(g) / g.squared_norm();
}

std::vector<std::uint8_t> label_image(const Grid& image, std::span<const std::string> targets,
                                      const Catalog& catalog, double threshold) {
  if (!(threshold > 0.0 && threshold < 1.0)) throw InvalidArgument("label threshold must lie in (0, 1)");
  std::vector<std::uint8_t> labels;
  labels.reserve(targets.size());
  for (const auto& id : targets) {
    const auto& obj = catalog.at(id);
    double best = -std::numeric_limits<double>::infinity();
    for (const auto& pos : obj.candidate_positions)
      best = std::max(best, matched_filter_response(image, obj, pos));
    labels.push_back(best >= threshold ? 1 : 0);
  }
  return labels;
}

bool SampleEntry::complete() const {
  return std::all_of(labels.begin(), labels.end(), [](std::uint8_t l) { return l != 0; });
}

const CapturedStep& SampleTensors::at_step(int step) const {
  for (const auto& c : captures) {
    if (c.step == step) return c;
  }
  throw MissingCapture("no capture at step " + std::to_string(step));
}

std::vector<std::size_t> Dataset::indices(Split split) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < manifest.samples.size(); ++i) {
    if (manifest.samples[i].split == split) out.push_back(i);
  }
  return out;
}

std::vector<Split> split_prompts(std::size_t prompt_count, std::uint64_t global_seed) {
  std::vector<std::size_t> order(prompt_count);
  for (std::size_t i = 0; i < prompt_count; ++i) order[i] = i;
  SplitMix64 rng(mix64(global_seed ^ kSplitSalt));
  for (std::size_t i = prompt_count; i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.next_u64() % i);
    std::swap(order[i - 1], order[j]);
  }
  auto n_val = static_cast<std::size_t>(std::lround(0.15 * static_cast<double>(prompt_count)));
  auto n_test = n_val;
  if (prompt_count >= 3) {
    n_val = std::max<std::size_t>(n_val, 1);
    n_test = std::max<std::size_t>(n_test, 1);
  } else {
    n_val = n_test = 0;
  }
  const std::size_t n_train = prompt_count - n_val - n_test;
  std::vector<Split> splits(prompt_count, Split::train);
  for (std::size_t i = 0; i < prompt_count; ++i) {
    if (i < n_train) continue;
    splits[order[i]] = i < n_train + n_val ? Split::validation : Split::test;
  }
  return splits;
}

Dataset generate_dataset(const DatasetConfig& config, const Catalog& catalog, int jobs) {
  const auto plan = plan_generation(config, catalog);
  std::vector<SampleEntry> entries(plan.total);
  std::vector<SampleTensors> tensors(plan.total);
  const auto n = static_cast<std::ptrdiff_t>(plan.total);
  std::exception_ptr failure;
#pragma omp parallel for num_threads(std::max(jobs, 1)) schedule(dynamic, 4)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    try {
      auto [entry, t] = generate_sample(config, catalog, plan.prompts, plan.mixtures, plan.splits,
                                        plan.schedule, static_cast<std::size_t>(i));
      entries[static_cast<std::size_t>(i)] = std::move(entry);
      tensors[static_cast<std::size_t>(i)] = std::move(t);
    } catch (...) {
#pragma omp critical
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);
  return assemble(config, plan, std::move(entries), std::move(tensors));
}

Dataset generate_dataset_serial(const DatasetConfig& config, const Catalog& catalog) {
  const auto plan = plan_generation(config, catalog);
  std::vector<SampleEntry> entries;
  std::vector<SampleTensors> tensors;
  for (std::size_t i = 0; i < plan.total; ++i) {
    auto [entry, t] = generate_sample(config, catalog, plan.prompts, plan.mixtures, plan.splits,
                                      plan.schedule, i);
    entries.push_back(std::move(entry));
    tensors.push_back(std::move(t));
  }
  return assemble(config, plan, std::move(entries), std::move(tensors));
}

void write_manifest(std::ostream& out, const DatasetManifest& manifest) {
  const json header = {{"record", "header"},
                       {"format_version", manifest.format_version},
                       {"config", manifest.config.to_json()}};
  out << header.dump() << '\n';
  for (const auto& s : manifest.samples) out << sample_to_json(s).dump() << '\n';
  for (const auto& p : manifest.prompts) {
    const json j = {{"record", "prompt"},    {"prompt_index", p.prompt_index},
                    {"prompt", p.prompt},    {"split", split_json(p.split)},
                    {"samples", p.samples},  {"complete", p.complete}};
    out << j.dump() << '\n';
  }
}

DatasetManifest read_manifest(std::istream& in) {
  DatasetManifest manifest;
  bool have_header = false;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      const auto kind = j.at("record").get<std::string>();
      if (kind == "header") {
        manifest.format_version = j.at("format_version").get<int>();
        if (manifest.format_version != kManifestFormatVersion)
          throw IoError("unsupported manifest version " + std::to_string(manifest.format_version));
        manifest.config = DatasetConfig::from_json(j.at("config"));
        have_header = true;
      } else if (kind == "sample") {
        manifest.samples.push_back(sample_from_json(j));
      } else if (kind == "prompt") {
        PromptStats p;
        p.prompt_index = j.at("prompt_index").get<int>();
        p.prompt = j.at("prompt").get<std::string>();
        p.split = split_from_string(j.at("split").get<std::string>());
        p.samples = j.at("samples").get<int>();
        p.complete = j.at("complete").get<int>();
        manifest.prompts.push_back(std::move(p));
      } else {
        throw IoError("unknown record kind '" + kind + "'");
      }
    } catch (const json::exception& e) {
      throw IoError("manifest line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  if (!have_header) throw IoError("manifest has no header record");
  const auto expected = manifest.prompts.size() * static_cast<std::size_t>(manifest.config.seeds_per_prompt);
  if (manifest.samples.size() != expected)
    throw IoError("manifest sample count " + std::to_string(manifest.samples.size()) +
                  " does not match prompts x seeds = " + std::to_string(expected));
  return manifest;
}

void save_dataset(const Dataset& dataset, const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir / "tensors", ec);
  if (ec) throw IoError("cannot create " + (dir / "tensors").string() + ": " + ec.message());
  for (std::size_t i = 0; i < dataset.manifest.samples.size(); ++i) {
    const auto& entry = dataset.manifest.samples[i];
    const auto& tensors = dataset.tensors[i];
    const fs::path sample_dir = dir / "tensors" / entry.sample_id;
    fs::create_directories(sample_dir, ec);
    if (ec) throw IoError("cannot create " + sample_dir.string() + ": " + ec.message());
    for (const auto& cap : tensors.captures) {
      save_grid(sample_dir / capture_file(cap.step, "pfi"), cap.pfi);
      for (const auto& [id, map] : cap.attention) save_grid(sample_dir / capture_file(cap.step, "attn_" + id), map);
    }
    save_grid(sample_dir / "final.bin", tensors.final_image);
  }
  std::ofstream out(dir / "manifest.jsonl", std::ios::binary);
  if (!out) throw IoError("cannot write " + (dir / "manifest.jsonl").string());
  write_manifest(out, dataset.manifest);
  if (!out) throw IoError("manifest write failed");
}

DatasetManifest load_manifest(const fs::path& dir) {
  std::ifstream in(dir / "manifest.jsonl", std::ios::binary);
  if (!in) throw IoError("cannot read " + (dir / "manifest.jsonl").string());
  return read_manifest(in);
}

Dataset load_dataset(const fs::path& dir) {
  Dataset ds;
  ds.manifest = load_manifest(dir);
  const int steps = ds.manifest.config.steps;
  ds.tensors.reserve(ds.manifest.samples.size());
  for (const auto& entry : ds.manifest.samples) {
    const fs::path sample_dir = dir / "tensors" / entry.sample_id;
    SampleTensors t;
    for (std::size_t c = 0; c < entry.capture_steps.size(); ++c) {
      CapturedStep cap;
      cap.step = entry.capture_steps[c];
      cap.t = latent_index_for_step(cap.step, steps);
      cap.pfi = load_grid(sample_dir / capture_file(cap.step, "pfi"));
      for (const auto& id : entry.targets)
        cap.attention.emplace(id, load_grid(sample_dir / capture_file(cap.step, "attn_" + id)));
      cap.epsilon_norm = c < entry.epsilon_norms.size() ? entry.epsilon_norms[c] : 0.0;
      t.captures.push_back(std::move(cap));
    }
    t.final_image = load_grid(sample_dir / "final.bin");
    ds.tensors.push_back(std::move(t));
  }
  return ds;
}

DatasetStats dataset_stats(const DatasetManifest& manifest) {
  DatasetStats stats;
  stats.samples = manifest.samples.size();
  if (stats.samples == 0) return stats;
  std::map<int, int> complete_per_prompt;
  std::map<std::string, std::size_t> present;
  std::size_t complete = 0;
  for (const auto& s : manifest.samples) {
    complete_per_prompt.try_emplace(s.prompt_index, 0);
    if (s.complete()) {
      ++complete;
      ++complete_per_prompt[s.prompt_index];
    }
    for (std::size_t o = 0; o < s.targets.size() && o < s.labels.size(); ++o) {
      ++stats.object_counts[s.targets[o]];
      if (s.labels[o]) ++present[s.targets[o]];
    }
  }
  stats.complete_fraction = static_cast<double>(complete) / static_cast<double>(stats.samples);
  std::size_t at_least_1 = 0, at_least_3 = 0;
  for (const auto& [prompt, n] : complete_per_prompt) {
    if (n >= 1) ++at_least_1;
    if (n >= 3) ++at_least_3;
  }
  const auto prompts = static_cast<double>(complete_per_prompt.size());
  stats.prompts_at_least_1 = static_cast<double>(at_least_1) / prompts;
  stats.prompts_at_least_3 = static_cast<double>(at_least_3) / prompts;
  for (const auto& [id, n] : stats.object_counts)
    stats.object_presence[id] = static_cast<double>(present[id]) / static_cast<double>(n);
  return stats;
}

}  // namespace head
