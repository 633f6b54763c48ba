#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "doctest.h"
#include "head/dataset.hpp"
#include "head/errors.hpp"
#include "head/rng.hpp"

using namespace head;
namespace fs = std::filesystem;

namespace {

DatasetConfig small_config() {
  auto c = DatasetConfig::defaults();
  c.subjects = {"cat", "dog", "cow", "bear"};
  c.objects = {"bench", "vase"};
  c.seeds_per_prompt = 4;
  c.critical_steps = {16, 8};
  return c;
}

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("head_test_dataset_" + name);
  fs::remove_all(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

SampleEntry labelled(int prompt, std::vector<std::uint8_t> labels) {
  SampleEntry s;
  s.prompt_index = prompt;
  s.targets = {"cat", "bench"};
  s.labels = std::move(labels);
  return s;
}

}  // namespace

TEST_CASE("prompt grid is subject-major") {
  const auto cat = Catalog::builtin();
  const auto cfg = DatasetConfig::defaults();
  const auto prompts = build_prompt_grid(cfg, cat);
  CHECK(prompts.size() == 60);
  CHECK(prompts.front().text == "a cat and a bench");
  CHECK(prompts[1].text == "a cat and a umbrella");
  CHECK(prompts[6].targets == std::vector<std::string>{"dog", "bench"});
  CHECK(cfg.faithfulness == doctest::Approx(std::sqrt(0.59)));
}

TEST_CASE("labeler") {
  const auto cat = Catalog::builtin();
  const std::vector<std::string> t{"cat", "bench"};
  const auto m = build_conditional_mixture(t, 0.8, cat);
  const auto& full = m.components.back();
  REQUIRE(full.all_present());
  CHECK(label_image(full.mean_image, t, cat) == std::vector<std::uint8_t>{1, 1});
  CHECK(label_image(Grid(16, 16), t, cat) == std::vector<std::uint8_t>{0, 0});
  CHECK_THROWS_AS(label_image(Grid(16, 16), t, cat, 1.5), InvalidArgument);

  // cat present, bench absent, plus pixel noise
  const SceneComponent* cat_only = nullptr;
  for (const auto& c : m.components)
    if (c.present == std::vector<std::uint8_t>{1, 0}) cat_only = &c;
  REQUIRE(cat_only != nullptr);
  SplitMix64 rng(5);
  int agree = 0;
  for (int trial = 0; trial < 100; ++trial) {
    Grid noisy = cat_only->mean_image;
    for (double& v : noisy.values()) v += 0.05 * rng.normal();
    if (label_image(noisy, t, cat) == std::vector<std::uint8_t>{1, 0}) ++agree;
  }
  CHECK(agree >= 99);
  // matched filter reads the template amplitude
  const auto& bench = cat.at("bench");
  const Grid g = bench.placed(bench.candidate_positions[0], 16);
  CHECK(matched_filter_response(g, bench, bench.candidate_positions[0]) == doctest::Approx(1.0));
}

TEST_CASE("prompt-disjoint split sizes") {
  const auto s = split_prompts(60, 20240601);
  std::size_t counts[3] = {0, 0, 0};
  for (auto x : s) ++counts[static_cast<int>(x)];
  CHECK(counts[0] == 42);
  CHECK(counts[1] == 9);
  CHECK(counts[2] == 9);
  CHECK(split_prompts(60, 20240601) == s);
  CHECK(split_prompts(60, 1) != s);
}

TEST_CASE("generation: counts, parallel equality, determinism") {
  const auto cat = Catalog::builtin();
  const auto cfg = small_config();
  const auto ds = generate_dataset(cfg, cat, 3);
  REQUIRE(ds.manifest.samples.size() == 32);
  CHECK(ds.manifest.samples[5].sample_id == "p0001_s001");
  CHECK(ds.manifest.samples[5].seed == derive_seed(cfg.global_seed, 1, 1));
  CHECK(ds.manifest.samples[0].capture_steps == std::vector<int>{8, 16});
  CHECK(ds.tensors[0].at_step(16).t == 34);
  CHECK_THROWS_AS(ds.tensors[0].at_step(5), MissingCapture);

  const auto serial = generate_dataset_serial(cfg, cat);
  for (std::size_t i = 0; i < ds.tensors.size(); ++i) {
    CHECK(ds.manifest.samples[i].labels == serial.manifest.samples[i].labels);
    CHECK(ds.tensors[i].final_image == serial.tensors[i].final_image);
    CHECK(ds.tensors[i].captures[1].pfi == serial.tensors[i].captures[1].pfi);
  }
  // every prompt's samples share one split
  for (const auto& s : ds.manifest.samples)
    CHECK(s.split == ds.manifest.prompts[static_cast<std::size_t>(s.prompt_index)].split);
}

TEST_CASE("save and load round-trip") {
  const auto cat = Catalog::builtin();
  const auto cfg = small_config();
  const auto ds = generate_dataset(cfg, cat);
  const auto a = scratch("a"), b = scratch("b");
  save_dataset(ds, a);
  save_dataset(generate_dataset(cfg, cat, 2), b);
  CHECK(slurp(a / "manifest.jsonl") == slurp(b / "manifest.jsonl"));
  CHECK(fs::exists(a / "tensors" / "p0000_s000" / "final.bin"));

  const auto back = load_dataset(a);
  REQUIRE(back.manifest.samples.size() == ds.manifest.samples.size());
  for (std::size_t i = 0; i < ds.tensors.size(); ++i) {
    CHECK(back.manifest.samples[i].sample_id == ds.manifest.samples[i].sample_id);
    CHECK(back.manifest.samples[i].seed == ds.manifest.samples[i].seed);
    CHECK(back.manifest.samples[i].labels == ds.manifest.samples[i].labels);
    CHECK(back.tensors[i].final_image == ds.tensors[i].final_image);
    for (std::size_t c = 0; c < ds.tensors[i].captures.size(); ++c) {
      CHECK(back.tensors[i].captures[c].pfi == ds.tensors[i].captures[c].pfi);
      CHECK(back.tensors[i].captures[c].attention == ds.tensors[i].captures[c].attention);
    }
  }
  CHECK(back.manifest.config.to_json() == cfg.to_json());

  // truncated manifest is rejected
  std::string text = slurp(a / "manifest.jsonl");
  text.resize(text.rfind('\n', text.size() - 2) + 1);
  std::stringstream cut(text);
  CHECK_THROWS(read_manifest(cut));
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST_CASE("config json rejects unknown keys") {
  auto j = DatasetConfig::defaults().to_json();
  CHECK(DatasetConfig::from_json(j).to_json() == j);
  j["seeds"] = 3;
  CHECK_THROWS_AS(DatasetConfig::from_json(j), InvalidArgument);
}

TEST_CASE("statistics from labels") {
  DatasetManifest m;
  m.samples = {labelled(0, {1, 1}), labelled(0, {1, 0}), labelled(1, {0, 1}), labelled(1, {1, 1})};
  const auto s = dataset_stats(m);
  CHECK(s.complete_fraction == 0.5);
  CHECK(s.prompts_at_least_1 == 1.0);
  CHECK(s.prompts_at_least_3 == 0.0);
  CHECK(s.object_presence.at("cat") == 0.75);

  DatasetManifest all;
  all.samples = {labelled(0, {1, 1}), labelled(1, {1, 1})};
  const auto t = dataset_stats(all);
  CHECK(t.complete_fraction == 1.0);
  CHECK(t.prompts_at_least_1 == 1.0);
  CHECK(t.object_presence.at("bench") == 1.0);
}

TEST_CASE("generated datasets hit their calibration") {
  const auto cat = Catalog::builtin();
  const auto def = DatasetConfig::defaults();
  auto cfg = def;
  cfg.critical_steps = {8};
  const auto stats = dataset_stats(generate_dataset(cfg, cat).manifest);
  CHECK(stats.samples == 720);
  CHECK(std::abs(stats.complete_fraction - 0.59) <= 3 * std::sqrt(0.59 * 0.41 / 720));

  cfg.faithfulness = 0.8;
  const auto q8 = dataset_stats(generate_dataset(cfg, cat).manifest);
  for (const auto& [id, rate] : q8.object_presence) {
    const double n = static_cast<double>(q8.object_counts.at(id));
    CHECK_MESSAGE(std::abs(rate - 0.8) <= 3 * std::sqrt(0.16 / n), id);
  }
}
