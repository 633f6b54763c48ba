#include "head/cli.hpp"

#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "head/config.hpp"
#include "head/dataset.hpp"
#include "head/detector.hpp"
#include "head/errors.hpp"
#include "head/runtime.hpp"
#include "head/timesaver.hpp"

namespace head {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kSynopsis =
    "usage: head <command> [options]\n"
    "commands: make-dataset, train, eval, simulate, sweep-tlast, sweep-p, run, report\n"
    "run `head <command> --help` for the options of a command\n";

// Options shared by most commands. Values given on the command line win over
// the config file.
struct Common {
  std::string config_path;
  std::string out_dir;
  int jobs = 1;
  CLI::Option* jobs_opt = nullptr;

  void attach(CLI::App* cmd, bool out_required) {
    cmd->add_option("--config", config_path, "experiment config (JSON)");
    auto* out = cmd->add_option("--out", out_dir, "output directory");
    if (out_required) out->required();
    jobs_opt = cmd->add_option("--jobs", jobs, "worker threads")->check(CLI::PositiveNumber);
  }

  ExperimentConfig load() const {
    ExperimentConfig cfg = config_path.empty() ? ExperimentConfig{} : ExperimentConfig::load(config_path);
    if (jobs_opt->count()) cfg.jobs = jobs;
    return cfg;
  }
};

template <typename T>
void override_if(const CLI::Option* opt, const T& value, T& into) {
  if (opt->count()) into = value;
}

std::string fixed(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

void make_out_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out || !(out << text)) throw IoError("cannot write " + path.string());
}

// config.json: the command, its resolved inputs and the full config.
void write_snapshot(const fs::path& dir, const std::string& command, const ExperimentConfig& cfg,
                    const json& inputs) {
  const json snapshot = {{"command", command}, {"inputs", inputs}, {"config", cfg.to_json()}};
  write_text(dir / "config.json", snapshot.dump(2) + "\n");
}

Catalog catalog_for(const ExperimentConfig& cfg) {
  return cfg.catalog ? Catalog::load(*cfg.catalog) : Catalog::builtin();
}

Catalog dataset_catalog(const fs::path& dataset_dir) {
  const auto path = dataset_dir / "catalog.txt";
  return fs::exists(path) ? Catalog::load(path) : Catalog::builtin();
}

fs::path model_path(const std::string& arg) {
  const fs::path p(arg);
  return fs::is_directory(p) ? p / "model.txt" : p;
}

json rate_json(std::optional<double> v) { return v ? json(*v) : json(nullptr); }

json counts_json(const ConfusionCounts& c) {
  return {{"tp", c.tp}, {"fp", c.fp}, {"tn", c.tn}, {"fn", c.fn},
          {"recall", rate_json(c.recall())}, {"tn_rate", rate_json(c.tn_rate())}};
}

json report_json(const ConfusionReport& r, Split split) {
  json per_object = json::object();
  for (const auto& [id, c] : r.per_object) per_object[id] = counts_json(c);
  json per_slot = json::array();
  for (const auto& c : r.per_slot) per_slot.push_back(counts_json(c));
  return {{"split", to_string(split)}, {"pooled", counts_json(r.pooled)},
          {"per_object", per_object}, {"per_slot", per_slot}};
}

std::string rate_text(std::optional<double> v) { return v ? fixed(*v) : "n/a"; }

// ---- make-dataset -------------------------------------------------------

struct MakeDatasetCmd {
  Common common;
  std::uint64_t global_seed = 0;
  int seeds = 0;
  double faithfulness = 0.0;
  std::string catalog;
  CLI::Option *seed_opt, *seeds_opt, *q_opt, *catalog_opt;

  void attach(CLI::App* cmd) {
    common.attach(cmd, true);
    seed_opt = cmd->add_option("--global-seed", global_seed, "root seed of the sample grid");
    seeds_opt = cmd->add_option("--seeds-per-prompt", seeds)->check(CLI::PositiveNumber);
    q_opt = cmd->add_option("--faithfulness", faithfulness, "per-object materialization probability");
    catalog_opt = cmd->add_option("--catalog", catalog, "object catalog table");
  }

  int run(std::ostream& out) {
    auto cfg = common.load();
    override_if(seed_opt, global_seed, cfg.dataset.global_seed);
    override_if(seeds_opt, seeds, cfg.dataset.seeds_per_prompt);
    override_if(q_opt, faithfulness, cfg.dataset.faithfulness);
    if (catalog_opt->count()) cfg.catalog = catalog;
    cfg.dataset.validate();
    const Catalog cat = catalog_for(cfg);

    const fs::path dir(common.out_dir);
    make_out_dir(dir);
    const Dataset ds = generate_dataset(cfg.dataset, cat, cfg.jobs);
    save_dataset(ds, dir);
    std::ostringstream cat_text;
    cat.write(cat_text);
    write_text(dir / "catalog.txt", cat_text.str());
    write_snapshot(dir, "make-dataset", cfg, json::object());

    const auto stats = dataset_stats(ds.manifest);
    out << "samples " << stats.samples << "\n"
        << "complete_fraction " << fixed(stats.complete_fraction) << "\n"
        << "prompts_at_least_1 " << fixed(stats.prompts_at_least_1) << "\n"
        << "prompts_at_least_3 " << fixed(stats.prompts_at_least_3) << "\n";
    return 0;
  }
};

// ---- train ----------------------------------------------------------------

struct TrainCmd {
  Common common;
  std::string dataset, variant, steps;
  double lr = 0, l2 = 0, target_recall = 0;
  int epochs = 0;
  std::uint64_t seed = 0;
  CLI::Option *variant_opt, *steps_opt, *lr_opt, *l2_opt, *epochs_opt, *seed_opt, *recall_opt;

  void attach(CLI::App* cmd) {
    common.attach(cmd, true);
    cmd->add_option("--dataset", dataset, "dataset directory")->required();
    variant_opt = cmd->add_option("--variant", variant, "combined | attention_only | multi_timestep");
    steps_opt = cmd->add_option("--steps", steps, "critical steps, comma separated");
    lr_opt = cmd->add_option("--lr", lr);
    l2_opt = cmd->add_option("--l2", l2);
    epochs_opt = cmd->add_option("--epochs", epochs)->check(CLI::NonNegativeNumber);
    seed_opt = cmd->add_option("--seed", seed);
    recall_opt = cmd->add_option("--target-recall", target_recall,
                                 "calibrate the threshold on the validation split");
  }

  int run(std::ostream& out) {
    auto cfg = common.load();
    if (variant_opt->count()) cfg.detector.variant = variant_from_string(variant);
    if (steps_opt->count()) cfg.detector.steps = parse_int_list(steps);
    override_if(lr_opt, lr, cfg.detector.hyper.learning_rate);
    override_if(l2_opt, l2, cfg.detector.hyper.l2);
    override_if(epochs_opt, epochs, cfg.detector.hyper.epochs);
    override_if(seed_opt, seed, cfg.detector.hyper.seed);
    if (recall_opt->count()) cfg.detector.hyper.target_recall = target_recall;

    const Dataset ds = load_dataset(dataset);
    const Catalog cat = dataset_catalog(dataset);
    const auto model = train_detector(ds, cfg.detector.variant, cfg.detector.steps, cfg.detector.hyper, cat);

    const fs::path dir(common.out_dir);
    make_out_dir(dir);
    model.save(dir / "model.txt");
    write_snapshot(dir, "train", cfg, {{"dataset", dataset}});
    out << "model " << (dir / "model.txt").string() << "\n";
    if (!ds.indices(Split::validation).empty()) {
      const auto report = evaluate_detector(model, ds, Split::validation, cat);
      out << "validation recall " << rate_text(report.pooled.recall()) << " tn_rate "
          << rate_text(report.pooled.tn_rate()) << "\n";
    }
    return 0;
  }
};

// ---- eval -----------------------------------------------------------------

struct EvalCmd {
  Common common;
  std::string dataset, model, split = "test";

  void attach(CLI::App* cmd) {
    common.attach(cmd, false);
    cmd->add_option("--dataset", dataset)->required();
    cmd->add_option("--model", model, "model file or training output directory")->required();
    cmd->add_option("--split", split, "train | validation | test");
  }

  int run(std::ostream& out) {
    auto cfg = common.load();
    const Split which = split_from_string(split);
    const Dataset ds = load_dataset(dataset);
    const auto m = DetectorModel::load(model_path(model));
    const auto report = evaluate_detector(m, ds, which, dataset_catalog(dataset));
    const json j = report_json(report, which);
    out << j.dump(2) << "\n";
    if (!common.out_dir.empty()) {
      make_out_dir(common.out_dir);
      write_text(fs::path(common.out_dir) / "eval.json", j.dump(2) + "\n");
      write_snapshot(common.out_dir, "eval", cfg, {{"dataset", dataset}, {"model", model}, {"split", split}});
    }
    return 0;
  }
};

// ---- simulate -------------------------------------------------------------

struct SimulateCmd {
  Common common;
  double p = kReferenceCompleteness, recall = 1.0, tn_rate = 1.0, f = 0.16;
  std::size_t objects = 1, trials = 0;
  std::uint64_t seed = 0;
  CLI::Option *trials_opt, *seed_opt;

  void attach(CLI::App* cmd) {
    common.attach(cmd, false);
    cmd->add_option("--p", p, "probability that an attempt is complete");
    cmd->add_option("--recall", recall, "per-object recall");
    cmd->add_option("--tn-rate", tn_rate, "per-object TN-rate");
    cmd->add_option("--f", f, "abort cost fraction t_last / T");
    cmd->add_option("--objects", objects, "number of independent objects")->check(CLI::Range(1, 20));
    trials_opt = cmd->add_option("--trials", trials, "Monte Carlo trials (0 = closed form only)");
    seed_opt = cmd->add_option("--seed", seed);
  }

  int run(std::ostream& out) {
    auto cfg = common.load();
    override_if(seed_opt, seed, cfg.timesaver.seed);
    const std::size_t n_trials = trials_opt->count() ? trials : 0;
    const auto dist = AttemptDistribution::with_completeness(p, objects);
    const auto params = PolicyParams::uniform(objects, f, recall, tn_rate);
    const double cost = expected_cost_closed_form(dist, params);
    const double base = baseline_cost(dist);
    json result = {{"expected_cost", cost}, {"baseline_cost", base}, {"saving", relative_saving(cost, base)}};
    out << "expected_cost " << fixed(cost) << "\n"
        << "baseline_cost " << fixed(base) << "\n"
        << "saving " << fixed(relative_saving(cost, base)) << "\n";
    if (n_trials > 0) {
      MonteCarloOptions opts;
      opts.trials = n_trials;
      opts.seed = cfg.timesaver.seed;
      opts.jobs = cfg.jobs;
      const auto mc = monte_carlo_cost(dist, params, opts);
      result["monte_carlo"] = {{"trials", mc.trials},          {"expected_cost", mc.expected_cost},
                               {"standard_error", mc.standard_error}, {"saving", mc.relative_saving},
                               {"saving_ci_low", mc.saving_ci_low},  {"saving_ci_high", mc.saving_ci_high}};
      out << "mc_expected_cost " << fixed(mc.expected_cost) << " +- " << fixed(mc.standard_error, 6) << "\n"
          << "mc_saving " << fixed(mc.relative_saving) << " [" << fixed(mc.saving_ci_low) << ", "
          << fixed(mc.saving_ci_high) << "]\n";
    }
    if (!common.out_dir.empty()) {
      make_out_dir(common.out_dir);
      write_text(fs::path(common.out_dir) / "simulate.json", result.dump(2) + "\n");
      write_snapshot(common.out_dir, "simulate", cfg,
                     {{"p", p}, {"recall", recall}, {"tn_rate", tn_rate}, {"f", f},
                      {"objects", objects}, {"trials", n_trials}});
    }
    return 0;
  }
};

// ---- sweeps ---------------------------------------------------------------

struct SweepInputs {
  std::string dataset, models, split = "test";
  double p = 0;
  CLI::Option* p_opt = nullptr;

  void attach(CLI::App* cmd) {
    cmd->add_option("--dataset", dataset)->required();
    cmd->add_option("--models", models, "comma-separated model files or directories")->required();
    cmd->add_option("--split", split, "split used to measure recall and TN-rate");
    p_opt = cmd->add_option("--p", p, "completeness probability of the attempt distribution");
  }

  struct Loaded {
    std::vector<TlastInput> inputs;
    std::size_t objects = 0;
    int steps = 0;
  };

  Loaded load() const {
    const Dataset ds = load_dataset(dataset);
    const Catalog cat = dataset_catalog(dataset);
    const Split which = split_from_string(split);
    Loaded loaded;
    loaded.steps = ds.manifest.config.steps;
    loaded.objects = ds.manifest.samples.empty() ? 0 : ds.manifest.samples.front().targets.size();
    for (const auto& entry : parse_string_list(models)) {
      const auto model = DetectorModel::load(model_path(entry));
      loaded.inputs.push_back({model.decision_step(), evaluate_detector(model, ds, which, cat)});
    }
    if (loaded.inputs.empty()) throw MissingReport("no models given");
    return loaded;
  }
};

struct SweepTlastCmd {
  Common common;
  SweepInputs inputs;
  std::size_t trials = 0;
  std::uint64_t seed = 0;
  CLI::Option *trials_opt, *seed_opt;

  void attach(CLI::App* cmd) {
    common.attach(cmd, true);
    inputs.attach(cmd);
    trials_opt = cmd->add_option("--trials", trials, "Monte Carlo trials per row")->check(CLI::PositiveNumber);
    seed_opt = cmd->add_option("--seed", seed);
  }

  int run(std::ostream& out) {
    auto cfg = common.load();
    override_if(trials_opt, trials, cfg.timesaver.trials);
    override_if(seed_opt, seed, cfg.timesaver.seed);
    override_if(inputs.p_opt, inputs.p, cfg.timesaver.completeness);
    const auto loaded = inputs.load();
    const auto dist = AttemptDistribution::with_completeness(cfg.timesaver.completeness, loaded.objects);
    MonteCarloOptions opts;
    opts.trials = cfg.timesaver.trials;
    opts.seed = cfg.timesaver.seed;
    opts.jobs = cfg.jobs;
    const auto rows = sweep_tlast(loaded.inputs, dist, loaded.steps, opts);

    make_out_dir(common.out_dir);
    std::ostringstream csv;
    write_sweep_tlast_csv(csv, rows);
    write_text(fs::path(common.out_dir) / "sweep_tlast.csv", csv.str());
    write_snapshot(common.out_dir, "sweep-tlast", cfg,
                   {{"dataset", inputs.dataset}, {"models", inputs.models}, {"split", inputs.split}});
    out << csv.str();
    return 0;
  }
};

struct SweepPCmd {
  Common common;
  SweepInputs inputs;
  std::string grid;
  CLI::Option* grid_opt;

  void attach(CLI::App* cmd) {
    common.attach(cmd, true);
    inputs.attach(cmd);
    grid_opt = cmd->add_option("--p-grid", grid, "comma-separated completeness values in (0, 1)");
  }

  int run(std::ostream& out) {
    auto cfg = common.load();
    if (grid_opt->count()) cfg.timesaver.p_grid = parse_double_list(grid);
    override_if(inputs.p_opt, inputs.p, cfg.timesaver.completeness);
    const auto loaded = inputs.load();
    std::vector<TlastParams> curves;
    for (const auto& in : loaded.inputs) {
      const double f = static_cast<double>(in.t_last) / static_cast<double>(loaded.steps);
      curves.push_back({in.t_last, params_from_report(in.report, f, loaded.objects)});
    }
    const auto rows = sweep_probability(curves, cfg.timesaver.p_grid, cfg.timesaver.completeness);

    make_out_dir(common.out_dir);
    std::ostringstream csv;
    write_sweep_p_csv(csv, rows);
    write_text(fs::path(common.out_dir) / "sweep_p.csv", csv.str());
    write_snapshot(common.out_dir, "sweep-p", cfg,
                   {{"dataset", inputs.dataset}, {"models", inputs.models}, {"split", inputs.split}});
    out << csv.str();
    return 0;
  }
};

// ---- run ------------------------------------------------------------------

struct RunCmd {
  Common common;
  std::string dataset, model, prompts;
  std::size_t runs = 0;
  std::uint64_t root_seed = 0;
  CLI::Option *runs_opt, *seed_opt, *prompts_opt;

  void attach(CLI::App* cmd) {
    common.attach(cmd, true);
    cmd->add_option("--dataset", dataset, "dataset whose prompts and settings are reused")->required();
    cmd->add_option("--model", model, "detector for the head policy")->required();
    runs_opt = cmd->add_option("--runs", runs, "runs per prompt")->check(CLI::PositiveNumber);
    seed_opt = cmd->add_option("--root-seed", root_seed);
    prompts_opt = cmd->add_option("--prompts", prompts, "comma-separated prompt indices (default: all)");
  }

  int run(std::ostream& out) {
    auto cfg = common.load();
    override_if(runs_opt, runs, cfg.runtime.runs);
    override_if(seed_opt, root_seed, cfg.runtime.root_seed);
    const auto manifest = load_manifest(dataset);
    const Catalog cat = dataset_catalog(dataset);
    const auto grid = build_prompt_grid(manifest.config, cat);
    std::vector<int> chosen;
    if (prompts_opt->count()) {
      chosen = parse_int_list(prompts);
    } else {
      for (std::size_t i = 0; i < grid.size(); ++i) chosen.push_back(static_cast<int>(i));
    }
    std::vector<CampaignPrompt> campaign;
    for (int i : chosen) {
      if (i < 0 || static_cast<std::size_t>(i) >= grid.size())
        throw InvalidArgument("prompt index " + std::to_string(i) + " out of range");
      campaign.push_back({std::to_string(i), build_conditional_mixture(grid[static_cast<std::size_t>(i)].targets,
                                                                       manifest.config.faithfulness, cat)});
    }
    auto head_policy = RunPolicy::head(DetectorModel::load(model_path(model)));
    auto base_policy = RunPolicy::baseline();
    head_policy.max_restarts = base_policy.max_restarts = cfg.runtime.max_restarts;
    head_policy.label_threshold = base_policy.label_threshold = manifest.config.label_threshold;
    CampaignOptions opts;
    opts.runs_per_prompt = cfg.runtime.runs;
    opts.root_seed = cfg.runtime.root_seed;
    opts.jobs = cfg.jobs;
    const auto report = measure_campaign(campaign, base_policy, head_policy,
                                         make_schedule(manifest.config.steps), cat, opts);

    make_out_dir(common.out_dir);
    std::ostringstream csv;
    write_campaign_csv(csv, report.rows);
    write_text(fs::path(common.out_dir) / "campaign.csv", csv.str());
    write_snapshot(common.out_dir, "run", cfg, {{"dataset", dataset}, {"model", model}, {"prompts", chosen}});
    out << "pooled saving " << fixed(report.pooled_saving) << " [" << fixed(report.pooled_ci_lo) << ", "
        << fixed(report.pooled_ci_hi) << "]\n";
    return 0;
  }
};

// ---- report ---------------------------------------------------------------

void print_csv_table(std::ostream& out, const fs::path& path) {
  std::ifstream in(path);
  std::vector<std::vector<std::string>> cells;
  for (std::string line; std::getline(in, line);) {
    if (!line.empty()) cells.push_back(parse_string_list(line));
  }
  if (cells.empty()) return;
  std::vector<std::size_t> width(cells.front().size(), 0);
  for (const auto& row : cells)
    for (std::size_t c = 0; c < row.size() && c < width.size(); ++c) width[c] = std::max(width[c], row[c].size());
  out << "== " << path.filename().string() << "\n";
  for (const auto& row : cells) {
    for (std::size_t c = 0; c < row.size() && c < width.size(); ++c)
      out << std::setw(static_cast<int>(width[c]) + 2) << row[c];
    out << "\n";
  }
  out << "\n";
}

struct ReportCmd {
  std::string in_dir;

  void attach(CLI::App* cmd) { cmd->add_option("--in", in_dir, "directory holding CSV outputs")->required(); }

  int run(std::ostream& out) {
    const fs::path dir(in_dir);
    if (!fs::is_directory(dir)) throw InvalidArgument(in_dir + " is not a directory");
    bool any = false;
    if (fs::exists(dir / "manifest.jsonl")) {
      const auto stats = dataset_stats(load_manifest(dir));
      out << "== dataset\n"
          << "samples " << stats.samples << ", complete " << fixed(stats.complete_fraction)
          << ", prompts with >=1 complete " << fixed(stats.prompts_at_least_1)
          << ", with >=3 complete " << fixed(stats.prompts_at_least_3) << "\n\n";
      any = true;
    }
    for (const char* name : {"sweep_tlast.csv", "sweep_p.csv", "campaign.csv"}) {
      if (fs::exists(dir / name)) {
        print_csv_table(out, dir / name);
        any = true;
      }
    }
    if (!any) throw InvalidArgument("nothing to report in " + in_dir);
    return 0;
  }
};

}  // namespace

int dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Early-abort laboratory for diffusion generation", "head"};
  app.require_subcommand(1, 1);

  MakeDatasetCmd make_dataset;
  TrainCmd train;
  EvalCmd eval;
  SimulateCmd simulate;
  SweepTlastCmd sweep_tlast_cmd;
  SweepPCmd sweep_p_cmd;
  RunCmd run;
  ReportCmd report;
  auto* c_make = app.add_subcommand("make-dataset", "generate, label and store the toy dataset");
  auto* c_train = app.add_subcommand("train", "train a presence detector");
  auto* c_eval = app.add_subcommand("eval", "confusion report of a detector on a split");
  auto* c_sim = app.add_subcommand("simulate", "expected cost of the abort policy");
  auto* c_tlast = app.add_subcommand("sweep-tlast", "savings table across decision steps");
  auto* c_p = app.add_subcommand("sweep-p", "savings vs completeness probability");
  auto* c_run = app.add_subcommand("run", "live abort-and-reseed campaign against the baseline");
  auto* c_report = app.add_subcommand("report", "print a summary of CSV outputs");
  make_dataset.attach(c_make);
  train.attach(c_train);
  eval.attach(c_eval);
  simulate.attach(c_sim);
  sweep_tlast_cmd.attach(c_tlast);
  sweep_p_cmd.attach(c_p);
  run.attach(c_run);
  report.attach(c_report);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n" << kSynopsis;
    return 1;
  }

  try {
    if (c_make->parsed()) return make_dataset.run(out);
    if (c_train->parsed()) return train.run(out);
    if (c_eval->parsed()) return eval.run(out);
    if (c_sim->parsed()) return simulate.run(out);
    if (c_tlast->parsed()) return sweep_tlast_cmd.run(out);
    if (c_p->parsed()) return sweep_p_cmd.run(out);
    if (c_run->parsed()) return run.run(out);
    if (c_report->parsed()) return report.run(out);
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
  err << kSynopsis;
  return 1;
}

}  // namespace head
