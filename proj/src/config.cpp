#include "head/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "head/errors.hpp"

namespace head {

using nlohmann::json;

namespace {

void reject_unknown(const json& j, std::initializer_list<const char*> keys, const std::string& where) {
  if (!j.is_object()) throw InvalidArgument(where + " must be an object");
  const std::set<std::string> allowed(keys.begin(), keys.end());
  for (const auto& [key, value] : j.items()) {
    if (!allowed.count(key)) throw InvalidArgument("unknown key '" + key + "' in " + where);
  }
}

template <typename T>
void read_if(const json& j, const char* key, T& into) {
  if (j.contains(key)) into = j.at(key).get<T>();
}

}  // namespace

json ExperimentConfig::to_json() const {
  json detector_json = {{"variant", to_string(detector.variant)},
                        {"steps", detector.steps},
                        {"learning_rate", detector.hyper.learning_rate},
                        {"epochs", detector.hyper.epochs},
                        {"l2", detector.hyper.l2},
                        {"seed", detector.hyper.seed},
                        {"target_recall", nullptr}};
  if (detector.hyper.target_recall) detector_json["target_recall"] = *detector.hyper.target_recall;
  return {{"dataset", dataset.to_json()},
          {"catalog", catalog ? json(catalog->string()) : json(nullptr)},
          {"detector", detector_json},
          {"timesaver",
           {{"trials", timesaver.trials},
            {"seed", timesaver.seed},
            {"completeness", timesaver.completeness},
            {"p_grid", timesaver.p_grid}}},
          {"runtime",
           {{"runs", runtime.runs}, {"root_seed", runtime.root_seed}, {"max_restarts", runtime.max_restarts}}},
          {"jobs", jobs}};
}

ExperimentConfig ExperimentConfig::from_json(const json& j) {
  ExperimentConfig c;
  try {
    reject_unknown(j, {"dataset", "catalog", "detector", "timesaver", "runtime", "jobs"}, "config");
    if (j.contains("dataset")) c.dataset = DatasetConfig::from_json(j["dataset"]);
    if (j.contains("catalog") && !j["catalog"].is_null()) c.catalog = j["catalog"].get<std::string>();
    if (j.contains("detector")) {
      const auto& d = j["detector"];
      reject_unknown(d, {"variant", "steps", "learning_rate", "epochs", "l2", "seed", "target_recall"}, "detector");
      if (d.contains("variant")) c.detector.variant = variant_from_string(d["variant"].get<std::string>());
      read_if(d, "steps", c.detector.steps);
      read_if(d, "learning_rate", c.detector.hyper.learning_rate);
      read_if(d, "epochs", c.detector.hyper.epochs);
      read_if(d, "l2", c.detector.hyper.l2);
      read_if(d, "seed", c.detector.hyper.seed);
      if (d.contains("target_recall") && !d["target_recall"].is_null())
        c.detector.hyper.target_recall = d["target_recall"].get<double>();
    }
    if (j.contains("timesaver")) {
      const auto& t = j["timesaver"];
      reject_unknown(t, {"trials", "seed", "completeness", "p_grid"}, "timesaver");
      read_if(t, "trials", c.timesaver.trials);
      read_if(t, "seed", c.timesaver.seed);
      read_if(t, "completeness", c.timesaver.completeness);
      read_if(t, "p_grid", c.timesaver.p_grid);
    }
    if (j.contains("runtime")) {
      const auto& r = j["runtime"];
      reject_unknown(r, {"runs", "root_seed", "max_restarts"}, "runtime");
      read_if(r, "runs", c.runtime.runs);
      read_if(r, "root_seed", c.runtime.root_seed);
      read_if(r, "max_restarts", c.runtime.max_restarts);
    }
    read_if(j, "jobs", c.jobs);
  } catch (const json::exception& e) {
    throw InvalidArgument(std::string("config: ") + e.what());
  }
  return c;
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config " + path.string());
  try {
    return from_json(json::parse(in));
  } catch (const json::parse_error& e) {
    throw InvalidArgument("config " + path.string() + ": " + e.what());
  }
}

std::vector<std::string> parse_string_list(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string item; std::getline(in, item, ',');) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::vector<int> parse_int_list(const std::string& text) {
  std::vector<int> out;
  for (const auto& item : parse_string_list(text)) {
    try {
      std::size_t used = 0;
      out.push_back(std::stoi(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw InvalidArgument("not an integer: '" + item + "'");
    }
  }
  return out;
}

std::vector<double> parse_double_list(const std::string& text) {
  std::vector<double> out;
  for (const auto& item : parse_string_list(text)) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw InvalidArgument("not a number: '" + item + "'");
    }
  }
  return out;
}

}  // namespace head
