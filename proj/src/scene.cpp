#include "head/scene.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "head/errors.hpp"

namespace head {

namespace {

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

std::vector<std::string> split_ws(std::string_view text) {
  std::vector<std::string> tokens;
  std::istringstream in{std::string(text)};
  for (std::string tok; in >> tok;) tokens.push_back(tok);
  return tokens;
}

Position parse_position(const std::string& token) {
  const auto colon = token.find(':');
  if (colon == std::string::npos) throw InvalidArgument("bad position '" + token + "'");
  try {
    return {std::stoi(token.substr(0, colon)), std::stoi(token.substr(colon + 1))};
  } catch (const std::exception&) {
    throw InvalidArgument("bad position '" + token + "'");
  }
}

void validate_object(const ObjectSpec& obj, int grid_size) {
  if (obj.id.empty()) throw InvalidArgument("object id is empty");
  if (!(obj.sigma > 0.0)) throw InvalidArgument("object '" + obj.id + "' has non-positive sigma");
  if (obj.candidate_positions.empty())
    throw InvalidArgument("object '" + obj.id + "' has no candidate positions");
  for (const auto& p : obj.candidate_positions) {
    if (p.row < 0 || p.col < 0 || p.row >= grid_size || p.col >= grid_size)
      throw InvalidArgument("object '" + obj.id + "' has a position outside the grid");
  }
}

}  // namespace

Grid ObjectSpec::placed(Position at, int grid_size) const {
  Grid g(grid_size, grid_size);
  const double inv = 1.0 / (2.0 * sigma * sigma);
  for (int r = 0; r < grid_size; ++r) {
    for (int c = 0; c < grid_size; ++c) {
      const double dr = r - at.row;
      const double dc = c - at.col;
      g(r, c) = std::exp(-(dr * dr + dc * dc) * inv);
    }
  }
  return g;
}

Grid ObjectSpec::template_field(int grid_size) const {
  return placed({grid_size / 2, grid_size / 2}, grid_size);
}

Catalog::Catalog(std::vector<ObjectSpec> objects, int grid_size)
    : objects_(std::move(objects)), grid_size_(grid_size) {
  if (grid_size <= 0) throw InvalidArgument("grid size must be positive");
  for (std::size_t i = 0; i < objects_.size(); ++i) {
    validate_object(objects_[i], grid_size_);
    for (std::size_t j = 0; j < i; ++j) {
      if (objects_[j].id == objects_[i].id)
        throw InvalidArgument("duplicate catalog id '" + objects_[i].id + "'");
    }
  }
}

Catalog Catalog::builtin_subjects_and_objects(std::vector<std::string>* subjects,
                                              std::vector<std::string>* objects,
                                              int grid_size) {
  static const char* const kAnimals[] = {"cat",  "dog",     "horse",    "cow",  "sheep",
                                         "bird", "dolphin", "elephant", "bear", "zebra"};
  static const char* const kThings[] = {"bench", "umbrella", "ball", "chair", "clock", "vase"};
  static constexpr double kSigmas[] = {1.0, 1.5, 2.0};

  const int lo = grid_size / 4;
  const int hi = grid_size - 1 - grid_size / 4;
  std::vector<ObjectSpec> specs;
  std::size_t k = 0;
  for (const char* name : kAnimals) {
    specs.push_back({name, kSigmas[k++ % 3], {{lo, lo}, {hi, lo}}});
    if (subjects) subjects->emplace_back(name);
  }
  for (const char* name : kThings) {
    specs.push_back({name, kSigmas[k++ % 3], {{lo, hi}, {hi, hi}}});
    if (objects) objects->emplace_back(name);
  }
  return Catalog(std::move(specs), grid_size);
}

Catalog Catalog::builtin(int grid_size) {
  return builtin_subjects_and_objects(nullptr, nullptr, grid_size);
}

Catalog Catalog::parse(std::istream& in, int grid_size) {
  std::vector<ObjectSpec> specs;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const auto tokens = split_ws(line);
    if (tokens.empty()) continue;
    if (tokens.size() != 3)
      throw InvalidArgument("catalog line " + std::to_string(line_no) +
                            ": expected `id sigma positions`");
    ObjectSpec obj;
    obj.id = tokens[0];
    try {
      obj.sigma = std::stod(tokens[1]);
    } catch (const std::exception&) {
      throw InvalidArgument("catalog line " + std::to_string(line_no) + ": bad sigma");
    }
    std::istringstream positions(tokens[2]);
    for (std::string p; std::getline(positions, p, ',');) {
      if (!p.empty()) obj.candidate_positions.push_back(parse_position(p));
    }
    specs.push_back(std::move(obj));
  }
  if (specs.empty()) throw EmptyCatalog("catalog has no objects");
  return Catalog(std::move(specs), grid_size);
}

Catalog Catalog::load(const std::filesystem::path& path, int grid_size) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open catalog " + path.string());
  return parse(in, grid_size);
}

void Catalog::write(std::ostream& out) const {
  for (const auto& obj : objects_) {
    out << obj.id << ' ' << obj.sigma << ' ';
    for (std::size_t i = 0; i < obj.candidate_positions.size(); ++i) {
      if (i) out << ',';
      out << obj.candidate_positions[i].row << ':' << obj.candidate_positions[i].col;
    }
    out << '\n';
  }
}

const ObjectSpec* Catalog::find(std::string_view id) const noexcept {
  for (const auto& obj : objects_) {
    if (obj.id == id) return &obj;
  }
  return nullptr;
}

const ObjectSpec& Catalog::at(std::string_view id) const {
  if (const auto* obj = find(id)) return *obj;
  throw UnknownObject("'" + std::string(id) + "' is not in the catalog");
}

std::vector<std::string> extract_targets(std::string_view text, const Catalog& catalog) {
  const auto tokens = split_ws(text);
  // a X (and a Y)*
  if (tokens.size() < 2 || (tokens.size() - 2) % 3 != 0)
    throw GrammarError("expected \"a {X} and a {Y} [and a {Z}]\", got \"" + std::string(text) + "\"");
  if (lower(tokens[0]) != "a") throw GrammarError("expected 'a' at token 0");
  std::vector<std::string> targets{tokens[1]};
  for (std::size_t i = 2; i < tokens.size(); i += 3) {
    if (lower(tokens[i]) != "and") throw GrammarError("expected 'and' at token " + std::to_string(i));
    if (lower(tokens[i + 1]) != "a")
      throw GrammarError("expected 'a' at token " + std::to_string(i + 1));
    targets.push_back(tokens[i + 2]);
  }
  if (targets.size() > 3) throw GrammarError("at most three targets are supported");
  for (std::size_t i = 0; i < targets.size(); ++i) {
    for (std::size_t j = 0; j < i; ++j) {
      if (targets[i] == targets[j]) throw GrammarError("duplicate target '" + targets[i] + "'");
    }
  }
  for (const auto& id : targets) catalog.at(id);
  return targets;
}

std::string render_prompt(std::span<const std::string> targets) {
  std::string text;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    if (i) text += " and ";
    text += "a " + targets[i];
  }
  return text;
}

Prompt make_prompt(std::span<const std::string> targets, const Catalog& catalog) {
  Prompt prompt{render_prompt(targets), {}};
  prompt.targets = extract_targets(prompt.text, catalog);
  return prompt;
}

bool SceneComponent::all_present() const {
  return std::all_of(present.begin(), present.end(), [](std::uint8_t b) { return b != 0; });
}

int MixtureSpec::target_index(std::string_view id) const {
  for (std::size_t i = 0; i < targets.size(); ++i) {
    if (targets[i] == id) return static_cast<int>(i);
  }
  throw UnknownObject("'" + std::string(id) + "' is not a target of this mixture");
}

Grid render_mean_image(const SceneComponent& component, std::span<const ObjectSpec> objects,
                       int grid_size) {
  Grid image(grid_size, grid_size);
  double amplitude = 0.0;
  for (std::size_t o = 0; o < objects.size(); ++o) {
    if (!component.present[o]) continue;
    const auto pos = objects[o].candidate_positions.at(static_cast<std::size_t>(component.position_choice[o]));
    const Grid g = objects[o].placed(pos, grid_size);
    for (std::size_t i = 0; i < image.size(); ++i) image[i] += g[i];
    amplitude += 1.0;
  }
  for (double& v : image.values()) v = std::clamp(v, 0.0, amplitude);
  return image;
}

MixtureSpec build_conditional_mixture(std::span<const std::string> targets,
                                      std::span<const double> faithfulness,
                                      const Catalog& catalog, double variance) {
  if (targets.empty()) throw EmptyTargets("mixture needs at least one target");
  if (faithfulness.size() != targets.size())
    throw InvalidArgument("one faithfulness value per target is required");
  for (double q : faithfulness) {
    if (!(q > 0.0 && q <= 1.0)) throw InvalidArgument("faithfulness must lie in (0, 1]");
  }
  if (!(variance >= 0.0)) throw InvalidArgument("component variance must be non-negative");

  MixtureSpec mix;
  mix.targets.assign(targets.begin(), targets.end());
  mix.faithfulness.assign(faithfulness.begin(), faithfulness.end());
  mix.grid_size = catalog.grid_size();
  mix.variance = variance;
  for (const auto& id : targets) mix.objects.push_back(catalog.at(id));
  for (const auto& obj : mix.objects) {
    std::vector<Grid> placed;
    for (const auto& pos : obj.candidate_positions) placed.push_back(obj.placed(pos, mix.grid_size));
    mix.placed_templates.push_back(std::move(placed));
  }

  // Mixed-radix enumeration; digit 0 = absent, digit j > 0 = position j - 1.
  // The first target is the most significant digit.
  const std::size_t n = targets.size();
  std::vector<int> radix(n);
  std::size_t total = 1;
  for (std::size_t o = 0; o < n; ++o) {
    radix[o] = 1 + static_cast<int>(mix.objects[o].candidate_positions.size());
    total *= static_cast<std::size_t>(radix[o]);
  }
  std::vector<int> digit(n, 0);
  for (std::size_t code = 0; code < total; ++code) {
    std::size_t rest = code;
    for (std::size_t o = n; o-- > 0;) {
      digit[o] = static_cast<int>(rest % static_cast<std::size_t>(radix[o]));
      rest /= static_cast<std::size_t>(radix[o]);
    }
    SceneComponent comp;
    comp.weight = 1.0;
    for (std::size_t o = 0; o < n; ++o) {
      const double q = mix.faithfulness[o];
      if (digit[o] == 0) {
        comp.present.push_back(0);
        comp.position_choice.push_back(-1);
        comp.weight *= 1.0 - q;
      } else {
        comp.present.push_back(1);
        comp.position_choice.push_back(digit[o] - 1);
        comp.weight *= q / static_cast<double>(radix[o] - 1);
      }
    }
    if (comp.weight <= 0.0) continue;
    comp.mean_image = render_mean_image(comp, mix.objects, mix.grid_size);
    mix.components.push_back(std::move(comp));
  }
  return mix;
}

MixtureSpec build_conditional_mixture(std::span<const std::string> targets, double faithfulness,
                                      const Catalog& catalog, double variance) {
  const std::vector<double> q(targets.size(), faithfulness);
  return build_conditional_mixture(targets, q, catalog, variance);
}

double completeness_probability(const MixtureSpec& mixture) {
  double p = 0.0;
  for (const auto& comp : mixture.components) {
    if (comp.all_present()) p += comp.weight;
  }
  return p;
}

}  // namespace head
