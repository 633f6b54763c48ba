#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "head/grid.hpp"

namespace head {

inline constexpr int kDefaultGridSize = 16;
inline constexpr double kDefaultComponentStd = 0.05;

struct Position {
  int row = 0;
  int col = 0;
  bool operator==(const Position&) const = default;
};

// A catalog entry: an isotropic Gaussian blob (peak 1) that may appear at one
// of a few fixed grid centers.
struct ObjectSpec {
  std::string id;
  double sigma = 1.5;
  std::vector<Position> candidate_positions;

  // Blob placed at `at`, peak 1, truncated at the grid border.
  Grid placed(Position at, int grid_size) const;
  // Blob placed at the grid center.
  Grid template_field(int grid_size) const;
};

class Catalog {
public:
  Catalog() = default;
  Catalog(std::vector<ObjectSpec> objects, int grid_size = kDefaultGridSize);

  // 10 animal subjects followed by 6 scene objects. Animals sit in the left
  // half of the grid, objects in the right half.
  static Catalog builtin(int grid_size = kDefaultGridSize);
  static Catalog builtin_subjects_and_objects(std::vector<std::string>* subjects,
                                              std::vector<std::string>* objects,
                                              int grid_size = kDefaultGridSize);

  // Text table, one object per line: `id sigma row:col[,row:col...]`.
  // Blank lines and `#` comments are skipped.
  static Catalog parse(std::istream& in, int grid_size = kDefaultGridSize);
  static Catalog load(const std::filesystem::path& path, int grid_size = kDefaultGridSize);
  void write(std::ostream& out) const;

  int grid_size() const noexcept { return grid_size_; }
  std::span<const ObjectSpec> objects() const noexcept { return objects_; }
  const ObjectSpec* find(std::string_view id) const noexcept;
  const ObjectSpec& at(std::string_view id) const;  // throws UnknownObject

private:
  std::vector<ObjectSpec> objects_;
  int grid_size_ = kDefaultGridSize;
};

struct Prompt {
  std::string text;
  std::vector<std::string> targets;
};

// Parses the closed grammar "a {X} and a {Y} [and a {Z}]" into the ordered
// target set. Case-insensitive on the literal words; ids are matched exactly.
std::vector<std::string> extract_targets(std::string_view text, const Catalog& catalog);
std::string render_prompt(std::span<const std::string> targets);
Prompt make_prompt(std::span<const std::string> targets, const Catalog& catalog);

struct SceneComponent {
  std::vector<std::uint8_t> present;   // per target
  std::vector<int> position_choice;    // per target, -1 when absent
  double weight = 0.0;
  Grid mean_image;

  bool all_present() const;
};

struct MixtureSpec {
  std::vector<std::string> targets;
  std::vector<ObjectSpec> objects;     // catalog entries of `targets`, same order
  std::vector<double> faithfulness;    // q per target
  std::vector<SceneComponent> components;
  int grid_size = kDefaultGridSize;
  double variance = kDefaultComponentStd * kDefaultComponentStd;
  // placed_templates[target][position], peak-normalized.
  std::vector<std::vector<Grid>> placed_templates;

  int target_index(std::string_view id) const;  // throws UnknownObject
};

// One component per presence/position combination with non-zero weight.
// Weight = prod_o (q_o / |pos_o| if present else 1 - q_o).
MixtureSpec build_conditional_mixture(std::span<const std::string> targets,
                                      std::span<const double> faithfulness,
                                      const Catalog& catalog,
                                      double variance = kDefaultComponentStd * kDefaultComponentStd);
MixtureSpec build_conditional_mixture(std::span<const std::string> targets, double faithfulness,
                                      const Catalog& catalog,
                                      double variance = kDefaultComponentStd * kDefaultComponentStd);

// Sum of placed templates of the present objects, clipped to [0, #present].
Grid render_mean_image(const SceneComponent& component, std::span<const ObjectSpec> objects,
                       int grid_size);

// Total weight of the components in which every target is present.
double completeness_probability(const MixtureSpec& mixture);

}  // namespace head
