#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "misshift/datagen.hpp"
#include "misshift/missingness.hpp"
#include "misshift/neural.hpp"

namespace misshift {

inline constexpr int kConfigVersion = 1;

struct DatasetConfig {
  bool simulated = true;
  std::size_t d = 10;
  double lambda = 0.7;
  std::string path;                // ingested table
  std::vector<ColumnSpec> schema;  // ingested table
};

struct MechanismConfig {
  MechanismKind kind = MechanismKind::kMcar;
  double selfmask_tilt = 2.0;
  double mar_y_slope_scale = 1.0;
};

struct SizesConfig {
  std::size_t train = 100000;
  std::size_t val = 10000;
  std::size_t test = 10000;
};

// Knobs shared by every learned estimator in a run.
struct FitOptions {
  TrainConfig train;
  std::size_t mlp_width = 64;
  std::size_t mlp_depth = 1;
  std::size_t n_blocks = 20;
  std::size_t n_imp = 5;
  std::size_t n_draws = 5;
  std::size_t ice_iters = 10;
  double ridge_alpha = 1e-6;
  bool neumise_observed_stats = true;
};

struct GridConfig {
  bool enabled = false;
  std::size_t reps = 10;
  GridSpace space;
};

struct ExperimentConfig {
  int version = kConfigVersion;
  std::uint64_t master_seed = 0;
  std::string output_dir = "out";
  std::size_t workers = 0;  // 0 = hardware concurrency
  DatasetConfig dataset;
  MechanismConfig mechanism;
  double source_rate = 0.5;
  std::vector<double> target_rates{0.25};
  SizesConfig sizes;
  std::size_t repetitions = 1;
  std::vector<std::string> estimators;
  FitOptions fit;
  GridConfig grid;
};

ExperimentConfig parse_experiment_config(const std::string& json_text);
ExperimentConfig load_experiment_config(const std::string& path);
std::string experiment_config_to_json(const ExperimentConfig& cfg);
void validate_experiment_config(const ExperimentConfig& cfg);

}  // namespace misshift
