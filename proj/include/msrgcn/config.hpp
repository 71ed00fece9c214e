#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "msrgcn/data.hpp"
#include "msrgcn/model.hpp"
#include "msrgcn/training.hpp"

namespace msrgcn::config {

struct SyntheticSource {
  data::MotionKind kind = data::MotionKind::sinusoid;
  std::size_t train_sequences = 8;
  std::size_t val_sequences = 2;
  std::size_t test_sequences = 2;
  std::size_t frames = 120;
  data::SyntheticOptions options;
  std::uint64_t seed = 0;
};

/// Everything a run needs, from an INI file plus overrides.
struct RunConfig {
  RunConfig() { dataset.eval_stride = 0; }

  model::ModelConfig model;
  std::string grouping = "h36m_22_12_7_4";

  training::TrainOptions train;

  std::string data_source = "synthetic";  // "synthetic" or a directory
  double fps = 25.0;  // synthetic frame rate; files carry their own
  std::string joint_selection = "none";  // none, h36m, cmu or comma-separated indices
  data::DatasetConfig dataset;  // eval stride 0 means T_f
  SyntheticSource synthetic;

  std::vector<double> horizons_ms{80, 160, 320, 400, 560, 1000};
};

/// Applies `section.key=value` assignments on top of INI text (defaults
/// for anything absent) and validates the result. Unknown keys are a
/// ConfigError.
RunConfig parse(const std::string& ini_text,
                const std::vector<std::pair<std::string, std::string>>& overrides = {});
RunConfig load(const std::filesystem::path& path,
               const std::vector<std::pair<std::string, std::string>>& overrides = {});

/// Splits "section.key=value"; throws ConfigError when malformed.
std::pair<std::string, std::string> parse_assignment(const std::string& text);

/// INI text with every effective value, parseable by `parse`.
std::string format(const RunConfig& cfg);

/// Windows of the configured data source, already split.
struct Datasets {
  std::vector<training::Sample> train, val, test;
  double fps = 0.0;
};
Datasets load_datasets(const RunConfig& cfg);

}  // namespace msrgcn::config
