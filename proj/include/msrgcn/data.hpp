#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "msrgcn/matrix.hpp"
#include "msrgcn/sample.hpp"

namespace msrgcn::data {

/// A 3-D joint-coordinate recording in millimeters. frames is T×(3J), one
/// row per frame, x y z per joint in joint order.
struct PoseSequence {
  std::size_t joints = 0;
  double fps = 0.0;
  Matrix frames;
  std::string subject;
  std::string action;

  std::size_t length() const noexcept { return frames.rows(); }
};

/// Checks joints/fps/shape invariants; throws DataError.
void validate(const PoseSequence& seq);

// Sequence file:
//   # comments, only before the header
//   MSRSEQ1 J=<n> FPS=<f> SUBJECT=<s> ACTION=<a>
//   <3J reals per line, one frame per line>
PoseSequence parse_sequence(std::string_view text);
PoseSequence load_sequence(const std::filesystem::path& path);
std::string format_sequence(const PoseSequence& seq);
void save_sequence(const std::filesystem::path& path, const PoseSequence& seq);

/// Every *.seq file under `dir`, in lexicographic path order.
std::vector<PoseSequence> load_directory(const std::filesystem::path& dir);

enum class Split { train, val, test };

struct SplitMap {
  std::map<std::string, Split> subjects{{"S5", Split::test}, {"S11", Split::val}};
  /// Split for subjects not listed; none makes them an error.
  std::optional<Split> fallback = Split::train;
};

struct DatasetConfig {
  /// Source joint indices to keep, in output order. Empty keeps all.
  std::vector<std::size_t> joint_selection;
  std::size_t temporal_downsample = 1;
  SplitMap split;
  std::size_t history = 10;
  std::size_t future = 25;
  std::size_t train_stride = 1;
  std::size_t eval_stride = 25;
};

/// The 22 of 32 Human3.6M joints conventionally kept for prediction.
std::vector<std::size_t> h36m_joint_selection();
/// The 25 of 38 CMU Mocap joints conventionally kept for prediction.
std::vector<std::size_t> cmu_joint_selection();

/// Keeps every factor-th frame starting with the first, then the selected
/// joints; fps is divided by the factor.
PoseSequence preprocess(const PoseSequence& seq, const DatasetConfig& cfg);

/// Sliding windows of history+future frames. Too-short sequences yield an
/// empty list (and a warning on stderr).
std::vector<training::Sample> window(const PoseSequence& seq, std::size_t history,
                                     std::size_t future, std::size_t stride);

struct SplitSets {
  std::vector<PoseSequence> train, val, test;
};

SplitSets split_by_subject(std::vector<PoseSequence> sequences, const SplitMap& map);

enum class MotionKind { sinusoid, linear, still };

struct SyntheticOptions {
  double amplitude = 0.5;       // sinusoid peak offset per coordinate
  double base_frequency = 0.6;  // Hz; joint j cycles at base·(1 + 0.25·(j mod 4))
  double velocity = 1.0;        // linear: units per frame along each axis direction
  double spread = 1.0;          // spacing of rest positions
  std::string subject = "S1";
  std::string action = "synthetic";
};

/// Seeded desk-scale motion. Sinusoid joints share fixed per-joint
/// frequencies; amplitudes, phases and rest pose depend on the seed.
PoseSequence synthetic_motion(MotionKind kind, std::size_t joints, std::size_t frames, double fps,
                              std::uint64_t seed, const SyntheticOptions& opt = {});

}  // namespace msrgcn::data
