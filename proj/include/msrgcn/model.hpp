#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "msrgcn/layers.hpp"
#include "msrgcn/multiscale.hpp"
#include "msrgcn/params.hpp"
#include "msrgcn/tape.hpp"

namespace msrgcn::model {

/// How descending and ascending features of one scale are combined before
/// the end GCN. concat_project concatenates along features and maps back
/// to the scale width with a learnable (2w)×w matrix.
enum class Fuse { add, concat_project };

struct ModelConfig {
  multiscale::GroupingScheme grouping = multiscale::h36m_22_12_7_4();
  std::vector<std::size_t> scale_widths{64, 128, 256, 512};
  std::size_t res_blocks_per_stage = 3;
  std::size_t history = 10;
  std::size_t future = 25;
  std::size_t levels = 4;
  bool use_inter_loss = true;
  bool use_global_residual = true;
  layers::LayerKind layer_kind = layers::LayerKind::gcn;
  Fuse fuse = Fuse::add;
  layers::NormMode norm = layers::NormMode::per_entry;
  double dropout_rate = 0.1;

  std::size_t frames() const noexcept { return history + future; }
  /// Graph node count K_s = 3·J_s.
  std::size_t nodes(std::size_t scale) const { return 3 * grouping.scales.at(scale); }
};

/// Throws ConfigError on the first invalid field.
void validate(const ModelConfig& cfg);

/// Canonical text of every field that shapes the parameter set.
std::string architecture_descriptor(const ModelConfig& cfg);
/// FNV-1a 64 of the architecture descriptor.
std::uint64_t config_digest(const ModelConfig& cfg);

struct EndGcn {
  layers::ResBlock block;
  layers::GclParams output;  // width_s -> T
  std::optional<std::size_t> fuse_projection;
};

/// Parameter ids of every layer, [scale][block] for the stage stacks.
/// downsample[s] maps scale s to s+1; upsample[s] maps s+1 back to s.
struct Architecture {
  layers::GclParams start_gcl;
  layers::ResBlock start_block;
  std::vector<std::vector<layers::ResBlock>> descending;
  std::vector<layers::ResampleParams> downsample;
  std::vector<std::vector<layers::ResBlock>> ascending;
  std::vector<layers::ResampleParams> upsample;
  std::vector<EndGcn> ends;
};

struct Model {
  ModelConfig config;
  Architecture arch;
  ModelParams params;
};

/// Allocates and initializes every layer, deterministically per seed.
Model build_model(const ModelConfig& cfg, std::uint64_t seed);

/// Sets each end GCN's output weight, normalization shift and running mean
/// to zero, so its output is exactly zero in both modes.
void zero_end_outputs(Model& m);

/// Predictions of one sample at every active scale, each K_s×T.
struct MultiScaleOutput {
  std::vector<Matrix> scales;
};

/// A recorded forward pass over a batch. Outputs and traced intermediates
/// are stacks of `batch` row blocks.
struct ForwardPass {
  Tape tape;
  std::size_t batch = 0;
  std::vector<Var> outputs;
  std::vector<layers::StatUpdate> stat_updates;
  std::vector<std::pair<std::string, Var>> trace;

  const Matrix& output(std::size_t scale) const { return tape.value(outputs.at(scale)); }
  MultiScaleOutput sample_output(std::size_t n) const;
  /// Per-sample shape of a traced stage ("D0", "downsample0/linear1", "E2/gcl", ...).
  std::pair<std::size_t, std::size_t> traced_shape(const std::string& name) const;
};

/// Runs the network on padded inputs. pyramids[n] must be built from
/// padded_inputs[n] with the model's grouping; only used for the global
/// residual. rng may be null in eval mode.
ForwardPass forward(const Model& m, std::span<const Matrix> padded_inputs,
                    std::span<const multiscale::ScalePyramid> pyramids, layers::Mode mode,
                    Rng* rng);

/// Propagates per-scale output gradients (stacked like the outputs) and
/// accumulates parameter gradients into m.params. Every learnable ends up
/// with a gradient buffer.
void backward(Model& m, ForwardPass& pass, std::span<const Matrix> output_grads);

/// Stacks equally shaped matrices along rows.
Matrix stack_rows(std::span<const Matrix> blocks);
Matrix row_block(const Matrix& stacked, std::size_t n, std::size_t rows);

}  // namespace msrgcn::model
