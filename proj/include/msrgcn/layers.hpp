#pragma once

#include <cstddef>
#include <string>
#include <variant>
#include <vector>

#include "msrgcn/params.hpp"
#include "msrgcn/rng.hpp"
#include "msrgcn/tape.hpp"

namespace msrgcn::layers {

enum class Mode { train, eval };

/// How the normalization inside a GCL gathers statistics.
///
/// per_entry treats every (node, feature) entry as its own channel and
/// normalizes across the batch. per_feature pools each feature column over
/// nodes and batch. passthrough skips statistics and applies only the affine
/// map (used by gradient checks).
enum class NormMode { per_entry, per_feature, passthrough };

enum class LayerKind { gcn, fcl };

inline constexpr double kNormEps = 1e-5;
inline constexpr double kNormMomentum = 0.1;

struct LayerOptions {
  NormMode norm = NormMode::per_entry;
  double dropout_rate = 0.1;
};

struct NormParams {
  NormMode mode = NormMode::per_entry;
  std::size_t gamma = 0;
  std::size_t beta = 0;
  // Only meaningful when mode != passthrough.
  std::size_t running_mean = 0;
  std::size_t running_var = 0;
};

struct GclParams {
  std::size_t nodes = 0;
  std::size_t in_features = 0;
  std::size_t out_features = 0;
  std::size_t adjacency = 0;  // K×K
  std::size_t weight = 0;     // F_in×F_out
  NormParams norm;
  double dropout_rate = 0.1;
};

/// Dense replacement for a GCL: one (K·F)×(K·F) map on the flattened features.
struct FclParams {
  std::size_t nodes = 0;
  std::size_t features = 0;
  std::size_t weight = 0;
  NormParams norm;
  double dropout_rate = 0.1;
};

struct ResGcnBlock {
  GclParams first;
  GclParams second;
};

struct ResFclBlock {
  FclParams first;
  FclParams second;
};

using ResBlock = std::variant<ResGcnBlock, ResFclBlock>;

struct ResampleParams {
  std::size_t from_nodes = 0, to_nodes = 0;
  std::size_t from_features = 0, to_features = 0;
  std::size_t node_map = 0;  // K_a×K_b
  std::size_t feat_map = 0;  // F_a×F_b
};

/// Batch statistics observed by a train-mode normalization, to be folded
/// into the running buffers after the step.
struct StatUpdate {
  std::size_t running_mean = 0;
  std::size_t running_var = 0;
  Matrix mean;
  Matrix var;  // unbiased
};

/// Per-pass state shared by the layer functions: the tape, the parameters
/// read from, mode, dropout stream and batch size. Inputs are stacks of
/// `batch` row blocks, one per sample.
class ForwardContext {
 public:
  ForwardContext(Tape& tape, const ModelParams& params, Mode mode, Rng* rng, std::size_t batch);

  Tape& tape() { return tape_; }
  const ModelParams& params() const { return params_; }
  Mode mode() const { return mode_; }
  Rng* rng() { return rng_; }
  std::size_t batch() const { return batch_; }

  /// Tape leaf for a parameter; bound once per context.
  Var param(std::size_t id);
  std::vector<StatUpdate>& stat_updates() { return stats_; }

 private:
  Tape& tape_;
  const ModelParams& params_;
  Mode mode_;
  Rng* rng_;
  std::size_t batch_;
  std::vector<Var> bound_;
  std::vector<StatUpdate> stats_;
};

// Construction. Adjacency ~ U(±1/√K), weights ~ U(±1/√F_in), γ = 1, β = 0,
// running mean 0 and variance 1.
NormParams make_norm(ModelParams& store, const std::string& prefix, std::size_t nodes,
                     std::size_t features, NormMode mode);
GclParams make_gcl(ModelParams& store, const std::string& prefix, std::size_t nodes,
                   std::size_t in_features, std::size_t out_features, const LayerOptions& opt,
                   Rng& rng);
FclParams make_fcl(ModelParams& store, const std::string& prefix, std::size_t nodes,
                   std::size_t features, const LayerOptions& opt, Rng& rng);
ResBlock make_res_block(ModelParams& store, const std::string& prefix, LayerKind kind,
                        std::size_t nodes, std::size_t features, const LayerOptions& opt,
                        Rng& rng);
ResampleParams make_resample(ModelParams& store, const std::string& prefix,
                             std::size_t from_nodes, std::size_t to_nodes,
                             std::size_t from_features, std::size_t to_features, Rng& rng);

// Forward passes on stacked (batch·K)×F inputs.
Var norm_forward(ForwardContext& ctx, Var x, const NormParams& p);
/// Inverted dropout; identity in eval mode or at rate 0.
Var dropout_forward(ForwardContext& ctx, Var x, double rate);
/// dropout(tanh(norm(A·H·W))).
Var gcl_forward(ForwardContext& ctx, Var h, const GclParams& p);
Var fcl_layer_forward(ForwardContext& ctx, Var h, const FclParams& p);
/// h + L2(L1(h)).
Var res_block_forward(ForwardContext& ctx, Var h, const ResBlock& block);
/// node_mapᵀ·H then ·feat_map, no nonlinearity.
Var resample(ForwardContext& ctx, Var h, const ResampleParams& p);
/// The two halves of `resample`.
Var resample_nodes(ForwardContext& ctx, Var h, const ResampleParams& p);
Var resample_features(ForwardContext& ctx, Var h, const ResampleParams& p);

/// Folds train-mode batch statistics into the running buffers.
void apply_stat_updates(ModelParams& store, const std::vector<StatUpdate>& updates,
                        double momentum = kNormMomentum);

/// Learnable scalar count of one block, for closed-form comparisons.
std::size_t learnable_scalars(const ModelParams& store, const ResBlock& block);

}  // namespace msrgcn::layers
