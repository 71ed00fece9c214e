#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "msrgcn/adam.hpp"
#include "msrgcn/model.hpp"
#include "msrgcn/sample.hpp"

namespace msrgcn::training {

/// History followed by T_f copies of its last frame.
Matrix pad_replicate(const Matrix& history, std::size_t future);
/// History and future side by side, K×(T_h+T_f).
Matrix full_sequence(const Sample& s);

/// Mean Euclidean joint distance over joints and frames. Rows are 3·J.
double mpjpe(const Matrix& pred, const Matrix& gt);
/// Euclidean error of every joint at every frame, J×T'.
Matrix joint_errors(const Matrix& pred, const Matrix& gt);

struct LossOptions {
  bool squared = false;      // ‖·‖² instead of ‖·‖
  bool future_only = false;  // skip the first `history` frames
  std::size_t history = 0;
};

struct LossValue {
  double value = 0.0;
  Matrix grad;  // d value / d pred
};

/// Mean joint distance at one scale over a stacked batch of `batch` samples.
LossValue scale_loss(const Matrix& pred, const Matrix& gt, std::size_t batch,
                     const LossOptions& opt = {});

/// Σ λ_s·L_s; only scale 0 contributes when use_inter_loss is false.
double total_loss(std::span<const double> losses, std::span<const double> lambdas,
                  bool use_inter_loss = true);

/// Repeats the last observed frame T_f times.
Matrix zero_velocity_baseline(const Matrix& history, std::size_t future);

/// Rounds half up: horizon_ms·fps/1000.
std::size_t horizon_frame(double horizon_ms, double fps);

/// Model prediction of the T_f future frames (eval mode).
Matrix predict_future(const model::Model& m, const Matrix& history);

struct EvalReport {
  std::vector<double> horizons_ms;
  std::vector<std::size_t> frames;  // 1-based future frame per horizon
  std::vector<std::string> actions;  // sorted
  std::vector<std::size_t> action_counts;
  std::vector<std::vector<double>> action_mpjpe;  // [action][horizon]
  std::vector<double> overall;                    // [horizon], sample-weighted
  std::vector<double> per_joint;                  // over samples and all future frames
  std::size_t samples = 0;
};

using Predictor = std::function<Matrix(const Sample&)>;

/// Errors of `predict` on the future segment at each horizon frame.
/// Independent of sample order. threads == 0 reads MSR_THREADS.
EvalReport evaluate_predictor(const Predictor& predict, std::span<const Sample> samples,
                              std::span<const double> horizons_ms, double fps,
                              std::size_t future, std::size_t threads = 0);
EvalReport evaluate(const model::Model& m, std::span<const Sample> samples,
                    std::span<const double> horizons_ms, double fps, std::size_t threads = 0);

/// Worker cap from MSR_THREADS, else hardware concurrency (at least 1).
std::size_t worker_threads();

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double lr = 0.0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_mpjpe = 0.0;
};

struct TrainOptions {
  std::size_t epochs = 200;
  std::size_t batch_size = 16;
  std::uint64_t seed = 0;
  LrSchedule lr;
  AdamHyper adam;
  std::vector<double> lambdas{1.0, 1.0, 1.0, 1.0};
  LossOptions loss;
  std::function<void(const EpochRecord&)> on_epoch;
};

struct FitResult {
  ModelParams best_params;
  std::size_t best_epoch = 0;  // 0 when no epoch ran; scored on train loss without a validation set
  double initial_train_loss = 0.0;
  std::vector<EpochRecord> curve;
};

/// Batch loss and its per-scale gradients for a recorded pass.
struct BatchLoss {
  double total = 0.0;
  std::vector<double> per_scale;
  std::vector<Matrix> grads;  // already weighted by λ
};

struct PreparedBatch {
  std::vector<Matrix> inputs;
  std::vector<multiscale::ScalePyramid> input_pyramids;
  std::vector<Matrix> targets;  // stacked ground truth per scale
};

PreparedBatch prepare_batch(const model::ModelConfig& cfg, std::span<const Sample> samples);
BatchLoss batch_loss(const model::ModelConfig& cfg, const model::ForwardPass& pass,
                     const PreparedBatch& batch, std::span<const double> lambdas,
                     const LossOptions& opt);

/// Mini-batch Adam training. Updates `m` in place and returns the
/// parameters with the lowest validation loss.
FitResult fit(model::Model& m, std::span<const Sample> train, std::span<const Sample> val,
              const TrainOptions& opt);

/// Total loss in eval mode over a sample set.
double dataset_loss(const model::Model& m, std::span<const Sample> samples,
                    std::span<const double> lambdas, const LossOptions& opt,
                    std::size_t batch_size = 16);

struct GradcheckOptions {
  std::uint64_t seed = 0;
  double eps = 1e-5;
  double tol = 1e-4;
  /// Train-mode batch statistics over very few samples are too ill-conditioned
  /// for finite differences; use 8 or more with batch normalization.
  std::size_t batch = 2;
  /// Entries beyond this are subsampled (never below 500).
  std::size_t max_entries = 20000;
  /// Denominator floor of the relative error. Central differences of an
  /// O(1) loss resolve gradients only to about 1e-11, so entries far below
  /// this floor are judged by absolute error.
  double floor = 1e-6;
};

struct GradcheckReport {
  std::size_t checked = 0;
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t below_floor = 0;  // entries with max(|a|, |n|) < floor
  bool passed = false;
};

/// Central differences of the total loss against analytic gradients.
GradcheckReport gradcheck_model(const model::ModelConfig& cfg, const GradcheckOptions& opt = {});

/// 6 joints, 2 scales, widths 4/8, T = 2 + 3, dropout 0, passthrough norm.
model::ModelConfig tiny_config();

/// |a−b| / max(|a|, |b|, floor).
double relative_error(double a, double b, double floor = 1e-8);

}  // namespace msrgcn::training
