#include "msrgcn/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <iostream>
#include <map>
#include <numeric>
#include <thread>
#include <utility>

#include "msrgcn/errors.hpp"
#include "msrgcn/rng.hpp"

namespace msrgcn::training {

namespace {

void require_joint_rows(const Matrix& m, const char* what) {
  if (m.rows() % 3 != 0) {
    throw ShapeError(std::string(what) + ": row count " + std::to_string(m.rows()) +
                     " is not a multiple of 3");
  }
}

void require_same(const Matrix& a, const Matrix& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(what) + ": " + a.shape_string() + " vs " + b.shape_string());
  }
}

double sorted_sum(std::vector<double> values) {
  std::sort(values.begin(), values.end());
  double total = 0.0;
  for (double v : values) total += v;
  return total;
}

Matrix columns(const Matrix& m, std::size_t from, std::size_t count) {
  Matrix out(m.rows(), count);
  for (std::size_t r = 0; r < m.rows(); ++r) {
    for (std::size_t c = 0; c < count; ++c) out(r, c) = m(r, from + c);
  }
  return out;
}

void check_lambdas(const model::ModelConfig& cfg, std::span<const double> lambdas) {
  if (lambdas.size() < cfg.levels) {
    throw ConfigError("need " + std::to_string(cfg.levels) + " loss weights, got " +
                      std::to_string(lambdas.size()));
  }
}

}  // namespace

Matrix pad_replicate(const Matrix& history, std::size_t future) {
  if (history.cols() == 0) throw ShapeError("pad_replicate: empty history");
  const std::size_t th = history.cols();
  Matrix out(history.rows(), th + future);
  for (std::size_t r = 0; r < history.rows(); ++r) {
    for (std::size_t c = 0; c < th; ++c) out(r, c) = history(r, c);
    for (std::size_t c = th; c < th + future; ++c) out(r, c) = history(r, th - 1);
  }
  return out;
}

Matrix full_sequence(const Sample& s) {
  if (s.history.rows() != s.future.rows()) {
    throw ShapeError("sample history " + s.history.shape_string() + " and future " +
                     s.future.shape_string() + " differ in rows");
  }
  const std::size_t th = s.history.cols();
  Matrix out(s.history.rows(), th + s.future.cols());
  for (std::size_t r = 0; r < out.rows(); ++r) {
    for (std::size_t c = 0; c < th; ++c) out(r, c) = s.history(r, c);
    for (std::size_t c = 0; c < s.future.cols(); ++c) out(r, th + c) = s.future(r, c);
  }
  return out;
}

Matrix joint_errors(const Matrix& pred, const Matrix& gt) {
  require_same(pred, gt, "joint_errors");
  require_joint_rows(pred, "joint_errors");
  Matrix out(pred.rows() / 3, pred.cols());
  for (std::size_t j = 0; j < out.rows(); ++j) {
    for (std::size_t t = 0; t < pred.cols(); ++t) {
      double sq = 0.0;
      for (std::size_t a = 0; a < 3; ++a) {
        const double d = pred(3 * j + a, t) - gt(3 * j + a, t);
        sq += d * d;
      }
      out(j, t) = std::sqrt(sq);
    }
  }
  return out;
}

double mpjpe(const Matrix& pred, const Matrix& gt) {
  const Matrix e = joint_errors(pred, gt);
  if (e.size() == 0) return 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < e.size(); ++i) total += e[i];
  return total / static_cast<double>(e.size());
}

LossValue scale_loss(const Matrix& pred, const Matrix& gt, std::size_t batch,
                     const LossOptions& opt) {
  require_same(pred, gt, "scale_loss");
  require_joint_rows(pred, "scale_loss");
  if (batch == 0 || pred.rows() % batch != 0) {
    throw ShapeError("scale_loss: " + pred.shape_string() + " is not a stack of " +
                     std::to_string(batch) + " samples");
  }
  const std::size_t first = opt.future_only ? opt.history : 0;
  if (first >= pred.cols()) throw ShapeError("scale_loss: no frames left after the history");
  const std::size_t joints = pred.rows() / 3;
  const double count = static_cast<double>(joints * (pred.cols() - first));

  LossValue out;
  out.grad = Matrix(pred.rows(), pred.cols());
  double total = 0.0;
  for (std::size_t j = 0; j < joints; ++j) {
    for (std::size_t t = first; t < pred.cols(); ++t) {
      double d[3];
      double sq = 0.0;
      for (std::size_t a = 0; a < 3; ++a) {
        d[a] = pred(3 * j + a, t) - gt(3 * j + a, t);
        sq += d[a] * d[a];
      }
      if (opt.squared) {
        total += sq;
        for (std::size_t a = 0; a < 3; ++a) out.grad(3 * j + a, t) = 2.0 * d[a] / count;
      } else {
        const double norm = std::sqrt(sq);
        total += norm;
        if (norm > 0.0) {
          for (std::size_t a = 0; a < 3; ++a) out.grad(3 * j + a, t) = d[a] / norm / count;
        }
      }
    }
  }
  out.value = total / count;
  return out;
}

double total_loss(std::span<const double> losses, std::span<const double> lambdas,
                  bool use_inter_loss) {
  if (losses.empty()) return 0.0;
  if (lambdas.size() < losses.size()) {
    throw ConfigError("need " + std::to_string(losses.size()) + " loss weights, got " +
                      std::to_string(lambdas.size()));
  }
  const std::size_t n = use_inter_loss ? losses.size() : 1;
  double total = 0.0;
  for (std::size_t s = 0; s < n; ++s) total += lambdas[s] * losses[s];
  return total;
}

Matrix zero_velocity_baseline(const Matrix& history, std::size_t future) {
  if (history.cols() == 0) throw ShapeError("zero_velocity_baseline: empty history");
  Matrix out(history.rows(), future);
  for (std::size_t r = 0; r < history.rows(); ++r) {
    for (std::size_t c = 0; c < future; ++c) out(r, c) = history(r, history.cols() - 1);
  }
  return out;
}

std::size_t horizon_frame(double horizon_ms, double fps) {
  if (!(horizon_ms > 0.0) || !(fps > 0.0)) {
    throw ConfigError("horizon and frame rate must be positive");
  }
  const double frames = horizon_ms * fps / 1000.0;
  // The small slack keeps exact halves from rounding down through representation error.
  return static_cast<std::size_t>(std::floor(frames + 0.5 + 1e-9));
}

Matrix predict_future(const model::Model& m, const Matrix& history) {
  const auto& cfg = m.config;
  if (history.cols() != cfg.history || history.rows() != cfg.nodes(0)) {
    throw ShapeError("history must be " + std::to_string(cfg.nodes(0)) + "x" +
                     std::to_string(cfg.history) + ", got " + history.shape_string());
  }
  const Matrix padded = pad_replicate(history, cfg.future);
  const multiscale::ScalePyramid pyramid = multiscale::build_pyramid(padded, cfg.grouping, cfg.levels);
  const model::ForwardPass pass = model::forward(m, std::span<const Matrix>(&padded, 1),
                                                 std::span<const multiscale::ScalePyramid>(&pyramid, 1),
                                                 layers::Mode::eval, nullptr);
  return columns(pass.output(0), cfg.history, cfg.future);
}

std::size_t worker_threads() {
  if (const char* env = std::getenv("MSR_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && v > 0) return static_cast<std::size_t>(v);
    std::cerr << "warning: ignoring MSR_THREADS=" << env << "\n";
  }
  return std::max<std::size_t>(1, std::thread::hardware_concurrency());
}

EvalReport evaluate_predictor(const Predictor& predict, std::span<const Sample> samples,
                              std::span<const double> horizons_ms, double fps,
                              std::size_t future, std::size_t threads) {
  EvalReport rep;
  rep.horizons_ms.assign(horizons_ms.begin(), horizons_ms.end());
  for (double h : horizons_ms) {
    const std::size_t f = horizon_frame(h, fps);
    if (f < 1 || f > future) {
      throw ConfigError("horizon " + std::to_string(h) + " ms maps to frame " + std::to_string(f) +
                        ", outside 1.." + std::to_string(future));
    }
    rep.frames.push_back(f);
  }
  rep.samples = samples.size();
  if (samples.empty()) return rep;

  struct PerSample {
    std::vector<double> at_horizon;
    std::vector<double> per_joint;
  };
  std::vector<PerSample> results(samples.size());
  auto work = [&](std::size_t i) {
    const Sample& s = samples[i];
    const Matrix pred = predict(s);
    const Matrix err = joint_errors(pred, s.future);
    PerSample& r = results[i];
    for (std::size_t f : rep.frames) {
      double total = 0.0;
      for (std::size_t j = 0; j < err.rows(); ++j) total += err(j, f - 1);
      r.at_horizon.push_back(total / static_cast<double>(err.rows()));
    }
    r.per_joint.resize(err.rows());
    for (std::size_t j = 0; j < err.rows(); ++j) {
      double total = 0.0;
      for (std::size_t t = 0; t < err.cols(); ++t) total += err(j, t);
      r.per_joint[j] = total / static_cast<double>(err.cols());
    }
  };

  if (threads == 0) threads = worker_threads();
  threads = std::min(threads, samples.size());
  if (threads <= 1) {
    for (std::size_t i = 0; i < samples.size(); ++i) work(i);
  } else {
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(threads);
    for (std::size_t w = 0; w < threads; ++w) {
      pool.emplace_back([&, w] {
        try {
          for (std::size_t i = w; i < samples.size(); i += threads) work(i);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }

  std::map<std::string, std::vector<std::size_t>> by_action;
  for (std::size_t i = 0; i < samples.size(); ++i) by_action[samples[i].action].push_back(i);
  const std::size_t nh = rep.frames.size();
  for (const auto& [action, idx] : by_action) {
    rep.actions.push_back(action);
    rep.action_counts.push_back(idx.size());
    std::vector<double> row(nh);
    for (std::size_t h = 0; h < nh; ++h) {
      std::vector<double> vals;
      for (std::size_t i : idx) vals.push_back(results[i].at_horizon[h]);
      row[h] = sorted_sum(std::move(vals)) / static_cast<double>(idx.size());
    }
    rep.action_mpjpe.push_back(std::move(row));
  }
  const double n = static_cast<double>(samples.size());
  rep.overall.resize(nh);
  for (std::size_t h = 0; h < nh; ++h) {
    std::vector<double> vals;
    for (const auto& r : results) vals.push_back(r.at_horizon[h]);
    rep.overall[h] = sorted_sum(std::move(vals)) / n;
  }
  const std::size_t joints = results.front().per_joint.size();
  rep.per_joint.resize(joints);
  for (std::size_t j = 0; j < joints; ++j) {
    std::vector<double> vals;
    for (const auto& r : results) vals.push_back(r.per_joint[j]);
    rep.per_joint[j] = sorted_sum(std::move(vals)) / n;
  }
  return rep;
}

EvalReport evaluate(const model::Model& m, std::span<const Sample> samples,
                    std::span<const double> horizons_ms, double fps, std::size_t threads) {
  return evaluate_predictor([&](const Sample& s) { return predict_future(m, s.history); },
                            samples, horizons_ms, fps, m.config.future, threads);
}

PreparedBatch prepare_batch(const model::ModelConfig& cfg, std::span<const Sample> samples) {
  PreparedBatch b;
  std::vector<std::vector<Matrix>> per_scale(cfg.levels);
  for (const Sample& s : samples) {
    if (s.history.cols() != cfg.history || s.future.cols() != cfg.future) {
      throw ShapeError("sample has " + std::to_string(s.history.cols()) + "+" +
                       std::to_string(s.future.cols()) + " frames, model expects " +
                       std::to_string(cfg.history) + "+" + std::to_string(cfg.future));
    }
    b.inputs.push_back(pad_replicate(s.history, cfg.future));
    b.input_pyramids.push_back(multiscale::build_pyramid(b.inputs.back(), cfg.grouping, cfg.levels));
    const multiscale::ScalePyramid truth =
        multiscale::build_pyramid(full_sequence(s), cfg.grouping, cfg.levels);
    for (std::size_t l = 0; l < cfg.levels; ++l) per_scale[l].push_back(truth.scales[l]);
  }
  for (auto& blocks : per_scale) b.targets.push_back(model::stack_rows(blocks));
  return b;
}

BatchLoss batch_loss(const model::ModelConfig& cfg, const model::ForwardPass& pass,
                     const PreparedBatch& batch, std::span<const double> lambdas,
                     const LossOptions& opt) {
  check_lambdas(cfg, lambdas);
  LossOptions o = opt;
  o.history = cfg.history;
  BatchLoss out;
  for (std::size_t s = 0; s < cfg.levels; ++s) {
    LossValue l = scale_loss(pass.output(s), batch.targets[s], pass.batch, o);
    out.per_scale.push_back(l.value);
    const bool active = s == 0 || cfg.use_inter_loss;
    if (active) {
      for (std::size_t i = 0; i < l.grad.size(); ++i) l.grad[i] *= lambdas[s];
    } else {
      l.grad.fill(0.0);
    }
    out.grads.push_back(std::move(l.grad));
  }
  out.total = total_loss(out.per_scale, lambdas, cfg.use_inter_loss);
  if (!std::isfinite(out.total)) throw NumericError("non-finite loss");
  return out;
}

double dataset_loss(const model::Model& m, std::span<const Sample> samples,
                    std::span<const double> lambdas, const LossOptions& opt,
                    std::size_t batch_size) {
  if (samples.empty()) return 0.0;
  batch_size = std::max<std::size_t>(1, batch_size);
  double total = 0.0;
  for (std::size_t i = 0; i < samples.size(); i += batch_size) {
    const auto chunk = samples.subspan(i, std::min(batch_size, samples.size() - i));
    const PreparedBatch b = prepare_batch(m.config, chunk);
    const model::ForwardPass pass =
        model::forward(m, b.inputs, b.input_pyramids, layers::Mode::eval, nullptr);
    total += batch_loss(m.config, pass, b, lambdas, opt).total * static_cast<double>(chunk.size());
  }
  return total / static_cast<double>(samples.size());
}

namespace {

double val_mpjpe(const model::Model& m, std::span<const Sample> samples) {
  if (samples.empty()) return 0.0;
  std::vector<double> vals;
  for (const Sample& s : samples) vals.push_back(mpjpe(predict_future(m, s.history), s.future));
  return sorted_sum(std::move(vals)) / static_cast<double>(samples.size());
}

std::vector<Sample> gather(std::span<const Sample> train, std::span<const std::size_t> idx) {
  std::vector<Sample> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(train[i]);
  return out;
}

double train_mode_loss(const model::Model& m, std::span<const Sample> samples,
                       std::span<const double> lambdas, const LossOptions& opt,
                       std::size_t batch_size, Rng& rng) {
  double total = 0.0;
  for (std::size_t i = 0; i < samples.size(); i += batch_size) {
    const auto chunk = samples.subspan(i, std::min(batch_size, samples.size() - i));
    const PreparedBatch b = prepare_batch(m.config, chunk);
    const model::ForwardPass pass =
        model::forward(m, b.inputs, b.input_pyramids, layers::Mode::train, &rng);
    total += batch_loss(m.config, pass, b, lambdas, opt).total * static_cast<double>(chunk.size());
  }
  return total / static_cast<double>(samples.size());
}

}  // namespace

FitResult fit(model::Model& m, std::span<const Sample> train, std::span<const Sample> val,
              const TrainOptions& opt) {
  check_lambdas(m.config, opt.lambdas);
  if (train.empty()) throw ConfigError("no training samples");
  const std::size_t bs = std::max<std::size_t>(1, opt.batch_size);

  FitResult result;
  {
    Rng probe(opt.seed ^ 0x5851f42d4c957f2dULL);
    result.initial_train_loss = train_mode_loss(m, train, opt.lambdas, opt.loss, bs, probe);
  }
  result.best_params = m.params;
  result.best_params.drop_grads();

  std::vector<AdamState> states(m.params.size());
  for (std::size_t id = 0; id < m.params.size(); ++id) {
    if (m.params.learnable(id)) states[id] = AdamState(m.params.at(id), opt.adam);
  }

  Rng order(opt.seed);
  Rng dropout(opt.seed + 1);
  std::vector<std::size_t> idx(train.size());
  std::iota(idx.begin(), idx.end(), 0);
  double best = INFINITY;

  for (std::size_t epoch = 0; epoch < opt.epochs; ++epoch) {
    const double lr = lr_at(epoch, opt.lr);
    order.shuffle(std::span<std::size_t>(idx));
    double epoch_loss = 0.0;
    for (std::size_t i = 0; i < idx.size(); i += bs) {
      const auto pick = std::span<const std::size_t>(idx).subspan(i, std::min(bs, idx.size() - i));
      const std::vector<Sample> chunk = gather(train, pick);
      const PreparedBatch b = prepare_batch(m.config, chunk);
      model::ForwardPass pass =
          model::forward(m, b.inputs, b.input_pyramids, layers::Mode::train, &dropout);
      const BatchLoss loss = batch_loss(m.config, pass, b, opt.lambdas, opt.loss);
      epoch_loss += loss.total * static_cast<double>(chunk.size());

      m.params.zero_grads();
      model::backward(m, pass, loss.grads);
      for (std::size_t id = 0; id < m.params.size(); ++id) {
        if (!m.params.learnable(id)) continue;
        try {
          adam_step(m.params.at(id), states[id], lr);
        } catch (const NumericError& e) {
          throw NumericError(m.params.path(id) + ": " + e.what());
        }
      }
      layers::apply_stat_updates(m.params, pass.stat_updates);
    }
    m.params.drop_grads();

    EpochRecord rec;
    rec.epoch = epoch + 1;
    rec.lr = lr;
    rec.train_loss = epoch_loss / static_cast<double>(train.size());
    if (!val.empty()) {
      rec.val_loss = dataset_loss(m, val, opt.lambdas, opt.loss, bs);
      rec.val_mpjpe = val_mpjpe(m, val);
    }
    const double score = val.empty() ? rec.train_loss : rec.val_loss;
    if (score < best) {
      best = score;
      result.best_epoch = rec.epoch;
      result.best_params = m.params;
    }
    result.curve.push_back(rec);
    if (opt.on_epoch) opt.on_epoch(rec);
  }
  return result;
}

double relative_error(double a, double b, double floor) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

model::ModelConfig tiny_config() {
  model::ModelConfig cfg;
  cfg.grouping = multiscale::toy_6_3_2_1();
  cfg.levels = 2;
  cfg.scale_widths = {4, 8};
  cfg.res_blocks_per_stage = 1;
  cfg.history = 2;
  cfg.future = 3;
  cfg.dropout_rate = 0.0;
  cfg.norm = layers::NormMode::passthrough;
  return cfg;
}

GradcheckReport gradcheck_model(const model::ModelConfig& cfg, const GradcheckOptions& opt) {
  model::validate(cfg);
  model::Model m = model::build_model(cfg, opt.seed);
  Rng data(opt.seed + 17);
  std::vector<Sample> samples(std::max<std::size_t>(1, opt.batch));
  for (auto& s : samples) {
    s.history = Matrix(cfg.nodes(0), cfg.history);
    s.future = Matrix(cfg.nodes(0), cfg.future);
    for (std::size_t i = 0; i < s.history.size(); ++i) s.history[i] = data.uniform(-1.0, 1.0);
    for (std::size_t i = 0; i < s.future.size(); ++i) s.future[i] = data.uniform(-1.0, 1.0);
  }
  const PreparedBatch b = prepare_batch(cfg, samples);
  const std::vector<double> lambdas(cfg.levels, 1.0);
  const LossOptions lopt;

  // Same dropout masks on every evaluation.
  auto eval = [&](bool with_grad) {
    Rng rng(opt.seed + 29);
    model::ForwardPass pass = model::forward(m, b.inputs, b.input_pyramids, layers::Mode::train, &rng);
    const BatchLoss loss = batch_loss(cfg, pass, b, lambdas, lopt);
    if (with_grad) {
      m.params.zero_grads();
      model::backward(m, pass, loss.grads);
    }
    return loss.total;
  };

  eval(true);
  std::vector<Matrix> analytic(m.params.size());
  std::size_t total = 0;
  for (std::size_t id = 0; id < m.params.size(); ++id) {
    if (!m.params.learnable(id)) continue;
    const auto g = std::as_const(m.params.at(id)).grad();
    analytic[id] = Matrix(m.params.at(id).rows(), m.params.at(id).cols(),
                          std::vector<Scalar>(g.begin(), g.end()));
    total += m.params.at(id).size();
  }
  m.params.drop_grads();

  const std::size_t budget = std::max<std::size_t>(opt.max_entries, 500);
  const std::size_t stride = total <= budget ? 1 : total / budget;

  GradcheckReport rep;
  rep.max_rel_error = 0.0;
  for (std::size_t id = 0; id < m.params.size(); ++id) {
    if (!m.params.learnable(id)) continue;
    Matrix& p = m.params.at(id);
    const std::size_t offset = stride > 1 ? data.below(stride) : 0;
    for (std::size_t i = std::min(offset, p.size() - 1); i < p.size(); i += stride) {
      const double orig = p[i];
      p[i] = orig + opt.eps;
      const double up = eval(false);
      p[i] = orig - opt.eps;
      const double down = eval(false);
      p[i] = orig;
      const double numeric = (up - down) / (2.0 * opt.eps);
      const double a = analytic[id][i];
      const double err = relative_error(a, numeric, opt.floor);
      ++rep.checked;
      if (std::max(std::abs(a), std::abs(numeric)) < opt.floor) ++rep.below_floor;
      if (err > rep.max_rel_error || rep.worst_param.empty()) {
        rep.max_rel_error = std::max(rep.max_rel_error, err);
        rep.worst_param = m.params.path(id);
        rep.worst_index = i;
        rep.worst_analytic = a;
        rep.worst_numeric = numeric;
      }
    }
  }
  rep.passed = rep.checked > 0 && rep.max_rel_error <= opt.tol;
  return rep;
}

}  // namespace msrgcn::training
