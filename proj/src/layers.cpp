#include "msrgcn/layers.hpp"

#include <cmath>

#include "msrgcn/errors.hpp"

namespace msrgcn::layers {

ForwardContext::ForwardContext(Tape& tape, const ModelParams& params, Mode mode, Rng* rng,
                               std::size_t batch)
    : tape_(tape), params_(params), mode_(mode), rng_(rng), batch_(batch),
      bound_(params.size()) {
  if (batch == 0) throw UsageError("forward pass needs a non-empty batch");
}

Var ForwardContext::param(std::size_t id) {
  Var& v = bound_.at(id);
  if (!v.valid()) v = tape_.parameter(params_.at(id), id);
  return v;
}

namespace {

Matrix uniform_matrix(std::size_t rows, std::size_t cols, double bound, Rng& rng) {
  Matrix m(rows, cols);
  for (auto& v : m.data()) v = rng.uniform(-bound, bound);
  return m;
}

}  // namespace

NormParams make_norm(ModelParams& store, const std::string& prefix, std::size_t nodes,
                     std::size_t features, NormMode mode) {
  const std::size_t rows = mode == NormMode::per_feature ? 1 : nodes;
  NormParams p;
  p.mode = mode;
  p.gamma = store.add(prefix + "/gamma", Matrix(rows, features, 1.0));
  p.beta = store.add(prefix + "/beta", Matrix(rows, features, 0.0));
  if (mode != NormMode::passthrough) {
    p.running_mean = store.add(prefix + "/running_mean", Matrix(rows, features, 0.0), false);
    p.running_var = store.add(prefix + "/running_var", Matrix(rows, features, 1.0), false);
  }
  return p;
}

GclParams make_gcl(ModelParams& store, const std::string& prefix, std::size_t nodes,
                   std::size_t in_features, std::size_t out_features, const LayerOptions& opt,
                   Rng& rng) {
  if (nodes == 0 || in_features == 0 || out_features == 0) {
    throw ConfigError(prefix + ": GCL dimensions must be positive");
  }
  if (!(opt.dropout_rate >= 0.0 && opt.dropout_rate < 1.0)) {
    throw ConfigError(prefix + ": dropout rate must lie in [0, 1)");
  }
  GclParams p;
  p.nodes = nodes;
  p.in_features = in_features;
  p.out_features = out_features;
  p.dropout_rate = opt.dropout_rate;
  p.adjacency = store.add(prefix + "/A",
                          uniform_matrix(nodes, nodes, 1.0 / std::sqrt(double(nodes)), rng));
  p.weight = store.add(prefix + "/W", uniform_matrix(in_features, out_features,
                                                     1.0 / std::sqrt(double(in_features)), rng));
  p.norm = make_norm(store, prefix + "/norm", nodes, out_features, opt.norm);
  return p;
}

FclParams make_fcl(ModelParams& store, const std::string& prefix, std::size_t nodes,
                   std::size_t features, const LayerOptions& opt, Rng& rng) {
  if (!(opt.dropout_rate >= 0.0 && opt.dropout_rate < 1.0)) {
    throw ConfigError(prefix + ": dropout rate must lie in [0, 1)");
  }
  const std::size_t n = nodes * features;
  FclParams p;
  p.nodes = nodes;
  p.features = features;
  p.dropout_rate = opt.dropout_rate;
  p.weight = store.add(prefix + "/W", uniform_matrix(n, n, 1.0 / std::sqrt(double(n)), rng));
  p.norm = make_norm(store, prefix + "/norm", nodes, features, opt.norm);
  return p;
}

ResBlock make_res_block(ModelParams& store, const std::string& prefix, LayerKind kind,
                        std::size_t nodes, std::size_t features, const LayerOptions& opt,
                        Rng& rng) {
  if (kind == LayerKind::fcl) {
    ResFclBlock b;
    b.first = make_fcl(store, prefix + "/fcl0", nodes, features, opt, rng);
    b.second = make_fcl(store, prefix + "/fcl1", nodes, features, opt, rng);
    return b;
  }
  ResGcnBlock b;
  b.first = make_gcl(store, prefix + "/gcl0", nodes, features, features, opt, rng);
  b.second = make_gcl(store, prefix + "/gcl1", nodes, features, features, opt, rng);
  return b;
}

ResampleParams make_resample(ModelParams& store, const std::string& prefix,
                             std::size_t from_nodes, std::size_t to_nodes,
                             std::size_t from_features, std::size_t to_features, Rng& rng) {
  ResampleParams p;
  p.from_nodes = from_nodes;
  p.to_nodes = to_nodes;
  p.from_features = from_features;
  p.to_features = to_features;
  p.node_map = store.add(prefix + "/node_map",
                         uniform_matrix(from_nodes, to_nodes, 1.0 / std::sqrt(double(from_nodes)), rng));
  p.feat_map = store.add(prefix + "/feat_map", uniform_matrix(from_features, to_features,
                                                              1.0 / std::sqrt(double(from_features)), rng));
  return p;
}

Var norm_forward(ForwardContext& ctx, Var x, const NormParams& p) {
  Tape& tape = ctx.tape();
  // Binding parameters can grow the tape, so take value references afterwards.
  const Var gamma = ctx.param(p.gamma);
  const Var beta = ctx.param(p.beta);
  const Matrix& xv = tape.value(x);
  const Matrix& g = tape.value(gamma);
  const Matrix& b = tape.value(beta);
  // Element e belongs to statistics group e % groups; γ and β are indexed by group.
  const std::size_t groups = g.size();
  if (groups == 0 || xv.size() % groups != 0 || xv.cols() != g.cols()) {
    throw ShapeError("norm: input " + xv.shape_string() + " vs affine " + g.shape_string());
  }
  const std::size_t count = xv.size() / groups;
  const bool batch_stats = ctx.mode() == Mode::train && p.mode != NormMode::passthrough;

  std::vector<double> mean(groups, 0.0), inv(groups, 1.0);
  if (batch_stats) {
    std::vector<double> var(groups, 0.0);
    for (std::size_t e = 0; e < xv.size(); ++e) mean[e % groups] += xv[e];
    for (auto& m : mean) m /= double(count);
    for (std::size_t e = 0; e < xv.size(); ++e) {
      const double d = xv[e] - mean[e % groups];
      var[e % groups] += d * d;
    }
    for (auto& v : var) v /= double(count);
    for (std::size_t k = 0; k < groups; ++k) inv[k] = 1.0 / std::sqrt(var[k] + kNormEps);

    StatUpdate up;
    up.running_mean = p.running_mean;
    up.running_var = p.running_var;
    up.mean = Matrix(g.rows(), g.cols(), mean);
    const double unbias = count > 1 ? double(count) / double(count - 1) : 1.0;
    std::vector<double> uvar(var);
    for (auto& v : uvar) v *= unbias;
    up.var = Matrix(g.rows(), g.cols(), std::move(uvar));
    ctx.stat_updates().push_back(std::move(up));
  } else if (p.mode != NormMode::passthrough) {
    const Matrix& rm = ctx.params().at(p.running_mean);
    const Matrix& rv = ctx.params().at(p.running_var);
    for (std::size_t k = 0; k < groups; ++k) {
      mean[k] = rm[k];
      inv[k] = 1.0 / std::sqrt(rv[k] + kNormEps);
    }
  }

  Matrix xhat(xv.rows(), xv.cols());
  Matrix out(xv.rows(), xv.cols());
  for (std::size_t e = 0; e < xv.size(); ++e) {
    const std::size_t k = e % groups;
    xhat[e] = (xv[e] - mean[k]) * inv[k];
    out[e] = g[k] * xhat[e] + b[k];
  }

  return tape.record(
      "norm", std::move(out), true,
      [x, gamma, beta, groups, count, batch_stats, xhat = std::move(xhat), inv = std::move(inv)](
          Tape& tp, const Matrix& dy) {
        const Matrix& gv = tp.value(gamma);
        Matrix dg(gv.rows(), gv.cols()), db(gv.rows(), gv.cols());
        for (std::size_t e = 0; e < dy.size(); ++e) {
          const std::size_t k = e % groups;
          dg[k] += dy[e] * xhat[e];
          db[k] += dy[e];
        }
        tp.accumulate(gamma, dg);
        tp.accumulate(beta, db);
        if (!tp.requires_grad(x)) return;
        Matrix dx(dy.rows(), dy.cols());
        if (batch_stats) {
          // dg[k] = Σ dy·x̂ and db[k] = Σ dy, so Σ dx̂ = γ·db and Σ dx̂·x̂ = γ·dg.
          const double m = double(count);
          for (std::size_t e = 0; e < dy.size(); ++e) {
            const std::size_t k = e % groups;
            const double dxhat = dy[e] * gv[k];
            dx[e] = inv[k] / m * (m * dxhat - gv[k] * db[k] - xhat[e] * gv[k] * dg[k]);
          }
        } else {
          for (std::size_t e = 0; e < dy.size(); ++e) {
            const std::size_t k = e % groups;
            dx[e] = dy[e] * gv[k] * inv[k];
          }
        }
        tp.accumulate(x, dx);
      });
}

Var dropout_forward(ForwardContext& ctx, Var x, double rate) {
  if (ctx.mode() == Mode::eval || rate == 0.0) return x;
  if (ctx.rng() == nullptr) throw UsageError("dropout in train mode requires a random stream");
  const Matrix& xv = ctx.tape().value(x);
  Matrix mask(xv.rows(), xv.cols());
  const double keep_scale = 1.0 / (1.0 - rate);
  for (auto& m : mask.data()) m = ctx.rng()->uniform() >= rate ? keep_scale : 0.0;
  return mul_const(ctx.tape(), x, std::move(mask));
}

Var gcl_forward(ForwardContext& ctx, Var h, const GclParams& p) {
  const Matrix& hv = ctx.tape().value(h);
  if (hv.rows() != p.nodes * ctx.batch() || hv.cols() != p.in_features) {
    throw ShapeError("gcl: input " + hv.shape_string() + " expected " +
                     shape_of(p.nodes * ctx.batch(), p.in_features) + " for batch " +
                     std::to_string(ctx.batch()));
  }
  Tape& t = ctx.tape();
  Var y = node_mix(t, ctx.param(p.adjacency), h);
  y = matmul(t, y, ctx.param(p.weight));
  y = norm_forward(ctx, y, p.norm);
  y = tanh(t, y);
  return dropout_forward(ctx, y, p.dropout_rate);
}

Var fcl_layer_forward(ForwardContext& ctx, Var h, const FclParams& p) {
  const Matrix& hv = ctx.tape().value(h);
  const std::size_t flat = p.nodes * p.features;
  if (hv.rows() != p.nodes * ctx.batch() || hv.cols() != p.features) {
    throw ShapeError("fcl: input " + hv.shape_string() + " expected " +
                     shape_of(p.nodes * ctx.batch(), p.features));
  }
  Tape& t = ctx.tape();
  // Each sample's K×F block is contiguous, so flattening is a reshape.
  Var y = reshape(t, h, ctx.batch(), flat);
  y = matmul(t, y, ctx.param(p.weight));
  y = reshape(t, y, ctx.batch() * p.nodes, p.features);
  y = norm_forward(ctx, y, p.norm);
  y = tanh(t, y);
  return dropout_forward(ctx, y, p.dropout_rate);
}

Var res_block_forward(ForwardContext& ctx, Var h, const ResBlock& block) {
  Var inner = std::visit(
      [&](const auto& b) -> Var {
        using B = std::decay_t<decltype(b)>;
        if constexpr (std::is_same_v<B, ResGcnBlock>) {
          if (b.first.in_features != b.second.out_features) {
            throw ShapeError("res-GCN inner layers must map F to F");
          }
          return gcl_forward(ctx, gcl_forward(ctx, h, b.first), b.second);
        } else {
          return fcl_layer_forward(ctx, fcl_layer_forward(ctx, h, b.first), b.second);
        }
      },
      block);
  return add(ctx.tape(), h, inner);
}

Var resample_nodes(ForwardContext& ctx, Var h, const ResampleParams& p) {
  Tape& t = ctx.tape();
  const Matrix& hv = t.value(h);
  if (hv.rows() != p.from_nodes * ctx.batch() || hv.cols() != p.from_features) {
    throw ShapeError("resample: input " + hv.shape_string() + " expected " +
                     shape_of(p.from_nodes * ctx.batch(), p.from_features));
  }
  return node_mix(t, transpose(t, ctx.param(p.node_map)), h);
}

Var resample_features(ForwardContext& ctx, Var h, const ResampleParams& p) {
  return matmul(ctx.tape(), h, ctx.param(p.feat_map));
}

Var resample(ForwardContext& ctx, Var h, const ResampleParams& p) {
  return resample_features(ctx, resample_nodes(ctx, h, p), p);
}

void apply_stat_updates(ModelParams& store, const std::vector<StatUpdate>& updates,
                        double momentum) {
  for (const auto& u : updates) {
    Matrix& rm = store.at(u.running_mean);
    Matrix& rv = store.at(u.running_var);
    for (std::size_t i = 0; i < rm.size(); ++i) {
      rm[i] = (1.0 - momentum) * rm[i] + momentum * u.mean[i];
      rv[i] = (1.0 - momentum) * rv[i] + momentum * u.var[i];
    }
  }
}

std::size_t learnable_scalars(const ModelParams& store, const ResBlock& block) {
  auto norm_count = [&](const NormParams& n) {
    return store.at(n.gamma).size() + store.at(n.beta).size();
  };
  return std::visit(
      [&](const auto& b) -> std::size_t {
        using B = std::decay_t<decltype(b)>;
        std::size_t n = 0;
        if constexpr (std::is_same_v<B, ResGcnBlock>) {
          for (const auto* l : {&b.first, &b.second})
            n += store.at(l->adjacency).size() + store.at(l->weight).size() + norm_count(l->norm);
        } else {
          for (const auto* l : {&b.first, &b.second})
            n += store.at(l->weight).size() + norm_count(l->norm);
        }
        return n;
      },
      block);
}

}  // namespace msrgcn::layers
