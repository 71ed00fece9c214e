#include "msrgcn/model.hpp"

#include <cmath>
#include <sstream>

#include "msrgcn/errors.hpp"

namespace msrgcn::model {

using layers::LayerKind;
using layers::Mode;
using layers::NormMode;

void validate(const ModelConfig& cfg) {
  const auto violations = multiscale::validate_grouping(cfg.grouping);
  if (!violations.empty()) throw ConfigError("model grouping: " + violations.front().message);
  if (cfg.levels < 1 || cfg.levels > cfg.grouping.levels()) {
    throw ConfigError("levels must lie in 1.." + std::to_string(cfg.grouping.levels()) +
                      ", got " + std::to_string(cfg.levels));
  }
  if (cfg.scale_widths.size() != cfg.levels) {
    throw ConfigError("expected " + std::to_string(cfg.levels) + " scale widths, got " +
                      std::to_string(cfg.scale_widths.size()));
  }
  for (auto w : cfg.scale_widths)
    if (w == 0) throw ConfigError("scale widths must be positive");
  if (cfg.history < 1) throw ConfigError("history must be at least one frame");
  if (cfg.future < 1) throw ConfigError("future must be at least one frame");
  if (!(cfg.dropout_rate >= 0.0 && cfg.dropout_rate < 1.0)) {
    throw ConfigError("dropout rate must lie in [0, 1)");
  }
}

namespace {

const char* kind_name(LayerKind k) { return k == LayerKind::gcn ? "gcn" : "fcl"; }

const char* norm_name(NormMode n) {
  switch (n) {
    case NormMode::per_entry: return "per_entry";
    case NormMode::per_feature: return "per_feature";
    case NormMode::passthrough: return "passthrough";
  }
  return "?";
}

}  // namespace

std::string architecture_descriptor(const ModelConfig& cfg) {
  std::ostringstream out;
  out << "levels=" << cfg.levels << ";widths=";
  for (auto w : cfg.scale_widths) out << w << ',';
  out << ";blocks=" << cfg.res_blocks_per_stage << ";history=" << cfg.history
      << ";future=" << cfg.future << ";layer=" << kind_name(cfg.layer_kind)
      << ";fuse=" << (cfg.fuse == Fuse::add ? "add" : "concat_project")
      << ";norm=" << norm_name(cfg.norm) << ";grouping=\n"
      << multiscale::format_grouping(cfg.grouping);
  return out.str();
}

std::uint64_t config_digest(const ModelConfig& cfg) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : architecture_descriptor(cfg)) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

Model build_model(const ModelConfig& cfg, std::uint64_t seed) {
  validate(cfg);
  Model m;
  m.config = cfg;
  Rng rng(seed);
  ModelParams& p = m.params;
  Architecture& a = m.arch;
  const layers::LayerOptions opt{cfg.norm, cfg.dropout_rate};
  const std::size_t levels = cfg.levels;
  const std::size_t frames = cfg.frames();
  auto width = [&](std::size_t s) { return cfg.scale_widths[s]; };
  auto stage = [&](const std::string& prefix, std::size_t s) {
    std::vector<layers::ResBlock> blocks;
    for (std::size_t b = 0; b < cfg.res_blocks_per_stage; ++b) {
      blocks.push_back(layers::make_res_block(p, prefix + "/block" + std::to_string(b),
                                              cfg.layer_kind, cfg.nodes(s), width(s), opt, rng));
    }
    return blocks;
  };

  a.start_gcl = layers::make_gcl(p, "start/gcl", cfg.nodes(0), frames, width(0), opt, rng);
  a.start_block = layers::make_res_block(p, "start/block", cfg.layer_kind, cfg.nodes(0), width(0),
                                         opt, rng);
  for (std::size_t s = 0; s < levels; ++s) {
    if (s > 0) {
      a.downsample.push_back(layers::make_resample(p, "downsample" + std::to_string(s - 1),
                                                   cfg.nodes(s - 1), cfg.nodes(s), width(s - 1),
                                                   width(s), rng));
    }
    a.descending.push_back(stage("D" + std::to_string(s), s));
  }
  a.ascending.resize(levels);
  a.upsample.resize(levels - 1);
  for (std::size_t s = levels; s-- > 0;) {
    if (s + 1 < levels) {
      a.upsample[s] = layers::make_resample(p, "upsample" + std::to_string(s), cfg.nodes(s + 1),
                                            cfg.nodes(s), width(s + 1), width(s), rng);
    }
    a.ascending[s] = stage("A" + std::to_string(s), s);
  }
  for (std::size_t s = 0; s < levels; ++s) {
    const std::string prefix = "E" + std::to_string(s);
    EndGcn e;
    if (cfg.fuse == Fuse::concat_project) {
      Matrix proj(2 * width(s), width(s));
      const double bound = 1.0 / std::sqrt(double(2 * width(s)));
      for (auto& v : proj.data()) v = rng.uniform(-bound, bound);
      e.fuse_projection = p.add(prefix + "/fuse_projection", std::move(proj));
    }
    e.block = layers::make_res_block(p, prefix + "/block", cfg.layer_kind, cfg.nodes(s), width(s),
                                     opt, rng);
    e.output = layers::make_gcl(p, prefix + "/gcl", cfg.nodes(s), width(s), frames, opt, rng);
    a.ends.push_back(std::move(e));
  }
  return m;
}

void zero_end_outputs(Model& m) {
  for (const auto& e : m.arch.ends) {
    m.params.at(e.output.weight).fill(0.0);
    m.params.at(e.output.norm.beta).fill(0.0);
    if (e.output.norm.mode != NormMode::passthrough) {
      m.params.at(e.output.norm.running_mean).fill(0.0);
    }
  }
}

Matrix stack_rows(std::span<const Matrix> blocks) {
  if (blocks.empty()) return {};
  const std::size_t r = blocks[0].rows(), c = blocks[0].cols();
  std::vector<Scalar> data;
  data.reserve(blocks.size() * r * c);
  for (const auto& b : blocks) {
    if (b.rows() != r || b.cols() != c) {
      throw ShapeError("stack_rows: " + b.shape_string() + " vs " + shape_of(r, c));
    }
    data.insert(data.end(), b.data().begin(), b.data().end());
  }
  return Matrix(blocks.size() * r, c, std::move(data));
}

Matrix row_block(const Matrix& stacked, std::size_t n, std::size_t rows) {
  const std::size_t c = stacked.cols();
  if ((n + 1) * rows > stacked.rows()) throw ShapeError("row_block: index out of range");
  auto src = stacked.data().subspan(n * rows * c, rows * c);
  return Matrix(rows, c, std::vector<Scalar>(src.begin(), src.end()));
}

MultiScaleOutput ForwardPass::sample_output(std::size_t n) const {
  MultiScaleOutput out;
  for (std::size_t s = 0; s < outputs.size(); ++s) {
    const Matrix& v = output(s);
    out.scales.push_back(row_block(v, n, v.rows() / batch));
  }
  return out;
}

std::pair<std::size_t, std::size_t> ForwardPass::traced_shape(const std::string& name) const {
  for (const auto& [n, v] : trace) {
    if (n == name) {
      const Matrix& m = tape.value(v);
      return {m.rows() / batch, m.cols()};
    }
  }
  throw UsageError("no traced stage named '" + name + "'");
}

ForwardPass forward(const Model& m, std::span<const Matrix> padded_inputs,
                    std::span<const multiscale::ScalePyramid> pyramids, Mode mode, Rng* rng) {
  const ModelConfig& cfg = m.config;
  const Architecture& a = m.arch;
  if (padded_inputs.empty()) throw UsageError("forward: empty batch");
  for (const auto& x : padded_inputs) {
    if (x.rows() != cfg.nodes(0) || x.cols() != cfg.frames()) {
      throw ShapeError("forward/input: got " + x.shape_string() + ", expected " +
                       shape_of(cfg.nodes(0), cfg.frames()));
    }
  }
  if (cfg.use_global_residual && pyramids.size() != padded_inputs.size()) {
    throw ShapeError("forward: " + std::to_string(pyramids.size()) + " pyramids for " +
                     std::to_string(padded_inputs.size()) + " inputs");
  }

  ForwardPass pass;
  pass.batch = padded_inputs.size();
  Tape& t = pass.tape;
  layers::ForwardContext ctx(t, m.params, mode, rng, pass.batch);
  auto traced = [&](std::string name, Var v) {
    pass.trace.emplace_back(std::move(name), v);
    return v;
  };
  auto run_stage = [&](Var h, const std::vector<layers::ResBlock>& blocks) {
    for (const auto& b : blocks) h = layers::res_block_forward(ctx, h, b);
    return h;
  };

  const std::size_t levels = cfg.levels;
  Var h = t.constant(stack_rows(padded_inputs));
  h = traced("start/gcl", layers::gcl_forward(ctx, h, a.start_gcl));
  h = traced("start/gcn", layers::res_block_forward(ctx, h, a.start_block));

  std::vector<Var> descending(levels);
  for (std::size_t s = 0; s < levels; ++s) {
    if (s > 0) {
      const std::string name = "downsample" + std::to_string(s - 1);
      h = traced(name + "/linear1", layers::resample_nodes(ctx, h, a.downsample[s - 1]));
      h = traced(name + "/linear2", layers::resample_features(ctx, h, a.downsample[s - 1]));
    }
    descending[s] = h = traced("D" + std::to_string(s), run_stage(h, a.descending[s]));
  }

  std::vector<Var> ascending(levels);
  for (std::size_t s = levels; s-- > 0;) {
    if (s + 1 < levels) {
      const std::string name = "upsample" + std::to_string(s);
      h = traced(name + "/linear1", layers::resample_nodes(ctx, h, a.upsample[s]));
      h = traced(name + "/linear2", layers::resample_features(ctx, h, a.upsample[s]));
    }
    ascending[s] = h = traced("A" + std::to_string(s), run_stage(h, a.ascending[s]));
  }

  for (std::size_t s = 0; s < levels; ++s) {
    const EndGcn& e = a.ends[s];
    const std::string name = "E" + std::to_string(s);
    Var fused;
    if (cfg.fuse == Fuse::add) {
      fused = add(t, descending[s], ascending[s]);
    } else {
      fused = matmul(t, concat_cols(t, descending[s], ascending[s]), ctx.param(*e.fuse_projection));
    }
    traced(name + "/fused", fused);
    Var y = traced(name + "/gcn", layers::res_block_forward(ctx, fused, e.block));
    y = traced(name + "/gcl", layers::gcl_forward(ctx, y, e.output));
    if (cfg.use_global_residual) {
      std::vector<Matrix> residual;
      residual.reserve(pass.batch);
      for (const auto& pyr : pyramids) {
        if (pyr.scales.size() <= s) {
          throw ShapeError("forward/" + name + ": pyramid has only " +
                           std::to_string(pyr.scales.size()) + " scales");
        }
        const Matrix& r = pyr.scales[s];
        if (r.rows() != cfg.nodes(s) || r.cols() != cfg.frames()) {
          throw ShapeError("forward/" + name + ": residual " + r.shape_string() +
                           " expected " + shape_of(cfg.nodes(s), cfg.frames()));
        }
        residual.push_back(r);
      }
      y = add(t, y, t.constant(stack_rows(residual)));
    }
    pass.outputs.push_back(traced(name + "/output", y));
  }
  pass.stat_updates = std::move(ctx.stat_updates());
  return pass;
}

void backward(Model& m, ForwardPass& pass, std::span<const Matrix> output_grads) {
  if (pass.batch == 0 || pass.outputs.empty()) {
    throw UsageError("backward called without a preceding forward pass");
  }
  if (pass.tape.backward_done()) throw UsageError("backward already ran for this forward pass");
  if (output_grads.size() != pass.outputs.size()) {
    throw ShapeError("backward: " + std::to_string(output_grads.size()) +
                     " output gradients for " + std::to_string(pass.outputs.size()) + " scales");
  }
  std::vector<std::pair<Var, Matrix>> seeds;
  for (std::size_t s = 0; s < output_grads.size(); ++s) {
    seeds.emplace_back(pass.outputs[s], output_grads[s]);
  }
  pass.tape.backward(seeds);
  for (std::size_t i = 0; i < m.params.size(); ++i)
    if (m.params.learnable(i)) m.params.at(i).ensure_grad();
  pass.tape.for_each_parameter_grad([&](std::size_t id, const Matrix& g) {
    auto dst = m.params.at(id).grad();
    for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += g[k];
  });
}

}  // namespace msrgcn::model
