#include "msrgcn/cli.hpp"

#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <sstream>

#include "msrgcn/checkpoint.hpp"
#include "msrgcn/config.hpp"
#include "msrgcn/errors.hpp"

namespace msrgcn::cli {

namespace fs = std::filesystem;

namespace {

struct Flags {
  std::string config;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> epochs;
  std::string out;
  std::string ckpt;
  std::string data;
  std::string horizons;
  std::string input;
  std::string grouping;
  double tol = 1e-4;
  bool force = false;
};

config::RunConfig effective_config(const Flags& f) {
  std::vector<std::pair<std::string, std::string>> overrides;
  for (const auto& s : f.sets) overrides.push_back(config::parse_assignment(s));
  if (f.seed) overrides.emplace_back("training.seed", std::to_string(*f.seed));
  if (f.epochs) overrides.emplace_back("training.epochs", std::to_string(*f.epochs));
  if (!f.data.empty()) overrides.emplace_back("data.source", f.data);
  if (!f.horizons.empty()) overrides.emplace_back("eval.horizons", f.horizons);
  if (!f.grouping.empty()) overrides.emplace_back("model.grouping", f.grouping);
  return f.config.empty() ? config::parse("", overrides) : config::load(f.config, overrides);
}

void write_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
}

std::string fmt(double x, int precision = 6) {
  std::ostringstream s;
  s << std::setprecision(precision) << x;
  return s.str();
}

std::vector<std::vector<std::string>> parse_csv(const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::istringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    rows.push_back(std::move(cells));
  }
  return rows;
}

// First column left-aligned, the rest right-aligned.
std::string aligned_table(const std::string& csv) {
  const auto rows = parse_csv(csv);
  std::vector<std::size_t> width;
  for (const auto& r : rows) {
    width.resize(std::max(width.size(), r.size()), 0);
    for (std::size_t c = 0; c < r.size(); ++c) width[c] = std::max(width[c], r[c].size());
  }
  std::ostringstream out;
  for (const auto& r : rows) {
    for (std::size_t c = 0; c < r.size(); ++c) {
      if (c) out << "  ";
      if (c == 0) {
        out << std::left;
      } else {
        out << std::right;
      }
      out << std::setw(static_cast<int>(width[c])) << r[c];
    }
    out << "\n";
  }
  return out.str();
}

std::string eval_csv(const training::EvalReport& rep) {
  std::ostringstream out;
  out << "action,samples";
  for (double h : rep.horizons_ms) out << "," << fmt(h) << "ms";
  out << "\n";
  for (std::size_t a = 0; a < rep.actions.size(); ++a) {
    out << rep.actions[a] << "," << rep.action_counts[a];
    for (double v : rep.action_mpjpe[a]) out << "," << fmt(v);
    out << "\n";
  }
  out << "average," << rep.samples;
  for (double v : rep.overall) out << "," << fmt(v);
  out << "\n";
  return out.str();
}

int cmd_train(const Flags& f, std::ostream& out) {
  const config::RunConfig cfg = effective_config(f);
  const fs::path dir = f.out.empty() ? fs::path("run") : fs::path(f.out);
  const config::Datasets sets = config::load_datasets(cfg);
  if (sets.train.empty()) throw DataError("training split has no windows");

  fs::create_directories(dir);
  write_file(dir / "effective.cfg", config::format(cfg));
  out << "train " << sets.train.size() << " windows, val " << sets.val.size() << ", test "
      << sets.test.size() << "\n";

  model::Model m = model::build_model(cfg.model, cfg.train.seed);
  training::TrainOptions opt = cfg.train;
  std::ofstream curve(dir / "loss_curve.csv", std::ios::binary);
  curve << "epoch,lr,train_loss,val_loss,val_mpjpe\n";
  opt.on_epoch = [&](const training::EpochRecord& r) {
    curve << r.epoch << "," << fmt(r.lr, 10) << "," << fmt(r.train_loss, 10) << ","
          << fmt(r.val_loss, 10) << "," << fmt(r.val_mpjpe, 10) << "\n";
    curve.flush();
    out << "epoch " << r.epoch << " lr " << fmt(r.lr) << " train " << fmt(r.train_loss) << " val "
        << fmt(r.val_loss) << "\n";
  };
  training::FitResult res = training::fit(m, sets.train, sets.val, opt);
  m.params = std::move(res.best_params);
  model::save_checkpoint(dir / "model.ckpt", m);
  out << "initial train loss " << fmt(res.initial_train_loss) << ", best epoch " << res.best_epoch
      << ", checkpoint " << (dir / "model.ckpt").string() << "\n";
  return ok;
}

model::Model load_model(const Flags& f, const config::RunConfig& cfg, std::ostream& out) {
  model::LoadReport rep;
  model::Model m = model::load_checkpoint(f.ckpt, cfg.model, f.force, &rep);
  if (!rep.digest_matched) {
    out << "warning: checkpoint built for a different architecture; loaded " << rep.loaded
        << " tensors, skipped " << rep.skipped << "\n";
  }
  return m;
}

int cmd_eval(const Flags& f, std::ostream& out) {
  const config::RunConfig cfg = effective_config(f);
  const model::Model m = load_model(f, cfg, out);
  const config::Datasets sets = config::load_datasets(cfg);
  if (sets.test.empty()) throw DataError("test split has no windows");
  const training::EvalReport rep = training::evaluate(m, sets.test, cfg.horizons_ms, sets.fps);

  const std::string csv = eval_csv(rep);
  std::ostringstream joints;
  joints << "joint,mpjpe\n";
  for (std::size_t j = 0; j < rep.per_joint.size(); ++j) {
    joints << j << "," << fmt(rep.per_joint[j]) << "\n";
  }
  if (!f.out.empty()) {
    write_file(fs::path(f.out) / "eval.csv", csv);
    write_file(fs::path(f.out) / "per_joint.csv", joints.str());
    write_file(fs::path(f.out) / "eval.txt", aligned_table(csv));
  }
  out << aligned_table(csv);
  return ok;
}

int cmd_predict(const Flags& f, std::ostream& out) {
  const config::RunConfig cfg = effective_config(f);
  const model::Model m = load_model(f, cfg, out);
  const data::PoseSequence seq = data::preprocess(data::load_sequence(f.input), cfg.dataset);
  const std::size_t th = cfg.model.history;
  if (seq.length() < th) {
    throw DataError("input has " + std::to_string(seq.length()) + " frames, need " +
                    std::to_string(th));
  }
  if (seq.joints != cfg.model.grouping.scales.front()) {
    throw DataError("input has " + std::to_string(seq.joints) + " joints, model expects " +
                    std::to_string(cfg.model.grouping.scales.front()));
  }
  Matrix history(3 * seq.joints, th);
  for (std::size_t t = 0; t < th; ++t) {
    for (std::size_t r = 0; r < history.rows(); ++r) {
      history(r, t) = seq.frames(seq.length() - th + t, r);
    }
  }
  const Matrix future = training::predict_future(m, history);
  data::PoseSequence pred = seq;
  pred.frames = future.transposed();
  const std::string text = data::format_sequence(pred);
  if (f.out.empty()) {
    out << text;
  } else {
    write_file(f.out, text);
    out << "wrote " << future.cols() << " frames to " << f.out << "\n";
  }
  return ok;
}

int cmd_gradcheck(const Flags& f, std::ostream& out) {
  model::ModelConfig mc = training::tiny_config();
  std::uint64_t seed = f.seed.value_or(0);
  if (!f.config.empty() || !f.sets.empty() || !f.grouping.empty()) {
    const config::RunConfig cfg = effective_config(f);
    mc = cfg.model;
    seed = cfg.train.seed;
  }
  training::GradcheckOptions opt;
  opt.seed = seed;
  opt.tol = f.tol;
  const training::GradcheckReport rep = training::gradcheck_model(mc, opt);
  out << "checked " << rep.checked << " entries, max relative error " << fmt(rep.max_rel_error)
      << " at " << rep.worst_param << "[" << rep.worst_index << "] (analytic "
      << fmt(rep.worst_analytic, 10) << ", numeric " << fmt(rep.worst_numeric, 10) << "), "
      << rep.below_floor << " entries below the " << fmt(opt.floor) << " floor\n";
  out << (rep.passed ? "PASS" : "FAIL") << "\n";
  return rep.passed ? ok : numeric_error;
}

int cmd_abstract(const Flags& f, std::ostream& out) {
  if (f.out.empty()) throw ConfigError("--out is required");
  multiscale::GroupingScheme g;
  try {
    g = multiscale::resolve_grouping(f.grouping.empty() ? "h36m_22_12_7_4" : f.grouping);
  } catch (const DataError& e) {
    throw ConfigError(std::string("grouping: ") + e.what());
  }
  const data::PoseSequence seq = data::load_sequence(f.input);
  if (seq.joints != g.scales.front()) {
    throw DataError("input has " + std::to_string(seq.joints) + " joints, grouping expects " +
                    std::to_string(g.scales.front()));
  }
  const multiscale::ScalePyramid p = multiscale::build_pyramid(seq.frames.transposed(), g);
  for (std::size_t s = 0; s < p.scales.size(); ++s) {
    data::PoseSequence level = seq;
    level.joints = g.scales[s];
    level.frames = p.scales[s].transposed();
    const fs::path path = fs::path(f.out) / ("scale_" + std::to_string(s) + ".seq");
    write_file(path, data::format_sequence(level));
    out << path.string() << ": " << level.joints << " joints\n";
  }
  return ok;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Multiscale residual graph network for human motion prediction", "msrgcn"};
  app.require_subcommand(1);
  Flags f;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", f.config, "INI config file")->check(CLI::ExistingFile);
    sub->add_option("--set", f.sets, "Override, section.key=value (repeatable)");
    sub->add_option("--seed", f.seed, "Training seed");
    sub->add_option("--out", f.out, "Output path");
    sub->add_flag("--force", f.force, "Load a checkpoint built for another architecture");
    sub->add_option("--data", f.data, "'synthetic' or a directory of .seq files");
    sub->add_option("--grouping", f.grouping, "Built-in grouping name or .grp file");
  };
  auto* train = app.add_subcommand("train", "Train a model");
  common(train);
  train->add_option("--epochs", f.epochs, "Epoch count");

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on the test split");
  common(eval);
  eval->add_option("--ckpt", f.ckpt, "Checkpoint file")->required();
  eval->add_option("--horizons", f.horizons, "Comma-separated horizons in ms");

  auto* predict = app.add_subcommand("predict", "Predict the frames after a sequence");
  common(predict);
  predict->add_option("--ckpt", f.ckpt, "Checkpoint file")->required();
  predict->add_option("--input", f.input, "Input .seq file")->required();

  auto* gradcheck = app.add_subcommand("gradcheck", "Compare analytic and numeric gradients");
  common(gradcheck);
  gradcheck->add_option("--tol", f.tol, "Relative error tolerance");

  auto* abstract = app.add_subcommand("abstract", "Write a sequence at every scale of a grouping");
  common(abstract);
  abstract->add_option("--input", f.input, "Input .seq file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    std::ostream& stream = e.get_exit_code() == 0 ? out : err;
    const int code = app.exit(e, stream, stream);
    return code == 0 ? ok : config_error;
  }

  try {
    if (*train) return cmd_train(f, out);
    if (*eval) return cmd_eval(f, out);
    if (*predict) return cmd_predict(f, out);
    if (*gradcheck) return cmd_gradcheck(f, out);
    if (*abstract) return cmd_abstract(f, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return config_error;
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n";
    return config_error;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << "\n";
    return data_error;
  } catch (const ShapeError& e) {
    err << "data error: " << e.what() << "\n";
    return data_error;
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << "\n";
    return numeric_error;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return internal_error;
  }
  return config_error;
}

}  // namespace msrgcn::cli
