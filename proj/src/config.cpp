#include "msrgcn/config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

#include "msrgcn/errors.hpp"

namespace msrgcn::config {

namespace pt = boost::property_tree;

namespace {

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

double to_double(const std::string& key, const std::string& v) {
  double x = 0.0;
  const auto* end = v.data() + v.size();
  const auto [p, ec] = std::from_chars(v.data(), end, x);
  if (ec != std::errc() || p != end) throw ConfigError(key + ": expected a number, got '" + v + "'");
  return x;
}

std::uint64_t to_uint(const std::string& key, const std::string& v) {
  std::uint64_t x = 0;
  const auto* end = v.data() + v.size();
  const auto [p, ec] = std::from_chars(v.data(), end, x);
  if (ec != std::errc() || p != end) {
    throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
  }
  return x;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

template <typename T, typename F>
std::vector<T> to_list(const std::string& key, const std::string& v, F conv) {
  std::vector<T> out;
  for (const auto& item : split_list(v)) out.push_back(static_cast<T>(conv(key, item)));
  return out;
}

template <typename T>
std::string join(const std::vector<T>& xs) {
  std::ostringstream out;
  out.precision(17);
  for (std::size_t i = 0; i < xs.size(); ++i) out << (i ? "," : "") << xs[i];
  return out.str();
}

std::string num(double x) {
  std::ostringstream out;
  out.precision(17);
  out << x;
  return out.str();
}

std::string subjects_of(const data::SplitMap& map, data::Split which) {
  std::vector<std::string> out;
  for (const auto& [subject, split] : map.subjects) {
    if (split == which) out.push_back(subject);
  }
  return join(out);
}

void set_subjects(data::SplitMap& map, data::Split which, const std::string& v) {
  std::erase_if(map.subjects, [&](const auto& kv) { return kv.second == which; });
  for (const auto& s : split_list(v)) map.subjects[s] = which;
}

struct Field {
  const char* key;
  std::function<void(RunConfig&, const std::string&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

const std::vector<Field>& fields() {
  using layers::LayerKind;
  using layers::NormMode;
  using model::Fuse;
  static const std::vector<Field> table = {
      {"model.grouping", [](RunConfig& c, auto&, auto& v) { c.grouping = v; },
       [](const RunConfig& c) { return c.grouping; }},
      {"model.levels", [](RunConfig& c, auto& k, auto& v) { c.model.levels = to_uint(k, v); },
       [](const RunConfig& c) { return std::to_string(c.model.levels); }},
      {"model.widths",
       [](RunConfig& c, auto& k, auto& v) { c.model.scale_widths = to_list<std::size_t>(k, v, to_uint); },
       [](const RunConfig& c) { return join(c.model.scale_widths); }},
      {"model.res_blocks",
       [](RunConfig& c, auto& k, auto& v) { c.model.res_blocks_per_stage = to_uint(k, v); },
       [](const RunConfig& c) { return std::to_string(c.model.res_blocks_per_stage); }},
      {"model.history", [](RunConfig& c, auto& k, auto& v) { c.model.history = to_uint(k, v); },
       [](const RunConfig& c) { return std::to_string(c.model.history); }},
      {"model.future", [](RunConfig& c, auto& k, auto& v) { c.model.future = to_uint(k, v); },
       [](const RunConfig& c) { return std::to_string(c.model.future); }},
      {"model.inter_loss", [](RunConfig& c, auto& k, auto& v) { c.model.use_inter_loss = to_bool(k, v); },
       [](const RunConfig& c) { return std::string(c.model.use_inter_loss ? "true" : "false"); }},
      {"model.global_residual",
       [](RunConfig& c, auto& k, auto& v) { c.model.use_global_residual = to_bool(k, v); },
       [](const RunConfig& c) { return std::string(c.model.use_global_residual ? "true" : "false"); }},
      {"model.layer",
       [](RunConfig& c, auto& k, auto& v) {
         if (v == "gcn") c.model.layer_kind = LayerKind::gcn;
         else if (v == "fcl") c.model.layer_kind = LayerKind::fcl;
         else throw ConfigError(k + ": expected gcn or fcl, got '" + v + "'");
       },
       [](const RunConfig& c) { return std::string(c.model.layer_kind == LayerKind::gcn ? "gcn" : "fcl"); }},
      {"model.fuse",
       [](RunConfig& c, auto& k, auto& v) {
         if (v == "add") c.model.fuse = Fuse::add;
         else if (v == "concat_project") c.model.fuse = Fuse::concat_project;
         else throw ConfigError(k + ": expected add or concat_project, got '" + v + "'");
       },
       [](const RunConfig& c) { return std::string(c.model.fuse == Fuse::add ? "add" : "concat_project"); }},
      {"model.norm",
       [](RunConfig& c, auto& k, auto& v) {
         if (v == "per_entry") c.model.norm = NormMode::per_entry;
         else if (v == "per_feature") c.model.norm = NormMode::per_feature;
         else if (v == "passthrough") c.model.norm = NormMode::passthrough;
         else throw ConfigError(k + ": expected per_entry, per_feature or passthrough, got '" + v + "'");
       },
       [](const RunConfig& c) {
         switch (c.model.norm) {
           case NormMode::per_entry: return std::string("per_entry");
           case NormMode::per_feature: return std::string("per_feature");
           default: return std::string("passthrough");
         }
       }},
      {"model.dropout", [](RunConfig& c, auto& k, auto& v) { c.model.dropout_rate = to_double(k, v); },
       [](const RunConfig& c) { return num(c.model.dropout_rate); }},

      {"training.epochs", [](RunConfig& c, auto& k, auto& v) { c.train.epochs = to_uint(k, v); },
       [](const RunConfig& c) { return std::to_string(c.train.epochs); }},
      {"training.batch_size", [](RunConfig& c, auto& k, auto& v) { c.train.batch_size = to_uint(k, v); },
       [](const RunConfig& c) { return std::to_string(c.train.batch_size); }},
      {"training.seed", [](RunConfig& c, auto& k, auto& v) { c.train.seed = to_uint(k, v); },
       [](const RunConfig& c) { return std::to_string(c.train.seed); }},
      {"training.lr", [](RunConfig& c, auto& k, auto& v) { c.train.lr.base = to_double(k, v); },
       [](const RunConfig& c) { return num(c.train.lr.base); }},
      {"training.lr_decay", [](RunConfig& c, auto& k, auto& v) { c.train.lr.decay = to_double(k, v); },
       [](const RunConfig& c) { return num(c.train.lr.decay); }},
      {"training.lr_every", [](RunConfig& c, auto& k, auto& v) { c.train.lr.every = to_uint(k, v); },
       [](const RunConfig& c) { return std::to_string(c.train.lr.every); }},
      {"training.beta1", [](RunConfig& c, auto& k, auto& v) { c.train.adam.beta1 = to_double(k, v); },
       [](const RunConfig& c) { return num(c.train.adam.beta1); }},
      {"training.beta2", [](RunConfig& c, auto& k, auto& v) { c.train.adam.beta2 = to_double(k, v); },
       [](const RunConfig& c) { return num(c.train.adam.beta2); }},
      {"training.adam_eps", [](RunConfig& c, auto& k, auto& v) { c.train.adam.eps = to_double(k, v); },
       [](const RunConfig& c) { return num(c.train.adam.eps); }},
      {"training.lambdas",
       [](RunConfig& c, auto& k, auto& v) { c.train.lambdas = to_list<double>(k, v, to_double); },
       [](const RunConfig& c) { return join(c.train.lambdas); }},
      {"training.squared_loss", [](RunConfig& c, auto& k, auto& v) { c.train.loss.squared = to_bool(k, v); },
       [](const RunConfig& c) { return std::string(c.train.loss.squared ? "true" : "false"); }},
      {"training.future_only_loss",
       [](RunConfig& c, auto& k, auto& v) { c.train.loss.future_only = to_bool(k, v); },
       [](const RunConfig& c) { return std::string(c.train.loss.future_only ? "true" : "false"); }},

      {"data.source", [](RunConfig& c, auto&, auto& v) { c.data_source = v; },
       [](const RunConfig& c) { return c.data_source; }},
      {"data.fps", [](RunConfig& c, auto& k, auto& v) { c.fps = to_double(k, v); },
       [](const RunConfig& c) { return num(c.fps); }},
      {"data.joints", [](RunConfig& c, auto&, auto& v) { c.joint_selection = v; },
       [](const RunConfig& c) { return c.joint_selection; }},
      {"data.downsample",
       [](RunConfig& c, auto& k, auto& v) { c.dataset.temporal_downsample = to_uint(k, v); },
       [](const RunConfig& c) { return std::to_string(c.dataset.temporal_downsample); }},
      {"data.train_stride", [](RunConfig& c, auto& k, auto& v) { c.dataset.train_stride = to_uint(k, v); },
       [](const RunConfig& c) { return std::to_string(c.dataset.train_stride); }},
      {"data.eval_stride", [](RunConfig& c, auto& k, auto& v) { c.dataset.eval_stride = to_uint(k, v); },
       [](const RunConfig& c) { return std::to_string(c.dataset.eval_stride); }},
      {"data.test_subjects",
       [](RunConfig& c, auto&, auto& v) { set_subjects(c.dataset.split, data::Split::test, v); },
       [](const RunConfig& c) { return subjects_of(c.dataset.split, data::Split::test); }},
      {"data.val_subjects",
       [](RunConfig& c, auto&, auto& v) { set_subjects(c.dataset.split, data::Split::val, v); },
       [](const RunConfig& c) { return subjects_of(c.dataset.split, data::Split::val); }},

      {"synthetic.motion",
       [](RunConfig& c, auto& k, auto& v) {
         if (v == "sinusoid") c.synthetic.kind = data::MotionKind::sinusoid;
         else if (v == "linear") c.synthetic.kind = data::MotionKind::linear;
         else if (v == "still") c.synthetic.kind = data::MotionKind::still;
         else throw ConfigError(k + ": expected sinusoid, linear or still, got '" + v + "'");
       },
       [](const RunConfig& c) {
         switch (c.synthetic.kind) {
           case data::MotionKind::sinusoid: return std::string("sinusoid");
           case data::MotionKind::linear: return std::string("linear");
           default: return std::string("still");
         }
       }},
      {"synthetic.train_sequences",
       [](RunConfig& c, auto& k, auto& v) { c.synthetic.train_sequences = to_uint(k, v); },
       [](const RunConfig& c) { return std::to_string(c.synthetic.train_sequences); }},
      {"synthetic.val_sequences",
       [](RunConfig& c, auto& k, auto& v) { c.synthetic.val_sequences = to_uint(k, v); },
       [](const RunConfig& c) { return std::to_string(c.synthetic.val_sequences); }},
      {"synthetic.test_sequences",
       [](RunConfig& c, auto& k, auto& v) { c.synthetic.test_sequences = to_uint(k, v); },
       [](const RunConfig& c) { return std::to_string(c.synthetic.test_sequences); }},
      {"synthetic.frames", [](RunConfig& c, auto& k, auto& v) { c.synthetic.frames = to_uint(k, v); },
       [](const RunConfig& c) { return std::to_string(c.synthetic.frames); }},
      {"synthetic.amplitude",
       [](RunConfig& c, auto& k, auto& v) { c.synthetic.options.amplitude = to_double(k, v); },
       [](const RunConfig& c) { return num(c.synthetic.options.amplitude); }},
      {"synthetic.frequency",
       [](RunConfig& c, auto& k, auto& v) { c.synthetic.options.base_frequency = to_double(k, v); },
       [](const RunConfig& c) { return num(c.synthetic.options.base_frequency); }},
      {"synthetic.velocity",
       [](RunConfig& c, auto& k, auto& v) { c.synthetic.options.velocity = to_double(k, v); },
       [](const RunConfig& c) { return num(c.synthetic.options.velocity); }},
      {"synthetic.spread",
       [](RunConfig& c, auto& k, auto& v) { c.synthetic.options.spread = to_double(k, v); },
       [](const RunConfig& c) { return num(c.synthetic.options.spread); }},
      {"synthetic.seed", [](RunConfig& c, auto& k, auto& v) { c.synthetic.seed = to_uint(k, v); },
       [](const RunConfig& c) { return std::to_string(c.synthetic.seed); }},

      {"eval.horizons",
       [](RunConfig& c, auto& k, auto& v) { c.horizons_ms = to_list<double>(k, v, to_double); },
       [](const RunConfig& c) { return join(c.horizons_ms); }},
  };
  return table;
}

const Field* find_field(const std::string& key) {
  for (const auto& f : fields()) {
    if (key == f.key) return &f;
  }
  return nullptr;
}

void apply(RunConfig& cfg, const std::string& key, const std::string& value) {
  const Field* f = find_field(key);
  if (!f) throw ConfigError("unknown config key '" + key + "'");
  f->set(cfg, key, trim(value));
}

void finish(RunConfig& cfg) {
  try {
    cfg.model.grouping = multiscale::resolve_grouping(cfg.grouping);
  } catch (const DataError& e) {
    throw ConfigError(std::string("model.grouping: ") + e.what());
  }
  model::validate(cfg.model);
  if (cfg.train.lambdas.size() < cfg.model.levels) {
    throw ConfigError("training.lambdas needs " + std::to_string(cfg.model.levels) + " entries");
  }
  if (cfg.train.batch_size == 0) throw ConfigError("training.batch_size must be positive");
  if (cfg.train.lr.every == 0) throw ConfigError("training.lr_every must be positive");
  if (!(cfg.fps > 0.0)) throw ConfigError("data.fps must be positive");
  if (cfg.dataset.temporal_downsample == 0) throw ConfigError("data.downsample must be positive");
  if (cfg.dataset.train_stride == 0) throw ConfigError("data.train_stride must be positive");
  if (cfg.dataset.eval_stride == 0) cfg.dataset.eval_stride = cfg.model.future;
  if (cfg.horizons_ms.empty()) throw ConfigError("eval.horizons is empty");

  if (cfg.joint_selection == "none" || cfg.joint_selection.empty()) {
    cfg.dataset.joint_selection.clear();
  } else if (cfg.joint_selection == "h36m") {
    cfg.dataset.joint_selection = data::h36m_joint_selection();
  } else if (cfg.joint_selection == "cmu") {
    cfg.dataset.joint_selection = data::cmu_joint_selection();
  } else {
    cfg.dataset.joint_selection = to_list<std::size_t>("data.joints", cfg.joint_selection, to_uint);
  }
  cfg.dataset.history = cfg.model.history;
  cfg.dataset.future = cfg.model.future;
}

}  // namespace

std::pair<std::string, std::string> parse_assignment(const std::string& text) {
  const auto eq = text.find('=');
  if (eq == std::string::npos) throw ConfigError("expected section.key=value, got '" + text + "'");
  std::string key = trim(text.substr(0, eq));
  if (key.find('.') == std::string::npos) {
    throw ConfigError("expected section.key=value, got '" + text + "'");
  }
  return {key, trim(text.substr(eq + 1))};
}

RunConfig parse(const std::string& ini_text,
                const std::vector<std::pair<std::string, std::string>>& overrides) {
  pt::ptree tree;
  try {
    std::istringstream in(ini_text);
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError("config line " + std::to_string(e.line()) + ": " + e.message());
  }
  RunConfig cfg;
  for (const auto& [section, body] : tree) {
    if (body.empty()) throw ConfigError("config key '" + section + "' is outside a section");
    for (const auto& [key, value] : body) apply(cfg, section + "." + key, value.data());
  }
  for (const auto& [key, value] : overrides) apply(cfg, key, value);
  finish(cfg);
  return cfg;
}

RunConfig load(const std::filesystem::path& path,
               const std::vector<std::pair<std::string, std::string>>& overrides) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  return parse(text.str(), overrides);
}

std::string format(const RunConfig& cfg) {
  std::ostringstream out;
  std::string section;
  for (const auto& f : fields()) {
    const std::string key = f.key;
    const auto dot = key.find('.');
    const std::string sec = key.substr(0, dot);
    if (sec != section) {
      if (!section.empty()) out << "\n";
      out << "[" << sec << "]\n";
      section = sec;
    }
    out << key.substr(dot + 1) << " = " << f.get(cfg) << "\n";
  }
  return out.str();
}

Datasets load_datasets(const RunConfig& cfg) {
  std::vector<data::PoseSequence> sequences;
  double fps = cfg.fps;
  if (cfg.data_source == "synthetic") {
    const std::size_t joints = cfg.model.grouping.scales.front();
    auto add = [&](std::size_t count, const std::string& subject, std::uint64_t base) {
      for (std::size_t i = 0; i < count; ++i) {
        data::SyntheticOptions o = cfg.synthetic.options;
        o.subject = subject;
        sequences.push_back(data::synthetic_motion(cfg.synthetic.kind, joints, cfg.synthetic.frames,
                                                   cfg.fps, cfg.synthetic.seed * 1000 + base + i, o));
      }
    };
    add(cfg.synthetic.train_sequences, "S1", 0);
    add(cfg.synthetic.val_sequences, "S11", 300);
    add(cfg.synthetic.test_sequences, "S5", 600);
  } else {
    sequences = data::load_directory(cfg.data_source);
    if (sequences.empty()) throw DataError("no .seq files under " + cfg.data_source);
  }

  for (auto& s : sequences) s = data::preprocess(s, cfg.dataset);
  if (cfg.data_source != "synthetic") fps = sequences.front().fps;
  for (const auto& s : sequences) {
    if (s.joints != cfg.model.grouping.scales.front()) {
      throw DataError(s.subject + "/" + s.action + ": " + std::to_string(s.joints) +
                      " joints, grouping expects " + std::to_string(cfg.model.grouping.scales.front()));
    }
    if (s.fps != fps) throw DataError("sequences disagree on frame rate");
  }

  data::SplitSets sets = data::split_by_subject(std::move(sequences), cfg.dataset.split);
  Datasets out;
  out.fps = fps;
  auto windows = [&](const std::vector<data::PoseSequence>& seqs, std::size_t stride,
                     std::vector<training::Sample>& dst) {
    for (const auto& s : seqs) {
      auto w = data::window(s, cfg.model.history, cfg.model.future, stride);
      dst.insert(dst.end(), std::make_move_iterator(w.begin()), std::make_move_iterator(w.end()));
    }
  };
  windows(sets.train, cfg.dataset.train_stride, out.train);
  windows(sets.val, cfg.dataset.eval_stride, out.val);
  windows(sets.test, cfg.dataset.eval_stride, out.test);
  return out;
}

}  // namespace msrgcn::config
