#include "msrgcn/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iostream>
#include <numbers>
#include <set>
#include <sstream>

#include "msrgcn/errors.hpp"
#include "msrgcn/rng.hpp"

namespace msrgcn::data {

void validate(const PoseSequence& seq) {
  if (seq.joints == 0) throw DataError("sequence has no joints");
  if (!(seq.fps > 0.0) || !std::isfinite(seq.fps)) throw DataError("sequence fps must be positive");
  if (seq.frames.rows() == 0) throw DataError("sequence has no frames");
  if (seq.frames.cols() != 3 * seq.joints) {
    throw DataError("sequence frames " + seq.frames.shape_string() + " do not match J=" +
                    std::to_string(seq.joints));
  }
  if (!seq.frames.all_finite()) throw DataError("sequence has non-finite coordinates");
}

namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string_view> split_ws(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && (s[i] == ' ' || s[i] == '\t' || s[i] == '\r')) ++i;
    std::size_t j = i;
    while (j < s.size() && s[j] != ' ' && s[j] != '\t' && s[j] != '\r') ++j;
    if (j > i) out.push_back(s.substr(i, j - i));
    i = j;
  }
  return out;
}

std::string_view header_field(std::string_view tok, std::string_view key, std::size_t line) {
  if (tok.substr(0, key.size()) != key || tok.size() == key.size()) {
    throw ParseError("header field '" + std::string(key) + "<value>' expected, got '" +
                         std::string(tok) + "'",
                     line);
  }
  return tok.substr(key.size());
}

double parse_real(std::string_view tok, std::size_t line) {
  double v = 0.0;
  const char* end = tok.data() + tok.size();
  auto [ptr, ec] = std::from_chars(tok.data(), end, v);
  if (ec != std::errc() || ptr != end) {
    throw ParseError("cannot parse number '" + std::string(tok) + "'", line);
  }
  return v;
}

void append_real(std::string& out, double v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  out.append(buf, ptr);
}

}  // namespace

PoseSequence parse_sequence(std::string_view text) {
  PoseSequence seq;
  bool have_header = false;
  std::vector<double> values;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto nl = text.find('\n', pos);
    std::string_view line = text.substr(pos, nl == std::string_view::npos ? text.npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++line_no;
    const std::string_view body = trim(line);
    if (body.empty()) continue;
    if (!have_header) {
      if (body.front() == '#') continue;
      const auto toks = split_ws(body);
      if (toks.size() != 5 || toks[0] != "MSRSEQ1") {
        throw ParseError("expected header 'MSRSEQ1 J=<n> FPS=<f> SUBJECT=<s> ACTION=<a>'", line_no);
      }
      const auto jtok = header_field(toks[1], "J=", line_no);
      auto [ptr, ec] = std::from_chars(jtok.data(), jtok.data() + jtok.size(), seq.joints);
      if (ec != std::errc() || ptr != jtok.data() + jtok.size() || seq.joints == 0) {
        throw ParseError("bad joint count '" + std::string(jtok) + "'", line_no);
      }
      seq.fps = parse_real(header_field(toks[2], "FPS=", line_no), line_no);
      if (!(seq.fps > 0.0) || !std::isfinite(seq.fps)) throw ParseError("FPS must be positive", line_no);
      seq.subject = std::string(header_field(toks[3], "SUBJECT=", line_no));
      seq.action = std::string(header_field(toks[4], "ACTION=", line_no));
      have_header = true;
      continue;
    }
    if (body.front() == '#') throw ParseError("comments are only allowed before the header", line_no);
    const auto toks = split_ws(body);
    if (toks.size() != 3 * seq.joints) {
      throw ParseError("frame has " + std::to_string(toks.size()) + " values, expected " +
                           std::to_string(3 * seq.joints) + " for J=" + std::to_string(seq.joints),
                       line_no);
    }
    for (auto tok : toks) {
      const double v = parse_real(tok, line_no);
      if (!std::isfinite(v)) {
        throw DataError("line " + std::to_string(line_no) + ": non-finite coordinate '" +
                        std::string(tok) + "'");
      }
      values.push_back(v);
    }
  }
  if (!have_header) throw ParseError("missing MSRSEQ1 header", line_no);
  if (values.empty()) throw ParseError("sequence has no frames", line_no);
  const std::size_t frames = values.size() / (3 * seq.joints);
  seq.frames = Matrix(frames, 3 * seq.joints, std::move(values));
  return seq;
}

PoseSequence load_sequence(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open sequence file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return parse_sequence(ss.str());
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what(), e.line());
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

std::string format_sequence(const PoseSequence& seq) {
  validate(seq);
  for (const auto* s : {&seq.subject, &seq.action}) {
    if (s->empty() || s->find_first_of(" \t\r\n") != std::string::npos) {
      throw DataError("subject and action must be non-empty and free of whitespace");
    }
  }
  std::string out = "MSRSEQ1 J=" + std::to_string(seq.joints) + " FPS=";
  append_real(out, seq.fps);
  out += " SUBJECT=" + seq.subject + " ACTION=" + seq.action + "\n";
  for (std::size_t t = 0; t < seq.frames.rows(); ++t) {
    for (std::size_t c = 0; c < seq.frames.cols(); ++c) {
      if (c) out += ' ';
      append_real(out, seq.frames(t, c));
    }
    out += '\n';
  }
  return out;
}

void save_sequence(const std::filesystem::path& path, const PoseSequence& seq) {
  const std::string text = format_sequence(seq);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write sequence file " + path.string());
  out << text;
  if (!out) throw DataError("failed writing " + path.string());
}

std::vector<PoseSequence> load_directory(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw DataError("data directory not found: " + dir.string());
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::recursive_directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".seq") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<PoseSequence> out;
  out.reserve(files.size());
  for (const auto& f : files) out.push_back(load_sequence(f));
  return out;
}

std::vector<std::size_t> h36m_joint_selection() {
  return {2, 3, 4, 5, 7, 8, 9, 10, 12, 13, 14, 15, 17, 18, 19, 21, 22, 25, 26, 27, 29, 30};
}

std::vector<std::size_t> cmu_joint_selection() {
  return {3, 4, 5, 6, 9, 10, 11, 12, 14, 15, 17, 18, 19, 21, 22, 23, 25, 26, 28, 30, 31, 32, 34, 35, 37};
}

PoseSequence preprocess(const PoseSequence& seq, const DatasetConfig& cfg) {
  validate(seq);
  if (cfg.temporal_downsample < 1) throw ConfigError("temporal downsample factor must be >= 1");
  std::vector<std::size_t> sel = cfg.joint_selection;
  if (sel.empty()) {
    sel.resize(seq.joints);
    for (std::size_t j = 0; j < seq.joints; ++j) sel[j] = j;
  }
  std::set<std::size_t> unique(sel.begin(), sel.end());
  if (unique.size() != sel.size()) throw ConfigError("joint selection has duplicate indices");
  for (auto j : sel) {
    if (j >= seq.joints) {
      throw ConfigError("joint selection index " + std::to_string(j) + " out of range for J=" +
                        std::to_string(seq.joints));
    }
  }
  const std::size_t factor = cfg.temporal_downsample;
  const std::size_t frames = (seq.length() + factor - 1) / factor;
  PoseSequence out;
  out.joints = sel.size();
  out.fps = seq.fps / double(factor);
  out.subject = seq.subject;
  out.action = seq.action;
  out.frames = Matrix(frames, 3 * sel.size());
  for (std::size_t t = 0; t < frames; ++t) {
    for (std::size_t j = 0; j < sel.size(); ++j) {
      for (std::size_t a = 0; a < 3; ++a) out.frames(t, 3 * j + a) = seq.frames(t * factor, 3 * sel[j] + a);
    }
  }
  return out;
}

std::vector<training::Sample> window(const PoseSequence& seq, std::size_t history,
                                     std::size_t future, std::size_t stride) {
  if (history == 0) throw ConfigError("window history must be at least one frame");
  if (stride == 0) throw ConfigError("window stride must be positive");
  std::vector<training::Sample> out;
  const std::size_t span = history + future;
  if (seq.length() < span) {
    std::cerr << "warning: sequence " << seq.subject << "/" << seq.action << " has "
              << seq.length() << " frames, fewer than " << span << "; no windows\n";
    return out;
  }
  const std::size_t k = seq.frames.cols();
  auto slice = [&](std::size_t start, std::size_t len) {
    Matrix m(k, len);
    for (std::size_t t = 0; t < len; ++t)
      for (std::size_t r = 0; r < k; ++r) m(r, t) = seq.frames(start + t, r);
    return m;
  };
  for (std::size_t start = 0; start + span <= seq.length(); start += stride) {
    out.push_back({slice(start, history), slice(start + history, future), seq.action});
  }
  return out;
}

SplitSets split_by_subject(std::vector<PoseSequence> sequences, const SplitMap& map) {
  SplitSets out;
  for (auto& s : sequences) {
    Split split;
    if (auto it = map.subjects.find(s.subject); it != map.subjects.end()) {
      split = it->second;
    } else if (map.fallback) {
      split = *map.fallback;
    } else {
      throw ConfigError("subject '" + s.subject + "' is not in the split map");
    }
    switch (split) {
      case Split::train: out.train.push_back(std::move(s)); break;
      case Split::val: out.val.push_back(std::move(s)); break;
      case Split::test: out.test.push_back(std::move(s)); break;
    }
  }
  return out;
}

PoseSequence synthetic_motion(MotionKind kind, std::size_t joints, std::size_t frames, double fps,
                              std::uint64_t seed, const SyntheticOptions& opt) {
  if (joints == 0 || frames == 0 || !(fps > 0.0)) {
    throw ConfigError("synthetic motion needs joints, frames and fps > 0");
  }
  Rng rng(seed);
  PoseSequence seq;
  seq.joints = joints;
  seq.fps = fps;
  seq.subject = opt.subject;
  seq.action = opt.action;
  seq.frames = Matrix(frames, 3 * joints);
  const std::size_t k = 3 * joints;
  std::vector<double> rest(k), amp(k), phase(k), dir(k);
  for (std::size_t r = 0; r < k; ++r) {
    rest[r] = opt.spread * rng.uniform(-1.0, 1.0);
    amp[r] = opt.amplitude * rng.uniform(0.5, 1.0);
    phase[r] = rng.uniform(0.0, 2.0 * std::numbers::pi);
    dir[r] = rng.uniform(-1.0, 1.0);
  }
  for (std::size_t t = 0; t < frames; ++t) {
    for (std::size_t r = 0; r < k; ++r) {
      double v = rest[r];
      if (kind == MotionKind::sinusoid) {
        const double freq = opt.base_frequency * (1.0 + 0.25 * double((r / 3) % 4));
        v += amp[r] * std::sin(2.0 * std::numbers::pi * freq * double(t) / fps + phase[r]);
      } else if (kind == MotionKind::linear) {
        v += opt.velocity * dir[r] * double(t);
      }
      seq.frames(t, r) = v;
    }
  }
  return seq;
}

}  // namespace msrgcn::data
