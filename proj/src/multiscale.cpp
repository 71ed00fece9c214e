#include "msrgcn/multiscale.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "msrgcn/errors.hpp"
#include "msrgcn/rng.hpp"
#include "msrgcn_builtin_groupings.hpp"

namespace msrgcn::multiscale {

namespace {
constexpr std::size_t kUnowned = static_cast<std::size_t>(-1);
}  // namespace

std::vector<Violation> validate_partition(const Partition& p, std::size_t transition) {
  std::vector<Violation> out;
  auto report = [&](ViolationKind kind, std::size_t index, std::string msg) {
    out.push_back({kind, transition, index,
                   "transition " + std::to_string(transition) + ": " + std::move(msg)});
  };
  std::vector<std::size_t> owner(p.fine_count, kUnowned);
  for (std::size_t c = 0; c < p.groups.size(); ++c) {
    if (p.groups[c].empty()) {
      report(ViolationKind::empty_group, c, "group " + std::to_string(c) + " is empty");
    }
    for (std::size_t j : p.groups[c]) {
      if (j >= p.fine_count) {
        report(ViolationKind::index_out_of_range, j,
               "joint " + std::to_string(j) + " in group " + std::to_string(c) +
                   " is outside 0.." + std::to_string(p.fine_count) + "-1");
      } else if (owner[j] != kUnowned) {
        report(ViolationKind::duplicate_assignment, j,
               "joint " + std::to_string(j) + " assigned to groups " + std::to_string(owner[j]) +
                   " and " + std::to_string(c));
      } else {
        owner[j] = c;
      }
    }
  }
  for (std::size_t j = 0; j < p.fine_count; ++j) {
    if (owner[j] == kUnowned) {
      report(ViolationKind::unassigned_joint, j, "joint " + std::to_string(j) + " is unassigned");
    }
  }
  return out;
}

std::vector<Violation> validate_grouping(const GroupingScheme& g) {
  std::vector<Violation> out;
  for (std::size_t s = 1; s < g.scales.size(); ++s) {
    if (g.scales[s] >= g.scales[s - 1]) {
      out.push_back({ViolationKind::scales_not_decreasing, s - 1, s,
                     "scale " + std::to_string(s) + " (" + std::to_string(g.scales[s]) +
                         " joints) is not coarser than scale " + std::to_string(s - 1)});
    }
  }
  if (g.scales.empty() || g.scales.front() == 0) {
    out.push_back({ViolationKind::count_mismatch, 0, 0, "scheme has no joints"});
  }
  const std::size_t expected = g.scales.empty() ? 0 : g.scales.size() - 1;
  if (g.maps.size() != expected) {
    out.push_back({ViolationKind::count_mismatch, 0, g.maps.size(),
                   std::to_string(g.maps.size()) + " transitions for " +
                       std::to_string(g.scales.size()) + " scales"});
  }
  for (std::size_t t = 0; t < std::min(g.maps.size(), expected); ++t) {
    const Partition& p = g.maps[t];
    if (p.fine_count != g.scales[t] || p.coarse_count() != g.scales[t + 1]) {
      out.push_back({ViolationKind::count_mismatch, t, 0,
                     "transition " + std::to_string(t) + " maps " + std::to_string(p.fine_count) +
                         " -> " + std::to_string(p.coarse_count()) + " but scales are " +
                         std::to_string(g.scales[t]) + " -> " + std::to_string(g.scales[t + 1])});
    }
    auto v = validate_partition(p, t);
    out.insert(out.end(), v.begin(), v.end());
  }
  return out;
}

void require_valid(const GroupingScheme& g) {
  const auto v = validate_grouping(g);
  if (v.empty()) return;
  std::string msg = "invalid grouping:";
  for (const auto& x : v) msg += "\n  " + x.message;
  throw DataError(msg);
}

Matrix abstract_pose(const Matrix& pose, const Partition& p) {
  if (pose.cols() != 3 || pose.rows() != p.fine_count) {
    throw ShapeError("abstract_pose: pose " + pose.shape_string() + " vs partition of " +
                     std::to_string(p.fine_count) + " joints");
  }
  if (!validate_partition(p).empty()) throw DataError("abstract_pose: invalid partition");
  Matrix out(p.coarse_count(), 3);
  for (std::size_t c = 0; c < p.groups.size(); ++c) {
    for (std::size_t a = 0; a < 3; ++a) {
      double sum = 0.0;
      for (std::size_t j : p.groups[c]) sum += pose(j, a);
      out(c, a) = sum / double(p.groups[c].size());
    }
  }
  return out;
}

Matrix abstract_sequence(const Matrix& seq, const Partition& p) {
  if (seq.rows() != 3 * p.fine_count) {
    throw ShapeError("abstract_sequence: sequence " + seq.shape_string() + " vs partition of " +
                     std::to_string(p.fine_count) + " joints");
  }
  if (!validate_partition(p).empty()) throw DataError("abstract_sequence: invalid partition");
  const std::size_t frames = seq.cols();
  Matrix out(3 * p.coarse_count(), frames);
  for (std::size_t c = 0; c < p.groups.size(); ++c) {
    const double n = double(p.groups[c].size());
    for (std::size_t a = 0; a < 3; ++a) {
      for (std::size_t t = 0; t < frames; ++t) {
        double sum = 0.0;
        for (std::size_t j : p.groups[c]) sum += seq(3 * j + a, t);
        out(3 * c + a, t) = sum / n;
      }
    }
  }
  return out;
}

ScalePyramid build_pyramid(const Matrix& seq, const GroupingScheme& g, std::size_t levels) {
  if (levels == 0) levels = g.levels();
  if (levels > g.levels()) {
    throw ShapeError("build_pyramid: " + std::to_string(levels) + " levels requested from a " +
                     std::to_string(g.levels()) + "-scale grouping");
  }
  if (g.scales.empty() || seq.rows() != 3 * g.scales[0]) {
    throw ShapeError("build_pyramid: sequence " + seq.shape_string() + " does not match " +
                     std::to_string(g.scales.empty() ? 0 : g.scales[0]) + " joints");
  }
  ScalePyramid out;
  out.scales.reserve(levels);
  out.scales.push_back(seq);
  for (std::size_t s = 1; s < levels; ++s) {
    out.scales.push_back(abstract_sequence(out.scales.back(), g.maps.at(s - 1)));
  }
  return out;
}

Partition random_grouping(std::size_t joints, std::size_t target, std::uint64_t seed) {
  if (target == 0 || target > joints) {
    throw ConfigError("random_grouping: target " + std::to_string(target) +
                      " must lie in 1.." + std::to_string(joints));
  }
  // completions[r][j]: ways to place r remaining joints given j groups opened
  // so that exactly `target` groups exist at the end.
  std::vector<std::vector<double>> completions(joints + 1, std::vector<double>(target + 2, 0.0));
  completions[0][target] = 1.0;
  for (std::size_t r = 1; r <= joints; ++r) {
    for (std::size_t j = 0; j <= target; ++j) {
      completions[r][j] = double(j) * completions[r - 1][j] + completions[r - 1][j + 1];
    }
  }
  Rng rng(seed);
  Partition p;
  p.fine_count = joints;
  for (std::size_t i = 0; i < joints; ++i) {
    const std::size_t remaining = joints - i - 1;
    const std::size_t open = p.groups.size();
    const double join_weight = double(open) * completions[remaining][open];
    const double new_weight = open < target ? completions[remaining][open + 1] : 0.0;
    const double u = rng.uniform() * (join_weight + new_weight);
    if (u < new_weight) {
      p.groups.push_back({i});
    } else {
      auto pick = std::min<std::size_t>(open - 1, std::size_t((u - new_weight) / completions[remaining][open]));
      p.groups[pick].push_back(i);
    }
  }
  return p;
}

GroupingScheme random_scheme(const std::vector<std::size_t>& scales, std::uint64_t seed) {
  GroupingScheme g;
  g.scales = scales;
  for (std::size_t s = 1; s < scales.size(); ++s) {
    g.maps.push_back(random_grouping(scales[s - 1], scales[s], seed * 1000003ULL + s));
  }
  require_valid(g);
  return g;
}

namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::size_t parse_index(std::string_view tok, std::size_t line) {
  tok = trim(tok);
  if (tok.empty()) throw ParseError("empty index", line);
  std::size_t v = 0;
  for (char ch : tok) {
    if (ch < '0' || ch > '9') throw ParseError("bad index '" + std::string(tok) + "'", line);
    v = v * 10 + std::size_t(ch - '0');
  }
  return v;
}

}  // namespace

GroupingScheme parse_grouping(std::string_view text) {
  GroupingScheme g;
  bool have_scales = false;
  bool in_block = false;
  std::vector<bool> seen;
  std::size_t line_no = 0;
  std::istringstream in{std::string(text)};
  std::string raw;
  while (std::getline(in, raw)) {
    ++line_no;
    std::string_view line = raw;
    if (auto hash = line.find('#'); hash != std::string_view::npos) {
      const bool comment_only = trim(line.substr(0, hash)).empty();
      line = line.substr(0, hash);
      if (comment_only) continue;
    }
    line = trim(line);
    if (line.empty()) {
      in_block = false;
      continue;
    }
    if (!have_scales) {
      if (line.substr(0, 7) != "scales:") throw ParseError("expected 'scales:' line", line_no);
      std::istringstream ss{std::string(line.substr(7))};
      std::string tok;
      while (ss >> tok) g.scales.push_back(parse_index(tok, line_no));
      if (g.scales.empty()) throw ParseError("no scales listed", line_no);
      have_scales = true;
      continue;
    }
    const auto colon = line.find(':');
    if (colon == std::string_view::npos) throw ParseError("expected 'coarse: fine, ...'", line_no);
    if (!in_block) {
      g.maps.emplace_back();
      const std::size_t t = g.maps.size() - 1;
      g.maps.back().fine_count = t < g.scales.size() ? g.scales[t] : 0;
      seen.clear();
      in_block = true;
    }
    Partition& p = g.maps.back();
    const std::size_t c = parse_index(line.substr(0, colon), line_no);
    if (c >= p.groups.size()) {
      p.groups.resize(c + 1);
      seen.resize(c + 1, false);
    }
    if (seen[c]) throw ParseError("coarse joint " + std::to_string(c) + " listed twice", line_no);
    seen[c] = true;
    std::string_view rest = line.substr(colon + 1);
    while (!trim(rest).empty()) {
      const auto comma = rest.find(',');
      p.groups[c].push_back(parse_index(rest.substr(0, comma), line_no));
      if (comma == std::string_view::npos) break;
      rest = rest.substr(comma + 1);
    }
  }
  if (!have_scales) throw ParseError("missing 'scales:' line", 0);
  // Coarse counts of trailing empty groups are taken from the declared scales.
  for (std::size_t t = 0; t < g.maps.size() && t + 1 < g.scales.size(); ++t) {
    if (g.maps[t].groups.size() < g.scales[t + 1]) g.maps[t].groups.resize(g.scales[t + 1]);
  }
  return g;
}

GroupingScheme load_grouping(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open grouping file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  GroupingScheme g = parse_grouping(ss.str());
  try {
    require_valid(g);
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
  return g;
}

std::string format_grouping(const GroupingScheme& g) {
  std::ostringstream out;
  out << "scales:";
  for (auto s : g.scales) out << ' ' << s;
  out << '\n';
  for (std::size_t t = 0; t < g.maps.size(); ++t) {
    out << '\n';
    for (std::size_t c = 0; c < g.maps[t].groups.size(); ++c) {
      out << c << ':';
      const auto& grp = g.maps[t].groups[c];
      for (std::size_t i = 0; i < grp.size(); ++i) out << (i ? ", " : " ") << grp[i];
      out << '\n';
    }
  }
  return out.str();
}

namespace {

GroupingScheme builtin(std::string_view text) {
  GroupingScheme g = parse_grouping(text);
  require_valid(g);
  return g;
}

}  // namespace

GroupingScheme h36m_22_12_7_4() { return builtin(builtin_groupings::h36m_22_12_7_4); }
GroupingScheme cmu_25_12_7_4() { return builtin(builtin_groupings::cmu_25_12_7_4); }
GroupingScheme cmu_25_10_5_3() { return builtin(builtin_groupings::cmu_25_10_5_3); }
GroupingScheme toy_6_3_2_1() { return builtin(builtin_groupings::toy_6_3_2_1); }

GroupingScheme resolve_grouping(const std::string& name) {
  if (name == "h36m" || name == "h36m_22_12_7_4") return h36m_22_12_7_4();
  if (name == "cmu" || name == "cmu_25_12_7_4") return cmu_25_12_7_4();
  if (name == "cmu_25_10_5_3") return cmu_25_10_5_3();
  if (name == "toy" || name == "toy_6_3_2_1") return toy_6_3_2_1();
  return load_grouping(name);
}

}  // namespace msrgcn::multiscale
