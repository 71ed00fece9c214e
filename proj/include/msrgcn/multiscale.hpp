#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "msrgcn/matrix.hpp"

namespace msrgcn::multiscale {

/// Assignment of fine joints to coarse groups for one scale transition.
/// groups[c] lists the fine joints whose centroid becomes coarse joint c.
struct Partition {
  std::size_t fine_count = 0;
  std::vector<std::vector<std::size_t>> groups;

  std::size_t coarse_count() const noexcept { return groups.size(); }
  friend bool operator==(const Partition&, const Partition&) = default;
};

/// Chain of joint counts, finest first, and the partition between each
/// adjacent pair.
struct GroupingScheme {
  std::vector<std::size_t> scales;
  std::vector<Partition> maps;

  std::size_t levels() const noexcept { return scales.size(); }
  friend bool operator==(const GroupingScheme&, const GroupingScheme&) = default;
};

enum class ViolationKind {
  unassigned_joint,
  duplicate_assignment,
  empty_group,
  index_out_of_range,
  count_mismatch,
  scales_not_decreasing,
};

struct Violation {
  ViolationKind kind;
  std::size_t transition = 0;  // index into maps
  std::size_t index = 0;       // offending joint or group
  std::string message;
};

std::vector<Violation> validate_partition(const Partition& p, std::size_t transition = 0);
/// Every partition violation in the scheme; empty means valid.
std::vector<Violation> validate_grouping(const GroupingScheme& g);
/// Throws DataError listing all violations.
void require_valid(const GroupingScheme& g);

/// Coarse pose: each coarse joint is the mean of its group. pose is J×3.
Matrix abstract_pose(const Matrix& pose, const Partition& p);
/// Frame-by-frame abstraction of a (3J)×T sequence, rows joint-major (x, y, z).
Matrix abstract_sequence(const Matrix& seq, const Partition& p);

/// A sequence at every scale of a grouping; scale 0 is the input itself.
struct ScalePyramid {
  std::vector<Matrix> scales;
};

/// Builds the first `levels` scales (all when 0) of a (3·J0)×T sequence.
ScalePyramid build_pyramid(const Matrix& seq, const GroupingScheme& g, std::size_t levels = 0);

/// Uniformly random partition of J joints into `target` non-empty groups.
/// Coarse indices follow each group's smallest member.
Partition random_grouping(std::size_t joints, std::size_t target, std::uint64_t seed);
/// Random partitions for every transition of the given chain.
GroupingScheme random_scheme(const std::vector<std::size_t>& scales, std::uint64_t seed);

/// Grouping file: a `scales: a b c ...` line, then one block per transition
/// of `coarse: fine, fine, ...` lines. Blank lines end a block; `#` starts
/// a comment.
GroupingScheme parse_grouping(std::string_view text);
GroupingScheme load_grouping(const std::filesystem::path& path);
std::string format_grouping(const GroupingScheme& g);

// Shipped schemes. Group memberships follow the usual limb decomposition.
GroupingScheme h36m_22_12_7_4();
GroupingScheme cmu_25_12_7_4();
GroupingScheme cmu_25_10_5_3();
/// 6-3-2-1 chain for desk-scale synthetic data.
GroupingScheme toy_6_3_2_1();

/// Built-in by name (h36m, cmu, cmu_25_10_5_3, toy) or a grouping file path.
GroupingScheme resolve_grouping(const std::string& name_or_path);

}  // namespace msrgcn::multiscale
