#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "msrgcn/matrix.hpp"

namespace msrgcn {

/// Named registry of every tensor a model owns, in construction order.
///
/// Paths are hierarchical ("D1/block0/gcl1/A"). Learnable entries receive
/// gradients and optimizer updates; buffers (running normalization
/// statistics) are stored and checkpointed but never trained.
class ModelParams {
 public:
  std::size_t add(std::string path, Matrix value, bool learnable = true);

  std::size_t size() const noexcept { return values_.size(); }
  const std::string& path(std::size_t id) const { return paths_.at(id); }
  bool learnable(std::size_t id) const { return learnable_.at(id); }
  Matrix& at(std::size_t id) { return values_.at(id); }
  const Matrix& at(std::size_t id) const { return values_.at(id); }
  std::optional<std::size_t> find(const std::string& path) const;

  /// Total scalar count over learnable entries.
  std::size_t learnable_scalars() const;

  /// Allocates and zeroes the gradient buffer of every learnable entry.
  void zero_grads();
  void drop_grads();

 private:
  std::vector<std::string> paths_;
  std::vector<Matrix> values_;
  std::vector<bool> learnable_;
  std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace msrgcn
