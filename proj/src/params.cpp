#include "msrgcn/params.hpp"

#include "msrgcn/errors.hpp"

namespace msrgcn {

std::size_t ModelParams::add(std::string path, Matrix value, bool learnable) {
  if (index_.count(path)) throw UsageError("duplicate parameter path '" + path + "'");
  const std::size_t id = values_.size();
  index_.emplace(path, id);
  paths_.push_back(std::move(path));
  values_.push_back(std::move(value));
  learnable_.push_back(learnable);
  return id;
}

std::optional<std::size_t> ModelParams::find(const std::string& path) const {
  auto it = index_.find(path);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::size_t ModelParams::learnable_scalars() const {
  std::size_t n = 0;
  for (std::size_t i = 0; i < values_.size(); ++i)
    if (learnable_[i]) n += values_[i].size();
  return n;
}

void ModelParams::zero_grads() {
  for (std::size_t i = 0; i < values_.size(); ++i)
    if (learnable_[i]) values_[i].zero_grad();
}

void ModelParams::drop_grads() {
  for (auto& v : values_) v.drop_grad();
}

}  // namespace msrgcn
