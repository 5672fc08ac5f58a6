#include "mlrf/param_store.hpp"

#include "mlrf/errors.hpp"

namespace mlrf {

Tensor& ParamStore::add(const std::string& name, Tensor value) {
  auto [it, inserted] = entries_.emplace(name, std::move(value));
  if (!inserted) throw ContractError("duplicate parameter name: " + name);
  return it->second;
}

const Tensor& ParamStore::get(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw IndexError("unknown parameter: " + name);
  return it->second;
}

Tensor& ParamStore::get(const std::string& name) {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw IndexError("unknown parameter: " + name);
  return it->second;
}

std::size_t ParamStore::count_scalars() const {
  std::size_t n = 0;
  for (const auto& [name, t] : entries_) n += t.numel();
  return n;
}

std::size_t ParamStore::count_scalars(const std::string& prefix) const {
  std::size_t n = 0;
  for (auto it = entries_.lower_bound(prefix); it != entries_.end() && it->first.starts_with(prefix); ++it) {
    n += it->second.numel();
  }
  return n;
}

void ParamStore::zero_grad() {
  for (auto& [name, t] : entries_) t.zero_grad();
}

std::vector<std::string> ParamStore::names() const {
  std::vector<std::string> out;
  out.reserve(entries_.size());
  for (const auto& [name, t] : entries_) out.push_back(name);
  return out;
}

ParamStore ParamStore::clone() const {
  ParamStore copy;
  for (const auto& [name, t] : entries_) {
    Tensor fresh = t.detach();
    fresh.set_requires_grad(t.requires_grad());
    copy.add(name, std::move(fresh));
  }
  return copy;
}

}  // namespace mlrf
