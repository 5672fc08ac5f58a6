#pragma once

#include <map>
#include <string>
#include <vector>

#include "mlrf/tensor.hpp"

namespace mlrf {

/// How a parameter is drawn at initialization.
enum class InitKind {
  word_embedding,   // N(0, d^-0.5)
  layer_embedding,  // U(-0.1, 0.1)
  norm_gain,        // constant 1
  norm_bias,        // constant 0
  fan_in_uniform,   // U(-1/sqrt(fan_in), 1/sqrt(fan_in))
};

/// Declares one parameter of an architecture before any storage exists.
struct ParamSpec {
  std::string name;
  Shape shape;
  InitKind init = InitKind::fan_in_uniform;
  std::size_t fan_in = 1;
};

/// Named trainable tensors, iterated in lexicographic name order.
class ParamStore {
 public:
  using Map = std::map<std::string, Tensor>;

  /// Registers a new parameter; throws ContractError on a duplicate name.
  Tensor& add(const std::string& name, Tensor value);
  const Tensor& get(const std::string& name) const;
  Tensor& get(const std::string& name);
  bool contains(const std::string& name) const { return entries_.count(name) != 0; }

  std::size_t size() const { return entries_.size(); }
  std::size_t count_scalars() const;
  /// Scalar count over entries whose name starts with `prefix`.
  std::size_t count_scalars(const std::string& prefix) const;

  void zero_grad();
  std::vector<std::string> names() const;

  Map::const_iterator begin() const { return entries_.begin(); }
  Map::const_iterator end() const { return entries_.end(); }
  Map::iterator begin() { return entries_.begin(); }
  Map::iterator end() { return entries_.end(); }

  /// Deep copy: fresh storage, no gradients.
  ParamStore clone() const;

 private:
  Map entries_;
};

}  // namespace mlrf
