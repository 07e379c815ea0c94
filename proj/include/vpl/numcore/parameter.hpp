#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "vpl/numcore/tensor.hpp"

namespace vpl {

/// A named model tensor. `grad` is empty until a backward pass touches it.
struct Parameter {
  std::string id;
  Tensor value;
  Tensor grad;
  bool trainable = true;

  void zero_grad() { grad = Tensor(); }
};

/// Ordered set of uniquely named parameters. Insertion order is preserved and
/// defines iteration, serialization and optimizer order.
class ParameterSet {
 public:
  ParameterSet() = default;
  ParameterSet(const ParameterSet&) = default;
  ParameterSet& operator=(const ParameterSet&) = default;
  ParameterSet(ParameterSet&&) = default;
  ParameterSet& operator=(ParameterSet&&) = default;

  Parameter& add(std::string id, Tensor value, bool trainable = true);

  bool contains(std::string_view id) const;
  Parameter& at(std::string_view id);
  const Parameter& at(std::string_view id) const;
  Parameter* find(std::string_view id);
  const Parameter* find(std::string_view id) const;

  std::size_t size() const { return params_.size(); }
  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  /// Total number of scalar entries.
  std::size_t count() const;
  std::size_t trainable_count() const;
  std::vector<std::string> trainable_ids() const;

  void zero_grad();
  void set_trainable(bool trainable);
  void set_trainable_if(const std::function<bool(const Parameter&)>& pred, bool trainable);

 private:
  std::vector<Parameter> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Read-only lookup of parameters under a dot-path prefix ("general." etc).
class ParamScope {
 public:
  ParamScope(ParameterSet& set, std::string prefix = {})
      : set_(&set), prefix_(std::move(prefix)) {}

  Parameter& at(std::string_view local) const;
  const std::string& prefix() const { return prefix_; }
  std::string qualify(std::string_view local) const;
  ParameterSet& set() const { return *set_; }

 private:
  ParameterSet* set_;
  std::string prefix_;
};

}  // namespace vpl
