#include "vpl/numcore/parameter.hpp"

#include "vpl/numcore/error.hpp"

namespace vpl {

Parameter& ParameterSet::add(std::string id, Tensor value, bool trainable) {
  if (index_.contains(id)) throw ConfigError("duplicate parameter id: " + id);
  index_.emplace(id, params_.size());
  params_.push_back(Parameter{std::move(id), std::move(value), Tensor(), trainable});
  return params_.back();
}

bool ParameterSet::contains(std::string_view id) const {
  return index_.contains(std::string(id));
}

Parameter* ParameterSet::find(std::string_view id) {
  auto it = index_.find(std::string(id));
  return it == index_.end() ? nullptr : &params_[it->second];
}

const Parameter* ParameterSet::find(std::string_view id) const {
  auto it = index_.find(std::string(id));
  return it == index_.end() ? nullptr : &params_[it->second];
}

Parameter& ParameterSet::at(std::string_view id) {
  if (auto* p = find(id)) return *p;
  throw ConfigError("unknown parameter id: " + std::string(id));
}

const Parameter& ParameterSet::at(std::string_view id) const {
  if (const auto* p = find(id)) return *p;
  throw ConfigError("unknown parameter id: " + std::string(id));
}

std::size_t ParameterSet::count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

std::size_t ParameterSet::trainable_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) {
    if (p.trainable) n += p.value.size();
  }
  return n;
}

std::vector<std::string> ParameterSet::trainable_ids() const {
  std::vector<std::string> ids;
  for (const auto& p : params_) {
    if (p.trainable) ids.push_back(p.id);
  }
  return ids;
}

void ParameterSet::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

void ParameterSet::set_trainable(bool trainable) {
  for (auto& p : params_) p.trainable = trainable;
}

void ParameterSet::set_trainable_if(const std::function<bool(const Parameter&)>& pred,
                                    bool trainable) {
  for (auto& p : params_) {
    if (pred(p)) p.trainable = trainable;
  }
}

Parameter& ParamScope::at(std::string_view local) const { return set_->at(qualify(local)); }

std::string ParamScope::qualify(std::string_view local) const {
  std::string id = prefix_;
  id += local;
  return id;
}

}  // namespace vpl
