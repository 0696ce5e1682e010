#include "icelab/param_set.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "icelab/errors.hpp"

namespace icelab {

void ParamSet::add(const std::string& name, ad::Tensor tensor) {
  if (!entries_.emplace(name, std::move(tensor)).second) {
    throw StructuralError("duplicate parameter '" + name + "'");
  }
}

ad::Tensor& ParamSet::at(const std::string& name) {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw StructuralError("unknown parameter '" + name + "'");
  return it->second;
}

const ad::Tensor& ParamSet::at(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw StructuralError("unknown parameter '" + name + "'");
  return it->second;
}

std::vector<std::string> ParamSet::names() const {
  std::vector<std::string> out;
  out.reserve(entries_.size());
  for (const auto& [name, _] : entries_) out.push_back(name);
  return out;
}

std::size_t ParamSet::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [_, t] : entries_) n += t.size();
  return n;
}

ParamSet ParamSet::snapshot() const {
  ParamSet out;
  for (const auto& [name, t] : entries_) {
    auto v = t.values();
    out.entries_.emplace(name, ad::Tensor(t.shape(), std::vector<double>(v.begin(), v.end())));
  }
  out.version_ = version_;
  return out;
}

void ParamSet::restore(const ParamSet& snap) {
  if (snap.entries_.size() != entries_.size()) {
    throw StructuralError("restore: snapshot has a different parameter set");
  }
  for (auto& [name, t] : entries_) {
    const auto& s = snap.at(name);
    if (s.shape() != t.shape()) {
      throw StructuralError("restore: shape mismatch for '" + name + "'");
    }
    std::copy(s.values().begin(), s.values().end(), t.values().begin());
  }
  bump_version();
}

void ParamSet::set_trainable(const std::vector<std::string>& names) {
  for (auto& [_, t] : entries_) t.set_requires_grad(false);
  for (const auto& n : names) at(n).set_requires_grad(true);
}

void ParamSet::zero_grads() {
  for (auto& [_, t] : entries_)
    if (t.requires_grad()) t.zero_grad();
}

void ParamSet::clear_grads() {
  for (auto& [_, t] : entries_) t.clear_grad();
}

bool ParamSet::all_finite() const {
  return std::all_of(entries_.begin(), entries_.end(),
                     [](const auto& kv) { return kv.second.all_finite(); });
}

bool ParamSet::same_values(const ParamSet& other) const {
  if (entries_.size() != other.entries_.size()) return false;
  for (const auto& [name, t] : entries_) {
    auto it = other.entries_.find(name);
    if (it == other.entries_.end() || it->second.shape() != t.shape()) return false;
    if (std::memcmp(t.values().data(), it->second.values().data(),
                    t.size() * sizeof(double)) != 0)
      return false;
  }
  return true;
}

void clip_gradients(ParamSet& params, double bound) {
  if (!(bound > 0.0)) throw ConfigError("gradient clip bound must be positive");
  for (auto& [_, t] : params) {
    for (double& g : t.grad()) g = std::clamp(g, -bound, bound);
  }
}

double grad_inf_norm(const ParamSet& params) {
  double m = 0.0;
  for (const auto& [_, t] : params)
    for (double g : t.grad()) m = std::max(m, std::abs(g));
  return m;
}

double max_abs_difference(const ParamSet& a, const ParamSet& b,
                          const std::vector<std::string>& names) {
  double m = 0.0;
  for (const auto& n : names) {
    const auto& ta = a.at(n);
    const auto& tb = b.at(n);
    if (ta.shape() != tb.shape()) throw StructuralError("shape mismatch for '" + n + "'");
    for (std::size_t i = 0; i < ta.size(); ++i) m = std::max(m, std::abs(ta[i] - tb[i]));
  }
  return m;
}

std::map<std::string, std::vector<double>> finite_difference_gradient(
    const std::function<double(const ParamSet&)>& f, const ParamSet& params, double h,
    const std::vector<std::string>& names) {
  if (!(h > 0.0)) throw ConfigError("finite difference step must be positive");
  ParamSet work = params.snapshot();
  const auto selected = names.empty() ? work.names() : names;
  std::map<std::string, std::vector<double>> out;
  for (const auto& name : selected) {
    auto& t = work.at(name);
    std::vector<double> d(t.size());
    for (std::size_t i = 0; i < t.size(); ++i) {
      const double x = t[i];
      t[i] = x + h;
      const double up = f(work);
      t[i] = x - h;
      const double down = f(work);
      t[i] = x;
      if (!std::isfinite(up) || !std::isfinite(down)) {
        throw NumericalError("finite difference: non-finite objective at '" + name + "'[" +
                             std::to_string(i) + "]");
      }
      d[i] = (up - down) / (2.0 * h);
    }
    out.emplace(name, std::move(d));
  }
  return out;
}

}  // namespace icelab
