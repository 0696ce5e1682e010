#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "icelab/tensor.hpp"

namespace icelab {

// Named parameter arrays of a model. Iteration order is by name.
class ParamSet {
 public:
  using Map = std::map<std::string, ad::Tensor>;

  void add(const std::string& name, ad::Tensor tensor);
  bool contains(const std::string& name) const { return entries_.count(name) != 0; }
  ad::Tensor& at(const std::string& name);
  const ad::Tensor& at(const std::string& name) const;
  std::vector<std::string> names() const;
  std::size_t size() const noexcept { return entries_.size(); }
  std::size_t parameter_count() const;

  Map::iterator begin() { return entries_.begin(); }
  Map::iterator end() { return entries_.end(); }
  Map::const_iterator begin() const { return entries_.begin(); }
  Map::const_iterator end() const { return entries_.end(); }

  std::uint64_t version() const noexcept { return version_; }
  void bump_version() noexcept { ++version_; }

  // Copy of the values without gradients or requires_grad flags.
  ParamSet snapshot() const;
  // Overwrites values from a snapshot with identical names and shapes.
  void restore(const ParamSet& snap);

  void set_trainable(const std::vector<std::string>& names);
  void zero_grads();
  void clear_grads();
  bool all_finite() const;

  // Bit-exact equality of names, shapes and values.
  bool same_values(const ParamSet& other) const;

 private:
  Map entries_;
  std::uint64_t version_ = 0;
};

// Elementwise clamp of every populated gradient into [-bound, bound].
void clip_gradients(ParamSet& params, double bound);

// Largest |g| across populated gradients.
double grad_inf_norm(const ParamSet& params);

// Largest |a - b| over the named entries.
double max_abs_difference(const ParamSet& a, const ParamSet& b,
                          const std::vector<std::string>& names);

// Central differences (f(x + h e) - f(x - h e)) / 2h for every entry of the
// named parameters (all parameters when `names` is empty).
std::map<std::string, std::vector<double>> finite_difference_gradient(
    const std::function<double(const ParamSet&)>& f, const ParamSet& params, double h,
    const std::vector<std::string>& names = {});

}  // namespace icelab
