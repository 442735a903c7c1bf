#include "stdn/params.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace stdn {

ag::Var ParameterStore::add(const std::string& name, Tensor init, bool decay) {
  if (index_.count(name)) throw std::invalid_argument("duplicate parameter name: " + name);
  index_[name] = entries_.size();
  entries_.push_back({name, ag::parameter(std::move(init)), decay});
  return entries_.back().var;
}

ag::Var ParameterStore::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("unknown parameter: " + name);
  return entries_[it->second].var;
}

std::size_t ParameterStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.var.value().size();
  return n;
}

void ParameterStore::zero_grad() {
  for (auto& e : entries_) e.var.zero_grad();
}

Tensor he_normal(const Shape& shape, int fan_in, Rng& rng) {
  Tensor t(shape, 0.0);
  const double stddev = std::sqrt(2.0 / std::max(fan_in, 1));
  for (double& v : t.values()) v = normal(rng, 0.0, stddev);
  return t;
}

Tensor uniform_fan_in(const Shape& shape, int fan_in, Rng& rng) {
  Tensor t(shape, 0.0);
  const double bound = 1.0 / std::sqrt(static_cast<double>(std::max(fan_in, 1)));
  for (double& v : t.values()) v = uniform(rng, -bound, bound);
  return t;
}

Projection add_projection(ParameterStore& store, const std::string& prefix, int in, int out, Rng& rng) {
  Projection p;
  p.weight = store.add(prefix + ".weight", uniform_fan_in({in, out}, in, rng), true);
  p.bias = store.add(prefix + ".bias", Tensor({out}, 0.0), false);
  return p;
}

Projection add_conv(ParameterStore& store, const std::string& prefix, int k, int in, int out, Rng& rng) {
  Projection p;
  p.weight = store.add(prefix + ".weight", he_normal({k, k, in, out}, k * k * in, rng), true);
  p.bias = store.add(prefix + ".bias", Tensor({out}, 0.0), false);
  return p;
}

}  // namespace stdn
