#pragma once

#include <map>
#include <string>
#include <vector>

#include "stdn/autograd.hpp"
#include "stdn/rng.hpp"

namespace stdn {

/// Named, ordered collection of trainable tensors.
class ParameterStore {
 public:
  struct Entry {
    std::string name;
    ag::Var var;
    bool decay = true;  // weight decay applies
  };

  ag::Var add(const std::string& name, Tensor init, bool decay);
  ag::Var get(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) > 0; }

  const std::vector<Entry>& entries() const { return entries_; }
  std::size_t scalar_count() const;
  void zero_grad();

 private:
  std::vector<Entry> entries_;
  std::map<std::string, std::size_t> index_;
};

/// A linear map weight[in, out] + bias[out].
struct Projection {
  ag::Var weight;
  ag::Var bias;
};

// Initialisers. Conv weights are [kh, kw, cin, cout].
Tensor he_normal(const Shape& shape, int fan_in, Rng& rng);
Tensor uniform_fan_in(const Shape& shape, int fan_in, Rng& rng);

Projection add_projection(ParameterStore& store, const std::string& prefix, int in, int out, Rng& rng);
Projection add_conv(ParameterStore& store, const std::string& prefix, int k, int in, int out, Rng& rng);

}  // namespace stdn
