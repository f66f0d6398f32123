#pragma once

#include <cmath>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "fdy/autodiff.hpp"
#include "fdy/ops.hpp"
#include "fdy/rng.hpp"

namespace fdy {

/// What a trainable tensor is for; drives the itemized parameter tables.
enum class ParamRole { StaticKernel, BasisKernel, Attention, ConvBias, Norm, Gate, Recurrent, Head };

constexpr const char* role_name(ParamRole r) {
  switch (r) {
    case ParamRole::StaticKernel: return "static";
    case ParamRole::BasisKernel: return "dynamic";
    case ParamRole::Attention: return "attention";
    case ParamRole::ConvBias: return "bias";
    case ParamRole::Norm: return "norm";
    case ParamRole::Gate: return "gate";
    case ParamRole::Recurrent: return "rnn";
    case ParamRole::Head: return "head";
  }
  return "?";
}

template <class Scalar>
struct Parameter {
  std::string name;
  std::vector<Index> dims;  // logical extents, row-major
  ParamRole role;
  Var<Scalar> var;

  Index size() const { return var.value().size(); }
};

struct NormBuffer {
  std::string name;
  std::shared_ptr<BatchNormState> state;
};

/// Owns every trainable tensor and batch-norm buffer of a model, in creation order.
template <class Scalar>
class ParameterStore {
 public:
  Var<Scalar> add(std::string name, std::vector<Index> dims, ParamRole role, Shape4 shape) {
    Index n = 1;
    for (Index d : dims) n *= d;
    if (n != shape.size()) throw ShapeError("parameter " + name + ": dims disagree with storage shape");
    auto var = Var<Scalar>::leaf(Tensor4<Scalar>(shape), true);
    params_.push_back(Parameter<Scalar>{std::move(name), std::move(dims), role, var});
    return var;
  }

  /// Uniform(-bound, bound) initialized parameter.
  Var<Scalar> add_uniform(std::string name, std::vector<Index> dims, ParamRole role, Shape4 shape,
                          double bound, Rng& rng) {
    auto var = add(std::move(name), std::move(dims), role, shape);
    auto& t = var.mutable_value();
    for (Index i = 0; i < t.size(); ++i) t[i] = static_cast<Scalar>(rng.uniform(-bound, bound));
    return var;
  }

  Var<Scalar> add_constant(std::string name, std::vector<Index> dims, ParamRole role, Shape4 shape,
                           Scalar value) {
    auto var = add(std::move(name), std::move(dims), role, shape);
    var.mutable_value().array().setConstant(value);
    return var;
  }

  std::shared_ptr<BatchNormState> add_norm_state(std::string name, Index channels) {
    auto state = std::make_shared<BatchNormState>(channels);
    buffers_.push_back(NormBuffer{std::move(name), state});
    return state;
  }

  std::vector<Parameter<Scalar>>& params() { return params_; }
  const std::vector<Parameter<Scalar>>& params() const { return params_; }
  std::vector<NormBuffer>& buffers() { return buffers_; }
  const std::vector<NormBuffer>& buffers() const { return buffers_; }

  const Parameter<Scalar>* find(const std::string& name) const {
    for (const auto& p : params_)
      if (p.name == name) return &p;
    return nullptr;
  }

  Index count() const {
    Index n = 0;
    for (const auto& p : params_) n += p.size();
    return n;
  }

 private:
  std::vector<Parameter<Scalar>> params_;
  std::vector<NormBuffer> buffers_;
};

/// Fan-in scaled bound giving unit-variance-preserving uniform init.
inline double fan_in_bound(Index fan_in) { return std::sqrt(3.0 / static_cast<double>(fan_in)); }

}  // namespace fdy
