#pragma once

#include <cstdint>

#include "fdy/rng.hpp"
#include "fdy/tensor.hpp"

namespace fdy::test {

template <class Scalar = double>
Tensor4<Scalar> random_tensor(Shape4 shape, std::uint64_t seed, double scale = 1.0) {
  Rng rng(seed);
  Tensor4<Scalar> t(shape);
  for (Index i = 0; i < t.size(); ++i) t[i] = static_cast<Scalar>(scale * rng.normal());
  return t;
}

}  // namespace fdy::test
