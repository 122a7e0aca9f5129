#pragma once

#include <vector>

#include "bnadapt/tensor.hpp"

namespace bnadapt {

// Plain stochastic gradient descent. Deterministic: parameters update in
// registration order.
class Sgd {
 public:
  Sgd(std::vector<Tensor> params, double lr);

  void zero_grad();
  void step();

  double lr() const { return lr_; }
  const std::vector<Tensor>& params() const { return params_; }

 private:
  std::vector<Tensor> params_;
  double lr_;
};

}  // namespace bnadapt
