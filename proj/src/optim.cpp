#include "bnadapt/optim.hpp"

#include "bnadapt/common.hpp"

namespace bnadapt {

Sgd::Sgd(std::vector<Tensor> params, double lr) : params_(std::move(params)), lr_(lr) {
  if (!(lr > 0.0)) fail("Sgd: learning rate must be positive, got ", lr);
  for (const auto& p : params_) {
    if (!p.defined()) fail("Sgd: undefined parameter tensor");
  }
}

void Sgd::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

void Sgd::step() {
  for (auto& p : params_) {
    const auto& g = p.grad();
    auto& v = p.values();
    for (std::size_t i = 0; i < v.size(); ++i) v[i] -= lr_ * g[i];
  }
}

}  // namespace bnadapt
