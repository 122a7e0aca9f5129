#pragma once

#include <cstdint>
#include <vector>

#include "bnadapt/bn.hpp"
#include "bnadapt/data_synth.hpp"
#include "bnadapt/optim.hpp"
#include "bnadapt/tensor.hpp"

namespace bnadapt {

// "toy-unet-v1": encoder conv3x3(Cin->8) / conv3x3(8->16, s2) / conv3x3(16->32, s2),
// decoder upsample + conv3x3(32->16) + skip-add, upsample + conv3x3(16->8) +
// skip-add, head conv1x1(8->K) + channel softmax. BN+ReLU after every 3x3
// conv: 5 BN layers, 80 BN channels total. Skips are additive.
struct NetworkSpec {
  std::size_t hw = 64;
  std::size_t c_in = 1;
  std::size_t classes = 4;
};

inline constexpr const char* kToyUnetSpecId = "toy-unet-v1";

class ToyUNet {
 public:
  ToyUNet(const NetworkSpec& spec, std::uint64_t init_seed);

  // x must be (B, hw, hw, c_in); returns per-pixel class probabilities
  // (B, hw, hw, K). TrainSource/AdaptTarget modes update BN state per their
  // contracts; Eval touches nothing.
  Tensor forward(const Tensor& x, const BNMode& mode);

  const NetworkSpec& spec() const { return spec_; }

  std::vector<Tensor> parameters();     // conv weights/biases + BN gamma/beta
  std::vector<Tensor> bn_parameters();  // gamma/beta only
  std::vector<BatchNorm*> bn_layers();
  std::vector<Conv2d*> conv_layers();

  std::size_t parameter_count();
  std::size_t bn_channel_total() const;  // 80 for the default spec

 private:
  NetworkSpec spec_;
  Rng init_rng_;  // consumed while the layer members construct

 public:
  Conv2d enc1, enc2, enc3, dec1, dec2, head;
  BatchNorm bn1, bn2, bn3, bn4, bn5;
};

// Per-pixel cross-entropy against integer labels, mean over B*H*W pixels.
// probs is (B,H,W,K) from the network head; a 1e-12 floor guards the log.
Tensor cross_entropy_loss(const Tensor& probs, const std::vector<std::uint8_t>& labels);

// Standard source pre-training: seeded shuffle, SGD on cross-entropy in
// TrainSource mode, then freeze_source on every BN layer. Returns the number
// of iterations run (the K of the source snapshot).
std::uint64_t pretrain_source(ToyUNet& model, const Dataset& train, std::size_t epochs,
                              double lr, std::size_t batch_size, std::uint64_t seed,
                              double source_momentum = 0.1);

}  // namespace bnadapt
