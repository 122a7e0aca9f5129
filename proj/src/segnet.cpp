#include "bnadapt/segnet.hpp"

#include <numeric>

#include "bnadapt/common.hpp"

namespace bnadapt {

namespace {
NetworkSpec check_spec(const NetworkSpec& s) {
  if (s.hw < 8 || s.hw % 4 != 0) {
    fail("toy-unet: input size must be a multiple of 4 and >= 8, got ", s.hw);
  }
  if (s.c_in < 1) fail("toy-unet: c_in must be >= 1");
  if (s.classes < 2) fail("toy-unet: classes must be >= 2");
  return s;
}
}  // namespace

ToyUNet::ToyUNet(const NetworkSpec& spec, std::uint64_t init_seed)
    : spec_(check_spec(spec)),
      init_rng_(Rng::stream(init_seed, "init")),
      enc1(3, 3, spec.c_in, 8, 1, init_rng_),
      enc2(3, 3, 8, 16, 2, init_rng_),
      enc3(3, 3, 16, 32, 2, init_rng_),
      dec1(3, 3, 32, 16, 1, init_rng_),
      dec2(3, 3, 16, 8, 1, init_rng_),
      head(1, 1, 8, spec.classes, 1, init_rng_),
      bn1(8),
      bn2(16),
      bn3(32),
      bn4(16),
      bn5(8) {}

Tensor ToyUNet::forward(const Tensor& x, const BNMode& mode) {
  if (x.rank() != 4 || x.shape()[1] != spec_.hw || x.shape()[2] != spec_.hw ||
      x.shape()[3] != spec_.c_in) {
    fail("toy-unet forward: expected (B,", spec_.hw, ",", spec_.hw, ",", spec_.c_in,
         "), got ", shape_str(x.shape()));
  }
  Tensor e1 = relu(bn1.forward(enc1.forward(x), mode));        // (B, hw,   hw,   8)
  Tensor e2 = relu(bn2.forward(enc2.forward(e1), mode));       // (B, hw/2, hw/2, 16)
  Tensor e3 = relu(bn3.forward(enc3.forward(e2), mode));       // (B, hw/4, hw/4, 32)
  Tensor d1 = relu(bn4.forward(dec1.forward(upsample2x(e3)), mode));
  d1 = add(d1, e2);                                            // skip from encoder level 2
  Tensor d2 = relu(bn5.forward(dec2.forward(upsample2x(d1)), mode));
  d2 = add(d2, e1);                                            // skip from encoder level 1
  return softmax_channels(head.forward(d2));
}

std::vector<Tensor> ToyUNet::parameters() {
  std::vector<Tensor> out;
  for (Conv2d* c : conv_layers()) {
    out.push_back(c->weight);
    out.push_back(c->bias);
  }
  for (BatchNorm* b : bn_layers()) {
    out.push_back(b->stats().gamma);
    out.push_back(b->stats().beta);
  }
  return out;
}

std::vector<Tensor> ToyUNet::bn_parameters() {
  std::vector<Tensor> out;
  for (BatchNorm* b : bn_layers()) {
    out.push_back(b->stats().gamma);
    out.push_back(b->stats().beta);
  }
  return out;
}

std::vector<BatchNorm*> ToyUNet::bn_layers() { return {&bn1, &bn2, &bn3, &bn4, &bn5}; }

std::vector<Conv2d*> ToyUNet::conv_layers() {
  return {&enc1, &enc2, &enc3, &dec1, &dec2, &head};
}

std::size_t ToyUNet::parameter_count() {
  std::size_t n = 0;
  for (const auto& p : parameters()) n += p.size();
  return n;
}

std::size_t ToyUNet::bn_channel_total() const {
  return bn1.channels() + bn2.channels() + bn3.channels() + bn4.channels() + bn5.channels();
}

Tensor cross_entropy_loss(const Tensor& probs, const std::vector<std::uint8_t>& labels) {
  if (probs.rank() != 4) fail("cross_entropy_loss: probs must be (B,H,W,K)");
  const std::size_t k = probs.shape()[3];
  const std::size_t pixels = probs.size() / k;
  if (labels.size() != pixels) {
    fail("cross_entropy_loss: ", pixels, " pixels but ", labels.size(), " labels");
  }
  std::vector<Real> onehot(probs.size(), 0.0);
  for (std::size_t p = 0; p < pixels; ++p) {
    if (labels[p] >= k) fail("cross_entropy_loss: label ", int(labels[p]), " >= K=", k);
    onehot[p * k + labels[p]] = 1.0;
  }
  Tensor oh = Tensor::from_data(probs.shape(), std::move(onehot));
  Tensor guarded = add(probs, Tensor::scalar(1e-12));
  Tensor picked = mul(bnadapt::log(guarded), oh);
  return scale(sum_all(picked), -1.0 / static_cast<Real>(pixels));
}

std::uint64_t pretrain_source(ToyUNet& model, const Dataset& train, std::size_t epochs,
                              double lr, std::size_t batch_size, std::uint64_t seed,
                              double source_momentum) {
  if (train.size() == 0) fail("pretrain_source: empty dataset");
  if (batch_size < 1) fail("pretrain_source: batch size must be >= 1");
  for (BatchNorm* b : model.bn_layers()) {
    if (b->stats().frozen) fail("pretrain_source: model already carries a source snapshot");
  }

  Sgd opt(model.parameters(), lr);
  Rng shuffle_rng = Rng::stream(seed, "shuffle/pretrain");
  const BNMode mode = BNMode::train_source(source_momentum);

  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  std::uint64_t iters = 0;
  for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    for (std::size_t start = 0; start < order.size(); start += batch_size) {
      const std::size_t end = std::min(start + batch_size, order.size());
      std::span<const std::size_t> idx(order.data() + start, end - start);
      Tensor x = train.batch_images(idx);
      const auto labels = train.batch_labels(idx);

      Tape tape;
      Tensor probs = model.forward(x, mode);
      Tensor loss = cross_entropy_loss(probs, labels);
      opt.zero_grad();
      tape.backward(loss);
      opt.step();
      ++iters;
    }
  }

  for (BatchNorm* b : model.bn_layers()) freeze_source(b->stats());
  return iters;
}

}  // namespace bnadapt
