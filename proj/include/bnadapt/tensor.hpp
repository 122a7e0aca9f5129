#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace bnadapt {

// 64-bit reals throughout: the gradient-check tolerance (1e-5 relative) is
// not reliable at 32-bit width.
using Real = double;
using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& s);
std::string shape_str(const Shape& s);

namespace detail {
struct TensorNode {
  Shape shape;
  std::vector<Real> value;
  std::vector<Real> grad;  // empty until first touched; then same length as value
  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
  }
};
}  // namespace detail

// Dense row-major tensor handle. Copying a Tensor copies the handle, not the
// storage; a fresh node is made by the factory functions and by every op.
// Feature maps use axis order (B, H, W, C).
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, Real v);
  static Tensor scalar(Real v);  // shape ()
  static Tensor from_data(Shape shape, std::vector<Real> data);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t size() const;

  std::vector<Real>& values();
  const std::vector<Real>& values() const;
  Real item() const;  // scalar tensors only

  // Gradient slot; reads as zeros until a backward pass touches the tensor.
  const std::vector<Real>& grad() const;
  void zero_grad();

  const std::shared_ptr<detail::TensorNode>& node() const { return node_; }
  explicit Tensor(std::shared_ptr<detail::TensorNode> n) : node_(std::move(n)) {}

 private:
  std::shared_ptr<detail::TensorNode> node_;
};

// Reverse-mode tape. While a tape is active every primitive records itself;
// backward() replays the records in reverse, accumulating gradients
// additively into the operand grad slots. Graphs are built eagerly per
// training step and discarded with the tape.
class Tape {
 public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* active();

  void record(const char* kind, std::shared_ptr<detail::TensorNode> out,
              std::function<void()> backward_fn);

  std::size_t num_ops() const { return ops_.size(); }

  // loss must be scalar and the graph nonempty; callable once per tape.
  // Gradients of tensors created by this tape are reset first, so leaves
  // accumulate across tapes while intermediates never double-count.
  void backward(const Tensor& loss);

 private:
  struct OpRecord {
    const char* kind;
    std::shared_ptr<detail::TensorNode> out;
    std::function<void()> fn;
  };
  std::vector<OpRecord> ops_;
  bool backward_done_ = false;
  Tape* prev_ = nullptr;
};

// Suspends recording while alive; forward kernels still run.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  Tape* saved_;
};

// --- primitive ops ---------------------------------------------------------
//
// Binary ops accept rhs of identical shape, a per-channel vector (rank 1,
// length equal to lhs's last extent), or a scalar. Shape violations throw
// Error naming the op and the offending extents.

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, Real c);

Tensor sqrt(const Tensor& a);  // requires a >= 0 elementwise
Tensor log(const Tensor& a);   // requires a > 0 elementwise
Tensor exp(const Tensor& a);
Tensor abs(const Tensor& a);  // gradient at 0 defined as 0
Tensor relu(const Tensor& a);

// Reductions over all elements.
Tensor sum_all(const Tensor& a);
Tensor mean_all(const Tensor& a);

// Channelwise reductions treat the last axis as channels (rank >= 2).
// channel_var is the population variance (divisor N = numel / C).
Tensor channel_mean(const Tensor& a);
Tensor channel_var(const Tensor& a);

// Spatial 2D convolution over (B,H,W,Cin) with weights (kh,kw,Cin,Cout) and
// bias (Cout); odd kernels only, zero padding (k-1)/2, stride 1 or 2.
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride = 1);

// 2x nearest-neighbour upsampling of (B,H,W,C).
Tensor upsample2x(const Tensor& x);

// Softmax over the last axis, independently per leading index.
Tensor softmax_channels(const Tensor& x);

// Central-difference gradient estimate, (f(x+h e_i) - f(x-h e_i)) / 2h per
// element. Evaluates f forward-only; the test-oracle counterpart of
// Tape::backward.
Tensor finite_diff_grad(const std::function<Real(const Tensor&)>& f, const Tensor& x,
                        Real step);

}  // namespace bnadapt
