#include "bnadapt/tensor.hpp"

#include <cmath>
#include <utility>

#include "bnadapt/common.hpp"

namespace bnadapt {

std::size_t numel(const Shape& s) {
  std::size_t n = 1;
  for (auto e : s) n *= e;
  return n;
}

std::string shape_str(const Shape& s) {
  std::string out = "(";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  out += ")";
  return out;
}

// --- Tensor -----------------------------------------------------------------

Tensor Tensor::zeros(Shape shape) {
  auto n = std::make_shared<detail::TensorNode>();
  n->value.assign(numel(shape), 0.0);
  n->shape = std::move(shape);
  return Tensor(std::move(n));
}

Tensor Tensor::full(Shape shape, Real v) {
  auto n = std::make_shared<detail::TensorNode>();
  n->value.assign(numel(shape), v);
  n->shape = std::move(shape);
  return Tensor(std::move(n));
}

Tensor Tensor::scalar(Real v) { return full({}, v); }

Tensor Tensor::from_data(Shape shape, std::vector<Real> data) {
  if (numel(shape) != data.size()) {
    fail("Tensor::from_data: shape ", shape_str(shape), " wants ", numel(shape),
         " elements, got ", data.size());
  }
  auto n = std::make_shared<detail::TensorNode>();
  n->shape = std::move(shape);
  n->value = std::move(data);
  return Tensor(std::move(n));
}

const Shape& Tensor::shape() const {
  if (!node_) fail("Tensor: undefined handle");
  return node_->shape;
}

std::size_t Tensor::size() const {
  if (!node_) fail("Tensor: undefined handle");
  return node_->value.size();
}

std::vector<Real>& Tensor::values() {
  if (!node_) fail("Tensor: undefined handle");
  return node_->value;
}

const std::vector<Real>& Tensor::values() const {
  if (!node_) fail("Tensor: undefined handle");
  return node_->value;
}

Real Tensor::item() const {
  if (size() != 1) fail("Tensor::item: tensor of shape ", shape_str(shape()), " is not scalar");
  return node_->value[0];
}

const std::vector<Real>& Tensor::grad() const {
  if (!node_) fail("Tensor: undefined handle");
  node_->ensure_grad();
  return node_->grad;
}

void Tensor::zero_grad() {
  if (!node_) fail("Tensor: undefined handle");
  node_->grad.assign(node_->value.size(), 0.0);
}

// --- Tape -------------------------------------------------------------------

namespace {
thread_local Tape* g_active_tape = nullptr;
}

Tape::Tape() {
  prev_ = g_active_tape;
  g_active_tape = this;
}

Tape::~Tape() { g_active_tape = prev_; }

Tape* Tape::active() { return g_active_tape; }

void Tape::record(const char* kind, std::shared_ptr<detail::TensorNode> out,
                  std::function<void()> backward_fn) {
  ops_.push_back(OpRecord{kind, std::move(out), std::move(backward_fn)});
}

void Tape::backward(const Tensor& loss) {
  if (!loss.defined() || loss.size() != 1) {
    fail("backward: loss must be scalar, got shape ",
         loss.defined() ? shape_str(loss.shape()) : "<undefined>");
  }
  if (ops_.empty()) fail("backward: graph is empty");
  if (backward_done_) fail("backward: tape already consumed");
  backward_done_ = true;

  // tensors produced by this tape start clean; leaves keep accumulating
  for (auto& op : ops_) {
    op.out->grad.assign(op.out->value.size(), 0.0);
  }
  loss.node()->ensure_grad();
  loss.node()->grad[0] += 1.0;

  for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) {
    it->fn();
  }
}

NoGradGuard::NoGradGuard() : saved_(g_active_tape) { g_active_tape = nullptr; }
NoGradGuard::~NoGradGuard() { g_active_tape = saved_; }

// --- op helpers --------------------------------------------------------------

namespace {

using Node = detail::TensorNode;
using NodePtr = std::shared_ptr<Node>;

enum class Bcast { Same, Channel, Scalar };

Bcast binary_mode(const char* op, const Shape& a, const Shape& b) {
  if (a == b) return Bcast::Same;
  if (numel(b) == 1 && b.size() <= 1) return Bcast::Scalar;
  if (b.size() == 1 && a.size() >= 2 && b[0] == a.back()) return Bcast::Channel;
  fail(op, ": shape mismatch ", shape_str(a), " vs ", shape_str(b));
}

Tensor make_out(Shape shape) { return Tensor::zeros(std::move(shape)); }

void maybe_record(const char* kind, const Tensor& out, std::function<void()> fn) {
  if (Tape* t = Tape::active()) t->record(kind, out.node(), std::move(fn));
}

// Accumulate g into db honouring the broadcast mode used in the forward pass.
void scatter_rhs(Bcast mode, std::size_t channels, std::vector<Real>& db, std::size_t i,
                 Real g) {
  switch (mode) {
    case Bcast::Same: db[i] += g; break;
    case Bcast::Channel: db[i % channels] += g; break;
    case Bcast::Scalar: db[0] += g; break;
  }
}

inline Real rhs_at(Bcast mode, std::size_t channels, const std::vector<Real>& bv,
                   std::size_t i) {
  switch (mode) {
    case Bcast::Same: return bv[i];
    case Bcast::Channel: return bv[i % channels];
    default: return bv[0];
  }
}

void check_rank4(const char* op, const Tensor& x) {
  if (x.rank() != 4) fail(op, ": expected rank-4 (B,H,W,C) input, got ", shape_str(x.shape()));
}

}  // namespace

// --- binary ops --------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  const Bcast mode = binary_mode("add", a.shape(), b.shape());
  const std::size_t c = a.shape().empty() ? 1 : a.shape().back();
  Tensor out = make_out(a.shape());
  const auto& av = a.values();
  const auto& bv = b.values();
  auto& ov = out.values();
  for (std::size_t i = 0; i < av.size(); ++i) ov[i] = av[i] + rhs_at(mode, c, bv, i);

  NodePtr an = a.node(), bn = b.node(), on = out.node();
  maybe_record("add", out, [an, bn, on, mode, c] {
    an->ensure_grad();
    bn->ensure_grad();
    const auto& g = on->grad;
    for (std::size_t i = 0; i < g.size(); ++i) {
      an->grad[i] += g[i];
      scatter_rhs(mode, c, bn->grad, i, g[i]);
    }
  });
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  const Bcast mode = binary_mode("sub", a.shape(), b.shape());
  const std::size_t c = a.shape().empty() ? 1 : a.shape().back();
  Tensor out = make_out(a.shape());
  const auto& av = a.values();
  const auto& bv = b.values();
  auto& ov = out.values();
  for (std::size_t i = 0; i < av.size(); ++i) ov[i] = av[i] - rhs_at(mode, c, bv, i);

  NodePtr an = a.node(), bn = b.node(), on = out.node();
  maybe_record("sub", out, [an, bn, on, mode, c] {
    an->ensure_grad();
    bn->ensure_grad();
    const auto& g = on->grad;
    for (std::size_t i = 0; i < g.size(); ++i) {
      an->grad[i] += g[i];
      scatter_rhs(mode, c, bn->grad, i, -g[i]);
    }
  });
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  const Bcast mode = binary_mode("mul", a.shape(), b.shape());
  const std::size_t c = a.shape().empty() ? 1 : a.shape().back();
  Tensor out = make_out(a.shape());
  const auto& av = a.values();
  const auto& bv = b.values();
  auto& ov = out.values();
  for (std::size_t i = 0; i < av.size(); ++i) ov[i] = av[i] * rhs_at(mode, c, bv, i);

  NodePtr an = a.node(), bn = b.node(), on = out.node();
  maybe_record("mul", out, [an, bn, on, mode, c] {
    an->ensure_grad();
    bn->ensure_grad();
    const auto& g = on->grad;
    const auto& av2 = an->value;
    const auto& bv2 = bn->value;
    for (std::size_t i = 0; i < g.size(); ++i) {
      an->grad[i] += g[i] * rhs_at(mode, c, bv2, i);
      scatter_rhs(mode, c, bn->grad, i, g[i] * av2[i]);
    }
  });
  return out;
}

Tensor div(const Tensor& a, const Tensor& b) {
  const Bcast mode = binary_mode("div", a.shape(), b.shape());
  const std::size_t c = a.shape().empty() ? 1 : a.shape().back();
  Tensor out = make_out(a.shape());
  const auto& av = a.values();
  const auto& bv = b.values();
  auto& ov = out.values();
  for (std::size_t i = 0; i < av.size(); ++i) ov[i] = av[i] / rhs_at(mode, c, bv, i);

  NodePtr an = a.node(), bn = b.node(), on = out.node();
  maybe_record("div", out, [an, bn, on, mode, c] {
    an->ensure_grad();
    bn->ensure_grad();
    const auto& g = on->grad;
    const auto& av2 = an->value;
    const auto& bv2 = bn->value;
    for (std::size_t i = 0; i < g.size(); ++i) {
      const Real d = rhs_at(mode, c, bv2, i);
      an->grad[i] += g[i] / d;
      scatter_rhs(mode, c, bn->grad, i, -g[i] * av2[i] / (d * d));
    }
  });
  return out;
}

Tensor scale(const Tensor& a, Real cfac) {
  Tensor out = make_out(a.shape());
  const auto& av = a.values();
  auto& ov = out.values();
  for (std::size_t i = 0; i < av.size(); ++i) ov[i] = cfac * av[i];

  NodePtr an = a.node(), on = out.node();
  maybe_record("scale", out, [an, on, cfac] {
    an->ensure_grad();
    const auto& g = on->grad;
    for (std::size_t i = 0; i < g.size(); ++i) an->grad[i] += cfac * g[i];
  });
  return out;
}

// --- unary ops ---------------------------------------------------------------

Tensor sqrt(const Tensor& a) {
  Tensor out = make_out(a.shape());
  const auto& av = a.values();
  auto& ov = out.values();
  for (std::size_t i = 0; i < av.size(); ++i) {
    if (av[i] < 0.0) fail("sqrt: negative input ", av[i], " at flat index ", i);
    ov[i] = std::sqrt(av[i]);
  }
  NodePtr an = a.node(), on = out.node();
  maybe_record("sqrt", out, [an, on] {
    an->ensure_grad();
    const auto& g = on->grad;
    const auto& y = on->value;
    for (std::size_t i = 0; i < g.size(); ++i) an->grad[i] += 0.5 * g[i] / y[i];
  });
  return out;
}

Tensor log(const Tensor& a) {
  Tensor out = make_out(a.shape());
  const auto& av = a.values();
  auto& ov = out.values();
  for (std::size_t i = 0; i < av.size(); ++i) {
    if (av[i] <= 0.0) fail("log: non-positive input ", av[i], " at flat index ", i);
    ov[i] = std::log(av[i]);
  }
  NodePtr an = a.node(), on = out.node();
  maybe_record("log", out, [an, on] {
    an->ensure_grad();
    const auto& g = on->grad;
    const auto& x = an->value;
    for (std::size_t i = 0; i < g.size(); ++i) an->grad[i] += g[i] / x[i];
  });
  return out;
}

Tensor exp(const Tensor& a) {
  Tensor out = make_out(a.shape());
  const auto& av = a.values();
  auto& ov = out.values();
  for (std::size_t i = 0; i < av.size(); ++i) ov[i] = std::exp(av[i]);
  NodePtr an = a.node(), on = out.node();
  maybe_record("exp", out, [an, on] {
    an->ensure_grad();
    const auto& g = on->grad;
    const auto& y = on->value;
    for (std::size_t i = 0; i < g.size(); ++i) an->grad[i] += g[i] * y[i];
  });
  return out;
}

Tensor abs(const Tensor& a) {
  Tensor out = make_out(a.shape());
  const auto& av = a.values();
  auto& ov = out.values();
  for (std::size_t i = 0; i < av.size(); ++i) ov[i] = std::fabs(av[i]);
  NodePtr an = a.node(), on = out.node();
  maybe_record("abs", out, [an, on] {
    an->ensure_grad();
    const auto& g = on->grad;
    const auto& x = an->value;
    // subgradient 0 at the kink
    for (std::size_t i = 0; i < g.size(); ++i) {
      an->grad[i] += g[i] * (x[i] > 0.0 ? 1.0 : (x[i] < 0.0 ? -1.0 : 0.0));
    }
  });
  return out;
}

Tensor relu(const Tensor& a) {
  Tensor out = make_out(a.shape());
  const auto& av = a.values();
  auto& ov = out.values();
  for (std::size_t i = 0; i < av.size(); ++i) ov[i] = av[i] > 0.0 ? av[i] : 0.0;
  NodePtr an = a.node(), on = out.node();
  maybe_record("relu", out, [an, on] {
    an->ensure_grad();
    const auto& g = on->grad;
    const auto& x = an->value;
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (x[i] > 0.0) an->grad[i] += g[i];
    }
  });
  return out;
}

// --- reductions ----------------------------------------------------------------

Tensor sum_all(const Tensor& a) {
  Tensor out = Tensor::scalar(0.0);
  Real acc = 0.0;
  for (Real v : a.values()) acc += v;
  out.values()[0] = acc;
  NodePtr an = a.node(), on = out.node();
  maybe_record("sum_all", out, [an, on] {
    an->ensure_grad();
    const Real g = on->grad[0];
    for (auto& gi : an->grad) gi += g;
  });
  return out;
}

Tensor mean_all(const Tensor& a) {
  if (a.size() == 0) fail("mean_all: empty tensor");
  const Real inv = 1.0 / static_cast<Real>(a.size());
  Tensor out = Tensor::scalar(0.0);
  Real acc = 0.0;
  for (Real v : a.values()) acc += v;
  out.values()[0] = acc * inv;
  NodePtr an = a.node(), on = out.node();
  maybe_record("mean_all", out, [an, on, inv] {
    an->ensure_grad();
    const Real g = on->grad[0] * inv;
    for (auto& gi : an->grad) gi += g;
  });
  return out;
}

Tensor channel_mean(const Tensor& a) {
  if (a.rank() < 2) fail("channel_mean: expected rank >= 2, got ", shape_str(a.shape()));
  const std::size_t c = a.shape().back();
  const std::size_t n = a.size() / c;
  if (n == 0) fail("channel_mean: empty spatial extent in ", shape_str(a.shape()));
  Tensor out = make_out({c});
  const auto& av = a.values();
  auto& ov = out.values();
  for (std::size_t i = 0; i < av.size(); ++i) ov[i % c] += av[i];
  const Real inv = 1.0 / static_cast<Real>(n);
  for (auto& v : ov) v *= inv;

  NodePtr an = a.node(), on = out.node();
  maybe_record("channel_mean", out, [an, on, c, inv] {
    an->ensure_grad();
    const auto& g = on->grad;
    for (std::size_t i = 0; i < an->grad.size(); ++i) an->grad[i] += g[i % c] * inv;
  });
  return out;
}

Tensor channel_var(const Tensor& a) {
  if (a.rank() < 2) fail("channel_var: expected rank >= 2, got ", shape_str(a.shape()));
  const std::size_t c = a.shape().back();
  const std::size_t n = a.size() / c;
  if (n == 0) fail("channel_var: empty spatial extent in ", shape_str(a.shape()));
  const Real inv = 1.0 / static_cast<Real>(n);

  const auto& av = a.values();
  std::vector<Real> mean(c, 0.0);
  for (std::size_t i = 0; i < av.size(); ++i) mean[i % c] += av[i];
  for (auto& m : mean) m *= inv;

  Tensor out = make_out({c});
  auto& ov = out.values();
  for (std::size_t i = 0; i < av.size(); ++i) {
    const Real d = av[i] - mean[i % c];
    ov[i % c] += d * d;
  }
  for (auto& v : ov) v *= inv;

  NodePtr an = a.node(), on = out.node();
  maybe_record("channel_var", out, [an, on, c, inv, mean = std::move(mean)] {
    an->ensure_grad();
    const auto& g = on->grad;
    const auto& x = an->value;
    for (std::size_t i = 0; i < an->grad.size(); ++i) {
      const std::size_t ch = i % c;
      an->grad[i] += g[ch] * 2.0 * (x[i] - mean[ch]) * inv;
    }
  });
  return out;
}

// --- convolution ----------------------------------------------------------------

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride) {
  check_rank4("conv2d", x);
  if (w.rank() != 4) fail("conv2d: weights must be (kh,kw,Cin,Cout), got ", shape_str(w.shape()));
  if (b.rank() != 1) fail("conv2d: bias must be rank 1, got ", shape_str(b.shape()));
  const std::size_t B = x.shape()[0], H = x.shape()[1], W = x.shape()[2], Ci = x.shape()[3];
  const std::size_t Kh = w.shape()[0], Kw = w.shape()[1];
  if (Kh % 2 == 0 || Kw % 2 == 0) fail("conv2d: kernel must be odd-sized, got ", shape_str(w.shape()));
  if (w.shape()[2] != Ci) {
    fail("conv2d: channel mismatch, input has ", Ci, " channels but weights expect ",
         w.shape()[2]);
  }
  const std::size_t Co = w.shape()[3];
  if (b.shape()[0] != Co) fail("conv2d: bias length ", b.shape()[0], " != Cout ", Co);
  if (stride != 1 && stride != 2) fail("conv2d: stride must be 1 or 2, got ", stride);

  const std::size_t ph = Kh / 2, pw = Kw / 2;
  const std::size_t Ho = (H + 2 * ph - Kh) / stride + 1;
  const std::size_t Wo = (W + 2 * pw - Kw) / stride + 1;

  Tensor out = make_out({B, Ho, Wo, Co});
  const Real* xv = x.values().data();
  const Real* wv = w.values().data();
  const Real* bv = b.values().data();
  Real* ov = out.values().data();

  for (std::size_t bi = 0; bi < B; ++bi) {
    for (std::size_t ho = 0; ho < Ho; ++ho) {
      for (std::size_t wo = 0; wo < Wo; ++wo) {
        Real* op = ov + ((bi * Ho + ho) * Wo + wo) * Co;
        for (std::size_t co = 0; co < Co; ++co) op[co] = bv[co];
        for (std::size_t kh = 0; kh < Kh; ++kh) {
          const std::ptrdiff_t h = static_cast<std::ptrdiff_t>(ho * stride + kh) -
                                   static_cast<std::ptrdiff_t>(ph);
          if (h < 0 || h >= static_cast<std::ptrdiff_t>(H)) continue;
          for (std::size_t kw = 0; kw < Kw; ++kw) {
            const std::ptrdiff_t ww = static_cast<std::ptrdiff_t>(wo * stride + kw) -
                                      static_cast<std::ptrdiff_t>(pw);
            if (ww < 0 || ww >= static_cast<std::ptrdiff_t>(W)) continue;
            const Real* xp = xv + ((bi * H + h) * W + ww) * Ci;
            const Real* wp = wv + (kh * Kw + kw) * Ci * Co;
            for (std::size_t ci = 0; ci < Ci; ++ci) {
              const Real xvv = xp[ci];
              const Real* wr = wp + ci * Co;
              for (std::size_t co = 0; co < Co; ++co) op[co] += xvv * wr[co];
            }
          }
        }
      }
    }
  }

  NodePtr xn = x.node(), wn = w.node(), bn = b.node(), on = out.node();
  maybe_record("conv2d", out, [xn, wn, bn, on, B, H, W, Ci, Kh, Kw, Co, Ho, Wo, ph, pw,
                               stride] {
    xn->ensure_grad();
    wn->ensure_grad();
    bn->ensure_grad();
    const Real* g = on->grad.data();
    const Real* xv2 = xn->value.data();
    const Real* wv2 = wn->value.data();
    Real* dx = xn->grad.data();
    Real* dw = wn->grad.data();
    Real* db = bn->grad.data();

    for (std::size_t bi = 0; bi < B; ++bi) {
      for (std::size_t ho = 0; ho < Ho; ++ho) {
        for (std::size_t wo = 0; wo < Wo; ++wo) {
          const Real* gp = g + ((bi * Ho + ho) * Wo + wo) * Co;
          for (std::size_t co = 0; co < Co; ++co) db[co] += gp[co];
          for (std::size_t kh = 0; kh < Kh; ++kh) {
            const std::ptrdiff_t h = static_cast<std::ptrdiff_t>(ho * stride + kh) -
                                     static_cast<std::ptrdiff_t>(ph);
            if (h < 0 || h >= static_cast<std::ptrdiff_t>(H)) continue;
            for (std::size_t kw = 0; kw < Kw; ++kw) {
              const std::ptrdiff_t ww = static_cast<std::ptrdiff_t>(wo * stride + kw) -
                                        static_cast<std::ptrdiff_t>(pw);
              if (ww < 0 || ww >= static_cast<std::ptrdiff_t>(W)) continue;
              const std::size_t xoff = ((bi * H + h) * W + ww) * Ci;
              const std::size_t woff = (kh * Kw + kw) * Ci * Co;
              for (std::size_t ci = 0; ci < Ci; ++ci) {
                const Real xvv = xv2[xoff + ci];
                const Real* wr = wv2 + woff + ci * Co;
                Real* dwr = dw + woff + ci * Co;
                Real acc = 0.0;
                for (std::size_t co = 0; co < Co; ++co) {
                  const Real gc = gp[co];
                  acc += gc * wr[co];
                  dwr[co] += gc * xvv;
                }
                dx[xoff + ci] += acc;
              }
            }
          }
        }
      }
    }
  });
  return out;
}

Tensor upsample2x(const Tensor& x) {
  check_rank4("upsample2x", x);
  const std::size_t B = x.shape()[0], H = x.shape()[1], W = x.shape()[2], C = x.shape()[3];
  Tensor out = make_out({B, 2 * H, 2 * W, C});
  const Real* xv = x.values().data();
  Real* ov = out.values().data();
  const std::size_t Wo = 2 * W;
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t h = 0; h < H; ++h) {
      for (std::size_t w = 0; w < W; ++w) {
        const Real* xp = xv + ((b * H + h) * W + w) * C;
        for (std::size_t dy = 0; dy < 2; ++dy) {
          for (std::size_t dx = 0; dx < 2; ++dx) {
            Real* op = ov + ((b * 2 * H + 2 * h + dy) * Wo + 2 * w + dx) * C;
            for (std::size_t c = 0; c < C; ++c) op[c] = xp[c];
          }
        }
      }
    }
  }
  NodePtr xn = x.node(), on = out.node();
  maybe_record("upsample2x", out, [xn, on, B, H, W, C] {
    xn->ensure_grad();
    const Real* g = on->grad.data();
    Real* dx = xn->grad.data();
    const std::size_t Wo = 2 * W;
    for (std::size_t b = 0; b < B; ++b) {
      for (std::size_t h = 0; h < H; ++h) {
        for (std::size_t w = 0; w < W; ++w) {
          Real* dp = dx + ((b * H + h) * W + w) * C;
          for (std::size_t dy = 0; dy < 2; ++dy) {
            for (std::size_t dxo = 0; dxo < 2; ++dxo) {
              const Real* gp = g + ((b * 2 * H + 2 * h + dy) * Wo + 2 * w + dxo) * C;
              for (std::size_t c = 0; c < C; ++c) dp[c] += gp[c];
            }
          }
        }
      }
    }
  });
  return out;
}

Tensor softmax_channels(const Tensor& x) {
  if (x.rank() < 1) fail("softmax_channels: expected rank >= 1, got ", shape_str(x.shape()));
  const std::size_t c = x.shape().back();
  if (c == 0) fail("softmax_channels: zero channels in ", shape_str(x.shape()));
  const std::size_t pixels = x.size() / c;
  Tensor out = make_out(x.shape());
  const Real* xv = x.values().data();
  Real* ov = out.values().data();
  for (std::size_t p = 0; p < pixels; ++p) {
    const Real* xp = xv + p * c;
    Real* op = ov + p * c;
    Real m = xp[0];
    for (std::size_t k = 1; k < c; ++k) m = xp[k] > m ? xp[k] : m;
    Real s = 0.0;
    for (std::size_t k = 0; k < c; ++k) {
      op[k] = std::exp(xp[k] - m);
      s += op[k];
    }
    const Real inv = 1.0 / s;
    for (std::size_t k = 0; k < c; ++k) op[k] *= inv;
  }
  NodePtr xn = x.node(), on = out.node();
  maybe_record("softmax_channels", out, [xn, on, c, pixels] {
    xn->ensure_grad();
    const Real* g = on->grad.data();
    const Real* y = on->value.data();
    Real* dx = xn->grad.data();
    for (std::size_t p = 0; p < pixels; ++p) {
      const Real* gp = g + p * c;
      const Real* yp = y + p * c;
      Real dot = 0.0;
      for (std::size_t k = 0; k < c; ++k) dot += gp[k] * yp[k];
      Real* dp = dx + p * c;
      for (std::size_t k = 0; k < c; ++k) dp[k] += yp[k] * (gp[k] - dot);
    }
  });
  return out;
}

// --- finite differences -----------------------------------------------------------

Tensor finite_diff_grad(const std::function<Real(const Tensor&)>& f, const Tensor& x,
                        Real step) {
  if (!(step > 0.0)) fail("finite_diff_grad: step must be positive, got ", step);
  NoGradGuard ng;
  Tensor grad = Tensor::zeros(x.shape());
  std::vector<Real> base = x.values();
  for (std::size_t i = 0; i < base.size(); ++i) {
    std::vector<Real> vp = base, vm = base;
    vp[i] += step;
    vm[i] -= step;
    const Real fp = f(Tensor::from_data(x.shape(), std::move(vp)));
    const Real fm = f(Tensor::from_data(x.shape(), std::move(vm)));
    if (!std::isfinite(fp) || !std::isfinite(fm)) {
      fail("finite_diff_grad: non-finite evaluation at flat index ", i);
    }
    grad.values()[i] = (fp - fm) / (2.0 * step);
  }
  return grad;
}

}  // namespace bnadapt
