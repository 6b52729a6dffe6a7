#pragma once

// Dense f64 tensors with reverse-mode differentiation on an explicit tape.
// Row-major storage, trailing-dimension broadcasting. A Tape, while alive,
// is the thread-local recording target; ops executed without an active tape
// run forward-only.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <vector>

namespace dmamba {

using Shape = std::vector<int>;

std::string shape_str(const Shape& s);
std::size_t shape_numel(const Shape& s);

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until needed; value.size() once allocated
  bool requires_grad = false;
  bool on_graph = false;  // derived from a grad-requiring tensor while recording
  std::int64_t id = -1;
};

std::vector<double>& grad_buf(Node& n);  // zero-allocates on first use

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> data);

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double v);
  static Tensor scalar(double v);
  // Leaf with requires_grad set; grad buffer allocated and zeroed.
  static Tensor param(Shape shape, std::vector<double> data);
  static Tensor uniform(Shape shape, double lo, double hi, std::mt19937_64& rng);

  bool defined() const { return n_ != nullptr; }
  const Shape& shape() const { return n_->shape; }
  int rank() const { return static_cast<int>(n_->shape.size()); }
  int dim(int axis) const;  // negative axis counts from the back
  std::size_t numel() const { return n_->value.size(); }

  // Tensor is a handle onto shared storage: buffer access is const-friendly.
  const std::vector<double>& value() const { return n_->value; }
  std::vector<double>& mutable_value() const { return n_->value; }
  const std::vector<double>& grad() const;
  std::vector<double>& mutable_grad() const { return detail::grad_buf(*n_); }
  bool has_grad() const { return !n_->grad.empty(); }
  bool requires_grad() const { return n_->requires_grad; }
  void zero_grad() const;

  double item() const;  // requires numel() == 1

  detail::Node* node() const { return n_.get(); }
  const std::shared_ptr<detail::Node>& ptr() const { return n_; }

 private:
  std::shared_ptr<detail::Node> n_;
};

// Reverse-mode tape. Records run in creation order (a topological order by
// construction); backward() replays them exactly once in reverse.
class Tape {
 public:
  struct Record {
    std::shared_ptr<detail::Node> out;
    std::vector<std::shared_ptr<detail::Node>> ins;
    std::function<void()> backward;
  };

  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void record(Record r);
  void backward(const Tensor& loss);  // loss must be scalar-shaped
  void clear();
  std::size_t num_ops() const { return records_.size(); }

  static Tape* current();

 private:
  std::vector<Record> records_;
  Tape* prev_ = nullptr;
  std::int64_t next_id_ = 0;
};

// ---- elementwise (trailing-dimension broadcasting) ----
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, double c);
Tensor mul(const Tensor& a, double c);

Tensor neg(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor sqrt(const Tensor& x);
Tensor abs(const Tensor& x);  // subgradient 0 at 0
Tensor tanh(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor silu(const Tensor& x);
Tensor gelu(const Tensor& x);
Tensor softplus(const Tensor& x);
// x where |x| >= m, else sign(x)*m (sign(0) = +1); derivative 0 in the clamped zone
Tensor clamp_away_from_zero(const Tensor& x, double m);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator+(const Tensor& a, double c) { return add(a, c); }
inline Tensor operator-(const Tensor& a, double c) { return add(a, -c); }
inline Tensor operator*(const Tensor& a, double c) { return mul(a, c); }
inline Tensor operator-(const Tensor& a) { return neg(a); }

// ---- shape ----
Tensor reshape(const Tensor& x, Shape shape);
Tensor transpose(const Tensor& x, int a, int b);
Tensor flip(const Tensor& x, int axis);
Tensor slice(const Tensor& x, int axis, int start, int len);
Tensor concat(const std::vector<Tensor>& xs, int axis);

// ---- reductions ----
Tensor sum(const Tensor& x);   // scalar, flat row-major accumulation order
Tensor mean(const Tensor& x);  // sum(x) / numel, same accumulation order
Tensor sum_axis(const Tensor& x, int axis);   // keeps the axis with size 1
Tensor mean_axis(const Tensor& x, int axis);  // keeps the axis with size 1

// ---- linear algebra ----
// (..., m, k) x (..., k, n) -> (..., m, n); leading dims broadcast.
Tensor matmul(const Tensor& a, const Tensor& b);

// ---- neural-net building blocks ----
// Normalizes over the last axis; gamma/beta have that axis' length.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps);
// Train-time Bernoulli mask with inverted scaling; identity in eval mode.
Tensor dropout(const Tensor& x, double rate, std::mt19937_64& rng, bool train);
// x: (B, T, C), w: (C, K), b: (C). Depthwise over axis 1 with K-1 left zeros.
Tensor causal_conv1d(const Tensor& x, const Tensor& w, const Tensor& b);
// Trend recurrence along axis 1 of (B, L, D):
//   trend[0] = x[0]; trend[t] = alpha*x[t] + (1-alpha)*trend[t-1]
Tensor ema_trend(const Tensor& x, double alpha);

// Selective state-space scan along axis 1 (tokens).
//   u, delta: (B, T, C);  A: (C, S);  Bsel, Csel: (B, T, S);  Dskip: (C)
// Per token: Abar = exp(delta*A), Bbar*u = phi(delta*A)*delta*Bsel*u with
// phi(x) = (e^x - 1)/x;  h_t = Abar_t h_{t-1} + Bbar_t u_t;
// y_t = <Csel_t, h_t> + Dskip * u_t.
Tensor selective_scan(const Tensor& u, const Tensor& delta, const Tensor& A,
                      const Tensor& Bsel, const Tensor& Csel,
                      const Tensor& Dskip);

// (e^x - 1)/x with a Taylor branch near 0, and its derivative.
double zoh_phi(double x);
double zoh_phi_prime(double x);

}  // namespace dmamba
