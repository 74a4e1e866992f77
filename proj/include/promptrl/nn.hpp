#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "promptrl/core_types.hpp"

// Minimal layer kit for the policy, value and recalibration networks.
//
// Every layer is a view onto a slice of one flat parameter vector owned by the
// network, so parameters, gradients and optimizer moments are plain
// std::vector<double> of equal length. Forward passes are pure; backward
// passes accumulate into a caller-provided gradient vector.
namespace promptrl::nn {

// Square "same"-padded convolution with zero padding, stride 1.
// Weight layout: [ky][kx][in][out], followed by bias[out].
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(int in_channels, int out_channels, int kernel, std::size_t offset);

  std::size_t offset() const { return offset_; }
  std::size_t param_count() const;
  int in_channels() const { return in_; }
  int out_channels() const { return out_; }
  int kernel() const { return k_; }

  Tensor3 forward(std::span<const double> params, const Tensor3& in) const;

  // Accumulates dL/dW, dL/db into `grad`. Returns dL/din when `want_input_grad`.
  Tensor3 backward(std::span<const double> params, const Tensor3& in, const Tensor3& grad_out,
                   std::span<double> grad, bool want_input_grad) const;

  // PyTorch-style U(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and bias.
  void init(std::span<double> params, Rng& rng) const;
  void zero(std::span<double> params) const;

 private:
  int in_ = 0;
  int out_ = 0;
  int k_ = 1;
  std::size_t offset_ = 0;
};

// y = W x + b on a vector.
class Linear {
 public:
  Linear() = default;
  Linear(int in_features, int out_features, std::size_t offset);

  std::size_t offset() const { return offset_; }
  std::size_t param_count() const;

  std::vector<double> forward(std::span<const double> params, std::span<const double> x) const;
  std::vector<double> backward(std::span<const double> params, std::span<const double> x,
                               std::span<const double> grad_out, std::span<double> grad) const;
  void init(std::span<double> params, Rng& rng) const;
  void zero(std::span<double> params) const;

 private:
  int in_ = 0;
  int out_ = 0;
  std::size_t offset_ = 0;
};

// Single-head self-attention over the h*w positions with a residual path:
//   Y = X + softmax(Q K^T / sqrt(d)) V Wo + bo,  Q/K/V = X Wq/Wk/Wv + b.
class SelfAttention {
 public:
  struct Cache {
    Tensor3 in;
    std::vector<double> q, k, v, attn, mixed;
  };

  SelfAttention() = default;
  SelfAttention(int width, std::size_t offset);

  std::size_t offset() const { return offset_; }
  std::size_t param_count() const;

  Tensor3 forward(std::span<const double> params, const Tensor3& in, Cache* cache) const;
  Tensor3 backward(std::span<const double> params, const Cache& cache, const Tensor3& grad_out,
                   std::span<double> grad) const;
  void init(std::span<double> params, Rng& rng) const;

 private:
  int d_ = 0;
  std::size_t offset_ = 0;
};

// In-place tanh; backward uses the activated output.
void tanh_inplace(Tensor3& t);
void tanh_backward_inplace(const Tensor3& activated, Tensor3& grad);

double sigmoid(double z);

// Numerically stable softmax.
std::vector<double> softmax(std::span<const double> logits);
double log_softmax_at(std::span<const double> logits, std::size_t index);

// Adam moments for one flat parameter vector.
struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  long long step = 0;

  explicit AdamState(std::size_t n = 0) : m(n, 0.0), v(n, 0.0) {}
  bool operator==(const AdamState&) const = default;
};

struct AdamOptions {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// One descent step: params -= lr * m_hat / (sqrt(v_hat) + eps).
void adam_step(std::span<double> params, std::span<const double> grad, AdamState& state,
               const AdamOptions& opt);

bool all_finite(std::span<const double> v);

}  // namespace promptrl::nn
