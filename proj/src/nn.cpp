#include "promptrl/nn.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include <Eigen/Dense>

#include "promptrl/errors.hpp"

namespace promptrl::nn {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;
using MapVec = Eigen::Map<Eigen::VectorXd>;
using CMapVec = Eigen::Map<const Eigen::VectorXd>;

void check_span(std::span<const double> params, std::size_t offset, std::size_t count,
                const char* layer) {
  if (offset + count > params.size()) {
    throw ArchitectureError(std::string(layer) + " parameters exceed the parameter vector (" +
                            std::to_string(offset + count) + " > " +
                            std::to_string(params.size()) + ")");
  }
}

// Rows are output positions, columns are (ky, kx, channel) taps.
RowMat im2col(const Tensor3& in, int k) {
  const int pad = k / 2;
  const int n = in.h * in.w;
  RowMat cols = RowMat::Zero(n, static_cast<Eigen::Index>(k) * k * in.c);
  for (int y = 0; y < in.h; ++y) {
    for (int x = 0; x < in.w; ++x) {
      double* row = cols.data() + static_cast<std::size_t>(y * in.w + x) * cols.cols();
      for (int ky = 0; ky < k; ++ky) {
        const int sy = y + ky - pad;
        if (sy < 0 || sy >= in.h) continue;
        for (int kx = 0; kx < k; ++kx) {
          const int sx = x + kx - pad;
          if (sx < 0 || sx >= in.w) continue;
          const double* src = in.data.data() + in.index(sy, sx, 0);
          std::copy(src, src + in.c, row + (ky * k + kx) * in.c);
        }
      }
    }
  }
  return cols;
}

void col2im_add(const RowMat& gcols, int k, Tensor3& gin) {
  const int pad = k / 2;
  for (int y = 0; y < gin.h; ++y) {
    for (int x = 0; x < gin.w; ++x) {
      const double* row = gcols.data() + static_cast<std::size_t>(y * gin.w + x) * gcols.cols();
      for (int ky = 0; ky < k; ++ky) {
        const int sy = y + ky - pad;
        if (sy < 0 || sy >= gin.h) continue;
        for (int kx = 0; kx < k; ++kx) {
          const int sx = x + kx - pad;
          if (sx < 0 || sx >= gin.w) continue;
          double* dst = gin.data.data() + gin.index(sy, sx, 0);
          const double* src = row + (ky * k + kx) * gin.c;
          for (int ch = 0; ch < gin.c; ++ch) dst[ch] += src[ch];
        }
      }
    }
  }
}

void fill_uniform(std::span<double> s, double bound, Rng& rng) {
  for (double& v : s) v = uniform(rng, -bound, bound);
}

}  // namespace

// ---------------------------------------------------------------------------
// Conv2d
// ---------------------------------------------------------------------------

Conv2d::Conv2d(int in_channels, int out_channels, int kernel, std::size_t offset)
    : in_(in_channels), out_(out_channels), k_(kernel), offset_(offset) {
  if (in_ < 1 || out_ < 1 || k_ < 1 || k_ % 2 == 0) {
    throw ArchitectureError("invalid conv shape " + std::to_string(in_) + "->" +
                            std::to_string(out_) + " k=" + std::to_string(k_));
  }
}

std::size_t Conv2d::param_count() const {
  return static_cast<std::size_t>(k_) * k_ * in_ * out_ + out_;
}

Tensor3 Conv2d::forward(std::span<const double> params, const Tensor3& in) const {
  if (in.c != in_) {
    throw ArchitectureError("conv expects " + std::to_string(in_) + " input channels, got " +
                            std::to_string(in.c));
  }
  check_span(params, offset_, param_count(), "conv");
  const Eigen::Index taps = static_cast<Eigen::Index>(k_) * k_ * in_;
  CMapMat weight(params.data() + offset_, taps, out_);
  CMapVec bias(params.data() + offset_ + taps * out_, out_);

  Tensor3 out(in.h, in.w, out_);
  MapMat y(out.data.data(), static_cast<Eigen::Index>(in.positions()), out_);
  if (k_ == 1) {
    CMapMat x(in.data.data(), static_cast<Eigen::Index>(in.positions()), in_);
    y.noalias() = x * weight;
  } else {
    const RowMat cols = im2col(in, k_);
    y.noalias() = cols * weight;
  }
  y.rowwise() += bias.transpose();
  return out;
}

Tensor3 Conv2d::backward(std::span<const double> params, const Tensor3& in,
                         const Tensor3& grad_out, std::span<double> grad,
                         bool want_input_grad) const {
  check_span(params, offset_, param_count(), "conv");
  check_span(grad, offset_, param_count(), "conv grad");
  const Eigen::Index taps = static_cast<Eigen::Index>(k_) * k_ * in_;
  const auto n = static_cast<Eigen::Index>(in.positions());
  CMapMat weight(params.data() + offset_, taps, out_);
  MapMat gweight(grad.data() + offset_, taps, out_);
  MapVec gbias(grad.data() + offset_ + taps * out_, out_);
  CMapMat gy(grad_out.data.data(), n, out_);

  gbias += gy.colwise().sum().transpose();
  Tensor3 gin;
  if (k_ == 1) {
    CMapMat x(in.data.data(), n, in_);
    gweight.noalias() += x.transpose() * gy;
    if (want_input_grad) {
      gin = Tensor3(in.h, in.w, in_);
      MapMat gx(gin.data.data(), n, in_);
      gx.noalias() = gy * weight.transpose();
    }
  } else {
    const RowMat cols = im2col(in, k_);
    gweight.noalias() += cols.transpose() * gy;
    if (want_input_grad) {
      const RowMat gcols = gy * weight.transpose();
      gin = Tensor3(in.h, in.w, in_);
      col2im_add(gcols, k_, gin);
    }
  }
  return gin;
}

void Conv2d::init(std::span<double> params, Rng& rng) const {
  const double bound = 1.0 / std::sqrt(static_cast<double>(k_ * k_ * in_));
  fill_uniform(params.subspan(offset_, param_count()), bound, rng);
}

void Conv2d::zero(std::span<double> params) const {
  auto s = params.subspan(offset_, param_count());
  std::fill(s.begin(), s.end(), 0.0);
}

// ---------------------------------------------------------------------------
// Linear
// ---------------------------------------------------------------------------

Linear::Linear(int in_features, int out_features, std::size_t offset)
    : in_(in_features), out_(out_features), offset_(offset) {
  if (in_ < 1 || out_ < 1) throw ArchitectureError("invalid linear shape");
}

std::size_t Linear::param_count() const { return static_cast<std::size_t>(in_) * out_ + out_; }

std::vector<double> Linear::forward(std::span<const double> params,
                                    std::span<const double> x) const {
  if (static_cast<int>(x.size()) != in_) {
    throw ArchitectureError("linear expects " + std::to_string(in_) + " inputs, got " +
                            std::to_string(x.size()));
  }
  check_span(params, offset_, param_count(), "linear");
  CMapMat weight(params.data() + offset_, in_, out_);
  CMapVec bias(params.data() + offset_ + static_cast<std::size_t>(in_) * out_, out_);
  CMapVec xv(x.data(), in_);
  std::vector<double> y(out_);
  MapVec(y.data(), out_) = weight.transpose() * xv + bias;
  return y;
}

std::vector<double> Linear::backward(std::span<const double> params, std::span<const double> x,
                                     std::span<const double> grad_out,
                                     std::span<double> grad) const {
  check_span(grad, offset_, param_count(), "linear grad");
  CMapMat weight(params.data() + offset_, in_, out_);
  MapMat gweight(grad.data() + offset_, in_, out_);
  MapVec gbias(grad.data() + offset_ + static_cast<std::size_t>(in_) * out_, out_);
  CMapVec xv(x.data(), in_);
  CMapVec gy(grad_out.data(), out_);
  gweight.noalias() += xv * gy.transpose();
  gbias += gy;
  std::vector<double> gx(in_);
  MapVec(gx.data(), in_) = weight * gy;
  return gx;
}

void Linear::init(std::span<double> params, Rng& rng) const {
  fill_uniform(params.subspan(offset_, param_count()), 1.0 / std::sqrt(double(in_)), rng);
}

void Linear::zero(std::span<double> params) const {
  auto s = params.subspan(offset_, param_count());
  std::fill(s.begin(), s.end(), 0.0);
}

// ---------------------------------------------------------------------------
// SelfAttention
// ---------------------------------------------------------------------------

SelfAttention::SelfAttention(int width, std::size_t offset) : d_(width), offset_(offset) {
  if (d_ < 1) throw ArchitectureError("invalid attention width");
}

std::size_t SelfAttention::param_count() const {
  return 4 * static_cast<std::size_t>(d_) * d_ + 4 * static_cast<std::size_t>(d_);
}

Tensor3 SelfAttention::forward(std::span<const double> params, const Tensor3& in,
                               Cache* cache) const {
  if (in.c != d_) {
    throw ArchitectureError("attention expects width " + std::to_string(d_) + ", got " +
                            std::to_string(in.c));
  }
  check_span(params, offset_, param_count(), "attention");
  const auto n = static_cast<Eigen::Index>(in.positions());
  const std::size_t dd = static_cast<std::size_t>(d_) * d_;
  const double* base = params.data() + offset_;
  CMapMat wq(base, d_, d_), wk(base + dd, d_, d_), wv(base + 2 * dd, d_, d_),
      wo(base + 3 * dd, d_, d_);
  CMapVec bq(base + 4 * dd, d_), bk(base + 4 * dd + d_, d_), bv(base + 4 * dd + 2 * d_, d_),
      bo(base + 4 * dd + 3 * d_, d_);

  CMapMat x(in.data.data(), n, d_);
  RowMat q = x * wq;
  q.rowwise() += bq.transpose();
  RowMat k = x * wk;
  k.rowwise() += bk.transpose();
  RowMat v = x * wv;
  v.rowwise() += bv.transpose();

  const double scale = 1.0 / std::sqrt(static_cast<double>(d_));
  RowMat attn = (q * k.transpose()) * scale;
  for (Eigen::Index r = 0; r < n; ++r) {
    const double mx = attn.row(r).maxCoeff();
    attn.row(r) = (attn.row(r).array() - mx).exp();
    attn.row(r) /= attn.row(r).sum();
  }
  RowMat mixed = attn * v;

  Tensor3 out = in;
  MapMat y(out.data.data(), n, d_);
  y.noalias() += mixed * wo;
  y.rowwise() += bo.transpose();

  if (cache) {
    cache->in = in;
    auto store = [](const RowMat& m, std::vector<double>& dst) {
      dst.assign(m.data(), m.data() + m.size());
    };
    store(q, cache->q);
    store(k, cache->k);
    store(v, cache->v);
    store(attn, cache->attn);
    store(mixed, cache->mixed);
  }
  return out;
}

Tensor3 SelfAttention::backward(std::span<const double> params, const Cache& cache,
                                const Tensor3& grad_out, std::span<double> grad) const {
  check_span(grad, offset_, param_count(), "attention grad");
  const auto n = static_cast<Eigen::Index>(cache.in.positions());
  const std::size_t dd = static_cast<std::size_t>(d_) * d_;
  const double* base = params.data() + offset_;
  CMapMat wq(base, d_, d_), wk(base + dd, d_, d_), wv(base + 2 * dd, d_, d_),
      wo(base + 3 * dd, d_, d_);
  double* gbase = grad.data() + offset_;
  MapMat gwq(gbase, d_, d_), gwk(gbase + dd, d_, d_), gwv(gbase + 2 * dd, d_, d_),
      gwo(gbase + 3 * dd, d_, d_);
  MapVec gbq(gbase + 4 * dd, d_), gbk(gbase + 4 * dd + d_, d_), gbv(gbase + 4 * dd + 2 * d_, d_),
      gbo(gbase + 4 * dd + 3 * d_, d_);

  CMapMat x(cache.in.data.data(), n, d_);
  CMapMat q(cache.q.data(), n, d_), k(cache.k.data(), n, d_), v(cache.v.data(), n, d_);
  CMapMat attn(cache.attn.data(), n, n), mixed(cache.mixed.data(), n, d_);
  CMapMat gy(grad_out.data.data(), n, d_);

  gwo.noalias() += mixed.transpose() * gy;
  gbo += gy.colwise().sum().transpose();
  const RowMat gmixed = gy * wo.transpose();
  const RowMat gattn = gmixed * v.transpose();
  const RowMat gv = attn.transpose() * gmixed;

  const double scale = 1.0 / std::sqrt(static_cast<double>(d_));
  RowMat gscore = attn.cwiseProduct(gattn);
  const Eigen::VectorXd rowdot = gscore.rowwise().sum();
  gscore -= (attn.array().colwise() * rowdot.array()).matrix();
  gscore *= scale;

  const RowMat gq = gscore * k;
  const RowMat gk = gscore.transpose() * q;

  gwq.noalias() += x.transpose() * gq;
  gwk.noalias() += x.transpose() * gk;
  gwv.noalias() += x.transpose() * gv;
  gbq += gq.colwise().sum().transpose();
  gbk += gk.colwise().sum().transpose();
  gbv += gv.colwise().sum().transpose();

  Tensor3 gin = grad_out;
  MapMat gx(gin.data.data(), n, d_);
  gx.noalias() += gq * wq.transpose();
  gx.noalias() += gk * wk.transpose();
  gx.noalias() += gv * wv.transpose();
  return gin;
}

void SelfAttention::init(std::span<double> params, Rng& rng) const {
  const std::size_t dd = static_cast<std::size_t>(d_) * d_;
  auto s = params.subspan(offset_, param_count());
  fill_uniform(s.subspan(0, 4 * dd), 1.0 / std::sqrt(double(d_)), rng);
  std::fill(s.begin() + static_cast<std::ptrdiff_t>(4 * dd), s.end(), 0.0);
}

// ---------------------------------------------------------------------------
// Elementwise helpers and Adam
// ---------------------------------------------------------------------------

void tanh_inplace(Tensor3& t) {
  for (double& v : t.data) v = std::tanh(v);
}

void tanh_backward_inplace(const Tensor3& activated, Tensor3& grad) {
  for (std::size_t i = 0; i < grad.data.size(); ++i) {
    const double a = activated.data[i];
    grad.data[i] *= 1.0 - a * a;
  }
}

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

std::vector<double> softmax(std::span<const double> logits) {
  std::vector<double> p(logits.begin(), logits.end());
  if (p.empty()) return p;
  const double mx = *std::max_element(p.begin(), p.end());
  double sum = 0.0;
  for (double& v : p) {
    v = std::exp(v - mx);
    sum += v;
  }
  for (double& v : p) v /= sum;
  return p;
}

double log_softmax_at(std::span<const double> logits, std::size_t index) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (double v : logits) sum += std::exp(v - mx);
  return logits[index] - mx - std::log(sum);
}

void adam_step(std::span<double> params, std::span<const double> grad, AdamState& state,
               const AdamOptions& opt) {
  if (params.size() != grad.size() || state.m.size() != params.size() ||
      state.v.size() != params.size()) {
    throw ArchitectureError("adam: parameter, gradient and moment sizes differ");
  }
  ++state.step;
  const double bc1 = 1.0 - std::pow(opt.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(opt.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    state.m[i] = opt.beta1 * state.m[i] + (1.0 - opt.beta1) * grad[i];
    state.v[i] = opt.beta2 * state.v[i] + (1.0 - opt.beta2) * grad[i] * grad[i];
    const double mhat = state.m[i] / bc1;
    const double vhat = state.v[i] / bc2;
    params[i] -= opt.lr * mhat / (std::sqrt(vhat) + opt.eps);
  }
}

bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

}  // namespace promptrl::nn
