#include "mbnc/nn.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "mbnc/dataio.hpp"
#include "mbnc/rng.hpp"

namespace mbnc {

namespace {

void require(bool cond, const char* msg) {
  if (!cond) throw std::invalid_argument(msg);
}

bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

int layer_out_dim(const Layer& layer, int in_dim) {
  return std::visit(
      [&](const auto& l) -> int {
        using T = std::decay_t<decltype(l)>;
        if constexpr (std::is_same_v<T, DenseLayer>) {
          require(l.in == in_dim, "dense layer input does not chain");
          require(l.in >= 1 && l.out >= 1, "dense layer dims must be positive");
          return l.out;
        } else if constexpr (std::is_same_v<T, ReluLayer>) {
          return in_dim;
        } else if constexpr (std::is_same_v<T, FrnLayer>) {
          require(l.width == in_dim, "frn width does not chain");
          require(l.eps > 0.0, "frn eps must be positive");
          return in_dim;
        } else {
          require(l.width == in_dim, "residual width does not chain");
          require(l.hidden >= 1, "residual hidden must be positive");
          return l.width;
        }
      },
      layer);
}

std::size_t layer_param_count(const Layer& layer) {
  return std::visit(
      [](const auto& l) -> std::size_t {
        using T = std::decay_t<decltype(l)>;
        if constexpr (std::is_same_v<T, DenseLayer>) {
          return std::size_t(l.in) * l.out + (l.bias ? l.out : 0);
        } else if constexpr (std::is_same_v<T, ReluLayer>) {
          return 0;
        } else if constexpr (std::is_same_v<T, FrnLayer>) {
          return std::size_t(3) * l.width;
        } else {
          return std::size_t(l.width) * l.hidden + l.hidden  // dense_a
                 + std::size_t(3) * l.hidden                 // frn
                 + std::size_t(l.hidden) * l.width + l.width;  // dense_b
        }
      },
      layer);
}

// Walks a flat parameter (or gradient) vector in layout order.
template <typename T>
class Cursor {
 public:
  Cursor(T* p, std::size_t n) : p_(p), left_(n) {}
  std::span<T> take(std::size_t n) {
    if (n > left_) throw std::invalid_argument("parameter vector too short");
    std::span<T> s{p_, n};
    p_ += n;
    left_ -= n;
    return s;
  }
  std::size_t remaining() const { return left_; }

 private:
  T* p_;
  std::size_t left_;
};

struct DenseParams {
  std::span<const double> w;
  std::span<const double> b;  // empty when bias is off
};

DenseParams take_dense(Cursor<const double>& c, const DenseLayer& l) {
  DenseParams p;
  p.w = c.take(std::size_t(l.in) * l.out);
  if (l.bias) p.b = c.take(l.out);
  return p;
}

struct FrnParams {
  std::span<const double> gamma, beta, tau;
};

FrnParams take_frn(Cursor<const double>& c, const FrnLayer& l) {
  FrnParams p;
  p.gamma = c.take(l.width);
  p.beta = c.take(l.width);
  p.tau = c.take(l.width);
  return p;
}

Matrix dense_forward(const DenseLayer& l, const DenseParams& p, const Matrix& x) {
  Matrix out(x.rows, l.out);
  for (std::size_t n = 0; n < x.rows; ++n) {
    const double* xi = x.data.data() + n * x.cols;
    double* oi = out.data.data() + n * out.cols;
    for (int o = 0; o < l.out; ++o) {
      const double* wr = p.w.data() + std::size_t(o) * l.in;
      double acc = l.bias ? p.b[o] : 0.0;
      for (int i = 0; i < l.in; ++i) acc += wr[i] * xi[i];
      oi[o] = acc;
    }
  }
  return out;
}

// Accumulates dW/db for the batch and returns the input gradient.
Matrix dense_backward(const DenseLayer& l, const DenseParams& p, const Matrix& x,
                      const Matrix& gout, Cursor<double>& gc) {
  auto gw = gc.take(std::size_t(l.in) * l.out);
  std::span<double> gb;
  if (l.bias) gb = gc.take(l.out);
  Matrix gin(x.rows, l.in);
  for (std::size_t n = 0; n < x.rows; ++n) {
    const double* xi = x.data.data() + n * x.cols;
    const double* gi = gout.data.data() + n * gout.cols;
    double* gx = gin.data.data() + n * gin.cols;
    for (int o = 0; o < l.out; ++o) {
      const double g = gi[o];
      const double* wr = p.w.data() + std::size_t(o) * l.in;
      double* gwr = gw.data() + std::size_t(o) * l.in;
      for (int i = 0; i < l.in; ++i) {
        gwr[i] += g * xi[i];
        gx[i] += g * wr[i];
      }
      if (l.bias) gb[o] += g;
    }
  }
  return gin;
}

Matrix frn_forward(const FrnLayer& l, const FrnParams& p, const Matrix& x,
                   FrnCache* cache) {
  const int w = l.width;
  Matrix out(x.rows, w);
  if (cache) {
    cache->inv.assign(x.rows, 0.0);
    cache->y = Matrix(x.rows, w);
  }
  for (std::size_t n = 0; n < x.rows; ++n) {
    const double* xi = x.data.data() + n * x.cols;
    double nu2 = 0.0;
    for (int i = 0; i < w; ++i) nu2 += xi[i] * xi[i];
    nu2 /= w;
    const double inv = 1.0 / std::sqrt(nu2 + l.eps);
    if (cache) cache->inv[n] = inv;
    double* oi = out.data.data() + n * out.cols;
    for (int i = 0; i < w; ++i) {
      const double y = p.gamma[i] * (xi[i] * inv) + p.beta[i];
      if (cache) cache->y(n, i) = y;
      oi[i] = std::max(y, p.tau[i]);
    }
  }
  return out;
}

Matrix frn_backward(const FrnLayer& l, const FrnParams& p, const FrnCache& cache,
                    const Matrix& gout, Cursor<double>& gc) {
  const int w = l.width;
  auto ggamma = gc.take(w);
  auto gbeta = gc.take(w);
  auto gtau = gc.take(w);
  const Matrix& x = cache.in;
  Matrix gin(x.rows, w);
  for (std::size_t n = 0; n < x.rows; ++n) {
    const double inv = cache.inv[n];
    const double* xi = x.data.data() + n * x.cols;
    const double* gi = gout.data.data() + n * gout.cols;
    double* gx = gin.data.data() + n * gin.cols;
    // threshold: pass-through where y > tau, otherwise the gradient lands on tau
    double dot = 0.0;  // sum_k dL/dxhat_k * x_k
    for (int i = 0; i < w; ++i) {
      const double y = cache.y(n, i);
      const double gy = (y > p.tau[i]) ? gi[i] : 0.0;
      if (!(y > p.tau[i])) gtau[i] += gi[i];
      const double xhat = xi[i] * inv;
      ggamma[i] += gy * xhat;
      gbeta[i] += gy;
      const double gxhat = gy * p.gamma[i];
      gx[i] = gxhat;  // direct term, scaled below
      dot += gxhat * xi[i];
    }
    const double coef = inv * inv * inv / w;
    for (int i = 0; i < w; ++i) gx[i] = gx[i] * inv - coef * xi[i] * dot;
  }
  return gin;
}

Matrix relu_forward(const Matrix& x) {
  Matrix out = x;
  for (double& v : out.data) v = std::max(v, 0.0);
  return out;
}

Matrix relu_backward(const Matrix& x, const Matrix& gout) {
  Matrix gin = gout;
  for (std::size_t i = 0; i < x.data.size(); ++i)
    if (!(x.data[i] > 0.0)) gin.data[i] = 0.0;
  return gin;
}

}  // namespace

void ArchSpec::validate() const {
  require(input_dim >= 1, "input_dim must be >= 1");
  require(class_count >= 1, "class_count must be >= 1");
  require(!layers.empty(), "arch needs at least one layer");
  int cur = input_dim;
  for (const Layer& l : layers) cur = layer_out_dim(l, cur);
  require(cur == class_count, "final layer width must equal class_count");
  require(std::holds_alternative<DenseLayer>(layers.back()),
          "final layer must be a dense classifier");
  require(feature_tap >= 0 && feature_tap + 1 < int(layers.size()),
          "feature_tap must lie strictly before the classifier layer");
  require(feature_dim() >= 1, "feature dim must be >= 1");
}

std::size_t ArchSpec::param_count() const {
  std::size_t n = 0;
  for (const Layer& l : layers) n += layer_param_count(l);
  return n;
}

std::vector<int> ArchSpec::layer_widths() const {
  std::vector<int> widths;
  widths.reserve(layers.size());
  int cur = input_dim;
  for (const Layer& l : layers) {
    cur = layer_out_dim(l, cur);
    widths.push_back(cur);
  }
  return widths;
}

int ArchSpec::feature_dim() const { return layer_widths()[feature_tap]; }

ArchSpec make_mlp(int input_dim, int class_count, const std::vector<int>& hidden_widths,
                  bool frn, std::optional<int> feature_tap) {
  ArchSpec arch;
  arch.input_dim = input_dim;
  arch.class_count = class_count;
  int cur = input_dim;
  for (int w : hidden_widths) {
    arch.layers.push_back(DenseLayer{cur, w, true});
    if (frn) arch.layers.push_back(FrnLayer{w, 1e-6});
    arch.layers.push_back(ReluLayer{});
    cur = w;
  }
  arch.layers.push_back(DenseLayer{cur, class_count, true});
  arch.feature_tap =
      feature_tap.value_or(static_cast<int>(arch.layers.size()) - 2);
  arch.validate();
  return arch;
}

ParameterVector init_params(const ArchSpec& arch, std::uint64_t seed) {
  arch.validate();
  Rng rng(seed);
  ParameterVector params;
  params.reserve(arch.param_count());
  auto push_dense = [&](int in, int out, bool bias) {
    const double bound = std::sqrt(6.0 / (in + out));
    for (int i = 0; i < in * out; ++i) params.push_back(rng.uniform(-bound, bound));
    if (bias) params.insert(params.end(), out, 0.0);
  };
  auto push_frn = [&](int width) {
    params.insert(params.end(), width, 1.0);  // gamma
    params.insert(params.end(), width, 0.0);  // beta
    params.insert(params.end(), width, 0.0);  // tau
  };
  for (const Layer& layer : arch.layers) {
    std::visit(
        [&](const auto& l) {
          using T = std::decay_t<decltype(l)>;
          if constexpr (std::is_same_v<T, DenseLayer>) {
            push_dense(l.in, l.out, l.bias);
          } else if constexpr (std::is_same_v<T, FrnLayer>) {
            push_frn(l.width);
          } else if constexpr (std::is_same_v<T, ResidualLayer>) {
            push_dense(l.width, l.hidden, true);
            push_frn(l.hidden);
            push_dense(l.hidden, l.width, true);
          }
        },
        layer);
  }
  return params;
}

ForwardBatch forward(const ArchSpec& arch, const ParameterVector& params,
                     const Matrix& inputs) {
  arch.validate();
  require(params.size() == arch.param_count(), "parameter count mismatch");
  require(inputs.cols == std::size_t(arch.input_dim), "input width mismatch");
  require(all_finite(inputs.data), "non-finite input");

  ForwardBatch out;
  out.cache.reserve(arch.layers.size());
  Cursor<const double> pc(params.data(), params.size());
  Matrix x = inputs;
  for (std::size_t li = 0; li < arch.layers.size(); ++li) {
    const Layer& layer = arch.layers[li];
    std::visit(
        [&](const auto& l) {
          using T = std::decay_t<decltype(l)>;
          if constexpr (std::is_same_v<T, DenseLayer>) {
            DenseParams p = take_dense(pc, l);
            DenseCache c{std::move(x)};
            x = dense_forward(l, p, c.in);
            out.cache.emplace_back(std::move(c));
          } else if constexpr (std::is_same_v<T, ReluLayer>) {
            ReluCache c{std::move(x)};
            x = relu_forward(c.in);
            out.cache.emplace_back(std::move(c));
          } else if constexpr (std::is_same_v<T, FrnLayer>) {
            FrnParams p = take_frn(pc, l);
            FrnCache c;
            c.in = std::move(x);
            x = frn_forward(l, p, c.in, &c);
            out.cache.emplace_back(std::move(c));
          } else {
            const DenseLayer da{l.width, l.hidden, true};
            const DenseLayer db{l.hidden, l.width, true};
            DenseParams pa = take_dense(pc, da);
            FrnParams pf = take_frn(pc, FrnLayer{l.hidden, 1e-6});
            DenseParams pb = take_dense(pc, db);
            ResidualCache c;
            c.in = std::move(x);
            c.dense_a.in = c.in;
            Matrix a = dense_forward(da, pa, c.in);
            c.frn.in = std::move(a);
            Matrix f = frn_forward(FrnLayer{l.hidden, 1e-6}, pf, c.frn.in, &c.frn);
            c.relu.in = std::move(f);
            Matrix rl = relu_forward(c.relu.in);
            Matrix body = dense_forward(db, pb, rl);
            x = c.in;
            for (std::size_t i = 0; i < x.data.size(); ++i) x.data[i] += body.data[i];
            out.cache.emplace_back(std::move(c));
          }
        },
        layer);
    if (int(li) == arch.feature_tap) out.features = x;
  }
  out.logits = std::move(x);
  return out;
}

ParameterVector backward(const ArchSpec& arch, const ParameterVector& params,
                         const ForwardBatch& fwd, const Matrix& grad_logits) {
  arch.validate();
  require(params.size() == arch.param_count(), "parameter count mismatch");
  require(fwd.cache.size() == arch.layers.size(), "forward cache does not match arch");
  require(grad_logits.same_shape(fwd.logits), "grad_logits shape does not match batch");
  const std::size_t batch = grad_logits.rows;
  require(batch >= 1, "empty batch");

  // Per-layer spans located up front so the backward pass can walk in reverse.
  std::vector<std::size_t> offsets(arch.layers.size());
  std::size_t off = 0;
  for (std::size_t i = 0; i < arch.layers.size(); ++i) {
    offsets[i] = off;
    off += layer_param_count(arch.layers[i]);
  }

  ParameterVector grads(params.size(), 0.0);
  Matrix g = grad_logits;
  for (std::size_t ri = arch.layers.size(); ri-- > 0;) {
    const Layer& layer = arch.layers[ri];
    Cursor<const double> pc(params.data() + offsets[ri], layer_param_count(layer));
    Cursor<double> gc(grads.data() + offsets[ri], layer_param_count(layer));
    std::visit(
        [&](const auto& l) {
          using T = std::decay_t<decltype(l)>;
          if constexpr (std::is_same_v<T, DenseLayer>) {
            const auto& c = std::get<DenseCache>(fwd.cache[ri]);
            DenseParams p = take_dense(pc, l);
            g = dense_backward(l, p, c.in, g, gc);
          } else if constexpr (std::is_same_v<T, ReluLayer>) {
            const auto& c = std::get<ReluCache>(fwd.cache[ri]);
            g = relu_backward(c.in, g);
          } else if constexpr (std::is_same_v<T, FrnLayer>) {
            const auto& c = std::get<FrnCache>(fwd.cache[ri]);
            FrnParams p = take_frn(pc, l);
            g = frn_backward(l, p, c, g, gc);
          } else {
            const auto& c = std::get<ResidualCache>(fwd.cache[ri]);
            const DenseLayer da{l.width, l.hidden, true};
            const DenseLayer db{l.hidden, l.width, true};
            const FrnLayer fl{l.hidden, 1e-6};
            DenseParams pa = take_dense(pc, da);
            FrnParams pf = take_frn(pc, fl);
            DenseParams pb = take_dense(pc, db);
            Cursor<double> ga(grads.data() + offsets[ri],
                              layer_param_count(arch.layers[ri]));
            Matrix relu_out = relu_forward(c.relu.in);
            // gradient cursors must follow layout order: dense_a, frn, dense_b
            auto gwa = ga.take(std::size_t(da.in) * da.out);
            auto gba = ga.take(da.out);
            auto ggamma = ga.take(fl.width);
            auto gbeta = ga.take(fl.width);
            auto gtau = ga.take(fl.width);
            auto gwb = ga.take(std::size_t(db.in) * db.out);
            auto gbb = ga.take(db.out);
            (void)gwa; (void)gba; (void)ggamma; (void)gbeta; (void)gtau;
            (void)gwb; (void)gbb;
            // run sub-backwards with scratch cursors over the right slices
            Cursor<double> cb(gwb.data(), gwb.size() + gbb.size());
            Matrix g_relu = dense_backward(db, pb, relu_out, g, cb);
            Matrix g_frn_out = relu_backward(c.relu.in, g_relu);
            Cursor<double> cf(ggamma.data(), ggamma.size() + gbeta.size() + gtau.size());
            Matrix g_a = frn_backward(fl, pf, c.frn, g_frn_out, cf);
            Cursor<double> ca(gwa.data(), gwa.size() + gba.size());
            Matrix g_in = dense_backward(da, pa, c.dense_a.in, g_a, ca);
            for (std::size_t i = 0; i < g.data.size(); ++i)
              g_in.data[i] += g.data[i];  // identity path
            g = std::move(g_in);
          }
        },
        layer);
  }
  const double scale = 1.0 / double(batch);
  for (double& v : grads) v *= scale;
  return grads;
}

std::vector<double> softmax(std::span<const double> logits) {
  require(!logits.empty(), "softmax of empty vector");
  require(all_finite(logits), "softmax: non-finite input");
  const double mx = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(logits.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(logits[i] - mx);
    sum += p[i];
  }
  for (double& v : p) v /= sum;
  return p;
}

namespace {

// log softmax, shift-invariant; avoids underflow of small probabilities
std::vector<double> log_softmax(std::span<const double> logits) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (double v : logits) sum += std::exp(v - mx);
  const double lse = mx + std::log(sum);
  std::vector<double> lp(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) lp[i] = logits[i] - lse;
  return lp;
}

}  // namespace

LossGrad cross_entropy(std::span<const double> logits, int label) {
  require(all_finite(logits), "cross_entropy: non-finite logits");
  require(label >= 0 && label < int(logits.size()), "cross_entropy: label out of range");
  const auto lp = log_softmax(logits);
  LossGrad out;
  out.loss = -lp[label];
  out.grad.resize(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) out.grad[i] = std::exp(lp[i]);
  out.grad[label] -= 1.0;
  return out;
}

LossGrad kl_loss(std::span<const double> target_probs, std::span<const double> logits) {
  require(target_probs.size() == logits.size(), "kl_loss: size mismatch");
  require(all_finite(logits), "kl_loss: non-finite logits");
  double tsum = 0.0;
  for (double t : target_probs) {
    require(t >= 0.0 && std::isfinite(t), "kl_loss: invalid target entry");
    tsum += t;
  }
  require(std::abs(tsum - 1.0) <= 1e-9, "kl_loss: target not normalized");
  const auto lp = log_softmax(logits);
  LossGrad out;
  out.grad.resize(logits.size());
  double loss = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const double t = target_probs[i];
    if (t > 0.0) loss += t * (std::log(t) - lp[i]);
    out.grad[i] = std::exp(lp[i]) - t;
  }
  out.loss = std::max(loss, 0.0);  // clip the tiny negative rounding residue
  return out;
}

double batch_cross_entropy(const Matrix& logits, const std::vector<int>& labels,
                           Matrix* grad_logits) {
  require(logits.rows == labels.size(), "batch size mismatch");
  require(logits.rows >= 1, "empty batch");
  if (grad_logits) *grad_logits = Matrix(logits.rows, logits.cols);
  double total = 0.0;
  for (std::size_t n = 0; n < logits.rows; ++n) {
    LossGrad lg = cross_entropy(logits.row(n), labels[n]);
    total += lg.loss;
    if (grad_logits)
      std::copy(lg.grad.begin(), lg.grad.end(), grad_logits->row(n).begin());
  }
  return total / double(logits.rows);
}

Matrix softmax_rows(const Matrix& logits) {
  Matrix out(logits.rows, logits.cols);
  for (std::size_t n = 0; n < logits.rows; ++n) {
    auto p = softmax(logits.row(n));
    std::copy(p.begin(), p.end(), out.row(n).begin());
  }
  return out;
}

void OptimizerCfg::validate() const {
  require(base_lr > 0.0, "base_lr must be positive");
  require(momentum >= 0.0 && momentum < 1.0, "momentum must be in [0, 1)");
  require(weight_decay >= 0.0, "weight_decay must be >= 0");
  require(total_steps >= 1, "total_steps must be >= 1");
  require(batch_size >= 1, "batch_size must be >= 1");
}

double cosine_lr(int step, const OptimizerCfg& cfg) {
  cfg.validate();
  require(step >= 0 && step <= cfg.total_steps, "cosine_lr: step outside [0, T]");
  return cfg.base_lr * 0.5 *
         (1.0 + std::cos(std::numbers::pi * double(step) / double(cfg.total_steps)));
}

void sgd_step(ParameterVector& params, const ParameterVector& grads,
              ParameterVector& velocity, const OptimizerCfg& cfg, double lr) {
  require(params.size() == grads.size() && params.size() == velocity.size(),
          "sgd_step: length mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double v = cfg.momentum * velocity[i] + grads[i] + cfg.weight_decay * params[i];
    velocity[i] = v;
    params[i] -= lr * v;
    if (!std::isfinite(params[i]))
      throw std::runtime_error("sgd_step: non-finite parameter update");
  }
}

FlopsReport count_flops(const ArchSpec& arch, const FlopsReport* reference) {
  arch.validate();
  FlopsReport rep;
  rep.param_count = arch.param_count();
  auto dense_flops = [](int in, int out, bool bias) -> std::uint64_t {
    return std::uint64_t(2) * in * out + (bias ? out : 0);
  };
  for (const Layer& layer : arch.layers) {
    rep.total_flops += std::visit(
        [&](const auto& l) -> std::uint64_t {
          using T = std::decay_t<decltype(l)>;
          if constexpr (std::is_same_v<T, DenseLayer>) {
            return dense_flops(l.in, l.out, l.bias);
          } else if constexpr (std::is_same_v<T, ReluLayer>) {
            return 0;  // width applied below
          } else if constexpr (std::is_same_v<T, FrnLayer>) {
            return std::uint64_t(6) * l.width;
          } else {
            return dense_flops(l.width, l.hidden, true) + std::uint64_t(6) * l.hidden +
                   std::uint64_t(l.hidden)  // relu
                   + dense_flops(l.hidden, l.width, true) + std::uint64_t(l.width);
          }
        },
        layer);
  }
  // ReLU costs one op per element; widths come from the chain.
  const auto widths = arch.layer_widths();
  for (std::size_t i = 0; i < arch.layers.size(); ++i)
    if (std::holds_alternative<ReluLayer>(arch.layers[i]))
      rep.total_flops += std::uint64_t(widths[i]);
  if (reference) rep = make_relative(rep, *reference);
  return rep;
}

FlopsReport make_relative(FlopsReport report, const FlopsReport& reference) {
  if (reference.total_flops == 0 || reference.param_count == 0)
    throw std::invalid_argument("flops reference must be positive");
  report.relative_flops = double(report.total_flops) / double(reference.total_flops);
  report.relative_params = double(report.param_count) / double(reference.param_count);
  return report;
}

TrainResult train_network(const ArchSpec& arch, const Dataset& train,
                          const OptimizerCfg& cfg) {
  arch.validate();
  cfg.validate();
  train.validate();
  require(train.X.cols == std::size_t(arch.input_dim), "dataset width mismatch");
  require(train.class_count <= arch.class_count, "dataset has more classes than arch");

  TrainResult result;
  result.params = init_params(arch, derive_seed(cfg.seed, 0x696e6974));  // "init"
  ParameterVector velocity(result.params.size(), 0.0);
  Rng shuffle_rng(derive_seed(cfg.seed, 0x73687566));  // "shuf"

  const std::size_t n = train.size();
  std::vector<std::size_t> order;
  std::size_t pos = n;  // trigger reshuffle on first use
  Matrix xb;
  std::vector<int> yb;
  for (int step = 0; step < cfg.total_steps; ++step) {
    const std::size_t bs = std::min<std::size_t>(cfg.batch_size, n);
    if (pos + bs > n) {
      order = shuffle_rng.permutation(n);
      pos = 0;
    }
    xb = Matrix(bs, train.X.cols);
    yb.resize(bs);
    for (std::size_t i = 0; i < bs; ++i) {
      const std::size_t src = order[pos + i];
      std::copy(train.X.row(src).begin(), train.X.row(src).end(), xb.row(i).begin());
      yb[i] = train.y[src];
    }
    pos += bs;

    ForwardBatch fwd = forward(arch, result.params, xb);
    Matrix grad_logits;
    const double loss = batch_cross_entropy(fwd.logits, yb, &grad_logits);
    if (!std::isfinite(loss)) throw std::runtime_error("train_network: loss diverged");
    ParameterVector grads = backward(arch, result.params, fwd, grad_logits);
    const double lr = cosine_lr(step, cfg);
    sgd_step(result.params, grads, velocity, cfg, lr);
    result.log.push_back({step, lr, loss, std::nullopt});
  }
  return result;
}

}  // namespace mbnc
