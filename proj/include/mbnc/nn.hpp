#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "mbnc/matrix.hpp"

namespace mbnc {

// ---------------------------------------------------------------------------
// Architecture
//
// A network is a fixed sequence of layers over a flat parameter vector.
// Parameter layout is the contract everything else (curves, checkpoints)
// builds on: layer by layer in order, weights before biases, weight matrices
// row-major with one row per output unit.
//
//   Dense(in, out, bias):   W (out x in), then b (out) if bias
//   Relu:                   no parameters
//   Frn(width, eps):        gamma (width), beta (width), tau (width)
//   Residual(width, hidden):
//       Dense_a (width -> hidden, bias), Frn(hidden), Dense_b (hidden ->
//       width, bias), in that order; forward computes
//       u + Dense_b(relu(frn(Dense_a(u)))).
//
// Frn normalizes each sample's vector by the root mean square of its entries
// (nu2 = mean of squares over the whole vector, no batch statistics), applies
// the per-unit affine gamma*x/sqrt(nu2+eps) + beta and then the learned
// threshold max(y, tau).
// ---------------------------------------------------------------------------

struct DenseLayer {
  int in = 0;
  int out = 0;
  bool bias = true;
};

struct ReluLayer {};

struct FrnLayer {
  int width = 0;
  double eps = 1e-6;
};

struct ResidualLayer {
  int width = 0;
  int hidden = 0;
};

using Layer = std::variant<DenseLayer, ReluLayer, FrnLayer, ResidualLayer>;

struct ArchSpec {
  int input_dim = 0;
  int class_count = 0;
  // Index of the layer whose output is the exposed feature z. Must lie
  // strictly before the final (classifier) layer.
  int feature_tap = 0;
  std::vector<Layer> layers;

  // Throws std::invalid_argument when dimensions do not chain, the final
  // layer is not a Dense classifier to class_count, or the tap is invalid.
  void validate() const;

  std::size_t param_count() const;
  // Output width of each layer, in order.
  std::vector<int> layer_widths() const;
  int feature_dim() const;  // D_ft
};

// Convenience builder for the MLP family used by the pipeline:
// Dense -> [Frn] -> Relu per hidden width, then a Dense classifier.
// The default feature tap is the activation feeding the classifier.
ArchSpec make_mlp(int input_dim, int class_count, const std::vector<int>& hidden_widths,
                  bool frn = true, std::optional<int> feature_tap = std::nullopt);

using ParameterVector = std::vector<double>;

struct Network {
  ArchSpec arch;
  ParameterVector params;
  std::string id;  // mode identity, carried through checkpoints
};

// Symmetric scaled-uniform init for dense weights, zero biases; Frn starts at
// gamma=1, beta=0, tau=0. Deterministic per seed.
ParameterVector init_params(const ArchSpec& arch, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Forward / backward
// ---------------------------------------------------------------------------

struct DenseCache {
  Matrix in;
};
struct ReluCache {
  Matrix in;
};
struct FrnCache {
  Matrix in;
  std::vector<double> inv;  // 1/sqrt(nu2+eps) per sample
  Matrix y;                 // affine output before thresholding
};
struct ResidualCache {
  Matrix in;
  DenseCache dense_a;
  FrnCache frn;
  ReluCache relu;  // relu.in is the frn output
};
using LayerCache = std::variant<DenseCache, ReluCache, FrnCache, ResidualCache>;

// Batch forward result: logits, tapped features, and the activation cache
// needed by backward().
struct ForwardBatch {
  Matrix logits;    // N x K
  Matrix features;  // N x D_ft, output of the feature_tap layer
  std::vector<LayerCache> cache;
};

ForwardBatch forward(const ArchSpec& arch, const ParameterVector& params,
                     const Matrix& inputs);

// Gradient of the batch-mean loss w.r.t. params, where grad_logits rows are
// the per-sample loss gradients at the logits. Requires the cache produced by
// forward() for the same batch.
ParameterVector backward(const ArchSpec& arch, const ParameterVector& params,
                         const ForwardBatch& fwd, const Matrix& grad_logits);

// ---------------------------------------------------------------------------
// Losses (per sample). Gradients are w.r.t. the logits.
// ---------------------------------------------------------------------------

std::vector<double> softmax(std::span<const double> logits);

struct LossGrad {
  double loss = 0.0;
  std::vector<double> grad;
};

LossGrad cross_entropy(std::span<const double> logits, int label);

// Forward KL(target || softmax(logits)); zero-probability target entries
// contribute nothing. The target must sum to 1 within 1e-9.
LossGrad kl_loss(std::span<const double> target_probs, std::span<const double> logits);

// Batch-mean cross entropy; optionally fills the per-sample logit gradients.
double batch_cross_entropy(const Matrix& logits, const std::vector<int>& labels,
                           Matrix* grad_logits = nullptr);

Matrix softmax_rows(const Matrix& logits);

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

struct OptimizerCfg {
  double base_lr = 0.1;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  int total_steps = 1;
  int batch_size = 1;
  std::uint64_t seed = 0;

  void validate() const;
};

// eta0 * 0.5 * (1 + cos(pi * step / T)); step must lie in [0, T].
double cosine_lr(int step, const OptimizerCfg& cfg);

// v' = mu*v + g + wd*theta; theta' = theta - lr*v'. Aborts on non-finite
// updates.
void sgd_step(ParameterVector& params, const ParameterVector& grads,
              ParameterVector& velocity, const OptimizerCfg& cfg, double lr);

// ---------------------------------------------------------------------------
// FLOPs accounting
// ---------------------------------------------------------------------------

struct FlopsReport {
  std::uint64_t total_flops = 0;
  std::uint64_t param_count = 0;
  std::optional<double> relative_flops;
  std::optional<double> relative_params;
};

// Per-layer conventions: Dense = 2*in*out (+out if bias); ReLU = 1/element;
// Frn = 6/element; residual add = 1/element. Additive over layers.
FlopsReport count_flops(const ArchSpec& arch, const FlopsReport* reference = nullptr);

FlopsReport make_relative(FlopsReport report, const FlopsReport& reference);

// ---------------------------------------------------------------------------
// Training loop (one SGD step per minibatch, epoch-wise seeded reshuffle)
// ---------------------------------------------------------------------------

struct TrainLogRow {
  int step = 0;
  double lr = 0.0;
  double loss = 0.0;
  std::optional<double> r;  // curve-position sample, when applicable
};

struct Dataset;  // dataio.hpp

struct TrainResult {
  ParameterVector params;
  std::vector<TrainLogRow> log;
};

// Trains a fresh network (init seeded by cfg.seed) with cross entropy.
TrainResult train_network(const ArchSpec& arch, const Dataset& train,
                          const OptimizerCfg& cfg);

}  // namespace mbnc
