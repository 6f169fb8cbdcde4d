#pragma once

// Feedforward theta neural networks: layers whose activations are the
// conditional hidden expectations E(h_i|v), freely stacked with ordinary
// affine layers, plus the patch-feature classification pipeline (per-patch
// density models feeding a logistic-regression head).

#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "rtbm/core.hpp"
#include "rtbm/training.hpp"
#include "rtbm/types.hpp"

namespace rtbm {

// Expectation layer. Output i is E(h_i|v) evaluated at z = W^T v + B_h with
// coupling q; phase II outputs are rotated onto the real axis. When
// diagonal_q holds, the off-diagonal entries are exactly zero, each node is
// an independent 1-D Jacobi-theta log-derivative, and only the diagonal of q
// is a tunable parameter.
struct ThetaLayer {
  Matrix w;    // in_dim x out_dim
  Vector b_h;  // out_dim
  Matrix q;    // out_dim x out_dim, symmetric positive definite
  bool diagonal_q = true;
  Phase phase = Phase::I;

  Index in_dim() const { return w.rows(); }
  Index out_dim() const { return w.cols(); }
};

enum class Activation { Linear, Tanh, Sigmoid };

struct AffineLayer {
  Matrix w;  // in_dim x out_dim
  Vector b;  // out_dim
  Activation activation = Activation::Linear;

  Index in_dim() const { return w.rows(); }
  Index out_dim() const { return w.cols(); }
};

using Layer = std::variant<ThetaLayer, AffineLayer>;

enum class Loss { Mse, CrossEntropy };

struct TnnNetwork {
  std::vector<Layer> layers;
  Loss loss = Loss::Mse;

  Index in_dim() const;
  Index out_dim() const;
};

void validate(const ThetaLayer& layer);
// Checks that adjacent layer dimensions chain and each layer is valid.
void validate(const TnnNetwork& net);

// Gradients of sum_i upstream_i E(h_i|v) with respect to the layer
// parameters and the layer input. d_q is symmetric; when diagonal_q holds
// its off-diagonal entries are zero.
struct ThetaLayerGrads {
  Matrix d_w;
  Vector d_b_h;
  Matrix d_q;
  Vector d_input;
};

Vector layer_forward(const ThetaLayer& layer, const Eigen::Ref<const Vector>& v);
ThetaLayerGrads layer_backward(const ThetaLayer& layer,
                               const Eigen::Ref<const Vector>& v,
                               const Eigen::Ref<const Vector>& upstream);

Vector network_forward(const TnnNetwork& net, const Eigen::Ref<const Vector>& v);
// Batched forward; samples are columns.
Matrix network_forward_batch(const TnnNetwork& net,
                             const Eigen::Ref<const Matrix>& inputs);

// Mean loss over samples stored as columns: MSE is the mean squared output
// error; cross-entropy applies softmax to the outputs against one-hot (or
// probability) target columns.
double network_loss(const TnnNetwork& net, const Eigen::Ref<const Matrix>& inputs,
                    const Eigen::Ref<const Matrix>& targets);

// Flat parameter view. Per layer, in network order: theta layers contribute
// W row-major, B_h, then q (diagonal entries when diagonal_q, else the lower
// triangle by rows); affine layers contribute W row-major, then b.
Index param_count(const TnnNetwork& net);
Vector flatten(const TnnNetwork& net);
void unflatten_into(TnnNetwork& net, const Eigen::Ref<const Vector>& x);

// Architecture strings "in:n1-n2-...-nk:out". Every plain size becomes a
// theta expectation layer (so "1:3-3-2:1" is four theta layers with 38
// parameters); a size suffixed with 'l', 't' or 's' becomes an affine layer
// with linear, tanh or sigmoid activation instead ("4:3t" is a single tanh
// layer). The returned network carries unit q and zero weights; initialize
// with init_network before use.
TnnNetwork parse_architecture(const std::string& arch, Phase phase,
                              Loss loss = Loss::Mse);

// Random initialization: affine and theta weights/biases uniform in
// [-scale, scale]; theta couplings q uniform in [2, 18] on the diagonal
// (general q gets that diagonal plus a safe small off-diagonal).
void init_network(TnnNetwork& net, double scale, std::uint64_t seed);

// Loss minimization over the flat parameters, dispatching on
// config.optimizer: CMA-ES with positive-definiteness rejection for theta
// couplings, or Adam/SGD backpropagation.
std::pair<TnnNetwork, TrainReport> network_train(
    const TnnNetwork& net, const Eigen::Ref<const Matrix>& inputs,
    const Eigen::Ref<const Matrix>& targets, const TrainConfig& config);

// Binary logistic regression head for the feature pipeline; prediction is
// sigmoid(w . f + b), fitted by Newton iteration with a small ridge term.
struct LogisticModel {
  Vector w;
  double b = 0.0;
};

LogisticModel logistic_fit(const Eigen::Ref<const Matrix>& features,
                           const std::vector<int>& labels, double ridge = 1e-4);
double logistic_predict(const LogisticModel& model,
                        const Eigen::Ref<const Vector>& features);

// Patch-feature classifier: one density-mode RTBM per input patch; features
// are the concatenated hidden expectations of every patch model; a logistic
// regression head consumes them. Patches are consecutive slices of the raw
// input vector in the order the datasets were given.
struct FeaturePipeline {
  std::vector<std::pair<Index, Index>> patches;  // (offset, width) per patch
  std::vector<RtbmParams> models;                // one per patch
  LogisticModel classifier;

  Index feature_dim() const;
  Index input_dim() const;
};

// Fits the pipeline: trains one RTBM (N_h hidden units, train_ml in density
// mode) per patch dataset, extracts expectation features, fits the logistic
// head against the binary labels. Patch datasets are sample-aligned columns.
// Phase II patch models give periodic (non-monotone) features; phase I
// features are trending.
FeaturePipeline feature_classifier_fit(const std::vector<Matrix>& patch_data,
                                       const std::vector<int>& labels, Index n_h,
                                       const TrainConfig& config,
                                       Phase phase = Phase::I);

// Expectation features of one raw input (patches sliced per the pipeline).
Vector pipeline_features(const FeaturePipeline& pipeline,
                         const Eigen::Ref<const Vector>& input);
// Class-1 probability for one raw input.
double pipeline_predict(const FeaturePipeline& pipeline,
                        const Eigen::Ref<const Vector>& input);

}  // namespace rtbm
