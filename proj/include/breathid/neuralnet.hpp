#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "breathid/features.hpp"
#include "breathid/matrix.hpp"
#include "breathid/rng.hpp"

namespace breathid::nn {

template <typename S>
using MatX = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
template <typename S>
using VecX = Eigen::Matrix<S, Eigen::Dynamic, 1>;

// Layer notation mirrors the usual compact form:
// C1D(filters, kernel, stride, dropout) GRU(units, dropout) Dense(nodes).
struct Conv1dSpec {
  int filters = 0;
  int kernel = 0;
  int stride = 1;
  double dropout = 0.0;
};

struct GruSpec {
  int units = 0;
  double dropout = 0.0;
};

// Conv stack (ReLU), one GRU (tanh), dense softmax head. Dropout applies to
// each layer's input, inverted scaling, training mode only.
struct NetworkSpec {
  int input_dim = 0;
  int classes = 0;
  std::vector<Conv1dSpec> convs;
  GruSpec gru;

  void validate() const;  // stride < kernel per conv, classes >= 2, gru.units >= 1
  std::string to_text() const;
  // Parses e.g. "C1D(32,8,4,0.1) C1D(64,4,2,0.2) GRU(64,0.2) Dense(5)".
  static NetworkSpec from_text(const std::string& text, int input_dim);

  // Shortest input length the conv stack accepts.
  int min_input_length() const;
  // Output length of the conv stack for input length n, -1 if too short.
  int conv_output_length(int n) const;
};

inline int conv_out_len(int n, int kernel, int stride) {
  return n < kernel ? -1 : (n - kernel) / stride + 1;
}

template <typename S>
struct ConvParams {
  MatX<S> w;  // filters x (in_channels * kernel), kernel index fastest
  VecX<S> b;
};

template <typename S>
struct GruParams {
  MatX<S> wz, wr, wh;  // units x input_dim
  MatX<S> uz, ur, uh;  // units x units
  VecX<S> bz, br, bh;
};

template <typename S>
struct DenseParams {
  MatX<S> w;  // classes x units
  VecX<S> b;
};

template <typename S>
struct ParamSet {
  std::vector<ConvParams<S>> convs;
  GruParams<S> gru;
  DenseParams<S> dense;
};

// Flat (pointer, size) views over every tensor in a fixed order; the same
// order is used by the optimizer, the checkpoint format, and gradient checks.
template <typename S>
std::vector<std::pair<S*, std::ptrdiff_t>> tensor_views(ParamSet<S>& p);
template <typename S>
std::vector<std::pair<const S*, std::ptrdiff_t>> tensor_views(const ParamSet<S>& p);

template <typename S>
std::ptrdiff_t param_count(const ParamSet<S>& p);

// Shapes from spec, zero-filled.
template <typename S>
ParamSet<S> zero_params(const NetworkSpec& spec);

// Uniform +-1/sqrt(fan_in) weights, zero biases, fixed draw order.
template <typename S>
ParamSet<S> init_params(const NetworkSpec& spec, std::uint64_t seed);

// Inverted dropout on a matrix: zero with probability rate, else scale by
// 1/(1-rate). No-op when rate == 0 or rng is null.
template <typename S>
void apply_dropout(MatX<S>& x, double rate, Rng* rng);

// Softmax probabilities for one sample; no dropout.
template <typename S>
VecX<S> predict_probs(const NetworkSpec& spec, const ParamSet<S>& params, const MatF& x);

// Cross-entropy loss of one sample without touching gradients.
template <typename S>
S compute_loss(const NetworkSpec& spec, const ParamSet<S>& params, const MatF& x, int label);

// Forward + backprop for one sample; gradients are added into grads.
// dropout_rng == nullptr disables dropout (evaluation-mode gradients).
template <typename S>
S forward_backward(const NetworkSpec& spec, const ParamSet<S>& params, const MatF& x, int label,
                   ParamSet<S>& grads, Rng* dropout_rng);

struct ModelState {
  NetworkSpec spec;
  ParamSet<float> params;
  std::int64_t step = 0;
};

ModelState init_model(const NetworkSpec& spec, std::uint64_t seed);

enum class Optimizer { Adam, SgdMomentum };

struct TrainConfig {
  Optimizer optimizer = Optimizer::Adam;
  double learning_rate = 1e-3;
  int batch_size = 16;
  int epochs = 10;
  std::uint64_t seed = 0;
  double grad_clip_norm = 5.0;     // <= 0 disables
  int early_stop_patience = 0;     // epochs without loss improvement; 0 disables
  double momentum = 0.9;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  int threads = 1;                 // per-batch sample parallelism, deterministic reduction
  bool reshuffle_per_epoch = false;  // redraw AllShuffled permutations each epoch
  std::uint64_t reshuffle_seed = 0;
};

struct EpochStats {
  int epoch = 0;
  double loss = 0.0;      // mean training loss (dropout active)
  double accuracy = 0.0;  // argmax accuracy over the same passes
};

// Seeded shuffled epochs, per-sample gradient accumulation (batch mean),
// global-norm clipping, then the optimizer step. Throws on non-finite loss.
std::vector<EpochStats> train(ModelState& model, std::vector<features::FeatureSeries>& data,
                              const std::vector<int>& labels, const TrainConfig& config);

VecX<float> predict(const ModelState& model, const features::FeatureSeries& x);

// Arithmetic mean of the member softmax outputs.
VecX<float> ensemble_predict(const std::vector<const ModelState*>& models,
                             const features::FeatureSeries& x);

// Checkpoints: magic "BHM1", length-prefixed metadata record, little-endian
// float32 payload: each tensor_views buffer in order, in its storage layout.
void save_model(const ModelState& model, const std::string& path);
ModelState load_model(const std::string& path);

}  // namespace breathid::nn
