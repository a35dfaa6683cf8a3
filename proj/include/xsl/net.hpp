#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "xsl/core.hpp"
#include "xsl/matrix.hpp"

namespace xsl::net {

struct EncoderConfig {
  int input_dim = 16;
  int hidden_dim = 64;
  int embed_dim = 32;
  int temporal_kernel = 5;
  int temporal_stride = 1;
  int num_layers = 2;

  void validate() const;
  int output_frames(int input_frames) const {
    return (input_frames + temporal_stride - 1) / temporal_stride;
  }
  bool operator==(const EncoderConfig&) const = default;
};

// One temporal convolution: weight is out x (kernel * in), tap-major.
struct ConvLayer {
  Matrix weight;
  Matrix bias;  // 1 x out
  int out_dim() const { return static_cast<int>(weight.rows()); }
};

struct ClassifierHead {
  Matrix weight;  // rows x d
  Matrix bias;    // 1 x rows
  Vocabulary vocabulary;
  bool with_blank = false;  // CSLR heads score S' (row 0 is blank)

  int rows() const { return static_cast<int>(weight.rows()); }
};

struct ModelParams {
  EncoderConfig config;
  std::vector<ConvLayer> encoder;
  std::map<std::string, ClassifierHead> cslr_heads;  // keyed by language tag
  std::map<std::string, ClassifierHead> islr_heads;

  const ClassifierHead& cslr_head(const std::string& lang) const;
  const ClassifierHead& islr_head(const std::string& lang) const;

  // Stable enumeration of every trainable tensor with its checkpoint name.
  void for_each_tensor(const std::function<void(const std::string&, Matrix&)>& fn);
  void for_each_tensor(const std::function<void(const std::string&, const Matrix&)>& fn) const;

  // Same structure, every tensor zero.
  ModelParams zeros_like() const;
  std::size_t parameter_count() const;
};

// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) per tensor, each tensor drawn
// from its own named sub-stream so adding a head never perturbs the others.
ModelParams init_model(const EncoderConfig& config, const Rng& rng);
void add_cslr_head(ModelParams& model, const Vocabulary& vocabulary, const Rng& rng);
void add_islr_head(ModelParams& model, const Vocabulary& vocabulary, const Rng& rng);

// Activations kept for backpropagation.
struct EncoderCache {
  int input_frames = 0;
  std::vector<Matrix> padded_inputs;  // per layer, (T + kernel - 1) x in
  std::vector<Matrix> outputs;        // per layer, T x out, after tanh
};

struct Encoded {
  Matrix embeddings;  // ceil(T / stride) x d
  EncoderCache cache;
};

Matrix to_matrix(const FeatureSequence& features);

Encoded encode_frames(const ModelParams& params, const Matrix& frames);
Encoded encode_frames(const ModelParams& params, const FeatureSequence& features);

// Accumulates encoder parameter gradients into `grads`.
void encoder_backward(const ModelParams& params, const EncoderCache& cache, const Matrix& grad_embeddings,
                      ModelParams& grads);

Matrix head_logits(const ClassifierHead& head, const Matrix& embeddings);

Matrix cslr_logits(const ModelParams& params, const FeatureSequence& features, const std::string& lang);
RowVector pooled_embedding(const ModelParams& params, const FeatureSequence& features);
RowVector islr_logits(const ModelParams& params, const FeatureSequence& features, const std::string& lang);

struct ClassLoss {
  double loss = 0.0;
  RowVector grad;
};

inline constexpr double kDefaultLabelSmoothing = 0.2;

// q = (1 - smoothing) * onehot(target) + smoothing / |S|.
ClassLoss cross_entropy_smoothed(const RowVector& logits, int target, double smoothing);

// CTC loss of one sequence against the CSLR head of `lang`; gradients
// (scaled by `weight`) are accumulated into `grads`. Returns the unscaled loss.
double cslr_loss_and_grad(const ModelParams& params, const Matrix& frames, const GlossSequence& label,
                          const std::string& lang, double weight, ModelParams& grads);

double islr_loss_and_grad(const ModelParams& params, const Matrix& frames, int target, const std::string& lang,
                          double smoothing, double weight, ModelParams& grads);

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.998;
  double epsilon = 1e-8;
  double weight_decay = 1e-3;
  long horizon = 0;  // cosine schedule length in steps; 0 keeps the rate constant
};

struct OptimizerState {
  AdamConfig config;
  long step = 0;
  std::map<std::string, Matrix> first_moment;
  std::map<std::string, Matrix> second_moment;
};

double cosine_learning_rate(double base, long step, long horizon);

OptimizerState make_optimizer(const ModelParams& params, const AdamConfig& config);

// Decoupled weight decay Adam. Parameters and moments are kept exactly
// representable in f32 so checkpoints round-trip losslessly.
void adam_step(ModelParams& params, const ModelParams& grads, OptimizerState& state);

double round_to_f32(double v);

struct Checkpoint {
  ModelParams params;
  std::optional<OptimizerState> optimizer;
};

// XSCK tensor file at `path` plus `<path>.vocab.json` holding head vocabularies.
void save_checkpoint(const ModelParams& params, const OptimizerState* state, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace xsl::net
