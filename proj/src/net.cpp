#include "xsl/net.hpp"

#include <cmath>

#include "xsl/ctc.hpp"

namespace xsl::net {

void EncoderConfig::validate() const {
  if (input_dim < 1 || hidden_dim < 1 || embed_dim < 1 || num_layers < 1 || temporal_kernel < 1) {
    throw Error(ErrorCode::kInvalidArgument, "encoder dimensions must be positive");
  }
  if (temporal_kernel % 2 == 0) throw Error(ErrorCode::kInvalidArgument, "temporal kernel must be odd");
  if (temporal_stride != 1 && temporal_stride != 2 && temporal_stride != 4) {
    throw Error(ErrorCode::kInvalidArgument, "temporal stride must be 1, 2 or 4");
  }
}

double round_to_f32(double v) { return static_cast<double>(static_cast<float>(v)); }

namespace {

Matrix uniform_tensor(Eigen::Index rows, Eigen::Index cols, double bound, Rng rng) {
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = round_to_f32(rng.uniform(-bound, bound));
  return m;
}

ClassifierHead make_head(int rows, int dim, const Vocabulary& vocabulary, bool with_blank, const Rng& rng,
                        const std::string& prefix) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(dim));
  ClassifierHead head;
  head.weight = uniform_tensor(rows, dim, bound, rng.split(prefix + ".weight"));
  head.bias = uniform_tensor(1, rows, bound, rng.split(prefix + ".bias"));
  head.vocabulary = vocabulary;
  head.with_blank = with_blank;
  return head;
}

int layer_in_dim(const EncoderConfig& c, int l) { return l == 0 ? c.input_dim : c.hidden_dim; }
int layer_out_dim(const EncoderConfig& c, int l) { return l == c.num_layers - 1 ? c.embed_dim : c.hidden_dim; }

// Row t of the returned view is the concatenation of padded rows t..t+K-1,
// which are contiguous in row-major storage.
using ConstStridedMap = Eigen::Map<const Matrix, 0, Eigen::OuterStride<>>;

ConstStridedMap window_view(const Matrix& padded, int frames, int kernel) {
  const auto in = padded.cols();
  return ConstStridedMap(padded.data(), frames, kernel * in, Eigen::OuterStride<>(in));
}

}  // namespace

const ClassifierHead& ModelParams::cslr_head(const std::string& lang) const {
  auto it = cslr_heads.find(lang);
  if (it == cslr_heads.end()) throw Error(ErrorCode::kUnknownLanguage, "no CSLR head for language '" + lang + "'");
  return it->second;
}

const ClassifierHead& ModelParams::islr_head(const std::string& lang) const {
  auto it = islr_heads.find(lang);
  if (it == islr_heads.end()) throw Error(ErrorCode::kUnknownLanguage, "no ISLR head for language '" + lang + "'");
  return it->second;
}

void ModelParams::for_each_tensor(const std::function<void(const std::string&, Matrix&)>& fn) {
  for (std::size_t l = 0; l < encoder.size(); ++l) {
    fn("enc." + std::to_string(l) + ".weight", encoder[l].weight);
    fn("enc." + std::to_string(l) + ".bias", encoder[l].bias);
  }
  for (auto& [lang, head] : cslr_heads) {
    fn("cslr." + lang + ".weight", head.weight);
    fn("cslr." + lang + ".bias", head.bias);
  }
  for (auto& [lang, head] : islr_heads) {
    fn("islr." + lang + ".weight", head.weight);
    fn("islr." + lang + ".bias", head.bias);
  }
}

void ModelParams::for_each_tensor(const std::function<void(const std::string&, const Matrix&)>& fn) const {
  const_cast<ModelParams*>(this)->for_each_tensor(
      [&](const std::string& name, Matrix& m) { fn(name, static_cast<const Matrix&>(m)); });
}

ModelParams ModelParams::zeros_like() const {
  ModelParams z = *this;
  z.for_each_tensor([](const std::string&, Matrix& m) { m.setZero(); });
  return z;
}

std::size_t ModelParams::parameter_count() const {
  std::size_t n = 0;
  for_each_tensor([&](const std::string&, const Matrix& m) { n += static_cast<std::size_t>(m.size()); });
  return n;
}

ModelParams init_model(const EncoderConfig& config, const Rng& rng) {
  config.validate();
  ModelParams model;
  model.config = config;
  for (int l = 0; l < config.num_layers; ++l) {
    const int in = layer_in_dim(config, l);
    const int out = layer_out_dim(config, l);
    const int fan_in = in * config.temporal_kernel;
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    const std::string name = "enc." + std::to_string(l);
    ConvLayer layer;
    layer.weight = uniform_tensor(out, fan_in, bound, rng.split(name + ".weight"));
    layer.bias = uniform_tensor(1, out, bound, rng.split(name + ".bias"));
    model.encoder.push_back(std::move(layer));
  }
  return model;
}

void add_cslr_head(ModelParams& model, const Vocabulary& vocabulary, const Rng& rng) {
  const auto& lang = vocabulary.language_tag();
  model.cslr_heads[lang] = make_head(static_cast<int>(vocabulary.size()) + 1, model.config.embed_dim, vocabulary,
                                     true, rng, "cslr." + lang);
}

void add_islr_head(ModelParams& model, const Vocabulary& vocabulary, const Rng& rng) {
  const auto& lang = vocabulary.language_tag();
  model.islr_heads[lang] = make_head(static_cast<int>(vocabulary.size()), model.config.embed_dim, vocabulary,
                                     false, rng, "islr." + lang);
}

Matrix to_matrix(const FeatureSequence& features) {
  Matrix m(features.frames(), features.dim());
  const auto& data = features.data();
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<double>(data[static_cast<std::size_t>(i)]);
  return m;
}

Encoded encode_frames(const ModelParams& params, const Matrix& frames) {
  const auto& cfg = params.config;
  if (frames.cols() != cfg.input_dim) {
    throw Error(ErrorCode::kDimensionMismatch, "feature dim " + std::to_string(frames.cols()) +
                                                   " != encoder input dim " + std::to_string(cfg.input_dim));
  }
  if (frames.rows() < 1) throw Error(ErrorCode::kDimensionMismatch, "empty feature sequence");
  const int T = static_cast<int>(frames.rows());
  const int K = cfg.temporal_kernel;
  const int pad = K / 2;

  Encoded enc;
  enc.cache.input_frames = T;
  const Matrix* current = &frames;
  for (const auto& layer : params.encoder) {
    Matrix padded = Matrix::Zero(T + K - 1, current->cols());
    padded.middleRows(pad, T) = *current;
    Matrix out = window_view(padded, T, K) * layer.weight.transpose();
    out.rowwise() += layer.bias.row(0);
    out = out.array().tanh().matrix();
    enc.cache.padded_inputs.push_back(std::move(padded));
    enc.cache.outputs.push_back(std::move(out));
    current = &enc.cache.outputs.back();
  }

  const int stride = cfg.temporal_stride;
  if (stride == 1) {
    enc.embeddings = *current;
  } else {
    const int out_frames = cfg.output_frames(T);
    enc.embeddings.resize(out_frames, current->cols());
    for (int t = 0; t < out_frames; ++t) enc.embeddings.row(t) = current->row(t * stride);
  }
  return enc;
}

Encoded encode_frames(const ModelParams& params, const FeatureSequence& features) {
  return encode_frames(params, to_matrix(features));
}

void encoder_backward(const ModelParams& params, const EncoderCache& cache, const Matrix& grad_embeddings,
                      ModelParams& grads) {
  const auto& cfg = params.config;
  const int T = cache.input_frames;
  const int K = cfg.temporal_kernel;
  const int pad = K / 2;
  const int layers = static_cast<int>(params.encoder.size());

  Matrix grad_out;
  if (cfg.temporal_stride == 1) {
    grad_out = grad_embeddings;
  } else {
    grad_out = Matrix::Zero(T, grad_embeddings.cols());
    for (Eigen::Index t = 0; t < grad_embeddings.rows(); ++t) grad_out.row(t * cfg.temporal_stride) = grad_embeddings.row(t);
  }

  for (int l = layers - 1; l >= 0; --l) {
    const auto& layer = params.encoder[static_cast<std::size_t>(l)];
    auto& glayer = grads.encoder[static_cast<std::size_t>(l)];
    const Matrix& out = cache.outputs[static_cast<std::size_t>(l)];
    const Matrix& padded = cache.padded_inputs[static_cast<std::size_t>(l)];
    Matrix grad_pre = (grad_out.array() * (1.0 - out.array().square())).matrix();

    glayer.weight.noalias() += grad_pre.transpose() * window_view(padded, T, K);
    glayer.bias.row(0) += grad_pre.colwise().sum();
    if (l == 0) break;

    const Matrix grad_windows = grad_pre * layer.weight;  // T x (K * in)
    const auto in = padded.cols();
    Matrix grad_padded = Matrix::Zero(padded.rows(), in);
    for (int k = 0; k < K; ++k) grad_padded.middleRows(k, T) += grad_windows.middleCols(k * in, in);
    grad_out = grad_padded.middleRows(pad, T);
  }
}

Matrix head_logits(const ClassifierHead& head, const Matrix& embeddings) {
  if (embeddings.cols() != head.weight.cols()) {
    throw Error(ErrorCode::kDimensionMismatch, "embedding dim does not match head");
  }
  Matrix logits = embeddings * head.weight.transpose();
  logits.rowwise() += head.bias.row(0);
  return logits;
}

Matrix cslr_logits(const ModelParams& params, const FeatureSequence& features, const std::string& lang) {
  const auto& head = params.cslr_head(lang);
  return head_logits(head, encode_frames(params, features).embeddings);
}

RowVector pooled_embedding(const ModelParams& params, const FeatureSequence& features) {
  return encode_frames(params, features).embeddings.colwise().mean();
}

RowVector islr_logits(const ModelParams& params, const FeatureSequence& features, const std::string& lang) {
  const auto& head = params.islr_head(lang);
  RowVector pooled = pooled_embedding(params, features);
  return pooled * head.weight.transpose() + head.bias.row(0);
}

ClassLoss cross_entropy_smoothed(const RowVector& logits, int target, double smoothing) {
  const auto n = logits.size();
  if (target < 0 || target >= n) throw Error(ErrorCode::kInvalidArgument, "target class out of range");
  if (smoothing < 0.0 || smoothing >= 1.0) throw Error(ErrorCode::kInvalidArgument, "smoothing must be in [0,1)");
  const double hi = logits.maxCoeff();
  const double lse = hi + std::log((logits.array() - hi).exp().sum());
  RowVector log_p = logits.array() - lse;
  RowVector q = RowVector::Constant(n, smoothing / static_cast<double>(n));
  q(target) += 1.0 - smoothing;
  ClassLoss out;
  out.loss = -(q.array() * log_p.array()).sum();
  out.grad = log_p.array().exp().matrix() - q;
  return out;
}

namespace {

ClassifierHead& mutable_head(std::map<std::string, ClassifierHead>& heads, const std::string& lang) {
  auto it = heads.find(lang);
  if (it == heads.end()) throw Error(ErrorCode::kUnknownLanguage, "gradient buffer lacks head '" + lang + "'");
  return it->second;
}

}  // namespace

double cslr_loss_and_grad(const ModelParams& params, const Matrix& frames, const GlossSequence& label,
                          const std::string& lang, double weight, ModelParams& grads) {
  const auto& head = params.cslr_head(lang);
  Encoded enc = encode_frames(params, frames);
  Matrix logits = head_logits(head, enc.embeddings);
  auto lg = ctc::ctc_loss_and_grad(logits, label);
  lg.grad *= weight;

  auto& ghead = mutable_head(grads.cslr_heads, lang);
  ghead.weight.noalias() += lg.grad.transpose() * enc.embeddings;
  ghead.bias.row(0) += lg.grad.colwise().sum();
  Matrix grad_emb = lg.grad * head.weight;
  encoder_backward(params, enc.cache, grad_emb, grads);
  return lg.loss;
}

double islr_loss_and_grad(const ModelParams& params, const Matrix& frames, int target, const std::string& lang,
                          double smoothing, double weight, ModelParams& grads) {
  const auto& head = params.islr_head(lang);
  Encoded enc = encode_frames(params, frames);
  RowVector pooled = enc.embeddings.colwise().mean();
  RowVector logits = pooled * head.weight.transpose() + head.bias.row(0);
  auto ce = cross_entropy_smoothed(logits, target, smoothing);
  RowVector g = ce.grad * weight;

  auto& ghead = mutable_head(grads.islr_heads, lang);
  ghead.weight.noalias() += g.transpose() * pooled;
  ghead.bias.row(0) += g;
  RowVector grad_pooled = g * head.weight;
  const auto rows = enc.embeddings.rows();
  Matrix grad_emb = grad_pooled.replicate(rows, 1) / static_cast<double>(rows);
  encoder_backward(params, enc.cache, grad_emb, grads);
  return ce.loss;
}

double cosine_learning_rate(double base, long step, long horizon) {
  if (horizon <= 0) return base;
  if (step >= horizon) return 0.0;
  const double progress = static_cast<double>(step) / static_cast<double>(horizon);
  return base * 0.5 * (1.0 + std::cos(M_PI * progress));
}

OptimizerState make_optimizer(const ModelParams& params, const AdamConfig& config) {
  OptimizerState state;
  state.config = config;
  params.for_each_tensor([&](const std::string& name, const Matrix& m) {
    state.first_moment[name] = Matrix::Zero(m.rows(), m.cols());
    state.second_moment[name] = Matrix::Zero(m.rows(), m.cols());
  });
  return state;
}

void adam_step(ModelParams& params, const ModelParams& grads, OptimizerState& state) {
  const auto& cfg = state.config;
  const double lr = cosine_learning_rate(cfg.learning_rate, state.step, cfg.horizon);
  const double t = static_cast<double>(state.step + 1);
  const double correction1 = 1.0 - std::pow(cfg.beta1, t);
  const double correction2 = 1.0 - std::pow(cfg.beta2, t);

  std::map<std::string, const Matrix*> grad_index;
  grads.for_each_tensor([&](const std::string& name, const Matrix& g) { grad_index[name] = &g; });

  params.for_each_tensor([&](const std::string& name, Matrix& p) {
    auto git = grad_index.find(name);
    auto mit = state.first_moment.find(name);
    auto vit = state.second_moment.find(name);
    if (git == grad_index.end() || mit == state.first_moment.end() || vit == state.second_moment.end()) {
      throw Error(ErrorCode::kDimensionMismatch, "missing gradient or moment for '" + name + "'");
    }
    const Matrix& g = *git->second;
    Matrix& m = mit->second;
    Matrix& v = vit->second;
    if (g.rows() != p.rows() || g.cols() != p.cols() || m.rows() != p.rows() || m.cols() != p.cols()) {
      throw Error(ErrorCode::kDimensionMismatch, "shape mismatch for '" + name + "'");
    }
    for (Eigen::Index i = 0; i < p.size(); ++i) {
      double& pi = p.data()[i];
      double& mi = m.data()[i];
      double& vi = v.data()[i];
      const double gi = g.data()[i];
      mi = round_to_f32(cfg.beta1 * mi + (1.0 - cfg.beta1) * gi);
      vi = round_to_f32(cfg.beta2 * vi + (1.0 - cfg.beta2) * gi * gi);
      const double m_hat = mi / correction1;
      const double v_hat = vi / correction2;
      double next = pi - lr * cfg.weight_decay * pi;
      next -= lr * m_hat / (std::sqrt(v_hat) + cfg.epsilon);
      pi = round_to_f32(next);
    }
  });
  ++state.step;
}

}  // namespace xsl::net
