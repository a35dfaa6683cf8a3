#include "xsl/pipeline.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "xsl/ctc.hpp"
#include "xsl/eval.hpp"

namespace xsl::pipeline {

using nlohmann::ordered_json;

void TrainConfig::validate() const {
  if (epochs < 0) throw Error(ErrorCode::kInvalidArgument, "epochs must be >= 0");
  if (batch_size < 1) throw Error(ErrorCode::kInvalidArgument, "batch_size must be >= 1");
  if (!(learning_rate > 0.0)) throw Error(ErrorCode::kInvalidArgument, "learning rate must be positive");
  if (!(weight_decay >= 0.0)) throw Error(ErrorCode::kInvalidArgument, "weight decay must be >= 0");
  if (beam_width < 1) throw Error(ErrorCode::kInvalidArgument, "beam width must be >= 1");
  if (!(label_smoothing >= 0.0 && label_smoothing < 1.0)) {
    throw Error(ErrorCode::kInvalidArgument, "label smoothing must be in [0,1)");
  }
  if (islr_window < 1) throw Error(ErrorCode::kInvalidArgument, "ISLR window must be positive");
}

TrainConfig cslr_defaults() { return TrainConfig{}; }

TrainConfig islr_defaults() {
  TrainConfig c;
  c.epochs = 100;
  c.batch_size = 32;
  c.learning_rate = 1e-4;
  return c;
}

std::string TrainReport::to_json(bool with_timing) const {
  ordered_json j;
  j["kind"] = kind;
  j["seed"] = seed;
  j["epochs"] = epoch_loss.size();
  j["steps"] = steps;
  j["epoch_loss"] = epoch_loss;
  j["dev_metric"] = dev_metric;
  j["initial_metric"] = initial_metric;
  j["best_epoch"] = best_epoch;
  j["best_metric"] = best_metric;
  j["source_counts"] = source_counts;
  j["config"] = config;
  if (with_timing) j["wall_seconds"] = wall_seconds;
  return j.dump(1) + "\n";
}

EpochSampler::EpochSampler(std::size_t size, Rng rng) : order_(size), rng_(std::move(rng)) {
  for (std::size_t i = 0; i < size; ++i) order_[i] = i;
  pos_ = size;  // shuffle lazily on first draw
}

std::size_t EpochSampler::next() {
  if (order_.empty()) throw Error(ErrorCode::kEmptyInput, "cannot sample from an empty corpus");
  if (pos_ == order_.size()) {
    rng_.shuffle(order_);
    pos_ = 0;
  }
  return order_[pos_++];
}

MixedSampler::MixedSampler(std::size_t primary_size, std::size_t auxiliary_size, double alpha, const Rng& rng)
    : p_aux_(alpha / (1.0 + alpha)), source_rng_(rng.split("source")), primary_(primary_size, rng.split("primary")) {
  if (!(alpha >= 0.0) || !std::isfinite(alpha)) throw Error(ErrorCode::kInvalidArgument, "alpha must be >= 0");
  if (alpha > 0.0 && auxiliary_size == 0) {
    throw Error(ErrorCode::kEmptyInput, "alpha > 0 requires a non-empty auxiliary corpus");
  }
  if (auxiliary_size > 0) auxiliary_.emplace(auxiliary_size, rng.split("auxiliary"));
}

Slot MixedSampler::next() {
  if (p_aux_ > 0.0 && source_rng_.bernoulli(p_aux_)) return {1, auxiliary_->next()};
  return {0, primary_.next()};
}

std::size_t slots_per_epoch(std::size_t primary_size, double alpha) {
  return static_cast<std::size_t>(std::ceil(static_cast<double>(primary_size) * (1.0 + alpha) - 1e-9));
}

namespace {

std::vector<std::vector<Slot>> epoch_batches(MixedSampler& sampler, std::size_t slots, int batch_size) {
  std::vector<std::vector<Slot>> batches;
  for (std::size_t done = 0; done < slots;) {
    const std::size_t n = std::min<std::size_t>(static_cast<std::size_t>(batch_size), slots - done);
    std::vector<Slot> batch;
    for (std::size_t i = 0; i < n; ++i) batch.push_back(sampler.next());
    batches.push_back(std::move(batch));
    done += n;
  }
  return batches;
}

std::size_t batches_per_epoch(std::size_t slots, int batch_size) {
  return (slots + static_cast<std::size_t>(batch_size) - 1) / static_cast<std::size_t>(batch_size);
}

}  // namespace

std::vector<std::vector<Slot>> mixed_batches(std::size_t primary_size, std::size_t auxiliary_size, double alpha,
                                             int batch_size, int epochs, const Rng& rng) {
  if (batch_size < 1) throw Error(ErrorCode::kInvalidArgument, "batch_size must be >= 1");
  MixedSampler sampler(primary_size, auxiliary_size, alpha, rng);
  std::vector<std::vector<Slot>> all;
  for (int e = 0; e < epochs; ++e) {
    for (auto& b : epoch_batches(sampler, slots_per_epoch(primary_size, alpha), batch_size)) all.push_back(std::move(b));
  }
  return all;
}

std::map<std::string, std::string> describe(const TrainConfig& c) {
  auto num = [](double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf);
  };
  return {
      {"epochs", std::to_string(c.epochs)},
      {"batch_size", std::to_string(c.batch_size)},
      {"lr", num(c.learning_rate)},
      {"weight_decay", num(c.weight_decay)},
      {"cosine", c.cosine ? "true" : "false"},
      {"seed", std::to_string(c.seed)},
      {"hidden_dim", std::to_string(c.encoder.hidden_dim)},
      {"embed_dim", std::to_string(c.encoder.embed_dim)},
      {"kernel", std::to_string(c.encoder.temporal_kernel)},
      {"stride", std::to_string(c.encoder.temporal_stride)},
      {"layers", std::to_string(c.encoder.num_layers)},
      {"beam", std::to_string(c.beam_width)},
      {"smoothing", num(c.label_smoothing)},
      {"window", std::to_string(c.islr_window)},
  };
}

namespace {

struct CtcSource {
  const Corpus* corpus;
  std::string head;
  std::vector<Matrix> frames;
};

CtcSource make_source(const Corpus& corpus, std::string head) {
  CtcSource s{&corpus, std::move(head), {}};
  s.frames.reserve(corpus.size());
  for (const auto& sample : corpus.samples) s.frames.push_back(net::to_matrix(sample.features));
  return s;
}

void zero(net::ModelParams& grads) {
  grads.for_each_tensor([](const std::string&, Matrix& m) { m.setZero(); });
}

net::AdamConfig adam_config(const TrainConfig& cfg, long horizon) {
  net::AdamConfig a;
  a.learning_rate = cfg.learning_rate;
  a.weight_decay = cfg.weight_decay;
  a.horizon = cfg.cosine ? horizon : 0;
  return a;
}

int feature_dim(const Corpus& c) {
  if (c.empty()) throw Error(ErrorCode::kEmptyInput, "training corpus " + c.language_tag() + " is empty");
  return c.samples.front().features.dim();
}

net::ModelParams fresh_encoder(const TrainConfig& cfg, int input_dim) {
  net::EncoderConfig ec = cfg.encoder;
  ec.input_dim = input_dim;
  return net::init_model(ec, Rng(cfg.seed).split("init"));
}

double dev_wer(const net::ModelParams& model, const Corpus& dev, int beam) {
  return eval::evaluate_cslr(model, dev, beam).total.wer;
}

double since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

TrainResult run_ctc(net::ModelParams model, const std::vector<CtcSource>& sources, double alpha, const Corpus& dev,
                    const TrainConfig& cfg, const std::string& kind) {
  const auto start = std::chrono::steady_clock::now();
  const std::size_t aux_size = sources.size() > 1 ? sources[1].corpus->size() : 0;
  MixedSampler sampler(sources[0].corpus->size(), aux_size, alpha, Rng(cfg.seed).split("sampler"));
  const std::size_t slots = slots_per_epoch(sources[0].corpus->size(), alpha);
  const long horizon = static_cast<long>(batches_per_epoch(slots, cfg.batch_size)) * cfg.epochs;
  net::OptimizerState opt = net::make_optimizer(model, adam_config(cfg, horizon));
  net::ModelParams grads = model.zeros_like();

  TrainResult result;
  TrainReport& rep = result.report;
  rep.kind = kind;
  rep.seed = cfg.seed;
  rep.config = describe(cfg);
  rep.config["alpha"] = std::to_string(alpha);
  rep.source_counts = {{"primary", 0}, {"auxiliary", 0}};
  const bool select = !dev.empty();
  rep.initial_metric = select ? dev_wer(model, dev, cfg.beam_width) : 0.0;
  rep.best_metric = rep.initial_metric;
  net::ModelParams best = model;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    double loss_sum = 0.0;
    std::size_t count = 0;
    for (const auto& batch : epoch_batches(sampler, slots, cfg.batch_size)) {
      zero(grads);
      const double w = 1.0 / static_cast<double>(batch.size());
      for (const Slot& slot : batch) {
        const CtcSource& src = sources[static_cast<std::size_t>(slot.source)];
        const Sample& sample = src.corpus->samples[slot.index];
        try {
          loss_sum += net::cslr_loss_and_grad(model, src.frames[slot.index], sample.label, src.head, w, grads);
        } catch (const Error& e) {
          if (e.code() != ErrorCode::kInfeasibleLabel) throw;
          throw Error(ErrorCode::kInfeasibleLabel, "sample " + sample.features.id() + ": " + e.what());
        }
        ++count;
        ++rep.source_counts[slot.source == 0 ? "primary" : "auxiliary"];
      }
      net::adam_step(model, grads, opt);
      ++rep.steps;
    }
    rep.epoch_loss.push_back(loss_sum / static_cast<double>(std::max<std::size_t>(count, 1)));
    if (select) {
      const double w = dev_wer(model, dev, cfg.beam_width);
      rep.dev_metric.push_back(w);
      if (w < rep.best_metric) {
        rep.best_metric = w;
        rep.best_epoch = epoch;
        best = model;
      }
    }
  }
  if (!select) {
    rep.best_epoch = cfg.epochs;
    best = model;
  }
  result.model = std::move(best);
  rep.wall_seconds = since(start);
  return result;
}

}  // namespace

TrainResult train_cslr(const Corpus& train, const Corpus& dev, const TrainConfig& config) {
  config.validate();
  validate_corpus(train);
  net::ModelParams model = fresh_encoder(config, feature_dim(train));
  net::add_cslr_head(model, train.vocabulary, Rng(config.seed).split("init"));
  auto out = run_ctc(std::move(model), {make_source(train, train.language_tag())}, 0.0, dev, config, "cslr");
  return out;
}

TrainResult train_cslr_mixed(const Corpus& primary, const Corpus& mapped_aux, const Corpus& dev,
                             const MixConfig& mix) {
  mix.train.validate();
  validate_corpus(primary);
  const auto& vocab = mapped_aux.vocabulary;
  if (vocab.language_tag() != primary.language_tag() || !vocab.extends(primary.vocabulary)) {
    throw Error(ErrorCode::kVocabularyMismatch, "mapped auxiliary vocabulary must extend the primary vocabulary");
  }
  net::ModelParams model = fresh_encoder(mix.train, feature_dim(primary));
  net::add_cslr_head(model, vocab, Rng(mix.train.seed).split("init"));
  std::vector<CtcSource> sources{make_source(primary, primary.language_tag()),
                                 make_source(mapped_aux, primary.language_tag())};
  return run_ctc(std::move(model), sources, mix.alpha, dev, mix.train, "cslr-mixed");
}

TrainResult train_multitask_baseline(const Corpus& primary, const Corpus& aux, const Corpus& dev,
                                     const MixConfig& mix) {
  mix.train.validate();
  validate_corpus(primary);
  if (aux.language_tag() == primary.language_tag()) {
    throw Error(ErrorCode::kVocabularyMismatch, "multi-task baseline needs two distinct languages");
  }
  net::ModelParams model = fresh_encoder(mix.train, feature_dim(primary));
  const Rng init = Rng(mix.train.seed).split("init");
  net::add_cslr_head(model, primary.vocabulary, init);
  net::add_cslr_head(model, aux.vocabulary, init);
  std::vector<CtcSource> sources{make_source(primary, primary.language_tag()), make_source(aux, aux.language_tag())};
  return run_ctc(std::move(model), sources, mix.alpha, dev, mix.train, "multitask");
}

namespace {

struct IslrSet {
  std::string lang;
  std::vector<Matrix> clips;
  std::vector<GlossId> targets;
};

IslrSet load_clips(const IslrData& d, int window) {
  IslrSet set;
  if (d.dictionary == nullptr) return set;
  if (d.corpus == nullptr) throw Error(ErrorCode::kInvalidArgument, "dictionary given without its corpus");
  set.lang = d.dictionary->vocabulary.language_tag();
  for (const lexicon::Segment* s : d.dictionary->all()) {
    set.clips.push_back(net::to_matrix(lexicon::isolated_clip(*d.corpus, *s, window)));
    set.targets.push_back(s->gloss_id);
  }
  return set;
}

double top1(const net::ModelParams& model, const IslrSet& set) {
  const auto& head = model.islr_head(set.lang);
  std::vector<RowVector> scores;
  for (const auto& clip : set.clips) {
    RowVector pooled = net::encode_frames(model, clip).embeddings.colwise().mean();
    scores.push_back(pooled * head.weight.transpose() + head.bias.row(0));
  }
  return eval::topk_from_scores(scores, set.targets, static_cast<std::size_t>(head.rows()), {1}).per_instance[0];
}

double dev_top1(const net::ModelParams& model, const std::vector<const IslrSet*>& sets) {
  double sum = 0.0;
  int n = 0;
  for (const IslrSet* s : sets) {
    if (s->clips.empty()) continue;
    sum += top1(model, *s);
    ++n;
  }
  return n > 0 ? sum / n : 0.0;
}

std::vector<std::vector<std::size_t>> chunk(std::vector<std::size_t> order, int batch_size) {
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < order.size(); i += static_cast<std::size_t>(batch_size)) {
    const auto end = std::min(order.size(), i + static_cast<std::size_t>(batch_size));
    out.emplace_back(order.begin() + static_cast<long>(i), order.begin() + static_cast<long>(end));
  }
  return out;
}

}  // namespace

TrainResult train_islr(const IslrData& primary, const IslrData& aux, const IslrData& dev_primary,
                       const IslrData& dev_aux, const TrainConfig& config, const net::ModelParams* warm_start) {
  config.validate();
  const auto start = std::chrono::steady_clock::now();
  if (primary.dictionary == nullptr || aux.dictionary == nullptr || primary.dictionary->total() == 0 ||
      aux.dictionary->total() == 0) {
    throw Error(ErrorCode::kEmptyInput, "ISLR training needs non-empty dictionaries for both languages");
  }
  const IslrSet sets[2] = {load_clips(primary, config.islr_window), load_clips(aux, config.islr_window)};
  if (sets[0].lang == sets[1].lang) throw Error(ErrorCode::kInvalidArgument, "ISLR languages must differ");
  const IslrSet dev_sets[2] = {load_clips(dev_primary, config.islr_window), load_clips(dev_aux, config.islr_window)};

  const int dim = static_cast<int>(sets[0].clips.front().cols());
  net::ModelParams model = fresh_encoder(config, dim);
  if (warm_start != nullptr) {
    if (!(warm_start->config == model.config)) {
      throw Error(ErrorCode::kDimensionMismatch, "warm-start encoder configuration differs");
    }
    model.encoder = warm_start->encoder;
  }
  const Rng init = Rng(config.seed).split("init");
  net::add_islr_head(model, primary.dictionary->vocabulary, init);
  net::add_islr_head(model, aux.dictionary->vocabulary, init);

  const long per_epoch = static_cast<long>(batches_per_epoch(sets[0].clips.size(), config.batch_size) +
                                           batches_per_epoch(sets[1].clips.size(), config.batch_size));
  net::OptimizerState opt = net::make_optimizer(model, adam_config(config, per_epoch * config.epochs));
  net::ModelParams grads = model.zeros_like();
  Rng order_rng[2] = {Rng(config.seed).split("islr-" + sets[0].lang), Rng(config.seed).split("islr-" + sets[1].lang)};

  TrainResult result;
  TrainReport& rep = result.report;
  rep.kind = "islr";
  rep.seed = config.seed;
  rep.config = describe(config);
  rep.source_counts = {{"primary", 0}, {"auxiliary", 0}};
  const std::vector<const IslrSet*> dev{&dev_sets[0], &dev_sets[1]};
  const bool select = !dev_sets[0].clips.empty() || !dev_sets[1].clips.empty();
  rep.initial_metric = select ? dev_top1(model, dev) : 0.0;
  rep.best_metric = rep.initial_metric;
  net::ModelParams best = model;

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    std::vector<std::vector<std::size_t>> batches[2];
    for (int l = 0; l < 2; ++l) {
      std::vector<std::size_t> order(sets[l].clips.size());
      for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
      order_rng[l].shuffle(order);
      batches[l] = chunk(std::move(order), config.batch_size);
    }
    double loss_sum = 0.0;
    std::size_t count = 0;
    const std::size_t rounds = std::max(batches[0].size(), batches[1].size());
    for (std::size_t r = 0; r < rounds; ++r) {
      for (int l = 0; l < 2; ++l) {
        if (r >= batches[l].size()) continue;
        const auto& batch = batches[l][r];
        zero(grads);
        const double w = 1.0 / static_cast<double>(batch.size());
        for (std::size_t i : batch) {
          loss_sum += net::islr_loss_and_grad(model, sets[l].clips[i], sets[l].targets[i], sets[l].lang,
                                              config.label_smoothing, w, grads);
        }
        count += batch.size();
        rep.source_counts[l == 0 ? "primary" : "auxiliary"] += static_cast<long>(batch.size());
        net::adam_step(model, grads, opt);
        ++rep.steps;
      }
    }
    rep.epoch_loss.push_back(loss_sum / static_cast<double>(std::max<std::size_t>(count, 1)));
    if (select) {
      const double acc = dev_top1(model, dev);
      rep.dev_metric.push_back(acc);
      if (acc > rep.best_metric) {
        rep.best_metric = acc;
        rep.best_epoch = epoch;
        best = model;
      }
    }
  }
  if (!select) {
    rep.best_epoch = config.epochs;
    best = model;
  }
  result.model = std::move(best);
  rep.wall_seconds = since(start);
  return result;
}

std::map<std::string, std::string> parse_key_values(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return std::string();
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw Error(ErrorCode::kFormat, "config line " + std::to_string(lineno) + " lacks '='");
    }
    std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw Error(ErrorCode::kFormat, "config line " + std::to_string(lineno) + " has an empty key");
    kv[key] = trim(line.substr(eq + 1));
  }
  return kv;
}

std::map<std::string, std::string> read_key_values(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorCode::kIo, "cannot open config " + path.string());
  std::ostringstream s;
  s << f.rdbuf();
  return parse_key_values(s.str());
}

namespace {

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
  try {
    std::size_t pos = 0;
    T v;
    if constexpr (std::is_same_v<T, double>) {
      v = std::stod(value, &pos);
    } else if constexpr (std::is_same_v<T, std::uint64_t>) {
      if (!value.empty() && value[0] == '-') throw std::invalid_argument(value);
      v = std::stoull(value, &pos);
    } else {
      v = static_cast<T>(std::stoi(value, &pos));
    }
    if (pos != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw Error(ErrorCode::kFormat, "bad value '" + value + "' for " + key);
  }
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  throw Error(ErrorCode::kFormat, "bad boolean '" + value + "' for " + key);
}

}  // namespace

std::vector<std::string> apply_train_keys(TrainConfig& c, const std::map<std::string, std::string>& kv,
                                          const std::string& prefix) {
  std::vector<std::string> used;
  for (const auto& [full, value] : kv) {
    if (full.rfind(prefix, 0) != 0) continue;
    const std::string key = full.substr(prefix.size());
    if (key == "epochs") c.epochs = parse_number<int>(full, value);
    else if (key == "batch_size") c.batch_size = parse_number<int>(full, value);
    else if (key == "lr") c.learning_rate = parse_number<double>(full, value);
    else if (key == "weight_decay") c.weight_decay = parse_number<double>(full, value);
    else if (key == "cosine") c.cosine = parse_bool(full, value);
    else if (key == "seed") c.seed = parse_number<std::uint64_t>(full, value);
    else if (key == "hidden_dim") c.encoder.hidden_dim = parse_number<int>(full, value);
    else if (key == "embed_dim") c.encoder.embed_dim = parse_number<int>(full, value);
    else if (key == "kernel") c.encoder.temporal_kernel = parse_number<int>(full, value);
    else if (key == "stride") c.encoder.temporal_stride = parse_number<int>(full, value);
    else if (key == "layers") c.encoder.num_layers = parse_number<int>(full, value);
    else if (key == "beam") c.beam_width = parse_number<int>(full, value);
    else if (key == "smoothing") c.label_smoothing = parse_number<double>(full, value);
    else if (key == "window") c.islr_window = parse_number<int>(full, value);
    else continue;
    used.push_back(full);
  }
  return used;
}

}  // namespace xsl::pipeline
