#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "xsl/core.hpp"
#include "xsl/lexicon.hpp"
#include "xsl/net.hpp"

namespace xsl::pipeline {

struct TrainConfig {
  int epochs = 40;
  int batch_size = 8;
  double learning_rate = 1e-3;
  double weight_decay = 1e-3;
  bool cosine = true;
  std::uint64_t seed = 1;
  net::EncoderConfig encoder;  // input_dim is taken from the data
  int beam_width = 5;
  double label_smoothing = net::kDefaultLabelSmoothing;
  int islr_window = lexicon::kIslrWindow;

  void validate() const;
};

TrainConfig cslr_defaults();
TrainConfig islr_defaults();  // 100 epochs, batch 32, lr 1e-4

struct MixConfig {
  double alpha = 0.2;
  TrainConfig train;
};

struct TrainReport {
  std::string kind;
  std::vector<double> epoch_loss;
  std::vector<double> dev_metric;  // WER for CSLR, mean top-1 for ISLR
  int best_epoch = 0;              // 0 is the initialization
  double best_metric = 0.0;
  double initial_metric = 0.0;
  long steps = 0;
  double wall_seconds = 0.0;
  std::uint64_t seed = 0;
  std::map<std::string, std::string> config;
  std::map<std::string, long> source_counts;

  // Without wall-clock time unless asked for.
  std::string to_json(bool with_timing = true) const;
};

struct TrainResult {
  net::ModelParams model;
  TrainReport report;
};

// Draws indices uniformly without replacement, reshuffling on exhaustion.
class EpochSampler {
 public:
  EpochSampler(std::size_t size, Rng rng);
  std::size_t next();

 private:
  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
  Rng rng_;
};

struct Slot {
  int source = 0;  // 0 primary, 1 auxiliary
  std::size_t index = 0;
  bool operator==(const Slot&) const = default;
};

// Each slot is auxiliary with probability alpha / (1 + alpha). Source
// choice and the two within-corpus orders use independent sub-streams.
class MixedSampler {
 public:
  MixedSampler(std::size_t primary_size, std::size_t auxiliary_size, double alpha, const Rng& rng);
  Slot next();
  double auxiliary_probability() const noexcept { return p_aux_; }

 private:
  double p_aux_;
  Rng source_rng_;
  EpochSampler primary_;
  std::optional<EpochSampler> auxiliary_;
};

// Slot stream for `epochs` epochs of ceil(|D_P| (1 + alpha)) slots each,
// cut into batches.
std::vector<std::vector<Slot>> mixed_batches(std::size_t primary_size, std::size_t auxiliary_size, double alpha,
                                             int batch_size, int epochs, const Rng& rng);

std::size_t slots_per_epoch(std::size_t primary_size, double alpha);

TrainResult train_cslr(const Corpus& train, const Corpus& dev, const TrainConfig& config);

// D_AP must carry a vocabulary extending D_P's. Checkpoints are chosen on
// the primary dev corpus only.
TrainResult train_cslr_mixed(const Corpus& primary, const Corpus& mapped_aux, const Corpus& dev,
                             const MixConfig& mix);

// Shared encoder, one CSLR head per language, each sample scored by its own head.
TrainResult train_multitask_baseline(const Corpus& primary, const Corpus& aux, const Corpus& dev,
                                     const MixConfig& mix);

struct IslrData {
  const lexicon::SignDictionary* dictionary = nullptr;
  const Corpus* corpus = nullptr;
};

// Alternating single-language batches; checkpoint by mean dev top-1 when dev data is given.
// `warm_start`, when set, supplies the initial encoder.
TrainResult train_islr(const IslrData& primary, const IslrData& aux, const IslrData& dev_primary,
                       const IslrData& dev_aux, const TrainConfig& config,
                       const net::ModelParams* warm_start = nullptr);

// key = value lines; '#' starts a comment.
std::map<std::string, std::string> parse_key_values(const std::string& text);
std::map<std::string, std::string> read_key_values(const std::filesystem::path& path);

// Applies known keys with an optional prefix (e.g. "cslr."); returns keys it consumed.
std::vector<std::string> apply_train_keys(TrainConfig& config, const std::map<std::string, std::string>& kv,
                                          const std::string& prefix = "");

std::map<std::string, std::string> describe(const TrainConfig& config);

}  // namespace xsl::pipeline
