#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "xsl/pipeline.hpp"
#include "xsl/synth.hpp"
#include "xsl/xmap.hpp"

namespace xsl::experiment {

struct ExperimentConfig {
  synth::SynthConfig synth;
  pipeline::TrainConfig cslr = pipeline::cslr_defaults();
  pipeline::TrainConfig islr = pipeline::islr_defaults();
  double alpha = 0.2;
  double tau = 0.0;
  xmap::MapStrategy strategy = xmap::MapStrategy::kPrediction;
  xmap::MapLevel level = xmap::MapLevel::kClass;
  int min_count_p = 8;
  int min_count_a = 20;
  double fraction = 1.0;  // share of the primary train split kept
  int beam_width = 5;
  bool islr_warm_start = true;  // initialise the ISLR encoder from the auxiliary CSLR model
  std::vector<std::uint64_t> seeds{1, 2, 3};

  void validate() const;
};

// Keys: alpha, tau, strategy, level, min_count_p, min_count_a, fraction, beam,
// warm_start, seeds (comma list), synth.<field>, cslr.<field>, islr.<field>.
// Unknown keys are a Format error.
void apply_keys(ExperimentConfig& config, const std::map<std::string, std::string>& kv);

// Ground-truth agreement of a mapping on the glosses the generator shares.
struct MapQuality {
  int shared = 0;   // shared source glosses
  int mapped = 0;   // of those, with a target after thresholding
  int correct = 0;  // of those, equal to the true primary gloss
  double precision() const { return mapped > 0 ? static_cast<double>(correct) / mapped : 0.0; }
};

MapQuality class_map_quality(const xmap::CrossLingualMapping& map, const synth::GroundTruth& truth);
// Instance entries, scored against the true map of each instance's gloss.
MapQuality instance_map_quality(const xmap::CrossLingualMapping& map, const lexicon::SignDictionary& dict_a,
                                const synth::GroundTruth& truth);

// Everything upstream of mixed training for one seed.
struct SeedContext {
  std::uint64_t seed = 0;
  synth::SynthOutput data;
  Corpus primary_train;  // possibly degraded
  pipeline::TrainResult cslr_p;
  std::optional<pipeline::TrainResult> cslr_a;
  std::optional<lexicon::SignDictionary> dict_a;
  std::optional<pipeline::TrainResult> islr;
};

SeedContext prepare(const ExperimentConfig& config, std::uint64_t seed, bool with_mapping);

xmap::CrossLingualMapping build_mapping(const SeedContext& ctx, xmap::MapStrategy strategy, xmap::MapLevel level,
                                        double tau);

struct Row {
  std::string name;
  std::vector<double> values;  // one per seed
  double median = 0.0;
};

struct ExperimentReport {
  std::string preset;
  std::vector<std::uint64_t> seeds;
  std::vector<Row> rows;
  std::map<std::string, std::string> config;

  const Row& row(const std::string& name) const;
  std::string table() const;  // aligned text, one row per line
  std::string to_json() const;
};

double median(std::vector<double> values);

const std::vector<std::string>& preset_names();

// `base` supplies everything a preset does not pin.
ExperimentReport run_preset(const std::string& name, const ExperimentConfig& base);

}  // namespace xsl::experiment
