#pragma once

#include <filesystem>
#include <map>
#include <vector>

#include "xsl/core.hpp"
#include "xsl/matrix.hpp"

namespace xsl::synth {

struct SynthConfig {
  int vocab_size_p = 40;
  int vocab_size_a = 60;
  double overlap_fraction = 0.5;  // fraction of A glosses sharing a P prototype
  int feature_dim = 16;
  int clip_len_mean = 9;
  int clip_len_jitter = 2;
  int blank_gap_mean = 3;
  double noise_sigma = 0.1;
  int train_sentences = 400;
  int dev_sentences = 50;
  int test_sentences = 50;
  int sentence_len_min = 2;
  int sentence_len_max = 6;
  double zipf_exponent = 1.0;
  std::uint64_t seed = 1;

  void validate() const;
  int shared_count() const;
};

struct LanguageCorpora {
  Corpus train;
  Corpus dev;
  Corpus test;
};

struct GroundTruth {
  std::map<GlossId, GlossId> true_map;  // A gloss -> P gloss with the same prototype
  Matrix prototypes_p;                  // |S_P| x d, unit rows
  Matrix prototypes_a;                  // |S_A| x d, unit rows
  RowVector rest_prototype;
};

struct SynthOutput {
  LanguageCorpora primary;
  LanguageCorpora auxiliary;
  GroundTruth truth;
};

SynthOutput generate(const SynthConfig& config);

// Deterministic uniform subsample of a train corpus, order preserved.
Corpus degrade_primary(const Corpus& train, double fraction, std::uint64_t seed);

// <dir>/P/{train,dev,test}, <dir>/A/{train,dev,test} and <dir>/truth.json.
void save_synth(const SynthOutput& out, const std::filesystem::path& dir);
GroundTruth load_truth(const std::filesystem::path& path);

}  // namespace xsl::synth
