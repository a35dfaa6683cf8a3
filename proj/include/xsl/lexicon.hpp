#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "xsl/core.hpp"
#include "xsl/ctc.hpp"
#include "xsl/net.hpp"

namespace xsl::lexicon {

struct Segment {
  std::string sample_id;
  std::size_t sample_index = 0;  // position in the source corpus
  GlossId gloss_id = 0;
  int occurrence = 0;  // index i within the sample's label
  int start = 0;       // half-open, input frames
  int end = 0;
  double mean_logit_margin = 0.0;  // mean log y(gloss) - max other log y

  int length() const noexcept { return end - start; }
  bool operator==(const Segment&) const = default;
};

struct SignDictionary {
  Vocabulary vocabulary;
  std::map<GlossId, std::vector<Segment>> entries;
  std::vector<std::string> skipped;  // samples whose alignment failed
  std::string source;                // corpus directory, when known

  std::size_t count(GlossId g) const;
  std::size_t total() const;
  void add(Segment segment);
  std::vector<const Segment*> all() const;  // gloss order, then insertion order
};

// One span per label occurrence, read off the lattice runs of the path.
std::vector<Segment> base_spans(const ctc::AlignmentPath& path, const GlossSequence& label);

// Grows each span into the contiguous blank frames (frames outside every
// span) whose best non-blank class is the span's gloss. Also fills
// mean_logit_margin.
std::vector<Segment> expand_boundaries(std::vector<Segment> spans, const ctc::PosteriorMatrix& posteriors);

// CSLR posteriors of one sample, upsampled by the encoder stride and cut to T.
ctc::PosteriorMatrix frame_posteriors(const net::ModelParams& model, const Sample& sample);

SignDictionary build_dictionary(const Corpus& corpus, const net::ModelParams& model);

SignDictionary filter_by_frequency(const SignDictionary& dict, int min_count);

FeatureSequence segment_features(const Corpus& corpus, const Segment& segment);

inline constexpr int kIslrWindow = 16;

// Centered truncation, or centered padding by edge replication, to `length` frames.
FeatureSequence fit_window(const FeatureSequence& clip, int length);

// Segment features fitted to the ISLR input window.
FeatureSequence isolated_clip(const Corpus& corpus, const Segment& segment, int window = kIslrWindow);

// Re-resolves sample_index by id and checks every segment fits its sample.
void bind_corpus(SignDictionary& dict, const Corpus& corpus);

// dict.jsonl, stats.tsv and dict.json (vocabulary, source, skipped).
void save_dictionary(const SignDictionary& dict, const std::filesystem::path& dir);
SignDictionary load_dictionary(const std::filesystem::path& dir);

}  // namespace xsl::lexicon
