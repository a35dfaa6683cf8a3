#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "xsl/core.hpp"
#include "xsl/lexicon.hpp"
#include "xsl/net.hpp"

namespace xsl::eval {

struct WerBreakdown {
  int substitutions = 0;
  int insertions = 0;
  int deletions = 0;
  int ref_length = 0;
  double wer = 0.0;

  int errors() const noexcept { return substitutions + insertions + deletions; }
};

// Unit-cost Levenshtein alignment. Among optimal alignments the backtrace
// prefers substitution, then deletion, then insertion.
WerBreakdown wer(const GlossSequence& reference, const GlossSequence& hypothesis);

struct SampleResult {
  std::string id;
  GlossSequence reference;
  GlossSequence hypothesis;
  WerBreakdown breakdown;
};

struct CslrReport {
  int beam_width = 0;
  WerBreakdown total;  // micro-averaged over the corpus
  std::vector<SampleResult> samples;
};

// Decodes every sample with the CSLR head of the corpus language. The head
// may cover a superset of the corpus vocabulary; extra ids only add errors.
CslrReport evaluate_cslr(const net::ModelParams& model, const Corpus& corpus, int beam_width = 5);

std::string report_json(const CslrReport& report);

struct TopKTable {
  std::vector<int> k_values;
  std::vector<double> per_instance;
  std::vector<double> per_class;
  std::size_t instances = 0;
  std::vector<GlossId> excluded;  // vocabulary glosses without evaluation instances
};

// Rank of the truth counts classes scoring higher, and equal-scoring classes
// with a smaller id.
TopKTable topk_from_scores(const std::vector<RowVector>& scores, const std::vector<GlossId>& truths,
                           std::size_t num_classes, const std::vector<int>& k_values);

TopKTable topk_accuracy(const net::ModelParams& model, const lexicon::SignDictionary& dictionary,
                        const Corpus& corpus, const std::vector<int>& k_values, int window = lexicon::kIslrWindow);

std::string topk_tsv(const TopKTable& table);

}  // namespace xsl::eval
