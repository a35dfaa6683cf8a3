#include "xsl/eval.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>

#include "json.hpp"
#include "xsl/ctc.hpp"

namespace xsl::eval {

using nlohmann::ordered_json;

WerBreakdown wer(const GlossSequence& reference, const GlossSequence& hypothesis) {
  const std::size_t n = reference.size(), m = hypothesis.size();
  std::vector<int> d((n + 1) * (m + 1));
  auto at = [&](std::size_t i, std::size_t j) -> int& { return d[i * (m + 1) + j]; };
  for (std::size_t i = 0; i <= n; ++i) at(i, 0) = static_cast<int>(i);
  for (std::size_t j = 0; j <= m; ++j) at(0, j) = static_cast<int>(j);
  for (std::size_t i = 1; i <= n; ++i) {
    for (std::size_t j = 1; j <= m; ++j) {
      const int sub = at(i - 1, j - 1) + (reference[i - 1] == hypothesis[j - 1] ? 0 : 1);
      at(i, j) = std::min({sub, at(i - 1, j) + 1, at(i, j - 1) + 1});
    }
  }

  WerBreakdown b;
  b.ref_length = static_cast<int>(n);
  std::size_t i = n, j = m;
  while (i > 0 || j > 0) {
    if (i > 0 && j > 0 && at(i, j) == at(i - 1, j - 1) + (reference[i - 1] == hypothesis[j - 1] ? 0 : 1)) {
      if (reference[i - 1] != hypothesis[j - 1]) ++b.substitutions;
      --i;
      --j;
    } else if (i > 0 && at(i, j) == at(i - 1, j) + 1) {
      ++b.deletions;
      --i;
    } else {
      ++b.insertions;
      --j;
    }
  }
  b.wer = static_cast<double>(b.errors()) / std::max(b.ref_length, 1);
  return b;
}

CslrReport evaluate_cslr(const net::ModelParams& model, const Corpus& corpus, int beam_width) {
  const auto& head = model.cslr_head(corpus.language_tag());
  if (!head.vocabulary.extends(corpus.vocabulary)) {
    throw Error(ErrorCode::kVocabularyMismatch,
                "model vocabulary does not cover corpus vocabulary for " + corpus.language_tag());
  }
  CslrReport report;
  report.beam_width = beam_width;
  for (const auto& s : corpus.samples) {
    auto post = ctc::PosteriorMatrix::from_logits(net::cslr_logits(model, s.features, corpus.language_tag()));
    SampleResult r;
    r.id = s.features.id();
    r.reference = s.label;
    r.hypothesis = ctc::beam_decode(post, beam_width);
    r.breakdown = wer(r.reference, r.hypothesis);
    report.total.substitutions += r.breakdown.substitutions;
    report.total.insertions += r.breakdown.insertions;
    report.total.deletions += r.breakdown.deletions;
    report.total.ref_length += r.breakdown.ref_length;
    report.samples.push_back(std::move(r));
  }
  report.total.wer = static_cast<double>(report.total.errors()) / std::max(report.total.ref_length, 1);
  return report;
}

std::string report_json(const CslrReport& report) {
  ordered_json j;
  j["wer"] = report.total.wer;
  j["substitutions"] = report.total.substitutions;
  j["deletions"] = report.total.deletions;
  j["insertions"] = report.total.insertions;
  j["ref_length"] = report.total.ref_length;
  j["beam_width"] = report.beam_width;
  ordered_json rows = ordered_json::array();
  for (const auto& s : report.samples) {
    ordered_json r;
    r["id"] = s.id;
    r["ref"] = s.reference;
    r["hyp"] = s.hypothesis;
    r["S"] = s.breakdown.substitutions;
    r["D"] = s.breakdown.deletions;
    r["I"] = s.breakdown.insertions;
    r["N"] = s.breakdown.ref_length;
    r["wer"] = s.breakdown.wer;
    rows.push_back(std::move(r));
  }
  j["samples"] = std::move(rows);
  return j.dump(1) + "\n";
}

TopKTable topk_from_scores(const std::vector<RowVector>& scores, const std::vector<GlossId>& truths,
                           std::size_t num_classes, const std::vector<int>& k_values) {
  if (scores.size() != truths.size()) throw Error(ErrorCode::kDimensionMismatch, "scores and truths differ in length");
  if (scores.empty()) throw Error(ErrorCode::kEmptyInput, "no evaluation instances");
  TopKTable table;
  table.k_values = k_values;
  table.instances = scores.size();

  std::vector<int> rank(scores.size());
  std::vector<std::size_t> per_gloss(num_classes, 0);
  for (std::size_t n = 0; n < scores.size(); ++n) {
    const auto& s = scores[n];
    const GlossId t = truths[n];
    if (t < 0 || static_cast<std::size_t>(t) >= num_classes || static_cast<std::size_t>(s.size()) != num_classes) {
      throw Error(ErrorCode::kDimensionMismatch, "score row does not match the class count");
    }
    int r = 0;
    for (Eigen::Index k = 0; k < s.size(); ++k) {
      if (s(k) > s(t) || (s(k) == s(t) && k < t)) ++r;
    }
    rank[n] = r;
    ++per_gloss[static_cast<std::size_t>(t)];
  }
  for (std::size_t g = 0; g < num_classes; ++g) {
    if (per_gloss[g] == 0) table.excluded.push_back(static_cast<GlossId>(g));
  }

  for (int k : k_values) {
    if (k < 1) throw Error(ErrorCode::kInvalidArgument, "k must be positive");
    std::vector<std::size_t> hits(num_classes, 0);
    std::size_t total_hits = 0;
    for (std::size_t n = 0; n < scores.size(); ++n) {
      if (rank[n] < k) {
        ++hits[static_cast<std::size_t>(truths[n])];
        ++total_hits;
      }
    }
    double class_sum = 0.0;
    std::size_t classes = 0;
    for (std::size_t g = 0; g < num_classes; ++g) {
      if (per_gloss[g] == 0) continue;
      class_sum += static_cast<double>(hits[g]) / static_cast<double>(per_gloss[g]);
      ++classes;
    }
    table.per_instance.push_back(static_cast<double>(total_hits) / static_cast<double>(scores.size()));
    table.per_class.push_back(class_sum / static_cast<double>(classes));
  }
  return table;
}

TopKTable topk_accuracy(const net::ModelParams& model, const lexicon::SignDictionary& dictionary,
                        const Corpus& corpus, const std::vector<int>& k_values, int window) {
  const std::string& lang = dictionary.vocabulary.language_tag();
  const auto& head = model.islr_head(lang);
  std::vector<RowVector> scores;
  std::vector<GlossId> truths;
  for (const lexicon::Segment* s : dictionary.all()) {
    scores.push_back(net::islr_logits(model, lexicon::isolated_clip(corpus, *s, window), lang));
    truths.push_back(s->gloss_id);
  }
  if (scores.empty()) throw Error(ErrorCode::kEmptyInput, "evaluation dictionary is empty");
  return topk_from_scores(scores, truths, static_cast<std::size_t>(head.rows()), k_values);
}

std::string topk_tsv(const TopKTable& table) {
  std::ostringstream out;
  out << "k\tper_instance\tper_class\n";
  for (std::size_t i = 0; i < table.k_values.size(); ++i) {
    char buf[96];
    std::snprintf(buf, sizeof buf, "%d\t%.6f\t%.6f\n", table.k_values[i], table.per_instance[i], table.per_class[i]);
    out << buf;
  }
  return out.str();
}

}  // namespace xsl::eval
