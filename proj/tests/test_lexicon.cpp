#include <algorithm>

#include "doctest.h"
#include "oracles.hpp"
#include "fixtures.hpp"
#include "test_util.hpp"
#include "xsl/lexicon.hpp"
#include "xsl/synth.hpp"

using namespace xsl;
using namespace xsl::lexicon;
using testutil::code_of;

namespace {

ctc::AlignmentPath path_of(std::vector<int> labels) { return {std::move(labels), 0.0}; }

ctc::PosteriorMatrix posts(const std::vector<std::vector<double>>& rows) {
  Matrix m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows[0].size()));
  for (std::size_t t = 0; t < rows.size(); ++t) {
    for (std::size_t k = 0; k < rows[t].size(); ++k) m(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(k)) = rows[t][k];
  }
  return ctc::PosteriorMatrix::from_probs(m);
}

double iou(int a0, int a1, int b0, int b1) {
  const int inter = std::max(0, std::min(a1, b1) - std::max(a0, b0));
  const int uni = std::max(a1, b1) - std::min(a0, b0);
  return static_cast<double>(inter) / uni;
}

}  // namespace

TEST_CASE("base_spans reads runs off the path") {
  auto spans = base_spans(path_of({0, 1, 1, 0, 2, 0}), {0, 1});
  REQUIRE(spans.size() == 2);
  CHECK(spans[0].gloss_id == 0);
  CHECK(spans[0].start == 1);
  CHECK(spans[0].end == 3);
  CHECK(spans[1].gloss_id == 1);
  CHECK(spans[1].start == 4);
  CHECK(spans[1].end == 5);

  auto rep = base_spans(path_of({1, 0, 1}), {0, 0});
  REQUIRE(rep.size() == 2);
  CHECK(rep[0].start == 0);
  CHECK(rep[0].end == 1);
  CHECK(rep[1].start == 2);
  CHECK(rep[1].end == 3);
  CHECK(rep[1].occurrence == 1);

  CHECK(code_of([] { base_spans(path_of({1, 1}), {0, 0}); }) == ErrorCode::kCollapseMismatch);
}

TEST_CASE("base_spans partitions the non-blank frames of viterbi paths") {
  Rng rng(12);
  int checked = 0;
  for (int trial = 0; trial < 300; ++trial) {
    const int T = rng.uniform_int(1, 12);
    auto label = oracle::random_label(rng, 4, 3);
    if (ctc::min_frames(label) > T) continue;
    auto path = ctc::viterbi_align(ctc::PosteriorMatrix::from_probs(oracle::random_probs(rng, T, 4)), label);
    auto spans = base_spans(path, label);
    REQUIRE(spans.size() == label.size());
    std::vector<int> covered(static_cast<std::size_t>(T), 0);
    for (std::size_t i = 0; i < spans.size(); ++i) {
      CHECK(spans[i].gloss_id == label[i]);
      if (i > 0) CHECK(spans[i].start >= spans[i - 1].end);
      for (int t = spans[i].start; t < spans[i].end; ++t) {
        ++covered[static_cast<std::size_t>(t)];
        CHECK(path.labels[static_cast<std::size_t>(t)] == label[i] + 1);
      }
    }
    for (int t = 0; t < T; ++t) CHECK(covered[static_cast<std::size_t>(t)] == (path.labels[static_cast<std::size_t>(t)] != 0));
    ++checked;
  }
  CHECK(checked > 100);
}

TEST_CASE("expansion absorbs blank frames whose best gloss matches") {
  // classes: blank, a, b, c
  auto post = posts({
      {0.1, 0.8, 0.05, 0.05},  // a
      {0.7, 0.2, 0.05, 0.05},  // blank, best non-blank a
      {0.7, 0.05, 0.2, 0.05},  // blank, best non-blank b
      {0.1, 0.05, 0.8, 0.05},  // b
      {0.7, 0.05, 0.05, 0.2},  // blank, best non-blank c
  });
  auto spans = base_spans(path_of({1, 0, 0, 2, 0}), {0, 1});
  auto out = expand_boundaries(spans, post);
  CHECK(out[0].start == 0);
  CHECK(out[0].end == 2);
  CHECK(out[1].start == 2);
  CHECK(out[1].end == 4);
  CHECK(out[0].mean_logit_margin > 0.0);
}

TEST_CASE("a contested frame goes to the gloss with higher probability") {
  // Single repeated gloss on both sides: frame probabilities decide, then distance.
  auto post = posts({
      {0.1, 0.9},
      {0.6, 0.4},
      {0.6, 0.4},
      {0.6, 0.4},
      {0.1, 0.9},
  });
  auto out = expand_boundaries(base_spans(path_of({1, 0, 0, 0, 1}), {0, 0}), post);
  CHECK(out[0].end == 3);
  CHECK(out[1].start == 3);
}

TEST_CASE("expansion never shrinks, never crosses and is idempotent") {
  Rng rng(31);
  for (int trial = 0; trial < 300; ++trial) {
    const int T = rng.uniform_int(2, 14);
    auto label = oracle::random_label(rng, 4, 3);
    if (ctc::min_frames(label) > T) continue;
    auto post = ctc::PosteriorMatrix::from_probs(oracle::random_probs(rng, T, 4));
    auto spans = base_spans(ctc::viterbi_align(post, label), label);
    auto once = expand_boundaries(spans, post);
    auto twice = expand_boundaries(once, post);
    REQUIRE(once.size() == spans.size());
    for (std::size_t i = 0; i < once.size(); ++i) {
      CHECK(once[i].start <= spans[i].start);
      CHECK(once[i].end >= spans[i].end);
      if (i > 0) CHECK(once[i].start >= once[i - 1].end);
      CHECK(twice[i].start == once[i].start);
      CHECK(twice[i].end == once[i].end);
    }
  }
}

TEST_CASE("build_dictionary over small corpora") {
  synth::SynthConfig cfg;
  cfg.vocab_size_p = 5;
  cfg.vocab_size_a = 4;
  cfg.train_sentences = 20;
  auto out = synth::generate(cfg);
  auto model = fixtures::prototype_model(out.truth.prototypes_p, out.truth.rest_prototype, out.primary.train.vocabulary, 8.0);

  SUBCASE("empty corpus") {
    Corpus empty;
    empty.vocabulary = out.primary.train.vocabulary;
    auto d = build_dictionary(empty, model);
    CHECK(d.total() == 0);
    CHECK(d.entries.empty());
  }
  SUBCASE("single sample with one sign") {
    Corpus one;
    one.vocabulary = out.primary.train.vocabulary;
    Sample s = out.primary.train.samples[0];
    s.label.resize(1);
    s.gt_boundaries.reset();
    s.features = s.features.slice(0, (*out.primary.train.samples[0].gt_boundaries)[0].end + 1, "one");
    one.samples.push_back(s);
    auto d = build_dictionary(one, model);
    CHECK(d.total() == 1);
    CHECK(d.count(s.label[0]) == 1);
  }
  SUBCASE("segment count equals total label length; infeasible samples are skipped") {
    Corpus c = out.primary.train;
    Sample bad;
    bad.features = FeatureSequence("short", 2, cfg.feature_dim, std::vector<float>(2 * 16, 0.0f));
    bad.label = {1, 1};
    bad.language_tag = "P";
    c.samples.push_back(bad);
    auto d = build_dictionary(c, model);
    std::size_t n = 0;
    for (const auto& s : out.primary.train.samples) n += s.label.size();
    CHECK(d.total() == n);
    REQUIRE(d.skipped.size() == 1);
    CHECK(d.skipped[0] == "short");
    auto again = build_dictionary(c, model);
    CHECK(again.entries == d.entries);
    for (const auto& [g, segs] : d.entries) {
      for (const auto& s : segs) {
        CHECK(s.gloss_id == g);
        CHECK(c.samples[s.sample_index].label[static_cast<std::size_t>(s.occurrence)] == g);
      }
    }
  }
  SUBCASE("head vocabulary must cover the corpus") {
    Corpus a = out.auxiliary.train;
    CHECK(code_of([&] { build_dictionary(a, model); }) == ErrorCode::kUnknownLanguage);
  }
}

TEST_CASE("prototype-aligned model segments synthetic sentences near ground truth") {
  auto out = synth::generate(synth::SynthConfig{});
  const Corpus& c = out.primary.dev;
  auto model = fixtures::prototype_model(out.truth.prototypes_p, out.truth.rest_prototype, c.vocabulary, 8.0);
  auto d = build_dictionary(c, model);
  int good = 0, total = 0;
  double len = 0.0;
  for (const Segment* s : d.all()) {
    const auto gt = (*c.samples[s->sample_index].gt_boundaries)[static_cast<std::size_t>(s->occurrence)];
    good += iou(s->start, s->end, gt.start, gt.end) >= 0.5;
    len += s->length();
    ++total;
  }
  REQUIRE(total > 0);
  CHECK(static_cast<double>(good) / total >= 0.9);
  CHECK(len / total >= 6.0);
  CHECK(len / total <= 12.0);
}

TEST_CASE("frequency filter") {
  SignDictionary d;
  d.vocabulary = Vocabulary({"a", "b"}, "P");
  for (int i = 0; i < 5; ++i) d.add({"s", 0, 0, 0, 0, 1, 0.0});
  for (int i = 0; i < 9; ++i) d.add({"s", 0, 1, 0, 0, 1, 0.0});
  auto f = filter_by_frequency(d, 8);
  CHECK(f.count(0) == 0);
  CHECK(f.count(1) == 9);
  CHECK(filter_by_frequency(d, 1).entries == d.entries);
  CHECK(d.count(0) == 5);
  CHECK(code_of([&] { filter_by_frequency(d, 0); }) == ErrorCode::kInvalidArgument);
}

TEST_CASE("dictionary files round-trip and rebind to their corpus") {
  testutil::TempDir tmp;
  synth::SynthConfig cfg;
  cfg.vocab_size_p = 6;
  cfg.vocab_size_a = 4;
  cfg.train_sentences = 10;
  auto out = synth::generate(cfg);
  auto model = fixtures::prototype_model(out.truth.prototypes_p, out.truth.rest_prototype, out.primary.train.vocabulary, 8.0);
  auto d = build_dictionary(out.primary.train, model);
  d.source = "somewhere";
  save_dictionary(d, tmp.path());
  auto back = load_dictionary(tmp.path());
  CHECK(back.vocabulary == d.vocabulary);
  CHECK(back.source == "somewhere");
  CHECK(back.total() == d.total());
  bind_corpus(back, out.primary.train);
  for (const auto& [g, segs] : d.entries) {
    for (std::size_t i = 0; i < segs.size(); ++i) {
      CHECK(back.entries.at(g)[i].sample_index == segs[i].sample_index);
      CHECK(back.entries.at(g)[i].end == segs[i].end);
    }
  }
  const Segment& s = *d.all().front();
  auto clip = segment_features(out.primary.train, s);
  CHECK(clip.frames() == s.length());

  auto stats = testutil::read_file(tmp / "stats.tsv");
  CHECK(std::count(stats.begin(), stats.end(), '\n') == 7);
  CHECK(code_of([&] { bind_corpus(back, out.auxiliary.train); }) == ErrorCode::kFormat);
}

TEST_CASE("ISLR clips are centered into the fixed window") {
  std::vector<float> data;
  for (int t = 0; t < 5; ++t) data.push_back(static_cast<float>(t));
  FeatureSequence clip("c", 5, 1, data);
  auto padded = fit_window(clip, 9);
  CHECK(padded.data() == std::vector<float>{0, 0, 0, 1, 2, 3, 4, 4, 4});
  auto cut = fit_window(clip, 2);
  CHECK(cut.data() == std::vector<float>{1, 2});
  CHECK(fit_window(clip, 5) == clip);
  CHECK(kIslrWindow == 16);
}
