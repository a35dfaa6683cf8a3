#include <cmath>
#include <set>

#include "doctest.h"
#include "fixtures.hpp"
#include "test_util.hpp"
#include "xsl/synth.hpp"
#include "xsl/xmap.hpp"

using namespace xsl;
using namespace xsl::xmap;
using testutil::code_of;

namespace {

RowVector row(std::initializer_list<double> v) {
  RowVector r(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) r(i++) = x;
  return r;
}

lexicon::Segment seg(const std::string& id, int occ, GlossId g) {
  lexicon::Segment s;
  s.sample_id = id;
  s.occurrence = occ;
  s.gloss_id = g;
  s.end = 1;
  return s;
}

net::ClassifierHead head(const Matrix& w, const Vocabulary& v) {
  net::ClassifierHead h;
  h.weight = w;
  h.bias = Matrix::Zero(1, w.rows());
  h.vocabulary = v;
  return h;
}

const Vocabulary kSrc({"x", "y", "z"}, "A");
const Vocabulary kDst({"p", "q"}, "P");

// Synthetic world with oracle models: CSLR heads and ISLR heads score by prototype.
struct World {
  synth::SynthOutput data;
  net::ModelParams model;
  lexicon::SignDictionary dict_a;
};

World make_world(double sigma, std::uint64_t seed) {
  synth::SynthConfig cfg;
  cfg.noise_sigma = sigma;
  cfg.train_sentences = 120;
  cfg.seed = seed;
  World w;
  w.data = synth::generate(cfg);
  const auto& t = w.data.truth;
  net::ModelParams a = fixtures::prototype_model(t.prototypes_a, t.rest_prototype, w.data.auxiliary.train.vocabulary, 20.0);
  w.dict_a = lexicon::build_dictionary(w.data.auxiliary.train, a);
  w.model = a;
  net::add_islr_head(w.model, w.data.primary.train.vocabulary, Rng(1));
  net::add_islr_head(w.model, w.data.auxiliary.train.vocabulary, Rng(1));
  w.model.islr_heads.at("P").weight = t.prototypes_p * 20.0;
  w.model.islr_heads.at("P").bias.setZero();
  w.model.islr_heads.at("A").weight = t.prototypes_a * 20.0;
  w.model.islr_heads.at("A").bias.setZero();
  return w;
}

}  // namespace

TEST_CASE("zero P head gives a uniform cross-lingual posterior") {
  net::EncoderConfig c;
  c.input_dim = 3;
  net::ModelParams m = net::init_model(c, Rng(1));
  net::add_islr_head(m, Vocabulary({"a", "b", "c", "d"}, "P"), Rng(2));
  m = m.zeros_like();
  FeatureSequence clip("c", 4, 3, std::vector<float>(12, 0.5f));
  RowVector p = cross_lingual_posterior(m, clip, "P");
  for (int k = 0; k < 4; ++k) CHECK(p(k) == doctest::Approx(0.25));
  CHECK(code_of([&] { cross_lingual_posterior(m, clip, "A"); }) == ErrorCode::kUnknownLanguage);
}

TEST_CASE("identical heads map an A prototype to its own row") {
  Matrix protos = Matrix::Identity(5, 8);
  Vocabulary va({"a0", "a1", "a2", "a3", "a4"}, "A"), vp({"p0", "p1", "p2", "p3", "p4"}, "P");
  net::ModelParams m = fixtures::prototype_model(protos, RowVector::Zero(8), vp, 1.0);
  net::add_islr_head(m, va, Rng(0));
  net::add_islr_head(m, vp, Rng(0));
  m.islr_heads.at("A").weight = protos * 4.0;
  m.islr_heads.at("P").weight = protos * 4.0;
  for (auto& [k, h] : m.islr_heads) h.bias.setZero();
  for (int g = 0; g < 5; ++g) {
    std::vector<float> data;
    for (int t = 0; t < 3; ++t) {
      for (int j = 0; j < 8; ++j) data.push_back(static_cast<float>(protos(g, j)));
    }
    Eigen::Index best;
    cross_lingual_posterior(m, FeatureSequence("c", 3, 8, data), "P").maxCoeff(&best);
    CHECK(best == g);
  }
}

TEST_CASE("class level averages instance posteriors") {
  auto s0 = seg("u", 0, 1), s1 = seg("v", 0, 1), s2 = seg("w", 0, 0);
  std::vector<InstancePosterior> ip{{&s0, row({0.6, 0.4})}, {&s1, row({0.2, 0.8})}, {&s2, row({0.7, 0.3})}};
  auto map = class_level_map(ip, kSrc, kDst);
  REQUIRE(map.class_map.size() == 3);
  CHECK(*map.class_map[1].target == 1);
  CHECK(map.class_map[1].confidence == doctest::Approx(0.6));
  CHECK(map.class_map[1].n_instances == 2);
  CHECK(*map.class_map[0].target == 0);
  CHECK(map.class_map[0].confidence == 0.7);
  CHECK_FALSE(map.class_map[2].target.has_value());
  CHECK_FALSE(map.class_map[2].mapped);

  auto inst = instance_level_map(ip, kSrc, kDst);
  CHECK(*inst.instance_map.at({"u", 0}).target == 0);
  CHECK(*inst.instance_map.at({"v", 0}).target == 1);
  CHECK(inst.class_map == map.class_map);
}

TEST_CASE("instance level: one-hot posterior gives confidence 1") {
  auto s0 = seg("u", 2, 0);
  auto m = instance_level_map({{&s0, row({0.0, 1.0})}}, kSrc, kDst);
  CHECK(*m.instance_map.at({"u", 2}).target == 1);
  CHECK(m.instance_map.at({"u", 2}).confidence == 1.0);
}

TEST_CASE("weight-matrix mapping") {
  Matrix w = Matrix::Identity(3, 4);
  Vocabulary v3({"a", "b", "c"}, "A"), p3({"a", "b", "c"}, "P");
  auto id = weight_matrix_map(head(w * 3.0, v3), head(w * 3.0, p3));
  for (int g = 0; g < 3; ++g) CHECK(*id.class_map[static_cast<std::size_t>(g)].target == g);

  Matrix wp = Matrix::Identity(3, 4);
  Matrix wa = Matrix::Zero(2, 4);
  wa.row(0) = wp.row(2) * 2.0;
  wa(1, 3) = 1.0;  // orthogonal to every P row
  auto twin = weight_matrix_map(head(wa, Vocabulary({"x", "y"}, "A")), head(wp, p3));
  CHECK(*twin.class_map[0].target == 2);
  CHECK(twin.class_map[1].confidence == doctest::Approx(1.0 / 3.0));

  Rng rng(4);
  Matrix ra(5, 6), rp(4, 6);
  for (Eigen::Index i = 0; i < ra.size(); ++i) ra.data()[i] = rng.normal();
  for (Eigen::Index i = 0; i < rp.size(); ++i) rp.data()[i] = rng.normal();
  Matrix sim = weight_similarity(head(ra, Vocabulary({"1", "2", "3", "4", "5"}, "A")),
                                 head(rp, Vocabulary({"1", "2", "3", "4"}, "P")));
  for (int i = 0; i < 5; ++i) {
    double z = 0.0;
    std::vector<double> dots;
    for (int j = 0; j < 4; ++j) {
      double d = 0.0;
      for (int k = 0; k < 6; ++k) d += ra(i, k) * rp(j, k);
      dots.push_back(std::exp(d));
      z += dots.back();
    }
    for (int j = 0; j < 4; ++j) CHECK(sim(i, j) == doctest::Approx(dots[static_cast<std::size_t>(j)] / z).epsilon(1e-12));
  }
  CHECK(code_of([&] { weight_matrix_map(head(Matrix::Zero(2, 3), v3), head(rp, p3)); }) ==
        ErrorCode::kDimensionMismatch);
}

TEST_CASE("thresholds are strict and monotone") {
  auto s0 = seg("u", 0, 0), s1 = seg("v", 0, 1), s2 = seg("w", 0, 2);
  std::vector<InstancePosterior> ip{{&s0, row({0.4, 0.6})}, {&s1, row({0.6, 0.4})}, {&s2, row({0.5, 0.5})}};
  auto m = class_level_map(ip, kSrc, kDst);
  // The first maximum wins ties, so s2 maps to 0 with confidence 0.5.
  auto zero = apply_threshold(m, 0.0);
  for (const auto& e : zero.class_map) CHECK(e.mapped);
  auto half = apply_threshold(m, 0.5);
  CHECK(half.class_map[0].mapped);
  CHECK(half.class_map[1].mapped);
  CHECK_FALSE(half.class_map[2].mapped);
  auto s3 = seg("x", 0, 0), s4 = seg("y", 0, 1);
  auto pair = apply_threshold(class_level_map({{&s3, row({0.6, 0.4})}, {&s4, row({0.4, 0.6})}}, kSrc, kDst), 0.5);
  CHECK(pair.class_map[0].mapped);
  auto one = apply_threshold(m, 1.0);
  for (const auto& e : one.class_map) CHECK_FALSE(e.mapped);
  CHECK(code_of([&] { apply_threshold(m, 1.5); }) == ErrorCode::kInvalidArgument);

  Rng rng(8);
  std::vector<lexicon::Segment> segs;
  for (int i = 0; i < 3; ++i) segs.push_back(seg("s" + std::to_string(i), 0, i));
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<InstancePosterior> r;
    for (auto& s : segs) {
      double a = rng.uniform();
      r.push_back({&s, row({a, 1.0 - a})});
    }
    auto base = class_level_map(r, kSrc, kDst);
    double lo = rng.uniform(), hi = rng.uniform();
    if (lo > hi) std::swap(lo, hi);
    auto ml = apply_threshold(base, lo), mh = apply_threshold(base, hi);
    for (std::size_t g = 0; g < 3; ++g) CHECK((!mh.class_map[g].mapped || ml.class_map[g].mapped));
  }
}

TEST_CASE("cross-lingual argmax is invariant to shifting P logits") {
  World w = make_world(0.1, 3);
  auto shifted = w.model;
  shifted.islr_heads.at("P").bias.array() += 7.5;
  const auto& c = w.data.auxiliary.train;
  int checked = 0;
  for (const auto* s : w.dict_a.all()) {
    auto clip = lexicon::isolated_clip(c, *s);
    RowVector a = cross_lingual_posterior(w.model, clip, "P"), b = cross_lingual_posterior(shifted, clip, "P");
    Eigen::Index ia, ib;
    a.maxCoeff(&ia);
    b.maxCoeff(&ib);
    CHECK(ia == ib);
    CHECK(std::abs(a.sum() - 1.0) < 1e-6);
    if (++checked == 50) break;
  }
}

TEST_CASE("prototype-aware models recover the true map on synthetic data") {
  World w = make_world(0.1, 5);
  const auto& truth = w.data.truth;
  const auto& corpus = w.data.auxiliary.train;
  auto posts = instance_posteriors(w.model, w.dict_a, corpus, "P");
  auto cls = class_level_map(posts, corpus.vocabulary, w.data.primary.train.vocabulary);
  int shared = 0, correct = 0;
  for (auto [a, p] : truth.true_map) {
    const auto& e = cls.class_map[static_cast<std::size_t>(a)];
    if (!e.target) continue;
    ++shared;
    correct += *e.target == p;
  }
  REQUIRE(shared > 10);
  CHECK(static_cast<double>(correct) / shared >= 0.9);

  int clean = 0, clean_hits = 0;
  for (const auto& ip : posts) {
    auto it = truth.true_map.find(ip.segment->gloss_id);
    if (it == truth.true_map.end()) continue;
    Eigen::Index best;
    ip.probs.maxCoeff(&best);
    ++clean;
    clean_hits += best == it->second;
  }
  CHECK(static_cast<double>(clean_hits) / clean >= 0.9);

  auto inst = instance_level_map(posts, corpus.vocabulary, w.data.primary.train.vocabulary);
  std::map<GlossId, std::map<GlossId, int>> votes;
  for (const auto& ip : posts) votes[ip.segment->gloss_id][*inst.instance_map.at({ip.segment->sample_id, ip.segment->occurrence}).target]++;
  int agree = 0;
  for (const auto& [a, v] : votes) {
    auto best = std::max_element(v.begin(), v.end(), [](auto& x, auto& y) { return x.second < y.second; });
    agree += best->first == *cls.class_map[static_cast<std::size_t>(a)].target;
  }
  CHECK(static_cast<double>(agree) / votes.size() >= 0.9);

  auto weight = weight_matrix_map(w.model.islr_head("A"), w.model.islr_head("P"));
  int wcorrect = 0;
  for (auto [a, p] : truth.true_map) wcorrect += *weight.class_map[static_cast<std::size_t>(a)].target == p;
  CHECK(wcorrect == static_cast<int>(truth.true_map.size()));
}

TEST_CASE("remapping rewrites labels only") {
  World w = make_world(0.1, 7);
  const Corpus& corpus = w.data.auxiliary.train;
  const Vocabulary& sp = w.data.primary.train.vocabulary;
  auto posts = instance_posteriors(w.model, w.dict_a, corpus, "P");
  auto cls = class_level_map(posts, corpus.vocabulary, sp);
  // Glosses never segmented have no target; give them one for the all-mapped case.
  for (auto& e : cls.class_map) {
    if (!e.target) e = {0, 0.5, true, 0};
  }

  SUBCASE("all mapped: labels stay inside S_P") {
    auto r = remap_corpus(corpus, apply_threshold(cls, 0.0));
    CHECK(r.vocabulary == sp);
    CHECK(r.preserved.empty());
    CHECK(r.corpus.language_tag() == "P");
    REQUIRE(r.corpus.size() == corpus.size());
    for (std::size_t n = 0; n < corpus.size(); ++n) {
      const auto& a = corpus.samples[n];
      const auto& b = r.corpus.samples[n];
      CHECK(b.features == a.features);
      REQUIRE(b.label.size() == a.label.size());
      for (std::size_t i = 0; i < a.label.size(); ++i) {
        CHECK(b.label[i] == *cls.class_map[static_cast<std::size_t>(a.label[i])].target);
      }
    }
    CHECK_NOTHROW(validate_corpus(r.corpus));
  }
  SUBCASE("tau 1 preserves every label under a re-indexing") {
    auto r = remap_corpus(corpus, apply_threshold(cls, 1.0));
    CHECK(r.vocabulary.extends(sp));
    std::map<GlossId, GlossId> forward;
    for (std::size_t n = 0; n < corpus.size(); ++n) {
      for (std::size_t i = 0; i < corpus.samples[n].label.size(); ++i) {
        const GlossId a = corpus.samples[n].label[i], b = r.corpus.samples[n].label[i];
        CHECK(b >= static_cast<GlossId>(sp.size()));
        CHECK(r.vocabulary.gloss(b) == preserved_gloss_name(corpus.vocabulary, a));
        auto [it, fresh] = forward.emplace(a, b);
        CHECK(it->second == b);
      }
    }
    std::set<GlossId> images;
    for (auto [a, b] : forward) images.insert(b);
    CHECK(images.size() == forward.size());
    CHECK(r.mapped_occurrences == 0);
  }
  SUBCASE("instance level follows each occurrence's segment and falls back otherwise") {
    auto inst = apply_threshold(instance_level_map(posts, corpus.vocabulary, sp), 0.0);
    for (auto& e : inst.class_map) {
      if (!e.target) e = {0, 0.5, true, 0};
    }
    auto erased = inst;
    const auto first = erased.instance_map.begin()->first;
    erased.instance_map.erase(first);
    auto r = remap_corpus(corpus, erased);
    CHECK(r.fallback_occurrences == 1);
    for (std::size_t n = 0; n < corpus.size(); ++n) {
      const auto& s = corpus.samples[n];
      for (std::size_t i = 0; i < s.label.size(); ++i) {
        auto it = erased.instance_map.find({s.features.id(), static_cast<int>(i)});
        const GlossId expect = it != erased.instance_map.end() ? *it->second.target
                                                              : *erased.class_map[static_cast<std::size_t>(s.label[i])].target;
        CHECK(r.corpus.samples[n].label[i] == expect);
      }
    }
  }
  SUBCASE("source vocabulary must match") {
    Corpus other = w.data.primary.train;
    CHECK(code_of([&] { remap_corpus(other, cls); }) == ErrorCode::kVocabularyMismatch);
  }
}

TEST_CASE("mapping reports round-trip through TSV") {
  testutil::TempDir tmp;
  auto s0 = seg("u", 0, 0), s1 = seg("v", 1, 0);
  std::vector<InstancePosterior> ip{{&s0, row({0.3, 0.7})}, {&s1, row({0.9, 0.1})}};
  auto m = apply_threshold(instance_level_map(ip, kSrc, kDst), 0.65);
  save_mapping(m, tmp / "map.tsv");
  auto text = testutil::read_file(tmp / "map.tsv");
  CHECK(std::count(text.begin(), text.end(), '\n') == 1 + 3);
  CHECK(text.rfind("src_id\tsrc_gloss\tdst_id\tdst_gloss\tconfidence\tmapped\tn_instances\n", 0) == 0);
  auto back = load_mapping(tmp / "map.tsv", kSrc, kDst);
  CHECK(back.level == MapLevel::kInstance);
  CHECK(back.class_map == m.class_map);
  CHECK(back.instance_map == m.instance_map);

  auto cls = class_level_map(ip, kSrc, kDst);
  save_mapping(cls, tmp / "cls.tsv");
  CHECK(load_mapping(tmp / "cls.tsv", kSrc, kDst).level == MapLevel::kClass);
  CHECK(code_of([&] { load_mapping(tmp / "cls.tsv", Vocabulary({"x", "y"}, "A"), kDst); }) == ErrorCode::kFormat);
  testutil::write_file(tmp / "bad.tsv", "nonsense\n");
  CHECK(code_of([&] { load_mapping(tmp / "bad.tsv", kSrc, kDst); }) == ErrorCode::kFormat);
}
