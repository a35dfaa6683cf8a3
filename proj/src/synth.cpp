#include "xsl/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "json.hpp"

namespace xsl::synth {

using nlohmann::ordered_json;

void SynthConfig::validate() const {
  auto fail = [](const std::string& what) { throw Error(ErrorCode::kInvalidArgument, "synth config: " + what); };
  if (vocab_size_p < 1 || vocab_size_a < 1) fail("vocabulary sizes must be positive");
  if (!(overlap_fraction >= 0.0 && overlap_fraction <= 1.0)) fail("overlap_fraction must be in [0,1]");
  if (shared_count() > vocab_size_p) fail("overlap_fraction * vocab_size_a exceeds vocab_size_p");
  if (feature_dim < 1) fail("feature_dim must be positive");
  if (clip_len_mean < 1 || clip_len_jitter < 0) fail("clip length must be positive");
  if (blank_gap_mean < 1) fail("blank_gap_mean must be at least 1");
  if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma)) fail("noise_sigma must be finite and >= 0");
  if (train_sentences < 0 || dev_sentences < 0 || test_sentences < 0) fail("sentence counts must be >= 0");
  if (sentence_len_min < 1 || sentence_len_max < sentence_len_min) fail("bad sentence length range");
  if (!(zipf_exponent >= 0.0)) fail("zipf_exponent must be >= 0");
}

int SynthConfig::shared_count() const {
  return static_cast<int>(std::lround(overlap_fraction * static_cast<double>(vocab_size_a)));
}

namespace {

RowVector unit_vector(Rng& rng, int dim) {
  RowVector v(dim);
  do {
    for (int i = 0; i < dim; ++i) v(i) = rng.normal();
  } while (v.norm() < 1e-9);
  return v / v.norm();
}

// Zipf weights over a random rank order, as a cumulative table.
std::vector<double> zipf_cdf(int n, double exponent, Rng rng) {
  std::vector<int> rank(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) rank[static_cast<std::size_t>(i)] = i + 1;
  rng.shuffle(rank);
  std::vector<double> cdf(static_cast<std::size_t>(n));
  double total = 0.0;
  for (int g = 0; g < n; ++g) {
    total += std::pow(static_cast<double>(rank[static_cast<std::size_t>(g)]), -exponent);
    cdf[static_cast<std::size_t>(g)] = total;
  }
  for (auto& c : cdf) c /= total;
  return cdf;
}

GlossId draw(const std::vector<double>& cdf, Rng& rng) {
  const double u = rng.uniform();
  auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
  if (it == cdf.end()) --it;
  return static_cast<GlossId>(it - cdf.begin());
}

struct LanguageSpec {
  std::string tag;
  Vocabulary vocabulary;
  const Matrix* prototypes;
  std::vector<double> cdf;
};

void emit_frames(std::vector<float>& data, const RowVector& prototype, int count, double sigma, Rng& rng) {
  for (int f = 0; f < count; ++f) {
    for (Eigen::Index j = 0; j < prototype.size(); ++j) {
      data.push_back(static_cast<float>(prototype(j) + sigma * rng.normal()));
    }
  }
}

Sample make_sentence(const SynthConfig& cfg, const LanguageSpec& lang, const RowVector& rest, const std::string& id,
                     Rng rng) {
  const int lo_gap = 1, hi_gap = 2 * cfg.blank_gap_mean - 1;
  const int lo_clip = std::max(1, cfg.clip_len_mean - cfg.clip_len_jitter);
  const int hi_clip = cfg.clip_len_mean + cfg.clip_len_jitter;

  Sample s;
  s.language_tag = lang.tag;
  const int n = rng.uniform_int(cfg.sentence_len_min, cfg.sentence_len_max);
  std::vector<float> data;
  std::vector<Interval> bounds;
  int t = 0;
  for (int i = 0; i <= n; ++i) {
    const int gap = rng.uniform_int(lo_gap, hi_gap);
    emit_frames(data, rest, gap, cfg.noise_sigma, rng);
    t += gap;
    if (i == n) break;
    const GlossId g = draw(lang.cdf, rng);
    const int len = rng.uniform_int(lo_clip, hi_clip);
    emit_frames(data, lang.prototypes->row(g), len, cfg.noise_sigma, rng);
    s.label.push_back(g);
    bounds.push_back({t, t + len});
    t += len;
  }
  s.features = FeatureSequence(id, t, cfg.feature_dim, std::move(data));
  s.gt_boundaries = std::move(bounds);
  return s;
}

Corpus make_split(const SynthConfig& cfg, const LanguageSpec& lang, const RowVector& rest, SplitTag split,
                  int sentences, const Rng& root) {
  Corpus c;
  c.vocabulary = lang.vocabulary;
  c.split = split;
  const std::string prefix = lang.tag + "-" + std::string(split_name(split));
  const Rng stream = root.split(prefix);
  c.samples.reserve(static_cast<std::size_t>(sentences));
  for (int i = 0; i < sentences; ++i) {
    char id[64];
    std::snprintf(id, sizeof id, "%s-%05d", prefix.c_str(), i);
    c.samples.push_back(make_sentence(cfg, lang, rest, id, stream.split(static_cast<std::uint64_t>(i))));
  }
  return c;
}

std::vector<std::string> gloss_names(const std::string& tag, int n) {
  std::vector<std::string> out;
  for (int i = 0; i < n; ++i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%s%03d", tag.c_str(), i);
    out.emplace_back(buf);
  }
  return out;
}

}  // namespace

SynthOutput generate(const SynthConfig& config) {
  config.validate();
  const Rng root(config.seed);
  const int d = config.feature_dim;

  SynthOutput out;
  GroundTruth& truth = out.truth;
  Rng proto_rng = root.split("prototypes");
  truth.rest_prototype = unit_vector(proto_rng, d);
  truth.prototypes_p.resize(config.vocab_size_p, d);
  for (int g = 0; g < config.vocab_size_p; ++g) truth.prototypes_p.row(g) = unit_vector(proto_rng, d);

  // Which A glosses are shared and with which P gloss.
  Rng share_rng = root.split("sharing");
  std::vector<GlossId> a_ids(static_cast<std::size_t>(config.vocab_size_a));
  for (int i = 0; i < config.vocab_size_a; ++i) a_ids[static_cast<std::size_t>(i)] = i;
  std::vector<GlossId> p_ids(static_cast<std::size_t>(config.vocab_size_p));
  for (int i = 0; i < config.vocab_size_p; ++i) p_ids[static_cast<std::size_t>(i)] = i;
  share_rng.shuffle(a_ids);
  share_rng.shuffle(p_ids);
  for (int k = 0; k < config.shared_count(); ++k) {
    truth.true_map[a_ids[static_cast<std::size_t>(k)]] = p_ids[static_cast<std::size_t>(k)];
  }

  truth.prototypes_a.resize(config.vocab_size_a, d);
  for (int g = 0; g < config.vocab_size_a; ++g) {
    auto it = truth.true_map.find(g);
    truth.prototypes_a.row(g) = it != truth.true_map.end() ? RowVector(truth.prototypes_p.row(it->second))
                                                           : unit_vector(proto_rng, d);
  }

  const LanguageSpec p{"P", Vocabulary(gloss_names("P", config.vocab_size_p), "P"), &truth.prototypes_p,
                       zipf_cdf(config.vocab_size_p, config.zipf_exponent, root.split("zipf-P"))};
  const LanguageSpec a{"A", Vocabulary(gloss_names("A", config.vocab_size_a), "A"), &truth.prototypes_a,
                       zipf_cdf(config.vocab_size_a, config.zipf_exponent, root.split("zipf-A"))};
  for (auto [spec, target] : {std::pair{&p, &out.primary}, std::pair{&a, &out.auxiliary}}) {
    target->train = make_split(config, *spec, truth.rest_prototype, SplitTag::kTrain, config.train_sentences, root);
    target->dev = make_split(config, *spec, truth.rest_prototype, SplitTag::kDev, config.dev_sentences, root);
    target->test = make_split(config, *spec, truth.rest_prototype, SplitTag::kTest, config.test_sentences, root);
  }
  return out;
}

Corpus degrade_primary(const Corpus& train, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw Error(ErrorCode::kInvalidArgument, "fraction must be in (0,1]");
  const auto n = train.size();
  const auto keep = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
  if (keep == 0) throw Error(ErrorCode::kEmptyInput, "degraded corpus would be empty");
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng(seed).split("degrade").shuffle(order);
  order.resize(keep);
  std::sort(order.begin(), order.end());
  Corpus out;
  out.vocabulary = train.vocabulary;
  out.split = train.split;
  for (auto i : order) out.samples.push_back(train.samples[i]);
  return out;
}

namespace {

ordered_json matrix_json(const Matrix& m) {
  ordered_json rows = ordered_json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    ordered_json row = ordered_json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

Matrix json_matrix(const ordered_json& j) {
  const auto rows = static_cast<Eigen::Index>(j.size());
  const auto cols = rows > 0 ? static_cast<Eigen::Index>(j[0].size()) : 0;
  Matrix m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    if (static_cast<Eigen::Index>(j[static_cast<std::size_t>(r)].size()) != cols) {
      throw Error(ErrorCode::kFormat, "ragged matrix in truth.json");
    }
    for (Eigen::Index c = 0; c < cols; ++c) {
      m(r, c) = j[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)].get<double>();
    }
  }
  return m;
}

}  // namespace

void save_synth(const SynthOutput& out, const std::filesystem::path& dir) {
  ordered_json boundaries = ordered_json::object();
  for (const auto* lang : {&out.primary, &out.auxiliary}) {
    for (const Corpus* c : {&lang->train, &lang->dev, &lang->test}) {
      save_corpus(*c, dir / c->language_tag() / std::string(split_name(c->split)));
      for (const auto& s : c->samples) {
        ordered_json b = ordered_json::array();
        for (const auto& iv : *s.gt_boundaries) b.push_back({iv.start, iv.end});
        boundaries[s.features.id()] = std::move(b);
      }
    }
  }
  ordered_json truth;
  ordered_json map = ordered_json::array();
  for (const auto& [a, p] : out.truth.true_map) map.push_back({a, p});
  truth["true_map"] = std::move(map);
  truth["boundaries"] = std::move(boundaries);
  truth["prototypes_p"] = matrix_json(out.truth.prototypes_p);
  truth["prototypes_a"] = matrix_json(out.truth.prototypes_a);
  truth["rest_prototype"] = matrix_json(Matrix(out.truth.rest_prototype));

  std::ofstream f(dir / "truth.json", std::ios::binary | std::ios::trunc);
  if (!f) throw Error(ErrorCode::kIo, "cannot write " + (dir / "truth.json").string());
  f << truth.dump(1) << '\n';
  if (!f) throw Error(ErrorCode::kIo, "write failed: " + (dir / "truth.json").string());
}

GroundTruth load_truth(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  ordered_json j;
  try {
    j = ordered_json::parse(f);
    GroundTruth t;
    for (const auto& pair : j.at("true_map")) t.true_map[pair.at(0).get<GlossId>()] = pair.at(1).get<GlossId>();
    t.prototypes_p = json_matrix(j.at("prototypes_p"));
    t.prototypes_a = json_matrix(j.at("prototypes_a"));
    t.rest_prototype = json_matrix(j.at("rest_prototype"));
    return t;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kFormat, path.string() + ": " + e.what());
  }
}

}  // namespace xsl::synth
