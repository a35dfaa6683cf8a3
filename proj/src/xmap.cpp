#include "xsl/xmap.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

namespace xsl::xmap {

std::string_view level_name(MapLevel level) { return level == MapLevel::kClass ? "class" : "instance"; }

std::string_view strategy_name(MapStrategy strategy) {
  return strategy == MapStrategy::kPrediction ? "prediction" : "weight";
}

MapLevel parse_level(std::string_view name) {
  if (name == "class") return MapLevel::kClass;
  if (name == "instance") return MapLevel::kInstance;
  throw Error(ErrorCode::kInvalidArgument, "unknown mapping level '" + std::string(name) + "'");
}

MapStrategy parse_strategy(std::string_view name) {
  if (name == "prediction") return MapStrategy::kPrediction;
  if (name == "weight") return MapStrategy::kWeightMatrix;
  throw Error(ErrorCode::kInvalidArgument, "unknown mapping strategy '" + std::string(name) + "'");
}

namespace {

RowVector softmax(const RowVector& logits) {
  const double hi = logits.maxCoeff();
  RowVector e = (logits.array() - hi).exp();
  return e / e.sum();
}

MapEntry entry_from(const RowVector& probs, int n_instances) {
  MapEntry e;
  Eigen::Index best;
  e.confidence = probs.maxCoeff(&best);  // first maximum, i.e. smallest id on ties
  e.target = static_cast<GlossId>(best);
  e.mapped = true;
  e.n_instances = n_instances;
  return e;
}

}  // namespace

RowVector cross_lingual_posterior(const net::ModelParams& model, const FeatureSequence& clip,
                                  const std::string& target_lang) {
  return softmax(net::islr_logits(model, clip, target_lang));
}

std::vector<InstancePosterior> instance_posteriors(const net::ModelParams& model,
                                                   const lexicon::SignDictionary& dict_a, const Corpus& corpus_a,
                                                   const std::string& target_lang, int window) {
  std::vector<InstancePosterior> out;
  for (const lexicon::Segment* s : dict_a.all()) {
    out.push_back({s, cross_lingual_posterior(model, lexicon::isolated_clip(corpus_a, *s, window), target_lang)});
  }
  return out;
}

CrossLingualMapping class_level_map(const std::vector<InstancePosterior>& posteriors, const Vocabulary& source,
                                    const Vocabulary& target) {
  CrossLingualMapping map;
  map.level = MapLevel::kClass;
  map.strategy = MapStrategy::kPrediction;
  map.source = source;
  map.target = target;
  const auto n_src = source.size();
  const auto n_dst = static_cast<Eigen::Index>(target.size());
  std::vector<RowVector> sums(n_src, RowVector::Zero(n_dst));
  std::vector<int> counts(n_src, 0);
  for (const auto& ip : posteriors) {
    const GlossId g = ip.segment->gloss_id;
    if (!source.contains(g)) throw Error(ErrorCode::kVocabularyViolation, "segment gloss outside source vocabulary");
    if (ip.probs.size() != n_dst) throw Error(ErrorCode::kDimensionMismatch, "posterior size != target vocabulary");
    sums[static_cast<std::size_t>(g)] += ip.probs;
    ++counts[static_cast<std::size_t>(g)];
  }
  map.class_map.resize(n_src);
  for (std::size_t g = 0; g < n_src; ++g) {
    if (counts[g] == 0) continue;
    map.class_map[g] = entry_from(sums[g] / static_cast<double>(counts[g]), counts[g]);
  }
  return map;
}

CrossLingualMapping instance_level_map(const std::vector<InstancePosterior>& posteriors, const Vocabulary& source,
                                       const Vocabulary& target) {
  CrossLingualMapping map = class_level_map(posteriors, source, target);
  map.level = MapLevel::kInstance;
  for (const auto& ip : posteriors) {
    map.instance_map[{ip.segment->sample_id, ip.segment->occurrence}] = entry_from(ip.probs, 1);
  }
  return map;
}

CrossLingualMapping class_level_map(const lexicon::SignDictionary& dict_a, const Corpus& corpus_a,
                                    const net::ModelParams& model, const std::string& target_lang) {
  return class_level_map(instance_posteriors(model, dict_a, corpus_a, target_lang), dict_a.vocabulary,
                         model.islr_head(target_lang).vocabulary);
}

CrossLingualMapping instance_level_map(const lexicon::SignDictionary& dict_a, const Corpus& corpus_a,
                                       const net::ModelParams& model, const std::string& target_lang) {
  return instance_level_map(instance_posteriors(model, dict_a, corpus_a, target_lang), dict_a.vocabulary,
                            model.islr_head(target_lang).vocabulary);
}

Matrix weight_similarity(const net::ClassifierHead& head_a, const net::ClassifierHead& head_p) {
  if (head_a.weight.cols() != head_p.weight.cols()) {
    throw Error(ErrorCode::kDimensionMismatch, "heads differ in embedding dimension");
  }
  Matrix s = head_a.weight * head_p.weight.transpose();
  for (Eigen::Index r = 0; r < s.rows(); ++r) s.row(r) = softmax(s.row(r));
  return s;
}

CrossLingualMapping weight_matrix_map(const net::ClassifierHead& head_a, const net::ClassifierHead& head_p) {
  Matrix s = weight_similarity(head_a, head_p);
  CrossLingualMapping map;
  map.level = MapLevel::kClass;
  map.strategy = MapStrategy::kWeightMatrix;
  map.source = head_a.vocabulary;
  map.target = head_p.vocabulary;
  for (Eigen::Index r = 0; r < s.rows(); ++r) map.class_map.push_back(entry_from(s.row(r), 0));
  return map;
}

CrossLingualMapping apply_threshold(CrossLingualMapping map, double tau) {
  if (!(tau >= 0.0 && tau <= 1.0)) throw Error(ErrorCode::kInvalidArgument, "threshold must be in [0,1]");
  map.threshold = tau;
  auto apply = [tau](MapEntry& e) { e.mapped = e.target.has_value() && e.confidence > tau; };
  for (auto& e : map.class_map) apply(e);
  for (auto& [k, e] : map.instance_map) apply(e);
  return map;
}

std::string preserved_gloss_name(const Vocabulary& source, GlossId g) {
  return source.language_tag() + ":" + source.gloss(g);
}

RemapResult remap_corpus(const Corpus& corpus_a, const CrossLingualMapping& map) {
  if (!(corpus_a.vocabulary == map.source)) {
    throw Error(ErrorCode::kVocabularyMismatch, "corpus vocabulary differs from the mapping source vocabulary");
  }
  RemapResult result;
  // Resolve every occurrence first; preserved ids are assigned afterwards.
  std::vector<std::vector<const MapEntry*>> resolved(corpus_a.size());
  std::set<GlossId> preserved;
  for (std::size_t n = 0; n < corpus_a.size(); ++n) {
    const Sample& s = corpus_a.samples[n];
    for (std::size_t i = 0; i < s.label.size(); ++i) {
      const GlossId g = s.label[i];
      if (!map.source.contains(g) || static_cast<std::size_t>(g) >= map.class_map.size()) {
        throw Error(ErrorCode::kVocabularyViolation, "mapping does not cover gloss id " + std::to_string(g));
      }
      const MapEntry* e = &map.class_map[static_cast<std::size_t>(g)];
      if (map.level == MapLevel::kInstance) {
        auto it = map.instance_map.find({s.features.id(), static_cast<int>(i)});
        if (it != map.instance_map.end()) {
          e = &it->second;
        } else {
          ++result.fallback_occurrences;
        }
      }
      if (e->mapped) {
        ++result.mapped_occurrences;
      } else {
        ++result.preserved_occurrences;
        preserved.insert(g);
      }
      resolved[n].push_back(e);
    }
  }

  std::vector<std::string> glosses = map.target.glosses();
  std::map<GlossId, GlossId> preserved_id;
  for (GlossId g : preserved) {
    preserved_id[g] = static_cast<GlossId>(glosses.size());
    glosses.push_back(preserved_gloss_name(map.source, g));
    result.preserved.push_back(g);
  }
  const std::string& lang = map.target.language_tag();
  result.vocabulary = Vocabulary(glosses, lang);

  result.corpus.vocabulary = result.vocabulary;
  result.corpus.split = corpus_a.split;
  for (std::size_t n = 0; n < corpus_a.size(); ++n) {
    Sample s = corpus_a.samples[n];
    s.language_tag = lang;
    for (std::size_t i = 0; i < s.label.size(); ++i) {
      const MapEntry* e = resolved[n][i];
      s.label[i] = e->mapped ? *e->target : preserved_id.at(s.label[i]);
    }
    result.corpus.samples.push_back(std::move(s));
  }
  return result;
}

namespace {

std::string format_confidence(double c) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", c);
  return buf;
}

std::filesystem::path instances_path(const std::filesystem::path& path) {
  return std::filesystem::path(path.string() + ".instances.tsv");
}

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, '\t')) out.push_back(cell);
  if (!line.empty() && line.back() == '\t') out.emplace_back();
  return out;
}

int parse_int(const std::string& s, const std::string& what) {
  try {
    std::size_t pos = 0;
    int v = std::stoi(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw Error(ErrorCode::kFormat, "bad " + what + " '" + s + "' in mapping report");
  }
}

double parse_double(const std::string& s) {
  try {
    std::size_t pos = 0;
    double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw Error(ErrorCode::kFormat, "bad confidence '" + s + "' in mapping report");
  }
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  f << text;
  if (!f) throw Error(ErrorCode::kIo, "write failed: " + path.string());
}

}  // namespace

std::string mapping_tsv(const CrossLingualMapping& map) {
  std::ostringstream out;
  out << "src_id\tsrc_gloss\tdst_id\tdst_gloss\tconfidence\tmapped\tn_instances\n";
  for (std::size_t g = 0; g < map.class_map.size(); ++g) {
    const MapEntry& e = map.class_map[g];
    out << g << '\t' << map.source.gloss(static_cast<GlossId>(g)) << '\t' << (e.target ? *e.target : -1) << '\t'
        << (e.target ? map.target.gloss(*e.target) : "") << '\t' << format_confidence(e.confidence) << '\t'
        << (e.mapped ? "true" : "false") << '\t' << e.n_instances << '\n';
  }
  return out.str();
}

void save_mapping(const CrossLingualMapping& map, const std::filesystem::path& path) {
  write_text(path, mapping_tsv(map));
  if (map.level != MapLevel::kInstance) return;
  std::ostringstream out;
  out << "sample_id\tocc\tdst_id\tconfidence\tmapped\n";
  for (const auto& [key, e] : map.instance_map) {
    out << key.first << '\t' << key.second << '\t' << *e.target << '\t' << format_confidence(e.confidence) << '\t'
        << (e.mapped ? "true" : "false") << '\n';
  }
  write_text(instances_path(path), out.str());
}

CrossLingualMapping load_mapping(const std::filesystem::path& path, const Vocabulary& source,
                                 const Vocabulary& target) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  CrossLingualMapping map;
  map.source = source;
  map.target = target;
  map.class_map.resize(source.size());
  std::vector<bool> seen(source.size(), false);
  auto parse_bool = [](const std::string& s) {
    if (s == "true") return true;
    if (s == "false") return false;
    throw Error(ErrorCode::kFormat, "bad mapped flag '" + s + "' in mapping report");
  };
  std::string line;
  std::getline(f, line);
  if (line.rfind("src_id\t", 0) != 0) throw Error(ErrorCode::kFormat, "mapping report lacks its header");
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    auto cells = split_tabs(line);
    if (cells.size() != 7) throw Error(ErrorCode::kFormat, "mapping row must have 7 columns");
    const int src = parse_int(cells[0], "src_id");
    if (!source.contains(src) || seen[static_cast<std::size_t>(src)]) {
      throw Error(ErrorCode::kFormat, "mapping row with invalid or repeated src_id " + cells[0]);
    }
    if (source.gloss(src) != cells[1]) throw Error(ErrorCode::kVocabularyMismatch, "source gloss mismatch: " + cells[1]);
    seen[static_cast<std::size_t>(src)] = true;
    MapEntry e;
    const int dst = parse_int(cells[2], "dst_id");
    if (dst >= 0) {
      if (!target.contains(dst) || target.gloss(dst) != cells[3]) {
        throw Error(ErrorCode::kVocabularyMismatch, "target gloss mismatch: " + cells[3]);
      }
      e.target = dst;
    }
    e.confidence = parse_double(cells[4]);
    e.mapped = parse_bool(cells[5]);
    e.n_instances = parse_int(cells[6], "n_instances");
    if (e.mapped && !e.target) throw Error(ErrorCode::kFormat, "mapped row without target");
    map.class_map[static_cast<std::size_t>(src)] = e;
  }
  for (std::size_t g = 0; g < seen.size(); ++g) {
    if (!seen[g]) throw Error(ErrorCode::kFormat, "mapping report lacks source gloss " + source.gloss(static_cast<GlossId>(g)));
  }

  std::ifstream inst(instances_path(path), std::ios::binary);
  if (inst) {
    map.level = MapLevel::kInstance;
    std::getline(inst, line);
    while (std::getline(inst, line)) {
      if (line.empty()) continue;
      auto cells = split_tabs(line);
      if (cells.size() != 5) throw Error(ErrorCode::kFormat, "instance row must have 5 columns");
      MapEntry e;
      const int dst = parse_int(cells[2], "dst_id");
      if (!target.contains(dst)) throw Error(ErrorCode::kFormat, "instance target out of range");
      e.target = dst;
      e.confidence = parse_double(cells[3]);
      e.mapped = parse_bool(cells[4]);
      e.n_instances = 1;
      map.instance_map[{cells[0], parse_int(cells[1], "occ")}] = e;
    }
  }
  return map;
}

}  // namespace xsl::xmap
