#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "xsl/core.hpp"
#include "xsl/lexicon.hpp"
#include "xsl/net.hpp"

namespace xsl::xmap {

enum class MapLevel { kClass, kInstance };
enum class MapStrategy { kPrediction, kWeightMatrix };

std::string_view level_name(MapLevel level);
std::string_view strategy_name(MapStrategy strategy);
MapLevel parse_level(std::string_view name);
MapStrategy parse_strategy(std::string_view name);

struct MapEntry {
  std::optional<GlossId> target;  // empty when the source has no evidence
  double confidence = 0.0;
  bool mapped = false;  // target present and confidence above the threshold
  int n_instances = 0;

  bool operator==(const MapEntry&) const = default;
};

// (sample id, occurrence index)
using InstanceKey = std::pair<std::string, int>;

struct CrossLingualMapping {
  MapLevel level = MapLevel::kClass;
  MapStrategy strategy = MapStrategy::kPrediction;
  Vocabulary source;
  Vocabulary target;
  std::vector<MapEntry> class_map;  // indexed by source gloss id
  std::map<InstanceKey, MapEntry> instance_map;
  double threshold = 0.0;
};

// softmax of the target-language ISLR head on one clip.
RowVector cross_lingual_posterior(const net::ModelParams& model, const FeatureSequence& clip,
                                  const std::string& target_lang);

struct InstancePosterior {
  const lexicon::Segment* segment;
  RowVector probs;
};

std::vector<InstancePosterior> instance_posteriors(const net::ModelParams& model,
                                                   const lexicon::SignDictionary& dict_a, const Corpus& corpus_a,
                                                   const std::string& target_lang,
                                                   int window = lexicon::kIslrWindow);

// Mean posterior per source gloss, then argmax.
CrossLingualMapping class_level_map(const std::vector<InstancePosterior>& posteriors, const Vocabulary& source,
                                    const Vocabulary& target);
// Per-instance argmax; the class map is filled as in class_level_map and
// serves as fallback during remapping.
CrossLingualMapping instance_level_map(const std::vector<InstancePosterior>& posteriors, const Vocabulary& source,
                                       const Vocabulary& target);

CrossLingualMapping class_level_map(const lexicon::SignDictionary& dict_a, const Corpus& corpus_a,
                                    const net::ModelParams& model, const std::string& target_lang);
CrossLingualMapping instance_level_map(const lexicon::SignDictionary& dict_a, const Corpus& corpus_a,
                                       const net::ModelParams& model, const std::string& target_lang);

// Row-wise softmax of W_A W_P^T; biases are ignored.
Matrix weight_similarity(const net::ClassifierHead& head_a, const net::ClassifierHead& head_p);
CrossLingualMapping weight_matrix_map(const net::ClassifierHead& head_a, const net::ClassifierHead& head_p);

// Maps exactly the entries whose confidence is strictly above tau.
CrossLingualMapping apply_threshold(CrossLingualMapping map, double tau);

struct RemapResult {
  Corpus corpus;          // labels over `vocabulary`, tagged with the target language
  Vocabulary vocabulary;  // target glosses, then preserved source glosses
  std::vector<GlossId> preserved;  // source ids appended to the vocabulary, in order
  int mapped_occurrences = 0;
  int preserved_occurrences = 0;
  int fallback_occurrences = 0;  // instance level only
};

std::string preserved_gloss_name(const Vocabulary& source, GlossId g);

RemapResult remap_corpus(const Corpus& corpus_a, const CrossLingualMapping& map);

// TSV with columns src_id, src_gloss, dst_id, dst_gloss, confidence, mapped, n_instances.
std::string mapping_tsv(const CrossLingualMapping& map);
void save_mapping(const CrossLingualMapping& map, const std::filesystem::path& path);
// Class-level view of a saved report.
CrossLingualMapping load_mapping(const std::filesystem::path& path, const Vocabulary& source,
                                 const Vocabulary& target);

}  // namespace xsl::xmap
