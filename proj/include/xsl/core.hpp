#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "xsl/error.hpp"
#include "xsl/rng.hpp"

namespace xsl {

using GlossId = std::int32_t;
using GlossSequence = std::vector<GlossId>;

// Ordered gloss alphabet; a gloss's id is its position. Blank is never a
// member; see ExtendedVocabulary.
class Vocabulary {
 public:
  Vocabulary() = default;
  Vocabulary(std::vector<std::string> glosses, std::string language_tag);

  std::size_t size() const noexcept { return glosses_.size(); }
  bool empty() const noexcept { return glosses_.empty(); }
  const std::string& gloss(GlossId id) const;
  std::optional<GlossId> id(std::string_view gloss) const;
  bool contains(GlossId id) const noexcept {
    return id >= 0 && static_cast<std::size_t>(id) < glosses_.size();
  }
  const std::vector<std::string>& glosses() const noexcept { return glosses_; }
  const std::string& language_tag() const noexcept { return language_tag_; }

  // True when every gloss of `other` appears at the same id here.
  bool extends(const Vocabulary& other) const;

  bool operator==(const Vocabulary& other) const {
    return glosses_ == other.glosses_ && language_tag_ == other.language_tag_;
  }

 private:
  std::vector<std::string> glosses_;
  std::unordered_map<std::string, GlossId> index_;
  std::string language_tag_;
};

// S' = S + {blank}; blank takes id 0 and gloss g becomes g + 1.
class ExtendedVocabulary {
 public:
  static constexpr int kBlank = 0;

  explicit ExtendedVocabulary(Vocabulary base) : base_(std::move(base)) {}

  const Vocabulary& base() const noexcept { return base_; }
  std::size_t size() const noexcept { return base_.size() + 1; }
  int blank_id() const noexcept { return kBlank; }
  static int extended_id(GlossId g) noexcept { return g + 1; }
  static GlossId gloss_id(int extended) noexcept { return extended - 1; }

 private:
  Vocabulary base_;
};

struct Interval {
  int start = 0;  // inclusive
  int end = 0;    // exclusive
  int length() const noexcept { return end - start; }
  bool operator==(const Interval&) const = default;
};

// T x d frame-major feature matrix standing in for one video.
class FeatureSequence {
 public:
  FeatureSequence() = default;
  FeatureSequence(std::string id, int frames, int dim, std::vector<float> data);

  const std::string& id() const noexcept { return id_; }
  int frames() const noexcept { return frames_; }
  int dim() const noexcept { return dim_; }
  std::span<const float> frame(int t) const {
    return {data_.data() + static_cast<std::size_t>(t) * dim_, static_cast<std::size_t>(dim_)};
  }
  const std::vector<float>& data() const noexcept { return data_; }

  // Copy of frames [begin, end).
  FeatureSequence slice(int begin, int end, std::string id) const;

  bool operator==(const FeatureSequence&) const = default;

 private:
  std::string id_;
  int frames_ = 0;
  int dim_ = 0;
  std::vector<float> data_;
};

struct Sample {
  FeatureSequence features;
  GlossSequence label;
  std::string language_tag;
  std::optional<std::vector<Interval>> gt_boundaries;

  bool operator==(const Sample&) const = default;
};

enum class SplitTag { kTrain, kDev, kTest };

std::string_view split_name(SplitTag split);
SplitTag parse_split(std::string_view name);

struct Corpus {
  Vocabulary vocabulary;
  SplitTag split = SplitTag::kTrain;
  std::vector<Sample> samples;

  const std::string& language_tag() const noexcept { return vocabulary.language_tag(); }
  std::size_t size() const noexcept { return samples.size(); }
  bool empty() const noexcept { return samples.empty(); }

  bool operator==(const Corpus&) const = default;
};

// Throws on the first violated invariant.
void validate_sample(const Sample& sample, const Vocabulary& vocabulary);
void validate_corpus(const Corpus& corpus);

// Directory layout: vocab.txt, manifest.jsonl, corpus.json (split and
// language), and one FSEQ binary per sample under feats/.
Corpus load_corpus(const std::filesystem::path& dir);
void save_corpus(const Corpus& corpus, const std::filesystem::path& dir);

void write_feature_file(const FeatureSequence& features, const std::filesystem::path& path);
FeatureSequence read_feature_file(const std::filesystem::path& path, std::string id);

}  // namespace xsl
