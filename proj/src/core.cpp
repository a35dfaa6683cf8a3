#include "xsl/core.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "xsl/binary_io.hpp"

namespace xsl {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

std::string_view error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kIo: return "IoError";
    case ErrorCode::kFormat: return "FormatError";
    case ErrorCode::kVocabularyViolation: return "VocabularyViolation";
    case ErrorCode::kNonFiniteFeature: return "NonFiniteFeature";
    case ErrorCode::kInfeasibleLabel: return "InfeasibleLabel";
    case ErrorCode::kCollapseMismatch: return "CollapseMismatch";
    case ErrorCode::kDimensionMismatch: return "DimensionMismatch";
    case ErrorCode::kUnknownLanguage: return "UnknownLanguage";
    case ErrorCode::kEmptyInput: return "EmptyInput";
    case ErrorCode::kVocabularyMismatch: return "VocabularyMismatch";
    case ErrorCode::kInvalidArgument: return "InvalidArgument";
  }
  return "Error";
}

Vocabulary::Vocabulary(std::vector<std::string> glosses, std::string language_tag)
    : glosses_(std::move(glosses)), language_tag_(std::move(language_tag)) {
  index_.reserve(glosses_.size());
  for (std::size_t i = 0; i < glosses_.size(); ++i) {
    const auto& g = glosses_[i];
    if (g.empty()) throw Error(ErrorCode::kVocabularyViolation, "empty gloss string");
    if (g.find_first_of("\n\r") != std::string::npos) {
      throw Error(ErrorCode::kVocabularyViolation, "gloss contains a line break");
    }
    if (!index_.emplace(g, static_cast<GlossId>(i)).second) {
      throw Error(ErrorCode::kVocabularyViolation, "duplicate gloss '" + g + "'");
    }
  }
}

const std::string& Vocabulary::gloss(GlossId id) const {
  if (!contains(id)) {
    throw Error(ErrorCode::kVocabularyViolation, "gloss id " + std::to_string(id) + " out of range");
  }
  return glosses_[static_cast<std::size_t>(id)];
}

std::optional<GlossId> Vocabulary::id(std::string_view gloss) const {
  auto it = index_.find(std::string(gloss));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

bool Vocabulary::extends(const Vocabulary& other) const {
  if (other.size() > size()) return false;
  for (std::size_t i = 0; i < other.size(); ++i) {
    if (glosses_[i] != other.glosses_[i]) return false;
  }
  return true;
}

FeatureSequence::FeatureSequence(std::string id, int frames, int dim, std::vector<float> data)
    : id_(std::move(id)), frames_(frames), dim_(dim), data_(std::move(data)) {
  if (frames_ < 1 || dim_ < 1) {
    throw Error(ErrorCode::kFormat, "feature sequence '" + id_ + "' needs T >= 1 and d >= 1");
  }
  if (data_.size() != static_cast<std::size_t>(frames_) * static_cast<std::size_t>(dim_)) {
    throw Error(ErrorCode::kDimensionMismatch, "feature payload size does not equal T*d");
  }
  for (float v : data_) {
    if (!std::isfinite(v)) throw Error(ErrorCode::kNonFiniteFeature, "in sequence '" + id_ + "'");
  }
}

FeatureSequence FeatureSequence::slice(int begin, int end, std::string id) const {
  if (begin < 0 || end > frames_ || begin >= end) {
    throw Error(ErrorCode::kInvalidArgument, "bad frame slice");
  }
  std::vector<float> out(data_.begin() + static_cast<std::ptrdiff_t>(begin) * dim_,
                         data_.begin() + static_cast<std::ptrdiff_t>(end) * dim_);
  return FeatureSequence(std::move(id), end - begin, dim_, std::move(out));
}

std::string_view split_name(SplitTag split) {
  switch (split) {
    case SplitTag::kTrain: return "train";
    case SplitTag::kDev: return "dev";
    case SplitTag::kTest: return "test";
  }
  return "train";
}

SplitTag parse_split(std::string_view name) {
  if (name == "train") return SplitTag::kTrain;
  if (name == "dev") return SplitTag::kDev;
  if (name == "test") return SplitTag::kTest;
  throw Error(ErrorCode::kFormat, "unknown split '" + std::string(name) + "'");
}

void validate_sample(const Sample& sample, const Vocabulary& vocabulary) {
  for (GlossId g : sample.label) {
    if (!vocabulary.contains(g)) {
      throw Error(ErrorCode::kVocabularyViolation, "sample '" + sample.features.id() + "' has gloss id " +
                                                       std::to_string(g) + " outside |S|=" +
                                                       std::to_string(vocabulary.size()));
    }
  }
  if (sample.gt_boundaries) {
    const auto& b = *sample.gt_boundaries;
    if (b.size() != sample.label.size()) {
      throw Error(ErrorCode::kFormat, "boundary count differs from label length");
    }
    int prev_end = 0;
    for (const auto& iv : b) {
      if (iv.start < prev_end || iv.end <= iv.start || iv.end > sample.features.frames()) {
        throw Error(ErrorCode::kFormat, "boundaries of '" + sample.features.id() +
                                            "' overlap, are unordered, or leave [0,T)");
      }
      prev_end = iv.end;
    }
  }
}

void validate_corpus(const Corpus& corpus) {
  for (const auto& s : corpus.samples) {
    if (s.language_tag != corpus.language_tag()) {
      throw Error(ErrorCode::kFormat, "sample '" + s.features.id() + "' has language '" + s.language_tag +
                                          "' in a '" + corpus.language_tag() + "' corpus");
    }
    validate_sample(s, corpus.vocabulary);
  }
}

namespace {

constexpr char kFseqMagic[4] = {'F', 'S', 'E', 'Q'};
constexpr std::uint32_t kFseqVersion = 1;

std::ifstream open_in(const fs::path& path, std::ios::openmode mode = std::ios::in) {
  std::ifstream in(path, mode);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  return in;
}

std::ofstream open_out(const fs::path& path, std::ios::openmode mode = std::ios::out) {
  std::ofstream out(path, mode | std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  return out;
}

std::string feature_file_name(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "feats/%06zu.fseq", index);
  return buf;
}

}  // namespace

void write_feature_file(const FeatureSequence& features, const fs::path& path) {
  auto out = open_out(path, std::ios::binary);
  out.write(kFseqMagic, 4);
  binary::put_u32(out, kFseqVersion);
  binary::put_u32(out, static_cast<std::uint32_t>(features.frames()));
  binary::put_u32(out, static_cast<std::uint32_t>(features.dim()));
  for (float v : features.data()) binary::put_f32(out, v);
  if (!out) throw Error(ErrorCode::kIo, "failed writing " + path.string());
}

FeatureSequence read_feature_file(const fs::path& path, std::string id) {
  auto in = open_in(path, std::ios::binary);
  const std::string what = path.string();
  char magic[4];
  binary::read_exact(in, magic, 4, what);
  if (std::memcmp(magic, kFseqMagic, 4) != 0) throw Error(ErrorCode::kFormat, "bad FSEQ magic in " + what);
  auto version = binary::get_u32(in, what);
  if (version != kFseqVersion) {
    throw Error(ErrorCode::kFormat, "unsupported FSEQ version " + std::to_string(version) + " in " + what);
  }
  auto frames = binary::get_u32(in, what);
  auto dim = binary::get_u32(in, what);
  if (frames == 0 || dim == 0 || frames > (1u << 24) || dim > (1u << 16)) {
    throw Error(ErrorCode::kFormat, "implausible FSEQ shape in " + what);
  }
  std::vector<float> data(static_cast<std::size_t>(frames) * dim);
  for (auto& v : data) v = binary::get_f32(in, what);
  if (in.peek() != std::char_traits<char>::eof()) throw Error(ErrorCode::kFormat, "trailing bytes in " + what);
  return FeatureSequence(std::move(id), static_cast<int>(frames), static_cast<int>(dim), std::move(data));
}

void save_corpus(const Corpus& corpus, const fs::path& dir) {
  validate_corpus(corpus);
  std::error_code ec;
  fs::create_directories(dir / "feats", ec);
  if (ec) throw Error(ErrorCode::kIo, "cannot create " + dir.string() + ": " + ec.message());

  {
    auto out = open_out(dir / "vocab.txt", std::ios::binary);
    for (const auto& g : corpus.vocabulary.glosses()) out << g << '\n';
  }
  {
    ojson meta;
    meta["lang"] = corpus.language_tag();
    meta["split"] = std::string(split_name(corpus.split));
    auto out = open_out(dir / "corpus.json", std::ios::binary);
    out << meta.dump() << '\n';
  }
  auto manifest = open_out(dir / "manifest.jsonl", std::ios::binary);
  for (std::size_t i = 0; i < corpus.samples.size(); ++i) {
    const auto& s = corpus.samples[i];
    const std::string file = feature_file_name(i);
    ojson rec;
    rec["id"] = s.features.id();
    rec["lang"] = s.language_tag;
    rec["T"] = s.features.frames();
    rec["d"] = s.features.dim();
    rec["gloss"] = s.label;
    rec["file"] = file;
    if (s.gt_boundaries) {
      ojson b = ojson::array();
      for (const auto& iv : *s.gt_boundaries) b.push_back({iv.start, iv.end});
      rec["boundaries"] = std::move(b);
    }
    manifest << rec.dump() << '\n';
    write_feature_file(s.features, dir / file);
  }
  if (!manifest) throw Error(ErrorCode::kIo, "failed writing manifest in " + dir.string());
}

Corpus load_corpus(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw Error(ErrorCode::kIo, "corpus directory " + dir.string() + " not found");
  Corpus corpus;

  std::string lang;
  if (fs::exists(dir / "corpus.json")) {
    auto in = open_in(dir / "corpus.json");
    try {
      auto meta = nlohmann::json::parse(in);
      lang = meta.at("lang").get<std::string>();
      corpus.split = parse_split(meta.at("split").get<std::string>());
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::kFormat, "corpus.json: " + std::string(e.what()));
    }
  }

  std::vector<std::string> glosses;
  {
    auto in = open_in(dir / "vocab.txt");
    std::string line;
    while (std::getline(in, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      glosses.push_back(line);
    }
  }

  auto in = open_in(dir / "manifest.jsonl");
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    Sample s;
    std::string file;
    int frames = 0, dim = 0;
    std::string id;
    try {
      auto rec = nlohmann::json::parse(line);
      id = rec.at("id").get<std::string>();
      s.language_tag = rec.at("lang").get<std::string>();
      frames = rec.at("T").get<int>();
      dim = rec.at("d").get<int>();
      s.label = rec.at("gloss").get<std::vector<GlossId>>();
      file = rec.at("file").get<std::string>();
      if (rec.contains("boundaries")) {
        std::vector<Interval> b;
        for (const auto& pair : rec["boundaries"]) {
          if (!pair.is_array() || pair.size() != 2) throw Error(ErrorCode::kFormat, "boundary must be [start,end]");
          b.push_back({pair[0].get<int>(), pair[1].get<int>()});
        }
        s.gt_boundaries = std::move(b);
      }
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::kFormat, "manifest line " + std::to_string(line_no) + ": " + e.what());
    }
    if (lang.empty()) lang = s.language_tag;
    s.features = read_feature_file(dir / file, id);
    if (s.features.frames() != frames || s.features.dim() != dim) {
      throw Error(ErrorCode::kFormat, "manifest shape of '" + id + "' disagrees with its feature file");
    }
    corpus.samples.push_back(std::move(s));
  }
  corpus.vocabulary = Vocabulary(std::move(glosses), lang);
  validate_corpus(corpus);
  return corpus;
}

}  // namespace xsl
