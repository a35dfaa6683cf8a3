#include "xsl/lexicon.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>
#include <unordered_map>

#include "json.hpp"

namespace xsl::lexicon {

using nlohmann::ordered_json;

std::size_t SignDictionary::count(GlossId g) const {
  auto it = entries.find(g);
  return it == entries.end() ? 0 : it->second.size();
}

std::size_t SignDictionary::total() const {
  std::size_t n = 0;
  for (const auto& [g, segs] : entries) n += segs.size();
  return n;
}

void SignDictionary::add(Segment segment) {
  if (!vocabulary.contains(segment.gloss_id)) {
    throw Error(ErrorCode::kVocabularyViolation, "segment gloss id " + std::to_string(segment.gloss_id));
  }
  entries[segment.gloss_id].push_back(std::move(segment));
}

std::vector<const Segment*> SignDictionary::all() const {
  std::vector<const Segment*> out;
  for (const auto& [g, segs] : entries) {
    for (const auto& s : segs) out.push_back(&s);
  }
  return out;
}

std::vector<Segment> base_spans(const ctc::AlignmentPath& path, const GlossSequence& label) {
  if (ctc::collapse(path) != label) throw Error(ErrorCode::kCollapseMismatch, "path does not collapse to label");
  std::vector<Segment> spans;
  const auto& p = path.labels;
  for (std::size_t t = 0; t < p.size(); ++t) {
    if (p[t] == ctc::kBlank) continue;
    if (t > 0 && p[t] == p[t - 1]) {
      spans.back().end = static_cast<int>(t) + 1;
      continue;
    }
    Segment s;
    s.gloss_id = ExtendedVocabulary::gloss_id(p[t]);
    s.occurrence = static_cast<int>(spans.size());
    s.start = static_cast<int>(t);
    s.end = s.start + 1;
    spans.push_back(s);
  }
  return spans;
}

namespace {

int best_non_blank(const ctc::PosteriorMatrix& post, int t) {
  int best = 1;
  for (int k = 2; k < post.num_labels(); ++k) {
    if (post(t, k) > post(t, best)) best = k;
  }
  return ExtendedVocabulary::gloss_id(best);
}

double mean_margin(const ctc::PosteriorMatrix& post, const Segment& s) {
  const int k = ExtendedVocabulary::extended_id(s.gloss_id);
  double sum = 0.0;
  for (int t = s.start; t < s.end; ++t) {
    double other = ctc::kNegInf;
    for (int j = 0; j < post.num_labels(); ++j) {
      if (j != k) other = std::max(other, post(t, j));
    }
    sum += post(t, k) - other;
  }
  return s.length() > 0 ? sum / s.length() : 0.0;
}

}  // namespace

std::vector<Segment> expand_boundaries(std::vector<Segment> spans, const ctc::PosteriorMatrix& posteriors) {
  const int T = posteriors.frames();
  for (std::size_t i = 0; i < spans.size(); ++i) {
    if (spans[i].start < 0 || spans[i].end > T || spans[i].start >= spans[i].end ||
        (i > 0 && spans[i].start < spans[i - 1].end)) {
      throw Error(ErrorCode::kInvalidArgument, "spans must be ordered, disjoint and inside the posteriors");
    }
    if (ExtendedVocabulary::extended_id(spans[i].gloss_id) >= posteriors.num_labels()) {
      throw Error(ErrorCode::kVocabularyViolation, "span gloss outside the posterior alphabet");
    }
  }

  const auto n = spans.size();
  for (std::size_t i = 0; i <= n; ++i) {
    // Gap between spans[i-1] and spans[i].
    const int lo = i == 0 ? 0 : spans[i - 1].end;
    const int hi = i == n ? T : spans[i].start;
    if (lo >= hi) continue;
    int left_reach = lo;  // spans[i-1] may take [lo, left_reach)
    if (i > 0) {
      while (left_reach < hi && best_non_blank(posteriors, left_reach) == spans[i - 1].gloss_id) ++left_reach;
    }
    int right_reach = hi;  // spans[i] may take [right_reach, hi)
    if (i < n) {
      while (right_reach > lo && best_non_blank(posteriors, right_reach - 1) == spans[i].gloss_id) --right_reach;
    }
    if (i > 0 && i < n && right_reach < left_reach) {
      // Contested frames: higher probability wins, equal probability goes
      // to the nearer span (the left one at the exact middle).
      const int a = ExtendedVocabulary::extended_id(spans[i - 1].gloss_id);
      const int b = ExtendedVocabulary::extended_id(spans[i].gloss_id);
      int split = right_reach;
      for (int f = right_reach; f < left_reach; ++f) {
        bool to_left = posteriors(f, a) > posteriors(f, b) ||
                       (posteriors(f, a) == posteriors(f, b) && f - lo <= hi - 1 - f);
        if (to_left) split = f + 1;
      }
      left_reach = right_reach = split;
    }
    if (i > 0) spans[i - 1].end = left_reach;
    if (i < n) spans[i].start = right_reach;
  }
  for (auto& s : spans) s.mean_logit_margin = mean_margin(posteriors, s);
  return spans;
}

ctc::PosteriorMatrix frame_posteriors(const net::ModelParams& model, const Sample& sample) {
  Matrix logits = net::cslr_logits(model, sample.features, sample.language_tag);
  auto post = ctc::PosteriorMatrix::from_logits(logits);
  const int stride = model.config.temporal_stride;
  if (stride > 1) post = ctc::upsample_posteriors(post, stride);
  const int T = sample.features.frames();
  if (post.frames() > T) post = ctc::PosteriorMatrix(Matrix(post.log_probs().topRows(T)));
  return post;
}

SignDictionary build_dictionary(const Corpus& corpus, const net::ModelParams& model) {
  SignDictionary dict;
  dict.vocabulary = corpus.vocabulary;
  const auto& head = model.cslr_head(corpus.language_tag());
  if (!head.vocabulary.extends(corpus.vocabulary)) {
    throw Error(ErrorCode::kVocabularyMismatch, "CSLR head vocabulary does not cover corpus " + corpus.language_tag());
  }
  for (std::size_t idx = 0; idx < corpus.size(); ++idx) {
    const Sample& sample = corpus.samples[idx];
    auto post = frame_posteriors(model, sample);
    ctc::AlignmentPath path;
    try {
      path = ctc::viterbi_align(post, sample.label);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kInfeasibleLabel) throw;
      dict.skipped.push_back(sample.features.id());
      continue;
    }
    for (auto& seg : expand_boundaries(base_spans(path, sample.label), post)) {
      seg.sample_id = sample.features.id();
      seg.sample_index = idx;
      dict.add(std::move(seg));
    }
  }
  return dict;
}

SignDictionary filter_by_frequency(const SignDictionary& dict, int min_count) {
  if (min_count < 1) throw Error(ErrorCode::kInvalidArgument, "min_count must be positive");
  SignDictionary out;
  out.vocabulary = dict.vocabulary;
  out.skipped = dict.skipped;
  out.source = dict.source;
  for (const auto& [g, segs] : dict.entries) {
    if (segs.size() >= static_cast<std::size_t>(min_count)) out.entries[g] = segs;
  }
  return out;
}

FeatureSequence segment_features(const Corpus& corpus, const Segment& segment) {
  if (segment.sample_index >= corpus.size() ||
      corpus.samples[segment.sample_index].features.id() != segment.sample_id) {
    throw Error(ErrorCode::kInvalidArgument, "segment " + segment.sample_id + " is not bound to this corpus");
  }
  const auto& f = corpus.samples[segment.sample_index].features;
  return f.slice(segment.start, segment.end, segment.sample_id + "#" + std::to_string(segment.occurrence));
}

FeatureSequence fit_window(const FeatureSequence& clip, int length) {
  if (length < 1) throw Error(ErrorCode::kInvalidArgument, "window length must be positive");
  const int T = clip.frames();
  if (T == length) return clip;
  if (T > length) {
    const int begin = (T - length) / 2;
    return clip.slice(begin, begin + length, clip.id());
  }
  const int before = (length - T) / 2;
  std::vector<float> data;
  data.reserve(static_cast<std::size_t>(length) * static_cast<std::size_t>(clip.dim()));
  for (int t = 0; t < length; ++t) {
    auto frame = clip.frame(std::clamp(t - before, 0, T - 1));
    data.insert(data.end(), frame.begin(), frame.end());
  }
  return FeatureSequence(clip.id(), length, clip.dim(), std::move(data));
}

FeatureSequence isolated_clip(const Corpus& corpus, const Segment& segment, int window) {
  return fit_window(segment_features(corpus, segment), window);
}

void bind_corpus(SignDictionary& dict, const Corpus& corpus) {
  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < corpus.size(); ++i) index[corpus.samples[i].features.id()] = i;
  for (auto& [g, segs] : dict.entries) {
    for (auto& s : segs) {
      auto it = index.find(s.sample_id);
      if (it == index.end()) throw Error(ErrorCode::kFormat, "dictionary references unknown sample " + s.sample_id);
      const auto& sample = corpus.samples[it->second];
      if (s.end > sample.features.frames()) throw Error(ErrorCode::kFormat, "segment exceeds sample " + s.sample_id);
      if (static_cast<std::size_t>(s.occurrence) >= sample.label.size() ||
          sample.label[static_cast<std::size_t>(s.occurrence)] != s.gloss_id) {
        throw Error(ErrorCode::kFormat, "segment gloss disagrees with label of " + s.sample_id);
      }
      s.sample_index = it->second;
    }
  }
}

namespace {

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  f << text;
  if (!f) throw Error(ErrorCode::kIo, "write failed: " + path.string());
}

}  // namespace

void save_dictionary(const SignDictionary& dict, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ostringstream records;
  for (const Segment* s : dict.all()) {
    ordered_json j;
    j["gloss_id"] = s->gloss_id;
    j["gloss"] = dict.vocabulary.gloss(s->gloss_id);
    j["sample_id"] = s->sample_id;
    j["occ"] = s->occurrence;
    j["start"] = s->start;
    j["end"] = s->end;
    j["margin"] = s->mean_logit_margin;
    records << j.dump() << '\n';
  }
  write_text(dir / "dict.jsonl", records.str());

  std::ostringstream stats;
  stats << "gloss_id\tgloss\tcount\n";
  for (std::size_t g = 0; g < dict.vocabulary.size(); ++g) {
    const auto id = static_cast<GlossId>(g);
    stats << g << '\t' << dict.vocabulary.gloss(id) << '\t' << dict.count(id) << '\n';
  }
  write_text(dir / "stats.tsv", stats.str());

  ordered_json meta;
  meta["lang"] = dict.vocabulary.language_tag();
  meta["glosses"] = dict.vocabulary.glosses();
  meta["source"] = dict.source;
  meta["segments"] = dict.total();
  meta["skipped"] = dict.skipped;
  write_text(dir / "dict.json", meta.dump(1) + "\n");
}

SignDictionary load_dictionary(const std::filesystem::path& dir) {
  auto open = [&](const char* leaf) {
    std::ifstream f(dir / leaf, std::ios::binary);
    if (!f) throw Error(ErrorCode::kIo, "cannot open " + (dir / leaf).string());
    return f;
  };
  SignDictionary dict;
  try {
    auto meta_file = open("dict.json");
    auto meta = ordered_json::parse(meta_file);
    dict.vocabulary = Vocabulary(meta.at("glosses").get<std::vector<std::string>>(), meta.at("lang").get<std::string>());
    dict.source = meta.at("source").get<std::string>();
    dict.skipped = meta.at("skipped").get<std::vector<std::string>>();

    auto records = open("dict.jsonl");
    std::string line;
    while (std::getline(records, line)) {
      if (line.empty()) continue;
      auto j = ordered_json::parse(line);
      Segment s;
      s.gloss_id = j.at("gloss_id").get<GlossId>();
      s.sample_id = j.at("sample_id").get<std::string>();
      s.occurrence = j.at("occ").get<int>();
      s.start = j.at("start").get<int>();
      s.end = j.at("end").get<int>();
      s.mean_logit_margin = j.value("margin", 0.0);
      if (s.start < 0 || s.end <= s.start) throw Error(ErrorCode::kFormat, "bad segment range in dict.jsonl");
      dict.add(std::move(s));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kFormat, dir.string() + ": " + e.what());
  }
  return dict;
}

}  // namespace xsl::lexicon
