#include "xsl/experiment.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>

#include "json.hpp"
#include "xsl/eval.hpp"

namespace xsl::experiment {

using nlohmann::ordered_json;

void ExperimentConfig::validate() const {
  synth.validate();
  cslr.validate();
  islr.validate();
  if (!(alpha >= 0.0)) throw Error(ErrorCode::kInvalidArgument, "alpha must be >= 0");
  if (!(tau >= 0.0 && tau <= 1.0)) throw Error(ErrorCode::kInvalidArgument, "tau must be in [0,1]");
  if (min_count_p < 1 || min_count_a < 1) throw Error(ErrorCode::kInvalidArgument, "min counts must be >= 1");
  if (!(fraction > 0.0 && fraction <= 1.0)) throw Error(ErrorCode::kInvalidArgument, "fraction must be in (0,1]");
  if (beam_width < 1) throw Error(ErrorCode::kInvalidArgument, "beam width must be >= 1");
  if (seeds.empty()) throw Error(ErrorCode::kInvalidArgument, "at least one seed is required");
}

namespace {

double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const double d = std::stod(v, &pos);
    if (pos == v.size()) return d;
  } catch (const std::exception&) {
  }
  throw Error(ErrorCode::kFormat, "bad number '" + v + "' for " + key);
}

int to_int(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const int i = std::stoi(v, &pos);
    if (pos == v.size()) return i;
  } catch (const std::exception&) {
  }
  throw Error(ErrorCode::kFormat, "bad integer '" + v + "' for " + key);
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  if (v.empty() || v.find_first_not_of("0123456789") != std::string::npos) {
    throw Error(ErrorCode::kFormat, "bad seed '" + v + "' for " + key);
  }
  try {
    return std::stoull(v);
  } catch (const std::exception&) {
    throw Error(ErrorCode::kFormat, "bad seed '" + v + "' for " + key);
  }
}

bool apply_synth_key(synth::SynthConfig& s, const std::string& key, const std::string& full, const std::string& v) {
  if (key == "vocab_size_p") s.vocab_size_p = to_int(full, v);
  else if (key == "vocab_size_a") s.vocab_size_a = to_int(full, v);
  else if (key == "overlap") s.overlap_fraction = to_double(full, v);
  else if (key == "feature_dim") s.feature_dim = to_int(full, v);
  else if (key == "clip_len_mean") s.clip_len_mean = to_int(full, v);
  else if (key == "clip_len_jitter") s.clip_len_jitter = to_int(full, v);
  else if (key == "blank_gap_mean") s.blank_gap_mean = to_int(full, v);
  else if (key == "sigma") s.noise_sigma = to_double(full, v);
  else if (key == "train_sentences") s.train_sentences = to_int(full, v);
  else if (key == "dev_sentences") s.dev_sentences = to_int(full, v);
  else if (key == "test_sentences") s.test_sentences = to_int(full, v);
  else if (key == "sentence_len_min") s.sentence_len_min = to_int(full, v);
  else if (key == "sentence_len_max") s.sentence_len_max = to_int(full, v);
  else if (key == "zipf") s.zipf_exponent = to_double(full, v);
  else if (key == "seed") s.seed = to_u64(full, v);
  else return false;
  return true;
}

}  // namespace

void apply_keys(ExperimentConfig& c, const std::map<std::string, std::string>& kv) {
  auto used_cslr = pipeline::apply_train_keys(c.cslr, kv, "cslr.");
  auto used_islr = pipeline::apply_train_keys(c.islr, kv, "islr.");
  for (const auto& [key, v] : kv) {
    if (std::find(used_cslr.begin(), used_cslr.end(), key) != used_cslr.end()) continue;
    if (std::find(used_islr.begin(), used_islr.end(), key) != used_islr.end()) continue;
    if (key.rfind("synth.", 0) == 0) {
      if (!apply_synth_key(c.synth, key.substr(6), key, v)) throw Error(ErrorCode::kFormat, "unknown key " + key);
      continue;
    }
    if (key == "alpha") c.alpha = to_double(key, v);
    else if (key == "tau") c.tau = to_double(key, v);
    else if (key == "strategy") c.strategy = xmap::parse_strategy(v);
    else if (key == "level") c.level = xmap::parse_level(v);
    else if (key == "min_count_p") c.min_count_p = to_int(key, v);
    else if (key == "min_count_a") c.min_count_a = to_int(key, v);
    else if (key == "fraction") c.fraction = to_double(key, v);
    else if (key == "beam") c.beam_width = to_int(key, v);
    else if (key == "warm_start") {
      if (v != "true" && v != "false") throw Error(ErrorCode::kFormat, "bad boolean '" + v + "' for warm_start");
      c.islr_warm_start = v == "true";
    } else if (key == "seeds") {
      c.seeds.clear();
      std::stringstream in(v);
      std::string item;
      while (std::getline(in, item, ',')) {
        item.erase(0, item.find_first_not_of(' '));
        item.erase(item.find_last_not_of(' ') + 1);
        c.seeds.push_back(to_u64(key, item));
      }
    } else {
      throw Error(ErrorCode::kFormat, "unknown key " + key);
    }
  }
}

MapQuality class_map_quality(const xmap::CrossLingualMapping& map, const synth::GroundTruth& truth) {
  MapQuality q;
  for (const auto& [a, p] : truth.true_map) {
    ++q.shared;
    const auto& e = map.class_map.at(static_cast<std::size_t>(a));
    if (!e.mapped) continue;
    ++q.mapped;
    q.correct += *e.target == p;
  }
  return q;
}

MapQuality instance_map_quality(const xmap::CrossLingualMapping& map, const lexicon::SignDictionary& dict_a,
                                const synth::GroundTruth& truth) {
  MapQuality q;
  for (const lexicon::Segment* s : dict_a.all()) {
    auto truth_it = truth.true_map.find(s->gloss_id);
    if (truth_it == truth.true_map.end()) continue;
    ++q.shared;
    auto it = map.instance_map.find({s->sample_id, s->occurrence});
    if (it == map.instance_map.end() || !it->second.mapped) continue;
    ++q.mapped;
    q.correct += *it->second.target == truth_it->second;
  }
  return q;
}

namespace {

pipeline::TrainConfig seeded(pipeline::TrainConfig c, std::uint64_t seed) {
  c.seed = seed;
  return c;
}

}  // namespace

SeedContext prepare(const ExperimentConfig& config, std::uint64_t seed, bool with_mapping) {
  SeedContext ctx;
  ctx.seed = seed;
  synth::SynthConfig sc = config.synth;
  sc.seed = seed;
  ctx.data = synth::generate(sc);
  ctx.primary_train = config.fraction < 1.0 ? synth::degrade_primary(ctx.data.primary.train, config.fraction, seed)
                                            : ctx.data.primary.train;
  const auto cslr = seeded(config.cslr, seed);
  ctx.cslr_p = pipeline::train_cslr(ctx.primary_train, ctx.data.primary.dev, cslr);
  if (!with_mapping) return ctx;

  const auto& aux = ctx.data.auxiliary;
  ctx.cslr_a = pipeline::train_cslr(aux.train, aux.dev, cslr);
  const auto dict_p = lexicon::build_dictionary(ctx.primary_train, ctx.cslr_p.model);
  ctx.dict_a = lexicon::build_dictionary(aux.train, ctx.cslr_a->model);
  const auto dev_p = lexicon::build_dictionary(ctx.data.primary.dev, ctx.cslr_p.model);
  const auto dev_a = lexicon::build_dictionary(aux.dev, ctx.cslr_a->model);
  const auto train_p = lexicon::filter_by_frequency(dict_p, config.min_count_p);
  const auto train_a = lexicon::filter_by_frequency(*ctx.dict_a, config.min_count_a);
  auto islr_cfg = seeded(config.islr, seed);
  islr_cfg.encoder = config.cslr.encoder;
  ctx.islr = pipeline::train_islr({&train_p, &ctx.primary_train}, {&train_a, &aux.train},
                                  {&dev_p, &ctx.data.primary.dev}, {&dev_a, &aux.dev}, islr_cfg,
                                  config.islr_warm_start ? &ctx.cslr_a->model : nullptr);
  return ctx;
}

xmap::CrossLingualMapping build_mapping(const SeedContext& ctx, xmap::MapStrategy strategy, xmap::MapLevel level,
                                        double tau) {
  if (!ctx.islr || !ctx.dict_a) throw Error(ErrorCode::kInvalidArgument, "seed context was prepared without mapping");
  const auto& model = ctx.islr->model;
  const std::string p = ctx.primary_train.language_tag();
  xmap::CrossLingualMapping map;
  if (strategy == xmap::MapStrategy::kWeightMatrix) {
    map = xmap::weight_matrix_map(model.islr_head(ctx.data.auxiliary.train.language_tag()), model.islr_head(p));
  } else if (level == xmap::MapLevel::kInstance) {
    map = xmap::instance_level_map(*ctx.dict_a, ctx.data.auxiliary.train, model, p);
  } else {
    map = xmap::class_level_map(*ctx.dict_a, ctx.data.auxiliary.train, model, p);
  }
  return xmap::apply_threshold(std::move(map), tau);
}

double median(std::vector<double> v) {
  if (v.empty()) throw Error(ErrorCode::kEmptyInput, "median of nothing");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

const Row& ExperimentReport::row(const std::string& name) const {
  for (const Row& r : rows) {
    if (r.name == name) return r;
  }
  throw Error(ErrorCode::kInvalidArgument, "report has no row " + name);
}

std::string ExperimentReport::table() const {
  std::size_t width = 6;
  for (const Row& r : rows) width = std::max(width, r.name.size());
  std::ostringstream out;
  char buf[64];
  out << "preset " << preset << "\n";
  std::string head = "metric";
  head.resize(width, ' ');
  out << head;
  for (auto s : seeds) {
    std::snprintf(buf, sizeof buf, "  %8s", ("seed" + std::to_string(s)).c_str());
    out << buf;
  }
  out << "    median\n";
  for (const Row& r : rows) {
    std::string name = r.name;
    name.resize(width, ' ');
    out << name;
    for (double v : r.values) {
      std::snprintf(buf, sizeof buf, "  %8.4f", v);
      out << buf;
    }
    std::snprintf(buf, sizeof buf, "  %8.4f\n", r.median);
    out << buf;
  }
  return out.str();
}

std::string ExperimentReport::to_json() const {
  ordered_json j;
  j["preset"] = preset;
  j["seeds"] = seeds;
  j["config"] = config;
  ordered_json rs = ordered_json::array();
  for (const Row& r : rows) rs.push_back({{"name", r.name}, {"values", r.values}, {"median", r.median}});
  j["rows"] = std::move(rs);
  return j.dump(1) + "\n";
}

const std::vector<std::string>& preset_names() {
  static const std::vector<std::string> names{"baseline-mono",   "multitask",      "mapped-class",
                                              "mapped-instance", "mapped-weight",  "threshold-sweep",
                                              "alpha-sweep",     "scarcity-20",    "scarcity-40",
                                              "scarcity-60"};
  return names;
}

namespace {

struct Collector {
  std::vector<std::string> order;
  std::map<std::string, std::vector<double>> values;

  void add(const std::string& name, double v) {
    if (!values.count(name)) order.push_back(name);
    values[name].push_back(v);
  }
};

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

struct Plan {
  bool multitask = false;
  bool mapping = false;
  std::vector<double> taus;    // mixed runs over tau at config.alpha
  std::vector<double> alphas;  // mixed runs over alpha at config.tau
  bool qualities = false;
};

void add_wer(Collector& c, const std::string& name, const net::ModelParams& m, const synth::SynthOutput& d,
             int beam) {
  c.add(name + ".dev_wer", eval::evaluate_cslr(m, d.primary.dev, beam).total.wer);
  c.add(name + ".test_wer", eval::evaluate_cslr(m, d.primary.test, beam).total.wer);
}

}  // namespace

ExperimentReport run_preset(const std::string& name, const ExperimentConfig& base) {
  ExperimentConfig cfg = base;
  Plan plan;
  if (name == "baseline-mono") {
  } else if (name == "multitask") {
    plan.multitask = true;
  } else if (name == "mapped-class" || name == "mapped-instance" || name == "mapped-weight") {
    cfg.strategy = name == "mapped-weight" ? xmap::MapStrategy::kWeightMatrix : xmap::MapStrategy::kPrediction;
    cfg.level = name == "mapped-instance" ? xmap::MapLevel::kInstance : xmap::MapLevel::kClass;
    plan.mapping = true;
    plan.taus = {cfg.tau};
    plan.qualities = true;
  } else if (name == "threshold-sweep") {
    plan.mapping = true;
    plan.taus = {0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 1.0};
  } else if (name == "alpha-sweep") {
    plan.mapping = true;
    plan.alphas = {0.0, 0.1, 0.2, 0.3, 0.4, 0.6, 0.8};
  } else if (name == "scarcity-20" || name == "scarcity-40" || name == "scarcity-60") {
    cfg.fraction = std::stoi(name.substr(9)) / 100.0;
    plan.multitask = true;
    plan.mapping = true;
    plan.taus = {cfg.tau};
  } else {
    throw Error(ErrorCode::kInvalidArgument, "unknown preset '" + name + "'");
  }
  cfg.validate();

  Collector col;
  for (std::uint64_t seed : cfg.seeds) {
    SeedContext ctx = prepare(cfg, seed, plan.mapping);
    const auto& d = ctx.data;
    add_wer(col, "mono", ctx.cslr_p.model, d, cfg.beam_width);
    const auto cslr = seeded(cfg.cslr, seed);
    if (plan.multitask) {
      auto mt = pipeline::train_multitask_baseline(ctx.primary_train, d.auxiliary.train, d.primary.dev,
                                                   {cfg.alpha, cslr});
      add_wer(col, "multitask", mt.model, d, cfg.beam_width);
    }
    if (plan.qualities) {
      const auto cls = build_mapping(ctx, xmap::MapStrategy::kPrediction, xmap::MapLevel::kClass, 0.0);
      const auto inst = build_mapping(ctx, xmap::MapStrategy::kPrediction, xmap::MapLevel::kInstance, 0.0);
      const auto wgt = build_mapping(ctx, xmap::MapStrategy::kWeightMatrix, xmap::MapLevel::kClass, 0.0);
      col.add("map.class_precision", class_map_quality(cls, d.truth).precision());
      col.add("map.instance_precision", instance_map_quality(inst, *ctx.dict_a, d.truth).precision());
      col.add("map.weight_precision", class_map_quality(wgt, d.truth).precision());
    }
    auto mixed_run = [&](double alpha, double tau, const std::string& label) {
      const auto map = build_mapping(ctx, cfg.strategy, cfg.level, tau);
      const auto remapped = xmap::remap_corpus(d.auxiliary.train, map);
      const double total = remapped.mapped_occurrences + remapped.preserved_occurrences;
      col.add(label + ".mapped_share", total > 0 ? remapped.mapped_occurrences / total : 0.0);
      auto mixed = pipeline::train_cslr_mixed(ctx.primary_train, remapped.corpus, d.primary.dev, {alpha, cslr});
      add_wer(col, label, mixed.model, d, cfg.beam_width);
    };
    for (double tau : plan.taus) {
      mixed_run(cfg.alpha, tau, plan.taus.size() == 1 ? "mapped" : "mapped@tau=" + fmt(tau));
    }
    for (double alpha : plan.alphas) mixed_run(alpha, cfg.tau, "mapped@alpha=" + fmt(alpha));
  }

  ExperimentReport rep;
  rep.preset = name;
  rep.seeds = cfg.seeds;
  for (const auto& n : col.order) rep.rows.push_back({n, col.values[n], median(col.values[n])});
  rep.config = pipeline::describe(cfg.cslr);
  for (const auto& [k, v] : pipeline::describe(cfg.islr)) rep.config["islr." + k] = v;
  rep.config["alpha"] = fmt(cfg.alpha);
  rep.config["tau"] = fmt(cfg.tau);
  rep.config["strategy"] = std::string(xmap::strategy_name(cfg.strategy));
  rep.config["level"] = std::string(xmap::level_name(cfg.level));
  rep.config["min_count_p"] = std::to_string(cfg.min_count_p);
  rep.config["min_count_a"] = std::to_string(cfg.min_count_a);
  rep.config["fraction"] = fmt(cfg.fraction);
  rep.config["synth.train_sentences"] = std::to_string(cfg.synth.train_sentences);
  rep.config["synth.sigma"] = fmt(cfg.synth.noise_sigma);
  rep.config["synth.overlap"] = fmt(cfg.synth.overlap_fraction);
  return rep;
}

}  // namespace xsl::experiment
