// xslr: command-line driver for the cross-lingual CSLR pipeline.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "xsl/eval.hpp"
#include "xsl/experiment.hpp"
#include "xsl/manifest.hpp"

namespace fs = std::filesystem;
using namespace xsl;
using nlohmann::ordered_json;

namespace {

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<double> alpha;
  std::optional<double> tau;
  std::string strategy = "prediction";
  std::string level = "class";
  std::optional<int> beam;
  std::optional<double> fraction;
  std::optional<int> min_count_p;
  std::optional<int> min_count_a;
  std::string out;
};

// Flags win over the config file, which wins over the built-in defaults.
experiment::ExperimentConfig effective_config(const Options& o, std::string* text) {
  experiment::ExperimentConfig c;
  std::map<std::string, std::string> kv;
  if (!o.config.empty()) kv = pipeline::read_key_values(o.config);
  experiment::apply_keys(c, kv);
  if (o.seed) {
    c.seeds = {*o.seed};
    c.cslr.seed = c.islr.seed = c.synth.seed = *o.seed;
  } else if (kv.count("seeds") && c.seeds.size() == 1) {
    c.cslr.seed = c.islr.seed = c.synth.seed = c.seeds[0];
  }
  if (o.alpha) c.alpha = *o.alpha;
  if (o.tau) c.tau = *o.tau;
  c.strategy = xmap::parse_strategy(o.strategy);
  c.level = xmap::parse_level(o.level);
  if (o.beam) c.beam_width = c.cslr.beam_width = *o.beam;
  if (o.fraction) c.fraction = *o.fraction;
  if (o.min_count_p) c.min_count_p = *o.min_count_p;
  if (o.min_count_a) c.min_count_a = *o.min_count_a;
  c.validate();
  if (text != nullptr) {
    std::ostringstream s;
    for (const auto& [k, v] : pipeline::describe(c.cslr)) s << "cslr." << k << "=" << v << "\n";
    for (const auto& [k, v] : pipeline::describe(c.islr)) s << "islr." << k << "=" << v << "\n";
    s << "alpha=" << c.alpha << "\ntau=" << c.tau << "\nstrategy=" << o.strategy << "\nlevel=" << o.level
      << "\nbeam=" << c.beam_width << "\nfraction=" << c.fraction << "\nmin_count_p=" << c.min_count_p
      << "\nmin_count_a=" << c.min_count_a << "\nsynth.seed=" << c.synth.seed << "\n";
    *text = s.str();
  }
  return c;
}

void write_text(const fs::path& p, const std::string& s) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + p.string());
  out << s;
}

std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot read " + p.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

fs::path require_out(const Options& o) {
  if (o.out.empty()) throw Error(ErrorCode::kInvalidArgument, "--out is required");
  fs::create_directories(o.out);
  return o.out;
}

class Run {
 public:
  Run(std::string command, std::vector<std::string> args, const std::string& config_text, std::uint64_t seed) {
    m_.command = std::move(command);
    m_.arguments = std::move(args);
    m_.config_hash = manifest::sha256_hex(config_text);
    m_.seed = seed;
    m_.started = manifest::utc_now();
  }
  void input(const fs::path& p) { m_.add_input(p); }
  void finish(const fs::path& out) {
    m_.finished = manifest::utc_now();
    m_.add_outputs(out);
    manifest::write_manifest(m_, out);
  }

 private:
  manifest::RunManifest m_;
};

fs::path checkpoint_path(const fs::path& p) { return fs::is_directory(p) ? p / "model.xsck" : p; }

net::ModelParams load_model(const fs::path& p) { return net::load_checkpoint(checkpoint_path(p)).params; }

void save_model(const pipeline::TrainResult& r, const fs::path& out) {
  net::save_checkpoint(r.model, nullptr, out / "model.xsck");
  write_text(out / "report.json", r.report.to_json(false));
}

lexicon::SignDictionary load_bound_dictionary(const fs::path& dir, Corpus* corpus) {
  auto dict = lexicon::load_dictionary(dir);
  if (dict.source.empty()) throw Error(ErrorCode::kFormat, "dictionary " + dir.string() + " names no corpus");
  *corpus = load_corpus(dict.source);
  lexicon::bind_corpus(dict, *corpus);
  return dict;
}

ordered_json vocab_json(const Vocabulary& v) { return {{"lang", v.language_tag()}, {"glosses", v.glosses()}}; }

Vocabulary vocab_from(const ordered_json& j) {
  return Vocabulary(j.at("glosses").get<std::vector<std::string>>(), j.at("lang").get<std::string>());
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

void print_error(const Error& e) {
  ordered_json j{{"error", std::string(error_code_name(e.code()))}, {"message", e.what()}};
  std::cerr << j.dump() << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cross-lingual continuous sign language recognition laboratory"};
  app.require_subcommand(1);
  Options o;
  std::vector<std::string> args(argv + 1, argv + argc);

  auto common = [&](CLI::App* c) {
    c->add_option("--config", o.config, "key = value configuration file");
    c->add_option("--seed", o.seed, "random seed");
    c->add_option("--out", o.out, "output directory")->required();
  };

  std::string corpus_dir, corpus_b, ckpt, dict_p, dict_a, map_dir, warm, dev_dict_p, dev_dict_a, preset;
  bool tau_sweep = false;

  auto* gen = app.add_subcommand("gen", "generate synthetic bilingual corpora");
  common(gen);
  gen->add_option("--fraction", o.fraction, "keep this share of the primary train split");

  auto* tc = app.add_subcommand("train-cslr", "monolingual CSLR training");
  tc->add_option("corpus", corpus_dir)->required();
  common(tc);
  tc->add_option("--beam", o.beam, "beam width for dev decoding");

  auto* bd = app.add_subcommand("build-dict", "carve a sign dictionary with a CSLR model");
  bd->add_option("corpus", corpus_dir)->required();
  bd->add_option("checkpoint", ckpt)->required();
  common(bd);

  auto* ti = app.add_subcommand("train-islr", "multilingual ISLR training on two dictionaries");
  ti->add_option("dict_p", dict_p)->required();
  ti->add_option("dict_a", dict_a)->required();
  common(ti);
  ti->add_option("--min-count-p", o.min_count_p, "primary frequency threshold");
  ti->add_option("--min-count-a", o.min_count_a, "auxiliary frequency threshold");
  ti->add_option("--dev-dict-p", dev_dict_p, "primary dev dictionary for checkpoint selection");
  ti->add_option("--dev-dict-a", dev_dict_a, "auxiliary dev dictionary for checkpoint selection");
  ti->add_option("--warm-start", warm, "checkpoint whose encoder initialises the model");

  auto* mp = app.add_subcommand("map", "cross-lingual sign mapping");
  mp->add_option("checkpoint", ckpt)->required();
  mp->add_option("dict_a", dict_a)->required();
  common(mp);
  mp->add_option("--strategy", o.strategy, "prediction or weight")->check(CLI::IsMember({"prediction", "weight"}));
  mp->add_option("--level", o.level, "class or instance")->check(CLI::IsMember({"class", "instance"}));
  mp->add_option("--tau", o.tau, "confidence threshold");
  mp->add_flag("--tau-sweep", tau_sweep, "also write maps for tau in {0,0.1,...,0.5,1}");

  auto* rm = app.add_subcommand("remap", "relabel an auxiliary corpus with a mapping");
  rm->add_option("corpus_a", corpus_dir)->required();
  rm->add_option("map", map_dir, "directory written by `map`")->required();
  common(rm);

  auto* tm = app.add_subcommand("train-mixed", "mixed-corpus CSLR training");
  tm->add_option("corpus_p", corpus_dir)->required();
  tm->add_option("corpus_ap", corpus_b)->required();
  common(tm);
  tm->add_option("--alpha", o.alpha, "auxiliary sampling ratio");
  tm->add_option("--beam", o.beam, "beam width for dev decoding");
  std::string dev_dir;
  tm->add_option("--dev", dev_dir, "primary dev corpus");
  tc->add_option("--dev", dev_dir, "dev corpus for checkpoint selection");

  auto* mt = app.add_subcommand("train-multitask", "multi-task baseline: one CSLR head per language");
  mt->add_option("corpus_p", corpus_dir)->required();
  mt->add_option("corpus_a", corpus_b)->required();
  common(mt);
  mt->add_option("--alpha", o.alpha, "auxiliary sampling ratio");
  mt->add_option("--dev", dev_dir, "primary dev corpus");

  auto* ev = app.add_subcommand("eval", "WER of a CSLR checkpoint");
  ev->add_option("checkpoint", ckpt)->required();
  ev->add_option("corpus", corpus_dir)->required();
  common(ev);
  ev->add_option("--beam", o.beam, "beam width");

  auto* ex = app.add_subcommand("experiment", "run a canned experiment preset");
  ex->add_option("preset", preset)->required();
  common(ex);
  ex->add_option("--alpha", o.alpha, "auxiliary sampling ratio");
  ex->add_option("--tau", o.tau, "confidence threshold");
  ex->add_option("--strategy", o.strategy)->check(CLI::IsMember({"prediction", "weight"}));
  ex->add_option("--level", o.level)->check(CLI::IsMember({"class", "instance"}));
  ex->add_option("--beam", o.beam, "beam width");
  ex->add_option("--fraction", o.fraction, "primary train share");
  ex->add_option("--min-count-p", o.min_count_p);
  ex->add_option("--min-count-a", o.min_count_a);

  app.add_subcommand("presets", "list experiment presets")->callback([] {
    for (const auto& n : experiment::preset_names()) std::cout << n << "\n";
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }
  if (app.got_subcommand("presets")) return 0;

  try {
    std::string cfg_text;
    const auto cfg = effective_config(o, &cfg_text);
    const fs::path out = require_out(o);
    const std::string name = app.get_subcommands().front()->get_name();
    const std::uint64_t seed = cfg.cslr.seed;
    Run run(name, args, cfg_text, seed);
    if (!o.config.empty()) run.input(o.config);

    if (name == "gen") {
      auto data = synth::generate(cfg.synth);
      if (cfg.fraction < 1.0) data.primary.train = synth::degrade_primary(data.primary.train, cfg.fraction, seed);
      synth::save_synth(data, out);
    } else if (name == "train-cslr") {
      run.input(corpus_dir);
      const Corpus train = load_corpus(corpus_dir);
      Corpus dev;
      if (!dev_dir.empty()) {
        run.input(dev_dir);
        dev = load_corpus(dev_dir);
      }
      save_model(pipeline::train_cslr(train, dev, cfg.cslr), out);
    } else if (name == "build-dict") {
      run.input(corpus_dir);
      run.input(checkpoint_path(ckpt));
      const Corpus corpus = load_corpus(corpus_dir);
      auto dict = lexicon::build_dictionary(corpus, load_model(ckpt));
      dict.source = fs::absolute(corpus_dir).lexically_normal().string();
      lexicon::save_dictionary(dict, out);
      std::cout << "segments " << dict.total() << " skipped " << dict.skipped.size() << "\n";
    } else if (name == "train-islr") {
      Corpus cp, ca, dcp, dca;
      run.input(dict_p);
      run.input(dict_a);
      const auto dp = lexicon::filter_by_frequency(load_bound_dictionary(dict_p, &cp), cfg.min_count_p);
      const auto da = lexicon::filter_by_frequency(load_bound_dictionary(dict_a, &ca), cfg.min_count_a);
      std::optional<lexicon::SignDictionary> vp, va;
      if (!dev_dict_p.empty()) vp = load_bound_dictionary(dev_dict_p, &dcp);
      if (!dev_dict_a.empty()) va = load_bound_dictionary(dev_dict_a, &dca);
      std::optional<net::ModelParams> init;
      if (!warm.empty()) {
        run.input(checkpoint_path(warm));
        init = load_model(warm);
      }
      pipeline::TrainConfig icfg = cfg.islr;
      if (init) icfg.encoder = init->config;
      auto r = pipeline::train_islr({&dp, &cp}, {&da, &ca}, {vp ? &*vp : nullptr, &dcp},
                                    {va ? &*va : nullptr, &dca}, icfg, init ? &*init : nullptr);
      save_model(r, out);
      write_text(out / "topk_P.tsv", eval::topk_tsv(eval::topk_accuracy(r.model, dp, cp, {1, 5})));
      write_text(out / "topk_A.tsv", eval::topk_tsv(eval::topk_accuracy(r.model, da, ca, {1, 5})));
      if (vp) write_text(out / "topk_dev_P.tsv", eval::topk_tsv(eval::topk_accuracy(r.model, *vp, dcp, {1, 5})));
      if (va) write_text(out / "topk_dev_A.tsv", eval::topk_tsv(eval::topk_accuracy(r.model, *va, dca, {1, 5})));
    } else if (name == "map") {
      run.input(checkpoint_path(ckpt));
      run.input(dict_a);
      Corpus ca;
      const auto da = load_bound_dictionary(dict_a, &ca);
      const auto model = load_model(ckpt);
      std::string target;
      for (const auto& [lang, h] : model.islr_heads) {
        if (lang != ca.language_tag()) target = lang;
      }
      if (target.empty()) throw Error(ErrorCode::kUnknownLanguage, "checkpoint has no primary ISLR head");
      xmap::CrossLingualMapping raw;
      if (cfg.strategy == xmap::MapStrategy::kWeightMatrix) {
        raw = xmap::weight_matrix_map(model.islr_head(ca.language_tag()), model.islr_head(target));
      } else if (cfg.level == xmap::MapLevel::kInstance) {
        raw = xmap::instance_level_map(da, ca, model, target);
      } else {
        raw = xmap::class_level_map(da, ca, model, target);
      }
      const auto map = xmap::apply_threshold(raw, cfg.tau);
      xmap::save_mapping(map, out / "mapping.tsv");
      write_text(out / "vocab.json",
                 ordered_json{{"source", vocab_json(map.source)}, {"target", vocab_json(map.target)},
                              {"level", xmap::level_name(map.level)}, {"tau", map.threshold}}
                         .dump(1) +
                     "\n");
      if (tau_sweep) {
        std::string sweep = "tau\tmapped_classes\n";
        for (double t : {0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 1.0}) {
          const auto m = xmap::apply_threshold(raw, t);
          xmap::save_mapping(m, out / ("mapping_tau" + fmt(t) + ".tsv"));
          int mapped = 0;
          for (const auto& e : m.class_map) mapped += e.mapped;
          sweep += fmt(t) + "\t" + std::to_string(mapped) + "\n";
        }
        write_text(out / "sweep.tsv", sweep);
      }
    } else if (name == "remap") {
      run.input(corpus_dir);
      run.input(map_dir);
      const Corpus ca = load_corpus(corpus_dir);
      const auto meta = ordered_json::parse(read_text(fs::path(map_dir) / "vocab.json"));
      auto map = xmap::load_mapping(fs::path(map_dir) / "mapping.tsv", vocab_from(meta.at("source")),
                                    vocab_from(meta.at("target")));
      const auto r = xmap::remap_corpus(ca, map);
      save_corpus(r.corpus, out);
      write_text(out / "remap.json", ordered_json{{"mapped_occurrences", r.mapped_occurrences},
                                                  {"preserved_occurrences", r.preserved_occurrences},
                                                  {"fallback_occurrences", r.fallback_occurrences},
                                                  {"preserved_glosses", r.preserved.size()}}
                                             .dump(1) +
                                         "\n");
    } else if (name == "train-mixed" || name == "train-multitask") {
      run.input(corpus_dir);
      run.input(corpus_b);
      const Corpus p = load_corpus(corpus_dir), b = load_corpus(corpus_b);
      Corpus dev;
      if (!dev_dir.empty()) {
        run.input(dev_dir);
        dev = load_corpus(dev_dir);
      }
      const pipeline::MixConfig mix{cfg.alpha, cfg.cslr};
      save_model(name == "train-mixed" ? pipeline::train_cslr_mixed(p, b, dev, mix)
                                       : pipeline::train_multitask_baseline(p, b, dev, mix),
                 out);
    } else if (name == "eval") {
      run.input(checkpoint_path(ckpt));
      run.input(corpus_dir);
      const auto rep = eval::evaluate_cslr(load_model(ckpt), load_corpus(corpus_dir), cfg.beam_width);
      write_text(out / "eval.json", eval::report_json(rep));
      std::cout << "WER " << fmt(rep.total.wer) << " (S " << rep.total.substitutions << " I " << rep.total.insertions
                << " D " << rep.total.deletions << " N " << rep.total.ref_length << ")\n";
    } else if (name == "experiment") {
      const auto rep = experiment::run_preset(preset, cfg);
      write_text(out / "report.json", rep.to_json());
      write_text(out / "table.txt", rep.table());
      std::cout << rep.table();
    }
    run.finish(out);
  } catch (const Error& e) {
    print_error(e);
    return 2;
  } catch (const std::exception& e) {
    std::cerr << ordered_json{{"error", "internal"}, {"message", e.what()}}.dump() << "\n";
    return 3;
  }
  return 0;
}
