// Acceptance gate: one PASS/FAIL line per criterion.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <set>
#include <string>

#include "oracles.hpp"
#include "xsl/ctc.hpp"
#include "xsl/eval.hpp"
#include "xsl/experiment.hpp"

using namespace xsl;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

int failures = 0;
std::set<int> selected;  // empty runs everything

void run(int id, const char* title, const std::function<Outcome()>& fn) {
  if (!selected.empty() && selected.count(id) == 0) return;
  const auto start = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = fn();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  std::printf("%s criterion %2d  %-34s %s [%.1fs]\n", o.pass ? "PASS" : "FAIL", id, title, o.detail.c_str(), secs);
  std::fflush(stdout);
  failures += !o.pass;
}

std::string fmt(const char* f, double a, double b = 0, double c = 0, double d = 0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c, d);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t).count();
}

experiment::ExperimentConfig desk_config(bool scarce = false) {
  experiment::ExperimentConfig c;
  experiment::apply_keys(c, pipeline::read_key_values(XSL_DESK_DIR "/desk.cfg"));
  if (scarce) experiment::apply_keys(c, pipeline::read_key_values(XSL_DESK_DIR "/desk-scarcity.cfg"));
  return c;
}

double iou(int a0, int a1, int b0, int b1) {
  const int inter = std::max(0, std::min(a1, b1) - std::max(a0, b0));
  const int uni = std::max(a1, b1) - std::min(a0, b0);
  return static_cast<double>(inter) / uni;
}

bool same_params(const net::ModelParams& a, const net::ModelParams& b) {
  std::map<std::string, Matrix> ta, tb;
  a.for_each_tensor([&](const std::string& n, const Matrix& m) { ta[n] = m; });
  b.for_each_tensor([&](const std::string& n, const Matrix& m) { tb[n] = m; });
  return ta == tb;
}

Outcome ctc_likelihood() {
  Rng rng(101);
  const auto start = std::chrono::steady_clock::now();
  double worst = 0.0;
  int finite = 0;
  for (int i = 0; i < 1000; ++i) {
    const int vocab = rng.uniform_int(1, 3);
    const int T = rng.uniform_int(1, 8);
    const Matrix probs = oracle::random_probs(rng, T, vocab + 1);
    const auto label = oracle::random_label(rng, 3, vocab);
    const double brute = oracle::brute_log_likelihood(probs, label);
    const double dp = ctc::ctc_log_likelihood(ctc::PosteriorMatrix::from_probs(probs), label);
    if (std::isinf(brute)) {
      if (!std::isinf(dp)) return {false, "infeasible label got finite likelihood"};
      continue;
    }
    ++finite;
    worst = std::max(worst, std::abs(brute - dp));
  }
  const double secs = seconds_since(start);
  return {worst <= 1e-9 && secs < 10.0, fmt("max |diff| %.2e over %.0f feasible, %.2fs", worst, finite, secs)};
}

Outcome ctc_gradient() {
  Rng rng(202);
  double worst = 0.0;
  int done = 0;
  while (done < 100) {
    const int k = rng.uniform_int(2, 4);  // |S'|
    const int T = rng.uniform_int(1, 6);
    const auto label = oracle::random_label(rng, 3, k - 1);
    if (ctc::min_frames(label) > T) continue;
    Matrix logits(T, k);
    for (Eigen::Index i = 0; i < logits.size(); ++i) logits.data()[i] = rng.normal() * 2.0;
    const auto an = ctc::ctc_loss_and_grad(logits, label);
    const Matrix num = oracle::central_difference(
        [&](const Matrix& x) { return ctc::ctc_loss_and_grad(x, label).loss; }, logits, 1e-4);
    worst = std::max(worst, (num - an.grad).cwiseAbs().maxCoeff());
    ++done;
  }
  return {worst <= 1e-5, fmt("max abs error %.2e over 100 instances", worst)};
}

Outcome viterbi() {
  Rng rng(303);
  int feasible = 0, good = 0;
  for (int i = 0; i < 1000; ++i) {
    const int vocab = rng.uniform_int(1, 3);
    const int T = rng.uniform_int(1, 6);
    const Matrix probs = oracle::random_probs(rng, T, vocab + 1);
    const auto label = oracle::random_label(rng, 3, vocab);
    if (ctc::min_frames(label) > T) continue;
    ++feasible;
    const auto best = oracle::brute_best_path(probs, label);
    const auto path = ctc::viterbi_align(ctc::PosteriorMatrix::from_probs(probs), label);
    good += std::abs(path.log_prob - best.log_prob) <= 1e-9 && ctc::collapse(path) == label &&
            static_cast<int>(path.labels.size()) == T;
  }
  return {good == feasible && feasible > 0, fmt("%.0f/%.0f feasible instances exact", good, feasible)};
}

Outcome beam_exact() {
  Rng rng(404);
  int good = 0;
  for (int i = 0; i < 200; ++i) {
    const int vocab = rng.uniform_int(1, 2);
    const int T = rng.uniform_int(1, 5);
    const Matrix probs = oracle::random_probs(rng, T, vocab + 1);
    const auto dist = oracle::brute_label_distribution(probs);
    // Every reachable prefix is some collapsed label, so |dist| bounds their number.
    const int width = static_cast<int>(dist.size());
    auto best = dist.begin();
    for (auto it = dist.begin(); it != dist.end(); ++it) {
      if (it->second > best->second) best = it;
    }
    good += ctc::beam_decode(ctc::PosteriorMatrix::from_probs(probs), width) == best->first;
  }
  return {good == 200, fmt("%.0f/200 instances return the most probable labelling", good)};
}

Outcome wer_oracle() {
  Rng rng(505);
  int good = 0, self = 0;
  for (int i = 0; i < 1000; ++i) {
    const auto a = oracle::random_label(rng, 6, 4);
    const auto b = oracle::random_label(rng, 6, 4);
    const auto w = eval::wer(a, b);
    const int ed = oracle::edit_distance(a, b);
    good += w.errors() == ed && w.wer == static_cast<double>(ed) / std::max<std::size_t>(a.size(), 1);
  }
  for (int i = 0; i < 100; ++i) {
    const auto x = oracle::random_label(rng, 6, 4);
    self += eval::wer(x, x).wer == 0.0;
  }
  return {good == 1000 && self == 100, fmt("%.0f/1000 edit distances exact, %.0f/100 self-WER zero", good, self)};
}

Outcome network_gradient() {
  net::EncoderConfig c;
  c.input_dim = 3;
  c.hidden_dim = 4;
  c.embed_dim = 4;
  c.temporal_kernel = 3;
  c.num_layers = 2;
  Rng rng(606);
  net::ModelParams params = net::init_model(c, rng.split("init"));
  net::add_cslr_head(params, Vocabulary({"a", "b"}, "P"), rng.split("init"));
  net::add_cslr_head(params, Vocabulary({"x", "y", "z"}, "A"), rng.split("init"));
  net::add_islr_head(params, Vocabulary({"a", "b"}, "P"), rng.split("init"));
  net::add_islr_head(params, Vocabulary({"x", "y", "z"}, "A"), rng.split("init"));
  Matrix x(6, 3);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = rng.normal();
  // One mixed batch touching every tensor, as the training loop accumulates it.
  auto loss = [&](const net::ModelParams& p, net::ModelParams& g) {
    double l = net::cslr_loss_and_grad(p, x, {0, 1}, "P", 0.25, g) * 0.25;
    l += net::cslr_loss_and_grad(p, x, {2}, "A", 0.25, g) * 0.25;
    l += net::islr_loss_and_grad(p, x, 1, "P", 0.2, 0.25, g) * 0.25;
    l += net::islr_loss_and_grad(p, x, 0, "A", 0.2, 0.25, g) * 0.25;
    return l;
  };
  net::ModelParams grads = params.zeros_like();
  loss(params, grads);
  std::map<std::string, Matrix> analytic;
  grads.for_each_tensor([&](const std::string& n, const Matrix& g) { analytic[n] = g; });
  double worst = 0.0;
  int checked = 0;
  const double eps = 1e-5;
  params.for_each_tensor([&](const std::string& name, Matrix& p) {
    const Matrix& g = analytic.at(name);
    for (Eigen::Index i = 0; i < p.size(); ++i) {
      const double orig = p.data()[i];
      net::ModelParams scratch = params.zeros_like();
      p.data()[i] = orig + eps;
      const double up = loss(params, scratch);
      p.data()[i] = orig - eps;
      const double down = loss(params, scratch);
      p.data()[i] = orig;
      const double num = (up - down) / (2 * eps);
      const double denom = std::max({std::abs(num), std::abs(g.data()[i]), 1e-3});
      worst = std::max(worst, std::abs(num - g.data()[i]) / denom);
      ++checked;
    }
  });
  return {worst < 1e-4, fmt("max relative error %.2e over %.0f parameters", worst, checked)};
}

Outcome sampler_ratio() {
  pipeline::MixedSampler s(400, 400, 0.2, Rng(707));
  int aux = 0;
  for (int i = 0; i < 10000; ++i) aux += s.next().source == 1;
  const double frac = aux / 10000.0;
  return {std::abs(frac - 1.0 / 6.0) <= 0.02, fmt("auxiliary fraction %.4f (target 0.1667 +- 0.02)", frac)};
}

Outcome segmentation(const experiment::ExperimentConfig& cfg) {
  const auto start = std::chrono::steady_clock::now();
  const auto data = synth::generate(synth::SynthConfig{});
  const auto model = pipeline::train_cslr(data.primary.train, data.primary.dev, cfg.cslr).model;
  const auto dict = lexicon::build_dictionary(data.primary.train, model);
  const double secs = seconds_since(start);
  int good = 0, total = 0;
  for (const auto* s : dict.all()) {
    const auto& gt = (*data.primary.train.samples[s->sample_index].gt_boundaries)[static_cast<std::size_t>(s->occurrence)];
    good += iou(s->start, s->end, gt.start, gt.end) >= 0.5;
    ++total;
  }
  int occurrences = 0;
  for (const auto& smp : data.primary.train.samples) occurrences += static_cast<int>(smp.label.size());
  const double frac = static_cast<double>(good) / occurrences;
  return {frac >= 0.9 && secs < 600.0,
          fmt("IoU>=0.5 on %.3f of %.0f occurrences (%.0f segments), stage %.0fs", frac, occurrences, total, secs)};
}

Outcome mapping_recovery(const experiment::ExperimentReport& rep) {
  const double cls = rep.row("map.class_precision").median;
  const double wgt = rep.row("map.weight_precision").median;
  return {cls >= 0.9 && wgt >= 0.7, fmt("median precision class %.3f (>=0.9), weight %.3f (>=0.7)", cls, wgt)};
}

Outcome end_to_end(const experiment::ExperimentReport& rep, double secs) {
  const double mono = rep.row("mono.dev_wer").median;
  const double mt = rep.row("multitask.dev_wer").median;
  const double mixed = rep.row("mapped.dev_wer").median;
  const bool ok = mixed <= mt && mt <= mono && mono - mixed >= 0.02 && secs < 1800.0;
  return {ok, fmt("median dev WER mapped %.4f <= multitask %.4f <= mono %.4f, run %.0fs", mixed, mt, mono, secs)};
}

Outcome degenerate(const experiment::ExperimentConfig& base) {
  experiment::ExperimentConfig cfg = base;
  cfg.synth.train_sentences = 60;
  cfg.synth.dev_sentences = 10;
  cfg.cslr.epochs = 3;
  cfg.islr.epochs = 3;
  cfg.seeds = {11};
  auto ctx = experiment::prepare(cfg, 11, true);
  const auto& d = ctx.data;
  auto c = cfg.cslr;
  c.seed = 11;

  // alpha = 0 against plain monolingual training.
  const auto map0 = experiment::build_mapping(ctx, cfg.strategy, cfg.level, 0.0);
  const auto ap0 = xmap::remap_corpus(d.auxiliary.train, map0);
  const auto mixed0 = pipeline::train_cslr_mixed(ctx.primary_train, ap0.corpus, d.primary.dev, {0.0, c});
  const bool bitwise = same_params(mixed0.model, ctx.cslr_p.model) &&
                       mixed0.report.epoch_loss == ctx.cslr_p.report.epoch_loss;

  // tau = 1: nothing mapped, every auxiliary gloss kept under its own name.
  const auto map1 = experiment::build_mapping(ctx, cfg.strategy, cfg.level, 1.0);
  const auto ap1 = xmap::remap_corpus(d.auxiliary.train, map1);
  bool preserved = ap1.mapped_occurrences == 0;
  for (std::size_t i = 0; i < d.auxiliary.train.size() && preserved; ++i) {
    const auto& src = d.auxiliary.train.samples[i].label;
    const auto& dst = ap1.corpus.samples[i].label;
    preserved = src.size() == dst.size();
    for (std::size_t j = 0; j < src.size() && preserved; ++j) {
      preserved = ap1.vocabulary.gloss(dst[j]) == xmap::preserved_gloss_name(d.auxiliary.train.vocabulary, src[j]);
    }
  }
  // Label sets stay disjoint, so the union head partitions into the two per-language heads.
  std::set<GlossId> used;
  for (const auto& s : ap1.corpus.samples) used.insert(s.label.begin(), s.label.end());
  const bool disjoint = *used.begin() >= static_cast<GlossId>(d.primary.train.vocabulary.size());

  // Same sampler stream and exposure as the multi-task baseline.
  const auto mixed1 = pipeline::train_cslr_mixed(ctx.primary_train, ap1.corpus, d.primary.dev, {0.2, c});
  const auto mt = pipeline::train_multitask_baseline(ctx.primary_train, d.auxiliary.train, d.primary.dev, {0.2, c});
  const bool schedule = mixed1.report.source_counts == mt.report.source_counts &&
                        mixed1.report.steps == mt.report.steps &&
                        pipeline::mixed_batches(ctx.primary_train.size(), ap1.corpus.size(), 0.2, c.batch_size,
                                                c.epochs, Rng(11).split("sampler")) ==
                            pipeline::mixed_batches(ctx.primary_train.size(), d.auxiliary.train.size(), 0.2,
                                                    c.batch_size, c.epochs, Rng(11).split("sampler"));
  const bool ok = bitwise && preserved && disjoint && schedule;
  std::string detail = std::string("alpha=0 bitwise ") + (bitwise ? "yes" : "no") + ", tau=1 labels preserved " +
                       (preserved ? "yes" : "no") + ", disjoint " + (disjoint ? "yes" : "no") +
                       ", multitask schedule identical " + (schedule ? "yes" : "no");
  return {ok, detail};
}

Outcome determinism(const experiment::ExperimentConfig& base) {
  experiment::ExperimentConfig cfg = base;
  cfg.synth.vocab_size_p = 8;
  cfg.synth.vocab_size_a = 10;
  cfg.synth.train_sentences = 40;
  cfg.synth.dev_sentences = 8;
  cfg.synth.test_sentences = 8;
  cfg.cslr.epochs = 2;
  cfg.islr.epochs = 2;
  cfg.seeds = {1, 2};
  int same = 0, total = 0;
  std::string diff;
  for (const auto& name : experiment::preset_names()) {
    const auto a = experiment::run_preset(name, cfg).to_json();
    const auto b = experiment::run_preset(name, cfg).to_json();
    ++total;
    if (a == b) {
      ++same;
    } else {
      diff += " " + name;
    }
  }
  return {same == total, fmt("%.0f/%.0f presets reproduce their report", same, total) + diff};
}

}  // namespace

int main(int argc, char** argv) {
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));
  const auto cfg = desk_config();
  run(1, "CTC likelihood oracle", ctc_likelihood);
  run(2, "CTC gradient check", ctc_gradient);
  run(3, "Viterbi oracle", viterbi);
  run(4, "beam search exactness", beam_exact);
  run(5, "WER oracle", wer_oracle);
  run(6, "network gradient check", network_gradient);
  run(7, "sampler ratio", sampler_ratio);
  run(8, "segmentation quality", [&] { return segmentation(cfg); });
  run(9, "mapping recovery", [&] {
    return mapping_recovery(experiment::run_preset("mapped-class", cfg));
  });
  run(10, "end-to-end trend at 20% primary", [&] {
    const auto start = std::chrono::steady_clock::now();
    const auto rep = experiment::run_preset("scarcity-20", desk_config(true));
    return end_to_end(rep, seconds_since(start));
  });
  run(11, "degenerate equivalences", [&] { return degenerate(cfg); });
  run(12, "determinism", [&] { return determinism(cfg); });
  const int ran = selected.empty() ? 12 : static_cast<int>(selected.size());
  std::printf("%s: %d of %d criteria failed\n", failures == 0 ? "ACCEPTED" : "REJECTED", failures, ran);
  return failures == 0 ? 0 : 1;
}
