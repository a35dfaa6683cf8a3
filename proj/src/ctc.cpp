#include "xsl/ctc.hpp"

#include <algorithm>
#include <cmath>
#include <map>

namespace xsl::ctc {

double log_add(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  if (a < b) std::swap(a, b);
  return a + std::log1p(std::exp(b - a));
}

double log_sum_exp(std::span<const double> values) {
  double hi = kNegInf;
  for (double v : values) hi = std::max(hi, v);
  if (hi == kNegInf) return kNegInf;
  double sum = 0.0;
  for (double v : values) sum += std::exp(v - hi);
  return hi + std::log(sum);
}

namespace {

constexpr double kRowTolerance = 1e-6;

void log_softmax_rows(Matrix& m) {
  for (Eigen::Index t = 0; t < m.rows(); ++t) {
    auto row = m.row(t);
    double hi = row.maxCoeff();
    double lse = hi + std::log((row.array() - hi).exp().sum());
    row.array() -= lse;
  }
}

void check_label(const GlossSequence& label, int num_labels) {
  for (GlossId g : label) {
    if (g < 0 || ExtendedVocabulary::extended_id(g) >= num_labels) {
      throw Error(ErrorCode::kVocabularyViolation,
                  "label id " + std::to_string(g) + " outside posterior alphabet of size " +
                      std::to_string(num_labels));
    }
  }
}

// alpha(t, i) in log space, T x (2N+1).
Matrix forward_lattice(const Matrix& log_probs, const ExtendedLabel& ext) {
  const int frames = static_cast<int>(log_probs.rows());
  const int width = ext.size();
  Matrix alpha = Matrix::Constant(frames, width, kNegInf);
  alpha(0, 0) = log_probs(0, ext.ids[0]);
  if (width > 1) alpha(0, 1) = log_probs(0, ext.ids[1]);
  for (int t = 1; t < frames; ++t) {
    for (int i = 0; i < width; ++i) {
      double acc = alpha(t - 1, i);
      if (i >= 1) acc = log_add(acc, alpha(t - 1, i - 1));
      if (i >= 2 && !ext.is_blank(i) && ext.ids[i] != ext.ids[i - 2]) acc = log_add(acc, alpha(t - 1, i - 2));
      alpha(t, i) = acc == kNegInf ? kNegInf : acc + log_probs(t, ext.ids[i]);
    }
  }
  return alpha;
}

// beta(t, i): log probability of emitting frames t..T-1 starting at lattice
// position i, including frame t's own emission.
Matrix backward_lattice(const Matrix& log_probs, const ExtendedLabel& ext) {
  const int frames = static_cast<int>(log_probs.rows());
  const int width = ext.size();
  Matrix beta = Matrix::Constant(frames, width, kNegInf);
  beta(frames - 1, width - 1) = log_probs(frames - 1, ext.ids[width - 1]);
  if (width > 1) beta(frames - 1, width - 2) = log_probs(frames - 1, ext.ids[width - 2]);
  for (int t = frames - 2; t >= 0; --t) {
    for (int i = 0; i < width; ++i) {
      double acc = beta(t + 1, i);
      if (i + 1 < width) acc = log_add(acc, beta(t + 1, i + 1));
      if (i + 2 < width && !ext.is_blank(i + 2) && ext.ids[i + 2] != ext.ids[i]) {
        acc = log_add(acc, beta(t + 1, i + 2));
      }
      beta(t, i) = acc == kNegInf ? kNegInf : acc + log_probs(t, ext.ids[i]);
    }
  }
  return beta;
}

double terminal_score(const Matrix& alpha, int width) {
  const auto last = alpha.rows() - 1;
  double v = alpha(last, width - 1);
  if (width > 1) v = log_add(v, alpha(last, width - 2));
  return v;
}

}  // namespace

PosteriorMatrix::PosteriorMatrix(Matrix log_probs) : log_probs_(std::move(log_probs)) {
  if (log_probs_.rows() < 1 || log_probs_.cols() < 1) {
    throw Error(ErrorCode::kDimensionMismatch, "posterior matrix must be non-empty");
  }
  for (Eigen::Index t = 0; t < log_probs_.rows(); ++t) {
    double lse = kNegInf;
    for (Eigen::Index k = 0; k < log_probs_.cols(); ++k) {
      double v = log_probs_(t, k);
      if (std::isnan(v) || v > 1e-9) {
        throw Error(ErrorCode::kInvalidArgument, "posterior entry is not a log-probability");
      }
      lse = log_add(lse, v);
    }
    if (std::abs(lse) > kRowTolerance) {
      throw Error(ErrorCode::kInvalidArgument, "posterior row " + std::to_string(t) + " is not normalized");
    }
  }
}

PosteriorMatrix PosteriorMatrix::from_logits(const Matrix& logits) {
  Matrix lp = logits;
  log_softmax_rows(lp);
  return PosteriorMatrix(std::move(lp));
}

PosteriorMatrix PosteriorMatrix::from_probs(const Matrix& probs) {
  return PosteriorMatrix(probs.array().log().matrix());
}

ExtendedLabel extend_label(const GlossSequence& label) {
  ExtendedLabel ext;
  ext.source = label;
  ext.ids.reserve(2 * label.size() + 1);
  ext.ids.push_back(kBlank);
  for (GlossId g : label) {
    ext.ids.push_back(ExtendedVocabulary::extended_id(g));
    ext.ids.push_back(kBlank);
  }
  return ext;
}

std::vector<int> predecessors(const ExtendedLabel& ext, int i) {
  if (i == 0) return {0};
  if (i == 1 || ext.is_blank(i) || ext.ids[i] == ext.ids[i - 2]) return {i - 1, i};
  return {i - 2, i - 1, i};
}

GlossSequence collapse(std::span<const int> path) {
  GlossSequence out;
  int prev = kBlank;
  for (int label : path) {
    if (label != kBlank && label != prev) out.push_back(ExtendedVocabulary::gloss_id(label));
    prev = label;
  }
  return out;
}

int min_frames(const GlossSequence& label) {
  int n = static_cast<int>(label.size());
  for (std::size_t i = 1; i < label.size(); ++i) {
    if (label[i] == label[i - 1]) ++n;
  }
  return n;
}

double ctc_log_likelihood(const PosteriorMatrix& posteriors, const GlossSequence& label) {
  check_label(label, posteriors.num_labels());
  auto ext = extend_label(label);
  if (min_frames(label) > posteriors.frames()) return kNegInf;
  Matrix alpha = forward_lattice(posteriors.log_probs(), ext);
  return terminal_score(alpha, ext.size());
}

LossAndGrad ctc_loss_and_grad(const Matrix& logits, const GlossSequence& label) {
  if (logits.rows() < 1 || logits.cols() < 2) {
    throw Error(ErrorCode::kDimensionMismatch, "logits must have T >= 1 rows and |S'| >= 2 columns");
  }
  if (!logits.allFinite()) throw Error(ErrorCode::kInvalidArgument, "non-finite logits");
  check_label(label, static_cast<int>(logits.cols()));
  const int frames = static_cast<int>(logits.rows());
  if (min_frames(label) > frames) {
    throw Error(ErrorCode::kInfeasibleLabel, "label of length " + std::to_string(label.size()) +
                                                 " cannot be aligned to " + std::to_string(frames) + " frames");
  }

  Matrix log_probs = logits;
  log_softmax_rows(log_probs);
  auto ext = extend_label(label);
  Matrix alpha = forward_lattice(log_probs, ext);
  Matrix beta = backward_lattice(log_probs, ext);
  const double log_likelihood = terminal_score(alpha, ext.size());
  if (log_likelihood == kNegInf) {
    throw Error(ErrorCode::kInfeasibleLabel, "label has zero probability under the logits");
  }

  LossAndGrad out;
  out.loss = -log_likelihood;
  out.grad = log_probs.array().exp().matrix();
  for (int t = 0; t < frames; ++t) {
    for (int i = 0; i < ext.size(); ++i) {
      double a = alpha(t, i), b = beta(t, i);
      if (a == kNegInf || b == kNegInf) continue;
      const int k = ext.ids[i];
      // alpha and beta both include frame t's emission.
      out.grad(t, k) -= std::exp(a + b - log_probs(t, k) - log_likelihood);
    }
  }
  return out;
}

AlignmentLattice viterbi_lattice(const PosteriorMatrix& posteriors, const GlossSequence& label) {
  check_label(label, posteriors.num_labels());
  AlignmentLattice lat;
  lat.frames = posteriors.frames();
  lat.label = extend_label(label);
  const int width = lat.width();
  const auto& y = posteriors.log_probs();
  lat.m = Matrix::Constant(lat.frames, width, kNegInf);
  lat.backpointer.assign(static_cast<std::size_t>(lat.frames) * width, -1);

  lat.m(0, 0) = y(0, lat.label.ids[0]);
  if (width > 1) lat.m(0, 1) = y(0, lat.label.ids[1]);

  std::vector<std::vector<int>> groups(static_cast<std::size_t>(width));
  for (int i = 0; i < width; ++i) groups[i] = predecessors(lat.label, i);

  for (int t = 1; t < lat.frames; ++t) {
    for (int i = 0; i < width; ++i) {
      double best = kNegInf;
      int arg = -1;
      // Ascending scan with strict improvement: ties keep the smallest j.
      for (int j : groups[i]) {
        double v = lat.m(t - 1, j);
        if (v > best) {
          best = v;
          arg = j;
        }
      }
      if (arg < 0) continue;
      lat.m(t, i) = best + y(t, lat.label.ids[i]);
      lat.backpointer[static_cast<std::size_t>(t) * width + i] = arg;
    }
  }
  return lat;
}

AlignmentPath viterbi_align(const PosteriorMatrix& posteriors, const GlossSequence& label) {
  AlignmentLattice lat = viterbi_lattice(posteriors, label);
  const int width = lat.width();
  const int last = lat.frames - 1;

  int state = width - 1;
  double best = lat.m(last, width - 1);
  if (width > 1 && lat.m(last, width - 2) >= best) {
    state = width - 2;
    best = lat.m(last, width - 2);
  }
  if (best == kNegInf) {
    throw Error(ErrorCode::kInfeasibleLabel,
                "no alignment of " + std::to_string(label.size()) + " glosses over " +
                    std::to_string(lat.frames) + " frames has nonzero probability");
  }

  AlignmentPath path;
  path.log_prob = best;
  path.labels.assign(static_cast<std::size_t>(lat.frames), kBlank);
  for (int t = last; t >= 0; --t) {
    path.labels[static_cast<std::size_t>(t)] = lat.label.ids[state];
    if (t > 0) state = lat.back(t, state);
  }
  return path;
}

PosteriorMatrix upsample_posteriors(const PosteriorMatrix& posteriors, int factor) {
  if (factor < 1) throw Error(ErrorCode::kInvalidArgument, "upsample factor must be >= 1");
  if (factor == 1) return posteriors;
  const auto& src = posteriors.log_probs();
  Matrix out(src.rows() * factor, src.cols());
  for (Eigen::Index t = 0; t < src.rows(); ++t) {
    for (int r = 0; r < factor; ++r) out.row(t * factor + r) = src.row(t);
  }
  return PosteriorMatrix(std::move(out));
}

GlossSequence greedy_decode(const PosteriorMatrix& posteriors) {
  std::vector<int> path(static_cast<std::size_t>(posteriors.frames()));
  for (int t = 0; t < posteriors.frames(); ++t) {
    int arg = 0;
    for (int k = 1; k < posteriors.num_labels(); ++k) {
      if (posteriors(t, k) > posteriors(t, arg)) arg = k;
    }
    path[static_cast<std::size_t>(t)] = arg;
  }
  return collapse(path);
}

namespace {

struct PrefixScore {
  double blank = kNegInf;     // mass of paths ending in blank
  double non_blank = kNegInf; // mass of paths ending in the prefix's last gloss
  double total() const { return log_add(blank, non_blank); }
};

}  // namespace

GlossSequence beam_decode(const PosteriorMatrix& posteriors, int beam_width) {
  if (beam_width < 1) throw Error(ErrorCode::kInvalidArgument, "beam width must be >= 1");
  using Prefix = std::vector<int>;  // extended ids
  std::vector<std::pair<Prefix, PrefixScore>> beam;
  beam.push_back({Prefix{}, PrefixScore{0.0, kNegInf}});
  const int num_labels = posteriors.num_labels();

  for (int t = 0; t < posteriors.frames(); ++t) {
    std::map<Prefix, PrefixScore> next;
    const double p_blank = posteriors(t, kBlank);
    for (const auto& [prefix, score] : beam) {
      const double total = score.total();
      auto& same = next[prefix];
      same.blank = log_add(same.blank, total + p_blank);
      const int last = prefix.empty() ? -1 : prefix.back();
      for (int c = 1; c < num_labels; ++c) {
        const double p = posteriors(t, c);
        if (p == kNegInf) continue;
        Prefix extended = prefix;
        extended.push_back(c);
        auto& ext = next[extended];
        if (c == last) {
          // A repeat only opens a new gloss after a blank.
          ext.non_blank = log_add(ext.non_blank, score.blank + p);
          auto& stay = next[prefix];
          stay.non_blank = log_add(stay.non_blank, score.non_blank + p);
        } else {
          ext.non_blank = log_add(ext.non_blank, total + p);
        }
      }
    }
    beam.assign(next.begin(), next.end());
    // Stable sort over the lexicographically ordered map keeps ties deterministic.
    std::stable_sort(beam.begin(), beam.end(),
                     [](const auto& a, const auto& b) { return a.second.total() > b.second.total(); });
    if (static_cast<int>(beam.size()) > beam_width) beam.resize(static_cast<std::size_t>(beam_width));
  }

  const Prefix& best = beam.front().first;
  GlossSequence out;
  out.reserve(best.size());
  for (int c : best) out.push_back(ExtendedVocabulary::gloss_id(c));
  return out;
}

}  // namespace xsl::ctc
