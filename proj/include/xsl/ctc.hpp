#pragma once

#include <limits>
#include <span>
#include <vector>

#include "xsl/core.hpp"
#include "xsl/matrix.hpp"

namespace xsl::ctc {

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();
inline constexpr int kBlank = ExtendedVocabulary::kBlank;

double log_add(double a, double b);
double log_sum_exp(std::span<const double> values);

// Per-frame log distribution over the extended alphabet S' (blank = 0).
class PosteriorMatrix {
 public:
  PosteriorMatrix() = default;
  // Rows must already be normalized log-probabilities.
  explicit PosteriorMatrix(Matrix log_probs);

  static PosteriorMatrix from_logits(const Matrix& logits);
  static PosteriorMatrix from_probs(const Matrix& probs);

  int frames() const noexcept { return static_cast<int>(log_probs_.rows()); }
  int num_labels() const noexcept { return static_cast<int>(log_probs_.cols()); }
  double operator()(int t, int k) const { return log_probs_(t, k); }
  const Matrix& log_probs() const noexcept { return log_probs_; }
  Matrix probs() const { return log_probs_.array().exp().matrix(); }

 private:
  Matrix log_probs_;
};

struct AlignmentPath {
  std::vector<int> labels;  // extended ids, one per frame
  double log_prob = kNegInf;
};

// Blank-interleaved label s' of length 2N+1 (blank at even 0-based positions).
struct ExtendedLabel {
  std::vector<int> ids;
  GlossSequence source;

  int size() const noexcept { return static_cast<int>(ids.size()); }
  bool is_blank(int i) const { return ids[static_cast<std::size_t>(i)] == kBlank; }
};

ExtendedLabel extend_label(const GlossSequence& label);

// G(i): lattice positions that may precede position i, in increasing order.
std::vector<int> predecessors(const ExtendedLabel& ext, int i);

// Log-domain max-product lattice m(t,i) with stored backpointers.
struct AlignmentLattice {
  int frames = 0;
  ExtendedLabel label;
  Matrix m;                    // frames x (2N+1), log domain
  std::vector<int> backpointer;  // frames * (2N+1), -1 where undefined

  int width() const noexcept { return label.size(); }
  int back(int t, int i) const { return backpointer[static_cast<std::size_t>(t) * width() + i]; }
};

GlossSequence collapse(std::span<const int> path);
inline GlossSequence collapse(const AlignmentPath& path) { return collapse(path.labels); }

// Minimum number of frames an alignment of `label` needs.
int min_frames(const GlossSequence& label);

double ctc_log_likelihood(const PosteriorMatrix& posteriors, const GlossSequence& label);

struct LossAndGrad {
  double loss = 0.0;
  Matrix grad;  // d loss / d logits
};

// Softmax is applied per frame internally. Throws InfeasibleLabel when no
// alignment of `label` fits into the available frames.
LossAndGrad ctc_loss_and_grad(const Matrix& logits, const GlossSequence& label);

AlignmentLattice viterbi_lattice(const PosteriorMatrix& posteriors, const GlossSequence& label);
AlignmentPath viterbi_align(const PosteriorMatrix& posteriors, const GlossSequence& label);

PosteriorMatrix upsample_posteriors(const PosteriorMatrix& posteriors, int factor);

GlossSequence greedy_decode(const PosteriorMatrix& posteriors);

inline constexpr int kDefaultBeamWidth = 5;

// Prefix beam search without a language model.
GlossSequence beam_decode(const PosteriorMatrix& posteriors, int beam_width = kDefaultBeamWidth);

}  // namespace xsl::ctc
