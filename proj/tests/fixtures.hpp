#pragma once

#include "xsl/net.hpp"

namespace fixtures {

// Frame classifier that scores each class by its prototype: kernel 1,
// identity encoder, head rows = scaled prototypes (row 0 is the rest).
inline xsl::net::ModelParams prototype_model(const xsl::Matrix& prototypes, const xsl::RowVector& rest,
                                            const xsl::Vocabulary& vocab, double scale) {
  xsl::net::EncoderConfig c;
  c.input_dim = static_cast<int>(prototypes.cols());
  c.hidden_dim = c.input_dim;
  c.embed_dim = c.input_dim;
  c.temporal_kernel = 1;
  c.num_layers = 1;
  xsl::net::ModelParams m = xsl::net::init_model(c, xsl::Rng(0));
  m.encoder[0].weight = xsl::Matrix::Identity(c.input_dim, c.input_dim);
  m.encoder[0].bias.setZero();
  xsl::net::add_cslr_head(m, vocab, xsl::Rng(0));
  auto& head = m.cslr_heads.at(vocab.language_tag());
  head.weight.row(0) = rest * scale;
  head.weight.bottomRows(prototypes.rows()) = prototypes * scale;
  head.bias.setZero();
  return m;
}

}  // namespace fixtures
