#pragma once

#include <string>
#include <vector>

#include "rappie/nn.hpp"

namespace rappie::nn {

// Scaled dot-product multi-head attention with square projection matrices
// (model_dim x model_dim) split per head along columns. Row i of the output
// attends from row i of the query input.
struct MultiHeadAttention {
  int heads = 1;
  Param wq, wk, wv, wo;
  // Inspection snapshot from the latest forward: heads blocks stacked
  // vertically, each q_rows x k_rows of convex weights.
  Mat last_weights;

  MultiHeadAttention() = default;
  MultiHeadAttention(const std::string& prefix, int n_heads, Eigen::Index model_dim, Rng& rng);

  // All four projections are identity; useful for pinning algebraic
  // identities in tests.
  static MultiHeadAttention identity(const std::string& prefix, int n_heads,
                                     Eigen::Index model_dim);

  Eigen::Index model_dim() const { return wq.value.rows(); }

  Tape::Var forward(Tape& t, Tape::Var query, Tape::Var keys, Tape::Var values);

  std::vector<Param*> params();
};

// Two-layer compressor for a user's simulated comments. Layer 1 runs
// self-attention inside each comment matrix and keeps the <CLS> row; layer 2
// runs self-attention across the collected rows and keeps the first one.
struct SelfAttentionStack {
  MultiHeadAttention layer1, layer2;

  SelfAttentionStack() = default;
  SelfAttentionStack(const std::string& prefix, int n_heads, Eigen::Index model_dim, Rng& rng);

  // comment_mats: one Var per comment, token rows x model_dim (real rows
  // only). Returns a 1 x model_dim row.
  Tape::Var compress(Tape& t, const std::vector<Tape::Var>& comment_mats);

  std::vector<Param*> params();
};

}  // namespace rappie::nn
