#include "rappie/attention.hpp"

#include <cmath>

#include "rappie/errors.hpp"

namespace rappie::nn {

MultiHeadAttention::MultiHeadAttention(const std::string& prefix, int n_heads,
                                       Eigen::Index model_dim, Rng& rng)
    : heads(n_heads),
      wq(prefix + ".wq", glorot(model_dim, model_dim, rng)),
      wk(prefix + ".wk", glorot(model_dim, model_dim, rng)),
      wv(prefix + ".wv", glorot(model_dim, model_dim, rng)),
      wo(prefix + ".wo", glorot(model_dim, model_dim, rng)) {
  if (n_heads < 1 || model_dim % n_heads != 0)
    throw DimensionMismatch("head count must divide the model dimension");
}

MultiHeadAttention MultiHeadAttention::identity(const std::string& prefix, int n_heads,
                                                Eigen::Index model_dim) {
  if (n_heads < 1 || model_dim % n_heads != 0)
    throw DimensionMismatch("head count must divide the model dimension");
  MultiHeadAttention m;
  m.heads = n_heads;
  m.wq = Param(prefix + ".wq", Mat::Identity(model_dim, model_dim));
  m.wk = Param(prefix + ".wk", Mat::Identity(model_dim, model_dim));
  m.wv = Param(prefix + ".wv", Mat::Identity(model_dim, model_dim));
  m.wo = Param(prefix + ".wo", Mat::Identity(model_dim, model_dim));
  return m;
}

Tape::Var MultiHeadAttention::forward(Tape& t, Tape::Var query, Tape::Var keys,
                                      Tape::Var values) {
  Eigen::Index dim = model_dim();
  if (t.val(query).cols() != dim || t.val(keys).cols() != dim || t.val(values).cols() != dim)
    throw DimensionMismatch("attention inputs must have model_dim columns");
  if (t.val(keys).rows() != t.val(values).rows())
    throw DimensionMismatch("keys and values must have matching row counts");

  Eigen::Index dh = dim / heads;
  Tape::Var q = t.matmul(query, t.leaf(wq));
  Tape::Var k = t.matmul(keys, t.leaf(wk));
  Tape::Var v = t.matmul(values, t.leaf(wv));

  last_weights.resize(heads * t.val(query).rows(), t.val(keys).rows());
  std::vector<Tape::Var> outs;
  outs.reserve(static_cast<std::size_t>(heads));
  for (int h = 0; h < heads; ++h) {
    Tape::Var qh = t.cols(q, h * dh, dh);
    Tape::Var kh = t.cols(k, h * dh, dh);
    Tape::Var vh = t.cols(v, h * dh, dh);
    Tape::Var scores = t.scale(t.matmul(qh, t.transpose(kh)), 1.0 / std::sqrt(double(dh)));
    Tape::Var weights = t.softmax_rows(scores);
    last_weights.middleRows(h * t.val(query).rows(), t.val(query).rows()) = t.val(weights);
    outs.push_back(t.matmul(weights, vh));
  }
  Tape::Var concat = heads == 1 ? outs[0] : t.hstack(outs);
  return t.matmul(concat, t.leaf(wo));
}

std::vector<Param*> MultiHeadAttention::params() { return {&wq, &wk, &wv, &wo}; }

SelfAttentionStack::SelfAttentionStack(const std::string& prefix, int n_heads,
                                       Eigen::Index model_dim, Rng& rng)
    : layer1(prefix + ".l1", n_heads, model_dim, rng),
      layer2(prefix + ".l2", n_heads, model_dim, rng) {}

Tape::Var SelfAttentionStack::compress(Tape& t, const std::vector<Tape::Var>& comment_mats) {
  if (comment_mats.empty()) throw EmptySet("no comment matrices to compress");
  std::vector<Tape::Var> firsts;
  firsts.reserve(comment_mats.size());
  for (Tape::Var m : comment_mats) {
    Tape::Var attended = layer1.forward(t, m, m, m);
    firsts.push_back(t.rows(attended, 0, 1));
  }
  Tape::Var stacked = firsts.size() == 1 ? firsts[0] : t.vstack(firsts);
  Tape::Var fused = layer2.forward(t, stacked, stacked, stacked);
  return t.rows(fused, 0, 1);
}

std::vector<Param*> SelfAttentionStack::params() {
  std::vector<Param*> out = layer1.params();
  for (Param* p : layer2.params()) out.push_back(p);
  return out;
}

}  // namespace rappie::nn
