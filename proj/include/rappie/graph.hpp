#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "rappie/agents.hpp"
#include "rappie/corpus.hpp"
#include "rappie/nn.hpp"

namespace rappie {

enum class ViewId { Following, Repost, Comment };
inline constexpr std::array<ViewId, 3> kViews = {ViewId::Following, ViewId::Repost,
                                                 ViewId::Comment};
const std::string& view_name(ViewId v);  // "V_f", "V_r", "V_c"

using EdgeSet = std::set<std::pair<Eigen::Index, Eigen::Index>>;

// Global interaction network. Node order is the sorted user-id list; edges
// are directed (src, dst) index pairs without self-loops.
struct OverlappingNetwork {
  std::vector<std::string> nodes;
  std::map<std::string, Eigen::Index> node_index;
  EdgeSet e_fw, e_rp, e_rc;

  const EdgeSet& edges(ViewId v) const;
  Eigen::Index size() const { return static_cast<Eigen::Index>(nodes.size()); }
};

// Follow edges come from the corpus; repost/comment edges from ledger
// entries (reader -> post author), collapsed per edge type.
OverlappingNetwork build_overlapping_network(const Corpus& corpus, const FeedbackLedger& ledger);

void save_network(const OverlappingNetwork& net, const std::string& path);
OverlappingNetwork load_network(const std::string& path);

// One behavior view: undirected adjacency for aggregation, the directed
// edges as prediction targets, and the node embeddings the view starts from.
struct ViewGraph {
  ViewId view_id = ViewId::Following;
  std::vector<std::vector<Eigen::Index>> adjacency;          // sorted, self excluded
  std::vector<std::pair<Eigen::Index, Eigen::Index>> positives;  // sorted directed edges
  Eigen::MatrixXd node_embeddings;

  Eigen::Index size() const { return static_cast<Eigen::Index>(adjacency.size()); }
};

ViewGraph make_view(const OverlappingNetwork& net, ViewId id,
                    const Eigen::MatrixXd& initial_embeddings);

// K rounds of synchronous neighbor-mean aggregation; isolated nodes keep
// their embedding. Forward-only.
Eigen::MatrixXd propagate(const ViewGraph& view, int rounds);

// Same aggregation as a tape op so gradients flow back to the embeddings.
nn::Tape::Var propagate_op(nn::Tape& t, const std::vector<std::vector<Eigen::Index>>& adjacency,
                           nn::Tape::Var embeddings, int rounds);

struct ViewTrainOptions {
  int rounds = 1;  // propagation rounds per forward pass
  int epochs = 10;
  double lr = 2e-6;
  int negatives_per_positive = 1;
  std::uint64_t seed = 0;
};

struct ViewTrainResult {
  Eigen::MatrixXd embeddings;  // after the final propagation
  Eigen::MatrixXd initial;     // trained pre-propagation node embeddings
  nn::Param edge_w, edge_b;    // 2 x 2d1 head and 2 x 1 bias
  std::vector<double> losses;  // one mean cross-entropy per epoch
};

// Edge-prediction training: per epoch, propagate, score positives plus
// freshly sampled negatives with a 2-class softmax head, and descend the
// cross-entropy. Trains the initial node embeddings and the head.
ViewTrainResult train_view(const ViewGraph& view, const ViewTrainOptions& opts);

// Uniform ordered non-edge pairs (never a positive, never a self-pair).
std::vector<std::pair<Eigen::Index, Eigen::Index>> sample_negatives(
    Eigen::Index n_nodes, const EdgeSet& positives, std::size_t count, Rng& rng);

// Probability that the trained head assigns class "edge" to the ordered
// pair (i, j) of rows from `embeddings`.
double edge_probability(const Eigen::MatrixXd& embeddings, const nn::Param& edge_w,
                        const nn::Param& edge_b, Eigen::Index i, Eigen::Index j);

// Per-view final embeddings over one shared node set, stacked per user in
// view order (V_f, V_r, V_c).
struct ReaderFeatureSet {
  std::vector<std::string> nodes;
  std::array<Eigen::MatrixXd, 3> view_embeddings;  // each |U| x d1

  Eigen::Index dim() const { return view_embeddings[0].cols(); }
  Eigen::MatrixXd user_matrix(const std::string& user_id) const;  // 3 x d1
  Eigen::MatrixXd row_matrix(Eigen::Index row) const;             // 3 x d1
};

ReaderFeatureSet collect_reader_features(const std::vector<std::string>& nodes,
                                         const std::array<Eigen::MatrixXd, 3>& final_embeddings);

}  // namespace rappie
