#include "rappie/graph.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <sstream>

#include "rappie/errors.hpp"
#include "rappie/util.hpp"

namespace rappie {

namespace {

using Adjacency = std::vector<std::vector<Eigen::Index>>;

Eigen::MatrixXd mean_round(const Adjacency& adjacency, const Eigen::MatrixXd& in) {
  Eigen::MatrixXd out(in.rows(), in.cols());
  for (Eigen::Index i = 0; i < in.rows(); ++i) {
    const auto& nbrs = adjacency[static_cast<std::size_t>(i)];
    if (nbrs.empty()) {
      out.row(i) = in.row(i);
      continue;
    }
    Eigen::RowVectorXd acc = Eigen::RowVectorXd::Zero(in.cols());
    for (Eigen::Index j : nbrs) acc += in.row(j);
    out.row(i) = acc / static_cast<double>(nbrs.size());
  }
  return out;
}

void insert_edge(EdgeSet& edges, Eigen::Index src, Eigen::Index dst) {
  if (src == dst) return;  // the network carries no self-loops
  edges.emplace(src, dst);
}

}  // namespace

const std::string& view_name(ViewId v) {
  static const std::string names[] = {"V_f", "V_r", "V_c"};
  return names[static_cast<int>(v)];
}

const EdgeSet& OverlappingNetwork::edges(ViewId v) const {
  switch (v) {
    case ViewId::Following: return e_fw;
    case ViewId::Repost: return e_rp;
    default: return e_rc;
  }
}

OverlappingNetwork build_overlapping_network(const Corpus& corpus, const FeedbackLedger& ledger) {
  OverlappingNetwork net;
  net.nodes = corpus.sorted_user_ids();
  for (std::size_t i = 0; i < net.nodes.size(); ++i) {
    net.node_index.emplace(net.nodes[i], static_cast<Eigen::Index>(i));
  }

  for (const auto& [follower, followee] : corpus.follows) {
    auto fi = net.node_index.find(follower);
    auto fj = net.node_index.find(followee);
    if (fi == net.node_index.end()) throw DanglingReference(follower, "follow edge");
    if (fj == net.node_index.end()) throw DanglingReference(followee, "follow edge");
    insert_edge(net.e_fw, fi->second, fj->second);
  }

  for (const SimulatedFeedback& fb : ledger.entries) {
    auto reader = net.node_index.find(fb.reader_id);
    if (reader == net.node_index.end()) throw DanglingReference(fb.reader_id, "ledger reader");
    auto post = corpus.posts.find(fb.post_id);
    if (post == corpus.posts.end()) throw DanglingReference(fb.post_id, "ledger post");
    auto author = net.node_index.find(post->second.author_id);
    if (author == net.node_index.end())
      throw DanglingReference(post->second.author_id, "post author");
    switch (fb.behavior) {
      case Behavior::Repost: insert_edge(net.e_rp, reader->second, author->second); break;
      case Behavior::RepostWithComment:
        insert_edge(net.e_rc, reader->second, author->second);
        break;
      case Behavior::NoRepost: break;
    }
  }
  return net;
}

void save_network(const OverlappingNetwork& net, const std::string& path) {
  std::ostringstream out;
  out << "RAPPIENET1\n";
  out << "nodes " << net.nodes.size() << "\n";
  for (const std::string& id : net.nodes) out << id << "\n";
  const std::pair<const char*, const EdgeSet*> sections[] = {
      {"following", &net.e_fw}, {"repost", &net.e_rp}, {"comment", &net.e_rc}};
  for (const auto& [tag, edges] : sections) {
    out << "edges " << tag << " " << edges->size() << "\n";
    for (const auto& [src, dst] : *edges) out << src << " " << dst << "\n";
  }
  write_file_atomic(path, out.str());
}

OverlappingNetwork load_network(const std::string& path) {
  std::istringstream in(read_file(path));
  std::string line;
  std::size_t line_no = 0;
  auto next_line = [&]() -> std::string& {
    if (!std::getline(in, line)) throw MalformedRecord(line_no + 1, "unexpected end of file");
    ++line_no;
    return line;
  };

  if (next_line() != "RAPPIENET1") throw MalformedRecord(line_no, "bad network file magic");

  OverlappingNetwork net;
  std::istringstream header(next_line());
  std::string word;
  std::size_t n_nodes = 0;
  if (!(header >> word >> n_nodes) || word != "nodes")
    throw MalformedRecord(line_no, "expected node count");
  net.nodes.reserve(n_nodes);
  for (std::size_t i = 0; i < n_nodes; ++i) {
    std::string id = next_line();
    if (id.empty()) throw MalformedRecord(line_no, "empty node id");
    if (net.node_index.count(id)) throw DuplicateId(id, "network nodes");
    net.node_index.emplace(id, static_cast<Eigen::Index>(net.nodes.size()));
    net.nodes.push_back(std::move(id));
  }

  const std::pair<const char*, EdgeSet*> sections[] = {
      {"following", &net.e_fw}, {"repost", &net.e_rp}, {"comment", &net.e_rc}};
  for (const auto& [tag, edges] : sections) {
    std::istringstream sec(next_line());
    std::string kind, name;
    std::size_t count = 0;
    if (!(sec >> kind >> name >> count) || kind != "edges" || name != tag)
      throw MalformedRecord(line_no, std::string("expected '") + tag + "' edge section");
    for (std::size_t i = 0; i < count; ++i) {
      std::istringstream row(next_line());
      long long src = -1, dst = -1;
      if (!(row >> src >> dst) || src < 0 || dst < 0 ||
          src >= static_cast<long long>(n_nodes) || dst >= static_cast<long long>(n_nodes))
        throw MalformedRecord(line_no, "bad edge endpoints");
      if (src == dst) throw MalformedRecord(line_no, "self-loop edge");
      edges->emplace(static_cast<Eigen::Index>(src), static_cast<Eigen::Index>(dst));
    }
  }
  return net;
}

ViewGraph make_view(const OverlappingNetwork& net, ViewId id,
                    const Eigen::MatrixXd& initial_embeddings) {
  if (initial_embeddings.rows() != net.size())
    throw DimensionMismatch("initial embeddings rows != node count");
  ViewGraph view;
  view.view_id = id;
  view.node_embeddings = initial_embeddings;
  const EdgeSet& edges = net.edges(id);
  view.positives.assign(edges.begin(), edges.end());

  std::vector<std::set<Eigen::Index>> nbrs(net.nodes.size());
  for (const auto& [src, dst] : edges) {
    nbrs[static_cast<std::size_t>(src)].insert(dst);
    nbrs[static_cast<std::size_t>(dst)].insert(src);
  }
  view.adjacency.resize(net.nodes.size());
  for (std::size_t i = 0; i < nbrs.size(); ++i)
    view.adjacency[i].assign(nbrs[i].begin(), nbrs[i].end());
  return view;
}

Eigen::MatrixXd propagate(const ViewGraph& view, int rounds) {
  if (rounds < 0) throw UsageError("propagation rounds must be nonnegative");
  if (view.node_embeddings.rows() != view.size())
    throw DimensionMismatch("embeddings rows != node count");
  Eigen::MatrixXd e = view.node_embeddings;
  for (int r = 0; r < rounds; ++r) e = mean_round(view.adjacency, e);
  return e;
}

nn::Tape::Var propagate_op(nn::Tape& t, const Adjacency& adjacency, nn::Tape::Var embeddings,
                           int rounds) {
  if (rounds < 0) throw UsageError("propagation rounds must be nonnegative");
  if (t.val(embeddings).rows() != static_cast<Eigen::Index>(adjacency.size()))
    throw DimensionMismatch("embeddings rows != node count");
  auto adj = std::make_shared<const Adjacency>(adjacency);
  nn::Tape::Var cur = embeddings;
  for (int r = 0; r < rounds; ++r) {
    nn::Mat value = mean_round(*adj, t.val(cur));
    cur = t.custom(std::move(value), {cur}, [adj](const nn::Mat& g, std::vector<nn::Mat*>& pg) {
      nn::Mat& gin = *pg[0];
      for (Eigen::Index i = 0; i < g.rows(); ++i) {
        const auto& nbrs = (*adj)[static_cast<std::size_t>(i)];
        if (nbrs.empty()) {
          gin.row(i) += g.row(i);
          continue;
        }
        double w = 1.0 / static_cast<double>(nbrs.size());
        for (Eigen::Index j : nbrs) gin.row(j) += g.row(i) * w;
      }
    });
  }
  return cur;
}

std::vector<std::pair<Eigen::Index, Eigen::Index>> sample_negatives(Eigen::Index n_nodes,
                                                                    const EdgeSet& positives,
                                                                    std::size_t count, Rng& rng) {
  std::vector<std::pair<Eigen::Index, Eigen::Index>> out;
  if (n_nodes < 2) return out;
  std::size_t ordered_pairs = static_cast<std::size_t>(n_nodes) *
                              static_cast<std::size_t>(n_nodes - 1);
  if (positives.size() >= ordered_pairs) return out;  // graph is complete
  out.reserve(count);
  std::size_t attempts = 0;
  const std::size_t max_attempts = 10000 * (count + 1);
  while (out.size() < count && attempts < max_attempts) {
    ++attempts;
    auto i = static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(n_nodes)));
    auto j = static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(n_nodes)));
    if (i == j || positives.count({i, j})) continue;
    out.emplace_back(i, j);
  }
  return out;
}

ViewTrainResult train_view(const ViewGraph& view, const ViewTrainOptions& opts) {
  if (view.positives.empty()) throw NoEdges("view " + view_name(view.view_id) + " has no edges");
  if (opts.epochs < 0) throw UsageError("epochs must be nonnegative");
  if (opts.negatives_per_positive < 0) throw UsageError("negative ratio must be nonnegative");

  const Eigen::Index n = view.size();
  const Eigen::Index d1 = view.node_embeddings.cols();
  EdgeSet positive_set(view.positives.begin(), view.positives.end());

  Rng init_rng(mix64(opts.seed, fnv1a64(view_name(view.view_id))));
  nn::Param emb("view.emb", view.node_embeddings);
  nn::Param edge_w("view.edge.w", nn::glorot(2, 2 * d1, init_rng));
  nn::Param edge_b("view.edge.b", nn::Mat::Zero(2, 1));
  std::vector<nn::Param*> trainables = {&emb, &edge_w, &edge_b};

  nn::Adam optimizer(nn::Adam::Options{.lr = opts.lr});
  ViewTrainResult result;

  for (int epoch = 0; epoch < opts.epochs; ++epoch) {
    for (nn::Param* p : trainables) p->zero_grad();

    nn::Tape t;
    nn::Tape::Var e0 = t.leaf(emb);
    nn::Tape::Var ek = propagate_op(t, view.adjacency, e0, opts.rounds);

    Rng epoch_rng(mix64(opts.seed, static_cast<std::uint64_t>(epoch) + 1));
    std::size_t wanted =
        view.positives.size() * static_cast<std::size_t>(opts.negatives_per_positive);
    auto negatives = sample_negatives(n, positive_set, wanted, epoch_rng);

    std::vector<nn::Tape::Var> pair_rows;
    pair_rows.reserve(view.positives.size() + negatives.size());
    auto push_pair = [&](Eigen::Index i, Eigen::Index j) {
      pair_rows.push_back(t.hstack({t.rows(ek, i, 1), t.rows(ek, j, 1)}));
    };
    for (const auto& [i, j] : view.positives) push_pair(i, j);
    for (const auto& [i, j] : negatives) push_pair(i, j);
    const auto n_pairs = static_cast<Eigen::Index>(pair_rows.size());

    nn::Mat one_hot = nn::Mat::Zero(n_pairs, 2);
    for (Eigen::Index p = 0; p < n_pairs; ++p)
      one_hot(p, p < static_cast<Eigen::Index>(view.positives.size()) ? 1 : 0) = 1.0;

    nn::Tape::Var pairs = t.vstack(pair_rows);
    nn::Tape::Var logits = t.add(t.matmul(pairs, t.transpose(t.leaf(edge_w))),
                                 t.matmul(t.constant(nn::Mat::Ones(n_pairs, 1)),
                                          t.transpose(t.leaf(edge_b))));
    nn::Tape::Var probs = t.softmax_rows(logits);
    nn::Tape::Var logp = t.log_clamped(probs, 1e-12);
    nn::Tape::Var loss =
        t.scale(t.sum_all(t.hadamard(t.constant(one_hot), logp)), -1.0 / static_cast<double>(n_pairs));

    result.losses.push_back(t.val(loss)(0, 0));
    t.backward(loss);
    optimizer.step(trainables);
  }

  ViewGraph trained = view;
  trained.node_embeddings = emb.value;
  result.embeddings = propagate(trained, opts.rounds);
  result.initial = std::move(emb.value);
  result.edge_w = std::move(edge_w);
  result.edge_b = std::move(edge_b);
  return result;
}

double edge_probability(const Eigen::MatrixXd& embeddings, const nn::Param& edge_w,
                        const nn::Param& edge_b, Eigen::Index i, Eigen::Index j) {
  if (i < 0 || j < 0 || i >= embeddings.rows() || j >= embeddings.rows())
    throw DimensionMismatch("edge probability node out of range");
  Eigen::VectorXd cat(2 * embeddings.cols());
  cat << embeddings.row(i).transpose(), embeddings.row(j).transpose();
  Eigen::Vector2d z = edge_w.value * cat + edge_b.value.col(0);
  double mx = z.maxCoeff();
  Eigen::Vector2d e = (z.array() - mx).exp();
  return e(1) / e.sum();
}

Eigen::MatrixXd ReaderFeatureSet::user_matrix(const std::string& user_id) const {
  auto it = std::lower_bound(nodes.begin(), nodes.end(), user_id);
  if (it == nodes.end() || *it != user_id) throw DanglingReference(user_id, "reader features");
  return row_matrix(static_cast<Eigen::Index>(it - nodes.begin()));
}

Eigen::MatrixXd ReaderFeatureSet::row_matrix(Eigen::Index row) const {
  Eigen::MatrixXd m(3, dim());
  for (int v = 0; v < 3; ++v) m.row(v) = view_embeddings[static_cast<std::size_t>(v)].row(row);
  return m;
}

ReaderFeatureSet collect_reader_features(const std::vector<std::string>& nodes,
                                         const std::array<Eigen::MatrixXd, 3>& final_embeddings) {
  ReaderFeatureSet set;
  set.nodes = nodes;
  for (std::size_t v = 0; v < 3; ++v) {
    if (final_embeddings[v].rows() != static_cast<Eigen::Index>(nodes.size()))
      throw NodeSetMismatch("view " + view_name(kViews[v]) + " trained over a different node set");
    if (final_embeddings[v].cols() != final_embeddings[0].cols())
      throw DimensionMismatch("view embedding widths differ");
    set.view_embeddings[v] = final_embeddings[v];
  }
  return set;
}

}  // namespace rappie
