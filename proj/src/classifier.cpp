#include "rappie/classifier.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <iomanip>
#include <sstream>
#include <string_view>

#include <nlohmann/json.hpp>

#include "rappie/artifacts.hpp"
#include "rappie/errors.hpp"

namespace rappie {

namespace {

constexpr double kLogFloor = 1e-12;

std::string fmt4(double v) {
  if (std::isnan(v)) return "-";
  std::ostringstream out;
  out << std::fixed << std::setprecision(4) << v;
  return out.str();
}

int argmax_label(const Eigen::RowVectorXd& probs) {
  int best = 0;
  for (int c = 1; c < probs.size(); ++c)
    if (probs(c) > probs(best)) best = c;
  return best;
}

}  // namespace

FusionParams FusionParams::init(const FusionConfig& cfg) {
  if (cfg.n_tokens <= 0 || cfg.d1 <= 0 || cfg.d2 <= 0)
    throw DimensionMismatch("fusion dimensions must be positive");
  Rng rng(cfg.seed);
  FusionParams p;
  p.w_s = nn::Param("fuse.w_s", nn::glorot(cfg.n_tokens, cfg.d2, rng));
  p.b_s = nn::Param("fuse.b_s", nn::Mat::Zero(cfg.d2, 1));
  p.w_r = nn::Param("fuse.w_r", nn::glorot(3, cfg.d2, rng));
  p.b_r = nn::Param("fuse.b_r", nn::Mat::Zero(cfg.d2, 1));
  p.w_e = nn::Param("fuse.w_e", nn::glorot(4, cfg.d2, rng));
  p.b_e = nn::Param("fuse.b_e", nn::Mat::Zero(cfg.d2, 1));
  p.att_content = nn::MultiHeadAttention("fuse.att_s", cfg.heads, cfg.d1, rng);
  p.att_role = nn::MultiHeadAttention("fuse.att_role", cfg.heads, cfg.d1, rng);
  p.w_gs = nn::Param("fuse.w_gs", nn::glorot(cfg.d2, cfg.d2, rng));
  p.b_gs = nn::Param("fuse.b_gs", nn::Mat::Zero(cfg.d2, 1));
  p.w_gr = nn::Param("fuse.w_gr", nn::glorot(cfg.d2, cfg.d2, rng));
  p.b_gr = nn::Param("fuse.b_gr", nn::Mat::Zero(cfg.d2, 1));
  p.w_o = nn::Param("fuse.w_o",
                    nn::glorot(static_cast<Eigen::Index>(kEmotionCount), 4 * cfg.d2, rng));
  p.b_o = nn::Param("fuse.b_o", nn::Mat::Zero(static_cast<Eigen::Index>(kEmotionCount), 1));
  return p;
}

std::vector<nn::Param*> FusionParams::params() {
  std::vector<nn::Param*> out = {&w_s, &b_s, &w_r, &b_r, &w_e, &b_e};
  for (nn::Param* p : att_content.params()) out.push_back(p);
  for (nn::Param* p : att_role.params()) out.push_back(p);
  out.insert(out.end(), {&w_gs, &b_gs, &w_gr, &b_gr, &w_o, &b_o});
  return out;
}

ProjectedInputs project_inputs(nn::Tape& t, FusionParams& params, nn::Tape::Var h_s,
                               nn::Tape::Var h_rf, nn::Tape::Var h_role) {
  const Eigen::Index d1 = params.d1();
  if (t.val(h_s).rows() != params.n_tokens() || t.val(h_s).cols() != d1)
    throw DimensionMismatch("content matrix must be n_tokens x d1");
  if (t.val(h_rf).rows() != 3 || t.val(h_rf).cols() != d1)
    throw DimensionMismatch("reader features must be 3 x d1");
  if (t.val(h_role).rows() != 4 || t.val(h_role).cols() != d1)
    throw DimensionMismatch("role matrix must be 4 x d1");
  auto project = [&](nn::Param& w, nn::Param& b, nn::Tape::Var h) {
    return t.add_col_broadcast(t.matmul(t.transpose(t.leaf(w)), h), t.leaf(b));
  };
  ProjectedInputs out;
  out.m_s = project(params.w_s, params.b_s, h_s);
  out.m_rf = project(params.w_r, params.b_r, h_rf);
  out.m_role = project(params.w_e, params.b_e, h_role);
  return out;
}

nn::Tape::Var apply_view_mask(nn::Tape& t, nn::Tape::Var h_rf, const AblationFlags& flags) {
  if (!flags.drop_view[0] && !flags.drop_view[1] && !flags.drop_view[2]) return h_rf;
  const Eigen::Index cols = t.val(h_rf).cols();
  nn::Mat mask = nn::Mat::Ones(3, cols);
  for (int v = 0; v < 3; ++v)
    if (flags.drop_view[static_cast<std::size_t>(v)]) mask.row(v).setZero();
  return t.hadamard(h_rf, t.constant(std::move(mask)));
}

nn::Tape::Var fuse(nn::Tape& t, FusionParams& params, const ProjectedInputs& inputs,
                   const AblationFlags& flags) {
  auto gated_branch = [&](nn::MultiHeadAttention& att, nn::Tape::Var keys_values,
                          nn::Param& w_g, nn::Param& b_g) {
    nn::Tape::Var query = flags.drop_reader_query ? keys_values : inputs.m_rf;
    nn::Tape::Var attended = att.forward(t, query, keys_values, keys_values);
    nn::Tape::Var pooled = t.mean_cols(attended);  // d2 x 1
    nn::Tape::Var gate = t.sigmoid(t.add(t.matmul(t.leaf(w_g), pooled), t.leaf(b_g)));
    return t.hadamard(pooled, gate);
  };

  nn::Tape::Var g_s = gated_branch(params.att_content, inputs.m_s, params.w_gs, params.b_gs);
  nn::Tape::Var g_role =
      flags.drop_role_gate
          ? t.constant(nn::Mat::Zero(params.d2(), 1))
          : gated_branch(params.att_role, inputs.m_role, params.w_gr, params.b_gr);

  return t.vstack({g_s, g_role, t.add(g_s, g_role), t.hadamard(g_s, g_role)});
}

nn::Tape::Var predict_probs(nn::Tape& t, FusionParams& params, nn::Tape::Var g_o) {
  if (t.val(g_o).rows() != 4 * params.d2() || t.val(g_o).cols() != 1)
    throw DimensionMismatch("fused vector must be 4*d2 x 1");
  nn::Tape::Var logits = t.add(t.matmul(t.leaf(params.w_o), g_o), t.leaf(params.b_o));
  return t.softmax_rows(t.transpose(logits));
}

Eigen::VectorXd predict(FusionParams& params, const Eigen::MatrixXd& h_s,
                        const Eigen::MatrixXd& h_rf, const Eigen::MatrixXd& h_role,
                        const AblationFlags& flags) {
  nn::Tape t;
  nn::Tape::Var masked = apply_view_mask(t, t.constant(h_rf), flags);
  ProjectedInputs proj =
      project_inputs(t, params, t.constant(h_s), masked, t.constant(h_role));
  nn::Tape::Var probs = predict_probs(t, params, fuse(t, params, proj, flags));
  return t.val(probs).row(0).transpose();
}

nn::Tape::Var nll_loss(nn::Tape& t, const std::vector<nn::Tape::Var>& prob_rows,
                       const std::vector<int>& labels) {
  if (prob_rows.empty()) throw EmptyBatch("loss over an empty batch");
  if (prob_rows.size() != labels.size())
    throw LengthMismatch("predictions and golds differ in length");
  const auto batch = static_cast<Eigen::Index>(prob_rows.size());
  nn::Mat one_hot = nn::Mat::Zero(batch, static_cast<Eigen::Index>(kEmotionCount));
  for (Eigen::Index i = 0; i < batch; ++i) {
    int y = labels[static_cast<std::size_t>(i)];
    if (y < 0 || y >= static_cast<int>(kEmotionCount)) throw DataError("gold label out of range");
    one_hot(i, y) = 1.0;
  }
  nn::Tape::Var probs = t.vstack(prob_rows);
  nn::Tape::Var logp = t.log_clamped(probs, kLogFloor);
  return t.scale(t.sum_all(t.hadamard(t.constant(std::move(one_hot)), logp)),
                 -1.0 / static_cast<double>(batch));
}

nn::Tape::Var l2_penalty(nn::Tape& t, const std::vector<nn::Param*>& params, double coeff) {
  if (params.empty() || coeff == 0.0) return t.constant(nn::Mat::Zero(1, 1));
  nn::Tape::Var acc = t.sumsq(t.leaf(*params[0]));
  for (std::size_t i = 1; i < params.size(); ++i) acc = t.add(acc, t.sumsq(t.leaf(*params[i])));
  return t.scale(acc, coeff);
}

double loss_value(const std::vector<Eigen::VectorXd>& predictions, const std::vector<int>& golds,
                  double l2_coeff, const std::vector<nn::Param*>& params) {
  if (predictions.empty()) throw EmptyBatch("loss over an empty batch");
  if (predictions.size() != golds.size())
    throw LengthMismatch("predictions and golds differ in length");
  double sum = 0.0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    if (golds[i] < 0 || golds[i] >= static_cast<int>(predictions[i].size()))
      throw DataError("gold label out of range");
    double p = predictions[i](golds[i]);
    sum += -std::log(p < kLogFloor ? kLogFloor : p);
  }
  double loss = sum / static_cast<double>(predictions.size());
  if (l2_coeff != 0.0) {
    double sq = 0.0;
    for (const nn::Param* p : params) sq += p->value.squaredNorm();
    loss += l2_coeff * sq;
  }
  return loss;
}

// ---------------------------------------------------------------------------

nn::Tape::Var FrozenFeatureProvider::features(nn::Tape& t, Eigen::Index row) {
  return t.constant(set_->row_matrix(row));
}

nn::Tape::Var AttributeFeatureProvider::features(nn::Tape& t, Eigen::Index row) {
  if (row < 0 || row >= attrs_.rows())
    throw DimensionMismatch("attribute provider row out of range");
  return t.constant(attrs_.row(row).replicate(3, 1));
}

EndToEndFeatureProvider::EndToEndFeatureProvider(Setup setup) : setup_(std::move(setup)) {
  if (setup_.encoder_params == nullptr || setup_.contexts == nullptr)
    throw MissingArtifact("end-to-end provider needs encoder parameters and user contexts");
  const auto n = setup_.contexts->size();
  for (std::size_t v = 0; v < 3; ++v) {
    if (setup_.adjacency[v].size() != n)
      throw NodeSetMismatch("view adjacency does not cover the user set");
    if (setup_.deltas[v].rows() != static_cast<Eigen::Index>(n))
      throw NodeSetMismatch("view delta does not cover the user set");
  }
}

void EndToEndFeatureProvider::begin_batch(nn::Tape& t) {
  nn::Tape::Var role_var = t.constant(setup_.role_matrix);
  std::vector<nn::Tape::Var> rows;
  rows.reserve(setup_.contexts->size());
  for (const auto& [user_id, ctx] : *setup_.contexts) {
    rows.push_back(user_embedding(t, *setup_.encoder_params, ctx, role_var, setup_.use_roles));
  }
  nn::Tape::Var h_apr = t.vstack(rows);
  for (std::size_t v = 0; v < 3; ++v) {
    nn::Tape::Var shifted = t.add(h_apr, t.constant(setup_.deltas[v]));
    views_[v] = propagate_op(t, setup_.adjacency[v], shifted, setup_.rounds);
  }
}

nn::Tape::Var EndToEndFeatureProvider::features(nn::Tape& t, Eigen::Index row) {
  if (!views_[0].valid()) throw MissingArtifact("features() before begin_batch()");
  return t.vstack({t.rows(views_[0], row, 1), t.rows(views_[1], row, 1),
                   t.rows(views_[2], row, 1)});
}

std::array<Eigen::MatrixXd, 3> EndToEndFeatureProvider::materialize() {
  nn::Tape t;
  begin_batch(t);
  return {t.val(views_[0]), t.val(views_[1]), t.val(views_[2])};
}

// ---------------------------------------------------------------------------

const std::vector<LabeledExample>& ClassifierData::split(Split s) const {
  switch (s) {
    case Split::Train: return train;
    case Split::Validate: return validate;
    default: return test;
  }
}

ClassifierData build_classifier_data(const Corpus& corpus, EncoderBackend& encoder,
                                     const std::vector<std::string>& node_order) {
  ClassifierData data;
  auto author_row = [&](const std::string& author) {
    auto it = std::lower_bound(node_order.begin(), node_order.end(), author);
    if (it == node_order.end() || *it != author)
      throw DanglingReference(author, "classifier author");
    return static_cast<Eigen::Index>(it - node_order.begin());
  };
  for (Split s : {Split::Train, Split::Validate, Split::Test}) {
    std::vector<LabeledExample>& out =
        s == Split::Train ? data.train : (s == Split::Validate ? data.validate : data.test);
    for (const std::string& pid : corpus.post_ids_in_split(s)) {
      const Post& post = corpus.posts.at(pid);
      LabeledExample ex;
      ex.post_id = pid;
      ex.author_row = author_row(post.author_id);
      ex.content = encode_text(encoder, post.text).values;
      ex.label = static_cast<int>(*post.emotion);
      out.push_back(std::move(ex));
    }
  }
  return data;
}

namespace {

// Forward pass for one example on an open tape.
nn::Tape::Var example_probs(nn::Tape& t, FusionParams& params, ReaderFeatureProvider& provider,
                            const LabeledExample& ex, nn::Tape::Var role_var,
                            const AblationFlags& flags) {
  nn::Tape::Var h_rf = apply_view_mask(t, provider.features(t, ex.author_row), flags);
  ProjectedInputs proj = project_inputs(t, params, t.constant(ex.content), h_rf, role_var);
  return predict_probs(t, params, fuse(t, params, proj, flags));
}

constexpr std::string_view kCheckpointMagic = "RAPPIECKPT1\n";
constexpr std::string_view kParamsMagic = "RAPPIEPARAMS1\n";

struct ResumeState {
  int next_epoch = 0;
  double best_val = -1.0;
  int best_epoch = -1;
  std::vector<EpochStats> history;
  std::vector<nn::Mat> best_values;
};

void write_checkpoint(const std::string& path, const std::vector<nn::Param*>& trainables,
                      const nn::Adam& optimizer, const ResumeState& st) {
  std::string out(kCheckpointMagic);
  bin::put_u64(out, trainables.size());
  for (const nn::Param* p : trainables) {
    bin::put_bytes(out, p->name);
    bin::put_matrix(out, p->value);
  }
  nn::Adam::State adam = optimizer.export_state(trainables);
  bin::put_u64(out, static_cast<std::uint64_t>(adam.step));
  for (const auto& [m, v] : adam.moments) {
    bin::put_matrix(out, m);
    bin::put_matrix(out, v);
  }
  bin::put_u64(out, static_cast<std::uint64_t>(st.next_epoch));
  bin::put_f64(out, st.best_val);
  bin::put_u64(out, static_cast<std::uint64_t>(st.best_epoch + 1));
  bin::put_u64(out, st.best_values.size());
  for (const nn::Mat& m : st.best_values) bin::put_matrix(out, m);
  bin::put_u64(out, st.history.size());
  for (const EpochStats& e : st.history) {
    bin::put_u64(out, static_cast<std::uint64_t>(e.epoch));
    bin::put_f64(out, e.train_loss);
    bin::put_f64(out, e.val_macro_f1);
    bin::put_f64(out, e.val_accuracy);
  }
  write_file_atomic(path, out);
}

ResumeState read_checkpoint(const std::string& path, const std::vector<nn::Param*>& trainables,
                            nn::Adam& optimizer) {
  std::string data = read_file(path);
  if (data.size() < kCheckpointMagic.size() ||
      std::string_view(data).substr(0, kCheckpointMagic.size()) != kCheckpointMagic)
    throw DataError("bad checkpoint magic in " + path);
  bin::Reader r(std::string_view(data).substr(kCheckpointMagic.size()), path);

  std::uint64_t n = r.u64();
  if (n != trainables.size()) throw DimensionMismatch("checkpoint parameter count mismatch");
  for (nn::Param* p : trainables) {
    std::string name = r.bytes();
    if (name != p->name) throw DataError("checkpoint parameter order mismatch: " + name);
    nn::Mat value = r.matrix();
    if (value.rows() != p->value.rows() || value.cols() != p->value.cols())
      throw DimensionMismatch("checkpoint shape mismatch for " + p->name);
    p->value = std::move(value);
  }
  nn::Adam::State adam;
  adam.step = static_cast<int>(r.u64());
  adam.moments.reserve(trainables.size());
  for (std::size_t i = 0; i < trainables.size(); ++i) {
    nn::Mat m = r.matrix();
    nn::Mat v = r.matrix();
    adam.moments.emplace_back(std::move(m), std::move(v));
  }
  optimizer.import_state(adam, trainables);

  ResumeState st;
  st.next_epoch = static_cast<int>(r.u64());
  st.best_val = r.f64();
  st.best_epoch = static_cast<int>(r.u64()) - 1;
  std::uint64_t n_best = r.u64();
  st.best_values.reserve(n_best);
  for (std::uint64_t i = 0; i < n_best; ++i) st.best_values.push_back(r.matrix());
  std::uint64_t n_hist = r.u64();
  for (std::uint64_t i = 0; i < n_hist; ++i) {
    EpochStats e;
    e.epoch = static_cast<int>(r.u64());
    e.train_loss = r.f64();
    e.val_macro_f1 = r.f64();
    e.val_accuracy = r.f64();
    st.history.push_back(e);
  }
  r.expect_done();
  return st;
}

}  // namespace

std::vector<int> predict_labels(FusionParams& params, ReaderFeatureProvider& provider,
                                const std::vector<LabeledExample>& examples,
                                const Eigen::MatrixXd& role_matrix, const AblationFlags& flags) {
  std::vector<int> out;
  out.reserve(examples.size());
  constexpr std::size_t kEvalBatch = 32;
  for (std::size_t at = 0; at < examples.size(); at += kEvalBatch) {
    nn::Tape t;
    provider.begin_batch(t);
    nn::Tape::Var role_var = t.constant(role_matrix);
    std::size_t end = std::min(examples.size(), at + kEvalBatch);
    for (std::size_t i = at; i < end; ++i) {
      nn::Tape::Var probs = example_probs(t, params, provider, examples[i], role_var, flags);
      out.push_back(argmax_label(t.val(probs).row(0)));
    }
  }
  return out;
}

TrainResult train_classifier(FusionParams& params, ReaderFeatureProvider& provider,
                             const ClassifierData& data, const Eigen::MatrixXd& role_matrix,
                             const TrainOptions& opts) {
  if (data.train.empty()) throw EmptyBatch("training split is empty");
  if (opts.epochs < 0) throw UsageError("epochs must be nonnegative");
  if (opts.batch_size < 1) throw UsageError("batch size must be positive");

  std::vector<nn::Param*> head = params.params();
  std::vector<nn::Param*> trainables = head;
  for (nn::Param* p : provider.trainables()) trainables.push_back(p);

  nn::Adam optimizer(nn::Adam::Options{.lr = opts.lr});
  ResumeState st;
  if (opts.resume && !opts.checkpoint_path.empty() &&
      std::filesystem::exists(opts.checkpoint_path)) {
    st = read_checkpoint(opts.checkpoint_path, trainables, optimizer);
  }

  TrainResult result;
  result.history = st.history;
  for (nn::Param* p : trainables) result.trainable_count += static_cast<std::size_t>(p->size());

  auto validate_now = [&]() -> std::pair<double, double> {
    if (data.validate.empty())
      return {std::nan(""), std::nan("")};
    std::vector<int> preds =
        predict_labels(params, provider, data.validate, role_matrix, opts.ablation);
    std::vector<int> golds;
    golds.reserve(data.validate.size());
    for (const LabeledExample& ex : data.validate) golds.push_back(ex.label);
    MetricsReport report = evaluate(preds, golds);
    return {report.macro_f1, report.accuracy};
  };

  for (int epoch = st.next_epoch; epoch < opts.epochs; ++epoch) {
    std::vector<std::size_t> order(data.train.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng shuffle_rng(mix64(opts.seed, static_cast<std::uint64_t>(epoch) + 0xB00Bu));
    shuffle_rng.shuffle(order);

    double loss_sum = 0.0;
    for (std::size_t at = 0; at < order.size(); at += static_cast<std::size_t>(opts.batch_size)) {
      std::size_t end = std::min(order.size(), at + static_cast<std::size_t>(opts.batch_size));
      for (nn::Param* p : trainables) p->zero_grad();

      nn::Tape t;
      provider.begin_batch(t);
      nn::Tape::Var role_var = t.constant(role_matrix);
      std::vector<nn::Tape::Var> prob_rows;
      std::vector<int> labels;
      prob_rows.reserve(end - at);
      for (std::size_t i = at; i < end; ++i) {
        const LabeledExample& ex = data.train[order[i]];
        prob_rows.push_back(example_probs(t, params, provider, ex, role_var, opts.ablation));
        labels.push_back(ex.label);
      }
      nn::Tape::Var loss =
          t.add(nll_loss(t, prob_rows, labels), l2_penalty(t, head, opts.l2));
      loss_sum += t.val(loss)(0, 0) * static_cast<double>(end - at);
      t.backward(loss);
      optimizer.step(trainables);
    }

    auto [val_macro, val_acc] = validate_now();
    EpochStats stats;
    stats.epoch = epoch;
    stats.train_loss = loss_sum / static_cast<double>(data.train.size());
    stats.val_macro_f1 = val_macro;
    stats.val_accuracy = val_acc;
    result.history.push_back(stats);
    ++result.epochs_run;

    bool improved = data.validate.empty() ? true : (val_macro > st.best_val);
    if (improved) {
      st.best_val = val_macro;
      st.best_epoch = epoch;
      st.best_values.clear();
      for (const nn::Param* p : trainables) st.best_values.push_back(p->value);
    }

    st.next_epoch = epoch + 1;
    st.history = result.history;
    if (!opts.checkpoint_path.empty()) write_checkpoint(opts.checkpoint_path, trainables,
                                                        optimizer, st);

    if (opts.patience > 0 && st.best_epoch >= 0 && epoch - st.best_epoch >= opts.patience) break;
  }

  if (!st.best_values.empty()) {
    for (std::size_t i = 0; i < trainables.size(); ++i) trainables[i]->value = st.best_values[i];
  }
  result.best_val_macro_f1 = st.best_val;
  result.best_epoch = st.best_epoch;
  return result;
}

// ---------------------------------------------------------------------------

MetricsReport evaluate(const std::vector<int>& predictions, const std::vector<int>& golds) {
  if (predictions.size() != golds.size())
    throw LengthMismatch("predictions and golds differ in length");

  MetricsReport report;
  report.total = golds.size();
  std::size_t correct = 0;
  for (std::size_t i = 0; i < golds.size(); ++i) {
    int g = golds[i];
    int p = predictions[i];
    if (g < 0 || g >= static_cast<int>(kEmotionCount)) throw DataError("gold label out of range");
    if (p < 0 || p > kErrorCategory) throw DataError("prediction out of range");
    ++report.confusion[static_cast<std::size_t>(g)][static_cast<std::size_t>(p)];
    if (p == g) ++correct;
  }
  report.accuracy =
      report.total == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(report.total);

  auto macro_over = [](const std::array<std::array<std::size_t, kEmotionCount + 1>,
                                        kEmotionCount>& confusion,
                       std::array<double, kEmotionCount>* per_class) -> double {
    std::array<std::size_t, kEmotionCount> tp{}, fp{}, fn{};
    std::array<bool, kEmotionCount> present{};
    for (std::size_t g = 0; g < kEmotionCount; ++g) {
      for (std::size_t p = 0; p <= kEmotionCount; ++p) {
        std::size_t n = confusion[g][p];
        if (n == 0) continue;
        present[g] = true;
        if (p < kEmotionCount) present[p] = true;
        if (p == g) {
          tp[g] += n;
        } else {
          fn[g] += n;
          if (p < kEmotionCount) fp[p] += n;
        }
      }
    }
    double sum = 0.0;
    std::size_t n_present = 0;
    for (std::size_t c = 0; c < kEmotionCount; ++c) {
      std::size_t denom = 2 * tp[c] + fp[c] + fn[c];
      double f1 = denom == 0 ? 0.0 : 2.0 * static_cast<double>(tp[c]) / static_cast<double>(denom);
      if (per_class) (*per_class)[c] = f1;
      if (present[c]) {
        sum += f1;
        ++n_present;
      }
    }
    return n_present == 0 ? std::nan("") : sum / static_cast<double>(n_present);
  };

  report.macro_f1 = macro_over(report.confusion, &report.f1);

  // Excluding-error variant: drop instances predicted as the error category.
  decltype(report.confusion) filtered = report.confusion;
  for (std::size_t g = 0; g < kEmotionCount; ++g) filtered[g][kEmotionCount] = 0;
  std::size_t remaining = 0;
  for (const auto& row : filtered)
    for (std::size_t n : row) remaining += n;
  report.macro_f1_excluding_error =
      remaining == 0 ? std::nan("") : macro_over(filtered, nullptr);
  return report;
}

std::string metrics_header() {
  std::ostringstream out;
  out << std::left << std::setw(18) << "Models";
  for (Emotion e : kEmotions) out << std::setw(9) << emotion_name(e);
  out << std::setw(18) << "Macro-F1" << "Accuracy";
  return out.str();
}

std::string MetricsReport::render_row(const std::string& name) const {
  std::ostringstream out;
  out << std::left << std::setw(18) << name;
  for (double v : f1) out << std::setw(9) << fmt4(v);
  std::string macro = fmt4(macro_f1) + " (" + fmt4(macro_f1_excluding_error) + ")";
  out << std::setw(18) << macro << fmt4(accuracy);
  return out.str();
}

std::string MetricsReport::render_text(const std::string& name) const {
  return metrics_header() + "\n" + render_row(name) + "\n";
}

std::string MetricsReport::to_json() const {
  nlohmann::json j;
  for (std::size_t c = 0; c < kEmotionCount; ++c) j["f1"][emotion_name(kEmotions[c])] = f1[c];
  j["macro_f1"] = std::isnan(macro_f1) ? nlohmann::json() : nlohmann::json(macro_f1);
  j["macro_f1_excluding_error"] = std::isnan(macro_f1_excluding_error)
                                      ? nlohmann::json()
                                      : nlohmann::json(macro_f1_excluding_error);
  j["accuracy"] = accuracy;
  j["total"] = total;
  auto& conf = j["confusion"];
  for (std::size_t g = 0; g < kEmotionCount; ++g) {
    nlohmann::json row = nlohmann::json::array();
    for (std::size_t p = 0; p <= kEmotionCount; ++p) row.push_back(confusion[g][p]);
    conf.push_back(row);
  }
  return j.dump(2) + "\n";
}

void save_params(const std::string& path, const std::vector<nn::Param*>& params) {
  std::string out(kParamsMagic);
  bin::put_u64(out, params.size());
  for (const nn::Param* p : params) {
    bin::put_bytes(out, p->name);
    bin::put_matrix(out, p->value);
  }
  write_file_atomic(path, out);
}

void load_params(const std::string& path, const std::vector<nn::Param*>& params) {
  std::string data = read_file(path);
  if (data.size() < kParamsMagic.size() ||
      std::string_view(data).substr(0, kParamsMagic.size()) != kParamsMagic)
    throw DataError("bad parameter file magic in " + path);
  bin::Reader r(std::string_view(data).substr(kParamsMagic.size()), path);
  std::uint64_t n = r.u64();
  if (n != params.size()) throw DimensionMismatch("parameter count mismatch in " + path);
  for (nn::Param* p : params) {
    std::string name = r.bytes();
    if (name != p->name) throw DataError("parameter order mismatch: " + name);
    nn::Mat value = r.matrix();
    if (value.rows() != p->value.rows() || value.cols() != p->value.cols())
      throw DimensionMismatch("parameter shape mismatch for " + p->name);
    p->value = std::move(value);
    p->grad = nn::Mat::Zero(p->value.rows(), p->value.cols());
  }
  r.expect_done();
}

}  // namespace rappie
