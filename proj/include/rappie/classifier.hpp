#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "rappie/attention.hpp"
#include "rappie/corpus.hpp"
#include "rappie/encoding.hpp"
#include "rappie/gateway.hpp"
#include "rappie/graph.hpp"
#include "rappie/nn.hpp"

namespace rappie {

struct FusionConfig {
  Eigen::Index n_tokens = 128;  // token rows per content matrix
  Eigen::Index d1 = 64;
  Eigen::Index d2 = 32;
  int heads = 8;
  std::uint64_t seed = 0;
};

// Gated-attention fusion head over content, reader-feature, and role inputs.
struct FusionParams {
  nn::Param w_s, b_s;  // n_tokens x d2, d2 x 1
  nn::Param w_r, b_r;  // 3 x d2, d2 x 1
  nn::Param w_e, b_e;  // 4 x d2, d2 x 1
  nn::MultiHeadAttention att_content, att_role;
  nn::Param w_gs, b_gs;  // d2 x d2, d2 x 1
  nn::Param w_gr, b_gr;
  nn::Param w_o, b_o;  // 7 x 4d2, 7 x 1

  static FusionParams init(const FusionConfig& cfg);
  std::vector<nn::Param*> params();
  Eigen::Index n_tokens() const { return w_s.value.rows(); }
  Eigen::Index d1() const { return att_content.model_dim(); }
  Eigen::Index d2() const { return w_s.value.cols(); }
};

struct AblationFlags {
  bool drop_reader_query = false;   // both attention blocks use self-queries
  bool drop_role_gate = false;      // role gate forced to zero
  std::array<bool, 3> drop_view{};  // zero a view row of the reader features
};

struct ProjectedInputs {
  nn::Tape::Var m_s, m_rf, m_role;  // each d2 x d1
};

// m = W^T h with the bias replicated along the feature axis.
ProjectedInputs project_inputs(nn::Tape& t, FusionParams& params, nn::Tape::Var h_s,
                               nn::Tape::Var h_rf, nn::Tape::Var h_role);

nn::Tape::Var apply_view_mask(nn::Tape& t, nn::Tape::Var h_rf, const AblationFlags& flags);

// Attention + feature-axis mean pooling + sigmoid gating + the four-way
// combination; returns g_o as a 4*d2 x 1 column.
nn::Tape::Var fuse(nn::Tape& t, FusionParams& params, const ProjectedInputs& inputs,
                   const AblationFlags& flags = AblationFlags());

// softmax(W_o g_o + b_o) as a 1 x 7 row.
nn::Tape::Var predict_probs(nn::Tape& t, FusionParams& params, nn::Tape::Var g_o);

// Forward-only convenience over raw matrices.
Eigen::VectorXd predict(FusionParams& params, const Eigen::MatrixXd& h_s,
                        const Eigen::MatrixXd& h_rf, const Eigen::MatrixXd& h_role,
                        const AblationFlags& flags = AblationFlags());

// Mean negative log-likelihood of the gold classes (log clamped at 1e-12).
nn::Tape::Var nll_loss(nn::Tape& t, const std::vector<nn::Tape::Var>& prob_rows,
                       const std::vector<int>& labels);
nn::Tape::Var l2_penalty(nn::Tape& t, const std::vector<nn::Param*>& params, double coeff);

// Batch loss over plain probability vectors: mean clamped NLL plus
// l2_coeff times the squared norm of the given parameters.
double loss_value(const std::vector<Eigen::VectorXd>& predictions, const std::vector<int>& golds,
                  double l2_coeff, const std::vector<nn::Param*>& params);

// ---------------------------------------------------------------------------
// Reader features during training: frozen rows, attribute tiles, or the
// full differentiable path through user encoding and view propagation.

class ReaderFeatureProvider {
 public:
  virtual ~ReaderFeatureProvider() = default;
  virtual void begin_batch(nn::Tape& t) = 0;
  virtual nn::Tape::Var features(nn::Tape& t, Eigen::Index node_row) = 0;  // 3 x d1
  virtual std::vector<nn::Param*> trainables() { return {}; }
};

class FrozenFeatureProvider : public ReaderFeatureProvider {
 public:
  explicit FrozenFeatureProvider(const ReaderFeatureSet& set) : set_(&set) {}
  void begin_batch(nn::Tape&) override {}
  nn::Tape::Var features(nn::Tape& t, Eigen::Index row) override;

 private:
  const ReaderFeatureSet* set_;
};

// The reader-feature slot carries the author's attribute encoding tiled to
// three rows (content + attributes ablation).
class AttributeFeatureProvider : public ReaderFeatureProvider {
 public:
  explicit AttributeFeatureProvider(Eigen::MatrixXd attrs_by_row) : attrs_(std::move(attrs_by_row)) {}
  void begin_batch(nn::Tape&) override {}
  nn::Tape::Var features(nn::Tape& t, Eigen::Index row) override;

 private:
  Eigen::MatrixXd attrs_;  // |U| x d1
};

class EndToEndFeatureProvider : public ReaderFeatureProvider {
 public:
  struct Setup {
    UserEncoderParams* encoder_params = nullptr;
    const std::map<std::string, UserContext>* contexts = nullptr;  // keys in node order
    Eigen::MatrixXd role_matrix;                                   // 4 x d1
    bool use_roles = true;
    std::array<std::vector<std::vector<Eigen::Index>>, 3> adjacency;
    std::array<Eigen::MatrixXd, 3> deltas;  // trained view init minus build-time embeddings
    int rounds = 1;
  };

  explicit EndToEndFeatureProvider(Setup setup);
  void begin_batch(nn::Tape& t) override;
  nn::Tape::Var features(nn::Tape& t, Eigen::Index row) override;
  std::vector<nn::Param*> trainables() override { return setup_.encoder_params->params(); }

  // Forward-only evaluation of the three per-view matrices at the current
  // parameters (what a frozen provider would be built from).
  std::array<Eigen::MatrixXd, 3> materialize();

 private:
  Setup setup_;
  std::array<nn::Tape::Var, 3> views_{};
};

// ---------------------------------------------------------------------------
// Dataset assembly and training.

struct LabeledExample {
  std::string post_id;
  Eigen::Index author_row = -1;  // into the reader-feature node order
  Eigen::MatrixXd content;       // n_tokens x d1, zero rows past the real tokens
  int label = 0;
};

struct ClassifierData {
  std::vector<LabeledExample> train, validate, test;

  const std::vector<LabeledExample>& split(Split s) const;
};

ClassifierData build_classifier_data(const Corpus& corpus, EncoderBackend& encoder,
                                     const std::vector<std::string>& node_order);

struct TrainOptions {
  int epochs = 30;
  int batch_size = 8;
  double lr = 2e-6;
  double l2 = 1e-5;
  int patience = 5;
  std::uint64_t seed = 0;
  AblationFlags ablation{};
  std::string checkpoint_path;  // per-epoch resumable state; empty disables
  bool resume = false;
};

struct EpochStats {
  int epoch = 0;
  double train_loss = 0.0;
  double val_macro_f1 = 0.0;
  double val_accuracy = 0.0;
};

struct TrainResult {
  double best_val_macro_f1 = -1.0;
  int best_epoch = -1;
  std::vector<EpochStats> history;
  std::size_t trainable_count = 0;  // scalar parameters receiving gradients
  int epochs_run = 0;
};

// Mini-batch training with per-epoch validation; the best-on-validation
// parameter snapshot is restored into `params` (and the provider's
// trainables) before returning.
TrainResult train_classifier(FusionParams& params, ReaderFeatureProvider& provider,
                             const ClassifierData& data, const Eigen::MatrixXd& role_matrix,
                             const TrainOptions& opts);

std::vector<int> predict_labels(FusionParams& params, ReaderFeatureProvider& provider,
                                const std::vector<LabeledExample>& examples,
                                const Eigen::MatrixXd& role_matrix,
                                const AblationFlags& flags = AblationFlags());

// ---------------------------------------------------------------------------
// Evaluation.

// Prediction value for outputs that name no valid emotion.
inline constexpr int kErrorCategory = static_cast<int>(kEmotionCount);

struct MetricsReport {
  std::array<double, kEmotionCount> f1{};
  double macro_f1 = std::nan("");
  double accuracy = 0.0;
  double macro_f1_excluding_error = std::nan("");
  // confusion[gold][predicted]; the last column is the error category.
  std::array<std::array<std::size_t, kEmotionCount + 1>, kEmotionCount> confusion{};
  std::size_t total = 0;

  std::string render_row(const std::string& name) const;
  std::string render_text(const std::string& name) const;  // header plus one row
  std::string to_json() const;
};

std::string metrics_header();

// predictions in [0, 7] (7 = error category), golds in [0, 6].
MetricsReport evaluate(const std::vector<int>& predictions, const std::vector<int>& golds);

// Binary checkpoint of named parameters (values only), for artifacts.
void save_params(const std::string& path, const std::vector<nn::Param*>& params);
void load_params(const std::string& path, const std::vector<nn::Param*>& params);

}  // namespace rappie
