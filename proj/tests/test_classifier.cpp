#include <doctest.h>

#include <cmath>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rappie/classifier.hpp"
#include "rappie/errors.hpp"
#include "rappie/util.hpp"
#include "temp_dir.hpp"

using namespace rappie;

namespace {

FusionConfig tiny_config() {
  FusionConfig cfg;
  cfg.n_tokens = 6;
  cfg.d1 = 4;
  cfg.d2 = 3;
  cfg.heads = 1;
  cfg.seed = 9;
  return cfg;
}

struct TinyInputs {
  Eigen::MatrixXd h_s, h_rf, h_role;
};

TinyInputs tiny_inputs(const FusionConfig& cfg, std::uint64_t seed) {
  Rng rng(seed);
  return {nn::random_uniform(cfg.n_tokens, cfg.d1, 1.0, rng),
          nn::random_uniform(3, cfg.d1, 1.0, rng), nn::random_uniform(4, cfg.d1, 1.0, rng)};
}

// Separable two-class toy set: content sign tells the class apart.
ClassifierData toy_data(const FusionConfig& cfg, int per_class_train, int per_class_val) {
  ClassifierData data;
  Rng rng(31);
  auto emit = Rng(77);
  auto make = [&](int label, int count, std::vector<LabeledExample>& out) {
    for (int i = 0; i < count; ++i) {
      LabeledExample ex;
      ex.post_id = "p" + std::to_string(out.size()) + "_" + std::to_string(label);
      ex.author_row = label;  // user row matches the class
      double base = label == 0 ? 0.8 : -0.8;
      ex.content = Eigen::MatrixXd::Constant(cfg.n_tokens, cfg.d1, base) +
                   nn::random_uniform(cfg.n_tokens, cfg.d1, 0.1, rng);
      ex.label = label;
      out.push_back(std::move(ex));
    }
  };
  for (int c = 0; c < 2; ++c) make(c, per_class_train, data.train);
  for (int c = 0; c < 2; ++c) make(c, per_class_val, data.validate);
  (void)emit;
  return data;
}

ReaderFeatureSet toy_features(Eigen::Index d1) {
  Rng rng(55);
  ReaderFeatureSet set;
  set.nodes = {"u0", "u1"};
  for (auto& m : set.view_embeddings) m = nn::random_uniform(2, d1, 1.0, rng);
  return set;
}

}  // namespace

TEST_CASE("fusion parameters expose the documented shapes") {
  FusionConfig cfg = tiny_config();
  FusionParams p = FusionParams::init(cfg);
  CHECK(p.n_tokens() == 6);
  CHECK(p.d1() == 4);
  CHECK(p.d2() == 3);
  CHECK(p.w_s.value.rows() == 6);
  CHECK(p.w_s.value.cols() == 3);
  CHECK(p.w_r.value.rows() == 3);
  CHECK(p.w_e.value.rows() == 4);
  CHECK(p.w_gs.value.rows() == 3);
  CHECK(p.w_gs.value.cols() == 3);
  CHECK(p.w_o.value.rows() == 7);
  CHECK(p.w_o.value.cols() == 12);
  CHECK(p.b_o.value.rows() == 7);
  CHECK(p.b_o.value.cols() == 1);
  CHECK(p.params().size() == 6 + 4 + 4 + 6);

  FusionParams q = FusionParams::init(cfg);
  CHECK((p.w_o.value - q.w_o.value).norm() == 0.0);
  FusionConfig other = cfg;
  other.seed = 10;
  FusionParams r = FusionParams::init(other);
  CHECK((p.w_o.value - r.w_o.value).norm() != 0.0);

  FusionConfig bad = cfg;
  bad.d2 = 0;
  CHECK_THROWS_AS((void)FusionParams::init(bad), DimensionMismatch);
}

TEST_CASE("input projection is W^T h with the bias broadcast across features") {
  FusionConfig cfg = tiny_config();
  FusionParams p = FusionParams::init(cfg);
  TinyInputs in = tiny_inputs(cfg, 3);

  nn::Tape t;
  ProjectedInputs proj = project_inputs(t, p, t.constant(in.h_s), t.constant(in.h_rf),
                                        t.constant(in.h_role));
  auto expect = [&](const nn::Param& w, const nn::Param& b, const Eigen::MatrixXd& h) {
    return (w.value.transpose() * h + b.value.replicate(1, h.cols())).eval();
  };
  CHECK((t.val(proj.m_s) - expect(p.w_s, p.b_s, in.h_s)).norm() <= 1e-12);
  CHECK((t.val(proj.m_rf) - expect(p.w_r, p.b_r, in.h_rf)).norm() <= 1e-12);
  CHECK((t.val(proj.m_role) - expect(p.w_e, p.b_e, in.h_role)).norm() <= 1e-12);
  CHECK(t.val(proj.m_s).rows() == cfg.d2);
  CHECK(t.val(proj.m_s).cols() == cfg.d1);

  nn::Tape t2;
  CHECK_THROWS_AS((void)project_inputs(t2, p, t2.constant(Eigen::MatrixXd::Zero(5, 4)),
                                       t2.constant(in.h_rf), t2.constant(in.h_role)),
                  DimensionMismatch);
  CHECK_THROWS_AS((void)project_inputs(t2, p, t2.constant(in.h_s),
                                       t2.constant(Eigen::MatrixXd::Zero(2, 4)),
                                       t2.constant(in.h_role)),
                  DimensionMismatch);
  CHECK_THROWS_AS((void)project_inputs(t2, p, t2.constant(in.h_s), t2.constant(in.h_rf),
                                       t2.constant(Eigen::MatrixXd::Zero(4, 5))),
                  DimensionMismatch);
}

TEST_CASE("the view mask zeroes exactly the dropped rows") {
  Eigen::MatrixXd h = Eigen::MatrixXd::Random(3, 5);
  nn::Tape t;
  nn::Tape::Var v = t.constant(h);

  AblationFlags none;
  CHECK(apply_view_mask(t, v, none).id == v.id);  // untouched without drops

  AblationFlags drop;
  drop.drop_view = {false, true, false};
  nn::Tape::Var masked = apply_view_mask(t, v, drop);
  CHECK((t.val(masked).row(0) - h.row(0)).norm() == 0.0);
  CHECK(t.val(masked).row(1).norm() == 0.0);
  CHECK((t.val(masked).row(2) - h.row(2)).norm() == 0.0);
}

TEST_CASE("fusion emits the four-way gate combination") {
  FusionConfig cfg = tiny_config();
  FusionParams p = FusionParams::init(cfg);
  TinyInputs in = tiny_inputs(cfg, 4);
  const Eigen::Index d2 = cfg.d2;

  nn::Tape t;
  ProjectedInputs proj = project_inputs(t, p, t.constant(in.h_s), t.constant(in.h_rf),
                                        t.constant(in.h_role));
  nn::Tape::Var g_o = fuse(t, p, proj);
  const Eigen::MatrixXd& v = t.val(g_o);
  REQUIRE(v.rows() == 4 * d2);
  REQUIRE(v.cols() == 1);

  Eigen::MatrixXd g_s = v.block(0, 0, d2, 1);
  Eigen::MatrixXd g_role = v.block(d2, 0, d2, 1);
  CHECK((v.block(2 * d2, 0, d2, 1) - (g_s + g_role)).norm() <= 1e-15);
  CHECK((v.block(3 * d2, 0, d2, 1) - g_s.cwiseProduct(g_role)).norm() <= 1e-15);
  CHECK(g_s.norm() > 0.0);
  CHECK(g_role.norm() > 0.0);

  // the role gate ablation zeroes the g_role-dependent segments
  AblationFlags no_role;
  no_role.drop_role_gate = true;
  nn::Tape t2;
  ProjectedInputs proj2 = project_inputs(t2, p, t2.constant(in.h_s), t2.constant(in.h_rf),
                                         t2.constant(in.h_role));
  const Eigen::MatrixXd& v2 = t2.val(fuse(t2, p, proj2, no_role));
  CHECK((v2.block(0, 0, d2, 1) - g_s).norm() == 0.0);
  CHECK(v2.block(d2, 0, d2, 1).norm() == 0.0);
  CHECK((v2.block(2 * d2, 0, d2, 1) - g_s).norm() == 0.0);
  CHECK(v2.block(3 * d2, 0, d2, 1).norm() == 0.0);

  // self-query ablation changes the output
  AblationFlags self_query;
  self_query.drop_reader_query = true;
  nn::Tape t3;
  ProjectedInputs proj3 = project_inputs(t3, p, t3.constant(in.h_s), t3.constant(in.h_rf),
                                         t3.constant(in.h_role));
  CHECK((t3.val(fuse(t3, p, proj3, self_query)) - v).norm() != 0.0);
}

TEST_CASE("the probability head is a softmax row over seven classes") {
  FusionConfig cfg = tiny_config();
  FusionParams p = FusionParams::init(cfg);

  nn::Tape t;
  Rng rng(6);
  nn::Tape::Var g_o = t.constant(nn::random_uniform(4 * cfg.d2, 1, 1.0, rng));
  nn::Tape::Var probs = predict_probs(t, p, g_o);
  const Eigen::MatrixXd& row = t.val(probs);
  REQUIRE(row.rows() == 1);
  REQUIRE(row.cols() == 7);
  CHECK(row.sum() == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(row.minCoeff() > 0.0);

  CHECK_THROWS_AS((void)predict_probs(t, p, t.constant(Eigen::MatrixXd::Zero(5, 1))),
                  DimensionMismatch);

  // the forward-only wrapper agrees with the tape path
  TinyInputs in = tiny_inputs(cfg, 4);
  Eigen::VectorXd direct = predict(p, in.h_s, in.h_rf, in.h_role);
  nn::Tape t2;
  ProjectedInputs proj = project_inputs(t2, p, t2.constant(in.h_s), t2.constant(in.h_rf),
                                        t2.constant(in.h_role));
  Eigen::VectorXd taped = t2.val(predict_probs(t2, p, fuse(t2, p, proj))).row(0).transpose();
  CHECK((direct - taped).norm() == 0.0);
  CHECK(direct.sum() == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("nll matches hand-computed values and clamps impossible outputs") {
  nn::Tape t;
  Eigen::MatrixXd row1(1, 7), row2(1, 7);
  row1 << 0.5, 0.1, 0.1, 0.1, 0.1, 0.05, 0.05;
  row2 << 0.05, 0.25, 0.2, 0.1, 0.1, 0.1, 0.2;
  nn::Tape::Var loss = nll_loss(t, {t.constant(row1), t.constant(row2)}, {0, 1});
  double want = -(std::log(0.5) + std::log(0.25)) / 2.0;
  CHECK(t.val(loss)(0, 0) == doctest::Approx(want).epsilon(1e-12));

  Eigen::MatrixXd zero_row = Eigen::MatrixXd::Zero(1, 7);
  zero_row(0, 3) = 1.0;
  nn::Tape::Var clamped = nll_loss(t, {t.constant(zero_row)}, {0});
  CHECK(t.val(clamped)(0, 0) == doctest::Approx(-std::log(1e-12)).epsilon(1e-9));

  CHECK_THROWS_AS((void)nll_loss(t, {}, {}), EmptyBatch);
  CHECK_THROWS_AS((void)nll_loss(t, {t.constant(row1)}, {0, 1}), LengthMismatch);
  CHECK_THROWS_AS((void)nll_loss(t, {t.constant(row1)}, {9}), DataError);
  CHECK_THROWS_AS((void)nll_loss(t, {t.constant(row1)}, {-1}), DataError);
}

TEST_CASE("l2 penalty and the plain loss helper agree with hand sums") {
  nn::Param a("a", (Eigen::MatrixXd(1, 2) << 3.0, 4.0).finished());
  nn::Param b("b", (Eigen::MatrixXd(1, 1) << 2.0).finished());

  nn::Tape t;
  CHECK(t.val(l2_penalty(t, {&a, &b}, 0.1))(0, 0) == doctest::Approx(0.1 * 29.0));
  CHECK(t.val(l2_penalty(t, {}, 0.1))(0, 0) == 0.0);
  CHECK(t.val(l2_penalty(t, {&a}, 0.0))(0, 0) == 0.0);

  Eigen::VectorXd p1(7), p2(7);
  p1.setConstant(0.05);
  p1(2) = 0.7;
  p2.setConstant(0.1);
  p2(6) = 0.4;
  double want = (-std::log(0.7) - std::log(0.4)) / 2.0 + 0.01 * 29.0;
  CHECK(loss_value({p1, p2}, {2, 6}, 0.01, {&a, &b}) == doctest::Approx(want).epsilon(1e-12));

  CHECK_THROWS_AS((void)loss_value({}, {}, 0.0, {}), EmptyBatch);
  CHECK_THROWS_AS((void)loss_value({p1}, {2, 3}, 0.0, {}), LengthMismatch);
  CHECK_THROWS_AS((void)loss_value({p1}, {9}, 0.0, {}), DataError);
}

TEST_CASE("the output head gradient matches finite differences") {
  FusionConfig cfg = tiny_config();
  FusionParams p = FusionParams::init(cfg);
  Rng rng(12);
  Eigen::MatrixXd g_o = nn::random_uniform(4 * cfg.d2, 1, 1.0, rng);
  const int gold = 4;

  auto loss_at = [&]() {
    nn::Tape t;
    nn::Tape::Var probs = predict_probs(t, p, t.constant(g_o));
    return t.val(nll_loss(t, {probs}, {gold}))(0, 0);
  };

  p.w_o.zero_grad();
  p.b_o.zero_grad();
  {
    nn::Tape t;
    nn::Tape::Var probs = predict_probs(t, p, t.constant(g_o));
    t.backward(nll_loss(t, {probs}, {gold}));
  }

  const double eps = 1e-6;
  Rng pick(3);
  for (int probe = 0; probe < 6; ++probe) {
    Eigen::Index r = static_cast<Eigen::Index>(pick.below(7));
    Eigen::Index c = static_cast<Eigen::Index>(pick.below(static_cast<std::uint64_t>(4 * cfg.d2)));
    double saved = p.w_o.value(r, c);
    p.w_o.value(r, c) = saved + eps;
    double up = loss_at();
    p.w_o.value(r, c) = saved - eps;
    double down = loss_at();
    p.w_o.value(r, c) = saved;
    CHECK(p.w_o.grad(r, c) == doctest::Approx((up - down) / (2 * eps)).epsilon(1e-5));
  }
}

TEST_CASE("frozen and attribute feature providers expose 3 x d1 rows") {
  ReaderFeatureSet set = toy_features(4);
  FrozenFeatureProvider frozen(set);
  nn::Tape t;
  frozen.begin_batch(t);
  nn::Tape::Var f = frozen.features(t, 1);
  CHECK((t.val(f) - set.row_matrix(1)).norm() == 0.0);
  CHECK(frozen.trainables().empty());

  Eigen::MatrixXd attrs = Eigen::MatrixXd::Random(2, 4);
  AttributeFeatureProvider tiled(attrs);
  nn::Tape t2;
  tiled.begin_batch(t2);
  const Eigen::MatrixXd& a = t2.val(tiled.features(t2, 0));
  REQUIRE(a.rows() == 3);
  for (int r = 0; r < 3; ++r) CHECK((a.row(r) - attrs.row(0)).norm() == 0.0);
  CHECK_THROWS_AS((void)tiled.features(t2, 5), DimensionMismatch);
  CHECK_THROWS_AS((void)tiled.features(t2, -1), DimensionMismatch);
}

TEST_CASE("the end-to-end provider materializes the same path a frozen run would see") {
  const Eigen::Index d1 = 4;
  UserEncoderParams enc = UserEncoderParams::init(d1, 1, 5);
  Rng rng(21);
  std::map<std::string, UserContext> contexts;
  for (const std::string& id : {"a", "b"}) {
    UserContext ctx;
    ctx.attr_vec = nn::random_uniform(d1, 1, 1.0, rng).col(0);
    if (id == "a") ctx.comment_mats = {nn::random_uniform(2, d1, 1.0, rng)};
    contexts[id] = ctx;
  }
  Eigen::MatrixXd roles = nn::random_uniform(4, d1, 1.0, rng);

  EndToEndFeatureProvider::Setup setup;
  setup.encoder_params = &enc;
  setup.contexts = &contexts;
  setup.role_matrix = roles;
  setup.use_roles = true;
  setup.adjacency = {{{{1}, {0}}, {{}, {}}, {{1}, {0}}}};
  for (auto& d : setup.deltas) d = nn::random_uniform(2, d1, 0.5, rng);
  setup.rounds = 2;

  EndToEndFeatureProvider provider(setup);
  CHECK(provider.trainables().size() == enc.params().size());

  std::array<Eigen::MatrixXd, 3> mats = provider.materialize();
  Eigen::MatrixXd base = all_user_embeddings(enc, contexts, roles, true);
  for (std::size_t v = 0; v < 3; ++v) {
    ViewGraph vg;
    vg.adjacency = setup.adjacency[v];
    vg.node_embeddings = base + setup.deltas[v];
    CHECK((mats[v] - propagate(vg, setup.rounds)).norm() <= 1e-12);
  }

  nn::Tape t;
  provider.begin_batch(t);
  const Eigen::MatrixXd& f = t.val(provider.features(t, 1));
  REQUIRE(f.rows() == 3);
  for (std::size_t v = 0; v < 3; ++v)
    CHECK((f.row(static_cast<Eigen::Index>(v)) - mats[v].row(1)).norm() <= 1e-12);

  EndToEndFeatureProvider fresh(setup);
  nn::Tape t2;
  CHECK_THROWS_AS((void)fresh.features(t2, 0), MissingArtifact);

  EndToEndFeatureProvider::Setup missing = setup;
  missing.encoder_params = nullptr;
  CHECK_THROWS_AS(EndToEndFeatureProvider{missing}, MissingArtifact);

  EndToEndFeatureProvider::Setup short_adj = setup;
  short_adj.adjacency[1] = {{}};
  CHECK_THROWS_AS(EndToEndFeatureProvider{short_adj}, NodeSetMismatch);

  EndToEndFeatureProvider::Setup short_delta = setup;
  short_delta.deltas[2] = Eigen::MatrixXd::Zero(1, d1);
  CHECK_THROWS_AS(EndToEndFeatureProvider{short_delta}, NodeSetMismatch);
}

TEST_CASE("classifier data maps splits, labels, and author rows") {
  Corpus corpus;
  corpus.users["ann"] = {"ann", "", "", "", {}};
  corpus.users["bob"] = {"bob", "", "", "", {}};
  corpus.posts["p1"] = {"p1", "ann", "one two three", Emotion::Happy, false};
  corpus.posts["p2"] = {"p2", "bob", "four five", Emotion::Fear, false};
  corpus.posts["p3"] = {"p3", "ann", "six", Emotion::Sad, false};
  corpus.posts["p4"] = {"p4", "bob", "history only", std::nullopt, false};
  corpus.splits["p1"] = Split::Train;
  corpus.splits["p2"] = Split::Train;
  corpus.splits["p3"] = Split::Test;

  MockEncoderBackend encoder(4, 6, 2);
  std::vector<std::string> nodes = {"ann", "bob"};
  ClassifierData data = build_classifier_data(corpus, encoder, nodes);
  REQUIRE(data.train.size() == 2);
  CHECK(data.validate.empty());
  REQUIRE(data.test.size() == 1);
  CHECK(data.train[0].post_id == "p1");
  CHECK(data.train[0].author_row == 0);
  CHECK(data.train[0].label == static_cast<int>(Emotion::Happy));
  CHECK(data.train[1].post_id == "p2");
  CHECK(data.train[1].author_row == 1);
  CHECK(data.test[0].label == static_cast<int>(Emotion::Sad));
  CHECK(data.train[0].content.rows() == 6);
  CHECK(data.train[0].content.cols() == 4);
  CHECK((data.train[0].content - encode_text(encoder, "one two three").values).norm() == 0.0);
  CHECK(&data.split(Split::Train) == &data.train);
  CHECK(&data.split(Split::Validate) == &data.validate);
  CHECK(&data.split(Split::Test) == &data.test);

  std::vector<std::string> missing = {"ann"};
  CHECK_THROWS_AS((void)build_classifier_data(corpus, encoder, missing), DanglingReference);
}

TEST_CASE("training lowers the loss and restores the best validation snapshot") {
  FusionConfig cfg = tiny_config();
  FusionParams params = FusionParams::init(cfg);
  ReaderFeatureSet set = toy_features(cfg.d1);
  FrozenFeatureProvider provider(set);
  ClassifierData data = toy_data(cfg, 6, 3);

  TrainOptions opts;
  opts.epochs = 25;
  opts.batch_size = 4;
  opts.lr = 0.05;
  opts.l2 = 1e-5;
  opts.patience = 0;  // run every epoch
  opts.seed = 1;
  TrainResult result = train_classifier(params, provider, data, Eigen::MatrixXd::Zero(4, cfg.d1),
                                        opts);

  CHECK(result.epochs_run == 25);
  REQUIRE(result.history.size() == 25);
  CHECK(result.history.front().train_loss > result.history.back().train_loss);
  CHECK(result.best_epoch >= 0);

  std::size_t expect_count = 0;
  for (nn::Param* p : params.params()) expect_count += static_cast<std::size_t>(p->size());
  CHECK(result.trainable_count == expect_count);

  // returned parameters reproduce the best validation score
  std::vector<int> preds = predict_labels(params, provider, data.validate,
                                          Eigen::MatrixXd::Zero(4, cfg.d1));
  std::vector<int> golds;
  for (const LabeledExample& ex : data.validate) golds.push_back(ex.label);
  MetricsReport report = evaluate(preds, golds);
  CHECK(report.macro_f1 == doctest::Approx(result.best_val_macro_f1).epsilon(1e-12));
  double best_seen = -1.0;
  for (const EpochStats& e : result.history) best_seen = std::max(best_seen, e.val_macro_f1);
  CHECK(result.best_val_macro_f1 == doctest::Approx(best_seen));
  CHECK(result.best_val_macro_f1 > 0.9);  // the toy task is separable

  // errors
  ClassifierData empty;
  CHECK_THROWS_AS((void)train_classifier(params, provider, empty,
                                         Eigen::MatrixXd::Zero(4, cfg.d1), opts),
                  EmptyBatch);
  TrainOptions bad = opts;
  bad.epochs = -1;
  CHECK_THROWS_AS((void)train_classifier(params, provider, data,
                                         Eigen::MatrixXd::Zero(4, cfg.d1), bad),
                  UsageError);
  bad = opts;
  bad.batch_size = 0;
  CHECK_THROWS_AS((void)train_classifier(params, provider, data,
                                         Eigen::MatrixXd::Zero(4, cfg.d1), bad),
                  UsageError);
}

TEST_CASE("patience stops training once validation stalls") {
  FusionConfig cfg = tiny_config();
  FusionParams params = FusionParams::init(cfg);
  ReaderFeatureSet set = toy_features(cfg.d1);
  FrozenFeatureProvider provider(set);
  ClassifierData data = toy_data(cfg, 6, 3);

  TrainOptions opts;
  opts.epochs = 60;
  opts.batch_size = 4;
  opts.lr = 0.05;
  opts.patience = 3;
  opts.seed = 1;
  TrainResult result = train_classifier(params, provider, data, Eigen::MatrixXd::Zero(4, cfg.d1),
                                        opts);
  CHECK(result.best_val_macro_f1 == doctest::Approx(1.0));
  CHECK(result.epochs_run < 60);  // strict improvement is impossible after a perfect epoch
  CHECK(result.history.back().epoch - result.best_epoch >= opts.patience);
}

TEST_CASE("training without a validation split keeps the last epoch") {
  FusionConfig cfg = tiny_config();
  FusionParams params = FusionParams::init(cfg);
  ReaderFeatureSet set = toy_features(cfg.d1);
  FrozenFeatureProvider provider(set);
  ClassifierData data = toy_data(cfg, 4, 0);

  TrainOptions opts;
  opts.epochs = 4;
  opts.batch_size = 4;
  opts.lr = 0.01;
  opts.patience = 5;
  TrainResult result = train_classifier(params, provider, data, Eigen::MatrixXd::Zero(4, cfg.d1),
                                        opts);
  CHECK(result.epochs_run == 4);
  CHECK(result.best_epoch == 3);
  CHECK(std::isnan(result.best_val_macro_f1));
  CHECK(std::isnan(result.history.back().val_macro_f1));
}

TEST_CASE("an interrupted run resumed from its checkpoint matches the uninterrupted run") {
  FusionConfig cfg = tiny_config();
  ReaderFeatureSet set = toy_features(cfg.d1);
  ClassifierData data = toy_data(cfg, 6, 3);
  Eigen::MatrixXd roles = Eigen::MatrixXd::Zero(4, cfg.d1);
  ScopedDir dir("ckpt");

  TrainOptions base;
  base.epochs = 6;
  base.batch_size = 4;
  base.lr = 0.05;
  base.patience = 0;
  base.seed = 2;

  FusionParams full = FusionParams::init(cfg);
  FrozenFeatureProvider provider_a(set);
  TrainOptions opts_a = base;
  opts_a.checkpoint_path = dir.file("full.ckpt");
  TrainResult run_a = train_classifier(full, provider_a, data, roles, opts_a);

  FusionParams resumed = FusionParams::init(cfg);
  FrozenFeatureProvider provider_b(set);
  TrainOptions phase1 = base;
  phase1.epochs = 3;
  phase1.checkpoint_path = dir.file("resume.ckpt");
  (void)train_classifier(resumed, provider_b, data, roles, phase1);

  TrainOptions phase2 = base;
  phase2.checkpoint_path = dir.file("resume.ckpt");
  phase2.resume = true;
  TrainResult run_b = train_classifier(resumed, provider_b, data, roles, phase2);

  REQUIRE(run_b.history.size() == run_a.history.size());
  for (std::size_t i = 0; i < run_a.history.size(); ++i) {
    CHECK(run_b.history[i].train_loss == run_a.history[i].train_loss);
    CHECK(run_b.history[i].val_macro_f1 == run_a.history[i].val_macro_f1);
  }
  CHECK(run_b.best_epoch == run_a.best_epoch);
  CHECK(run_b.best_val_macro_f1 == run_a.best_val_macro_f1);

  std::vector<nn::Param*> pa = full.params();
  std::vector<nn::Param*> pb = resumed.params();
  for (std::size_t i = 0; i < pa.size(); ++i)
    CHECK((pa[i]->value - pb[i]->value).norm() == 0.0);

  // resume without an existing checkpoint silently trains from scratch
  FusionParams fresh = FusionParams::init(cfg);
  FrozenFeatureProvider provider_c(set);
  TrainOptions no_file = base;
  no_file.checkpoint_path = dir.file("never_written.ckpt");
  no_file.resume = true;
  TrainResult run_c = train_classifier(fresh, provider_c, data, roles, no_file);
  CHECK(run_c.epochs_run == 6);
}

TEST_CASE("predicted labels are the per-example argmax across eval batches") {
  FusionConfig cfg = tiny_config();
  FusionParams params = FusionParams::init(cfg);
  ReaderFeatureSet set = toy_features(cfg.d1);
  FrozenFeatureProvider provider(set);
  ClassifierData data = toy_data(cfg, 20, 0);  // 40 examples crosses the eval batch size

  Eigen::MatrixXd roles = Eigen::MatrixXd::Zero(4, cfg.d1);
  std::vector<int> labels = predict_labels(params, provider, data.train, roles);
  REQUIRE(labels.size() == data.train.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const LabeledExample& ex = data.train[i];
    Eigen::VectorXd probs = predict(params, ex.content, set.row_matrix(ex.author_row), roles);
    int best = 0;
    for (int c = 1; c < 7; ++c)
      if (probs(c) > probs(best)) best = c;
    CHECK(labels[i] == best);
  }
}

TEST_CASE("evaluation reproduces hand-worked confusions") {
  MetricsReport r1 = evaluate({0, 1, 1}, {0, 0, 1});
  CHECK(r1.total == 3);
  CHECK(r1.confusion[0][0] == 1);
  CHECK(r1.confusion[0][1] == 1);
  CHECK(r1.confusion[1][1] == 1);
  CHECK(r1.accuracy == doctest::Approx(2.0 / 3.0));
  CHECK(r1.f1[0] == doctest::Approx(2.0 / 3.0));
  CHECK(r1.f1[1] == doctest::Approx(2.0 / 3.0));
  CHECK(r1.macro_f1 == doctest::Approx(2.0 / 3.0));
  CHECK(r1.macro_f1_excluding_error == doctest::Approx(2.0 / 3.0));

  // class 0: tp 2, fn 1 -> 4/5; class 1: tp 1, fp 1, fn 1 -> 1/2;
  // class 2: tp 1, fp 1 -> 2/3; macro = 59/90
  MetricsReport r2 = evaluate({0, 0, 1, 1, 2, 2}, {0, 0, 0, 1, 1, 2});
  CHECK(r2.f1[0] == doctest::Approx(0.8));
  CHECK(r2.f1[1] == doctest::Approx(0.5));
  CHECK(r2.f1[2] == doctest::Approx(2.0 / 3.0));
  CHECK(r2.macro_f1 == doctest::Approx(59.0 / 90.0));
  CHECK(r2.accuracy == doctest::Approx(2.0 / 3.0));

  // absent classes do not dilute the macro average
  MetricsReport r3 = evaluate({2, 2}, {2, 2});
  CHECK(r3.macro_f1 == doctest::Approx(1.0));
  CHECK(r3.accuracy == doctest::Approx(1.0));
}

TEST_CASE("the error category counts against recall but leaves the excluding variant") {
  MetricsReport r = evaluate({kErrorCategory, 1}, {0, 1});
  CHECK(r.confusion[0][7] == 1);
  CHECK(r.accuracy == doctest::Approx(0.5));
  CHECK(r.f1[0] == doctest::Approx(0.0));
  CHECK(r.f1[1] == doctest::Approx(1.0));
  CHECK(r.macro_f1 == doctest::Approx(0.5));
  CHECK(r.macro_f1_excluding_error == doctest::Approx(1.0));

  // every prediction erroring out leaves nothing to evaluate
  MetricsReport all_err = evaluate({kErrorCategory}, {0});
  CHECK(all_err.macro_f1 == doctest::Approx(0.0));
  CHECK(std::isnan(all_err.macro_f1_excluding_error));
  std::string row = all_err.render_row("x");
  CHECK(row.find("(-)") != std::string::npos);

  MetricsReport empty = evaluate({}, {});
  CHECK(empty.total == 0);
  CHECK(std::isnan(empty.macro_f1));
  CHECK(empty.render_row("e").find("-") != std::string::npos);

  CHECK_THROWS_AS((void)evaluate({0}, {0, 1}), LengthMismatch);
  CHECK_THROWS_AS((void)evaluate({0}, {7}), DataError);
  CHECK_THROWS_AS((void)evaluate({8}, {0}), DataError);
  CHECK_THROWS_AS((void)evaluate({-1}, {0}), DataError);
}

TEST_CASE("metric rendering and json are stable and name every class") {
  MetricsReport r = evaluate({0, 0, 1, 1, 2, 2}, {0, 0, 0, 1, 1, 2});
  std::string header = metrics_header();
  CHECK(header.find("Models") == 0);
  for (Emotion e : kEmotions) CHECK(header.find(emotion_name(e)) != std::string::npos);
  CHECK(header.find("Macro-F1") != std::string::npos);
  CHECK(header.find("Accuracy") != std::string::npos);

  std::string row = r.render_row("TestRun");
  CHECK(row.find("TestRun") == 0);
  CHECK(row.find("0.8000") != std::string::npos);
  CHECK(row.find("0.6556 (0.6556)") != std::string::npos);
  CHECK(row.find("0.6667") != std::string::npos);
  CHECK(r.render_text("TestRun") == header + "\n" + row + "\n");

  nlohmann::json j = nlohmann::json::parse(r.to_json());
  CHECK(j["f1"]["Happy"].get<double>() == doctest::Approx(0.8));
  CHECK(j["macro_f1"].get<double>() == doctest::Approx(59.0 / 90.0));
  CHECK(j["accuracy"].get<double>() == doctest::Approx(2.0 / 3.0));
  CHECK(j["total"].get<int>() == 6);
  REQUIRE(j["confusion"].size() == 7);
  REQUIRE(j["confusion"][0].size() == 8);
  CHECK(j["confusion"][0][0].get<int>() == 2);

  MetricsReport nan_case = evaluate({}, {});
  nlohmann::json jn = nlohmann::json::parse(nan_case.to_json());
  CHECK(jn["macro_f1"].is_null());
  CHECK(jn["macro_f1_excluding_error"].is_null());
}

TEST_CASE("parameter files round trip and validate their structure") {
  ScopedDir dir("params");
  nn::Param w("model.w", Eigen::MatrixXd::Random(3, 2));
  nn::Param b("model.b", Eigen::MatrixXd::Random(2, 1));
  Eigen::MatrixXd w_saved = w.value, b_saved = b.value;
  save_params(dir.file("p.bin"), {&w, &b});

  w.value.setZero();
  b.value.setConstant(9.0);
  w.grad.setConstant(1.0);
  load_params(dir.file("p.bin"), {&w, &b});
  CHECK((w.value - w_saved).norm() == 0.0);
  CHECK((b.value - b_saved).norm() == 0.0);
  CHECK(w.grad.norm() == 0.0);  // gradients reset on load

  CHECK_THROWS_AS(load_params(dir.file("p.bin"), {&w}), DimensionMismatch);
  CHECK_THROWS_AS(load_params(dir.file("p.bin"), {&b, &w}), DataError);

  nn::Param wrong_shape("model.w", Eigen::MatrixXd::Zero(2, 3));
  nn::Param b2("model.b", Eigen::MatrixXd::Zero(2, 1));
  CHECK_THROWS_AS(load_params(dir.file("p.bin"), {&wrong_shape, &b2}), DimensionMismatch);

  write_file_atomic(dir.file("junk.bin"), "JUNKDATA");
  CHECK_THROWS_AS(load_params(dir.file("junk.bin"), {&w, &b}), DataError);
  CHECK_THROWS_AS(load_params(dir.file("missing.bin"), {&w, &b}), MissingArtifact);
}
