#include "rappie/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <iomanip>
#include <optional>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "rappie/agents.hpp"
#include "rappie/artifacts.hpp"
#include "rappie/cache.hpp"
#include "rappie/encoding.hpp"
#include "rappie/errors.hpp"
#include "rappie/http_backend.hpp"
#include "rappie/util.hpp"

namespace rappie {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json config_to_json(const PipelineConfig& c) {
  return json{
      {"posts_path", c.posts_path},
      {"users_path", c.users_path},
      {"follows_path", c.follows_path},
      {"augmented_path", c.augmented_path},
      {"dataset_tag", c.dataset_tag},
      {"split_ratios", c.split_ratios},
      {"force_resplit", c.force_resplit},
      {"chat_backend", c.chat_backend},
      {"encoder_backend", c.encoder_backend},
      {"cache_dir", c.cache_dir},
      {"http_host", c.http_host},
      {"http_port", c.http_port},
      {"http_path", c.http_path},
      {"http_model", c.http_model},
      {"mock_p_repost", c.mock_p_repost},
      {"mock_p_repost_with_comment", c.mock_p_repost_with_comment},
      {"mock_emotion_fidelity", c.mock_emotion_fidelity},
      {"mock_hint_labels", c.mock_hint_labels},
      {"d1", c.d1},
      {"d2", c.d2},
      {"n_tokens", c.n_tokens},
      {"heads", c.heads},
      {"k", c.k},
      {"history_in_prompt", c.history_in_prompt},
      {"checkpoint_every", c.checkpoint_every},
      {"role_dir", c.role_dir},
      {"use_roles", c.use_roles},
      {"enrich_roles", c.enrich_roles},
      {"rounds", c.rounds},
      {"view_epochs", c.view_epochs},
      {"view_lr", c.view_lr},
      {"negatives_per_positive", c.negatives_per_positive},
      {"epochs", c.epochs},
      {"batch_size", c.batch_size},
      {"lr", c.lr},
      {"l2", c.l2},
      {"patience", c.patience},
      {"freeze_upstream", c.freeze_upstream},
      {"resume", c.resume},
      {"drop_reader_query", c.drop_reader_query},
      {"drop_role_gate", c.drop_role_gate},
      {"drop_role_init", c.drop_role_init},
      {"drop_view", c.drop_view},
      {"sweep_rounds", c.sweep_rounds},
      {"seed", c.seed},
      {"out_dir", c.out_dir},
  };
}

const std::set<std::string>& string_keys() {
  static const std::set<std::string> keys = {
      "posts_path",    "users_path", "follows_path", "augmented_path", "dataset_tag",
      "chat_backend",  "encoder_backend", "role_dir", "out_dir",
      "cache_dir",     "http_host",  "http_path",    "http_model",
  };
  return keys;
}

template <typename T>
void read_key(const json& j, const char* key, T& into) {
  auto it = j.find(key);
  if (it == j.end()) return;
  try {
    into = it->get<T>();
  } catch (const json::exception&) {
    throw UsageError(std::string("config key '") + key + "' has the wrong type");
  }
}

void config_from_json(PipelineConfig& c, const json& j) {
  if (!j.is_object()) throw UsageError("config must be a JSON object");
  const json defaults = config_to_json(PipelineConfig{});
  for (const auto& [key, value] : j.items()) {
    (void)value;
    if (!defaults.contains(key)) throw UsageError("unknown config key '" + key + "'");
  }
  read_key(j, "posts_path", c.posts_path);
  read_key(j, "users_path", c.users_path);
  read_key(j, "follows_path", c.follows_path);
  read_key(j, "augmented_path", c.augmented_path);
  read_key(j, "dataset_tag", c.dataset_tag);
  read_key(j, "split_ratios", c.split_ratios);
  read_key(j, "force_resplit", c.force_resplit);
  read_key(j, "chat_backend", c.chat_backend);
  read_key(j, "encoder_backend", c.encoder_backend);
  read_key(j, "cache_dir", c.cache_dir);
  read_key(j, "http_host", c.http_host);
  read_key(j, "http_port", c.http_port);
  read_key(j, "http_path", c.http_path);
  read_key(j, "http_model", c.http_model);
  read_key(j, "mock_p_repost", c.mock_p_repost);
  read_key(j, "mock_p_repost_with_comment", c.mock_p_repost_with_comment);
  read_key(j, "mock_emotion_fidelity", c.mock_emotion_fidelity);
  read_key(j, "mock_hint_labels", c.mock_hint_labels);
  read_key(j, "d1", c.d1);
  read_key(j, "d2", c.d2);
  read_key(j, "n_tokens", c.n_tokens);
  read_key(j, "heads", c.heads);
  read_key(j, "k", c.k);
  read_key(j, "history_in_prompt", c.history_in_prompt);
  read_key(j, "checkpoint_every", c.checkpoint_every);
  read_key(j, "role_dir", c.role_dir);
  read_key(j, "use_roles", c.use_roles);
  read_key(j, "enrich_roles", c.enrich_roles);
  read_key(j, "rounds", c.rounds);
  read_key(j, "view_epochs", c.view_epochs);
  read_key(j, "view_lr", c.view_lr);
  read_key(j, "negatives_per_positive", c.negatives_per_positive);
  read_key(j, "epochs", c.epochs);
  read_key(j, "batch_size", c.batch_size);
  read_key(j, "lr", c.lr);
  read_key(j, "l2", c.l2);
  read_key(j, "patience", c.patience);
  read_key(j, "freeze_upstream", c.freeze_upstream);
  read_key(j, "resume", c.resume);
  read_key(j, "drop_reader_query", c.drop_reader_query);
  read_key(j, "drop_role_gate", c.drop_role_gate);
  read_key(j, "drop_role_init", c.drop_role_init);
  read_key(j, "drop_view", c.drop_view);
  read_key(j, "sweep_rounds", c.sweep_rounds);
  read_key(j, "seed", c.seed);
  read_key(j, "out_dir", c.out_dir);
}

std::string fmt4(double v) {
  if (std::isnan(v)) return "-";
  std::ostringstream out;
  out << std::fixed << std::setprecision(4) << v;
  return out.str();
}

std::string fmt6(double v) {
  if (std::isnan(v)) return "-";
  std::ostringstream out;
  out << std::fixed << std::setprecision(6) << v;
  return out.str();
}

void add_file(std::map<std::string, std::string>& side, const std::string& path) {
  if (!path.empty() && fs::exists(path)) side[path] = sha256_file_hex(path);
}

std::string model_display_name(const PipelineConfig& cfg) {
  return "RAPPIE(" + cfg.chat_backend + ")";
}

}  // namespace

PipelineConfig PipelineConfig::from_file(const std::string& path) {
  std::string text = read_file(path);
  json j = json::parse(text, nullptr, false);
  if (j.is_discarded()) throw UsageError("config file '" + path + "' is not valid JSON");
  PipelineConfig c;
  config_from_json(c, j);
  return c;
}

void PipelineConfig::apply_override(const std::string& key, const std::string& value) {
  json j;
  if (string_keys().count(key)) {
    j[key] = value;
  } else {
    json parsed = json::parse(value, nullptr, false);
    if (parsed.is_discarded())
      throw UsageError("override value for '" + key + "' is not valid JSON: " + value);
    j[key] = parsed;
  }
  config_from_json(*this, j);
}

std::string PipelineConfig::canonical_json() const { return config_to_json(*this).dump(); }

std::string PipelineConfig::config_hash() const { return sha256_hex(canonical_json()); }

std::uint64_t PipelineConfig::sub_seed(std::string_view name) const {
  return mix64(seed, fnv1a64(name));
}

AblationFlags PipelineConfig::ablation_flags() const {
  AblationFlags f;
  f.drop_reader_query = drop_reader_query;
  f.drop_role_gate = drop_role_gate;
  f.drop_view = drop_view;
  return f;
}

// ---------------------------------------------------------------------------

std::string RunManifest::to_json() const {
  json j{{"stage", stage},         {"config_hash", config_hash}, {"seed", seed},
         {"inputs", inputs},       {"outputs", outputs},         {"notes", notes},
         {"started_at", started_at}, {"finished_at", finished_at}};
  return j.dump(2) + "\n";
}

RunManifest RunManifest::from_json_text(const std::string& text) {
  json j = json::parse(text, nullptr, false);
  if (j.is_discarded() || !j.is_object()) throw DataError("manifest is not a JSON object");
  RunManifest m;
  m.stage = j.value("stage", "");
  m.config_hash = j.value("config_hash", "");
  m.seed = j.value("seed", std::uint64_t{0});
  if (j.contains("inputs")) m.inputs = j["inputs"].get<std::map<std::string, std::string>>();
  if (j.contains("outputs")) m.outputs = j["outputs"].get<std::map<std::string, std::string>>();
  if (j.contains("notes")) m.notes = j["notes"].get<std::vector<std::string>>();
  m.started_at = j.value("started_at", "");
  m.finished_at = j.value("finished_at", "");
  return m;
}

void RunManifest::write(const std::string& path) const { write_file_atomic(path, to_json()); }

std::string ArtifactPaths::view_initial(ViewId v) const {
  return dir + "/view_" + view_name(v) + "_initial.bin";
}
std::string ArtifactPaths::view_final(ViewId v) const {
  return dir + "/view_" + view_name(v) + "_final.bin";
}
std::string ArtifactPaths::view_head(ViewId v) const {
  return dir + "/view_" + view_name(v) + "_head.bin";
}
std::string ArtifactPaths::metrics_text(Split s) const {
  return dir + "/metrics_" + split_name(s) + ".txt";
}
std::string ArtifactPaths::metrics_json(Split s) const {
  return dir + "/metrics_" + split_name(s) + ".json";
}

// ---------------------------------------------------------------------------

std::shared_ptr<ChatBackend> make_chat_backend(const PipelineConfig& cfg, const Corpus* corpus) {
  std::shared_ptr<ChatBackend> backend;
  if (cfg.chat_backend == "mock") {
    MockChatBackend::Options opts;
    opts.salt = cfg.sub_seed("chat");
    auto mock = std::make_shared<MockChatBackend>(opts);
    MockChatRule rule{cfg.mock_p_repost, cfg.mock_p_repost_with_comment,
                      cfg.mock_emotion_fidelity};
    mock->set_default_rule(rule);
    for (Emotion e : kEmotions) mock->set_rule(e, rule);
    if (corpus != nullptr && cfg.mock_hint_labels) {
      for (const auto& [id, post] : corpus->posts)
        if (post.emotion) mock->hint_label(post.text, *post.emotion);
    }
    backend = std::move(mock);
  } else if (cfg.chat_backend == "http") {
    HttpChatBackend::Options opts;
    opts.host = cfg.http_host;
    opts.port = cfg.http_port;
    opts.path = cfg.http_path;
    opts.model = cfg.http_model;
    backend = std::make_shared<HttpChatBackend>(opts);
  } else {
    throw BackendUnavailable("chat backend '" + cfg.chat_backend +
                             "' is not available; use \"mock\" or \"http\"");
  }
  if (!cfg.cache_dir.empty()) backend = with_cache(backend, cfg.cache_dir + "/chat");
  return backend;
}

std::shared_ptr<EncoderBackend> make_encoder_backend(const PipelineConfig& cfg) {
  if (cfg.encoder_backend != "mock")
    throw BackendUnavailable("encoder backend '" + cfg.encoder_backend +
                             "' is not available; use \"mock\"");
  std::shared_ptr<EncoderBackend> backend =
      std::make_shared<MockEncoderBackend>(cfg.d1, cfg.n_tokens, cfg.sub_seed("encoder"));
  if (!cfg.cache_dir.empty()) backend = with_cache(backend, cfg.cache_dir + "/encoder");
  return backend;
}

Corpus pipeline_load_corpus(const PipelineConfig& cfg) {
  Corpus corpus = load_corpus(cfg.posts_path, cfg.users_path, cfg.follows_path);
  if (!cfg.augmented_path.empty()) merge_augmented(corpus, cfg.augmented_path);

  std::size_t unassigned = 0;
  for (const auto& [id, post] : corpus.posts)
    if (post.emotion && !post.is_augmented && !corpus.splits.count(id)) ++unassigned;
  const bool has_assignments = !corpus.splits.empty();
  if (cfg.force_resplit || !has_assignments) {
    split_dataset(corpus, cfg.split_ratios, cfg.sub_seed("split"));
  } else if (unassigned > 0) {
    throw DataError("corpus files assign splits to only part of the labeled posts (" +
                    std::to_string(unassigned) + " missing)");
  }
  return corpus;
}

// ---------------------------------------------------------------------------

namespace {
constexpr std::string_view kFeatureMagic = "RAPPIERF1\n";
}

void save_reader_features(const std::string& path, const ReaderFeatureSet& set) {
  std::string out(kFeatureMagic);
  bin::put_u64(out, set.nodes.size());
  for (const std::string& node : set.nodes) bin::put_bytes(out, node);
  for (const Eigen::MatrixXd& m : set.view_embeddings) bin::put_matrix(out, m);
  write_file_atomic(path, out);
}

ReaderFeatureSet load_reader_features(const std::string& path) {
  std::string data = read_file(path);
  if (data.size() < kFeatureMagic.size() ||
      std::string_view(data).substr(0, kFeatureMagic.size()) != kFeatureMagic)
    throw DataError("bad reader-feature magic in " + path);
  bin::Reader r(std::string_view(data).substr(kFeatureMagic.size()), path);
  ReaderFeatureSet set;
  std::uint64_t n = r.u64();
  set.nodes.reserve(n);
  for (std::uint64_t i = 0; i < n; ++i) set.nodes.push_back(r.bytes());
  for (std::size_t v = 0; v < 3; ++v) {
    set.view_embeddings[v] = r.matrix();
    if (set.view_embeddings[v].rows() != static_cast<Eigen::Index>(n))
      throw DataError("reader-feature matrix row count mismatch in " + path);
  }
  r.expect_done();
  return set;
}

// ---------------------------------------------------------------------------

void cmd_simulate(const PipelineConfig& cfg) {
  ArtifactPaths p{cfg.out_dir};
  fs::create_directories(cfg.out_dir);
  RunManifest m;
  m.stage = "simulate";
  m.config_hash = cfg.config_hash();
  m.seed = cfg.seed;
  m.started_at = iso8601_utc_now();
  add_file(m.inputs, cfg.posts_path);
  add_file(m.inputs, cfg.users_path);
  add_file(m.inputs, cfg.follows_path);
  add_file(m.inputs, cfg.augmented_path);

  Corpus corpus = pipeline_load_corpus(cfg);
  StatsReport stats = corpus_stats(corpus);
  write_file_atomic(p.stats_text(), stats.render_text());
  write_file_atomic(p.stats_json(), stats.to_json());

  std::shared_ptr<ChatBackend> chat = make_chat_backend(cfg, &corpus);
  BroadcastOptions opts;
  opts.k = cfg.k;
  opts.seed = cfg.sub_seed("broadcast");
  opts.history_in_prompt = cfg.history_in_prompt;
  opts.checkpoint_every = cfg.checkpoint_every;
  opts.checkpoint_path = p.ledger_checkpoint();
  opts.resume = cfg.resume;
  FeedbackLedger ledger = run_broadcast(corpus, *chat, opts);
  ledger.save(p.ledger());
  if (fs::exists(p.ledger_checkpoint())) fs::remove(p.ledger_checkpoint());

  std::string tag = chat->name() + " in " + cfg.dataset_tag;
  write_file_atomic(p.behavior_report(), behavior_report(ledger, cfg.k, tag));

  add_file(m.outputs, p.stats_text());
  add_file(m.outputs, p.stats_json());
  add_file(m.outputs, p.ledger());
  add_file(m.outputs, p.behavior_report());
  m.notes.push_back("entries=" + std::to_string(ledger.entries.size()));
  m.notes.push_back("chat_calls=" + std::to_string(chat->calls()));
  m.finished_at = iso8601_utc_now();
  m.write(p.manifest("simulate"));
}

void cmd_build_graph(const PipelineConfig& cfg) {
  ArtifactPaths p{cfg.out_dir};
  fs::create_directories(cfg.out_dir);
  RunManifest m;
  m.stage = "build-graph";
  m.config_hash = cfg.config_hash();
  m.seed = cfg.seed;
  m.started_at = iso8601_utc_now();
  add_file(m.inputs, cfg.posts_path);
  add_file(m.inputs, cfg.users_path);
  add_file(m.inputs, cfg.follows_path);
  add_file(m.inputs, p.ledger());

  Corpus corpus = pipeline_load_corpus(cfg);
  FeedbackLedger ledger = FeedbackLedger::load(p.ledger());
  OverlappingNetwork net = build_overlapping_network(corpus, ledger);
  save_network(net, p.network());

  std::shared_ptr<EncoderBackend> encoder = make_encoder_backend(cfg);
  std::vector<RoleProfile> roles = load_role_profiles(cfg.role_dir);
  for (const RoleProfile& role : roles) {
    for (const char* suffix : {".description.txt", ".example.txt", ".enriched.txt"}) {
      std::string slug = lowercase_ascii(role.name);
      std::replace(slug.begin(), slug.end(), ' ', '_');
      add_file(m.inputs, cfg.role_dir + "/" + slug + suffix);
    }
  }
  std::shared_ptr<ChatBackend> enricher;
  if (cfg.enrich_roles) enricher = make_chat_backend(cfg, nullptr);
  Eigen::MatrixXd role_matrix =
      build_role_matrix(*encoder, roles, enricher.get(), cfg.sub_seed("roles"));
  save_matrix(p.role_matrix(), role_matrix);

  UserEncoderParams enc_params = UserEncoderParams::init(cfg.d1, cfg.heads,
                                                         cfg.sub_seed("encoder_params"));
  save_params(p.encoder_params(), enc_params.params());

  std::map<std::string, UserContext> contexts = build_user_contexts(corpus, ledger, *encoder);
  const bool use_roles = cfg.use_roles && !cfg.drop_role_init;
  if (!use_roles) m.notes.push_back("role attachment disabled for user embeddings");
  Eigen::MatrixXd h_apr = all_user_embeddings(enc_params, contexts, role_matrix, use_roles);
  save_matrix(p.h_apr(), h_apr);

  json losses = json::object();
  std::array<Eigen::MatrixXd, 3> finals;
  for (std::size_t i = 0; i < kViews.size(); ++i) {
    ViewId id = kViews[i];
    ViewGraph view = make_view(net, id, h_apr);
    if (view.positives.empty()) {
      finals[i] = h_apr;
      save_matrix(p.view_initial(id), h_apr);
      save_matrix(p.view_final(id), h_apr);
      losses[view_name(id)] = json::array();
      m.notes.push_back("view " + view_name(id) + ": pass-through (no edges)");
      continue;
    }
    ViewTrainOptions vopts;
    vopts.rounds = cfg.rounds;
    vopts.epochs = cfg.view_epochs;
    vopts.lr = cfg.view_lr;
    vopts.negatives_per_positive = cfg.negatives_per_positive;
    vopts.seed = cfg.sub_seed("view_" + view_name(id));
    ViewTrainResult result = train_view(view, vopts);
    finals[i] = result.embeddings;
    save_matrix(p.view_initial(id), result.initial);
    save_matrix(p.view_final(id), result.embeddings);
    save_params(p.view_head(id), {&result.edge_w, &result.edge_b});
    losses[view_name(id)] = result.losses;
    add_file(m.outputs, p.view_head(id));
  }
  write_file_atomic(p.view_losses(), losses.dump(2) + "\n");

  ReaderFeatureSet features = collect_reader_features(net.nodes, finals);
  save_reader_features(p.reader_features(), features);

  add_file(m.outputs, p.network());
  add_file(m.outputs, p.role_matrix());
  add_file(m.outputs, p.encoder_params());
  add_file(m.outputs, p.h_apr());
  for (ViewId id : kViews) {
    add_file(m.outputs, p.view_initial(id));
    add_file(m.outputs, p.view_final(id));
  }
  add_file(m.outputs, p.view_losses());
  add_file(m.outputs, p.reader_features());
  m.notes.push_back("nodes=" + std::to_string(net.nodes.size()));
  m.finished_at = iso8601_utc_now();
  m.write(p.manifest("build-graph"));
}

namespace {

// Loads the frozen upstream artifacts and, when end-to-end training is
// requested, the pieces of the differentiable path. Owns everything the
// providers point into.
struct UpstreamBundle {
  Corpus corpus;
  std::shared_ptr<EncoderBackend> encoder;
  Eigen::MatrixXd role_matrix;
  ReaderFeatureSet features;
  ClassifierData data;

  // end-to-end extras
  FeedbackLedger ledger;
  UserEncoderParams enc_params;
  std::map<std::string, UserContext> contexts;
  std::array<std::vector<std::vector<Eigen::Index>>, 3> adjacency;
  std::array<Eigen::MatrixXd, 3> deltas;
};

UpstreamBundle load_upstream(const PipelineConfig& cfg, const ArtifactPaths& p,
                             bool end_to_end) {
  UpstreamBundle b;
  b.corpus = pipeline_load_corpus(cfg);
  b.encoder = make_encoder_backend(cfg);
  b.role_matrix = load_matrix(p.role_matrix());
  b.features = load_reader_features(p.reader_features());
  b.data = build_classifier_data(b.corpus, *b.encoder, b.features.nodes);
  if (!end_to_end) return b;

  b.ledger = FeedbackLedger::load(p.ledger());
  b.enc_params = UserEncoderParams::init(cfg.d1, cfg.heads, cfg.sub_seed("encoder_params"));
  load_params(p.encoder_params(), b.enc_params.params());
  b.contexts = build_user_contexts(b.corpus, b.ledger, *b.encoder);
  Eigen::MatrixXd h_apr = load_matrix(p.h_apr());
  OverlappingNetwork net = load_network(p.network());
  for (std::size_t i = 0; i < kViews.size(); ++i) {
    ViewGraph view = make_view(net, kViews[i], h_apr);
    b.adjacency[i] = std::move(view.adjacency);
    b.deltas[i] = load_matrix(p.view_initial(kViews[i])) - h_apr;
  }
  return b;
}

EndToEndFeatureProvider::Setup end_to_end_setup(const PipelineConfig& cfg, UpstreamBundle& b) {
  EndToEndFeatureProvider::Setup setup;
  setup.encoder_params = &b.enc_params;
  setup.contexts = &b.contexts;
  setup.role_matrix = b.role_matrix;
  setup.use_roles = cfg.use_roles && !cfg.drop_role_init;
  setup.adjacency = b.adjacency;
  setup.deltas = b.deltas;
  setup.rounds = cfg.rounds;
  return setup;
}

void write_metrics(const ArtifactPaths& p, Split split, const MetricsReport& report,
                   const std::string& model_name, RunManifest& m) {
  write_file_atomic(p.metrics_text(split), report.render_text(model_name));
  write_file_atomic(p.metrics_json(split), report.to_json());
  add_file(m.outputs, p.metrics_text(split));
  add_file(m.outputs, p.metrics_json(split));
}

MetricsReport eval_split(FusionParams& fusion, ReaderFeatureProvider& provider,
                         const std::vector<LabeledExample>& examples,
                         const Eigen::MatrixXd& role_matrix, const AblationFlags& flags) {
  std::vector<int> preds = predict_labels(fusion, provider, examples, role_matrix, flags);
  std::vector<int> golds;
  golds.reserve(examples.size());
  for (const LabeledExample& ex : examples) golds.push_back(ex.label);
  return evaluate(preds, golds);
}

}  // namespace

void cmd_train(const PipelineConfig& cfg) {
  ArtifactPaths p{cfg.out_dir};
  fs::create_directories(cfg.out_dir);
  RunManifest m;
  m.stage = "train";
  m.config_hash = cfg.config_hash();
  m.seed = cfg.seed;
  m.started_at = iso8601_utc_now();
  add_file(m.inputs, p.role_matrix());
  add_file(m.inputs, p.reader_features());

  const bool end_to_end = !cfg.freeze_upstream;
  UpstreamBundle bundle = load_upstream(cfg, p, end_to_end);
  if (end_to_end) {
    add_file(m.inputs, p.ledger());
    add_file(m.inputs, p.network());
    add_file(m.inputs, p.h_apr());
    add_file(m.inputs, p.encoder_params());
  }

  FusionConfig fcfg{cfg.n_tokens, cfg.d1, cfg.d2, cfg.heads, cfg.sub_seed("fusion")};
  FusionParams fusion = FusionParams::init(fcfg);

  std::unique_ptr<ReaderFeatureProvider> provider;
  std::unique_ptr<EndToEndFeatureProvider> e2e;
  if (end_to_end) {
    e2e = std::make_unique<EndToEndFeatureProvider>(end_to_end_setup(cfg, bundle));
  } else {
    provider = std::make_unique<FrozenFeatureProvider>(bundle.features);
  }
  ReaderFeatureProvider& active = end_to_end ? static_cast<ReaderFeatureProvider&>(*e2e)
                                             : *provider;

  TrainOptions topts;
  topts.epochs = cfg.epochs;
  topts.batch_size = cfg.batch_size;
  topts.lr = cfg.lr;
  topts.l2 = cfg.l2;
  topts.patience = cfg.patience;
  topts.seed = cfg.sub_seed("train");
  topts.ablation = cfg.ablation_flags();
  topts.checkpoint_path = p.train_checkpoint();
  topts.resume = cfg.resume;

  TrainResult result = train_classifier(fusion, active, bundle.data, bundle.role_matrix, topts);
  save_params(p.fusion_params(), fusion.params());

  ReaderFeatureSet trained = bundle.features;
  if (end_to_end) trained.view_embeddings = e2e->materialize();
  save_reader_features(p.reader_features_trained(), trained);

  std::ostringstream log;
  log << "epoch  train_loss  val_macro_f1  val_accuracy\n";
  for (const EpochStats& e : result.history) {
    log << std::left << std::setw(7) << e.epoch << std::setw(12) << fmt6(e.train_loss)
        << std::setw(14) << fmt4(e.val_macro_f1) << fmt4(e.val_accuracy) << '\n';
  }
  write_file_atomic(p.train_log(), log.str());

  FrozenFeatureProvider frozen(trained);
  MetricsReport val_report = eval_split(fusion, frozen, bundle.data.validate,
                                        bundle.role_matrix, cfg.ablation_flags());
  write_metrics(p, Split::Validate, val_report, model_display_name(cfg), m);

  add_file(m.outputs, p.fusion_params());
  add_file(m.outputs, p.reader_features_trained());
  add_file(m.outputs, p.train_log());
  add_file(m.outputs, p.train_checkpoint());
  m.notes.push_back("trainable_count=" + std::to_string(result.trainable_count));
  m.notes.push_back("freeze_upstream=" + std::string(cfg.freeze_upstream ? "true" : "false"));
  m.notes.push_back("best_epoch=" + std::to_string(result.best_epoch));
  m.notes.push_back("best_val_macro_f1=" + fmt4(result.best_val_macro_f1));
  m.notes.push_back("epochs_run=" + std::to_string(result.epochs_run));
  m.finished_at = iso8601_utc_now();
  m.write(p.manifest("train"));
}

void cmd_evaluate(const PipelineConfig& cfg) {
  ArtifactPaths p{cfg.out_dir};
  fs::create_directories(cfg.out_dir);
  RunManifest m;
  m.stage = "evaluate";
  m.config_hash = cfg.config_hash();
  m.seed = cfg.seed;
  m.started_at = iso8601_utc_now();
  add_file(m.inputs, p.fusion_params());
  add_file(m.inputs, p.reader_features_trained());
  add_file(m.inputs, p.role_matrix());

  Corpus corpus = pipeline_load_corpus(cfg);
  std::shared_ptr<EncoderBackend> encoder = make_encoder_backend(cfg);
  Eigen::MatrixXd role_matrix = load_matrix(p.role_matrix());
  ReaderFeatureSet features = load_reader_features(p.reader_features_trained());
  ClassifierData data = build_classifier_data(corpus, *encoder, features.nodes);

  FusionConfig fcfg{cfg.n_tokens, cfg.d1, cfg.d2, cfg.heads, cfg.sub_seed("fusion")};
  FusionParams fusion = FusionParams::init(fcfg);
  load_params(p.fusion_params(), fusion.params());

  FrozenFeatureProvider provider(features);
  MetricsReport val_report =
      eval_split(fusion, provider, data.validate, role_matrix, cfg.ablation_flags());
  write_metrics(p, Split::Validate, val_report, model_display_name(cfg), m);
  MetricsReport test_report =
      eval_split(fusion, provider, data.test, role_matrix, cfg.ablation_flags());
  write_metrics(p, Split::Test, test_report, model_display_name(cfg), m);

  m.finished_at = iso8601_utc_now();
  m.write(p.manifest("evaluate"));
}

namespace {

struct AblationRow {
  std::string label;
  double val_macro = std::nan("");
  double test_macro = std::nan("");
};

AblationRow run_ablation(const PipelineConfig& cfg, const std::string& label,
                         FusionParams& fusion, ReaderFeatureProvider& provider,
                         const ClassifierData& data, const Eigen::MatrixXd& role_matrix,
                         const AblationFlags& flags) {
  TrainOptions topts;
  topts.epochs = cfg.epochs;
  topts.batch_size = cfg.batch_size;
  topts.lr = cfg.lr;
  topts.l2 = cfg.l2;
  topts.patience = cfg.patience;
  topts.seed = cfg.sub_seed("train");
  topts.ablation = flags;
  train_classifier(fusion, provider, data, role_matrix, topts);

  AblationRow row;
  row.label = label;
  row.val_macro = eval_split(fusion, provider, data.validate, role_matrix, flags).macro_f1;
  row.test_macro = eval_split(fusion, provider, data.test, role_matrix, flags).macro_f1;
  return row;
}

std::string render_ablation_table(const std::vector<AblationRow>& rows) {
  std::ostringstream out;
  out << std::left << std::setw(16) << "Models" << std::setw(20) << "Macro-F1(validate)"
      << "Macro-F1(test)" << '\n';
  for (const AblationRow& r : rows) {
    out << std::left << std::setw(16) << r.label << std::setw(20) << fmt4(r.val_macro)
        << fmt4(r.test_macro) << '\n';
  }
  return out.str();
}

}  // namespace

void cmd_ablate(const PipelineConfig& cfg) {
  ArtifactPaths p{cfg.out_dir};
  fs::create_directories(cfg.out_dir);
  RunManifest m;
  m.stage = "ablate";
  m.config_hash = cfg.config_hash();
  m.seed = cfg.seed;
  m.started_at = iso8601_utc_now();
  add_file(m.inputs, p.role_matrix());
  add_file(m.inputs, p.reader_features());
  add_file(m.inputs, p.ledger());
  add_file(m.inputs, p.network());
  add_file(m.inputs, p.h_apr());

  UpstreamBundle b = load_upstream(cfg, p, /*end_to_end=*/true);

  FusionConfig fcfg{cfg.n_tokens, cfg.d1, cfg.d2, cfg.heads, cfg.sub_seed("fusion")};
  auto fresh_fusion = [&]() { return FusionParams::init(fcfg); };

  std::vector<AblationRow> rows;
  auto frozen_row = [&](const std::string& label, AblationFlags flags) {
    FusionParams fusion = fresh_fusion();
    FrozenFeatureProvider provider(b.features);
    rows.push_back(run_ablation(cfg, label, fusion, provider, b.data, b.role_matrix, flags));
  };

  frozen_row("RAPPIE", {});
  frozen_row("w/o M_u^rf", {.drop_reader_query = true});
  frozen_row("w/o M^role", {.drop_role_gate = true});

  {
    // Role-free user encoding: rebuild the aggregated embeddings and retrain
    // every view on them, with the same per-view seeds as the main run.
    Eigen::MatrixXd h_apr2 =
        all_user_embeddings(b.enc_params, b.contexts, b.role_matrix, /*use_roles=*/false);
    OverlappingNetwork net = load_network(p.network());
    std::array<Eigen::MatrixXd, 3> finals;
    for (std::size_t i = 0; i < kViews.size(); ++i) {
      ViewGraph view = make_view(net, kViews[i], h_apr2);
      if (view.positives.empty()) {
        finals[i] = h_apr2;
        continue;
      }
      ViewTrainOptions vopts;
      vopts.rounds = cfg.rounds;
      vopts.epochs = cfg.view_epochs;
      vopts.lr = cfg.view_lr;
      vopts.negatives_per_positive = cfg.negatives_per_positive;
      vopts.seed = cfg.sub_seed("view_" + view_name(kViews[i]));
      finals[i] = train_view(view, vopts).embeddings;
    }
    ReaderFeatureSet rebuilt = collect_reader_features(net.nodes, finals);
    FusionParams fusion = fresh_fusion();
    FrozenFeatureProvider provider(rebuilt);
    rows.push_back(run_ablation(cfg, "w/o H^role", fusion, provider, b.data, b.role_matrix, {}));
  }

  {
    // Content plus raw author attributes in the reader slot.
    Eigen::MatrixXd attrs(static_cast<Eigen::Index>(b.contexts.size()), cfg.d1);
    Eigen::Index row = 0;
    for (const auto& [user_id, ctx] : b.contexts) attrs.row(row++) = ctx.attr_vec.transpose();
    FusionParams fusion = fresh_fusion();
    AttributeFeatureProvider provider(std::move(attrs));
    rows.push_back(run_ablation(cfg, "M_u^s+H_u^at", fusion, provider, b.data, b.role_matrix,
                                {.drop_role_gate = true}));
  }

  frozen_row("M_u^s only", {.drop_reader_query = true, .drop_role_gate = true});
  frozen_row("w/o V_r", {.drop_view = {false, true, false}});
  frozen_row("w/o V_c", {.drop_view = {false, false, true}});
  frozen_row("w/o V_f", {.drop_view = {true, false, false}});

  write_file_atomic(p.ablation_text(), render_ablation_table(rows));
  json rows_json = json::array();
  for (const AblationRow& r : rows) {
    json row{{"model", r.label}};
    row["macro_f1_validate"] = std::isnan(r.val_macro) ? json() : json(r.val_macro);
    row["macro_f1_test"] = std::isnan(r.test_macro) ? json() : json(r.test_macro);
    rows_json.push_back(row);
  }
  write_file_atomic(p.ablation_json(), rows_json.dump(2) + "\n");
  add_file(m.outputs, p.ablation_text());
  add_file(m.outputs, p.ablation_json());

  if (cfg.sweep_rounds > 0) {
    OverlappingNetwork net = load_network(p.network());
    std::ostringstream sweep;
    sweep << std::left << std::setw(8) << "rounds" << std::setw(20) << "Macro-F1(validate)"
          << "Macro-F1(test)" << '\n';
    for (int k_rounds = 1; k_rounds <= cfg.sweep_rounds; ++k_rounds) {
      std::array<Eigen::MatrixXd, 3> finals;
      for (std::size_t i = 0; i < kViews.size(); ++i) {
        Eigen::MatrixXd initial = load_matrix(p.view_initial(kViews[i]));
        ViewGraph view = make_view(net, kViews[i], initial);
        finals[i] = propagate(view, k_rounds);
      }
      ReaderFeatureSet swept = collect_reader_features(net.nodes, finals);
      FusionParams fusion = fresh_fusion();
      FrozenFeatureProvider provider(swept);
      AblationRow row = run_ablation(cfg, "K=" + std::to_string(k_rounds), fusion, provider,
                                     b.data, b.role_matrix, {});
      sweep << std::left << std::setw(8) << k_rounds << std::setw(20) << fmt4(row.val_macro)
            << fmt4(row.test_macro) << '\n';
    }
    write_file_atomic(p.rounds_sweep(), sweep.str());
    add_file(m.outputs, p.rounds_sweep());
  }

  m.finished_at = iso8601_utc_now();
  m.write(p.manifest("ablate"));
}

// ---------------------------------------------------------------------------

std::string cmd_report(const std::string& run_dir) {
  if (!fs::exists(run_dir)) throw MissingArtifact("run directory '" + run_dir + "' not found");

  std::map<std::string, std::vector<RunManifest>> by_dir;
  std::vector<std::string> manifest_paths;
  for (const auto& entry : fs::recursive_directory_iterator(run_dir)) {
    if (!entry.is_regular_file()) continue;
    std::string name = entry.path().filename().string();
    if (name.size() > 14 && name.substr(name.size() - 14) == ".manifest.json")
      manifest_paths.push_back(entry.path().string());
  }
  std::sort(manifest_paths.begin(), manifest_paths.end());
  for (const std::string& path : manifest_paths) {
    by_dir[fs::path(path).parent_path().string()].push_back(
        RunManifest::from_json_text(read_file(path)));
  }

  std::ostringstream out;
  struct RunSummary {
    std::string dir;
    double val_macro = std::nan(""), test_macro = std::nan(""), test_acc = std::nan("");
  };
  std::vector<RunSummary> summaries;

  for (const auto& [dir, manifests] : by_dir) {
    out << "run " << dir << '\n';
    RunSummary summary;
    summary.dir = dir;
    for (const RunManifest& man : manifests) {
      out << "  stage " << man.stage << "  config " << man.config_hash.substr(0, 12) << "  seed "
          << man.seed << "  outputs " << man.outputs.size() << '\n';
      for (const std::string& note : man.notes) out << "    " << note << '\n';
    }
    ArtifactPaths p{dir};
    for (Split s : {Split::Validate, Split::Test}) {
      if (!fs::exists(p.metrics_json(s))) continue;
      json j = json::parse(read_file(p.metrics_json(s)), nullptr, false);
      if (j.is_discarded()) continue;
      double macro = j["macro_f1"].is_number() ? j["macro_f1"].get<double>() : std::nan("");
      double acc = j.value("accuracy", std::nan(""));
      out << "  metrics[" << split_name(s) << "] macro_f1 " << fmt4(macro) << "  accuracy "
          << fmt4(acc) << '\n';
      if (s == Split::Validate) summary.val_macro = macro;
      if (s == Split::Test) {
        summary.test_macro = macro;
        summary.test_acc = acc;
      }
    }
    if (fs::exists(p.ablation_text())) out << "  ablation table: " << p.ablation_text() << '\n';
    out << '\n';
    summaries.push_back(summary);
  }

  if (summaries.size() > 1) {
    out << std::left << std::setw(40) << "run" << std::setw(14) << "val_macro" << std::setw(14)
        << "test_macro" << "test_accuracy" << '\n';
    for (const RunSummary& s : summaries) {
      out << std::left << std::setw(40) << s.dir << std::setw(14) << fmt4(s.val_macro)
          << std::setw(14) << fmt4(s.test_macro) << fmt4(s.test_acc) << '\n';
    }
  }

  std::string text = out.str();
  write_file_atomic(run_dir + std::string("/report.txt"), text);
  RunManifest m;
  m.stage = "report";
  m.started_at = m.finished_at = iso8601_utc_now();
  add_file(m.outputs, run_dir + std::string("/report.txt"));
  m.write(run_dir + std::string("/report.manifest.json"));
  return text;
}

// ---------------------------------------------------------------------------

std::string shape_dry_run(Eigen::Index d1, Eigen::Index d2, Eigen::Index n_tokens, int heads) {
  std::ostringstream out;
  auto check = [&](const std::string& name, const nn::Mat& m, Eigen::Index rows,
                   Eigen::Index cols) {
    if (m.rows() != rows || m.cols() != cols)
      throw DimensionMismatch(name + " expected " + std::to_string(rows) + "x" +
                              std::to_string(cols) + ", got " + std::to_string(m.rows()) + "x" +
                              std::to_string(m.cols()));
    out << name << "  " << m.rows() << "x" << m.cols() << "  ok\n";
  };

  {
    UserEncoderParams enc = UserEncoderParams::init(d1, heads, 0);
    check("encoder.comment_stack.layer1.wq", enc.comment_stack.layer1.wq.value, d1, d1);
    check("encoder.comment_stack.layer2.wo", enc.comment_stack.layer2.wo.value, d1, d1);
    check("encoder.fuse_w", enc.fuse_w.value, d1, 2 * d1);
    check("encoder.fuse_b", enc.fuse_b.value, d1, 1);
    check("encoder.role_attention.wv", enc.role_attention.wv.value, d1, d1);
    check("encoder.role_w", enc.role_w.value, d1, 2 * d1);
    check("encoder.role_b", enc.role_b.value, d1, 1);
  }
  {
    Eigen::MatrixXd role_matrix = Eigen::MatrixXd::Zero(4, d1);
    check("role_matrix", role_matrix, 4, d1);
    Eigen::MatrixXd content = Eigen::MatrixXd::Zero(n_tokens, d1);
    check("content_tokens", content, n_tokens, d1);
  }
  {
    FusionConfig cfg{n_tokens, d1, d2, heads, 0};
    FusionParams fusion = FusionParams::init(cfg);
    check("fusion.w_s", fusion.w_s.value, n_tokens, d2);
    check("fusion.w_r", fusion.w_r.value, 3, d2);
    check("fusion.w_e", fusion.w_e.value, 4, d2);
    check("fusion.att_content.wq", fusion.att_content.wq.value, d1, d1);
    check("fusion.att_role.wo", fusion.att_role.wo.value, d1, d1);
    check("fusion.w_gs", fusion.w_gs.value, d2, d2);
    check("fusion.w_gr", fusion.w_gr.value, d2, d2);
    check("fusion.w_o", fusion.w_o.value, static_cast<Eigen::Index>(kEmotionCount), 4 * d2);
    check("fusion.b_o", fusion.b_o.value, static_cast<Eigen::Index>(kEmotionCount), 1);
  }
  return out.str();
}

}  // namespace rappie
