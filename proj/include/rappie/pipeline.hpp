#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "rappie/classifier.hpp"
#include "rappie/corpus.hpp"
#include "rappie/gateway.hpp"
#include "rappie/graph.hpp"

namespace rappie {

// Flat-key run configuration. Every field has a default; a JSON config file
// and --set key=value overrides adjust individual keys.
struct PipelineConfig {
  // corpus
  std::string posts_path = "data/demo/posts.jsonl";
  std::string users_path = "data/demo/users.jsonl";
  std::string follows_path;    // empty: no follow network
  std::string augmented_path;  // empty: no augmentation file
  std::string dataset_tag = "demo";
  std::array<double, 3> split_ratios{0.8, 0.1, 0.1};
  bool force_resplit = false;  // ignore split assignments shipped in the files

  // backends: "mock", or "http" with the http_* fields below
  std::string chat_backend = "mock";
  std::string encoder_backend = "mock";
  std::string cache_dir;  // empty: no on-disk response cache
  std::string http_host = "127.0.0.1";
  int http_port = 8000;
  std::string http_path = "/v1/chat/completions";
  std::string http_model = "chatglm-6b";
  double mock_p_repost = 0.25;
  double mock_p_repost_with_comment = 0.5;
  double mock_emotion_fidelity = 1.0;
  bool mock_hint_labels = true;

  // shapes
  Eigen::Index d1 = 64;
  Eigen::Index d2 = 32;
  Eigen::Index n_tokens = 128;
  int heads = 8;

  // feedback simulation
  std::size_t k = 100;
  std::size_t history_in_prompt = 5;
  std::size_t checkpoint_every = 0;

  // role system and user encoding
  std::string role_dir = "assets/roles";
  bool use_roles = true;
  bool enrich_roles = false;  // send enrichment prompts through the chat backend

  // view training
  int rounds = 1;
  int view_epochs = 10;
  double view_lr = 2e-6;
  int negatives_per_positive = 1;

  // classifier training
  int epochs = 30;
  int batch_size = 8;
  double lr = 2e-6;
  double l2 = 1e-5;
  int patience = 5;
  bool freeze_upstream = false;
  bool resume = false;

  // ablation switches
  bool drop_reader_query = false;
  bool drop_role_gate = false;
  bool drop_role_init = false;
  std::array<bool, 3> drop_view{};
  int sweep_rounds = 0;  // >0: re-run the classifier over 1..N propagation rounds

  // seeds and output
  std::uint64_t seed = 1;
  std::string out_dir = "out";

  static PipelineConfig from_file(const std::string& path);
  void apply_override(const std::string& key, const std::string& value);

  std::string canonical_json() const;  // every key, sorted, stable
  std::string config_hash() const;     // sha256 of canonical_json()
  std::uint64_t sub_seed(std::string_view name) const;

  AblationFlags ablation_flags() const;
};

// Traceability sidecar written next to each stage's outputs. Timestamps are
// informational; determinism comparisons must skip manifest files.
struct RunManifest {
  std::string stage;
  std::string config_hash;
  std::uint64_t seed = 0;
  std::map<std::string, std::string> inputs;   // path -> sha256
  std::map<std::string, std::string> outputs;  // path -> sha256
  std::vector<std::string> notes;
  std::string started_at, finished_at;

  std::string to_json() const;
  static RunManifest from_json_text(const std::string& text);
  void write(const std::string& path) const;
};

// Well-known artifact names inside out_dir.
struct ArtifactPaths {
  std::string dir;

  std::string stats_text() const { return dir + "/stats.txt"; }
  std::string stats_json() const { return dir + "/stats.json"; }
  std::string ledger() const { return dir + "/ledger.jsonl"; }
  std::string ledger_checkpoint() const { return dir + "/ledger.checkpoint.jsonl"; }
  std::string behavior_report() const { return dir + "/behavior_report.txt"; }
  std::string network() const { return dir + "/network.txt"; }
  std::string role_matrix() const { return dir + "/role_matrix.bin"; }
  std::string encoder_params() const { return dir + "/encoder_params.bin"; }
  std::string h_apr() const { return dir + "/h_apr.bin"; }
  std::string view_initial(ViewId v) const;
  std::string view_final(ViewId v) const;
  std::string view_head(ViewId v) const;
  std::string view_losses() const { return dir + "/view_losses.json"; }
  std::string reader_features() const { return dir + "/h_rf.bin"; }
  std::string reader_features_trained() const { return dir + "/h_rf_trained.bin"; }
  std::string fusion_params() const { return dir + "/fusion_params.bin"; }
  std::string train_checkpoint() const { return dir + "/checkpoint.bin"; }
  std::string train_log() const { return dir + "/train_log.txt"; }
  std::string metrics_text(Split s) const;
  std::string metrics_json(Split s) const;
  std::string ablation_text() const { return dir + "/ablation.txt"; }
  std::string ablation_json() const { return dir + "/ablation.json"; }
  std::string rounds_sweep() const { return dir + "/rounds_sweep.txt"; }
  std::string manifest(const std::string& stage) const {
    return dir + "/" + stage + ".manifest.json";
  }
};

std::shared_ptr<ChatBackend> make_chat_backend(const PipelineConfig& cfg, const Corpus* corpus);
std::shared_ptr<EncoderBackend> make_encoder_backend(const PipelineConfig& cfg);

// Load + optional augmentation merge + split assignment (kept from the
// files when present, ratio split otherwise).
Corpus pipeline_load_corpus(const PipelineConfig& cfg);

// Serialized reader-feature sets (node list plus the three view matrices).
void save_reader_features(const std::string& path, const ReaderFeatureSet& set);
ReaderFeatureSet load_reader_features(const std::string& path);

void cmd_simulate(const PipelineConfig& cfg);
void cmd_build_graph(const PipelineConfig& cfg);
void cmd_train(const PipelineConfig& cfg);
void cmd_evaluate(const PipelineConfig& cfg);
void cmd_ablate(const PipelineConfig& cfg);
std::string cmd_report(const std::string& run_dir);

// Allocates every parameter block of the full model at the given shape,
// verifies dimensions, and frees each block before the next; returns a
// human-readable listing of the checked shapes.
std::string shape_dry_run(Eigen::Index d1, Eigen::Index d2, Eigen::Index n_tokens, int heads);

}  // namespace rappie
