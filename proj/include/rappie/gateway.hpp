#pragma once

#include <Eigen/Core>

#include <atomic>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>

#include "rappie/corpus.hpp"

namespace rappie {

struct DecodingParams {
  double temperature = 0.0;
  int max_new_tokens = 256;
};

// Token rows by feature columns. Row 0 is the <CLS> row; rows at or past
// valid_rows are exactly zero padding.
struct EmbeddingMatrix {
  Eigen::MatrixXd values;
  Eigen::Index valid_rows = 0;

  Eigen::Index rows() const { return values.rows(); }
  Eigen::Index cols() const { return values.cols(); }
};

class ChatBackend {
 public:
  virtual ~ChatBackend() = default;
  virtual std::string name() const = 0;
  virtual std::size_t max_prompt_tokens() const = 0;
  virtual DecodingParams decoding() const = 0;
  virtual std::string generate(const std::string& prompt, std::uint64_t seed) = 0;
  std::size_t calls() const { return calls_.load(); }

 protected:
  void count_call() { calls_.fetch_add(1); }

 private:
  std::atomic<std::size_t> calls_{0};
};

class EncoderBackend {
 public:
  virtual ~EncoderBackend() = default;
  virtual std::string name() const = 0;
  virtual Eigen::Index dim() const = 0;      // d1
  virtual Eigen::Index max_rows() const = 0; // N, includes the <CLS> row
  virtual EmbeddingMatrix encode(const std::string& text) = 0;
  std::size_t calls() const { return calls_.load(); }

 protected:
  void count_call() { calls_.fetch_add(1); }

 private:
  std::atomic<std::size_t> calls_{0};
};

// Validated entry points; all pipeline code goes through these rather than
// calling backends directly.
std::string chat_generate(ChatBackend& backend, const std::string& prompt, std::uint64_t seed);
EmbeddingMatrix encode_text(EncoderBackend& backend, const std::string& text);

// Mean over the non-padding rows.
Eigen::VectorXd pool_mean(const EmbeddingMatrix& m);

// Deterministic offline chat backend. Behavior/emotion are drawn from a
// per-label rule table when the target post's text is registered in the
// label hint map, otherwise from the default rule; every draw is a pure
// function of (prompt, seed).
struct MockChatRule {
  double p_repost = 0.25;
  double p_repost_with_comment = 0.5;  // remainder is no-repost
  double emotion_fidelity = 1.0;       // probability the emitted emotion matches the label
};

class MockChatBackend : public ChatBackend {
 public:
  struct Options {
    std::size_t max_prompt_tokens = 8192;
    DecodingParams decoding{};
    std::uint64_t salt = 0;
  };

  MockChatBackend() : MockChatBackend(Options{}) {}
  explicit MockChatBackend(Options opts);

  void set_rule(Emotion label, MockChatRule rule) { rules_[label] = rule; }
  void set_default_rule(MockChatRule rule) { default_rule_ = rule; }
  void hint_label(const std::string& post_text, Emotion label) { label_hints_[post_text] = label; }

  std::string name() const override { return "mock-chat"; }
  std::size_t max_prompt_tokens() const override { return opts_.max_prompt_tokens; }
  DecodingParams decoding() const override { return opts_.decoding; }
  std::string generate(const std::string& prompt, std::uint64_t seed) override;

 private:
  Options opts_;
  std::map<Emotion, MockChatRule> rules_;
  MockChatRule default_rule_;
  std::map<std::string, Emotion> label_hints_;
};

// Deterministic offline encoder: each token row is a seeded pseudo-random
// projection of the token's hash. Identical text yields an identical matrix.
class MockEncoderBackend : public EncoderBackend {
 public:
  MockEncoderBackend(Eigen::Index dim, Eigen::Index max_rows, std::uint64_t seed);

  std::string name() const override;
  Eigen::Index dim() const override { return dim_; }
  Eigen::Index max_rows() const override { return max_rows_; }
  EmbeddingMatrix encode(const std::string& text) override;

 private:
  Eigen::Index dim_;
  Eigen::Index max_rows_;
  std::uint64_t seed_;
};

}  // namespace rappie
