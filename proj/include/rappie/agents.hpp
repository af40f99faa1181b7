#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "rappie/corpus.hpp"
#include "rappie/gateway.hpp"

namespace rappie {

inline constexpr std::string_view kHistorySeparator = "[sep]";

enum class Behavior { Repost, RepostWithComment, NoRepost };
const std::string& behavior_name(Behavior b);

struct AgentPrompt {
  std::string reader_id;
  std::string post_id;
  std::string rendered;
};

struct SimulatedFeedback {
  std::string reader_id;
  std::string post_id;
  std::size_t rank = 0;  // position of the post in the reader's top-k list
  Behavior behavior = Behavior::NoRepost;
  std::optional<Emotion> emotion;  // empty when the reply's emotion line is unusable
  std::string comment;             // non-empty iff behavior == RepostWithComment
  std::string raw;
};

struct ParsedFeedback {
  Behavior behavior = Behavior::NoRepost;
  std::optional<Emotion> emotion;
  std::string comment;
};

// Renders the persona prompt: attribute slots, history joined by the literal
// separator, then the target post.
AgentPrompt build_agent_prompt(const UserProfile& reader,
                               const std::vector<std::string>& history_texts,
                               const std::string& post_id, const std::string& post_text);

// Ranks candidate (post_id, text) pairs against the concatenated history by
// normalized term-weight similarity; ties break by ascending post_id.
// Returns the ids of the best min(k, |candidates|) posts.
std::vector<std::string> select_topk_posts(
    const std::vector<std::string>& reader_history,
    const std::vector<std::pair<std::string, std::string>>& candidates, std::size_t k);

// Total and idempotent: any string maps to a ParsedFeedback, and a record's
// fields never change under re-parsing of its raw text.
ParsedFeedback parse_feedback(const std::string& raw);

SimulatedFeedback simulate_feedback(ChatBackend& backend, const UserProfile& reader,
                                    const std::vector<std::string>& history_texts,
                                    const Post& post, std::uint64_t seed);

struct FeedbackLedger {
  std::vector<SimulatedFeedback> entries;  // sorted by (reader_id, post_id)

  std::size_t count(Behavior b) const;
  void save(const std::string& path) const;
  static FeedbackLedger load(const std::string& path);
};

struct BroadcastOptions {
  std::size_t k = 100;
  std::uint64_t seed = 0;
  std::size_t max_inflight = 4;
  std::size_t history_in_prompt = 5;  // most recent usable history posts
  std::size_t checkpoint_every = 0;   // entries between checkpoint writes; 0 disables
  std::string checkpoint_path;
  bool resume = false;
  bool overwrite = false;  // replace entries already present when resuming
};

// Simulates feedback from every user onto their top-k training posts by
// other authors. Entry count is the sum over readers of min(k, |candidates|).
FeedbackLedger run_broadcast(const Corpus& corpus, ChatBackend& backend,
                             const BroadcastOptions& opts);

// Counts per behavior for one run, Table-style: columns are top-k, corpus
// tag, the three behaviors, and the total.
std::string behavior_report(const FeedbackLedger& ledger, std::size_t k, const std::string& tag);

}  // namespace rappie
