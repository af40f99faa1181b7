#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace rappie {

enum class Emotion { Happy, Anger, Sad, Disgust, Fear, Surprise, Neutral };

inline constexpr std::array<Emotion, 7> kEmotions = {
    Emotion::Happy, Emotion::Anger,    Emotion::Sad,     Emotion::Disgust,
    Emotion::Fear,  Emotion::Surprise, Emotion::Neutral,
};
inline constexpr std::size_t kEmotionCount = 7;

const std::string& emotion_name(Emotion e);
std::optional<Emotion> parse_emotion(std::string_view name);  // case-insensitive

enum class Split { Train, Validate, Test };
const std::string& split_name(Split s);

struct Post {
  std::string post_id;
  std::string author_id;
  std::string text;
  std::optional<Emotion> emotion;  // unlabeled history posts stay empty
  bool is_augmented = false;
};

struct UserProfile {
  std::string user_id;
  std::string gender;
  std::string region;
  std::string tag;
  std::vector<std::string> history;  // post ids, most recent last
};

struct Corpus {
  std::map<std::string, Post> posts;
  std::map<std::string, UserProfile> users;
  std::set<std::pair<std::string, std::string>> follows;  // (follower, followee)
  std::map<std::string, Split> splits;                    // labeled posts only

  std::optional<Split> split_of(const std::string& post_id) const;
  std::vector<std::string> post_ids_in_split(Split s) const;  // sorted
  std::vector<std::string> sorted_user_ids() const;
};

// JSONL loaders. Every record is validated; the follows path is optional
// (pass empty for corpora without a follow network).
Corpus load_corpus(const std::string& posts_path, const std::string& users_path,
                   const std::string& follows_path = "");

void save_corpus(const Corpus& corpus, const std::string& posts_path,
                 const std::string& users_path, const std::string& follows_path);

// Deterministic stratified split of labeled, non-augmented posts. Validate
// and test sizes round down per emotion; the remainder goes to train.
// Augmented posts always land in train.
void split_dataset(Corpus& corpus, const std::array<double, 3>& ratios, std::uint64_t seed);

// Merges an augmented-post JSONL file into the corpus: records are flagged,
// assigned to the train split, and their authors must already exist (or be
// the designated synthetic author, which is created on first use).
std::size_t merge_augmented(Corpus& corpus, const std::string& augmented_path,
                            const std::string& synthetic_author = "synthetic_user");

struct StatsReport {
  // counts[emotion][split]
  std::array<std::array<std::size_t, 3>, kEmotionCount> counts{};
  std::size_t total_posts = 0;  // all posts, labeled or not
  std::size_t labeled_posts = 0;
  std::size_t user_count = 0;
  std::size_t follow_count = 0;

  std::size_t split_total(Split s) const;
  std::string render_text() const;  // per-emotion split table plus totals
  std::string to_json() const;
};

StatsReport corpus_stats(const Corpus& corpus);

}  // namespace rappie
