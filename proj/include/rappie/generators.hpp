#pragma once

#include <array>
#include <cstdint>
#include <string>

#include "rappie/corpus.hpp"

namespace rappie {

// Synthetic corpus whose class signal lives entirely in simulated reader
// feedback: post texts are a unique token plus shared fillers (no class
// tokens), every author's history is verbatim copies of classmates' training
// posts, so top-k broadcast stays within the class and the mock backend's
// emotion hints become the only learnable signal.
struct PlantedOptions {
  std::size_t posts_per_class = 40;  // labeled, split 32/4/4 by default
  std::size_t authors_per_class = 4;
  std::size_t extra_readers = 2;
  std::size_t validate_per_class = 4;
  std::size_t test_per_class = 4;
  std::size_t copies_per_reader = 5;  // history length; align with top-k
  std::size_t filler_tokens = 6;      // shared filler words per post text
};

Corpus make_planted_corpus(const PlantedOptions& opts = PlantedOptions());

// Corpus shaped like a published dataset-statistics table: exact per-class
// split counts, unlabeled history posts, user count, and follow-edge count.
struct ShapedClassCounts {
  std::size_t train = 0, validate = 0, test = 0;
};

struct ShapedSpec {
  std::string tag;  // dataset nickname used in ids
  std::array<ShapedClassCounts, kEmotionCount> counts{};
  std::size_t total_posts = 0;  // labeled + unlabeled
  std::size_t users = 0;
  std::size_t follows = 0;
  std::uint64_t seed = 0;

  std::size_t labeled() const;

  static ShapedSpec weibo();
  static ShapedSpec twitter();
};

Corpus make_shaped_corpus(const ShapedSpec& spec);

}  // namespace rappie
