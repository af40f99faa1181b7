#include <doctest.h>

#include <fstream>
#include <set>
#include <string>

#include "rappie/agents.hpp"
#include "rappie/cache.hpp"
#include "rappie/errors.hpp"
#include "rappie/gateway.hpp"
#include "temp_dir.hpp"

using namespace rappie;

TEST_CASE("mock chat replies are a pure function of prompt and seed") {
  MockChatBackend a, b;
  std::string r1 = a.generate("some prompt", 7);
  CHECK(r1 == b.generate("some prompt", 7));
  CHECK(r1 == a.generate("some prompt", 7));  // no hidden state
  CHECK(a.generate("some prompt", 8) != a.generate("other prompt", 8));
  CHECK(a.calls() == 4);
}

TEST_CASE("mock chat reply format parses back to its own fields") {
  MockChatBackend mock;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    std::string raw = mock.generate("prompt " + std::to_string(seed), seed);
    CHECK(raw.rfind("Behavior: ", 0) == 0);
    CHECK(raw.find("\nEmotion: ") != std::string::npos);
    ParsedFeedback parsed = parse_feedback(raw);
    CHECK(parsed.emotion.has_value());
    if (parsed.behavior == Behavior::RepostWithComment)
      CHECK(!parsed.comment.empty());
    else
      CHECK(parsed.comment.empty());
  }
}

TEST_CASE("behavior rule probabilities bind") {
  SUBCASE("degenerate repost rule") {
    MockChatBackend mock;
    mock.set_default_rule({1.0, 0.0, 1.0});
    for (int i = 0; i < 20; ++i) {
      auto parsed = parse_feedback(mock.generate("p" + std::to_string(i), 3));
      CHECK(parsed.behavior == Behavior::Repost);
    }
  }
  SUBCASE("degenerate comment rule") {
    MockChatBackend mock;
    mock.set_default_rule({0.0, 1.0, 1.0});
    for (int i = 0; i < 20; ++i) {
      auto parsed = parse_feedback(mock.generate("p" + std::to_string(i), 3));
      CHECK(parsed.behavior == Behavior::RepostWithComment);
      CHECK(!parsed.comment.empty());
    }
  }
  SUBCASE("fractions track the rule over many prompts") {
    MockChatBackend mock;
    mock.set_default_rule({0.5, 0.25, 1.0});
    int repost = 0, comment = 0, none = 0;
    const int n = 600;
    for (int i = 0; i < n; ++i) {
      switch (parse_feedback(mock.generate("post " + std::to_string(i), 11)).behavior) {
        case Behavior::Repost: ++repost; break;
        case Behavior::RepostWithComment: ++comment; break;
        case Behavior::NoRepost: ++none; break;
      }
    }
    CHECK(repost > n * 0.42);
    CHECK(repost < n * 0.58);
    CHECK(comment > n * 0.18);
    CHECK(comment < n * 0.32);
    CHECK(none > 0);
  }
}

TEST_CASE("label hints steer the emitted emotion by fidelity") {
  SUBCASE("full fidelity echoes the hinted label") {
    MockChatBackend mock;
    mock.set_default_rule({0.3, 0.3, 1.0});
    mock.hint_label("the target text", Emotion::Fear);
    for (int i = 0; i < 25; ++i) {
      std::string prompt = "persona stuff " + std::to_string(i) +
                           "\nNow you read the following post: the target text\nRespond";
      auto parsed = parse_feedback(mock.generate(prompt, 5));
      REQUIRE(parsed.emotion.has_value());
      CHECK(*parsed.emotion == Emotion::Fear);
    }
  }
  SUBCASE("zero fidelity never echoes it") {
    MockChatBackend mock;
    mock.set_default_rule({0.3, 0.3, 0.0});
    mock.set_rule(Emotion::Fear, {0.3, 0.3, 0.0});
    mock.hint_label("the target text", Emotion::Fear);
    for (int i = 0; i < 25; ++i) {
      std::string prompt =
          "p" + std::to_string(i) + "\nNow you read the following post: the target text\nGo";
      auto parsed = parse_feedback(mock.generate(prompt, 5));
      REQUIRE(parsed.emotion.has_value());
      CHECK(*parsed.emotion != Emotion::Fear);
    }
  }
  SUBCASE("unhinted prompts spread over all emotions") {
    MockChatBackend mock;
    std::set<Emotion> seen;
    for (int i = 0; i < 200; ++i) {
      auto parsed = parse_feedback(mock.generate("free " + std::to_string(i), 2));
      if (parsed.emotion) seen.insert(*parsed.emotion);
    }
    CHECK(seen.size() == kEmotionCount);
  }
}

TEST_CASE("chat_generate enforces the prompt budget") {
  MockChatBackend::Options opts;
  opts.max_prompt_tokens = 4;
  MockChatBackend mock(opts);
  CHECK_NOTHROW((void)chat_generate(mock, "one two three four", 1));
  CHECK_THROWS_AS((void)chat_generate(mock, "one two three four five", 1), PromptTooLong);
}

TEST_CASE("mock encoder emits deterministic token rows with zero padding") {
  MockEncoderBackend enc(8, 6, 42);
  EmbeddingMatrix m = encode_text(enc, "alpha beta gamma");
  CHECK(m.cols() == 8);
  CHECK(m.rows() == 6);
  CHECK(m.valid_rows == 4);  // CLS + 3 tokens
  CHECK(m.values.row(0).norm() > 0);
  for (Eigen::Index r = m.valid_rows; r < m.rows(); ++r) CHECK(m.values.row(r).norm() == 0.0);

  EmbeddingMatrix again = encode_text(enc, "alpha beta gamma");
  CHECK((m.values - again.values).norm() == 0.0);

  MockEncoderBackend other(8, 6, 43);
  CHECK((encode_text(other, "alpha beta gamma").values - m.values).norm() != 0.0);

  // long text truncates at max_rows
  EmbeddingMatrix full = encode_text(enc, "a b c d e f g h i j");
  CHECK(full.valid_rows == 6);
}

TEST_CASE("identical tokens embed identically across positions of other text") {
  MockEncoderBackend enc(8, 10, 1);
  EmbeddingMatrix a = encode_text(enc, "shared unique1");
  EmbeddingMatrix b = encode_text(enc, "shared unique2");
  CHECK((a.values.row(1) - b.values.row(1)).norm() == 0.0);  // "shared" row
  CHECK((a.values.row(2) - b.values.row(2)).norm() != 0.0);
}

TEST_CASE("pool_mean averages only the valid rows") {
  EmbeddingMatrix m;
  m.values = Eigen::MatrixXd::Zero(4, 2);
  m.values.row(0) << 2.0, 4.0;
  m.values.row(1) << 4.0, 0.0;
  m.valid_rows = 2;
  Eigen::VectorXd pooled = pool_mean(m);
  CHECK(pooled(0) == doctest::Approx(3.0));
  CHECK(pooled(1) == doctest::Approx(2.0));

  m.valid_rows = 0;
  CHECK_THROWS_AS((void)pool_mean(m), AllPadding);
}

TEST_CASE("cache wrappers replay without re-invoking and repair corrupt entries") {
  ScopedDir dir("cache");
  auto inner = std::make_shared<MockChatBackend>();
  auto cached = with_cache(std::static_pointer_cast<ChatBackend>(inner), dir.file("chat"));

  std::string first = cached->generate("hello", 9);
  CHECK(inner->calls() == 1);
  CHECK(cached->generate("hello", 9) == first);
  CHECK(inner->calls() == 1);  // served from disk
  CHECK(cached->generate("hello", 10) != "");
  CHECK(inner->calls() == 2);  // different seed is a different key

  // corrupt every cache file, expect CacheCorrupt then self-repair
  std::size_t clobbered = 0;
  for (const auto& entry : std::filesystem::recursive_directory_iterator(dir.file("chat"))) {
    if (!entry.is_regular_file()) continue;
    std::ofstream(entry.path(), std::ios::trunc) << "garbage";
    ++clobbered;
  }
  REQUIRE(clobbered > 0);
  CHECK_THROWS_AS((void)cached->generate("hello", 9), CacheCorrupt);
  CHECK(cached->generate("hello", 9) == first);  // recomputed and rewritten
  CHECK(cached->generate("hello", 9) == first);
  CHECK(inner->calls() == 3);  // exactly one recompute after eviction

  auto enc_inner = std::make_shared<MockEncoderBackend>(4, 4, 7);
  auto enc_cached = with_cache(std::static_pointer_cast<EncoderBackend>(enc_inner),
                               dir.file("enc"));
  EmbeddingMatrix e1 = enc_cached->encode("tok tok2");
  EmbeddingMatrix e2 = enc_cached->encode("tok tok2");
  CHECK((e1.values - e2.values).norm() == 0.0);
  CHECK(e1.valid_rows == e2.valid_rows);
  CHECK(enc_inner->calls() == 1);
}
