#include <doctest.h>

#include <fstream>
#include <string>

#include "rappie/corpus.hpp"
#include "rappie/errors.hpp"
#include "rappie/generators.hpp"
#include "rappie/util.hpp"
#include "temp_dir.hpp"

using namespace rappie;

namespace {

Corpus tiny_corpus() {
  Corpus c;
  c.users["u1"] = {"u1", "female", "north", "arts", {}};
  c.users["u2"] = {"u2", "male", "south", "sports", {}};
  c.posts["p1"] = {"p1", "u1", "sunny day out", Emotion::Happy, false};
  c.posts["p2"] = {"p2", "u2", "rain again", Emotion::Sad, false};
  c.posts["p3"] = {"p3", "u1", "just a note", std::nullopt, false};
  c.users["u1"].history = {"p3"};
  c.follows.insert({"u1", "u2"});
  c.splits["p1"] = Split::Train;
  c.splits["p2"] = Split::Test;
  return c;
}

void write_lines(const std::string& path, const std::vector<std::string>& lines) {
  std::ofstream out(path);
  for (const auto& l : lines) out << l << '\n';
}

}  // namespace

TEST_CASE("emotion names round trip and parse case-insensitively") {
  for (Emotion e : kEmotions) {
    auto back = parse_emotion(emotion_name(e));
    REQUIRE(back.has_value());
    CHECK(*back == e);
  }
  CHECK(parse_emotion("HAPPY") == Emotion::Happy);
  CHECK(parse_emotion("surprise") == Emotion::Surprise);
  CHECK(!parse_emotion("melancholy").has_value());
  CHECK(!parse_emotion("").has_value());
  CHECK(emotion_name(Emotion::Happy) == "Happy");
  CHECK(emotion_name(Emotion::Neutral) == "Neutral");
}

TEST_CASE("corpus save/load round trip preserves posts, users, follows, splits") {
  ScopedDir dir("corpus_rt");
  Corpus c = tiny_corpus();
  save_corpus(c, dir.file("posts.jsonl"), dir.file("users.jsonl"), dir.file("follows.txt"));
  Corpus d = load_corpus(dir.file("posts.jsonl"), dir.file("users.jsonl"), dir.file("follows.txt"));

  REQUIRE(d.posts.size() == 3);
  CHECK(d.posts.at("p1").text == "sunny day out");
  CHECK(d.posts.at("p1").emotion == Emotion::Happy);
  CHECK(!d.posts.at("p3").emotion.has_value());
  CHECK(d.users.at("u1").history == std::vector<std::string>{"p3"});
  CHECK(d.users.at("u2").tag == "sports");
  CHECK(d.follows == c.follows);
  REQUIRE(d.splits.size() == 2);
  CHECK(d.split_of("p1") == Split::Train);
  CHECK(d.split_of("p2") == Split::Test);
  CHECK(!d.split_of("p3").has_value());
}

TEST_CASE("loading without a follows path yields an empty network") {
  ScopedDir dir("corpus_nofollow");
  Corpus c = tiny_corpus();
  save_corpus(c, dir.file("posts.jsonl"), dir.file("users.jsonl"), dir.file("follows.txt"));
  Corpus d = load_corpus(dir.file("posts.jsonl"), dir.file("users.jsonl"));
  CHECK(d.follows.empty());
  CHECK(d.posts.size() == 3);
}

TEST_CASE("malformed and inconsistent records raise typed errors with line numbers") {
  ScopedDir dir("corpus_bad");
  write_lines(dir.file("users.jsonl"),
              {R"({"user_id":"u1","gender":"f","region":"r","tag":"t","history":[]})"});

  SUBCASE("broken json names the line") {
    write_lines(dir.file("posts.jsonl"),
                {R"({"post_id":"p1","author_id":"u1","text":"ok"})", "{not json"});
    try {
      load_corpus(dir.file("posts.jsonl"), dir.file("users.jsonl"));
      FAIL("expected MalformedRecord");
    } catch (const MalformedRecord& e) {
      CHECK(e.line == 2);
    }
  }
  SUBCASE("unknown emotion") {
    write_lines(dir.file("posts.jsonl"),
                {R"({"post_id":"p1","author_id":"u1","text":"x","emotion":"grumpy"})"});
    CHECK_THROWS_AS(load_corpus(dir.file("posts.jsonl"), dir.file("users.jsonl")),
                    MalformedRecord);
  }
  SUBCASE("duplicate post id") {
    write_lines(dir.file("posts.jsonl"), {R"({"post_id":"p1","author_id":"u1","text":"a"})",
                                          R"({"post_id":"p1","author_id":"u1","text":"b"})"});
    CHECK_THROWS_AS(load_corpus(dir.file("posts.jsonl"), dir.file("users.jsonl")), DuplicateId);
  }
  SUBCASE("author must exist") {
    write_lines(dir.file("posts.jsonl"), {R"({"post_id":"p1","author_id":"ghost","text":"a"})"});
    CHECK_THROWS_AS(load_corpus(dir.file("posts.jsonl"), dir.file("users.jsonl")),
                    DanglingReference);
  }
  SUBCASE("split key must name a split and sit on a labeled post") {
    write_lines(dir.file("posts.jsonl"),
                {R"({"post_id":"p1","author_id":"u1","text":"a","emotion":"Happy","split":"weird"})"});
    CHECK_THROWS_AS(load_corpus(dir.file("posts.jsonl"), dir.file("users.jsonl")),
                    MalformedRecord);
    write_lines(dir.file("posts.jsonl"),
                {R"({"post_id":"p1","author_id":"u1","text":"a","split":"train"})"});
    CHECK_THROWS_AS(load_corpus(dir.file("posts.jsonl"), dir.file("users.jsonl")),
                    MalformedRecord);
  }
}

TEST_CASE("split_dataset is stratified, deterministic, and validates ratios") {
  Corpus c;
  c.users["u1"] = {"u1", "f", "r", "t", {}};
  // 10 happy + 10 sad labeled posts
  for (int i = 0; i < 10; ++i) {
    std::string hid = "h" + std::to_string(i);
    std::string sid = "s" + std::to_string(i);
    c.posts[hid] = {hid, "u1", "happy " + std::to_string(i), Emotion::Happy, false};
    c.posts[sid] = {sid, "u1", "sad " + std::to_string(i), Emotion::Sad, false};
  }
  split_dataset(c, {0.6, 0.2, 0.2}, 99);

  std::array<std::array<int, 3>, 2> counts{};  // [class][split]
  for (const auto& [id, split] : c.splits) {
    int cls = id[0] == 'h' ? 0 : 1;
    counts[cls][static_cast<int>(split)] += 1;
  }
  for (int cls = 0; cls < 2; ++cls) {
    CHECK(counts[cls][1] == 2);  // floor(10 * 0.2)
    CHECK(counts[cls][2] == 2);
    CHECK(counts[cls][0] == 6);  // remainder
  }

  Corpus c2 = c;
  c2.splits.clear();
  split_dataset(c2, {0.6, 0.2, 0.2}, 99);
  CHECK(c2.splits == c.splits);

  Corpus c3 = c;
  c3.splits.clear();
  split_dataset(c3, {0.6, 0.2, 0.2}, 100);
  CHECK(c3.splits != c.splits);  // different seed shuffles differently

  CHECK_THROWS_AS(split_dataset(c, {0.5, 0.2, 0.2}, 1), BadRatios);
  CHECK_THROWS_AS(split_dataset(c, {-0.2, 0.6, 0.6}, 1), BadRatios);
}

TEST_CASE("augmented posts merge into train and need valid authors") {
  ScopedDir dir("corpus_aug");
  Corpus c = tiny_corpus();
  write_lines(dir.file("aug.jsonl"),
              {R"({"post_id":"a1","author_id":"u1","text":"extra happy","emotion":"Happy"})",
               R"({"post_id":"a2","author_id":"synthetic_user","text":"made up","emotion":"Sad"})"});
  std::size_t merged = merge_augmented(c, dir.file("aug.jsonl"));
  CHECK(merged == 2);
  CHECK(c.posts.at("a1").is_augmented);
  CHECK(c.split_of("a1") == Split::Train);
  CHECK(c.split_of("a2") == Split::Train);
  CHECK(c.users.count("synthetic_user") == 1);

  write_lines(dir.file("bad.jsonl"),
              {R"({"post_id":"a3","author_id":"ghost","text":"x","emotion":"Sad"})"});
  CHECK_THROWS_AS(merge_augmented(c, dir.file("bad.jsonl")), DanglingReference);
}

TEST_CASE("corpus stats count labeled posts per split") {
  Corpus c = tiny_corpus();
  StatsReport r = corpus_stats(c);
  CHECK(r.total_posts == 3);
  CHECK(r.labeled_posts == 2);
  CHECK(r.user_count == 2);
  CHECK(r.follow_count == 1);
  CHECK(r.counts[static_cast<int>(Emotion::Happy)][static_cast<int>(Split::Train)] == 1);
  CHECK(r.counts[static_cast<int>(Emotion::Sad)][static_cast<int>(Split::Test)] == 1);
  std::string text = r.render_text();
  CHECK(text.find("Dataset") != std::string::npos);
  CHECK(text.find("# R_following 1") != std::string::npos);
}

TEST_CASE("post ids per split come back sorted") {
  Corpus c = tiny_corpus();
  c.posts["p0"] = {"p0", "u1", "another", Emotion::Happy, false};
  c.splits["p0"] = Split::Train;
  auto train = c.post_ids_in_split(Split::Train);
  CHECK(train == std::vector<std::string>{"p0", "p1"});
  CHECK(c.sorted_user_ids() == std::vector<std::string>{"u1", "u2"});
}
