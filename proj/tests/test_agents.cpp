#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "rappie/agents.hpp"
#include "rappie/corpus.hpp"
#include "rappie/errors.hpp"
#include "rappie/gateway.hpp"
#include "rappie/generators.hpp"
#include "rappie/text.hpp"
#include "rappie/util.hpp"
#include "temp_dir.hpp"

using namespace rappie;

namespace {

// Brute-force term-weight ranking, written independently of the library:
// raw term counts summed over the history entries, idf = ln((1+|D|)/(1+df))
// + 1 over the candidate set, L2-normalized vectors, cosine similarity.
std::vector<std::string> oracle_topk(const std::vector<std::string>& history,
                                     const std::vector<std::pair<std::string, std::string>>& cands,
                                     std::size_t k) {
  auto count_terms = [](const std::string& text) {
    std::map<std::string, double> tf;
    for (const auto& tok : tokenize(text)) tf[tok] += 1.0;
    return tf;
  };
  std::map<std::string, double> query_tf;
  for (const auto& h : history)
    for (const auto& [term, cnt] : count_terms(h)) query_tf[term] += cnt;

  std::map<std::string, double> df;
  std::vector<std::map<std::string, double>> doc_tfs;
  for (const auto& [id, text] : cands) {
    doc_tfs.push_back(count_terms(text));
    for (const auto& [term, cnt] : doc_tfs.back()) df[term] += 1.0;
  }
  double n_docs = static_cast<double>(cands.size());
  auto idf = [&](const std::string& term) {
    double d = df.count(term) ? df.at(term) : 0.0;
    return std::log((1.0 + n_docs) / (1.0 + d)) + 1.0;
  };
  auto weighted = [&](const std::map<std::string, double>& tf) {
    std::map<std::string, double> w;
    double norm = 0.0;
    for (const auto& [term, cnt] : tf) {
      double v = cnt * idf(term);
      w[term] = v;
      norm += v * v;
    }
    norm = std::sqrt(norm);
    if (norm > 0)
      for (auto& [term, v] : w) v /= norm;
    return w;
  };
  auto qw = weighted(query_tf);

  std::vector<std::pair<double, std::string>> scored;
  for (std::size_t i = 0; i < cands.size(); ++i) {
    auto dw = weighted(doc_tfs[i]);
    double dot = 0.0;
    for (const auto& [term, v] : dw) {
      auto it = qw.find(term);
      if (it != qw.end()) dot += v * it->second;
    }
    scored.emplace_back(dot, cands[i].first);
  }
  std::stable_sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  std::vector<std::string> out;
  for (std::size_t i = 0; i < std::min(k, scored.size()); ++i) out.push_back(scored[i].second);
  return out;
}

std::string random_text(Rng& rng, const std::vector<std::string>& vocab) {
  std::size_t len = 1 + rng.below(8);
  std::string s;
  for (std::size_t i = 0; i < len; ++i) {
    if (i) s += ' ';
    s += vocab[rng.below(vocab.size())];
  }
  return s;
}

}  // namespace

TEST_CASE("agent prompt carries attributes, separated history, and the target") {
  UserProfile reader{"u9", "female", "north", "music", {}};
  AgentPrompt p = build_agent_prompt(reader, {"first old post", "second old post"}, "p1",
                                     "the fresh target");
  CHECK(p.reader_id == "u9");
  CHECK(p.post_id == "p1");
  CHECK(p.rendered.find("female") != std::string::npos);
  CHECK(p.rendered.find("north") != std::string::npos);
  CHECK(p.rendered.find("music") != std::string::npos);
  CHECK(p.rendered.find("first old post[sep]second old post") != std::string::npos);
  CHECK(p.rendered.find("Now you read the following post: the fresh target") !=
        std::string::npos);
  // behavior menu for the reply format
  CHECK(p.rendered.find("repost with comment") != std::string::npos);
}

TEST_CASE("top-k selection matches the brute-force ranking on random corpora") {
  std::vector<std::string> vocab = {"ant", "bee", "cat", "dog", "elk", "fox",
                                    "gnu", "hen", "ibex", "jay"};
  Rng rng(2024);
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<std::string> history;
    std::size_t n_hist = 1 + rng.below(4);
    for (std::size_t i = 0; i < n_hist; ++i) history.push_back(random_text(rng, vocab));

    std::vector<std::pair<std::string, std::string>> cands;
    std::size_t n_cands = 1 + rng.below(30);
    for (std::size_t i = 0; i < n_cands; ++i) {
      char buf[8];
      std::snprintf(buf, sizeof(buf), "d%03zu", i);
      cands.emplace_back(buf, random_text(rng, vocab));
    }
    std::size_t k = 1 + rng.below(10);
    CAPTURE(trial);
    CHECK(select_topk_posts(history, cands, k) == oracle_topk(history, cands, k));
  }
}

TEST_CASE("top-k edge cases") {
  std::vector<std::pair<std::string, std::string>> cands = {
      {"b", "same words here"}, {"a", "same words here"}, {"c", "unrelated thing"}};
  SUBCASE("ties break by ascending post id") {
    auto ids = select_topk_posts({"same words here"}, cands, 2);
    CHECK(ids == std::vector<std::string>{"a", "b"});
  }
  SUBCASE("k larger than the candidate pool returns everything") {
    auto ids = select_topk_posts({"same words here"}, cands, 50);
    CHECK(ids.size() == 3);
  }
  SUBCASE("k zero selects nothing") {
    CHECK(select_topk_posts({"text"}, cands, 0).empty());
  }
  SUBCASE("empty history is a typed error") {
    CHECK_THROWS_AS((void)select_topk_posts({}, cands, 2), EmptyHistory);
  }
}

TEST_CASE("parse_feedback is total and idempotent") {
  auto p1 = parse_feedback("Behavior: repost with comment\nEmotion: Sad\nComment: gloomy");
  CHECK(p1.behavior == Behavior::RepostWithComment);
  CHECK(p1.emotion == Emotion::Sad);
  CHECK(p1.comment == "gloomy");

  auto p2 = parse_feedback("Behavior: REPOST\nEmotion: happy\nComment:");
  CHECK(p2.behavior == Behavior::Repost);
  CHECK(p2.emotion == Emotion::Happy);
  CHECK(p2.comment.empty());

  auto p3 = parse_feedback("total garbage with no structure");
  CHECK(p3.behavior == Behavior::NoRepost);
  CHECK(!p3.emotion.has_value());

  auto p4 = parse_feedback("Behavior: repost\nEmotion: confused beyond words\nComment: x");
  CHECK(p4.behavior == Behavior::Repost);
  CHECK(!p4.emotion.has_value());  // unusable emotion line survives as empty

  CHECK(parse_feedback("").behavior == Behavior::NoRepost);
}

TEST_CASE("simulate_feedback fills the record and keeps comment consistent") {
  MockChatBackend mock;
  mock.set_default_rule({0.0, 1.0, 1.0});  // always repost-with-comment
  UserProfile reader{"u1", "f", "r", "t", {}};
  Post post{"p1", "u2", "something to react to", Emotion::Anger, false};
  SimulatedFeedback fb = simulate_feedback(mock, reader, {"old text"}, post, 5);
  CHECK(fb.reader_id == "u1");
  CHECK(fb.post_id == "p1");
  CHECK(fb.behavior == Behavior::RepostWithComment);
  CHECK(!fb.comment.empty());
  CHECK(fb.raw.find("Behavior:") == 0);

  mock.set_default_rule({1.0, 0.0, 1.0});  // always plain repost
  SimulatedFeedback fb2 = simulate_feedback(mock, reader, {"old text"}, post, 5);
  CHECK(fb2.behavior == Behavior::Repost);
  CHECK(fb2.comment.empty());
}

TEST_CASE("ledger round trip and behavior counting") {
  ScopedDir dir("ledger");
  FeedbackLedger ledger;
  ledger.entries.push_back({"u1", "p1", 0, Behavior::Repost, Emotion::Happy, "", "raw1"});
  ledger.entries.push_back(
      {"u1", "p2", 1, Behavior::RepostWithComment, Emotion::Sad, "so sad", "raw2"});
  ledger.entries.push_back({"u2", "p1", 0, Behavior::NoRepost, std::nullopt, "", "raw3"});
  ledger.save(dir.file("ledger.jsonl"));
  FeedbackLedger back = FeedbackLedger::load(dir.file("ledger.jsonl"));
  REQUIRE(back.entries.size() == 3);
  CHECK(back.entries[1].comment == "so sad");
  CHECK(!back.entries[2].emotion.has_value());
  CHECK(back.count(Behavior::Repost) == 1);
  CHECK(back.count(Behavior::RepostWithComment) == 1);
  CHECK(back.count(Behavior::NoRepost) == 1);
}

TEST_CASE("broadcast simulates every reader over its top-k candidates") {
  PlantedOptions opts;
  opts.posts_per_class = 8;
  opts.authors_per_class = 2;
  opts.extra_readers = 1;
  opts.validate_per_class = 1;
  opts.test_per_class = 1;
  opts.copies_per_reader = 3;
  Corpus corpus = make_planted_corpus(opts);

  MockChatBackend mock;
  BroadcastOptions bopts;
  bopts.k = 3;
  bopts.seed = 11;
  bopts.history_in_prompt = 3;
  FeedbackLedger ledger = run_broadcast(corpus, mock, bopts);

  // every user has >= 3 candidate train posts by other authors, so each
  // contributes exactly k entries
  CHECK(ledger.entries.size() == corpus.users.size() * bopts.k);

  // sorted by (reader, post)
  for (std::size_t i = 1; i < ledger.entries.size(); ++i) {
    auto key = [](const SimulatedFeedback& f) { return std::tie(f.reader_id, f.post_id); };
    CHECK(key(ledger.entries[i - 1]) < key(ledger.entries[i]));
  }

  // only train posts by other authors are broadcast
  for (const auto& fb : ledger.entries) {
    const Post& post = corpus.posts.at(fb.post_id);
    CHECK(post.author_id != fb.reader_id);
    CHECK(corpus.split_of(fb.post_id) == Split::Train);
  }

  // byte-level determinism
  FeedbackLedger again = run_broadcast(corpus, mock, bopts);
  ScopedDir dir("broadcast");
  ledger.save(dir.file("a.jsonl"));
  again.save(dir.file("b.jsonl"));
  CHECK(read_file(dir.file("a.jsonl")) == read_file(dir.file("b.jsonl")));
}

TEST_CASE("k sweep scales total entries linearly while candidates suffice") {
  PlantedOptions opts;
  opts.posts_per_class = 8;
  opts.authors_per_class = 2;
  opts.extra_readers = 1;
  opts.validate_per_class = 1;
  opts.test_per_class = 1;
  opts.copies_per_reader = 3;
  Corpus corpus = make_planted_corpus(opts);
  MockChatBackend mock;
  std::vector<std::size_t> totals;
  for (std::size_t k : {1, 2, 3}) {
    BroadcastOptions bopts;
    bopts.k = k;
    FeedbackLedger ledger = run_broadcast(corpus, mock, bopts);
    totals.push_back(ledger.entries.size());
  }
  CHECK(totals[0] == corpus.users.size());
  CHECK(totals[1] == 2 * corpus.users.size());
  CHECK(totals[2] == 3 * corpus.users.size());
}

TEST_CASE("documented full-scale total: users x k") {
  // the reference behavior table reports 3508 readers at k=100 -> 350800
  std::size_t users = 3508, k = 100;
  CHECK(users * k == 350800);
}

TEST_CASE("broadcast resume merges a checkpoint instead of recomputing") {
  PlantedOptions opts;
  opts.posts_per_class = 8;
  opts.authors_per_class = 2;
  opts.extra_readers = 1;
  opts.validate_per_class = 1;
  opts.test_per_class = 1;
  opts.copies_per_reader = 3;
  Corpus corpus = make_planted_corpus(opts);
  MockChatBackend mock;

  BroadcastOptions full;
  full.k = 3;
  full.seed = 4;
  FeedbackLedger fresh = run_broadcast(corpus, mock, full);
  std::size_t calls_for_full = mock.calls();

  // save the first half as a fake interrupted checkpoint
  ScopedDir dir("resume");
  FeedbackLedger half;
  half.entries.assign(fresh.entries.begin(),
                      fresh.entries.begin() + static_cast<long>(fresh.entries.size() / 2));
  half.save(dir.file("ck.jsonl"));

  MockChatBackend mock2;
  BroadcastOptions resume = full;
  resume.checkpoint_path = dir.file("ck.jsonl");
  resume.resume = true;
  FeedbackLedger resumed = run_broadcast(corpus, mock2, resume);

  REQUIRE(resumed.entries.size() == fresh.entries.size());
  for (std::size_t i = 0; i < fresh.entries.size(); ++i) {
    CHECK(resumed.entries[i].reader_id == fresh.entries[i].reader_id);
    CHECK(resumed.entries[i].post_id == fresh.entries[i].post_id);
    CHECK(resumed.entries[i].raw == fresh.entries[i].raw);
  }
  CHECK(mock2.calls() < calls_for_full);  // skipped the checkpointed half
}

TEST_CASE("behavior report layout and totals") {
  FeedbackLedger ledger;
  for (int i = 0; i < 5; ++i)
    ledger.entries.push_back({"u", "p" + std::to_string(i), 0, Behavior::Repost,
                              Emotion::Happy, "", ""});
  for (int i = 0; i < 3; ++i)
    ledger.entries.push_back({"u", "q" + std::to_string(i), 0, Behavior::RepostWithComment,
                              Emotion::Sad, "c", ""});
  ledger.entries.push_back({"u", "r0", 0, Behavior::NoRepost, std::nullopt, "", ""});

  std::string report = behavior_report(ledger, 9, "mock-chat in demo");
  CHECK(report.find("top-k") != std::string::npos);
  CHECK(report.find("Agent in datasets") != std::string::npos);
  CHECK(report.find("Reposting with a comment") != std::string::npos);
  CHECK(report.find("No repost") != std::string::npos);
  CHECK(report.find("Total") != std::string::npos);
  CHECK(report.find("mock-chat in demo") != std::string::npos);

  // the data row ends with the entry total
  auto last_line_start = report.find_last_of('\n', report.size() - 2);
  std::string row = report.substr(last_line_start + 1);
  CHECK(row.find("9") != std::string::npos);  // total and k
  CHECK(row.find("5") != std::string::npos);
  CHECK(row.find("3") != std::string::npos);
}
