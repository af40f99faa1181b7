#include "rappie/agents.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <memory>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "rappie/errors.hpp"
#include "rappie/text.hpp"
#include "rappie/util.hpp"

namespace rappie {

using nlohmann::json;

namespace {

const std::array<std::string, 3> kBehaviorNames = {"repost", "repost with comment", "no repost"};

std::string slot(const std::string& value) { return value.empty() ? "unknown" : value; }

// ---- term-weight scoring core ------------------------------------------
//
// Both the public ranking function and the bulk broadcast path feed this
// same core, with terms processed in lexicographic order, so rankings are
// reproducible bit for bit between the two.

struct TermTable {
  std::map<std::string, int> ids;  // lexicographic by construction
  std::vector<int> df;

  int intern(const std::string& term) {
    auto [it, fresh] = ids.emplace(term, static_cast<int>(ids.size()));
    if (fresh) df.push_back(0);
    return it->second;
  }
  int lookup(const std::string& term) const {
    auto it = ids.find(term);
    return it == ids.end() ? -1 : it->second;
  }
};

struct DocVec {
  std::vector<std::pair<int, double>> terms;  // (term id, raw count)
};

// Term counts of one text, interned; term ids in the doc follow the table's
// id order which is remapped to lexicographic rank before scoring.
DocVec count_terms(const std::string& text, TermTable& table) {
  std::map<std::string, double> counts;
  for (auto& t : tokenize(text)) counts[t] += 1.0;
  DocVec d;
  d.terms.reserve(counts.size());
  for (const auto& [term, c] : counts) d.terms.emplace_back(table.intern(term), c);
  return d;
}

double idf_value(std::size_t n_docs, int df) {
  return std::log((1.0 + static_cast<double>(n_docs)) / (1.0 + static_cast<double>(df))) + 1.0;
}

// Lexicographic rank of every interned term (ids are assigned in first-use
// order; the map itself is ordered, so enumerate it).
std::vector<int> lex_rank(const TermTable& table) {
  std::vector<int> rank(table.ids.size());
  int r = 0;
  for (const auto& [term, id] : table.ids) rank[static_cast<std::size_t>(id)] = r++;
  return rank;
}

void sort_by_rank(DocVec& d, const std::vector<int>& rank) {
  std::sort(d.terms.begin(), d.terms.end(), [&](const auto& a, const auto& b) {
    return rank[static_cast<std::size_t>(a.first)] < rank[static_cast<std::size_t>(b.first)];
  });
}

double norm_of(const DocVec& d, const std::vector<double>& idf) {
  double ss = 0.0;
  for (const auto& [id, c] : d.terms) {
    double w = c * idf[static_cast<std::size_t>(id)];
    ss += w * w;
  }
  return std::sqrt(ss);
}

// Dot product of the L2-normalized weight vectors; both inputs must already
// be in lexicographic term order.
double normalized_dot(const DocVec& q, double qnorm, const DocVec& d, double dnorm,
                      const std::vector<double>& idf, const std::vector<int>& rank) {
  if (qnorm <= 0.0 || dnorm <= 0.0) return 0.0;
  double dot = 0.0;
  std::size_t i = 0, j = 0;
  while (i < q.terms.size() && j < d.terms.size()) {
    int ri = rank[static_cast<std::size_t>(q.terms[i].first)];
    int rj = rank[static_cast<std::size_t>(d.terms[j].first)];
    if (ri < rj)
      ++i;
    else if (rj < ri)
      ++j;
    else {
      double qw = q.terms[i].second * idf[static_cast<std::size_t>(q.terms[i].first)] / qnorm;
      double dw = d.terms[j].second * idf[static_cast<std::size_t>(d.terms[j].first)] / dnorm;
      dot += qw * dw;
      ++i, ++j;
    }
  }
  return dot;
}

DocVec query_from_history(const std::vector<std::string>& history, TermTable& table) {
  std::map<std::string, double> counts;
  for (const auto& text : history)
    for (auto& t : tokenize(text)) counts[t] += 1.0;
  DocVec q;
  q.terms.reserve(counts.size());
  for (const auto& [term, c] : counts) q.terms.emplace_back(table.intern(term), c);
  return q;
}

std::vector<std::size_t> rank_candidates(const DocVec& query,
                                         const std::vector<DocVec>& docs,
                                         const std::vector<std::string>& doc_ids,
                                         const std::vector<double>& idf,
                                         const std::vector<int>& rank, std::size_t k) {
  double qnorm = norm_of(query, idf);
  std::vector<std::pair<double, std::size_t>> scored;
  scored.reserve(docs.size());
  for (std::size_t d = 0; d < docs.size(); ++d)
    scored.emplace_back(normalized_dot(query, qnorm, docs[d], norm_of(docs[d], idf), idf, rank), d);
  std::sort(scored.begin(), scored.end(), [&](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return doc_ids[a.second] < doc_ids[b.second];
  });
  std::vector<std::size_t> out;
  out.reserve(std::min(k, scored.size()));
  for (std::size_t i = 0; i < scored.size() && i < k; ++i) out.push_back(scored[i].second);
  return out;
}

}  // namespace

const std::string& behavior_name(Behavior b) {
  return kBehaviorNames[static_cast<std::size_t>(b)];
}

AgentPrompt build_agent_prompt(const UserProfile& reader,
                               const std::vector<std::string>& history_texts,
                               const std::string& post_id, const std::string& post_text) {
  std::ostringstream p;
  p << "You are a social media user. Your gender is " << slot(reader.gender)
    << ", your region is " << slot(reader.region) << ", and your personalized tag is "
    << slot(reader.tag) << ".\n";
  p << "Your historical posts are: ";
  for (std::size_t i = 0; i < history_texts.size(); ++i) {
    if (i) p << kHistorySeparator;
    p << history_texts[i];
  }
  p << "\n";
  p << "Now you read the following post: " << post_text << "\n";
  p << "Decide whether you repost it and reply exactly in this format:\n";
  p << "Behavior: repost | repost with comment | no repost\n";
  p << "Emotion: Happy | Anger | Sad | Disgust | Fear | Surprise | Neutral\n";
  p << "Comment: your comment, left empty unless reposting with a comment\n";
  return AgentPrompt{reader.user_id, post_id, p.str()};
}

std::vector<std::string> select_topk_posts(
    const std::vector<std::string>& reader_history,
    const std::vector<std::pair<std::string, std::string>>& candidates, std::size_t k) {
  if (reader_history.empty()) throw EmptyHistory("reader history is empty");
  TermTable table;
  std::vector<DocVec> docs;
  std::vector<std::string> ids;
  docs.reserve(candidates.size());
  ids.reserve(candidates.size());
  std::set<std::string> seen;
  for (const auto& [id, text] : candidates) {
    if (!seen.insert(id).second) throw DuplicateId(id, "top-k candidates");
    docs.push_back(count_terms(text, table));
    ids.push_back(id);
  }
  for (const auto& d : docs)
    for (const auto& [id, c] : d.terms) table.df[static_cast<std::size_t>(id)] += 1;
  DocVec query = query_from_history(reader_history, table);

  std::vector<int> rank = lex_rank(table);
  for (auto& d : docs) sort_by_rank(d, rank);
  sort_by_rank(query, rank);
  std::vector<double> idf(table.df.size());
  for (std::size_t t = 0; t < table.df.size(); ++t) idf[t] = idf_value(docs.size(), table.df[t]);

  std::vector<std::string> out;
  for (std::size_t d : rank_candidates(query, docs, ids, idf, rank, k)) out.push_back(ids[d]);
  return out;
}

ParsedFeedback parse_feedback(const std::string& raw) {
  ParsedFeedback f;
  std::optional<std::string> behavior_text;
  std::optional<std::string> comment_text;
  std::istringstream in(raw);
  std::string line;
  while (std::getline(in, line)) {
    std::string t = trim(line);
    std::string low = lowercase_ascii(t);
    if (!behavior_text && low.rfind("behavior:", 0) == 0) {
      behavior_text = trim(t.substr(9));
    } else if (!f.emotion && low.rfind("emotion:", 0) == 0) {
      f.emotion = parse_emotion(t.substr(8));
    } else if (!comment_text && low.rfind("comment:", 0) == 0) {
      comment_text = trim(t.substr(8));
    }
  }
  if (behavior_text) {
    std::string b = lowercase_ascii(*behavior_text);
    while (!b.empty() && (b.back() == '.' || b.back() == '!')) b.pop_back();
    if (b.find("quote") != std::string::npos)
      f.behavior = Behavior::RepostWithComment;
    else if (b.find("no") != std::string::npos)
      f.behavior = Behavior::NoRepost;
    else if (b.find("comment") != std::string::npos)
      f.behavior = Behavior::RepostWithComment;
    else if (b.find("repost") != std::string::npos)
      f.behavior = Behavior::Repost;
    else
      f.behavior = Behavior::NoRepost;
  }
  if (f.behavior == Behavior::RepostWithComment && comment_text) f.comment = *comment_text;
  if (f.behavior == Behavior::RepostWithComment && f.comment.empty())
    f.behavior = Behavior::Repost;
  if (f.behavior != Behavior::RepostWithComment) f.comment.clear();
  return f;
}

SimulatedFeedback simulate_feedback(ChatBackend& backend, const UserProfile& reader,
                                    const std::vector<std::string>& history_texts,
                                    const Post& post, std::uint64_t seed) {
  AgentPrompt prompt = build_agent_prompt(reader, history_texts, post.post_id, post.text);
  std::string raw = chat_generate(backend, prompt.rendered, seed);
  ParsedFeedback parsed = parse_feedback(raw);
  SimulatedFeedback out;
  out.reader_id = reader.user_id;
  out.post_id = post.post_id;
  out.behavior = parsed.behavior;
  out.emotion = parsed.emotion;
  out.comment = parsed.comment;
  out.raw = raw;
  return out;
}

std::size_t FeedbackLedger::count(Behavior b) const {
  std::size_t n = 0;
  for (const auto& e : entries)
    if (e.behavior == b) ++n;
  return n;
}

void FeedbackLedger::save(const std::string& path) const {
  std::ostringstream out;
  for (const auto& e : entries) {
    json j{{"reader_id", e.reader_id}, {"post_id", e.post_id}, {"rank", e.rank},
           {"behavior", behavior_name(e.behavior)}, {"comment", e.comment},
           {"raw", e.raw}};
    if (e.emotion) j["emotion"] = emotion_name(*e.emotion);
    out << j.dump() << '\n';
  }
  write_file_atomic(path, out.str());
}

FeedbackLedger FeedbackLedger::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw MissingArtifact("cannot open '" + path + "'");
  FeedbackLedger ledger;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object()) throw MalformedRecord(line_no, "not a JSON object");
    SimulatedFeedback e;
    try {
      e.reader_id = j.at("reader_id").get<std::string>();
      e.post_id = j.at("post_id").get<std::string>();
      std::string b = j.at("behavior").get<std::string>();
      bool known = false;
      for (std::size_t i = 0; i < kBehaviorNames.size(); ++i)
        if (b == kBehaviorNames[i]) {
          e.behavior = static_cast<Behavior>(i);
          known = true;
        }
      if (!known) throw MalformedRecord(line_no, "unknown behavior '" + b + "'");
      e.rank = j.value("rank", std::size_t{0});
      e.comment = j.value("comment", "");
      e.raw = j.value("raw", "");
      if (auto it = j.find("emotion"); it != j.end() && !it->is_null()) {
        e.emotion = parse_emotion(it->get<std::string>());
        if (!e.emotion) throw MalformedRecord(line_no, "unknown emotion");
      }
    } catch (const json::exception& ex) {
      throw MalformedRecord(line_no, ex.what());
    }
    ledger.entries.push_back(std::move(e));
  }
  return ledger;
}

FeedbackLedger run_broadcast(const Corpus& corpus, ChatBackend& backend,
                             const BroadcastOptions& opts) {
  // Shared candidate material: training posts in ascending post_id order.
  std::vector<std::string> train_ids = corpus.post_ids_in_split(Split::Train);
  TermTable table;
  std::vector<DocVec> all_docs;
  std::vector<std::string> all_doc_authors;
  all_docs.reserve(train_ids.size());
  for (const auto& id : train_ids) {
    const Post& p = corpus.posts.at(id);
    all_docs.push_back(count_terms(p.text, table));
    all_doc_authors.push_back(p.author_id);
  }
  std::vector<int> global_df(table.df.size(), 0);
  for (const auto& d : all_docs)
    for (const auto& [id, c] : d.terms) global_df[static_cast<std::size_t>(id)] += 1;

  // History texts usable for prompts and ranking: not held out in
  // validate/test. Unlabeled posts are never held out.
  auto usable_history = [&](const UserProfile& u) {
    std::vector<std::string> texts;
    for (const auto& pid : u.history) {
      auto split = corpus.split_of(pid);
      if (split && *split != Split::Train) continue;
      texts.push_back(corpus.posts.at(pid).text);
    }
    return texts;
  };

  struct Task {
    const UserProfile* reader;
    std::string post_id;
    std::size_t rank;
    std::vector<std::string> prompt_history;
    std::uint64_t seed;
  };

  std::set<std::pair<std::string, std::string>> done;
  FeedbackLedger ledger;
  if (opts.resume && !opts.checkpoint_path.empty() &&
      std::filesystem::exists(opts.checkpoint_path)) {
    ledger = FeedbackLedger::load(opts.checkpoint_path);
    if (opts.overwrite) {
      ledger.entries.clear();
    } else {
      for (const auto& e : ledger.entries) done.emplace(e.reader_id, e.post_id);
    }
  }

  std::vector<Task> tasks;
  std::vector<int> rank = lex_rank(table);
  for (auto& d : all_docs) sort_by_rank(d, rank);

  for (const auto& user_id : corpus.sorted_user_ids()) {
    const UserProfile& reader = corpus.users.at(user_id);

    std::vector<DocVec> docs;
    std::vector<std::string> ids;
    std::vector<int> df = global_df;
    for (std::size_t d = 0; d < all_docs.size(); ++d) {
      if (all_doc_authors[d] == user_id) {
        for (const auto& [tid, c] : all_docs[d].terms) df[static_cast<std::size_t>(tid)] -= 1;
        continue;
      }
      docs.push_back(all_docs[d]);
      ids.push_back(train_ids[d]);
    }
    if (docs.empty()) continue;

    std::vector<std::string> history = usable_history(reader);
    std::vector<std::string> ranking_history = history;
    if (ranking_history.empty()) {
      // Fall back to the reader's own training posts, then to a zero query
      // that degrades the ranking to ascending post_id.
      for (std::size_t d = 0; d < all_docs.size(); ++d)
        if (all_doc_authors[d] == user_id)
          ranking_history.push_back(corpus.posts.at(train_ids[d]).text);
      if (ranking_history.empty()) ranking_history.push_back("");
    }

    DocVec query = query_from_history(ranking_history, table);
    sort_by_rank(query, rank);
    std::vector<double> idf(table.df.size());
    for (std::size_t t = 0; t < table.df.size(); ++t)
      idf[t] = idf_value(docs.size(), df[t]);

    std::vector<std::string> prompt_history = history;
    if (prompt_history.size() > opts.history_in_prompt)
      prompt_history.erase(prompt_history.begin(),
                           prompt_history.end() - static_cast<std::ptrdiff_t>(opts.history_in_prompt));
    if (prompt_history.empty()) prompt_history.push_back("");

    std::size_t position = 0;
    for (std::size_t d : rank_candidates(query, docs, ids, idf, rank, opts.k)) {
      const std::string& pid = ids[d];
      std::size_t this_rank = position++;
      if (done.count({user_id, pid})) continue;
      tasks.push_back(Task{&reader, pid, this_rank, prompt_history,
                           mix64(opts.seed, mix64(fnv1a64(user_id), fnv1a64(pid)))});
    }
  }

  std::vector<SimulatedFeedback> results(tasks.size());
  std::unique_ptr<std::atomic<char>[]> filled(new std::atomic<char>[tasks.size()]);
  for (std::size_t i = 0; i < tasks.size(); ++i) filled[i].store(0, std::memory_order_relaxed);
  std::atomic<std::size_t> next{0};
  std::atomic<std::size_t> completed{0};
  std::atomic<std::size_t> last_checkpoint{0};
  std::atomic<bool> failed{false};
  std::mutex error_mutex;
  std::exception_ptr first_error;
  std::mutex checkpoint_mutex;

  auto maybe_checkpoint = [&](bool force) {
    if (opts.checkpoint_path.empty()) return;
    if (!force && opts.checkpoint_every == 0) return;
    std::lock_guard<std::mutex> lock(checkpoint_mutex);
    std::size_t done_now = completed.load();
    if (!force && done_now < last_checkpoint.load() + opts.checkpoint_every) return;
    FeedbackLedger snapshot = ledger;
    for (std::size_t i = 0; i < results.size(); ++i)
      if (filled[i].load(std::memory_order_acquire)) snapshot.entries.push_back(results[i]);
    std::sort(snapshot.entries.begin(), snapshot.entries.end(), [](const auto& a, const auto& b) {
      return std::tie(a.reader_id, a.post_id) < std::tie(b.reader_id, b.post_id);
    });
    snapshot.save(opts.checkpoint_path);
    last_checkpoint.store(done_now);
  };

  auto worker = [&] {
    while (!failed.load()) {
      std::size_t i = next.fetch_add(1);
      if (i >= tasks.size()) return;
      const Task& task = tasks[i];
      try {
        results[i] = simulate_feedback(backend, *task.reader, task.prompt_history,
                                       corpus.posts.at(task.post_id), task.seed);
        results[i].rank = task.rank;
        filled[i].store(1, std::memory_order_release);
        completed.fetch_add(1);
        maybe_checkpoint(false);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!first_error) first_error = std::current_exception();
        failed.store(true);
        return;
      }
    }
  };

  std::size_t n_threads = std::max<std::size_t>(1, opts.max_inflight);
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t i = 0; i < n_threads; ++i) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }

  if (first_error) {
    maybe_checkpoint(true);
    std::rethrow_exception(first_error);
  }

  for (std::size_t i = 0; i < results.size(); ++i)
    if (filled[i].load(std::memory_order_acquire)) ledger.entries.push_back(std::move(results[i]));
  std::sort(ledger.entries.begin(), ledger.entries.end(), [](const auto& a, const auto& b) {
    return std::tie(a.reader_id, a.post_id) < std::tie(b.reader_id, b.post_id);
  });
  if (!opts.checkpoint_path.empty()) ledger.save(opts.checkpoint_path);
  return ledger;
}

std::string behavior_report(const FeedbackLedger& ledger, std::size_t k, const std::string& tag) {
  std::ostringstream out;
  std::size_t agent_w = std::max<std::size_t>(tag.size(), 17) + 2;
  out << std::left << std::setw(7) << "top-k" << std::setw(static_cast<int>(agent_w))
      << "Agent in datasets" << std::setw(11) << "Reposting" << std::setw(26)
      << "Reposting with a comment" << std::setw(11) << "No repost" << "Total\n";
  out << std::left << std::setw(7) << k << std::setw(static_cast<int>(agent_w)) << tag
      << std::setw(11) << ledger.count(Behavior::Repost) << std::setw(26)
      << ledger.count(Behavior::RepostWithComment) << std::setw(11)
      << ledger.count(Behavior::NoRepost) << ledger.entries.size() << '\n';
  return out.str();
}

}  // namespace rappie
