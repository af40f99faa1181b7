#include "rappie/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <nlohmann/json.hpp>

#include "rappie/errors.hpp"
#include "rappie/util.hpp"

namespace rappie {

using nlohmann::json;

namespace {

const std::array<std::string, 7> kEmotionNames = {"Happy",    "Anger", "Sad",    "Disgust",
                                                  "Fear",     "Surprise", "Neutral"};
const std::array<std::string, 3> kSplitNames = {"train", "validate", "test"};

json parse_line(const std::string& line, std::size_t line_no) {
  json j = json::parse(line, nullptr, false);
  if (j.is_discarded() || !j.is_object())
    throw MalformedRecord(line_no, "not a JSON object");
  return j;
}

std::string require_string(const json& j, const char* key, std::size_t line_no) {
  auto it = j.find(key);
  if (it == j.end() || !it->is_string() || it->get<std::string>().empty())
    throw MalformedRecord(line_no, std::string("missing or empty '") + key + "'");
  return it->get<std::string>();
}

template <typename Fn>
void for_each_jsonl(const std::string& path, Fn&& fn) {
  std::ifstream in(path);
  if (!in) throw MissingArtifact("cannot open '" + path + "'");
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    fn(parse_line(line, line_no), line_no);
  }
}

Post post_from_json(const json& j, std::size_t line_no) {
  Post p;
  p.post_id = require_string(j, "post_id", line_no);
  p.author_id = require_string(j, "author_id", line_no);
  auto text_it = j.find("text");
  if (text_it == j.end() || !text_it->is_string())
    throw MalformedRecord(line_no, "missing 'text'");
  p.text = text_it->get<std::string>();
  if (auto it = j.find("emotion"); it != j.end() && !it->is_null()) {
    if (!it->is_string()) throw MalformedRecord(line_no, "non-string 'emotion'");
    auto e = parse_emotion(it->get<std::string>());
    if (!e) throw MalformedRecord(line_no, "unknown emotion '" + it->get<std::string>() + "'");
    p.emotion = *e;
  }
  p.is_augmented = j.value("is_augmented", false);
  return p;
}

// Optional pre-assigned split; absent keys leave the corpus unsplit.
std::optional<Split> split_from_json(const json& j, std::size_t line_no) {
  auto it = j.find("split");
  if (it == j.end() || it->is_null()) return std::nullopt;
  if (!it->is_string()) throw MalformedRecord(line_no, "non-string 'split'");
  const std::string& name = it->get_ref<const std::string&>();
  for (std::size_t i = 0; i < kSplitNames.size(); ++i)
    if (name == kSplitNames[i]) return static_cast<Split>(i);
  throw MalformedRecord(line_no, "unknown split '" + name + "'");
}

}  // namespace

const std::string& emotion_name(Emotion e) { return kEmotionNames[static_cast<std::size_t>(e)]; }

std::optional<Emotion> parse_emotion(std::string_view name) {
  std::string low = lowercase_ascii(trim(name));
  for (std::size_t i = 0; i < kEmotionNames.size(); ++i)
    if (low == lowercase_ascii(kEmotionNames[i])) return kEmotions[i];
  return std::nullopt;
}

const std::string& split_name(Split s) { return kSplitNames[static_cast<std::size_t>(s)]; }

std::optional<Split> Corpus::split_of(const std::string& post_id) const {
  auto it = splits.find(post_id);
  if (it == splits.end()) return std::nullopt;
  return it->second;
}

std::vector<std::string> Corpus::post_ids_in_split(Split s) const {
  std::vector<std::string> out;
  for (const auto& [id, sp] : splits)
    if (sp == s) out.push_back(id);
  return out;
}

std::vector<std::string> Corpus::sorted_user_ids() const {
  std::vector<std::string> out;
  out.reserve(users.size());
  for (const auto& [id, u] : users) out.push_back(id);
  return out;
}

Corpus load_corpus(const std::string& posts_path, const std::string& users_path,
                   const std::string& follows_path) {
  Corpus c;
  for_each_jsonl(posts_path, [&](const json& j, std::size_t line_no) {
    Post p = post_from_json(j, line_no);
    if (c.posts.count(p.post_id)) throw DuplicateId(p.post_id, "posts");
    if (auto split = split_from_json(j, line_no)) {
      if (!p.emotion) throw MalformedRecord(line_no, "split assigned to an unlabeled post");
      c.splits[p.post_id] = *split;
    }
    c.posts.emplace(p.post_id, std::move(p));
  });
  for_each_jsonl(users_path, [&](const json& j, std::size_t line_no) {
    UserProfile u;
    u.user_id = require_string(j, "user_id", line_no);
    u.gender = j.value("gender", "");
    u.region = j.value("region", "");
    u.tag = j.value("tag", "");
    if (auto it = j.find("history"); it != j.end()) {
      if (!it->is_array()) throw MalformedRecord(line_no, "'history' must be an array");
      for (const auto& h : *it) {
        if (!h.is_string()) throw MalformedRecord(line_no, "non-string history entry");
        u.history.push_back(h.get<std::string>());
      }
    }
    if (c.users.count(u.user_id)) throw DuplicateId(u.user_id, "users");
    c.users.emplace(u.user_id, std::move(u));
  });
  if (!follows_path.empty()) {
    for_each_jsonl(follows_path, [&](const json& j, std::size_t line_no) {
      std::string a = require_string(j, "follower_id", line_no);
      std::string b = require_string(j, "followee_id", line_no);
      c.follows.emplace(a, b);
    });
  }
  for (const auto& [id, p] : c.posts)
    if (!c.users.count(p.author_id)) throw DanglingReference(p.author_id, "post " + id);
  for (const auto& [id, u] : c.users)
    for (const auto& h : u.history)
      if (!c.posts.count(h)) throw DanglingReference(h, "history of " + id);
  for (const auto& [a, b] : c.follows) {
    if (!c.users.count(a)) throw DanglingReference(a, "follows");
    if (!c.users.count(b)) throw DanglingReference(b, "follows");
  }
  return c;
}

void save_corpus(const Corpus& corpus, const std::string& posts_path,
                 const std::string& users_path, const std::string& follows_path) {
  std::ostringstream posts;
  for (const auto& [id, p] : corpus.posts) {
    json j{{"post_id", p.post_id}, {"author_id", p.author_id}, {"text", p.text}};
    if (p.emotion) j["emotion"] = emotion_name(*p.emotion);
    if (p.is_augmented) j["is_augmented"] = true;
    if (auto it = corpus.splits.find(id); it != corpus.splits.end())
      j["split"] = split_name(it->second);
    posts << j.dump() << '\n';
  }
  write_file_atomic(posts_path, posts.str());

  std::ostringstream users;
  for (const auto& [id, u] : corpus.users) {
    json j{{"user_id", u.user_id},
           {"gender", u.gender},
           {"region", u.region},
           {"tag", u.tag},
           {"history", u.history}};
    users << j.dump() << '\n';
  }
  write_file_atomic(users_path, users.str());

  if (!follows_path.empty()) {
    std::ostringstream follows;
    for (const auto& [a, b] : corpus.follows) {
      follows << json{{"follower_id", a}, {"followee_id", b}}.dump() << '\n';
    }
    write_file_atomic(follows_path, follows.str());
  }
}

void split_dataset(Corpus& corpus, const std::array<double, 3>& ratios, std::uint64_t seed) {
  double sum = ratios[0] + ratios[1] + ratios[2];
  if (std::abs(sum - 1.0) > 1e-9 || ratios[0] < 0 || ratios[1] < 0 || ratios[2] < 0)
    throw BadRatios("split ratios must be nonnegative and sum to 1");
  corpus.splits.clear();
  for (std::size_t e = 0; e < kEmotionCount; ++e) {
    std::vector<std::string> ids;
    for (const auto& [id, p] : corpus.posts)
      if (!p.is_augmented && p.emotion && *p.emotion == kEmotions[e]) ids.push_back(id);
    std::sort(ids.begin(), ids.end());
    Rng rng(mix64(seed, e + 1));
    rng.shuffle(ids);
    std::size_t n = ids.size();
    std::size_t n_val = static_cast<std::size_t>(std::floor(static_cast<double>(n) * ratios[1]));
    std::size_t n_test = static_cast<std::size_t>(std::floor(static_cast<double>(n) * ratios[2]));
    for (std::size_t i = 0; i < n; ++i) {
      Split s = Split::Train;
      if (i < n_val)
        s = Split::Validate;
      else if (i < n_val + n_test)
        s = Split::Test;
      corpus.splits[ids[i]] = s;
    }
  }
  for (const auto& [id, p] : corpus.posts)
    if (p.is_augmented && p.emotion) corpus.splits[id] = Split::Train;
}

std::size_t merge_augmented(Corpus& corpus, const std::string& augmented_path,
                            const std::string& synthetic_author) {
  std::size_t merged = 0;
  for_each_jsonl(augmented_path, [&](const json& j, std::size_t line_no) {
    Post p = post_from_json(j, line_no);
    if (!p.emotion) throw MalformedRecord(line_no, "augmented post without emotion");
    p.is_augmented = true;
    if (corpus.posts.count(p.post_id)) throw DuplicateId(p.post_id, "augmented posts");
    if (!corpus.users.count(p.author_id)) {
      if (p.author_id != synthetic_author)
        throw DanglingReference(p.author_id, "augmented post " + p.post_id);
      UserProfile synthetic;
      synthetic.user_id = synthetic_author;
      corpus.users.emplace(synthetic_author, std::move(synthetic));
    }
    corpus.splits[p.post_id] = Split::Train;
    corpus.posts.emplace(p.post_id, std::move(p));
    ++merged;
  });
  return merged;
}

std::size_t StatsReport::split_total(Split s) const {
  std::size_t total = 0;
  for (const auto& row : counts) total += row[static_cast<std::size_t>(s)];
  return total;
}

StatsReport corpus_stats(const Corpus& corpus) {
  StatsReport r;
  r.total_posts = corpus.posts.size();
  r.user_count = corpus.users.size();
  r.follow_count = corpus.follows.size();
  for (const auto& [id, p] : corpus.posts) {
    if (!p.emotion) continue;
    ++r.labeled_posts;
    auto split = corpus.split_of(id);
    if (!split) continue;
    r.counts[static_cast<std::size_t>(*p.emotion)][static_cast<std::size_t>(*split)] += 1;
  }
  return r;
}

std::string StatsReport::render_text() const {
  std::ostringstream out;
  out << std::left << std::setw(10) << "Dataset";
  for (const auto& name : kEmotionNames) out << std::setw(10) << name;
  out << "Total\n";
  const char* row_names[3] = {"Train", "Validate", "Test"};
  for (std::size_t s = 0; s < 3; ++s) {
    out << std::left << std::setw(10) << row_names[s];
    std::size_t total = 0;
    for (std::size_t e = 0; e < kEmotionCount; ++e) {
      out << std::setw(10) << counts[e][s];
      total += counts[e][s];
    }
    out << total << '\n';
  }
  out << "# Posts " << total_posts << '\n';
  out << "# Users " << user_count << '\n';
  out << "# R_following " << follow_count << '\n';
  return out.str();
}

std::string StatsReport::to_json() const {
  json j;
  for (std::size_t e = 0; e < kEmotionCount; ++e) {
    json row;
    for (std::size_t s = 0; s < 3; ++s)
      row[kSplitNames[s]] = counts[e][s];
    j["emotions"][kEmotionNames[e]] = row;
  }
  j["total_posts"] = total_posts;
  j["labeled_posts"] = labeled_posts;
  j["users"] = user_count;
  j["follows"] = follow_count;
  return j.dump(2);
}

}  // namespace rappie
