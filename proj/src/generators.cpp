#include "rappie/generators.hpp"

#include <algorithm>
#include <sstream>
#include <vector>

#include "rappie/errors.hpp"
#include "rappie/util.hpp"

namespace rappie {

namespace {

std::string pad_num(std::size_t value, int width) {
  std::string s = std::to_string(value);
  while (static_cast<int>(s.size()) < width) s.insert(s.begin(), '0');
  return s;
}

std::string filler_text(std::size_t count) {
  static const std::array<std::string, 8> kWords = {"alpha", "beta",    "gamma", "delta",
                                                    "epsilon", "zeta", "eta",   "theta"};
  std::ostringstream out;
  for (std::size_t i = 0; i < count; ++i) {
    out << ' ';
    if (i < kWords.size())
      out << kWords[i];
    else
      out << "fill" << i;
  }
  return out.str();
}

}  // namespace

Corpus make_planted_corpus(const PlantedOptions& opts) {
  const std::size_t n = opts.posts_per_class;
  const std::size_t a_count = opts.authors_per_class;
  if (a_count < 2 || a_count > 9) throw UsageError("authors_per_class must be in [2, 9]");
  if (opts.validate_per_class + opts.test_per_class >= n)
    throw UsageError("validate + test posts must leave room for training posts");
  const std::size_t train_n = n - opts.validate_per_class - opts.test_per_class;

  Corpus corpus;
  const std::string fillers = filler_text(opts.filler_tokens);

  auto author_id = [&](std::size_t c, std::size_t a) {
    return "u" + std::to_string(c) + std::to_string(a);
  };

  for (std::size_t c = 0; c < kEmotionCount; ++c) {
    for (std::size_t a = 0; a < a_count; ++a) {
      UserProfile u;
      u.user_id = author_id(c, a);
      u.gender = a % 2 == 0 ? "female" : "male";
      u.region = "region" + std::to_string(c);
      u.tag = "tag" + std::to_string(c);
      corpus.users[u.user_id] = u;
    }
  }
  for (std::size_t x = 0; x < opts.extra_readers; ++x) {
    UserProfile u;
    u.user_id = "ux" + std::to_string(x);
    u.gender = x % 2 == 0 ? "female" : "male";
    u.region = "regionx";
    u.tag = "tagx";
    corpus.users[u.user_id] = u;
  }

  for (std::size_t c = 0; c < kEmotionCount; ++c) {
    for (std::size_t i = 0; i < n; ++i) {
      Post p;
      p.post_id = "p" + std::to_string(c) + "_" + pad_num(i, 2);
      p.author_id = author_id(c, i % a_count);
      p.text = "w" + p.post_id + fillers;
      p.emotion = kEmotions[c];
      Split split = i < train_n                          ? Split::Train
                    : i < train_n + opts.validate_per_class ? Split::Validate
                                                            : Split::Test;
      corpus.splits[p.post_id] = split;
      corpus.posts[p.post_id] = std::move(p);
    }
  }

  // Histories: verbatim copies of classmates' training posts, authored by
  // the reader, so broadcast candidates never include them but top-k
  // similarity locks onto the originals.
  auto add_history = [&](const std::string& reader, const std::vector<std::string>& pool,
                         std::size_t offset) {
    if (pool.size() < opts.copies_per_reader)
      throw UsageError("not enough classmate posts to build reader histories");
    UserProfile& u = corpus.users.at(reader);
    for (std::size_t j = 0; j < opts.copies_per_reader; ++j) {
      const Post& src = corpus.posts.at(pool[(offset + j) % pool.size()]);
      Post copy;
      copy.post_id = "h" + reader + "_" + std::to_string(j);
      copy.author_id = reader;
      copy.text = src.text;
      u.history.push_back(copy.post_id);
      corpus.posts[copy.post_id] = std::move(copy);
    }
  };

  auto class_train_ids = [&](std::size_t c, const std::string& exclude_author) {
    std::vector<std::string> ids;
    for (std::size_t i = 0; i < train_n; ++i) {
      std::string pid = "p" + std::to_string(c) + "_" + pad_num(i, 2);
      if (corpus.posts.at(pid).author_id != exclude_author) ids.push_back(pid);
    }
    return ids;
  };

  for (std::size_t c = 0; c < kEmotionCount; ++c) {
    for (std::size_t a = 0; a < a_count; ++a) {
      add_history(author_id(c, a), class_train_ids(c, author_id(c, a)),
                  a * opts.copies_per_reader);
    }
  }
  const std::size_t neutral = kEmotionCount - 1;
  for (std::size_t x = 0; x < opts.extra_readers; ++x) {
    add_history("ux" + std::to_string(x), class_train_ids(neutral, ""),
                (a_count + x) * opts.copies_per_reader);
  }

  for (std::size_t c = 0; c < kEmotionCount; ++c)
    for (std::size_t a = 0; a < a_count; ++a)
      corpus.follows.emplace(author_id(c, a), author_id(c, (a + 1) % a_count));
  for (std::size_t x = 0; x < opts.extra_readers; ++x)
    corpus.follows.emplace("ux" + std::to_string(x), author_id(neutral, 0));

  return corpus;
}

std::size_t ShapedSpec::labeled() const {
  std::size_t sum = 0;
  for (const ShapedClassCounts& c : counts) sum += c.train + c.validate + c.test;
  return sum;
}

ShapedSpec ShapedSpec::weibo() {
  ShapedSpec s;
  s.tag = "weibo";
  s.counts = {{{1355, 192, 178},
               {451, 54, 65},
               {919, 107, 104},
               {360, 35, 45},
               {23, 10, 10},
               {198, 30, 23},
               {4188, 514, 517}}};
  s.total_posts = 12384;
  s.users = 3508;
  s.follows = 5927;
  return s;
}

ShapedSpec ShapedSpec::twitter() {
  ShapedSpec s;
  s.tag = "twitter";
  s.counts = {{{3920, 490, 490},
               {986, 123, 117},
               {1965, 245, 246},
               {1556, 194, 203},
               {530, 66, 65},
               {780, 98, 92},
               {1694, 212, 212}}};
  s.total_posts = 16856;
  s.users = 5676;
  s.follows = 0;
  return s;
}

Corpus make_shaped_corpus(const ShapedSpec& spec) {
  if (spec.users == 0) throw UsageError("shaped corpus needs at least one user");
  const std::size_t labeled = spec.labeled();
  if (spec.total_posts < labeled)
    throw UsageError("total_posts smaller than the labeled split counts");
  if (spec.follows > 0 && spec.users < 3)
    throw UsageError("follow edges need at least three users");

  Corpus corpus;
  const int uw = static_cast<int>(std::to_string(spec.users - 1).size());
  std::vector<std::string> user_ids;
  user_ids.reserve(spec.users);
  for (std::size_t i = 0; i < spec.users; ++i) {
    UserProfile u;
    u.user_id = "u" + spec.tag + pad_num(i, uw);
    u.gender = i % 2 == 0 ? "female" : "male";
    u.region = "r" + std::to_string(i % 30);
    u.tag = "t" + std::to_string(i % 50);
    user_ids.push_back(u.user_id);
    corpus.users[u.user_id] = std::move(u);
  }

  std::size_t serial = 0;
  for (std::size_t c = 0; c < kEmotionCount; ++c) {
    const ShapedClassCounts& cc = spec.counts[c];
    const std::array<std::pair<Split, std::size_t>, 3> parts = {
        {{Split::Train, cc.train}, {Split::Validate, cc.validate}, {Split::Test, cc.test}}};
    for (const auto& [split, count] : parts) {
      for (std::size_t i = 0; i < count; ++i, ++serial) {
        Post p;
        p.post_id = "p" + spec.tag + "_" + pad_num(serial, 6);
        p.author_id = user_ids[serial % spec.users];
        p.text = "note " + std::to_string(c) + " " + pad_num(serial, 6);
        p.emotion = kEmotions[c];
        corpus.splits[p.post_id] = split;
        corpus.posts[p.post_id] = std::move(p);
      }
    }
  }

  for (std::size_t i = labeled; i < spec.total_posts; ++i, ++serial) {
    Post p;
    p.post_id = "p" + spec.tag + "_" + pad_num(serial, 6);
    p.author_id = user_ids[serial % spec.users];
    p.text = "memo " + pad_num(serial, 6);
    corpus.users.at(p.author_id).history.push_back(p.post_id);
    corpus.posts[p.post_id] = std::move(p);
  }

  for (std::size_t i = 0; i < spec.follows; ++i) {
    std::size_t src = i % spec.users;
    std::size_t hop = 1 + (i / spec.users) % (spec.users - 1);
    corpus.follows.emplace(user_ids[src], user_ids[(src + hop) % spec.users]);
  }
  if (corpus.follows.size() != spec.follows)
    throw DataError("shaped corpus produced duplicate follow edges");

  return corpus;
}

}  // namespace rappie
