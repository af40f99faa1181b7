#include <cstdint>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "rappie/corpus.hpp"
#include "rappie/errors.hpp"
#include "rappie/generators.hpp"

// Emits a synthetic corpus (posts.jsonl, users.jsonl, follows.txt) into a
// directory. "planted" hides the class signal in reader feedback; "weibo"
// and "twitter" reproduce the per-class split counts of the reference
// dataset-statistics table at full scale.
int main(int argc, char** argv) {
  CLI::App app{"synthetic corpus generator"};

  std::string kind = "planted";
  std::string out_dir = "data/generated";
  std::size_t posts_per_class = 40;
  std::size_t authors_per_class = 4;
  std::size_t extra_readers = 2;
  std::size_t validate_per_class = 4;
  std::size_t test_per_class = 4;
  std::size_t copies_per_reader = 5;
  std::uint64_t seed = 1;

  app.add_option("--kind", kind, "planted | weibo | twitter")
      ->check(CLI::IsMember({"planted", "weibo", "twitter"}));
  app.add_option("--out", out_dir, "directory for posts.jsonl/users.jsonl/follows.txt");
  app.add_option("--posts-per-class", posts_per_class, "labeled posts per emotion (planted)");
  app.add_option("--authors-per-class", authors_per_class, "authors per emotion (planted)");
  app.add_option("--extra-readers", extra_readers, "readers with no labeled posts (planted)");
  app.add_option("--validate-per-class", validate_per_class, "validation posts per emotion");
  app.add_option("--test-per-class", test_per_class, "test posts per emotion");
  app.add_option("--copies-per-reader", copies_per_reader, "history length per reader (planted)");
  app.add_option("--seed", seed, "generator seed (shaped corpora)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    rappie::Corpus corpus;
    if (kind == "planted") {
      rappie::PlantedOptions opts;
      opts.posts_per_class = posts_per_class;
      opts.authors_per_class = authors_per_class;
      opts.extra_readers = extra_readers;
      opts.validate_per_class = validate_per_class;
      opts.test_per_class = test_per_class;
      opts.copies_per_reader = copies_per_reader;
      corpus = rappie::make_planted_corpus(opts);
    } else {
      rappie::ShapedSpec spec =
          kind == "weibo" ? rappie::ShapedSpec::weibo() : rappie::ShapedSpec::twitter();
      spec.seed = seed;
      corpus = rappie::make_shaped_corpus(spec);
    }
    rappie::save_corpus(corpus, out_dir + "/posts.jsonl", out_dir + "/users.jsonl",
                        out_dir + "/follows.txt");
    std::cout << "wrote " << corpus.posts.size() << " posts, " << corpus.users.size()
              << " users, " << corpus.follows.size() << " follow edges to " << out_dir << "\n";
    return 0;
  } catch (const rappie::UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
