#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include "rappie/errors.hpp"
#include "rappie/text.hpp"
#include "rappie/util.hpp"

using namespace rappie;

TEST_CASE("fnv1a64 matches published vectors") {
  CHECK(fnv1a64("") == 0xcbf29ce484222325ULL);
  CHECK(fnv1a64("a") == 0xaf63dc4c8601ec8cULL);
  CHECK(fnv1a64("foobar") == 0x85944171f73967e8ULL);
}

TEST_CASE("sha256 matches published vectors") {
  CHECK(sha256_hex("") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("rng streams are deterministic and well ranged") {
  Rng a(42), b(42), c(43);
  std::vector<std::uint64_t> xs, ys;
  for (int i = 0; i < 100; ++i) {
    xs.push_back(a.next());
    ys.push_back(b.next());
  }
  CHECK(xs == ys);
  CHECK(xs[0] != c.next());

  Rng r(7);
  for (int i = 0; i < 1000; ++i) {
    double u = r.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    double s = r.symmetric();
    CHECK(s >= -1.0);
    CHECK(s < 1.0);
    CHECK(r.below(10) < 10);
  }
  CHECK(r.below(0) == 0);
}

TEST_CASE("shuffle permutes in place") {
  std::vector<int> v(50);
  for (int i = 0; i < 50; ++i) v[i] = i;
  std::vector<int> orig = v;
  Rng r(5);
  r.shuffle(v);
  CHECK(v != orig);  // 50! orderings; seed 5 does move something
  std::sort(v.begin(), v.end());
  CHECK(v == orig);
}

TEST_CASE("mix64 depends on argument order") {
  CHECK(mix64(1, 2) != mix64(2, 1));
  CHECK(mix64(1, 2) == mix64(1, 2));
}

TEST_CASE("utf8_chunks splits codepoints and passes invalid bytes through") {
  auto chunks = utf8_chunks("a\xce\xb2z");  // a, beta, z
  REQUIRE(chunks.size() == 3);
  CHECK(chunks[0] == "a");
  CHECK(chunks[1] == "\xce\xb2");
  CHECK(chunks[2] == "z");

  auto bad = utf8_chunks("\xff\xfe");
  REQUIRE(bad.size() == 2);
  CHECK(bad[0] == "\xff");

  CHECK(utf8_chunks("").empty());
}

TEST_CASE("ascii helpers") {
  CHECK(lowercase_ascii("MiXeD 123") == "mixed 123");
  CHECK(trim("  x y\t\n") == "x y");
  CHECK(trim("") == "");
  CHECK(trim("   ") == "");
}

TEST_CASE("atomic write round trip") {
  namespace fs = std::filesystem;
  fs::path dir = fs::temp_directory_path() / "rappie_util_test";
  fs::create_directories(dir);
  std::string path = (dir / "blob.bin").string();
  std::string payload = "line1\nline2\0binary";
  write_file_atomic(path, payload);
  CHECK(read_file(path) == payload);
  write_file_atomic(path, "replaced");
  CHECK(read_file(path) == "replaced");
  CHECK_THROWS_AS((void)read_file((dir / "missing").string()), MissingArtifact);
  fs::remove_all(dir);
}

TEST_CASE("tokenize uses whitespace when present, bigrams otherwise") {
  CHECK(tokenize("hello world  again") == std::vector<std::string>{"hello", "world", "again"});
  // four CJK codepoints, no whitespace: three overlapping bigrams
  auto cjk = tokenize("\xe4\xb8\xad\xe6\x96\x87\xe5\x88\x86\xe6\x9e\x90");
  REQUIRE(cjk.size() == 3);
  CHECK(cjk[0] == "\xe4\xb8\xad\xe6\x96\x87");
  // single codepoint is its own token
  CHECK(tokenize("\xe4\xb8\xad") == std::vector<std::string>{"\xe4\xb8\xad"});
  CHECK(token_count("a b c") == 3);
  CHECK(token_count("") == 0);
}
