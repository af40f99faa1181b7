#include "rappie/text.hpp"

#include <cctype>

#include "rappie/util.hpp"

namespace rappie {

namespace {

bool has_ascii_space(std::string_view text) {
  for (char c : text)
    if (std::isspace(static_cast<unsigned char>(c))) return true;
  return false;
}

}  // namespace

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  if (has_ascii_space(text)) {
    std::string cur;
    for (char c : text) {
      if (std::isspace(static_cast<unsigned char>(c))) {
        if (!cur.empty()) {
          tokens.push_back(std::move(cur));
          cur.clear();
        }
      } else {
        cur.push_back(c);
      }
    }
    if (!cur.empty()) tokens.push_back(std::move(cur));
    return tokens;
  }
  auto chunks = utf8_chunks(text);
  if (chunks.empty()) return tokens;
  if (chunks.size() == 1) {
    tokens.push_back(chunks[0]);
    return tokens;
  }
  for (std::size_t i = 0; i + 1 < chunks.size(); ++i) tokens.push_back(chunks[i] + chunks[i + 1]);
  return tokens;
}

std::size_t token_count(std::string_view text) { return tokenize(text).size(); }

}  // namespace rappie
