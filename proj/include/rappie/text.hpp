#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace rappie {

// Whitespace tokens when the text contains any ASCII whitespace, otherwise
// codepoint bigrams (covers unsegmented CJK text); a single codepoint is its
// own token.
std::vector<std::string> tokenize(std::string_view text);

std::size_t token_count(std::string_view text);

}  // namespace rappie
