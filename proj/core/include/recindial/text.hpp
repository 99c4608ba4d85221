#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace recindial {

/// Lowercases and splits on whitespace; sentence punctuation becomes its own token.
std::vector<std::string> tokenize_text(std::string_view text);

std::string to_lower(std::string_view s);

/// Joins words with single spaces, without a space before closing punctuation.
std::string join_words(const std::vector<std::string>& words);

bool is_punctuation_token(std::string_view word);

std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t seed = 1469598103934665603ULL);

}  // namespace recindial
