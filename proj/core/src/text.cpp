#include "recindial/text.hpp"

#include <cctype>

namespace recindial {
namespace {

bool is_split_punct(char c) {
    switch (c) {
        case '.': case ',': case '!': case '?': case ';': case ':':
        case '"': case '(': case ')':
            return true;
        default:
            return false;
    }
}

}  // namespace

std::string to_lower(std::string_view s) {
    std::string out(s);
    for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return out;
}

std::vector<std::string> tokenize_text(std::string_view text) {
    std::vector<std::string> out;
    std::string cur;
    auto flush = [&] {
        if (!cur.empty()) out.push_back(std::move(cur));
        cur.clear();
    };
    for (char c : text) {
        const auto uc = static_cast<unsigned char>(c);
        if (std::isspace(uc)) {
            flush();
        } else if (is_split_punct(c)) {
            flush();
            out.emplace_back(1, c);
        } else {
            cur.push_back(static_cast<char>(std::tolower(uc)));
        }
    }
    flush();
    return out;
}

bool is_punctuation_token(std::string_view word) {
    return word.size() == 1 && is_split_punct(word[0]) && word[0] != '(' && word[0] != '"';
}

std::string join_words(const std::vector<std::string>& words) {
    std::string out;
    for (const auto& w : words) {
        if (!out.empty() && !is_punctuation_token(w)) out.push_back(' ');
        out += w;
    }
    return out;
}

std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t seed) {
    std::uint64_t h = seed;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

}  // namespace recindial
