#include "recindial/vocabulary.hpp"

#include <fstream>
#include <sstream>
#include <unordered_set>

#include "recindial/text.hpp"

namespace recindial {
namespace {

constexpr std::string_view kHeaderPrefix = "#recindial-vocab v1";

bool is_special(std::string_view t) {
    return t == kPadToken || t == kSepToken || t == kEosToken || t == kRecStartToken || t == kRecEndToken;
}

}  // namespace

std::string item_token_string(std::string_view item_id) {
    std::string s = "@";
    s += item_id;
    return s;
}

Vocabulary Vocabulary::build(std::span<const std::string> item_catalog,
                             std::span<const std::string> base_tokens) {
    Vocabulary v;
    v.tokens_ = {std::string(kPadToken), std::string(kSepToken), std::string(kEosToken),
                 std::string(kRecStartToken)};
    std::unordered_set<std::string> seen(v.tokens_.begin(), v.tokens_.end());
    for (const auto& t : base_tokens) {
        if (is_special(t)) throw std::invalid_argument("base token collides with a special token: " + t);
        if (!t.empty() && t.front() == '@') throw std::invalid_argument("base token uses the item prefix: " + t);
        if (!seen.insert(t).second) continue;
        v.tokens_.push_back(t);
    }
    v.item_start_ = v.tokens_.size();
    v.tokens_.emplace_back(kRecEndToken);
    std::unordered_set<std::string> items;
    for (const auto& id : item_catalog) {
        if (!items.insert(id).second) throw std::invalid_argument("duplicate item id: " + id);
        v.tokens_.push_back(item_token_string(id));
    }
    v.index();
    return v;
}

void Vocabulary::index() {
    by_string_.clear();
    for (std::size_t i = 0; i < tokens_.size(); ++i) by_string_.emplace(tokens_[i], static_cast<TokenId>(i));
    unk_.reset();
    if (auto it = by_string_.find(std::string(kUnkToken)); it != by_string_.end()) unk_ = it->second;
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open vocabulary file: " + path.string());
    std::string header;
    std::getline(in, header);
    if (header.rfind(kHeaderPrefix, 0) != 0) throw DataError("vocabulary file missing header: " + path.string());
    std::size_t item_start = 0, size = 0;
    std::istringstream hs(header.substr(kHeaderPrefix.size()));
    std::string kv;
    while (hs >> kv) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) continue;
        const auto key = kv.substr(0, eq);
        const auto val = std::stoull(kv.substr(eq + 1));
        if (key == "item_start") item_start = val;
        else if (key == "size") size = val;
    }
    Vocabulary v;
    std::string line;
    while (std::getline(in, line)) v.tokens_.push_back(line);
    if (v.tokens_.size() != size || item_start < 4 || item_start >= size) {
        throw DataError("vocabulary file header does not match its contents: " + path.string());
    }
    v.item_start_ = item_start;
    if (v.tokens_[0] != kPadToken || v.tokens_[1] != kSepToken || v.tokens_[2] != kEosToken ||
        v.tokens_[3] != kRecStartToken || v.tokens_[item_start] != kRecEndToken) {
        throw DataError("vocabulary file has misplaced special tokens: " + path.string());
    }
    v.index();
    return v;
}

void Vocabulary::save(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write vocabulary file: " + path.string());
    out << kHeaderPrefix << " size=" << tokens_.size() << " item_start=" << item_start_ << '\n';
    for (const auto& t : tokens_) out << t << '\n';
}

std::optional<TokenId> Vocabulary::find(std::string_view token) const {
    if (auto it = by_string_.find(std::string(token)); it != by_string_.end()) return it->second;
    return std::nullopt;
}

TokenId Vocabulary::lookup_word(std::string_view word) const {
    if (auto id = find(word); id && is_general(*id)) return *id;
    if (unk_) return *unk_;
    throw DataError("word not in vocabulary: " + std::string(word));
}

std::optional<TokenId> Vocabulary::find_item(std::string_view item_id) const {
    if (auto id = find(item_token_string(item_id)); id && is_item(*id)) return id;
    return std::nullopt;
}

TokenId Vocabulary::item_token(std::string_view item_id) const {
    if (auto id = find_item(item_id)) return *id;
    throw DataError("item not in vocabulary: " + std::string(item_id));
}

std::string Vocabulary::item_id(TokenId t) const {
    if (!is_item(t)) throw DataError("token is not an item token: " + std::to_string(t));
    return tokens_[static_cast<std::size_t>(t)].substr(1);
}

std::vector<std::string> Vocabulary::item_catalog() const {
    std::vector<std::string> out;
    for (std::size_t i = item_start_ + 1; i < tokens_.size(); ++i) out.push_back(tokens_[i].substr(1));
    return out;
}

std::uint64_t Vocabulary::hash() const {
    std::uint64_t h = fnv1a64("");
    for (const auto& t : tokens_) {
        h = fnv1a64(t, h);
        h = fnv1a64("\n", h);
    }
    return h;
}

}  // namespace recindial
