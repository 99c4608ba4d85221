#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace recindial {

using TokenId = std::int32_t;

inline constexpr std::string_view kPadToken = "[PAD]";
inline constexpr std::string_view kSepToken = "[SEP]";
inline constexpr std::string_view kEosToken = "[EOS]";
inline constexpr std::string_view kRecStartToken = "[RecS]";
inline constexpr std::string_view kRecEndToken = "[RecE]";
inline constexpr std::string_view kUnkToken = "[UNK]";

/// Raised when corpus data breaks a structural rule (unbalanced slots, tokens in the wrong partition).
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Token string used for a catalog item inside the vocabulary.
std::string item_token_string(std::string_view item_id);

/// Partitioned token space. Layout:
///   [0, general_size)              general partition: [PAD] [SEP] [EOS] [RecS], then base tokens
///   general_size                   [RecE]
///   (general_size, size)           one token per catalog item, in catalog order
class Vocabulary {
public:
    Vocabulary() = default;

    /// Throws std::invalid_argument on duplicate item ids or base tokens that collide with specials.
    static Vocabulary build(std::span<const std::string> item_catalog,
                            std::span<const std::string> base_tokens);

    static Vocabulary load(const std::filesystem::path& path);
    void save(const std::filesystem::path& path) const;

    std::size_t size() const noexcept { return tokens_.size(); }
    std::size_t general_size() const noexcept { return item_start_; }
    /// |V_R|, including [RecE].
    std::size_t item_partition_size() const noexcept { return tokens_.size() - item_start_; }
    std::size_t item_count() const noexcept { return item_partition_size() - 1; }
    TokenId item_start() const noexcept { return static_cast<TokenId>(item_start_); }

    TokenId pad() const noexcept { return 0; }
    TokenId sep() const noexcept { return 1; }
    TokenId eos() const noexcept { return 2; }
    TokenId rec_start() const noexcept { return 3; }
    TokenId rec_end() const noexcept { return item_start(); }
    std::optional<TokenId> unk() const noexcept { return unk_; }

    bool valid(TokenId t) const noexcept { return t >= 0 && static_cast<std::size_t>(t) < tokens_.size(); }
    bool is_general(TokenId t) const noexcept { return t >= 0 && static_cast<std::size_t>(t) < item_start_; }
    bool in_item_partition(TokenId t) const noexcept { return valid(t) && static_cast<std::size_t>(t) >= item_start_; }
    /// True for catalog item tokens (V_R without [RecE]).
    bool is_item(TokenId t) const noexcept { return in_item_partition(t) && t != rec_end(); }

    /// Offset of a V_R token inside the item partition ([RecE] is 0).
    std::size_t partition_index(TokenId t) const noexcept { return static_cast<std::size_t>(t) - item_start_; }
    TokenId from_partition_index(std::size_t i) const noexcept { return static_cast<TokenId>(item_start_ + i); }

    const std::string& token(TokenId t) const { return tokens_.at(static_cast<std::size_t>(t)); }
    std::optional<TokenId> find(std::string_view token) const;
    /// Word lookup with [UNK] fallback; throws DataError when the word is unknown and no [UNK] exists.
    TokenId lookup_word(std::string_view word) const;

    std::optional<TokenId> find_item(std::string_view item_id) const;
    TokenId item_token(std::string_view item_id) const;
    /// Catalog item id of an item token.
    std::string item_id(TokenId t) const;
    std::vector<std::string> item_catalog() const;

    /// FNV-1a over the ordered token list; stored in checkpoints to detect vocabulary drift.
    std::uint64_t hash() const;

    const std::vector<std::string>& tokens() const noexcept { return tokens_; }

private:
    void index();

    std::vector<std::string> tokens_;
    std::size_t item_start_ = 0;
    std::unordered_map<std::string, TokenId> by_string_;
    std::optional<TokenId> unk_;
};

}  // namespace recindial
