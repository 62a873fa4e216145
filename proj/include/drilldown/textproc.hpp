#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "json.hpp"

namespace dd::text {

using TokenId = std::size_t;

inline constexpr TokenId kPadId = 0;
inline constexpr TokenId kUnkId = 1;
inline constexpr std::string_view kPadToken = "<pad>";
inline constexpr std::string_view kUnkToken = "<unk>";

// Lowercase, split on whitespace, strip surrounding ASCII punctuation.
std::vector<std::string> tokenize(std::string_view text);

class Vocab {
 public:
  Vocab();

  // Keeps tokens seen at least min_count times. Ids go to the most frequent
  // tokens first, ties broken lexicographically.
  static Vocab build(std::span<const std::string> captions, std::size_t min_count);

  TokenId id(std::string_view token) const;
  const std::string& token(TokenId id) const;
  bool contains(std::string_view token) const;
  std::size_t size() const noexcept { return tokens_.size(); }
  std::size_t min_count() const noexcept { return min_count_; }

  nlohmann::json to_json() const;
  static Vocab from_json(const nlohmann::json& j);

  bool operator==(const Vocab& other) const {
    return tokens_ == other.tokens_ && min_count_ == other.min_count_;
  }

 private:
  void index();

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> ids_;
  std::size_t min_count_ = 1;
};

std::vector<TokenId> encode(std::span<const std::string> tokens, const Vocab& vocab);
std::vector<std::string> decode(std::span<const TokenId> ids, const Vocab& vocab);

inline std::vector<TokenId> encode_text(std::string_view text, const Vocab& vocab) {
  auto tokens = tokenize(text);
  return encode(tokens, vocab);
}

}  // namespace dd::text
