#include "drilldown/textproc.hpp"

#include <algorithm>
#include <cctype>
#include <map>
#include <stdexcept>

namespace dd::text {

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    std::size_t j = i;
    while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
    std::size_t b = i, e = j;
    while (b < e && std::ispunct(static_cast<unsigned char>(text[b]))) ++b;
    while (e > b && std::ispunct(static_cast<unsigned char>(text[e - 1]))) --e;
    if (b < e) {
      std::string token(text.substr(b, e - b));
      for (char& c : token) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
      out.push_back(std::move(token));
    }
    i = j;
  }
  return out;
}

Vocab::Vocab() : tokens_{std::string(kPadToken), std::string(kUnkToken)} { index(); }

void Vocab::index() {
  ids_.clear();
  for (TokenId i = 0; i < tokens_.size(); ++i) {
    if (!ids_.emplace(tokens_[i], i).second) {
      throw std::invalid_argument("duplicate vocabulary token '" + tokens_[i] + "'");
    }
  }
}

Vocab Vocab::build(std::span<const std::string> captions, std::size_t min_count) {
  if (min_count < 1) throw std::invalid_argument("min_count must be at least 1");
  if (captions.empty()) throw std::invalid_argument("cannot build a vocabulary from an empty corpus");
  std::map<std::string, std::size_t> counts;
  for (const auto& caption : captions)
    for (auto& token : tokenize(caption)) ++counts[token];
  std::vector<std::pair<std::string, std::size_t>> kept;
  for (auto& [token, count] : counts) {
    if (count >= min_count && token != kPadToken && token != kUnkToken) kept.emplace_back(token, count);
  }
  std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  });
  Vocab v;
  v.min_count_ = min_count;
  for (auto& [token, _] : kept) v.tokens_.push_back(token);
  v.index();
  return v;
}

TokenId Vocab::id(std::string_view token) const {
  auto it = ids_.find(std::string(token));
  return it == ids_.end() ? kUnkId : it->second;
}

const std::string& Vocab::token(TokenId id) const {
  if (id >= tokens_.size()) throw std::out_of_range("token id " + std::to_string(id) + " out of range");
  return tokens_[id];
}

bool Vocab::contains(std::string_view token) const { return ids_.count(std::string(token)) != 0; }

nlohmann::json Vocab::to_json() const {
  return {{"min_count", min_count_}, {"tokens", tokens_}};
}

Vocab Vocab::from_json(const nlohmann::json& j) {
  Vocab v;
  v.min_count_ = j.at("min_count").get<std::size_t>();
  v.tokens_ = j.at("tokens").get<std::vector<std::string>>();
  if (v.tokens_.size() < 2 || v.tokens_[kPadId] != kPadToken || v.tokens_[kUnkId] != kUnkToken) {
    throw std::invalid_argument("vocabulary must start with reserved <pad> and <unk> tokens");
  }
  v.index();
  return v;
}

std::vector<TokenId> encode(std::span<const std::string> tokens, const Vocab& vocab) {
  std::vector<TokenId> ids;
  ids.reserve(tokens.size());
  for (const auto& t : tokens) ids.push_back(vocab.id(t));
  return ids;
}

std::vector<std::string> decode(std::span<const TokenId> ids, const Vocab& vocab) {
  std::vector<std::string> out;
  out.reserve(ids.size());
  for (TokenId id : ids) out.push_back(vocab.token(id));
  return out;
}

}  // namespace dd::text
