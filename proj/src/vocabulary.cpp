#include "procstruct/vocabulary.hpp"

#include "procstruct/error.hpp"

namespace procstruct {

namespace {
const char* const kReserved[] = {"<pad>", "<unk>", "<bos>", "<eos>"};
}

Vocabulary::Vocabulary() {
  for (const char* t : kReserved) add(t);
}

std::size_t Vocabulary::add(std::string_view token) {
  std::string key(token);
  if (auto it = index_.find(key); it != index_.end()) return it->second;
  const auto id = tokens_.size();
  tokens_.push_back(key);
  index_.emplace(std::move(key), id);
  return id;
}

std::size_t Vocabulary::index(std::string_view token) const {
  auto it = index_.find(std::string(token));
  return it == index_.end() ? kUnk : it->second;
}

bool Vocabulary::contains(std::string_view token) const {
  return index_.count(std::string(token)) != 0;
}

const std::string& Vocabulary::token(std::size_t index) const {
  if (index >= tokens_.size()) throw IndexError("vocabulary index " + std::to_string(index) + " out of range");
  return tokens_[index];
}

std::vector<std::size_t> Vocabulary::encode(const std::vector<std::string>& words) const {
  std::vector<std::size_t> out;
  out.reserve(words.size());
  for (const auto& w : words) out.push_back(index(w));
  return out;
}

Vocabulary Vocabulary::from_tokens(const std::vector<std::string>& tokens) {
  if (tokens.size() < 4) throw FormatError("vocabulary is missing reserved tokens");
  for (std::size_t i = 0; i < 4; ++i) {
    if (tokens[i] != kReserved[i]) throw FormatError("vocabulary reserved token mismatch at " + std::to_string(i));
  }
  Vocabulary v;
  for (std::size_t i = 4; i < tokens.size(); ++i) {
    if (v.add(tokens[i]) != i) throw FormatError("duplicate vocabulary token '" + tokens[i] + "'");
  }
  return v;
}

}  // namespace procstruct
