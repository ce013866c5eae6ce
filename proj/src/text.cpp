#include "dvc/text.hpp"

#include <algorithm>
#include <cctype>
#include <map>
#include <stdexcept>

namespace dvc::text {

std::vector<std::string> tokenize(std::string_view sentence) {
  std::vector<std::string> tokens;
  std::string current;
  for (char ch : sentence) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isspace(c)) {
      if (!current.empty()) tokens.push_back(std::move(current));
      current.clear();
    } else if (c < 128 && std::ispunct(c)) {
      continue;
    } else {
      current.push_back(static_cast<char>(std::tolower(c)));
    }
  }
  if (!current.empty()) tokens.push_back(std::move(current));
  return tokens;
}

std::string join(const std::vector<std::string>& tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out.push_back(' ');
    out += tokens[i];
  }
  return out;
}

WordVocabulary::WordVocabulary() {
  for (const char* w : {"<pad>", "<bos>", "<eos>", "<unk>"}) {
    index_.emplace(w, static_cast<int>(words_.size()));
    words_.emplace_back(w);
  }
}

WordVocabulary WordVocabulary::build(
    const std::vector<std::vector<std::string>>& corpus) {
  std::map<std::string, long> counts;
  for (const auto& sentence : corpus)
    for (const auto& w : sentence) ++counts[w];
  std::vector<std::pair<std::string, long>> ranked(counts.begin(), counts.end());
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> words;
  for (auto& [w, n] : ranked) words.push_back(w);
  return from_words(words);
}

WordVocabulary WordVocabulary::from_words(const std::vector<std::string>& words) {
  WordVocabulary vocab;
  for (const auto& w : words) {
    if (vocab.index_.contains(w)) continue;
    vocab.index_.emplace(w, static_cast<int>(vocab.words_.size()));
    vocab.words_.push_back(w);
  }
  return vocab;
}

int WordVocabulary::id(const std::string& word) const {
  auto it = index_.find(word);
  return it == index_.end() ? kUnk : it->second;
}

std::vector<int> WordVocabulary::encode(const std::vector<std::string>& tokens,
                                        int max_len) const {
  if (max_len < 1) throw std::invalid_argument("encode: max_len < 1");
  std::vector<int> ids;
  for (const auto& t : tokens) {
    if (static_cast<int>(ids.size()) >= max_len - 1) break;
    ids.push_back(id(t));
  }
  ids.push_back(kEos);
  return ids;
}

std::vector<std::string> WordVocabulary::decode(const std::vector<int>& ids) const {
  std::vector<std::string> out;
  for (int i : ids) {
    if (i == kEos) break;
    if (i == kPad || i == kBos || i < 0 || i >= size()) continue;
    out.push_back(words_[i]);
  }
  return out;
}

}  // namespace dvc::text
