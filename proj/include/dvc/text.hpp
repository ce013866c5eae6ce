#ifndef DVC_TEXT_HPP_
#define DVC_TEXT_HPP_

// The single tokenization shared by captions, concepts and metrics:
// lowercase, ASCII punctuation removed, whitespace split.

#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace dvc::text {

std::vector<std::string> tokenize(std::string_view sentence);
std::string join(const std::vector<std::string>& tokens);

// Word-level caption vocabulary with four reserved ids.
class WordVocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;
  static constexpr int kUnk = 3;

  WordVocabulary();
  // Words ordered by descending frequency, then lexicographically.
  static WordVocabulary build(const std::vector<std::vector<std::string>>& corpus);
  static WordVocabulary from_words(const std::vector<std::string>& words);

  int size() const { return static_cast<int>(words_.size()); }
  int id(const std::string& word) const;
  const std::string& word(int id) const { return words_.at(id); }
  const std::vector<std::string>& words() const { return words_; }

  // Token ids followed by kEos, truncated to max_len (the last slot stays
  // kEos when truncation happens).
  std::vector<int> encode(const std::vector<std::string>& tokens,
                          int max_len) const;
  // Stops at kEos; skips reserved ids.
  std::vector<std::string> decode(const std::vector<int>& ids) const;

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, int> index_;
};

}  // namespace dvc::text

#endif  // DVC_TEXT_HPP_
