#ifndef DVC_CONCEPTS_HPP_
#define DVC_CONCEPTS_HPP_

// Concept vocabulary (top content words of the training captions) and the
// per-event multi-hot labels derived from it.

#include <cstdint>
#include <filesystem>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

namespace dvc::concepts {

// Which tokens may become concepts. An empty allow-list admits every token
// that is not denied.
struct ContentLexicon {
  std::set<std::string> allow;
  std::set<std::string> deny;

  bool admits(const std::string& token) const;
};

struct ConceptVocabulary {
  std::vector<std::string> entries;
  std::unordered_map<std::string, int> index;
  // Set when fewer than the requested number of admissible tokens existed.
  bool short_of_request = false;

  int size() const { return static_cast<int>(entries.size()); }
  static ConceptVocabulary from_entries(std::vector<std::string> entries);
};

using ConceptLabel = std::vector<std::uint8_t>;

// Counts every occurrence of admissible tokens in the (raw) captions, ranks
// by frequency then lexicographically, and keeps the first n_concepts.
ConceptVocabulary build_vocabulary(const std::vector<std::string>& captions,
                                   int n_concepts,
                                   const ContentLexicon& lexicon);

// bits[k] == 1 iff entry k occurs among the normalized caption tokens.
ConceptLabel label_events(const std::vector<std::string>& caption_tokens,
                          const ConceptVocabulary& vocab);

// One token per line.
void write_vocabulary(const std::filesystem::path& path,
                      const ConceptVocabulary& vocab);
ConceptVocabulary read_vocabulary(const std::filesystem::path& path);
std::set<std::string> read_token_list(const std::filesystem::path& path);
void write_token_list(const std::filesystem::path& path,
                      const std::set<std::string>& tokens);

// Small English stopword deny-list for real caption files.
const std::set<std::string>& default_stopwords();

}  // namespace dvc::concepts

#endif  // DVC_CONCEPTS_HPP_
