#include "dvc/concepts.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <stdexcept>

#include "dvc/text.hpp"

namespace dvc::concepts {

bool ContentLexicon::admits(const std::string& token) const {
  if (deny.contains(token)) return false;
  return allow.empty() || allow.contains(token);
}

ConceptVocabulary ConceptVocabulary::from_entries(
    std::vector<std::string> entries) {
  ConceptVocabulary v;
  for (auto& e : entries) {
    if (v.index.contains(e))
      throw std::invalid_argument("duplicate concept entry: " + e);
    v.index.emplace(e, static_cast<int>(v.entries.size()));
    v.entries.push_back(std::move(e));
  }
  return v;
}

ConceptVocabulary build_vocabulary(const std::vector<std::string>& captions,
                                   int n_concepts,
                                   const ContentLexicon& lexicon) {
  if (captions.empty()) throw std::invalid_argument("empty caption corpus");
  if (n_concepts < 1) throw std::invalid_argument("n_concepts must be >= 1");
  std::map<std::string, long> counts;  // ordered: lexicographic tie-break
  for (const auto& caption : captions)
    for (const auto& token : text::tokenize(caption))
      if (lexicon.admits(token)) ++counts[token];

  std::vector<std::pair<std::string, long>> ranked(counts.begin(), counts.end());
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> entries;
  for (const auto& [token, n] : ranked) {
    if (static_cast<int>(entries.size()) == n_concepts) break;
    entries.push_back(token);
  }
  ConceptVocabulary vocab = ConceptVocabulary::from_entries(std::move(entries));
  vocab.short_of_request = vocab.size() < n_concepts;
  return vocab;
}

ConceptLabel label_events(const std::vector<std::string>& caption_tokens,
                          const ConceptVocabulary& vocab) {
  ConceptLabel bits(vocab.entries.size(), 0);
  for (const auto& raw : caption_tokens) {
    for (const auto& token : text::tokenize(raw)) {
      auto it = vocab.index.find(token);
      if (it != vocab.index.end()) bits[it->second] = 1;
    }
  }
  return bits;
}

void write_vocabulary(const std::filesystem::path& path,
                      const ConceptVocabulary& vocab) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const auto& e : vocab.entries) out << e << '\n';
}

ConceptVocabulary read_vocabulary(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::vector<std::string> entries;
  std::string line;
  while (std::getline(in, line)) {
    const auto tokens = text::tokenize(line);
    if (!tokens.empty()) entries.push_back(tokens.front());
  }
  return ConceptVocabulary::from_entries(std::move(entries));
}

std::set<std::string> read_token_list(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::set<std::string> tokens;
  std::string line;
  while (std::getline(in, line))
    for (auto& t : text::tokenize(line)) tokens.insert(std::move(t));
  return tokens;
}

void write_token_list(const std::filesystem::path& path,
                      const std::set<std::string>& tokens) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const auto& t : tokens) out << t << '\n';
}

const std::set<std::string>& default_stopwords() {
  static const std::set<std::string> words = {
      "a",    "an",   "and",  "are",  "as",   "at",   "be",   "but", "by",
      "for",  "from", "has",  "he",   "her",  "his",  "in",   "into", "is",
      "it",   "its",  "of",   "on",   "onto", "or",   "she",  "so",  "that",
      "the",  "their", "them", "then", "they", "this", "to",  "up",  "was",
      "while", "with", "some", "more", "out",  "over", "off"};
  return words;
}

}  // namespace dvc::concepts
