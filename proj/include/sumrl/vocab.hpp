#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <istream>
#include <ostream>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "sumrl/corpus.hpp"
#include "sumrl/rng.hpp"

namespace sumrl {

class VocabError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ids 0..3 are reserved, in this order
constexpr int kPadId = 0;
constexpr int kUnkId = 1;
constexpr int kStartId = 2;
constexpr int kStopId = 3;
constexpr int kNumSpecials = 4;

inline const char* special_token(int id) {
  switch (id) {
    case kPadId: return "<pad>";
    case kUnkId: return "<unk>";
    case kStartId: return "<s>";
    case kStopId: return "</s>";
    default: return nullptr;
  }
}

// Fixed top-K vocabulary. Content words occupy ids 4..size-1 in rank order
// (frequency desc, lexicographic tiebreak).
class Vocab {
 public:
  Vocab() {
    for (int i = 0; i < kNumSpecials; ++i) {
      words_.emplace_back(special_token(i));
      ids_.emplace(words_.back(), i);
    }
  }

  static Vocab build(const Dataset& ds, size_t k) {
    if (k < 1) throw VocabError("build_vocab: k must be >= 1");
    if (ds.empty()) throw VocabError("build_vocab: empty dataset");
    std::unordered_map<std::string, long long> counts;
    for (const Example& ex : ds.examples) {
      for (const std::string& t : ex.article) counts[t]++;
      for (const std::string& t : ex.summary) counts[t]++;
    }
    std::vector<std::pair<std::string, long long>> ranked;
    ranked.reserve(counts.size());
    for (auto& kv : counts) {
      bool is_special = false;
      for (int i = 0; i < kNumSpecials; ++i) {
        if (kv.first == special_token(i)) { is_special = true; break; }
      }
      if (!is_special) ranked.emplace_back(kv.first, kv.second);
    }
    std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
      if (a.second != b.second) return a.second > b.second;
      return a.first < b.first;
    });
    if (ranked.size() > k) ranked.resize(k);
    Vocab v;
    for (auto& [word, count] : ranked) v.push_word(word, count);
    return v;
  }

  size_t size() const { return words_.size(); }

  // -1 when the word is not in the vocabulary
  int lookup(const std::string& word) const {
    auto it = ids_.find(word);
    return it == ids_.end() ? -1 : it->second;
  }

  const std::string& word_of(int id) const {
    if (id < 0 || static_cast<size_t>(id) >= words_.size()) {
      throw VocabError("word_of: id out of range: " + std::to_string(id));
    }
    return words_[static_cast<size_t>(id)];
  }

  // Vocab file: `word<TAB>count` per line in rank order, specials implicit.
  void save(std::ostream& out) const {
    for (size_t i = kNumSpecials; i < words_.size(); ++i) {
      out << words_[i] << '\t' << counts_[i - kNumSpecials] << '\n';
    }
  }

  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw VocabError("cannot write vocab file: " + path);
    save(out);
  }

  static Vocab load(std::istream& in) {
    Vocab v;
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty()) continue;
      size_t tab = line.find('\t');
      if (tab == std::string::npos) {
        throw VocabError("vocab line " + std::to_string(lineno) +
                         ": expected word<TAB>count");
      }
      long long count = 0;
      try {
        count = std::stoll(line.substr(tab + 1));
      } catch (const std::exception&) {
        throw VocabError("vocab line " + std::to_string(lineno) +
                         ": bad count");
      }
      v.push_word(line.substr(0, tab), count);
    }
    return v;
  }

  static Vocab load_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw VocabError("cannot open vocab file: " + path);
    return load(in);
  }

  std::string serialized() const {
    std::ostringstream os;
    save(os);
    return os.str();
  }

  // hash of the serialized content; stored in checkpoints to catch
  // vocabulary mismatches across training stages
  std::string content_hash() const {
    uint64_t h = fnv1a64(serialized());
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx",
                  static_cast<unsigned long long>(h));
    return std::string(buf);
  }

  const std::vector<std::string>& words() const { return words_; }

 private:
  void push_word(const std::string& word, long long count) {
    if (ids_.count(word)) {
      throw VocabError("duplicate vocab word: " + word);
    }
    ids_.emplace(word, static_cast<int>(words_.size()));
    words_.push_back(word);
    counts_.push_back(count);
  }

  std::vector<std::string> words_;
  std::vector<long long> counts_;  // content words only, rank order
  std::unordered_map<std::string, int> ids_;
};

inline Vocab build_vocab(const Dataset& ds, size_t k) {
  return Vocab::build(ds, k);
}

// Per-article OOV words in first-occurrence order; OOV word i gets extended
// id vocab.size + i.
struct ExtendedMapping {
  size_t base_size = 0;
  std::vector<std::string> oov_words;

  size_t extended_size() const { return base_size + oov_words.size(); }

  // -1 when the word is not one of this article's OOVs
  int extended_id_of(const std::string& word) const {
    for (size_t i = 0; i < oov_words.size(); ++i) {
      if (oov_words[i] == word) return static_cast<int>(base_size + i);
    }
    return -1;
  }
};

struct EncodedSource {
  std::vector<int> ids;           // vocab ids, UNK for OOV
  std::vector<int> extended_ids;  // vocab ids, or extended ids for OOV
  ExtendedMapping mapping;
};

inline EncodedSource encode_source(const TokenSeq& tokens, const Vocab& vocab) {
  if (tokens.empty()) throw VocabError("encode_source: empty token sequence");
  EncodedSource out;
  out.mapping.base_size = vocab.size();
  for (const std::string& t : tokens) {
    int id = vocab.lookup(t);
    if (id >= 0) {
      out.ids.push_back(id);
      out.extended_ids.push_back(id);
    } else {
      out.ids.push_back(kUnkId);
      int ext = out.mapping.extended_id_of(t);
      if (ext < 0) {
        ext = static_cast<int>(out.mapping.extended_size());
        out.mapping.oov_words.push_back(t);
      }
      out.extended_ids.push_back(ext);
    }
  }
  return out;
}

inline std::vector<int> encode_target(const TokenSeq& tokens, const Vocab& vocab,
                                      const ExtendedMapping& mapping) {
  std::vector<int> out;
  out.reserve(tokens.size());
  for (const std::string& t : tokens) {
    int id = vocab.lookup(t);
    if (id < 0) id = mapping.extended_id_of(t);
    out.push_back(id < 0 ? kUnkId : id);
  }
  return out;
}

inline TokenSeq decode_ids(std::span<const int> ids, const Vocab& vocab,
                           const ExtendedMapping& mapping) {
  TokenSeq out;
  out.reserve(ids.size());
  for (int id : ids) {
    if (id < 0 || static_cast<size_t>(id) >= mapping.extended_size()) {
      throw VocabError("decode_ids: id out of range: " + std::to_string(id));
    }
    if (static_cast<size_t>(id) < vocab.size()) {
      out.push_back(vocab.word_of(id));
    } else {
      out.push_back(mapping.oov_words[static_cast<size_t>(id) - vocab.size()]);
    }
  }
  return out;
}

// |words(v1) ∩ words(v2)| excluding specials
inline size_t vocab_overlap(const Vocab& a, const Vocab& b) {
  size_t n = 0;
  const auto& words = a.words();
  for (size_t i = kNumSpecials; i < words.size(); ++i) {
    if (b.lookup(words[i]) >= kNumSpecials) ++n;
  }
  return n;
}

}  // namespace sumrl
