#pragma once

#include <algorithm>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "sumrl/rng.hpp"

namespace sumrl {

using TokenSeq = std::vector<std::string>;

struct Example {
  TokenSeq article;
  TokenSeq summary;
  std::string id;
};

enum class DatasetRole { Source, Target, Test };

struct Dataset {
  std::vector<Example> examples;
  DatasetRole role = DatasetRole::Source;
  std::string name;

  size_t size() const { return examples.size(); }
  bool empty() const { return examples.empty(); }
};

class CorpusError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

inline TokenSeq split_tokens(const std::string& s) {
  TokenSeq out;
  size_t i = 0;
  while (i < s.size()) {
    size_t j = s.find(' ', i);
    if (j == std::string::npos) j = s.size();
    if (j > i) out.push_back(s.substr(i, j - i));
    i = j + 1;
  }
  return out;
}

}  // namespace detail

// Corpus file format: UTF-8, LF line endings, one example per line as
// `article<TAB>summary` with space-separated tokens.
inline Dataset parse_corpus(std::istream& in, DatasetRole role,
                            const std::string& name = "") {
  Dataset ds;
  ds.role = role;
  ds.name = name;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    size_t tabs = static_cast<size_t>(std::count(line.begin(), line.end(), '\t'));
    if (tabs != 1) {
      throw CorpusError("line " + std::to_string(lineno) +
                        ": expected exactly one TAB");
    }
    size_t tab = line.find('\t');
    Example ex;
    ex.article = detail::split_tokens(line.substr(0, tab));
    ex.summary = detail::split_tokens(line.substr(tab + 1));
    if (ex.article.empty()) {
      throw CorpusError("line " + std::to_string(lineno) + ": empty article");
    }
    if (ex.summary.empty()) {
      throw CorpusError("line " + std::to_string(lineno) + ": empty summary");
    }
    ex.id = "line-" + std::to_string(lineno);
    ds.examples.push_back(std::move(ex));
  }
  return ds;
}

inline Dataset load_corpus(const std::string& path, DatasetRole role) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CorpusError("cannot open corpus file: " + path);
  std::string name = path;
  size_t slash = name.find_last_of('/');
  if (slash != std::string::npos) name = name.substr(slash + 1);
  size_t dot = name.find_last_of('.');
  if (dot != std::string::npos && dot > 0) name = name.substr(0, dot);
  try {
    return parse_corpus(in, role, name);
  } catch (const CorpusError& e) {
    throw CorpusError(path + ": " + e.what());
  }
}

inline void serialize_corpus(const Dataset& ds, std::ostream& out) {
  for (const Example& ex : ds.examples) {
    for (size_t i = 0; i < ex.article.size(); ++i) {
      if (i) out << ' ';
      out << ex.article[i];
    }
    out << '\t';
    for (size_t i = 0; i < ex.summary.size(); ++i) {
      if (i) out << ' ';
      out << ex.summary[i];
    }
    out << '\n';
  }
}

inline void save_corpus(const Dataset& ds, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CorpusError("cannot write corpus file: " + path);
  serialize_corpus(ds, out);
}

inline Example truncate_example(const Example& ex, size_t max_enc,
                                size_t max_dec) {
  Example out = ex;
  if (out.article.size() > max_enc) out.article.resize(max_enc);
  if (out.summary.size() > max_dec) out.summary.resize(max_dec);
  return out;
}

inline Dataset truncate_dataset(const Dataset& ds, size_t max_enc,
                                size_t max_dec) {
  Dataset out = ds;
  for (Example& ex : out.examples) ex = truncate_example(ex, max_enc, max_dec);
  return out;
}

enum class SynthTask { CopyFirst, Keywords };

// Knobs for the synthetic generators. The rare pool is disjoint from the
// frequent pool, so with a vocabulary of at most `frequent_words` entries
// every rare name is guaranteed OOV.
struct SynthProfile {
  int frequent_words = 60;
  int rare_words = 500;
  double rare_fraction = 0.05;
};

// Summary rule for the Keywords task: tokens occurring at least twice in the
// article, in first-occurrence order.
inline TokenSeq keyword_summary(const TokenSeq& article) {
  std::map<std::string, int> counts;
  for (const std::string& t : article) counts[t]++;
  TokenSeq out;
  std::map<std::string, bool> emitted;
  for (const std::string& t : article) {
    if (counts[t] >= 2 && !emitted[t]) {
      out.push_back(t);
      emitted[t] = true;
    }
  }
  return out;
}

inline Dataset gen_synthetic(SynthTask task, int n, uint64_t seed,
                             const SynthProfile& profile = {}) {
  if (n < 1) throw CorpusError("gen_synthetic: n must be >= 1");
  Dataset ds;
  ds.role = DatasetRole::Source;

  auto frequent = [&](size_t i) { return "w" + std::to_string(i); };
  auto rare = [&](size_t i) { return "name" + std::to_string(i); };
  auto draw_token = [&](Rng& rng) {
    if (rng.bernoulli(profile.rare_fraction)) {
      return rare(rng.below(static_cast<size_t>(profile.rare_words)));
    }
    return frequent(rng.below(static_cast<size_t>(profile.frequent_words)));
  };

  if (task == SynthTask::CopyFirst) {
    ds.name = "copyfirst";
    Rng rng(mix_seed(seed, 0xC0F1));
    for (int i = 0; i < n; ++i) {
      Example ex;
      int sentences = rng.range(3, 6);
      for (int s = 0; s < sentences; ++s) {
        int len = rng.range(5, 12);
        TokenSeq sent;
        for (int t = 0; t < len; ++t) sent.push_back(draw_token(rng));
        if (s == 0) ex.summary = sent;
        ex.article.insert(ex.article.end(), sent.begin(), sent.end());
      }
      ex.id = "copyfirst-" + std::to_string(i);
      ds.examples.push_back(std::move(ex));
    }
    return ds;
  }
  if (task == SynthTask::Keywords) {
    ds.name = "keywords";
    Rng rng(mix_seed(seed, 0x4E75));
    for (int i = 0; i < n; ++i) {
      Example ex;
      // draw each article from a small active set so repeats are common
      int active_n = rng.range(6, 12);
      TokenSeq active;
      for (int a = 0; a < active_n; ++a) active.push_back(draw_token(rng));
      int sentences = rng.range(2, 4);
      for (int s = 0; s < sentences; ++s) {
        int len = rng.range(4, 9);
        for (int t = 0; t < len; ++t) {
          ex.article.push_back(active[rng.below(active.size())]);
        }
      }
      ex.summary = keyword_summary(ex.article);
      if (ex.summary.empty()) {
        // force at least one repeated token
        ex.article.push_back(ex.article[0]);
        ex.summary = keyword_summary(ex.article);
      }
      ex.id = "keywords-" + std::to_string(i);
      ds.examples.push_back(std::move(ex));
    }
    return ds;
  }
  throw CorpusError("gen_synthetic: unknown task");
}

inline Dataset merge_datasets(const Dataset& a, const Dataset& b) {
  if (a.role != b.role) throw CorpusError("merge_datasets: role mismatch");
  Dataset out;
  out.role = a.role;
  out.name = a.name + "+" + b.name;
  out.examples.reserve(a.size() + b.size());
  for (const Example& ex : a.examples) {
    Example e = ex;
    e.id = a.name + "/" + ex.id;
    out.examples.push_back(std::move(e));
  }
  for (const Example& ex : b.examples) {
    Example e = ex;
    e.id = b.name + "/" + ex.id;
    out.examples.push_back(std::move(e));
  }
  return out;
}

struct Batch {
  std::vector<Example> examples;
  size_t size() const { return examples.size(); }
};

// One epoch worth of batches: a seeded permutation of the dataset chunked
// into batch_size pieces, final short batch kept.
inline std::vector<Batch> batch_iter(const Dataset& ds, size_t batch_size,
                                     uint64_t seed, int epoch) {
  if (ds.empty()) throw CorpusError("batch_iter: empty dataset");
  if (batch_size < 1) throw CorpusError("batch_iter: batch_size must be >= 1");
  std::vector<size_t> order(ds.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(mix_seed(seed, static_cast<uint64_t>(epoch)));
  rng.shuffle(order);
  std::vector<Batch> batches;
  for (size_t start = 0; start < order.size(); start += batch_size) {
    Batch b;
    size_t end = std::min(order.size(), start + batch_size);
    for (size_t i = start; i < end; ++i) {
      b.examples.push_back(ds.examples[order[i]]);
    }
    batches.push_back(std::move(b));
  }
  return batches;
}

}  // namespace sumrl
