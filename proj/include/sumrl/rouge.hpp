#pragma once

#include <algorithm>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace sumrl {

struct RougeTriple {
  double p = 0.0;
  double r = 0.0;
  double f = 0.0;
};

struct RougeScores {
  RougeTriple r1, r2, rl;
};

namespace detail {

inline RougeTriple make_triple(double overlap, double cand_total,
                               double ref_total) {
  RougeTriple t;
  t.p = cand_total > 0 ? overlap / cand_total : 0.0;
  t.r = ref_total > 0 ? overlap / ref_total : 0.0;
  t.f = (t.p + t.r) > 0 ? 2.0 * t.p * t.r / (t.p + t.r) : 0.0;
  return t;
}

}  // namespace detail

// Clipped n-gram overlap. Token-exact, no stemming or stopword handling.
template <class Tok>
RougeTriple rouge_n(const std::vector<Tok>& cand, const std::vector<Tok>& ref,
                    int n) {
  if (n != 1 && n != 2) throw std::invalid_argument("rouge_n: n must be 1 or 2");
  size_t un = static_cast<size_t>(n);
  size_t cand_total = cand.size() >= un ? cand.size() - un + 1 : 0;
  size_t ref_total = ref.size() >= un ? ref.size() - un + 1 : 0;
  std::map<std::vector<Tok>, long> ref_counts;
  for (size_t i = 0; i + un <= ref.size(); ++i) {
    ref_counts[std::vector<Tok>(ref.begin() + i, ref.begin() + i + un)]++;
  }
  long overlap = 0;
  for (size_t i = 0; i + un <= cand.size(); ++i) {
    auto it = ref_counts.find(std::vector<Tok>(cand.begin() + i, cand.begin() + i + un));
    if (it != ref_counts.end() && it->second > 0) {
      ++overlap;
      --it->second;
    }
  }
  return detail::make_triple(static_cast<double>(overlap),
                             static_cast<double>(cand_total),
                             static_cast<double>(ref_total));
}

// Sentence-level ROUGE-L: LCS over the whole summary as one token sequence.
template <class Tok>
RougeTriple rouge_l(const std::vector<Tok>& cand, const std::vector<Tok>& ref) {
  size_t m = cand.size(), n = ref.size();
  if (m == 0 || n == 0) return detail::make_triple(0.0, static_cast<double>(m),
                                                   static_cast<double>(n));
  // bottom-up LCS, rolling rows
  std::vector<long> prev(n + 1, 0), cur(n + 1, 0);
  for (size_t i = 1; i <= m; ++i) {
    for (size_t j = 1; j <= n; ++j) {
      if (cand[i - 1] == ref[j - 1]) {
        cur[j] = prev[j - 1] + 1;
      } else {
        cur[j] = std::max(prev[j], cur[j - 1]);
      }
    }
    std::swap(prev, cur);
  }
  return detail::make_triple(static_cast<double>(prev[n]),
                             static_cast<double>(m), static_cast<double>(n));
}

template <class Tok>
RougeScores rouge_all(const std::vector<Tok>& cand, const std::vector<Tok>& ref) {
  RougeScores s;
  s.r1 = rouge_n(cand, ref, 1);
  s.r2 = rouge_n(cand, ref, 2);
  s.rl = rouge_l(cand, ref);
  return s;
}

// Which F-scores compose the training reward. Weights are normalized, so
// {rl:1} is plain ROUGE-L F and {r1:0.5, rl:0.5} is their midpoint.
struct RewardConfig {
  double w_r1 = 0.0;
  double w_r2 = 0.0;
  double w_rl = 1.0;
};

template <class Tok>
double reward(const std::vector<Tok>& cand, const std::vector<Tok>& ref,
              const RewardConfig& cfg = {}) {
  double total = cfg.w_r1 + cfg.w_r2 + cfg.w_rl;
  if (total <= 0) throw std::invalid_argument("reward: weights must sum > 0");
  double acc = 0.0;
  if (cfg.w_r1 > 0) acc += cfg.w_r1 * rouge_n(cand, ref, 1).f;
  if (cfg.w_r2 > 0) acc += cfg.w_r2 * rouge_n(cand, ref, 2).f;
  if (cfg.w_rl > 0) acc += cfg.w_rl * rouge_l(cand, ref).f;
  return acc / total;
}

}  // namespace sumrl
