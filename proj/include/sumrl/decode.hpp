#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "sumrl/rng.hpp"
#include "sumrl/tensor.hpp"
#include "sumrl/vocab.hpp"

namespace sumrl {

enum class Provenance { Greedy, Sampled, Beam, GroundTruth };

struct DecodedSequence {
  std::vector<int> ids;        // extended ids; includes the terminal STOP if emitted
  std::vector<real> logprobs;  // log p*(chosen id) per step
  Provenance provenance = Provenance::Greedy;
  // p* tape nodes per step, populated when decoding on a recording tape
  std::vector<Tape::Var> dist_vars;

  // emitted tokens without the terminal STOP
  std::vector<int> content_ids() const {
    if (!ids.empty() && ids.back() == kStopId) {
      return std::vector<int>(ids.begin(), ids.end() - 1);
    }
    return ids;
  }

  double score_sum() const {
    double s = 0.0;
    for (real lp : logprobs) s += lp;
    return s;
  }

  // length-normalized score: mean per-token log-probability
  double score_mean() const {
    return ids.empty() ? 0.0 : score_sum() / static_cast<double>(ids.size());
  }
};

// The decoding algorithms are generic over a Stepper:
//   State start() const;
//   size_t extended_size() const;
//   Result step(int prev_id, const State&) const;   // Result{dist, dist_var, next}
// ModelStepper (model.hpp) is the production instance; tests plug in stubs.

// argmax of p* each step, ties broken by smallest id
template <class Stepper>
DecodedSequence greedy_decode(const Stepper& stepper, size_t max_dec) {
  DecodedSequence out;
  out.provenance = Provenance::Greedy;
  auto state = stepper.start();
  int prev = kStartId;
  for (size_t t = 0; t < max_dec; ++t) {
    auto r = stepper.step(prev, state);
    size_t best = 0;
    for (size_t i = 1; i < r.dist.size(); ++i) {
      if (r.dist[i] > r.dist[best]) best = i;
    }
    out.ids.push_back(static_cast<int>(best));
    out.logprobs.push_back(std::log(r.dist[best]));
    out.dist_vars.push_back(r.dist_var);
    if (static_cast<int>(best) == kStopId) break;
    prev = static_cast<int>(best);
    state = r.next;
  }
  return out;
}

// ancestral sampling via inverse CDF on the seeded generator
template <class Stepper>
DecodedSequence sample_decode(const Stepper& stepper, size_t max_dec, Rng& rng) {
  DecodedSequence out;
  out.provenance = Provenance::Sampled;
  auto state = stepper.start();
  int prev = kStartId;
  for (size_t t = 0; t < max_dec; ++t) {
    auto r = stepper.step(prev, state);
    size_t chosen = rng.categorical(r.dist);
    out.ids.push_back(static_cast<int>(chosen));
    out.logprobs.push_back(std::log(r.dist[chosen]));
    out.dist_vars.push_back(r.dist_var);
    if (static_cast<int>(chosen) == kStopId) break;
    prev = static_cast<int>(chosen);
    state = r.next;
  }
  return out;
}

// Length-normalized beam search: alive hypotheses (all of equal length) are
// pruned by cumulative log-probability, finished hypotheses retire at STOP,
// and the final answer maximizes the mean per-token log-probability.
template <class Stepper>
DecodedSequence beam_search(const Stepper& stepper, size_t beam, size_t max_dec) {
  if (beam < 1) throw std::invalid_argument("beam_search: beam must be >= 1");

  struct Hyp {
    std::vector<int> ids;
    std::vector<real> logprobs;
    std::vector<Tape::Var> dist_vars;
    double score = 0.0;  // cumulative log-prob
    typename Stepper::State state;
    int prev = kStartId;
  };

  Hyp root;
  root.state = stepper.start();
  std::vector<Hyp> alive{root};
  std::vector<Hyp> finished;

  for (size_t t = 0; t < max_dec && !alive.empty(); ++t) {
    struct Cand {
      size_t parent;
      int id;
      double logprob;
      Tape::Var dist_var;
    };
    std::vector<Cand> cands;
    std::vector<typename Stepper::State> next_states;
    next_states.reserve(alive.size());
    for (size_t p = 0; p < alive.size(); ++p) {
      auto r = stepper.step(alive[p].prev, alive[p].state);
      next_states.push_back(r.next);
      // top `beam` continuations of this hypothesis are enough
      std::vector<size_t> idx(r.dist.size());
      for (size_t i = 0; i < idx.size(); ++i) idx[i] = i;
      size_t keep = std::min(beam, idx.size());
      std::partial_sort(idx.begin(), idx.begin() + static_cast<long>(keep),
                        idx.end(), [&](size_t a, size_t b) {
                          if (r.dist[a] != r.dist[b]) return r.dist[a] > r.dist[b];
                          return a < b;
                        });
      for (size_t k = 0; k < keep; ++k) {
        if (r.dist[idx[k]] <= 0.0) continue;  // zero-mass slots are unreachable
        cands.push_back({p, static_cast<int>(idx[k]), std::log(r.dist[idx[k]]),
                         r.dist_var});
      }
    }
    std::sort(cands.begin(), cands.end(), [&](const Cand& a, const Cand& b) {
      double sa = alive[a.parent].score + a.logprob;
      double sb = alive[b.parent].score + b.logprob;
      if (sa != sb) return sa > sb;
      if (a.id != b.id) return a.id < b.id;
      return a.parent < b.parent;
    });

    std::vector<Hyp> next_alive;
    for (const Cand& c : cands) {
      if (next_alive.size() >= beam) break;
      Hyp h = alive[c.parent];
      h.ids.push_back(c.id);
      h.logprobs.push_back(c.logprob);
      h.dist_vars.push_back(c.dist_var);
      h.score += c.logprob;
      if (c.id == kStopId) {
        finished.push_back(std::move(h));
      } else {
        h.state = next_states[c.parent];
        h.prev = c.id;
        next_alive.push_back(std::move(h));
      }
    }
    alive = std::move(next_alive);
  }

  auto mean_score = [](const Hyp& h) {
    return h.ids.empty() ? 0.0 : h.score / static_cast<double>(h.ids.size());
  };
  // finished hypotheses compete with whatever is still alive at max_dec
  std::vector<Hyp> pool = std::move(finished);
  for (Hyp& h : alive) pool.push_back(std::move(h));
  if (pool.empty()) throw std::runtime_error("beam_search: no hypotheses");
  size_t best = 0;
  for (size_t i = 1; i < pool.size(); ++i) {
    if (mean_score(pool[i]) > mean_score(pool[best])) best = i;
  }

  DecodedSequence out;
  out.provenance = Provenance::Beam;
  out.ids = pool[best].ids;
  out.logprobs = pool[best].logprobs;
  out.dist_vars = pool[best].dist_vars;
  return out;
}

}  // namespace sumrl
