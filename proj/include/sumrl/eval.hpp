#pragma once

#include <cstdio>
#include <ostream>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "sumrl/corpus.hpp"
#include "sumrl/decode.hpp"
#include "sumrl/model.hpp"
#include "sumrl/rouge.hpp"
#include "sumrl/train.hpp"
#include "sumrl/vocab.hpp"

namespace sumrl {

inline double avg_score(std::span<const double> scores) {
  if (scores.empty()) throw std::invalid_argument("avg_score: empty list");
  double sum = 0.0;
  for (double s : scores) sum += s;
  return sum / static_cast<double>(scores.size());
}

// dataset-size-weighted mean: Σ wᵢsᵢ / Σ wᵢ
inline double weighted_avg_score(std::span<const double> scores,
                                 std::span<const double> weights) {
  if (scores.size() != weights.size()) {
    throw std::invalid_argument("weighted_avg_score: length mismatch");
  }
  if (scores.empty()) throw std::invalid_argument("weighted_avg_score: empty list");
  double num = 0.0, den = 0.0;
  for (size_t i = 0; i < scores.size(); ++i) {
    if (weights[i] <= 0) {
      throw std::invalid_argument("weighted_avg_score: weights must be positive");
    }
    num += weights[i] * scores[i];
    den += weights[i];
  }
  return num / den;
}

struct DatasetEval {
  std::string name;
  size_t examples = 0;
  double weight = 0.0;
  RougeScores macro;  // per-example P/R/F averaged over the dataset
};

struct EvalReport {
  std::vector<DatasetEval> datasets;
  RougeScores avg;           // unweighted mean of per-dataset F (and P/R)
  RougeScores weighted_avg;  // dataset-size-weighted mean
};

namespace detail {

inline RougeScores aggregate(const std::vector<DatasetEval>& per_dataset,
                             bool weighted) {
  auto agg = [&](auto proj) {
    std::vector<double> scores, weights;
    for (const DatasetEval& d : per_dataset) {
      scores.push_back(proj(d.macro));
      weights.push_back(d.weight);
    }
    return weighted ? weighted_avg_score(scores, weights) : avg_score(scores);
  };
  RougeScores out;
  out.r1 = {agg([](const RougeScores& s) { return s.r1.p; }),
            agg([](const RougeScores& s) { return s.r1.r; }),
            agg([](const RougeScores& s) { return s.r1.f; })};
  out.r2 = {agg([](const RougeScores& s) { return s.r2.p; }),
            agg([](const RougeScores& s) { return s.r2.r; }),
            agg([](const RougeScores& s) { return s.r2.f; })};
  out.rl = {agg([](const RougeScores& s) { return s.rl.p; }),
            agg([](const RougeScores& s) { return s.rl.r; }),
            agg([](const RougeScores& s) { return s.rl.f; })};
  return out;
}

}  // namespace detail

// Beam-search decode every test example and macro-average ROUGE per dataset;
// weights default to the test-set sizes when none are given.
inline EvalReport evaluate(const ModelParams& params, const Vocab& vocab,
                           const std::vector<Dataset>& test_sets,
                           std::vector<double> weights = {}, size_t beam = 4,
                           size_t max_enc = 400, size_t max_dec = 100,
                           const StepOptions& options = {}) {
  if (test_sets.empty()) throw std::invalid_argument("evaluate: no test sets");
  if (!weights.empty() && weights.size() != test_sets.size()) {
    throw std::invalid_argument("evaluate: weights/datasets length mismatch");
  }
  EvalReport report;
  for (size_t d = 0; d < test_sets.size(); ++d) {
    const Dataset& ds = test_sets[d];
    if (ds.empty()) throw std::invalid_argument("evaluate: empty test set " + ds.name);
    DatasetEval de;
    de.name = ds.name.empty() ? ("dataset-" + std::to_string(d)) : ds.name;
    de.examples = ds.size();
    de.weight = weights.empty() ? static_cast<double>(ds.size()) : weights[d];
    RougeScores total;
    for (const Example& raw : ds.examples) {
      Example ex = truncate_example(raw, max_enc, raw.summary.size());
      Tape tape;
      ModelVars mv = watch(tape, params, false);
      EncodedExample enc_ex = encode_example(ex, vocab);
      EncoderStates enc = encode(tape, mv, enc_ex.source.ids);
      ModelStepper stepper{&tape, &mv, &enc, &enc_ex.source.extended_ids,
                           enc_ex.source.mapping.extended_size(), options};
      DecodedSequence seq = beam_search(stepper, beam, max_dec);
      TokenSeq cand = decode_ids(seq.content_ids(), vocab, enc_ex.source.mapping);
      RougeScores s = rouge_all(cand, ex.summary);
      auto acc = [](RougeTriple& t, const RougeTriple& x) {
        t.p += x.p;
        t.r += x.r;
        t.f += x.f;
      };
      acc(total.r1, s.r1);
      acc(total.r2, s.r2);
      acc(total.rl, s.rl);
    }
    double n = static_cast<double>(ds.size());
    auto norm = [n](RougeTriple t) {
      return RougeTriple{t.p / n, t.r / n, t.f / n};
    };
    de.macro = {norm(total.r1), norm(total.r2), norm(total.rl)};
    report.datasets.push_back(std::move(de));
  }
  report.avg = detail::aggregate(report.datasets, false);
  report.weighted_avg = detail::aggregate(report.datasets, true);
  return report;
}

// Text report: F-scores ×100 with 2 decimals.
inline std::string format_report(const EvalReport& report) {
  std::ostringstream os;
  auto line = [&](const std::string& name, size_t n, const RougeScores& s,
                  bool show_n) {
    char buf[160];
    if (show_n) {
      std::snprintf(buf, sizeof(buf), "%-16s %8zu %8.2f %8.2f %8.2f\n",
                    name.c_str(), n, 100.0 * s.r1.f, 100.0 * s.r2.f,
                    100.0 * s.rl.f);
    } else {
      std::snprintf(buf, sizeof(buf), "%-16s %8s %8.2f %8.2f %8.2f\n",
                    name.c_str(), "", 100.0 * s.r1.f, 100.0 * s.r2.f,
                    100.0 * s.rl.f);
    }
    os << buf;
  };
  char header[160];
  std::snprintf(header, sizeof(header), "%-16s %8s %8s %8s %8s\n", "dataset",
                "n", "R1-F", "R2-F", "RL-F");
  os << header;
  for (const DatasetEval& d : report.datasets) {
    line(d.name, d.examples, d.macro, true);
  }
  line("avg", 0, report.avg, false);
  line("weighted-avg", 0, report.weighted_avg, false);
  return os.str();
}

}  // namespace sumrl
