#pragma once

#include <algorithm>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "sumrl/corpus.hpp"
#include "sumrl/decode.hpp"
#include "sumrl/eval.hpp"
#include "sumrl/model.hpp"
#include "sumrl/rouge.hpp"
#include "sumrl/train.hpp"
#include "sumrl/vocab.hpp"

namespace sumrl {

namespace cli_detail {

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  size_t i = 0;
  while (i <= s.size()) {
    size_t j = s.find(',', i);
    if (j == std::string::npos) j = s.size();
    if (j > i) out.push_back(s.substr(i, j - i));
    i = j + 1;
  }
  return out;
}

struct LogSink {
  std::unique_ptr<std::ofstream> file;
  std::ostream* stream = nullptr;

  static LogSink open(const std::string& path, std::ostream& fallback) {
    LogSink sink;
    if (path.empty()) {
      sink.stream = &fallback;
      return sink;
    }
    sink.file = std::make_unique<std::ofstream>(path, std::ios::binary);
    if (!*sink.file) throw TrainError("cannot write log file: " + path);
    sink.stream = sink.file.get();
    return sink;
  }
};

}  // namespace cli_detail

// Exit codes: 0 success, 1 usage error, 2 data/model error.
inline int run_cli(std::vector<std::string> args, std::ostream& out,
                   std::ostream& err) {
  CLI::App app{"pointer-generator summarization with transfer RL training"};
  app.require_subcommand(1);

  // gen-synthetic
  auto* gen = app.add_subcommand("gen-synthetic", "generate a synthetic corpus");
  std::string gen_task, gen_out;
  int gen_n = 100;
  uint64_t gen_seed = 13;
  SynthProfile profile;
  gen->add_option("--task", gen_task, "copyfirst or keywords")->required();
  gen->add_option("--n", gen_n, "number of examples")->required();
  gen->add_option("--seed", gen_seed, "generator seed");
  gen->add_option("--out", gen_out, "output corpus path")->required();
  gen->add_option("--frequent-words", profile.frequent_words,
                  "frequent token pool size");
  gen->add_option("--rare-words", profile.rare_words, "rare name pool size");
  gen->add_option("--rare-fraction", profile.rare_fraction,
                  "chance a token is a rare name");

  // build-vocab
  auto* bv = app.add_subcommand("build-vocab", "build a top-k vocabulary");
  std::string bv_corpus, bv_out;
  size_t bv_k = 50000;
  uint64_t bv_seed = 13;
  bv->add_option("--corpus", bv_corpus,
                 "corpus path(s), comma-separated (merged when several)")
      ->required();
  bv->add_option("--k", bv_k, "content words to keep");
  bv->add_option("--out", bv_out, "output vocab path")->required();
  bv->add_option("--seed", bv_seed, "accepted for uniformity; unused");

  // pretrain
  auto* pre = app.add_subcommand("pretrain", "CE pre-training on a corpus");
  std::string pre_config, pre_corpus, pre_vocab, pre_out, pre_log;
  std::optional<uint64_t> pre_seed;
  pre->add_option("--config", pre_config, "config file")->required();
  pre->add_option("--corpus", pre_corpus, "training corpus")->required();
  pre->add_option("--vocab", pre_vocab, "vocab file")->required();
  pre->add_option("--out", pre_out, "checkpoint output path")->required();
  pre->add_option("--log", pre_log, "training log CSV path (default stderr)");
  pre->add_option("--seed", pre_seed, "override config seed");

  // transfer
  auto* tr = app.add_subcommand("transfer", "TL or TRL fine-tuning");
  std::string tr_mode, tr_config, tr_ckpt, tr_source, tr_target, tr_vocab,
      tr_out, tr_log;
  std::optional<uint64_t> tr_seed;
  tr->add_option("--mode", tr_mode, "tl or trl")->required();
  tr->add_option("--config", tr_config, "config file")->required();
  tr->add_option("--checkpoint", tr_ckpt, "pretrained checkpoint")->required();
  tr->add_option("--source", tr_source, "source corpus (required for trl)");
  tr->add_option("--target", tr_target, "target corpus")->required();
  tr->add_option("--vocab", tr_vocab, "vocab file")->required();
  tr->add_option("--out", tr_out, "checkpoint output path")->required();
  tr->add_option("--log", tr_log, "training log CSV path (default stderr)");
  tr->add_option("--seed", tr_seed, "override config seed");

  // decode
  auto* dec = app.add_subcommand("decode", "beam-search decode a corpus");
  std::string dec_ckpt, dec_vocab, dec_input, dec_out;
  std::optional<size_t> dec_beam, dec_max;
  uint64_t dec_seed = 13;
  dec->add_option("--checkpoint", dec_ckpt, "model checkpoint")->required();
  dec->add_option("--vocab", dec_vocab, "vocab file")->required();
  dec->add_option("--input", dec_input, "corpus to summarize")->required();
  dec->add_option("--out", dec_out, "output path (default stdout)");
  dec->add_option("--beam", dec_beam, "beam size (default from checkpoint)");
  dec->add_option("--max-dec", dec_max, "decode length cap");
  dec->add_option("--seed", dec_seed, "accepted for uniformity; unused");

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "ROUGE evaluation report");
  std::string ev_ckpt, ev_vocab, ev_test, ev_weights;
  std::optional<size_t> ev_beam;
  uint64_t ev_seed = 13;
  ev->add_option("--checkpoint", ev_ckpt, "model checkpoint")->required();
  ev->add_option("--vocab", ev_vocab, "vocab file")->required();
  ev->add_option("--test", ev_test, "test corpus path(s), comma-separated")
      ->required();
  ev->add_option("--weights", ev_weights,
                 "per-dataset weights, comma-separated (default test sizes)");
  ev->add_option("--beam", ev_beam, "beam size (default from checkpoint)");
  ev->add_option("--seed", ev_seed, "accepted for uniformity; unused");

  try {
    std::reverse(args.begin(), args.end());
    app.parse(args);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e, out, err);
    return code == 0 ? 0 : 1;
  }

  try {
    if (gen->parsed()) {
      SynthTask task;
      if (gen_task == "copyfirst") task = SynthTask::CopyFirst;
      else if (gen_task == "keywords") task = SynthTask::Keywords;
      else throw CorpusError("unknown task: " + gen_task);
      Dataset ds = gen_synthetic(task, gen_n, gen_seed, profile);
      save_corpus(ds, gen_out);
      err << "wrote " << ds.size() << " examples to " << gen_out << "\n";
      return 0;
    }

    if (bv->parsed()) {
      std::vector<std::string> paths = cli_detail::split_list(bv_corpus);
      if (paths.empty()) throw CorpusError("build-vocab: no corpus given");
      Dataset merged = load_corpus(paths[0], DatasetRole::Source);
      for (size_t i = 1; i < paths.size(); ++i) {
        merged = merge_datasets(merged, load_corpus(paths[i], DatasetRole::Source));
      }
      Vocab vocab = build_vocab(merged, bv_k);
      vocab.save(bv_out);
      err << "vocab size " << vocab.size() << " (incl. specials), hash "
          << vocab.content_hash() << "\n";
      return 0;
    }

    if (pre->parsed()) {
      TrainConfig cfg = load_config(pre_config);
      if (pre_seed) cfg.seed = *pre_seed;
      Vocab vocab = Vocab::load_file(pre_vocab);
      Dataset corpus = load_corpus(pre_corpus, DatasetRole::Source);
      cli_detail::LogSink log = cli_detail::LogSink::open(pre_log, err);
      TrainedModel model = train_pretrain(cfg, corpus, vocab, log.stream);
      save_model(pre_out, model);
      err << "saved checkpoint " << pre_out << "\n";
      return 0;
    }

    if (tr->parsed()) {
      TransferMode mode = parse_transfer_mode(tr_mode);
      TrainConfig cfg = load_config(tr_config);
      if (tr_seed) cfg.seed = *tr_seed;
      Vocab vocab = Vocab::load_file(tr_vocab);
      TrainedModel model = load_model(tr_ckpt);
      Dataset target = load_corpus(tr_target, DatasetRole::Target);
      Dataset source;
      if (mode == TransferMode::TRL) {
        if (tr_source.empty()) {
          throw TrainError("transfer --mode trl requires --source");
        }
        source = load_corpus(tr_source, DatasetRole::Source);
      }
      cli_detail::LogSink log = cli_detail::LogSink::open(tr_log, err);
      TrainedModel tuned = train_transfer(cfg, std::move(model), source, target,
                                          mode, vocab, log.stream);
      save_model(tr_out, tuned);
      err << "saved checkpoint " << tr_out << "\n";
      return 0;
    }

    if (dec->parsed()) {
      TrainedModel model = load_model(dec_ckpt);
      Vocab vocab = Vocab::load_file(dec_vocab);
      require_vocab_match(model, vocab);
      Dataset input = load_corpus(dec_input, DatasetRole::Test);
      size_t beam = dec_beam.value_or(model.config.beam);
      size_t max_dec = dec_max.value_or(model.config.max_dec);
      std::ofstream file_out;
      std::ostream* sink = &out;
      if (!dec_out.empty()) {
        file_out.open(dec_out, std::ios::binary);
        if (!file_out) throw CorpusError("cannot write output: " + dec_out);
        sink = &file_out;
      }
      StepOptions options{model.config.use_coverage, model.config.use_pointer};
      for (const Example& raw : input.examples) {
        Example ex = truncate_example(raw, model.config.max_enc,
                                      raw.summary.size());
        Tape tape;
        ModelVars mv = watch(tape, model.params, false);
        EncodedExample enc_ex = encode_example(ex, vocab);
        EncoderStates enc = encode(tape, mv, enc_ex.source.ids);
        ModelStepper stepper{&tape, &mv, &enc, &enc_ex.source.extended_ids,
                             enc_ex.source.mapping.extended_size(), options};
        DecodedSequence seq = beam_search(stepper, beam, max_dec);
        TokenSeq tokens =
            decode_ids(seq.content_ids(), vocab, enc_ex.source.mapping);
        for (size_t i = 0; i < tokens.size(); ++i) {
          if (i) *sink << ' ';
          *sink << tokens[i];
        }
        *sink << '\n';
      }
      return 0;
    }

    if (ev->parsed()) {
      TrainedModel model = load_model(ev_ckpt);
      Vocab vocab = Vocab::load_file(ev_vocab);
      require_vocab_match(model, vocab);
      std::vector<Dataset> tests;
      for (const std::string& path : cli_detail::split_list(ev_test)) {
        tests.push_back(load_corpus(path, DatasetRole::Test));
      }
      std::vector<double> weights;
      if (!ev_weights.empty()) {
        for (const std::string& w : cli_detail::split_list(ev_weights)) {
          weights.push_back(std::stod(w));
        }
      }
      size_t beam = ev_beam.value_or(model.config.beam);
      StepOptions options{model.config.use_coverage, model.config.use_pointer};
      EvalReport report =
          evaluate(model.params, vocab, tests, weights, beam,
                   model.config.max_enc, model.config.max_dec, options);
      out << format_report(report);
      return 0;
    }
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}

}  // namespace sumrl
