#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
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
#include "sumrl/tensor.hpp"
#include "sumrl/vocab.hpp"

namespace sumrl {

class TrainError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class EtaMode { Ramp, Constant };

struct TrainConfig {
  size_t batch_size = 48;
  size_t hidden = 256;
  size_t emb = 128;
  size_t max_enc = 400;
  size_t max_dec = 100;
  size_t vocab_k = 50000;
  double gamma0_pretrain = 0.15;
  double gamma0_rl = 0.001;
  int epochs_pretrain = 15;
  int epochs_transfer = 10;
  int epochs_coverage = 2;
  size_t beam = 4;
  double zeta_clip = 1.0;
  EtaMode eta_mode = EtaMode::Ramp;
  double eta_max = 1.0;
  double coverage_lambda = 1.0;
  bool use_coverage = false;
  bool use_pointer = true;  // off: switch forced to 1, no copying (ablation)
  double reward_w_r1 = 0.0;
  double reward_w_r2 = 0.0;
  double reward_w_rl = 1.0;
  uint64_t seed = 13;

  RewardConfig reward_config() const { return {reward_w_r1, reward_w_r2, reward_w_rl}; }

  void validate() const {
    if (batch_size < 1 || hidden < 1 || emb < 1 || max_enc < 1 || max_dec < 1 ||
        vocab_k < 1 || beam < 1) {
      throw TrainError("config: sizes must be positive");
    }
    if (gamma0_pretrain <= 0 || gamma0_rl <= 0) {
      throw TrainError("config: learning rates must be positive");
    }
    if (epochs_pretrain < 1 || epochs_transfer < 1 || epochs_coverage < 1) {
      throw TrainError("config: epoch counts must be positive");
    }
    if (zeta_clip <= 0.0 || zeta_clip > 1.0) {
      throw TrainError("config: zeta_clip must be in (0,1]");
    }
    if (eta_max < 0.0 || eta_max > 1.0) {
      throw TrainError("config: eta_max must be in [0,1]");
    }
    if (coverage_lambda < 0.0) throw TrainError("config: coverage_lambda must be >= 0");
    if (reward_w_r1 < 0 || reward_w_r2 < 0 || reward_w_rl < 0 ||
        reward_w_r1 + reward_w_r2 + reward_w_rl <= 0) {
      throw TrainError("config: reward weights must be >= 0 and sum > 0");
    }
  }
};

// Config file: UTF-8 `key = value` lines, `#` comments, unknown keys rejected.
inline TrainConfig parse_config(std::istream& in) {
  TrainConfig cfg;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::string trimmed = line;
    size_t hash = trimmed.find('#');
    if (hash != std::string::npos) trimmed.resize(hash);
    auto strip = [](std::string s) {
      size_t a = s.find_first_not_of(" \t");
      if (a == std::string::npos) return std::string();
      size_t b = s.find_last_not_of(" \t");
      return s.substr(a, b - a + 1);
    };
    trimmed = strip(trimmed);
    if (trimmed.empty()) continue;
    size_t eq = trimmed.find('=');
    if (eq == std::string::npos) {
      throw TrainError("config line " + std::to_string(lineno) +
                       ": expected key = value");
    }
    std::string key = strip(trimmed.substr(0, eq));
    std::string value = strip(trimmed.substr(eq + 1));
    if (key.empty() || value.empty()) {
      throw TrainError("config line " + std::to_string(lineno) +
                       ": expected key = value");
    }
    auto as_size = [&]() { return static_cast<size_t>(std::stoull(value)); };
    auto as_int = [&]() { return std::stoi(value); };
    auto as_real = [&]() { return std::stod(value); };
    try {
      if (key == "batch_size") cfg.batch_size = as_size();
      else if (key == "hidden") cfg.hidden = as_size();
      else if (key == "emb") cfg.emb = as_size();
      else if (key == "max_enc") cfg.max_enc = as_size();
      else if (key == "max_dec") cfg.max_dec = as_size();
      else if (key == "vocab_k") cfg.vocab_k = as_size();
      else if (key == "gamma0_pretrain") cfg.gamma0_pretrain = as_real();
      else if (key == "gamma0_rl") cfg.gamma0_rl = as_real();
      else if (key == "epochs_pretrain") cfg.epochs_pretrain = as_int();
      else if (key == "epochs_transfer") cfg.epochs_transfer = as_int();
      else if (key == "epochs_coverage") cfg.epochs_coverage = as_int();
      else if (key == "beam") cfg.beam = as_size();
      else if (key == "zeta_clip") cfg.zeta_clip = as_real();
      else if (key == "eta_max") cfg.eta_max = as_real();
      else if (key == "eta_mode") {
        if (value == "ramp") cfg.eta_mode = EtaMode::Ramp;
        else if (value == "constant") cfg.eta_mode = EtaMode::Constant;
        else throw TrainError("config: eta_mode must be ramp or constant");
      }
      else if (key == "coverage_lambda") cfg.coverage_lambda = as_real();
      else if (key == "use_coverage") cfg.use_coverage = as_int() != 0;
      else if (key == "use_pointer") cfg.use_pointer = as_int() != 0;
      else if (key == "reward_w_r1") cfg.reward_w_r1 = as_real();
      else if (key == "reward_w_r2") cfg.reward_w_r2 = as_real();
      else if (key == "reward_w_rl") cfg.reward_w_rl = as_real();
      else if (key == "seed") cfg.seed = std::stoull(value);
      else throw TrainError("config line " + std::to_string(lineno) +
                            ": unknown key '" + key + "'");
    } catch (const TrainError&) {
      throw;
    } catch (const std::exception&) {
      throw TrainError("config line " + std::to_string(lineno) +
                       ": bad value for '" + key + "'");
    }
  }
  cfg.validate();
  return cfg;
}

inline TrainConfig load_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw TrainError("cannot open config file: " + path);
  return parse_config(in);
}

inline std::string serialize_config(const TrainConfig& cfg) {
  std::ostringstream os;
  os << "batch_size = " << cfg.batch_size << '\n'
     << "hidden = " << cfg.hidden << '\n'
     << "emb = " << cfg.emb << '\n'
     << "max_enc = " << cfg.max_enc << '\n'
     << "max_dec = " << cfg.max_dec << '\n'
     << "vocab_k = " << cfg.vocab_k << '\n'
     << "gamma0_pretrain = " << cfg.gamma0_pretrain << '\n'
     << "gamma0_rl = " << cfg.gamma0_rl << '\n'
     << "epochs_pretrain = " << cfg.epochs_pretrain << '\n'
     << "epochs_transfer = " << cfg.epochs_transfer << '\n'
     << "epochs_coverage = " << cfg.epochs_coverage << '\n'
     << "beam = " << cfg.beam << '\n'
     << "zeta_clip = " << cfg.zeta_clip << '\n'
     << "eta_max = " << cfg.eta_max << '\n'
     << "eta_mode = " << (cfg.eta_mode == EtaMode::Ramp ? "ramp" : "constant") << '\n'
     << "coverage_lambda = " << cfg.coverage_lambda << '\n'
     << "use_coverage = " << (cfg.use_coverage ? 1 : 0) << '\n'
     << "use_pointer = " << (cfg.use_pointer ? 1 : 0) << '\n'
     << "reward_w_r1 = " << cfg.reward_w_r1 << '\n'
     << "reward_w_r2 = " << cfg.reward_w_r2 << '\n'
     << "reward_w_rl = " << cfg.reward_w_rl << '\n'
     << "seed = " << cfg.seed << '\n';
  return os.str();
}

// ---- schedules ----

// ζ ramps linearly from 0 to 1 over the run, capped at zeta_clip
inline double zeta_schedule(size_t step, size_t total_steps, double zeta_clip) {
  if (total_steps < 1) throw TrainError("zeta_schedule: total_steps must be >= 1");
  if (step > total_steps) throw TrainError("zeta_schedule: step beyond total");
  return std::min(zeta_clip,
                  static_cast<double>(step) / static_cast<double>(total_steps));
}

// γ_t = γ₀ / epoch
inline double lr_schedule(double gamma0, int epoch) {
  if (epoch < 1) throw TrainError("lr_schedule: epoch must be >= 1");
  return gamma0 / static_cast<double>(epoch);
}

struct ScheduleState {
  size_t step = 0;         // completed transfer steps
  size_t total_steps = 1;  // transfer steps in the whole run
  int epoch = 1;

  // 0 on the first step, min(1, clip) on the last step of the run
  double ramp_fraction() const {
    if (total_steps <= 1) return 0.0;
    return static_cast<double>(step) / static_cast<double>(total_steps - 1);
  }
  double zeta(double zeta_clip) const {
    return std::min(zeta_clip, ramp_fraction());
  }
  double eta(EtaMode mode, double eta_max) const {
    if (mode == EtaMode::Constant) return eta_max;
    return eta_max * std::min(1.0, ramp_fraction());
  }
};

enum class SamplingChoice { GroundTruth, ModelOutput };

// scheduled sampling: feed the model its own previous output with
// probability ζ
inline SamplingChoice scheduled_sampling_choice(double zeta, Rng& rng) {
  return rng.bernoulli(zeta) ? SamplingChoice::ModelOutput
                             : SamplingChoice::GroundTruth;
}

// ---- losses (scalar forms; the tape forms used in training mirror them) ----

// -Σ_t log p*_t[y_t], probability floored at 1e-10
inline real ce_loss(const std::vector<std::vector<real>>& step_dists,
                    const std::vector<int>& targets, real floor = 1e-10) {
  if (targets.empty() || step_dists.size() != targets.size()) {
    throw TrainError("ce_loss: need one distribution per target");
  }
  real total = 0.0;
  for (size_t t = 0; t < targets.size(); ++t) {
    int y = targets[t];
    if (y < 0 || static_cast<size_t>(y) >= step_dists[t].size()) {
      throw TrainError("ce_loss: target id out of range");
    }
    total -= std::log(std::max(step_dists[t][static_cast<size_t>(y)], floor));
  }
  return total;
}

// Advantage-form self-critic objective: minimizing
//   L = Σ_t(-log p(y'_t)) · (r(sampled) - r(greedy))
// raises the probability of samples that beat the greedy baseline. The
// rewards are constants w.r.t. the parameters.
inline real self_critic_loss(const DecodedSequence& sampled, real r_sampled,
                             real r_greedy) {
  real neg_logprob = 0.0;
  for (real lp : sampled.logprobs) neg_logprob -= lp;
  return neg_logprob * (r_sampled - r_greedy);
}

struct SelfCriticTerms {
  real sum_neg_logprob = 0.0;
  real r_sampled = 0.0;
  real r_greedy = 0.0;

  real loss() const { return sum_neg_logprob * (r_sampled - r_greedy); }
};

// (1-ζ)·SC(source) + ζ·SC(target)
inline real trl_loss(const SelfCriticTerms& source, const SelfCriticTerms& target,
                     real zeta) {
  if (zeta < 0.0 || zeta > 1.0) throw TrainError("trl_loss: zeta outside [0,1]");
  return (1.0 - zeta) * source.loss() + zeta * target.loss();
}

// (1-η)·CE + η·TRL
inline real mixed_loss(real ce, real trl, real eta) {
  if (eta < 0.0 || eta > 1.0) throw TrainError("mixed_loss: eta outside [0,1]");
  return (1.0 - eta) * ce + eta * trl;
}

// Σ_t Σ_i min(α_ti, cov_ti) where cov_t is the pre-step attention sum
inline real coverage_loss(const std::vector<std::vector<real>>& attentions,
                          const std::vector<std::vector<real>>& coverages) {
  if (attentions.size() != coverages.size()) {
    throw TrainError("coverage_loss: length mismatch");
  }
  real total = 0.0;
  for (size_t t = 0; t < attentions.size(); ++t) {
    if (attentions[t].size() != coverages[t].size()) {
      throw TrainError("coverage_loss: step shape mismatch");
    }
    for (size_t i = 0; i < attentions[t].size(); ++i) {
      total += std::min(attentions[t][i], coverages[t][i]);
    }
  }
  return total;
}

// ---- optimizer ----

struct OptimizerState {
  std::vector<Tensor> acc;  // per-parameter squared-gradient accumulators

  static OptimizerState init(ModelParams& params) {
    OptimizerState st;
    for (auto& [name, t] : params.named()) st.acc.emplace_back(t->shape);
    return st;
  }
};

// total L2 norm over a gradient set
inline real global_grad_norm(std::span<const Tensor> grads) {
  real sq = 0.0;
  for (const Tensor& g : grads) {
    for (real x : g.v) sq += x * x;
  }
  return std::sqrt(sq);
}

// AdaGrad with global-norm clipping: clip at `clip_norm`, then
// acc += g², param -= γ·g/(√acc + 1e-8).
inline void adagrad_update(ModelParams& params, std::vector<Tensor>& grads,
                           real lr, OptimizerState& state,
                           real clip_norm = 2.0, real eps = 1e-8) {
  auto named = params.named();
  if (grads.size() != named.size() || state.acc.size() != named.size()) {
    throw TrainError("adagrad_update: gradient set mismatch");
  }
  for (size_t p = 0; p < named.size(); ++p) {
    if (!named[p].second->same_shape(grads[p])) {
      throw TrainError("adagrad_update: shape mismatch for " + named[p].first);
    }
    check_finite(grads[p], "gradient");
  }
  if (clip_norm > 0.0) {
    real norm = global_grad_norm(grads);
    if (norm > clip_norm) {
      real scale = clip_norm / norm;
      for (Tensor& g : grads) {
        for (real& x : g.v) x *= scale;
      }
    }
  }
  for (size_t p = 0; p < named.size(); ++p) {
    Tensor& t = *named[p].second;
    Tensor& a = state.acc[p];
    const Tensor& g = grads[p];
    for (size_t i = 0; i < t.size(); ++i) {
      a.v[i] += g.v[i] * g.v[i];
      t.v[i] -= lr * g.v[i] / (std::sqrt(a.v[i]) + eps);
    }
  }
}

// ---- training loops ----

// Training log: CSV `epoch,step,loss_ce,loss_rl,zeta,eta,lr`.
class TrainLogger {
 public:
  explicit TrainLogger(std::ostream* out) : out_(out) {}

  void row(int epoch, size_t step, real loss_ce, real loss_rl, real zeta,
           real eta, real lr) {
    if (!out_) return;
    if (!header_written_) {
      *out_ << "epoch,step,loss_ce,loss_rl,zeta,eta,lr\n";
      header_written_ = true;
    }
    *out_ << epoch << ',' << step << ',' << loss_ce << ',' << loss_rl << ','
          << zeta << ',' << eta << ',' << lr << '\n';
  }

 private:
  std::ostream* out_;
  bool header_written_ = false;
};

struct EncodedExample {
  EncodedSource source;
  std::vector<int> targets;  // extended target ids, STOP appended
  TokenSeq reference;        // truncated summary tokens (reward reference)
};

inline EncodedExample encode_example(const Example& ex, const Vocab& vocab) {
  EncodedExample enc;
  enc.source = encode_source(ex.article, vocab);
  enc.targets = encode_target(ex.summary, vocab, enc.source.mapping);
  enc.targets.push_back(kStopId);
  enc.reference = ex.summary;
  return enc;
}

namespace detail {

// Teacher-forced CE over one example; with sampling probability > 0 the
// input token at each step is the model's previous argmax instead of the
// ground truth (the loss target is always the ground truth).
inline Tape::Var example_ce(Tape& tape, const ModelVars& mv,
                            const EncodedExample& ex, const EncoderStates& enc,
                            const StepOptions& opt, double sampling_prob,
                            Rng& rng, size_t* token_count) {
  DecoderState state = initial_decoder_state(tape, mv, enc);
  size_t ext_size = ex.source.mapping.extended_size();
  Tape::Var total = tape.constant_scalar(0.0);
  int prev = kStartId;
  int prev_model = -1;
  for (size_t t = 0; t < ex.targets.size(); ++t) {
    if (t > 0 && sampling_prob > 0.0 && prev_model >= 0 &&
        scheduled_sampling_choice(sampling_prob, rng) ==
            SamplingChoice::ModelOutput) {
      prev = prev_model;
    }
    auto [out, next] = decode_step(tape, mv, enc, state, prev,
                                   ex.source.extended_ids, ext_size, opt);
    int y = ex.targets[t];
    if (y < 0 || static_cast<size_t>(y) >= ext_size) {
      throw TrainError("ce: target id out of range");
    }
    total = tape.add(total, tape.neg(tape.log_clipped(
                                tape.pick(out.dist, static_cast<size_t>(y)))));
    const std::vector<real>& d = tape.val(out.dist).v;
    prev_model = static_cast<int>(
        std::max_element(d.begin(), d.end()) - d.begin());
    prev = y;
    state = next;
  }
  if (token_count) *token_count += ex.targets.size();
  return total;
}

// Coverage penalty accumulated on the tape alongside CE.
inline Tape::Var example_ce_with_coverage(Tape& tape, const ModelVars& mv,
                                          const EncodedExample& ex,
                                          const EncoderStates& enc, real lambda,
                                          size_t* token_count, bool pointer) {
  StepOptions opt;
  opt.coverage = true;
  opt.pointer = pointer;
  DecoderState state = initial_decoder_state(tape, mv, enc);
  size_t ext_size = ex.source.mapping.extended_size();
  Tape::Var total = tape.constant_scalar(0.0);
  int prev = kStartId;
  for (size_t t = 0; t < ex.targets.size(); ++t) {
    Tape::Var cov_before = state.coverage;
    auto [out, next] = decode_step(tape, mv, enc, state, prev,
                                   ex.source.extended_ids, ext_size, opt);
    int y = ex.targets[t];
    Tape::Var ce_t = tape.neg(tape.log_clipped(
        tape.pick(out.dist, static_cast<size_t>(y))));
    Tape::Var cov_t = tape.sum(tape.minimum(out.alpha, cov_before));
    total = tape.add(total, tape.add(ce_t, tape.scale(cov_t, lambda)));
    prev = y;
    state = next;
  }
  if (token_count) *token_count += ex.targets.size();
  return total;
}

// Greedy + sampled rollouts for one example; returns the tape node of the
// self-critic term (Σ -log p of sampled tokens, scaled by the advantage).
struct RolloutResult {
  Tape::Var loss;  // advantage-scaled negative log-likelihood
  real advantage = 0.0;
  real r_sampled = 0.0;
  real r_greedy = 0.0;
};

inline RolloutResult example_self_critic(Tape& tape, const ModelVars& mv,
                                         const EncodedExample& ex,
                                         const EncoderStates& enc,
                                         const StepOptions& opt, size_t max_dec,
                                         const Vocab& vocab,
                                         const RewardConfig& reward_cfg,
                                         Rng& rng) {
  ModelStepper stepper{&tape, &mv, &enc, &ex.source.extended_ids,
                       ex.source.mapping.extended_size(), opt};
  DecodedSequence greedy = greedy_decode(stepper, max_dec);
  DecodedSequence sampled = sample_decode(stepper, max_dec, rng);

  TokenSeq greedy_toks =
      decode_ids(greedy.content_ids(), vocab, ex.source.mapping);
  TokenSeq sampled_toks =
      decode_ids(sampled.content_ids(), vocab, ex.source.mapping);
  RolloutResult out;
  out.r_greedy = reward(greedy_toks, ex.reference, reward_cfg);
  out.r_sampled = reward(sampled_toks, ex.reference, reward_cfg);
  out.advantage = out.r_sampled - out.r_greedy;

  Tape::Var neg_lp = tape.constant_scalar(0.0);
  for (size_t t = 0; t < sampled.ids.size(); ++t) {
    neg_lp = tape.add(
        neg_lp, tape.neg(tape.log_clipped(tape.pick(
                    sampled.dist_vars[t],
                    static_cast<size_t>(sampled.ids[t])))));
  }
  out.loss = tape.scale(neg_lp, out.advantage);
  return out;
}

}  // namespace detail

struct TrainedModel {
  ModelParams params;
  TrainConfig config;
  std::string vocab_hash;
};

inline std::string checkpoint_metadata(const TrainConfig& cfg,
                                       const std::string& vocab_hash) {
  return serialize_config(cfg) + "vocab_hash: " + vocab_hash + "\n";
}

inline void save_model(const std::string& path, const TrainedModel& model) {
  save_checkpoint(path, model.params,
                  checkpoint_metadata(model.config, model.vocab_hash));
}

inline TrainedModel load_model(const std::string& path) {
  Checkpoint ck = load_checkpoint(path);
  TrainedModel m;
  m.params = std::move(ck.params);
  // metadata = config snapshot + trailing vocab_hash line
  std::istringstream meta(ck.metadata);
  std::ostringstream config_part;
  std::string line;
  while (std::getline(meta, line)) {
    if (line.rfind("vocab_hash: ", 0) == 0) {
      m.vocab_hash = line.substr(12);
    } else {
      config_part << line << '\n';
    }
  }
  std::istringstream cfg_in(config_part.str());
  m.config = parse_config(cfg_in);
  return m;
}

inline void require_vocab_match(const TrainedModel& model, const Vocab& vocab) {
  if (model.vocab_hash != vocab.content_hash()) {
    throw TrainError("vocab mismatch: checkpoint was trained with a different vocabulary");
  }
}

// CE pre-training on the source dataset, followed by the optional coverage
// epochs (CE + λ·coverage at the RL learning rate).
inline TrainedModel train_pretrain(const TrainConfig& cfg, const Dataset& source,
                                   const Vocab& vocab,
                                   std::ostream* log = nullptr) {
  cfg.validate();
  if (source.empty()) throw TrainError("train_pretrain: empty dataset");
  Dataset data = truncate_dataset(source, cfg.max_enc, cfg.max_dec);

  ModelDims dims{vocab.size(), cfg.emb, cfg.hidden, cfg.hidden};
  ModelParams params = ModelParams::init(dims, cfg.seed);
  OptimizerState opt_state = OptimizerState::init(params);
  TrainLogger logger(log);
  Rng rng(mix_seed(cfg.seed, 0x9E7));

  size_t global_step = 0;
  auto run_epoch = [&](int epoch, int epoch_tag, real lr, bool coverage) {
    for (const Batch& batch : batch_iter(data, cfg.batch_size, cfg.seed, epoch_tag)) {
      Tape tape;
      ModelVars mv = watch(tape, params, true);
      Tape::Var total = tape.constant_scalar(0.0);
      size_t tokens = 0;
      for (const Example& ex : batch.examples) {
        EncodedExample enc_ex = encode_example(ex, vocab);
        EncoderStates enc = encode(tape, mv, enc_ex.source.ids);
        Tape::Var ex_loss;
        if (coverage) {
          ex_loss = detail::example_ce_with_coverage(tape, mv, enc_ex, enc,
                                                     cfg.coverage_lambda,
                                                     &tokens, cfg.use_pointer);
        } else {
          StepOptions opt;
          opt.pointer = cfg.use_pointer;
          ex_loss = detail::example_ce(tape, mv, enc_ex, enc, opt, 0.0, rng,
                                       &tokens);
        }
        total = tape.add(total, ex_loss);
      }
      Tape::Var loss =
          tape.scale(total, 1.0 / static_cast<double>(batch.size()));
      tape.backward(loss);
      std::vector<Tensor> grads;
      for (Tape::Var v : mv.ordered()) grads.push_back(tape.grad(v));
      adagrad_update(params, grads, lr, opt_state);
      real ce_per_token = tape.val(total).v[0] / static_cast<double>(tokens);
      logger.row(epoch, global_step, ce_per_token, 0.0, 0.0, 0.0, lr);
      ++global_step;
    }
  };

  for (int epoch = 1; epoch <= cfg.epochs_pretrain; ++epoch) {
    run_epoch(epoch, epoch, lr_schedule(cfg.gamma0_pretrain, epoch), false);
  }
  if (cfg.use_coverage) {
    for (int epoch = 1; epoch <= cfg.epochs_coverage; ++epoch) {
      run_epoch(cfg.epochs_pretrain + epoch, 1000 + epoch,
                lr_schedule(cfg.gamma0_rl, epoch), true);
    }
  }
  return {std::move(params), cfg, vocab.content_hash()};
}

enum class TransferMode { TL, TRL };

inline TransferMode parse_transfer_mode(const std::string& s) {
  if (s == "tl" || s == "TL") return TransferMode::TL;
  if (s == "trl" || s == "TRL") return TransferMode::TRL;
  throw TrainError("unknown transfer mode: " + s);
}

// TL: continue CE training on the target dataset only.
// TRL: per step, one batch from each dataset; greedy+sampled rollouts feed
// the dual self-critic objective weighted by ζ, mixed with the target-batch
// CE term by η; scheduled sampling probability is ζ.
inline TrainedModel train_transfer(const TrainConfig& cfg, TrainedModel model,
                                   const Dataset& source, const Dataset& target,
                                   TransferMode mode, const Vocab& vocab,
                                   std::ostream* log = nullptr) {
  cfg.validate();
  require_vocab_match(model, vocab);
  if (target.empty()) throw TrainError("train_transfer: empty target dataset");
  if (mode == TransferMode::TRL && source.empty()) {
    throw TrainError("train_transfer: empty source dataset");
  }

  ModelParams& params = model.params;
  if (params.dims.vocab_size != vocab.size() || params.dims.emb != cfg.emb ||
      params.dims.hidden != cfg.hidden) {
    throw TrainError("train_transfer: checkpoint dimensions do not match config");
  }

  Dataset target_data = truncate_dataset(target, cfg.max_enc, cfg.max_dec);
  OptimizerState opt_state = OptimizerState::init(params);  // fresh accumulators
  TrainLogger logger(log);
  Rng rng(mix_seed(cfg.seed, 0x7A4));
  RewardConfig reward_cfg = cfg.reward_config();

  if (mode == TransferMode::TL) {
    size_t global_step = 0;
    for (int epoch = 1; epoch <= cfg.epochs_transfer; ++epoch) {
      real lr = lr_schedule(cfg.gamma0_pretrain, epoch);
      for (const Batch& batch :
           batch_iter(target_data, cfg.batch_size, cfg.seed, epoch)) {
        Tape tape;
        ModelVars mv = watch(tape, params, true);
        Tape::Var total = tape.constant_scalar(0.0);
        size_t tokens = 0;
        for (const Example& ex : batch.examples) {
          EncodedExample enc_ex = encode_example(ex, vocab);
          EncoderStates enc = encode(tape, mv, enc_ex.source.ids);
          StepOptions opt;
          opt.pointer = cfg.use_pointer;
          total = tape.add(total, detail::example_ce(tape, mv, enc_ex, enc, opt,
                                                     0.0, rng, &tokens));
        }
        Tape::Var loss =
            tape.scale(total, 1.0 / static_cast<double>(batch.size()));
        tape.backward(loss);
        std::vector<Tensor> grads;
        for (Tape::Var v : mv.ordered()) grads.push_back(tape.grad(v));
        adagrad_update(params, grads, lr, opt_state);
        logger.row(epoch, global_step,
                   tape.val(total).v[0] / static_cast<double>(tokens), 0.0, 0.0,
                   0.0, lr);
        ++global_step;
      }
    }
    model.config = cfg;
    return model;
  }

  // TRL
  Dataset source_data = truncate_dataset(source, cfg.max_enc, cfg.max_dec);
  size_t steps_per_epoch =
      (target_data.size() + cfg.batch_size - 1) / cfg.batch_size;
  ScheduleState sched;
  sched.total_steps = steps_per_epoch * static_cast<size_t>(cfg.epochs_transfer);

  // source batches cycle independently of the target epoch boundaries
  std::vector<Batch> source_batches;
  size_t source_cursor = 0;
  int source_pass = 0;
  auto next_source_batch = [&]() -> const Batch& {
    if (source_cursor >= source_batches.size()) {
      ++source_pass;
      source_batches =
          batch_iter(source_data, cfg.batch_size, cfg.seed, 5000 + source_pass);
      source_cursor = 0;
    }
    return source_batches[source_cursor++];
  };

  for (int epoch = 1; epoch <= cfg.epochs_transfer; ++epoch) {
    real lr = lr_schedule(cfg.gamma0_rl, epoch);
    sched.epoch = epoch;
    for (const Batch& target_batch :
         batch_iter(target_data, cfg.batch_size, cfg.seed, epoch)) {
      const Batch& source_batch = next_source_batch();
      double zeta = sched.zeta(cfg.zeta_clip);
      double eta = sched.eta(cfg.eta_mode, cfg.eta_max);

      Tape tape;
      ModelVars mv = watch(tape, params, true);
      StepOptions opt;
      opt.pointer = cfg.use_pointer;

      // CE branch on the target batch, scheduled sampling at probability ζ
      Tape::Var ce_total = tape.constant_scalar(0.0);
      size_t tokens = 0;
      std::vector<EncoderStates> target_encs;
      std::vector<EncodedExample> target_enc_exs;
      target_encs.reserve(target_batch.size());
      for (const Example& ex : target_batch.examples) {
        EncodedExample enc_ex = encode_example(ex, vocab);
        EncoderStates enc = encode(tape, mv, enc_ex.source.ids);
        ce_total = tape.add(ce_total, detail::example_ce(tape, mv, enc_ex, enc,
                                                         opt, zeta, rng, &tokens));
        target_encs.push_back(enc);
        target_enc_exs.push_back(std::move(enc_ex));
      }
      Tape::Var ce =
          tape.scale(ce_total, 1.0 / static_cast<double>(target_batch.size()));

      // self-critic terms on both batches (encoder states shared with CE
      // for the target batch)
      Tape::Var sc_source = tape.constant_scalar(0.0);
      for (const Example& ex : source_batch.examples) {
        EncodedExample enc_ex = encode_example(ex, vocab);
        EncoderStates enc = encode(tape, mv, enc_ex.source.ids);
        auto rr = detail::example_self_critic(tape, mv, enc_ex, enc, opt,
                                              cfg.max_dec, vocab, reward_cfg, rng);
        sc_source = tape.add(sc_source, rr.loss);
      }
      sc_source = tape.scale(
          sc_source, 1.0 / static_cast<double>(source_batch.size()));

      Tape::Var sc_target = tape.constant_scalar(0.0);
      for (size_t i = 0; i < target_batch.size(); ++i) {
        auto rr = detail::example_self_critic(tape, mv, target_enc_exs[i],
                                              target_encs[i], opt, cfg.max_dec,
                                              vocab, reward_cfg, rng);
        sc_target = tape.add(sc_target, rr.loss);
      }
      sc_target = tape.scale(
          sc_target, 1.0 / static_cast<double>(target_batch.size()));

      Tape::Var trl = tape.add(tape.scale(sc_source, 1.0 - zeta),
                               tape.scale(sc_target, zeta));
      Tape::Var loss = tape.add(tape.scale(ce, 1.0 - eta), tape.scale(trl, eta));

      tape.backward(loss);
      std::vector<Tensor> grads;
      for (Tape::Var v : mv.ordered()) grads.push_back(tape.grad(v));
      adagrad_update(params, grads, lr, opt_state);

      logger.row(epoch, sched.step,
                 tape.val(ce_total).v[0] / static_cast<double>(tokens),
                 tape.val(trl).v[0], zeta, eta, lr);
      ++sched.step;
    }
  }
  model.config = cfg;
  return model;
}

}  // namespace sumrl
