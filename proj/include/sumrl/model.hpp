#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "sumrl/tensor.hpp"
#include "sumrl/vocab.hpp"

namespace sumrl {

class ModelError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ModelDims {
  size_t vocab_size = 0;
  size_t emb = 0;
  size_t hidden = 0;
  size_t attn = 0;
};

// Every trainable tensor of the pointer-generator. The encoder LSTM reads
// word embeddings; the decoder LSTM reads [embedding ⊕ previous context].
struct ModelParams {
  ModelDims dims;

  Tensor embedding;  // [vocab × emb]

  Tensor enc_input_w, enc_recur_w, enc_bias;  // [4H×emb], [4H×H], [4H]
  Tensor dec_input_w, dec_recur_w, dec_bias;  // [4H×(emb+H)], [4H×H], [4H]

  Tensor att_enc_w;  // [A×H], projects encoder states
  Tensor att_dec_w;  // [A×H], projects decoder state
  Tensor att_bias;   // [A]
  Tensor att_score;  // [A], energy read-out
  Tensor att_cov_w;  // [A], per-position coverage contribution

  Tensor out_hidden_w, out_hidden_b;  // [H×2H], [H]
  Tensor out_vocab_w, out_vocab_b;    // [vocab×H], [vocab]

  Tensor sw_context_w, sw_state_w, sw_input_w, sw_bias;  // [H],[H],[emb],[1]

  static ModelParams init(const ModelDims& d, uint64_t seed) {
    if (d.vocab_size < static_cast<size_t>(kNumSpecials) || d.emb < 1 ||
        d.hidden < 1 || d.attn < 1) {
      throw ModelError("ModelParams::init: bad dimensions");
    }
    ModelParams p;
    p.dims = d;
    size_t h = d.hidden, e = d.emb, a = d.attn, v = d.vocab_size;
    p.embedding = Tensor::mat(v, e);
    p.enc_input_w = Tensor::mat(4 * h, e);
    p.enc_recur_w = Tensor::mat(4 * h, h);
    p.enc_bias = Tensor::vec(4 * h);
    p.dec_input_w = Tensor::mat(4 * h, e + h);
    p.dec_recur_w = Tensor::mat(4 * h, h);
    p.dec_bias = Tensor::vec(4 * h);
    p.att_enc_w = Tensor::mat(a, h);
    p.att_dec_w = Tensor::mat(a, h);
    p.att_bias = Tensor::vec(a);
    p.att_score = Tensor::vec(a);
    p.att_cov_w = Tensor::vec(a);
    p.out_hidden_w = Tensor::mat(h, 2 * h);
    p.out_hidden_b = Tensor::vec(h);
    p.out_vocab_w = Tensor::mat(v, h);
    p.out_vocab_b = Tensor::vec(v);
    p.sw_context_w = Tensor::vec(h);
    p.sw_state_w = Tensor::vec(h);
    p.sw_input_w = Tensor::vec(e);
    p.sw_bias = Tensor::vec(1);

    Rng rng(mix_seed(seed, 0x1417));
    // multiplicative weights uniform, additive biases zero
    for (auto& [name, t] : p.named()) {
      bool is_bias = name.size() >= 2 && (name.ends_with("_b") ||
                                          name.ends_with("bias"));
      if (!is_bias) t->fill_uniform(rng, -0.02, 0.02);
    }
    return p;
  }

  // canonical order, also the checkpoint tensor order
  std::vector<std::pair<std::string, Tensor*>> named() {
    return {
        {"embedding", &embedding},
        {"encoder.input_w", &enc_input_w},
        {"encoder.recur_w", &enc_recur_w},
        {"encoder.bias", &enc_bias},
        {"decoder.input_w", &dec_input_w},
        {"decoder.recur_w", &dec_recur_w},
        {"decoder.bias", &dec_bias},
        {"attention.enc_w", &att_enc_w},
        {"attention.dec_w", &att_dec_w},
        {"attention.bias", &att_bias},
        {"attention.score_w", &att_score},
        {"attention.coverage_w", &att_cov_w},
        {"output.hidden_w", &out_hidden_w},
        {"output.hidden_b", &out_hidden_b},
        {"output.vocab_w", &out_vocab_w},
        {"output.vocab_b", &out_vocab_b},
        {"switch.context_w", &sw_context_w},
        {"switch.state_w", &sw_state_w},
        {"switch.input_w", &sw_input_w},
        {"switch.bias", &sw_bias},
    };
  }

  std::vector<std::pair<std::string, const Tensor*>> named() const {
    auto mut = const_cast<ModelParams*>(this)->named();
    std::vector<std::pair<std::string, const Tensor*>> out;
    out.reserve(mut.size());
    for (auto& [n, t] : mut) out.emplace_back(n, t);
    return out;
  }
};

// ---- checkpoint format ----
//
//   magic   "TRLCKPT1" (8 bytes)
//   u32 LE  tensor count
//   per tensor:
//     u32 LE name length, UTF-8 name
//     u32 LE rank, u32 LE dims...
//     f32 LE payload, row-major
//   u32 LE  metadata length, metadata bytes (config snapshot + vocab hash)

inline constexpr char kCheckpointMagic[8] = {'T', 'R', 'L', 'C',
                                             'K', 'P', 'T', '1'};

namespace detail {

inline void write_u32(std::ostream& out, uint32_t x) {
  char b[4] = {static_cast<char>(x & 0xff), static_cast<char>((x >> 8) & 0xff),
               static_cast<char>((x >> 16) & 0xff),
               static_cast<char>((x >> 24) & 0xff)};
  out.write(b, 4);
}

inline uint32_t read_u32(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in) throw ModelError("checkpoint: truncated file");
  return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
         (static_cast<uint32_t>(b[2]) << 16) |
         (static_cast<uint32_t>(b[3]) << 24);
}

inline void write_f32(std::ostream& out, float f) {
  uint32_t bits;
  std::memcpy(&bits, &f, 4);
  write_u32(out, bits);
}

inline float read_f32(std::istream& in) {
  uint32_t bits = read_u32(in);
  float f;
  std::memcpy(&f, &bits, 4);
  return f;
}

}  // namespace detail

inline void save_checkpoint(std::ostream& out, const ModelParams& params,
                            const std::string& metadata) {
  out.write(kCheckpointMagic, 8);
  auto named = params.named();
  detail::write_u32(out, static_cast<uint32_t>(named.size()));
  for (auto& [name, t] : named) {
    detail::write_u32(out, static_cast<uint32_t>(name.size()));
    out.write(name.data(), static_cast<long>(name.size()));
    detail::write_u32(out, static_cast<uint32_t>(t->shape.size()));
    for (size_t d : t->shape) detail::write_u32(out, static_cast<uint32_t>(d));
    for (real x : t->v) detail::write_f32(out, static_cast<float>(x));
  }
  detail::write_u32(out, static_cast<uint32_t>(metadata.size()));
  out.write(metadata.data(), static_cast<long>(metadata.size()));
  if (!out) throw ModelError("checkpoint: write failed");
}

inline void save_checkpoint(const std::string& path, const ModelParams& params,
                            const std::string& metadata) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ModelError("cannot write checkpoint: " + path);
  save_checkpoint(out, params, metadata);
}

struct Checkpoint {
  ModelParams params;
  std::string metadata;
};

inline Checkpoint load_checkpoint(std::istream& in) {
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kCheckpointMagic, 8) != 0) {
    throw ModelError("checkpoint: bad magic");
  }
  uint32_t count = detail::read_u32(in);
  std::map<std::string, Tensor> tensors;
  for (uint32_t i = 0; i < count; ++i) {
    uint32_t name_len = detail::read_u32(in);
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    uint32_t rank = detail::read_u32(in);
    std::vector<size_t> shape(rank);
    for (uint32_t r = 0; r < rank; ++r) shape[r] = detail::read_u32(in);
    Tensor t(shape);
    for (real& x : t.v) x = static_cast<real>(detail::read_f32(in));
    if (!in) throw ModelError("checkpoint: truncated tensor " + name);
    tensors.emplace(std::move(name), std::move(t));
  }
  uint32_t meta_len = detail::read_u32(in);
  std::string metadata(meta_len, '\0');
  in.read(metadata.data(), meta_len);
  if (!in) throw ModelError("checkpoint: truncated metadata");

  auto find = [&](const char* name) -> Tensor& {
    auto it = tensors.find(name);
    if (it == tensors.end()) {
      throw ModelError(std::string("checkpoint: missing tensor ") + name);
    }
    return it->second;
  };
  ModelDims d;
  d.vocab_size = find("embedding").rows();
  d.emb = find("embedding").cols();
  d.hidden = find("encoder.recur_w").cols();
  d.attn = find("attention.bias").size();

  Checkpoint ck;
  ck.params = ModelParams::init(d, 0);
  ck.metadata = std::move(metadata);
  size_t used = 0;
  for (auto& [name, t] : ck.params.named()) {
    Tensor& loaded = find(name.c_str());
    if (loaded.shape != t->shape) {
      throw ModelError("checkpoint: shape mismatch for " + name);
    }
    *t = std::move(loaded);
    ++used;
  }
  if (used != tensors.size()) {
    throw ModelError("checkpoint: unexpected extra tensors");
  }
  return ck;
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ModelError("cannot open checkpoint: " + path);
  return load_checkpoint(in);
}

// ---- forward graph ----

struct ModelVars {
  Tape::Var embedding;
  LstmVars enc, dec;
  Tape::Var att_enc_w, att_dec_w, att_bias, att_score, att_cov_w;
  Tape::Var out_hidden_w, out_hidden_b, out_vocab_w, out_vocab_b;
  Tape::Var sw_context_w, sw_state_w, sw_input_w, sw_bias;
  ModelDims dims;

  // same order as ModelParams::named()
  std::vector<Tape::Var> ordered() const {
    return {embedding,    enc.input_w,  enc.recur_w,  enc.bias,
            dec.input_w,  dec.recur_w,  dec.bias,     att_enc_w,
            att_dec_w,    att_bias,     att_score,    att_cov_w,
            out_hidden_w, out_hidden_b, out_vocab_w,  out_vocab_b,
            sw_context_w, sw_state_w,   sw_input_w,   sw_bias};
  }
};

inline ModelVars watch(Tape& tape, const ModelParams& p, bool track) {
  ModelVars mv;
  mv.dims = p.dims;
  mv.embedding = tape.input(p.embedding, track);
  mv.enc = {tape.input(p.enc_input_w, track), tape.input(p.enc_recur_w, track),
            tape.input(p.enc_bias, track)};
  mv.dec = {tape.input(p.dec_input_w, track), tape.input(p.dec_recur_w, track),
            tape.input(p.dec_bias, track)};
  mv.att_enc_w = tape.input(p.att_enc_w, track);
  mv.att_dec_w = tape.input(p.att_dec_w, track);
  mv.att_bias = tape.input(p.att_bias, track);
  mv.att_score = tape.input(p.att_score, track);
  mv.att_cov_w = tape.input(p.att_cov_w, track);
  mv.out_hidden_w = tape.input(p.out_hidden_w, track);
  mv.out_hidden_b = tape.input(p.out_hidden_b, track);
  mv.out_vocab_w = tape.input(p.out_vocab_w, track);
  mv.out_vocab_b = tape.input(p.out_vocab_b, track);
  mv.sw_context_w = tape.input(p.sw_context_w, track);
  mv.sw_state_w = tape.input(p.sw_state_w, track);
  mv.sw_input_w = tape.input(p.sw_input_w, track);
  mv.sw_bias = tape.input(p.sw_bias, track);
  return mv;
}

struct EncoderStates {
  Tape::Var states;      // [T_e × H]
  Tape::Var att_premul;  // [T_e × A] = states · att_enc_w^T
  LstmState final_state;
  size_t length = 0;
};

// Source ids are plain vocab ids (OOV positions already folded to UNK).
inline EncoderStates encode(Tape& tape, const ModelVars& mv,
                            std::span<const int> source_ids) {
  if (source_ids.empty()) throw ModelError("encode: empty input");
  size_t h = mv.dims.hidden;
  LstmState st{tape.constant(Tensor::vec(h)), tape.constant(Tensor::vec(h))};
  std::vector<Tape::Var> states;
  states.reserve(source_ids.size());
  for (int id : source_ids) {
    if (id < 0 || static_cast<size_t>(id) >= mv.dims.vocab_size) {
      throw ModelError("encode: id out of vocab range: " + std::to_string(id));
    }
    Tape::Var x = tape.row(mv.embedding, static_cast<size_t>(id));
    st = lstm_cell(tape, x, st, mv.enc);
    states.push_back(st.h);
  }
  EncoderStates enc;
  enc.states = tape.stack_rows(states);
  enc.att_premul = tape.matmul_nt(enc.states, mv.att_enc_w);
  enc.final_state = st;
  enc.length = source_ids.size();
  return enc;
}

struct DecoderState {
  LstmState lstm;
  Tape::Var context;   // c_{t-1}, zeros before the first step
  Tape::Var coverage;  // [T_e], running sum of past attentions (zeros when off)
};

inline DecoderState initial_decoder_state(Tape& tape, const ModelVars& mv,
                                          const EncoderStates& enc) {
  DecoderState st;
  st.lstm = enc.final_state;
  st.context = tape.constant(Tensor::vec(mv.dims.hidden));
  st.coverage = tape.constant(Tensor::vec(enc.length));
  return st;
}

struct Attention {
  Tape::Var alpha;    // [T_e]
  Tape::Var context;  // [H]
};

// coverage < 0 disables the coverage energy term
inline Attention attend(Tape& tape, const ModelVars& mv,
                        const EncoderStates& enc, Tape::Var state,
                        Tape::Var coverage = -1) {
  Tape::Var dec_proj = tape.add(tape.matvec(mv.att_dec_w, state), mv.att_bias);
  Tape::Var pre = tape.add_rows(enc.att_premul, dec_proj);
  if (coverage >= 0) {
    pre = tape.add(pre, tape.outer(coverage, mv.att_cov_w));
  }
  Tape::Var energies = tape.matvec(tape.tanh_(pre), mv.att_score);
  Attention att;
  att.alpha = tape.softmax(energies);
  att.context = tape.vecmat(att.alpha, enc.states);
  return att;
}

inline Tape::Var vocab_dist(Tape& tape, const ModelVars& mv, Tape::Var state,
                            Tape::Var context) {
  Tape::Var inner = tape.add(
      tape.matvec(mv.out_hidden_w, tape.concat(state, context)),
      mv.out_hidden_b);
  Tape::Var logits = tape.add(tape.matvec(mv.out_vocab_w, inner), mv.out_vocab_b);
  return tape.softmax(logits);
}

// generation-vs-copy switch, a scalar in (0,1)
inline Tape::Var switch_prob(Tape& tape, const ModelVars& mv, Tape::Var context,
                             Tape::Var state, Tape::Var input_emb) {
  Tape::Var pre = tape.add(
      tape.add(tape.dot(mv.sw_context_w, context), tape.dot(mv.sw_state_w, state)),
      tape.add(tape.dot(mv.sw_input_w, input_emb), mv.sw_bias));
  return tape.sigmoid_(pre);
}

// p* over the extended vocabulary: switch · p_vocab on vocab slots plus
// (1-switch) · attention mass scattered by extended id. OOV slots get copy
// mass only.
inline Tape::Var final_dist(Tape& tape, Tape::Var p_vocab, Tape::Var alpha,
                            Tape::Var switch_p, std::vector<int> extended_ids,
                            size_t extended_size) {
  Tape::Var gen = tape.scale_by(tape.pad(p_vocab, extended_size), switch_p);
  Tape::Var copy = tape.scale_by(
      tape.scatter_sum(alpha, std::move(extended_ids), extended_size),
      tape.one_minus(switch_p));
  return tape.add(gen, copy);
}

struct StepOptions {
  bool coverage = false;
  bool pointer = true;  // false forces switch = 1 (no copying)
};

struct StepOutput {
  Tape::Var alpha;
  Tape::Var context;
  Tape::Var switch_p;
  Tape::Var dist;  // p* over the extended vocabulary
};

// One decoder step: LSTM on [e(prev) ⊕ c_{t-1}], attention, vocab
// distribution, switch, final distribution, coverage update.
inline std::pair<StepOutput, DecoderState> decode_step(
    Tape& tape, const ModelVars& mv, const EncoderStates& enc,
    const DecoderState& state, int prev_id,
    const std::vector<int>& extended_ids, size_t extended_size,
    const StepOptions& opt = {}) {
  if (prev_id < 0 || static_cast<size_t>(prev_id) >= extended_size) {
    throw ModelError("decode_step: prev id out of range: " +
                     std::to_string(prev_id));
  }
  // copied OOV ids have no embedding of their own and feed back as UNK
  size_t emb_id = static_cast<size_t>(prev_id) < mv.dims.vocab_size
                      ? static_cast<size_t>(prev_id)
                      : static_cast<size_t>(kUnkId);
  Tape::Var x = tape.row(mv.embedding, emb_id);
  LstmState lstm = lstm_cell(tape, tape.concat(x, state.context), state.lstm, mv.dec);
  Tape::Var s = lstm.h;
  Attention att = attend(tape, mv, enc, s, opt.coverage ? state.coverage : -1);
  Tape::Var p_vocab = vocab_dist(tape, mv, s, att.context);

  StepOutput out;
  out.alpha = att.alpha;
  out.context = att.context;
  if (opt.pointer) {
    out.switch_p = switch_prob(tape, mv, att.context, s, x);
    out.dist = final_dist(tape, p_vocab, att.alpha, out.switch_p, extended_ids,
                          extended_size);
  } else {
    out.switch_p = tape.constant_scalar(1.0);
    out.dist = tape.pad(p_vocab, extended_size);
  }

  DecoderState next;
  next.lstm = lstm;
  next.context = att.context;
  next.coverage =
      opt.coverage ? tape.add(state.coverage, att.alpha) : state.coverage;
  return {out, next};
}

// Adapts the model to the decoding algorithms: start() yields the initial
// decoder state, step() runs one decode_step and exposes p* both as values
// and as the tape node (for loss construction on recording tapes).
struct ModelStepper {
  Tape* tape = nullptr;
  const ModelVars* mv = nullptr;
  const EncoderStates* enc = nullptr;
  const std::vector<int>* extended_ids = nullptr;
  size_t ext_size = 0;
  StepOptions options;

  using State = DecoderState;

  struct Result {
    std::vector<real> dist;
    Tape::Var dist_var;
    State next;
  };

  State start() const { return initial_decoder_state(*tape, *mv, *enc); }
  size_t extended_size() const { return ext_size; }

  Result step(int prev_id, const State& state) const {
    auto [out, next] =
        decode_step(*tape, *mv, *enc, state, prev_id, *extended_ids, ext_size,
                    options);
    return {tape->val(out.dist).v, out.dist, next};
  }
};

}  // namespace sumrl
