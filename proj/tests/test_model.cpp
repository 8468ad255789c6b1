#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <sstream>
#include <vector>

#include "sumrl/model.hpp"
#include "sumrl/tensor.hpp"
#include "sumrl/train.hpp"
#include "sumrl/vocab.hpp"

using namespace sumrl;

namespace {

ModelDims tiny_dims() { return ModelDims{10, 3, 4, 4}; }

// Plain-loop reference forward pass, independent of the tape ops.
struct PlainRef {
  const ModelParams& p;

  static real sigmoid(real x) { return 1.0 / (1.0 + std::exp(-x)); }

  std::vector<real> matvec(const Tensor& w, const std::vector<real>& x) const {
    std::vector<real> y(w.rows(), 0.0);
    for (size_t i = 0; i < w.rows(); ++i) {
      for (size_t j = 0; j < w.cols(); ++j) y[i] += w.at(i, j) * x[j];
    }
    return y;
  }

  void lstm(const Tensor& wx, const Tensor& wh, const Tensor& b,
            const std::vector<real>& x, std::vector<real>& h,
            std::vector<real>& c) const {
    size_t hidden = h.size();
    std::vector<real> z = matvec(wx, x);
    std::vector<real> zh = matvec(wh, h);
    for (size_t i = 0; i < z.size(); ++i) z[i] += zh[i] + b.v[i];
    std::vector<real> nh(hidden), nc(hidden);
    for (size_t u = 0; u < hidden; ++u) {
      real gi = sigmoid(z[u]);
      real gf = sigmoid(z[hidden + u]);
      real go = sigmoid(z[2 * hidden + u]);
      real gc = std::tanh(z[3 * hidden + u]);
      nc[u] = gf * c[u] + gi * gc;
      nh[u] = go * std::tanh(nc[u]);
    }
    h = nh;
    c = nc;
  }

  std::vector<real> embed(int id) const {
    std::vector<real> e(p.dims.emb);
    for (size_t j = 0; j < p.dims.emb; ++j) {
      e[j] = p.embedding.at(static_cast<size_t>(id), j);
    }
    return e;
  }

  // full greedy-input-free trace: returns p* per step for forced prev ids
  std::vector<std::vector<real>> trace(const std::vector<int>& source_ids,
                                       const std::vector<int>& extended_ids,
                                       size_t ext_size,
                                       const std::vector<int>& prev_ids) const {
    size_t H = p.dims.hidden;
    std::vector<std::vector<real>> enc_states;
    std::vector<real> h(H, 0.0), c(H, 0.0);
    for (int id : source_ids) {
      lstm(p.enc_input_w, p.enc_recur_w, p.enc_bias, embed(id), h, c);
      enc_states.push_back(h);
    }
    std::vector<real> dh = h, dc = c;
    std::vector<real> context(H, 0.0);
    std::vector<std::vector<real>> dists;
    for (int prev : prev_ids) {
      int emb_id = prev < static_cast<int>(p.dims.vocab_size) ? prev : kUnkId;
      std::vector<real> x = embed(emb_id);
      std::vector<real> input = x;
      input.insert(input.end(), context.begin(), context.end());
      lstm(p.dec_input_w, p.dec_recur_w, p.dec_bias, input, dh, dc);

      // attention
      std::vector<real> dec_proj = matvec(p.att_dec_w, dh);
      for (size_t a = 0; a < dec_proj.size(); ++a) dec_proj[a] += p.att_bias.v[a];
      std::vector<real> energies;
      for (const std::vector<real>& hs : enc_states) {
        std::vector<real> e = matvec(p.att_enc_w, hs);
        real f = 0.0;
        for (size_t a = 0; a < e.size(); ++a) {
          f += p.att_score.v[a] * std::tanh(e[a] + dec_proj[a]);
        }
        energies.push_back(f);
      }
      real mx = energies[0];
      for (real e : energies) mx = std::max(mx, e);
      real sum = 0.0;
      std::vector<real> alpha;
      for (real e : energies) {
        alpha.push_back(std::exp(e - mx));
        sum += alpha.back();
      }
      for (real& a : alpha) a /= sum;
      std::vector<real> ctx(H, 0.0);
      for (size_t i = 0; i < enc_states.size(); ++i) {
        for (size_t u = 0; u < H; ++u) ctx[u] += alpha[i] * enc_states[i][u];
      }

      // vocab distribution
      std::vector<real> sc = dh;
      sc.insert(sc.end(), ctx.begin(), ctx.end());
      std::vector<real> inner = matvec(p.out_hidden_w, sc);
      for (size_t u = 0; u < inner.size(); ++u) inner[u] += p.out_hidden_b.v[u];
      std::vector<real> logits = matvec(p.out_vocab_w, inner);
      for (size_t u = 0; u < logits.size(); ++u) logits[u] += p.out_vocab_b.v[u];
      real lmx = logits[0];
      for (real l : logits) lmx = std::max(lmx, l);
      real lsum = 0.0;
      std::vector<real> pvocab;
      for (real l : logits) {
        pvocab.push_back(std::exp(l - lmx));
        lsum += pvocab.back();
      }
      for (real& q : pvocab) q /= lsum;

      // switch
      real sw = 0.0;
      for (size_t u = 0; u < H; ++u) sw += p.sw_context_w.v[u] * ctx[u];
      for (size_t u = 0; u < H; ++u) sw += p.sw_state_w.v[u] * dh[u];
      for (size_t u = 0; u < p.dims.emb; ++u) sw += p.sw_input_w.v[u] * x[u];
      sw = sigmoid(sw + p.sw_bias.v[0]);

      // final distribution over the extended vocabulary
      std::vector<real> dist(ext_size, 0.0);
      for (size_t u = 0; u < pvocab.size(); ++u) dist[u] = sw * pvocab[u];
      for (size_t i = 0; i < extended_ids.size(); ++i) {
        dist[static_cast<size_t>(extended_ids[i])] += (1.0 - sw) * alpha[i];
      }
      dists.push_back(dist);
      context = ctx;
    }
    return dists;
  }
};

}  // namespace

TEST_CASE("attend") {
  ModelParams p = ModelParams::init(tiny_dims(), 101);
  SECTION("single encoder state gets attention 1 and context h_1") {
    Tape tape;
    ModelVars mv = watch(tape, p, false);
    std::vector<int> ids{5};
    EncoderStates enc = encode(tape, mv, ids);
    Attention att = attend(tape, mv, enc, enc.final_state.h);
    REQUIRE(tape.val(att.alpha).size() == 1);
    CHECK_THAT(tape.val(att.alpha).v[0], Catch::Matchers::WithinAbs(1.0, 1e-12));
    const Tensor& ctx = tape.val(att.context);
    const Tensor& h1 = tape.val(enc.final_state.h);
    for (size_t u = 0; u < ctx.size(); ++u) {
      CHECK_THAT(ctx.v[u], Catch::Matchers::WithinAbs(h1.v[u], 1e-12));
    }
  }
  SECTION("identical encoder states give uniform attention") {
    Tape tape;
    ModelVars mv = watch(tape, p, false);
    std::vector<int> ids{6, 6, 6, 6};  // same token repeated...
    // ...does not give identical states (recurrence), so stack copies instead
    Tensor h = Tensor::vec(p.dims.hidden);
    h.v = {0.1, -0.4, 0.3, 0.2};
    Tape::Var hv = tape.constant(h);
    EncoderStates enc;
    enc.states = tape.stack_rows({hv, hv, hv});
    enc.att_premul = tape.matmul_nt(enc.states, mv.att_enc_w);
    enc.final_state = {hv, hv};
    enc.length = 3;
    Attention att = attend(tape, mv, enc, hv);
    for (real a : tape.val(att.alpha).v) {
      CHECK_THAT(a, Catch::Matchers::WithinAbs(1.0 / 3.0, 1e-12));
    }
  }
  SECTION("context equals the explicit weighted sum") {
    Tape tape;
    ModelVars mv = watch(tape, p, false);
    std::vector<int> ids{4, 7, 5, 8, 6};
    EncoderStates enc = encode(tape, mv, ids);
    Attention att = attend(tape, mv, enc, enc.final_state.h);
    const Tensor& alpha = tape.val(att.alpha);
    const Tensor& states = tape.val(enc.states);
    const Tensor& ctx = tape.val(att.context);
    real sum = 0.0;
    for (real a : alpha.v) sum += a;
    CHECK_THAT(sum, Catch::Matchers::WithinAbs(1.0, 1e-9));
    for (size_t u = 0; u < ctx.size(); ++u) {
      real expect = 0.0;
      for (size_t i = 0; i < alpha.size(); ++i) {
        expect += alpha.v[i] * states.at(i, u);
      }
      CHECK_THAT(ctx.v[u], Catch::Matchers::WithinAbs(expect, 1e-12));
    }
  }
}

TEST_CASE("vocab_dist") {
  SECTION("zero output projection gives a uniform distribution") {
    ModelParams p = ModelParams::init(tiny_dims(), 55);
    for (real& x : p.out_vocab_w.v) x = 0.0;
    for (real& x : p.out_vocab_b.v) x = 0.0;
    Tape tape;
    ModelVars mv = watch(tape, p, false);
    std::vector<int> ids{4, 5};
    EncoderStates enc = encode(tape, mv, ids);
    Attention att = attend(tape, mv, enc, enc.final_state.h);
    Tape::Var pv = vocab_dist(tape, mv, enc.final_state.h, att.context);
    for (real q : tape.val(pv).v) {
      CHECK_THAT(q, Catch::Matchers::WithinAbs(0.1, 1e-12));
    }
  }
  SECTION("sums to one and matches an explicit matrix-product oracle") {
    ModelParams p = ModelParams::init(tiny_dims(), 77);
    Tape tape;
    ModelVars mv = watch(tape, p, false);
    Tensor s = Tensor::vec(p.dims.hidden);
    s.v = {0.2, -0.1, 0.5, 0.3};
    Tensor c = Tensor::vec(p.dims.hidden);
    c.v = {-0.4, 0.2, 0.1, -0.2};
    Tape::Var pv = vocab_dist(tape, mv, tape.constant(s), tape.constant(c));
    const Tensor& got = tape.val(pv);
    real sum = 0.0;
    for (real q : got.v) sum += q;
    CHECK_THAT(sum, Catch::Matchers::WithinAbs(1.0, 1e-9));

    PlainRef ref{p};
    std::vector<real> sc = s.v;
    sc.insert(sc.end(), c.v.begin(), c.v.end());
    std::vector<real> inner = ref.matvec(p.out_hidden_w, sc);
    for (size_t u = 0; u < inner.size(); ++u) inner[u] += p.out_hidden_b.v[u];
    std::vector<real> logits = ref.matvec(p.out_vocab_w, inner);
    for (size_t u = 0; u < logits.size(); ++u) logits[u] += p.out_vocab_b.v[u];
    real mx = logits[0];
    for (real l : logits) mx = std::max(mx, l);
    real z = 0.0;
    for (real l : logits) z += std::exp(l - mx);
    for (size_t u = 0; u < got.size(); ++u) {
      CHECK_THAT(got.v[u],
                 Catch::Matchers::WithinAbs(std::exp(logits[u] - mx) / z, 1e-12));
    }
  }
}

TEST_CASE("switch_prob") {
  ModelParams p = ModelParams::init(tiny_dims(), 3);
  Tensor c = Tensor::vec(4), s = Tensor::vec(4), x = Tensor::vec(3);
  c.v = {0.1, 0.2, -0.3, 0.4};
  s.v = {-0.1, 0.5, 0.2, 0.0};
  x.v = {0.3, -0.2, 0.1};

  SECTION("all-zero switch parameters give 0.5") {
    ModelParams z = p;
    for (Tensor* t : {&z.sw_context_w, &z.sw_state_w, &z.sw_input_w, &z.sw_bias}) {
      for (real& v : t->v) v = 0.0;
    }
    Tape tape;
    ModelVars mv = watch(tape, z, false);
    Tape::Var sw = switch_prob(tape, mv, tape.constant(c), tape.constant(s),
                               tape.constant(x));
    CHECK(tape.val(sw).v[0] == 0.5);
  }
  SECTION("monotone in the bias") {
    auto eval_with_bias = [&](real b) {
      ModelParams q = p;
      q.sw_bias.v[0] = b;
      Tape tape;
      ModelVars mv = watch(tape, q, false);
      return tape.val(switch_prob(tape, mv, tape.constant(c), tape.constant(s),
                                  tape.constant(x))).v[0];
    };
    real prev = eval_with_bias(-2.0);
    for (real b : {-1.0, 0.0, 1.0, 2.0}) {
      real cur = eval_with_bias(b);
      CHECK(cur > prev);
      prev = cur;
    }
  }
  SECTION("matches a scalar evaluation") {
    Tape tape;
    ModelVars mv = watch(tape, p, false);
    Tape::Var sw = switch_prob(tape, mv, tape.constant(c), tape.constant(s),
                               tape.constant(x));
    real pre = p.sw_bias.v[0];
    for (size_t u = 0; u < 4; ++u) pre += p.sw_context_w.v[u] * c.v[u];
    for (size_t u = 0; u < 4; ++u) pre += p.sw_state_w.v[u] * s.v[u];
    for (size_t u = 0; u < 3; ++u) pre += p.sw_input_w.v[u] * x.v[u];
    real expect = 1.0 / (1.0 + std::exp(-pre));
    CHECK_THAT(tape.val(sw).v[0], Catch::Matchers::WithinAbs(expect, 1e-12));
    CHECK(tape.val(sw).v[0] > 0.0);
    CHECK(tape.val(sw).v[0] < 1.0);
  }
}

TEST_CASE("final_dist") {
  // vocab size 6, extended ids [4, 6]: position 1 is an OOV copy slot
  Tensor pvocab = Tensor::vec(6);
  for (real& x : pvocab.v) x = 1.0 / 6.0;
  Tensor alpha = Tensor::vec(2);
  alpha.v = {0.3, 0.7};
  std::vector<int> ext_ids{4, 6};

  auto build = [&](real sigma) {
    Tape tape;
    Tape::Var d = final_dist(tape, tape.constant(pvocab), tape.constant(alpha),
                             tape.constant_scalar(sigma), ext_ids, 7);
    return tape.val(d).v;
  };

  SECTION("switch 1 keeps p_vocab with zero OOV mass") {
    std::vector<real> d = build(1.0);
    for (size_t i = 0; i < 6; ++i) {
      CHECK_THAT(d[i], Catch::Matchers::WithinAbs(1.0 / 6.0, 1e-12));
    }
    CHECK(d[6] == 0.0);
  }
  SECTION("switch 0 scatters the attention") {
    std::vector<real> d = build(0.0);
    CHECK_THAT(d[4], Catch::Matchers::WithinAbs(0.3, 1e-12));
    CHECK_THAT(d[6], Catch::Matchers::WithinAbs(0.7, 1e-12));
    CHECK(d[0] == 0.0);
  }
  SECTION("switch 0.5 mixes both routes") {
    std::vector<real> d = build(0.5);
    CHECK_THAT(d[6], Catch::Matchers::WithinAbs(0.35, 1e-12));
    CHECK_THAT(d[4], Catch::Matchers::WithinAbs(0.5 / 6.0 + 0.15, 1e-12));
  }
  SECTION("repeated source positions accumulate copy mass") {
    Tape tape;
    Tensor a3 = Tensor::vec(3);
    a3.v = {0.2, 0.5, 0.3};
    Tape::Var d = final_dist(tape, tape.constant(pvocab), tape.constant(a3),
                             tape.constant_scalar(0.0), {6, 4, 6}, 7);
    CHECK_THAT(tape.val(d).v[6], Catch::Matchers::WithinAbs(0.5, 1e-12));
  }
  SECTION("out-of-range extended id is an error") {
    Tape tape;
    CHECK_THROWS_AS(final_dist(tape, tape.constant(pvocab), tape.constant(alpha),
                               tape.constant_scalar(0.5), {4, 7}, 7),
                    TensorError);
  }
}

TEST_CASE("decode_step") {
  ModelParams p = ModelParams::init(tiny_dims(), 909);
  std::vector<int> source_ids{4, 5, 1, 6};   // UNK in third position
  std::vector<int> extended_ids{4, 5, 10, 6};  // its copy slot is id 10
  size_t ext_size = 11;

  SECTION("p* sums to 1 at every step and OOV mass is bounded by 1-switch") {
    Tape tape;
    ModelVars mv = watch(tape, p, false);
    EncoderStates enc = encode(tape, mv, source_ids);
    DecoderState state = initial_decoder_state(tape, mv, enc);
    int prev = kStartId;
    for (int t = 0; t < 4; ++t) {
      auto [out, next] = decode_step(tape, mv, enc, state, prev, extended_ids,
                                     ext_size);
      const Tensor& d = tape.val(out.dist);
      real sum = 0.0, oov = 0.0;
      for (size_t i = 0; i < d.size(); ++i) {
        CHECK(d.v[i] >= 0.0);
        sum += d.v[i];
        if (i >= p.dims.vocab_size) oov += d.v[i];
      }
      CHECK_THAT(sum, Catch::Matchers::WithinAbs(1.0, 1e-6));
      CHECK(oov <= 1.0 - tape.val(out.switch_p).v[0] + 1e-6);
      prev = t % 2 == 0 ? 10 : 5;  // feeds an OOV id back as UNK
      state = next;
    }
  }

  SECTION("two forced steps match the plain-loop trace") {
    Tape tape;
    ModelVars mv = watch(tape, p, false);
    EncoderStates enc = encode(tape, mv, source_ids);
    DecoderState state = initial_decoder_state(tape, mv, enc);
    std::vector<int> prevs{kStartId, 10};
    PlainRef ref{p};
    auto expect = ref.trace(source_ids, extended_ids, ext_size, prevs);
    for (size_t t = 0; t < prevs.size(); ++t) {
      auto [out, next] =
          decode_step(tape, mv, enc, state, prevs[t], extended_ids, ext_size);
      const Tensor& d = tape.val(out.dist);
      REQUIRE(d.size() == expect[t].size());
      for (size_t i = 0; i < d.size(); ++i) {
        CHECK_THAT(d.v[i], Catch::Matchers::WithinAbs(expect[t][i], 1e-10));
      }
      state = next;
    }
  }

  SECTION("coverage accumulates the attention history exactly") {
    Tape tape;
    ModelVars mv = watch(tape, p, false);
    EncoderStates enc = encode(tape, mv, source_ids);
    StepOptions opt;
    opt.coverage = true;
    DecoderState state = initial_decoder_state(tape, mv, enc);
    std::vector<std::vector<real>> alphas;
    int prev = kStartId;
    for (int t = 0; t < 3; ++t) {
      for (real cv : tape.val(state.coverage).v) CHECK(cv >= 0.0);
      auto [out, next] =
          decode_step(tape, mv, enc, state, prev, extended_ids, ext_size, opt);
      alphas.push_back(tape.val(out.alpha).v);
      state = next;
      prev = 4;
      const Tensor& cov = tape.val(state.coverage);
      for (size_t i = 0; i < cov.size(); ++i) {
        real expect = 0.0;
        for (const auto& a : alphas) expect += a[i];
        CHECK(cov.v[i] == expect);
      }
    }
  }

  SECTION("pointer-off mode zero-masses every OOV slot") {
    Tape tape;
    ModelVars mv = watch(tape, p, false);
    EncoderStates enc = encode(tape, mv, source_ids);
    StepOptions opt;
    opt.pointer = false;
    DecoderState state = initial_decoder_state(tape, mv, enc);
    auto [out, next] =
        decode_step(tape, mv, enc, state, kStartId, extended_ids, ext_size, opt);
    const Tensor& d = tape.val(out.dist);
    CHECK(tape.val(out.switch_p).v[0] == 1.0);
    for (size_t i = p.dims.vocab_size; i < ext_size; ++i) CHECK(d.v[i] == 0.0);
  }
}

TEST_CASE("encode") {
  ModelParams p = ModelParams::init(tiny_dims(), 41);
  SECTION("empty input is an error") {
    Tape tape;
    ModelVars mv = watch(tape, p, false);
    std::vector<int> empty;
    CHECK_THROWS_AS(encode(tape, mv, empty), ModelError);
  }
  SECTION("single token: one state equal to the decoder init") {
    Tape tape;
    ModelVars mv = watch(tape, p, false);
    std::vector<int> ids{7};
    EncoderStates enc = encode(tape, mv, ids);
    CHECK(enc.length == 1);
    const Tensor& states = tape.val(enc.states);
    const Tensor& final_h = tape.val(enc.final_state.h);
    REQUIRE(states.rows() == 1);
    for (size_t u = 0; u < final_h.size(); ++u) {
      CHECK(states.at(0, u) == final_h.v[u]);
    }
  }
  SECTION("zero parameters give all-zero states") {
    ModelParams z = p;
    for (auto& [name, t] : z.named()) {
      for (real& x : t->v) x = 0.0;
    }
    Tape tape;
    ModelVars mv = watch(tape, z, false);
    std::vector<int> ids{4, 5, 6};
    EncoderStates enc = encode(tape, mv, ids);
    for (real x : tape.val(enc.states).v) CHECK(x == 0.0);
  }
  SECTION("deterministic") {
    auto run = [&]() {
      Tape tape;
      ModelVars mv = watch(tape, p, false);
      std::vector<int> ids{4, 8, 6, 5};
      EncoderStates enc = encode(tape, mv, ids);
      return tape.val(enc.states).v;
    };
    CHECK(run() == run());
  }
}

TEST_CASE("CE gradients through the full pointer-generator pass a finite-difference check") {
  // small instance; the acceptance suite runs a larger one per parameter group
  ModelDims dims{8, 2, 3, 3};
  ModelParams p = ModelParams::init(dims, 1234);
  std::vector<int> source_ids{4, 1, 5};
  std::vector<int> extended_ids{4, 8, 5};
  std::vector<int> targets{8, 5, kStopId};
  size_t ext_size = 9;

  auto build = [&](Tape& tape) {
    ModelVars mv = watch(tape, p, true);
    EncoderStates enc = encode(tape, mv, source_ids);
    DecoderState state = initial_decoder_state(tape, mv, enc);
    Tape::Var total = tape.constant_scalar(0.0);
    int prev = kStartId;
    StepOptions opt;
    opt.coverage = true;
    for (int y : targets) {
      auto [out, next] =
          decode_step(tape, mv, enc, state, prev, extended_ids, ext_size, opt);
      total = tape.add(total, tape.neg(tape.log_clipped(
                                  tape.pick(out.dist, static_cast<size_t>(y)))));
      prev = y;
      state = next;
    }
    LossGraph g;
    g.loss = total;
    g.params = mv.ordered();
    return g;
  };

  std::vector<Tensor*> params;
  for (auto& [name, t] : p.named()) params.push_back(t);
  CHECK(grad_check(build, params, 1e-3, 10, 7) < 1e-6);
}

TEST_CASE("checkpoints round-trip") {
  ModelParams p = ModelParams::init(ModelDims{12, 4, 5, 5}, 2718);
  std::ostringstream buf;
  save_checkpoint(buf, p, "note: test\n");
  std::string bytes = buf.str();
  CHECK(bytes.substr(0, 8) == "TRLCKPT1");

  std::istringstream in(bytes);
  Checkpoint ck = load_checkpoint(in);
  CHECK(ck.metadata == "note: test\n");
  CHECK(ck.params.dims.vocab_size == 12);
  CHECK(ck.params.dims.hidden == 5);

  // reserialization is byte-identical
  std::ostringstream buf2;
  save_checkpoint(buf2, ck.params, ck.metadata);
  CHECK(buf2.str() == bytes);

  SECTION("bad magic is rejected") {
    std::string corrupt = bytes;
    corrupt[0] = 'X';
    std::istringstream bad(corrupt);
    CHECK_THROWS_AS(load_checkpoint(bad), ModelError);
  }
  SECTION("truncation is rejected") {
    std::istringstream bad(bytes.substr(0, bytes.size() / 2));
    CHECK_THROWS_AS(load_checkpoint(bad), ModelError);
  }
}
