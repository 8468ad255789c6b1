#pragma once

#include <cmath>
#include <cstdint>
#include <deque>
#include <functional>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "sumrl/rng.hpp"

namespace sumrl {

// All in-memory math runs in f64; checkpoints quantize to f32 on disk.
using real = double;

class TensorError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Tensor {
  std::vector<size_t> shape;
  std::vector<real> v;

  Tensor() = default;
  explicit Tensor(std::vector<size_t> s)
      : shape(std::move(s)), v(numel(shape), 0.0) {}

  static size_t numel(const std::vector<size_t>& s) {
    size_t n = 1;
    for (size_t d : s) n *= d;
    return n;
  }

  static Tensor vec(size_t n) { return Tensor({n}); }
  static Tensor mat(size_t r, size_t c) { return Tensor({r, c}); }
  static Tensor scalar(real x) {
    Tensor t({1});
    t.v[0] = x;
    return t;
  }

  size_t size() const { return v.size(); }
  size_t rank() const { return shape.size(); }
  size_t rows() const { return shape.at(0); }
  size_t cols() const { return shape.at(1); }

  real& at(size_t i) { return v[i]; }
  real at(size_t i) const { return v[i]; }
  real& at(size_t i, size_t j) { return v[i * cols() + j]; }
  real at(size_t i, size_t j) const { return v[i * cols() + j]; }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  void fill_uniform(Rng& rng, real lo, real hi) {
    for (real& x : v) x = rng.uniform(lo, hi);
  }
};

inline void check_finite(const Tensor& t, const char* what) {
  for (real x : t.v) {
    if (!std::isfinite(x)) {
      throw TensorError(std::string("non-finite value in ") + what);
    }
  }
}

// Reverse-mode gradient tape. Every op appends a node holding the forward
// value and a closure that pushes adjoints to its inputs; backward() walks
// the nodes once in reverse creation order (a valid reverse topological
// order by construction). Gradients are only allocated and propagated for
// nodes downstream of a tracked input. Nodes live in a deque, so references
// returned by val()/grad() stay valid as the tape grows.
class Tape {
 public:
  using Var = int32_t;

  Var input(Tensor t, bool track) {
    return push(std::move(t), track, nullptr);
  }

  Var constant(Tensor t) { return input(std::move(t), false); }
  Var constant_scalar(real x) { return constant(Tensor::scalar(x)); }

  const Tensor& val(Var x) const { return nodes_[check(x)].val; }
  const Tensor& grad(Var x) const {
    const Node& n = nodes_[check(x)];
    if (!n.track) throw TensorError("grad of untracked node");
    return n.grad;
  }
  bool tracked(Var x) const { return nodes_[check(x)].track; }
  size_t size() const { return nodes_.size(); }

  void backward(Var loss) {
    Node& ln = nodes_[check(loss)];
    if (ln.val.size() != 1) throw TensorError("backward: loss must be scalar");
    if (!ln.track) return;  // constant loss: all gradients are zero
    ln.grad.v[0] = 1.0;
    for (size_t i = static_cast<size_t>(loss) + 1; i-- > 0;) {
      if (nodes_[i].back) nodes_[i].back();
    }
  }

  // ---- elementwise ----

  Var add(Var a, Var b) {
    const Tensor &ta = val(a), &tb = val(b);
    require(ta.same_shape(tb), "add: shape mismatch");
    Tensor out = ta;
    for (size_t i = 0; i < out.size(); ++i) out.v[i] += tb.v[i];
    return unary_or_binary(std::move(out), a, b, [this](Var y, Var a, Var b) {
      const Tensor& g = nodes_[y].grad;
      accumulate(a, g.v);
      accumulate(b, g.v);
    });
  }

  Var sub(Var a, Var b) {
    const Tensor &ta = val(a), &tb = val(b);
    require(ta.same_shape(tb), "sub: shape mismatch");
    Tensor out = ta;
    for (size_t i = 0; i < out.size(); ++i) out.v[i] -= tb.v[i];
    return unary_or_binary(std::move(out), a, b, [this](Var y, Var a, Var b) {
      const Tensor& g = nodes_[y].grad;
      accumulate(a, g.v);
      if (nodes_[b].track) {
        Tensor& gb = nodes_[b].grad;
        for (size_t i = 0; i < g.size(); ++i) gb.v[i] -= g.v[i];
      }
    });
  }

  Var mul(Var a, Var b) {
    const Tensor &ta = val(a), &tb = val(b);
    require(ta.same_shape(tb), "mul: shape mismatch");
    Tensor out = ta;
    for (size_t i = 0; i < out.size(); ++i) out.v[i] *= tb.v[i];
    return unary_or_binary(std::move(out), a, b, [this](Var y, Var a, Var b) {
      const Tensor& g = nodes_[y].grad;
      if (nodes_[a].track) {
        Tensor& ga = nodes_[a].grad;
        const Tensor& tb = nodes_[b].val;
        for (size_t i = 0; i < g.size(); ++i) ga.v[i] += g.v[i] * tb.v[i];
      }
      if (nodes_[b].track) {
        Tensor& gb = nodes_[b].grad;
        const Tensor& ta = nodes_[a].val;
        for (size_t i = 0; i < g.size(); ++i) gb.v[i] += g.v[i] * ta.v[i];
      }
    });
  }

  // elementwise min; on ties the adjoint goes to the first argument
  Var minimum(Var a, Var b) {
    const Tensor &ta = val(a), &tb = val(b);
    require(ta.same_shape(tb), "minimum: shape mismatch");
    Tensor out = ta;
    for (size_t i = 0; i < out.size(); ++i) out.v[i] = std::min(ta.v[i], tb.v[i]);
    return unary_or_binary(std::move(out), a, b, [this](Var y, Var a, Var b) {
      const Tensor& g = nodes_[y].grad;
      const Tensor& ta = nodes_[a].val;
      const Tensor& tb = nodes_[b].val;
      for (size_t i = 0; i < g.size(); ++i) {
        if (ta.v[i] <= tb.v[i]) {
          if (nodes_[a].track) nodes_[a].grad.v[i] += g.v[i];
        } else if (nodes_[b].track) {
          nodes_[b].grad.v[i] += g.v[i];
        }
      }
    });
  }

  Var scale(Var a, real c) {
    Tensor out = val(a);
    for (real& x : out.v) x *= c;
    return unary(std::move(out), a, [this, c](Var y, Var a) {
      const Tensor& g = nodes_[y].grad;
      Tensor& ga = nodes_[a].grad;
      for (size_t i = 0; i < g.size(); ++i) ga.v[i] += c * g.v[i];
    });
  }

  Var neg(Var a) { return scale(a, -1.0); }

  Var tanh_(Var a) {
    Tensor out = val(a);
    for (real& x : out.v) x = std::tanh(x);
    return unary(std::move(out), a, [this](Var y, Var a) {
      const Tensor& g = nodes_[y].grad;
      const Tensor& o = nodes_[y].val;
      Tensor& ga = nodes_[a].grad;
      for (size_t i = 0; i < g.size(); ++i) {
        ga.v[i] += g.v[i] * (1.0 - o.v[i] * o.v[i]);
      }
    });
  }

  Var sigmoid_(Var a) {
    Tensor out = val(a);
    for (real& x : out.v) x = stable_sigmoid(x);
    return unary(std::move(out), a, [this](Var y, Var a) {
      const Tensor& g = nodes_[y].grad;
      const Tensor& o = nodes_[y].val;
      Tensor& ga = nodes_[a].grad;
      for (size_t i = 0; i < g.size(); ++i) {
        ga.v[i] += g.v[i] * o.v[i] * (1.0 - o.v[i]);
      }
    });
  }

  // log(max(x, floor)); zero gradient where the floor is active
  Var log_clipped(Var a, real floor = 1e-10) {
    const Tensor& ta = val(a);
    Tensor out = ta;
    for (real& x : out.v) x = std::log(std::max(x, floor));
    return unary(std::move(out), a, [this, floor](Var y, Var a) {
      const Tensor& g = nodes_[y].grad;
      const Tensor& ta = nodes_[a].val;
      Tensor& ga = nodes_[a].grad;
      for (size_t i = 0; i < g.size(); ++i) {
        if (ta.v[i] > floor) ga.v[i] += g.v[i] / ta.v[i];
      }
    });
  }

  // ---- vector / matrix ----

  // max-subtracted softmax over a vector
  Var softmax(Var a) {
    const Tensor& ta = val(a);
    require(ta.rank() == 1 && ta.size() >= 1, "softmax: need non-empty vector");
    Tensor out = ta;
    real mx = out.v[0];
    for (real x : out.v) mx = std::max(mx, x);
    real sum = 0.0;
    for (real& x : out.v) {
      x = std::exp(x - mx);
      sum += x;
    }
    for (real& x : out.v) x /= sum;
    return unary(std::move(out), a, [this](Var y, Var a) {
      const Tensor& g = nodes_[y].grad;
      const Tensor& o = nodes_[y].val;
      Tensor& ga = nodes_[a].grad;
      real dot = 0.0;
      for (size_t i = 0; i < g.size(); ++i) dot += g.v[i] * o.v[i];
      for (size_t i = 0; i < g.size(); ++i) {
        ga.v[i] += o.v[i] * (g.v[i] - dot);
      }
    });
  }

  // W [m×n] · x [n] -> [m]
  Var matvec(Var w, Var x) {
    const Tensor &tw = val(w), &tx = val(x);
    require(tw.rank() == 2 && tx.rank() == 1 && tw.cols() == tx.size(),
            "matvec: shape mismatch");
    Tensor out = Tensor::vec(tw.rows());
    for (size_t i = 0; i < tw.rows(); ++i) {
      real acc = 0.0;
      const real* row = &tw.v[i * tw.cols()];
      for (size_t j = 0; j < tw.cols(); ++j) acc += row[j] * tx.v[j];
      out.v[i] = acc;
    }
    return unary_or_binary(std::move(out), w, x, [this](Var y, Var w, Var x) {
      const Tensor& g = nodes_[y].grad;
      const Tensor& tw = nodes_[w].val;
      const Tensor& tx = nodes_[x].val;
      if (nodes_[w].track) {
        Tensor& gw = nodes_[w].grad;
        for (size_t i = 0; i < tw.rows(); ++i) {
          real gi = g.v[i];
          if (gi == 0.0) continue;
          real* grow = &gw.v[i * tw.cols()];
          for (size_t j = 0; j < tw.cols(); ++j) grow[j] += gi * tx.v[j];
        }
      }
      if (nodes_[x].track) {
        Tensor& gx = nodes_[x].grad;
        for (size_t i = 0; i < tw.rows(); ++i) {
          real gi = g.v[i];
          if (gi == 0.0) continue;
          const real* row = &tw.v[i * tw.cols()];
          for (size_t j = 0; j < tw.cols(); ++j) gx.v[j] += gi * row[j];
        }
      }
    });
  }

  // A [m×k] · B^T, B [n×k] -> [m×n]
  Var matmul_nt(Var a, Var b) {
    const Tensor &ta = val(a), &tb = val(b);
    require(ta.rank() == 2 && tb.rank() == 2 && ta.cols() == tb.cols(),
            "matmul_nt: shape mismatch");
    size_t m = ta.rows(), n = tb.rows(), k = ta.cols();
    Tensor out = Tensor::mat(m, n);
    for (size_t i = 0; i < m; ++i) {
      for (size_t j = 0; j < n; ++j) {
        real acc = 0.0;
        for (size_t p = 0; p < k; ++p) acc += ta.at(i, p) * tb.at(j, p);
        out.at(i, j) = acc;
      }
    }
    return unary_or_binary(std::move(out), a, b, [this](Var y, Var a, Var b) {
      const Tensor& g = nodes_[y].grad;
      const Tensor& ta = nodes_[a].val;
      const Tensor& tb = nodes_[b].val;
      size_t m = ta.rows(), n = tb.rows(), k = ta.cols();
      if (nodes_[a].track) {
        Tensor& ga = nodes_[a].grad;
        for (size_t i = 0; i < m; ++i) {
          for (size_t j = 0; j < n; ++j) {
            real gij = g.at(i, j);
            if (gij == 0.0) continue;
            for (size_t p = 0; p < k; ++p) ga.at(i, p) += gij * tb.at(j, p);
          }
        }
      }
      if (nodes_[b].track) {
        Tensor& gb = nodes_[b].grad;
        for (size_t i = 0; i < m; ++i) {
          for (size_t j = 0; j < n; ++j) {
            real gij = g.at(i, j);
            if (gij == 0.0) continue;
            for (size_t p = 0; p < k; ++p) gb.at(j, p) += gij * ta.at(i, p);
          }
        }
      }
    });
  }

  // x [m] with A [m×n] -> x^T A, a [n] vector
  Var vecmat(Var x, Var a) {
    const Tensor &tx = val(x), &ta = val(a);
    require(tx.rank() == 1 && ta.rank() == 2 && tx.size() == ta.rows(),
            "vecmat: shape mismatch");
    Tensor out = Tensor::vec(ta.cols());
    for (size_t i = 0; i < ta.rows(); ++i) {
      real xi = tx.v[i];
      if (xi == 0.0) continue;
      const real* row = &ta.v[i * ta.cols()];
      for (size_t j = 0; j < ta.cols(); ++j) out.v[j] += xi * row[j];
    }
    return unary_or_binary(std::move(out), x, a, [this](Var y, Var x, Var a) {
      const Tensor& g = nodes_[y].grad;
      const Tensor& tx = nodes_[x].val;
      const Tensor& ta = nodes_[a].val;
      if (nodes_[x].track) {
        Tensor& gx = nodes_[x].grad;
        for (size_t i = 0; i < ta.rows(); ++i) {
          real acc = 0.0;
          const real* row = &ta.v[i * ta.cols()];
          for (size_t j = 0; j < ta.cols(); ++j) acc += g.v[j] * row[j];
          gx.v[i] += acc;
        }
      }
      if (nodes_[a].track) {
        Tensor& ga = nodes_[a].grad;
        for (size_t i = 0; i < ta.rows(); ++i) {
          real xi = tx.v[i];
          if (xi == 0.0) continue;
          real* grow = &ga.v[i * ta.cols()];
          for (size_t j = 0; j < ta.cols(); ++j) grow[j] += xi * g.v[j];
        }
      }
    });
  }

  // M [m×n] + r [n], broadcast over rows
  Var add_rows(Var m, Var r) {
    const Tensor &tm = val(m), &tr = val(r);
    require(tm.rank() == 2 && tr.rank() == 1 && tm.cols() == tr.size(),
            "add_rows: shape mismatch");
    Tensor out = tm;
    for (size_t i = 0; i < tm.rows(); ++i) {
      for (size_t j = 0; j < tm.cols(); ++j) out.at(i, j) += tr.v[j];
    }
    return unary_or_binary(std::move(out), m, r, [this](Var y, Var m, Var r) {
      const Tensor& g = nodes_[y].grad;
      if (nodes_[m].track) accumulate(m, g.v);
      if (nodes_[r].track) {
        Tensor& gr = nodes_[r].grad;
        size_t cols = g.cols();
        for (size_t i = 0; i < g.rows(); ++i) {
          for (size_t j = 0; j < cols; ++j) gr.v[j] += g.at(i, j);
        }
      }
    });
  }

  // a [m] ⊗ b [n] -> [m×n]
  Var outer(Var a, Var b) {
    const Tensor &ta = val(a), &tb = val(b);
    require(ta.rank() == 1 && tb.rank() == 1, "outer: need vectors");
    Tensor out = Tensor::mat(ta.size(), tb.size());
    for (size_t i = 0; i < ta.size(); ++i) {
      for (size_t j = 0; j < tb.size(); ++j) out.at(i, j) = ta.v[i] * tb.v[j];
    }
    return unary_or_binary(std::move(out), a, b, [this](Var y, Var a, Var b) {
      const Tensor& g = nodes_[y].grad;
      const Tensor& ta = nodes_[a].val;
      const Tensor& tb = nodes_[b].val;
      if (nodes_[a].track) {
        Tensor& ga = nodes_[a].grad;
        for (size_t i = 0; i < ta.size(); ++i) {
          real acc = 0.0;
          for (size_t j = 0; j < tb.size(); ++j) acc += g.at(i, j) * tb.v[j];
          ga.v[i] += acc;
        }
      }
      if (nodes_[b].track) {
        Tensor& gb = nodes_[b].grad;
        for (size_t i = 0; i < ta.size(); ++i) {
          real ai = ta.v[i];
          if (ai == 0.0) continue;
          for (size_t j = 0; j < tb.size(); ++j) gb.v[j] += ai * g.at(i, j);
        }
      }
    });
  }

  Var concat(Var a, Var b) {
    const Tensor &ta = val(a), &tb = val(b);
    require(ta.rank() == 1 && tb.rank() == 1, "concat: need vectors");
    Tensor out = Tensor::vec(ta.size() + tb.size());
    std::copy(ta.v.begin(), ta.v.end(), out.v.begin());
    std::copy(tb.v.begin(), tb.v.end(), out.v.begin() + static_cast<long>(ta.size()));
    return unary_or_binary(std::move(out), a, b, [this](Var y, Var a, Var b) {
      const Tensor& g = nodes_[y].grad;
      size_t na = nodes_[a].val.size();
      if (nodes_[a].track) {
        Tensor& ga = nodes_[a].grad;
        for (size_t i = 0; i < na; ++i) ga.v[i] += g.v[i];
      }
      if (nodes_[b].track) {
        Tensor& gb = nodes_[b].grad;
        for (size_t i = 0; i < gb.size(); ++i) gb.v[i] += g.v[na + i];
      }
    });
  }

  Var slice(Var a, size_t offset, size_t len) {
    const Tensor& ta = val(a);
    require(ta.rank() == 1 && offset + len <= ta.size(), "slice: out of range");
    Tensor out = Tensor::vec(len);
    std::copy(ta.v.begin() + static_cast<long>(offset),
              ta.v.begin() + static_cast<long>(offset + len), out.v.begin());
    return unary(std::move(out), a, [this, offset](Var y, Var a) {
      const Tensor& g = nodes_[y].grad;
      Tensor& ga = nodes_[a].grad;
      for (size_t i = 0; i < g.size(); ++i) ga.v[offset + i] += g.v[i];
    });
  }

  // matrix row as a vector (embedding lookup)
  Var row(Var m, size_t i) {
    const Tensor& tm = val(m);
    require(tm.rank() == 2 && i < tm.rows(), "row: out of range");
    Tensor out = Tensor::vec(tm.cols());
    std::copy(tm.v.begin() + static_cast<long>(i * tm.cols()),
              tm.v.begin() + static_cast<long>((i + 1) * tm.cols()),
              out.v.begin());
    return unary(std::move(out), m, [this, i](Var y, Var m) {
      const Tensor& g = nodes_[y].grad;
      Tensor& gm = nodes_[m].grad;
      size_t cols = nodes_[m].val.cols();
      for (size_t j = 0; j < g.size(); ++j) gm.v[i * cols + j] += g.v[j];
    });
  }

  Var stack_rows(const std::vector<Var>& rows) {
    require(!rows.empty(), "stack_rows: empty");
    size_t n = val(rows[0]).size();
    Tensor out = Tensor::mat(rows.size(), n);
    bool track = false;
    for (size_t i = 0; i < rows.size(); ++i) {
      const Tensor& r = val(rows[i]);
      require(r.rank() == 1 && r.size() == n, "stack_rows: shape mismatch");
      std::copy(r.v.begin(), r.v.end(), out.v.begin() + static_cast<long>(i * n));
      track = track || tracked(rows[i]);
    }
    if (!track) return push(std::move(out), false, nullptr);
    Var y = push(std::move(out), true, nullptr);
    nodes_[y].back = [this, y, rows, n]() {
      const Tensor& g = nodes_[y].grad;
      for (size_t i = 0; i < rows.size(); ++i) {
        if (!nodes_[rows[i]].track) continue;
        Tensor& gr = nodes_[rows[i]].grad;
        for (size_t j = 0; j < n; ++j) gr.v[j] += g.v[i * n + j];
      }
    };
    return y;
  }

  Var dot(Var a, Var b) {
    const Tensor &ta = val(a), &tb = val(b);
    require(ta.rank() == 1 && tb.rank() == 1 && ta.size() == tb.size(),
            "dot: shape mismatch");
    real acc = 0.0;
    for (size_t i = 0; i < ta.size(); ++i) acc += ta.v[i] * tb.v[i];
    return unary_or_binary(Tensor::scalar(acc), a, b, [this](Var y, Var a, Var b) {
      real g = nodes_[y].grad.v[0];
      const Tensor& ta = nodes_[a].val;
      const Tensor& tb = nodes_[b].val;
      if (nodes_[a].track) {
        Tensor& ga = nodes_[a].grad;
        for (size_t i = 0; i < ta.size(); ++i) ga.v[i] += g * tb.v[i];
      }
      if (nodes_[b].track) {
        Tensor& gb = nodes_[b].grad;
        for (size_t i = 0; i < tb.size(); ++i) gb.v[i] += g * ta.v[i];
      }
    });
  }

  Var sum(Var a) {
    const Tensor& ta = val(a);
    real acc = 0.0;
    for (real x : ta.v) acc += x;
    return unary(Tensor::scalar(acc), a, [this](Var y, Var a) {
      real g = nodes_[y].grad.v[0];
      Tensor& ga = nodes_[a].grad;
      for (real& x : ga.v) x += g;
    });
  }

  Var pick(Var a, size_t i) {
    const Tensor& ta = val(a);
    require(i < ta.size(), "pick: index out of range");
    return unary(Tensor::scalar(ta.v[i]), a, [this, i](Var y, Var a) {
      nodes_[a].grad.v[i] += nodes_[y].grad.v[0];
    });
  }

  // zero-extend a vector to length n
  Var pad(Var a, size_t n) {
    const Tensor& ta = val(a);
    require(ta.rank() == 1 && n >= ta.size(), "pad: shorter than input");
    Tensor out = Tensor::vec(n);
    std::copy(ta.v.begin(), ta.v.end(), out.v.begin());
    return unary(std::move(out), a, [this](Var y, Var a) {
      const Tensor& g = nodes_[y].grad;
      Tensor& ga = nodes_[a].grad;
      for (size_t i = 0; i < ga.size(); ++i) ga.v[i] += g.v[i];
    });
  }

  // out[ids[k]] += a[k]; repeated ids accumulate
  Var scatter_sum(Var a, std::vector<int> ids, size_t n) {
    const Tensor& ta = val(a);
    require(ta.rank() == 1 && ta.size() == ids.size(), "scatter_sum: length mismatch");
    for (int id : ids) {
      if (id < 0 || static_cast<size_t>(id) >= n) {
        throw TensorError("scatter_sum: id out of range: " + std::to_string(id));
      }
    }
    Tensor out = Tensor::vec(n);
    for (size_t k = 0; k < ids.size(); ++k) {
      out.v[static_cast<size_t>(ids[k])] += ta.v[k];
    }
    return unary(std::move(out), a, [this, ids = std::move(ids)](Var y, Var a) {
      const Tensor& g = nodes_[y].grad;
      Tensor& ga = nodes_[a].grad;
      for (size_t k = 0; k < ids.size(); ++k) {
        ga.v[k] += g.v[static_cast<size_t>(ids[k])];
      }
    });
  }

  // multiply a vector (or any tensor) by a scalar node
  Var scale_by(Var a, Var s) {
    const Tensor &ta = val(a), &ts = val(s);
    require(ts.size() == 1, "scale_by: scalar expected");
    Tensor out = ta;
    for (real& x : out.v) x *= ts.v[0];
    return unary_or_binary(std::move(out), a, s, [this](Var y, Var a, Var s) {
      const Tensor& g = nodes_[y].grad;
      const Tensor& ta = nodes_[a].val;
      real sv = nodes_[s].val.v[0];
      if (nodes_[a].track) {
        Tensor& ga = nodes_[a].grad;
        for (size_t i = 0; i < g.size(); ++i) ga.v[i] += sv * g.v[i];
      }
      if (nodes_[s].track) {
        real acc = 0.0;
        for (size_t i = 0; i < g.size(); ++i) acc += g.v[i] * ta.v[i];
        nodes_[s].grad.v[0] += acc;
      }
    });
  }

  Var one_minus(Var s) {
    const Tensor& ts = val(s);
    require(ts.size() == 1, "one_minus: scalar expected");
    return unary(Tensor::scalar(1.0 - ts.v[0]), s, [this](Var y, Var s) {
      nodes_[s].grad.v[0] -= nodes_[y].grad.v[0];
    });
  }

 private:
  struct Node {
    Tensor val;
    Tensor grad;  // allocated only when tracked
    std::function<void()> back;
    bool track = false;
  };

  static void require(bool ok, const char* msg) {
    if (!ok) throw TensorError(msg);
  }

  static real stable_sigmoid(real x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    real e = std::exp(x);
    return e / (1.0 + e);
  }

  Var check(Var x) const {
    if (x < 0 || static_cast<size_t>(x) >= nodes_.size()) {
      throw TensorError("invalid tape var");
    }
    return x;
  }

  Var push(Tensor val, bool track, std::function<void()> back) {
    Node n;
    n.val = std::move(val);
    n.track = track;
    if (track) n.grad = Tensor(n.val.shape);
    n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return static_cast<Var>(nodes_.size() - 1);
  }

  void accumulate(Var x, const std::vector<real>& g) {
    if (!nodes_[x].track) return;
    Tensor& gx = nodes_[x].grad;
    for (size_t i = 0; i < g.size(); ++i) gx.v[i] += g[i];
  }

  template <class F>
  Var unary(Tensor out, Var a, F&& fn) {
    check(a);
    if (!nodes_[a].track) return push(std::move(out), false, nullptr);
    Var y = push(std::move(out), true, nullptr);
    nodes_[y].back = [fn = std::forward<F>(fn), y, a]() mutable { fn(y, a); };
    return y;
  }

  template <class F>
  Var unary_or_binary(Tensor out, Var a, Var b, F&& fn) {
    check(a);
    check(b);
    if (!nodes_[a].track && !nodes_[b].track) {
      return push(std::move(out), false, nullptr);
    }
    Var y = push(std::move(out), true, nullptr);
    nodes_[y].back = [fn = std::forward<F>(fn), y, a, b]() mutable { fn(y, a, b); };
    return y;
  }

  std::deque<Node> nodes_;
};

// Standard LSTM cell: sigmoid input/forget/output gates, tanh candidate and
// output squashing. Gate rows in the packed weights are ordered
// [input; forget; output; candidate].
struct LstmVars {
  Tape::Var input_w;  // [4H × in]
  Tape::Var recur_w;  // [4H × H]
  Tape::Var bias;     // [4H]
};

struct LstmState {
  Tape::Var h;
  Tape::Var c;
};

inline LstmState lstm_cell(Tape& tape, Tape::Var x, const LstmState& prev,
                           const LstmVars& p) {
  size_t four_h = tape.val(p.bias).size();
  size_t hidden = four_h / 4;
  if (four_h % 4 != 0 || tape.val(prev.h).size() != hidden) {
    throw TensorError("lstm_cell: inconsistent hidden size");
  }
  Tape::Var z = tape.add(
      tape.add(tape.matvec(p.input_w, x), tape.matvec(p.recur_w, prev.h)),
      p.bias);
  Tape::Var gi = tape.sigmoid_(tape.slice(z, 0, hidden));
  Tape::Var gf = tape.sigmoid_(tape.slice(z, hidden, hidden));
  Tape::Var go = tape.sigmoid_(tape.slice(z, 2 * hidden, hidden));
  Tape::Var gc = tape.tanh_(tape.slice(z, 3 * hidden, hidden));
  Tape::Var c = tape.add(tape.mul(gf, prev.c), tape.mul(gi, gc));
  Tape::Var h = tape.mul(go, tape.tanh_(c));
  return {h, c};
}

// Central-difference validation of reverse-mode gradients. `build` registers
// the parameter tensors on a fresh tape (in the same order as `params`) and
// returns the loss node; the relative-error denominator is
// max(1, |analytic|, |fd|).
struct LossGraph {
  Tape::Var loss;
  std::vector<Tape::Var> params;
};

inline real grad_check(const std::function<LossGraph(Tape&)>& build,
                       std::span<Tensor* const> params, real eps = 1e-3,
                       size_t max_coords_per_param = 24,
                       uint64_t sample_seed = 42) {
  auto eval_loss = [&]() {
    Tape tape;
    LossGraph g = build(tape);
    real loss = tape.val(g.loss).v[0];
    if (!std::isfinite(loss)) throw TensorError("grad_check: non-finite loss");
    return loss;
  };

  Tape tape;
  LossGraph g = build(tape);
  if (g.params.size() != params.size()) {
    throw TensorError("grad_check: params/vars mismatch");
  }
  if (!std::isfinite(tape.val(g.loss).v[0])) {
    throw TensorError("grad_check: non-finite loss");
  }
  tape.backward(g.loss);
  std::vector<Tensor> analytic;
  analytic.reserve(params.size());
  for (Tape::Var v : g.params) analytic.push_back(tape.grad(v));

  Rng rng(sample_seed);
  real max_rel = 0.0;
  for (size_t p = 0; p < params.size(); ++p) {
    Tensor& t = *params[p];
    std::vector<size_t> coords(t.size());
    for (size_t i = 0; i < coords.size(); ++i) coords[i] = i;
    if (coords.size() > max_coords_per_param) {
      rng.shuffle(coords);
      coords.resize(max_coords_per_param);
    }
    for (size_t i : coords) {
      real saved = t.v[i];
      t.v[i] = saved + eps;
      real f_plus = eval_loss();
      t.v[i] = saved - eps;
      real f_minus = eval_loss();
      t.v[i] = saved;
      real fd = (f_plus - f_minus) / (2.0 * eps);
      real a = analytic[p].v[i];
      real rel = std::abs(a - fd) / std::max({1.0, std::abs(a), std::abs(fd)});
      max_rel = std::max(max_rel, rel);
    }
  }
  return max_rel;
}

}  // namespace sumrl
