#include "medlasa/numerics/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <string>

#include "medlasa/errors.hpp"
#include "medlasa/numerics/kernels.hpp"

namespace medlasa::ad {

const Matrix& Var::value() const { return tape->value(*this); }

const Matrix* Gradients::find(Var v) const {
  auto it = grads_.find(v.id);
  return it == grads_.end() ? nullptr : &it->second;
}

const Matrix& Gradients::at(Var v) const {
  const Matrix* g = find(v);
  if (g == nullptr) throw ContractError("no gradient recorded for node " + std::to_string(v.id));
  return *g;
}

bool GradSink::wants(int id) const { return tape_.requires_grad(id); }

Matrix& GradSink::slot(int id) {
  Matrix& g = grads_[static_cast<std::size_t>(id)];
  if (g.empty()) {
    const Matrix& v = tape_.value_at(id);
    g = Matrix(v.rows(), v.cols());
  }
  return g;
}

Var Tape::constant(Matrix value) {
  nodes_.push_back(Node{std::move(value), {}, {}, false, false});
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::parameter(Matrix value) {
  nodes_.push_back(Node{std::move(value), {}, {}, true, tracking_});
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

const Matrix& Tape::value(Var v) const {
  if (v.tape != this || v.id < 0 || static_cast<std::size_t>(v.id) >= nodes_.size())
    throw ContractError("variable does not belong to this tape");
  return nodes_[static_cast<std::size_t>(v.id)].value;
}

Var Tape::record(Matrix value, std::vector<int> inputs, BackwardFn fn) {
  bool needs = false;
  if (tracking_) {
    for (int in : inputs) needs = needs || nodes_[static_cast<std::size_t>(in)].requires_grad;
  }
  Node node{std::move(value), std::move(inputs), needs ? std::move(fn) : BackwardFn{}, false, needs};
  nodes_.push_back(std::move(node));
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Gradients Tape::backward(Var loss) const {
  if (!tracking_) throw ContractError("backward on a tape recorded without gradient tracking");
  const Matrix& lv = value(loss);
  if (lv.rows() != 1 || lv.cols() != 1) throw ContractError("backward requires a scalar (1x1) loss");
  Gradients out;
  std::vector<Matrix> grads(nodes_.size());
  if (!nodes_[static_cast<std::size_t>(loss.id)].requires_grad) return out;
  grads[static_cast<std::size_t>(loss.id)] = Matrix(1, 1, 1.0);
  GradSink sink(*this, grads);
  for (int i = loss.id; i >= 0; --i) {
    const auto idx = static_cast<std::size_t>(i);
    const Node& node = nodes_[idx];
    if (grads[idx].empty()) continue;
    if (node.trainable) {
      out.grads_.emplace(i, std::move(grads[idx]));
      continue;
    }
    if (node.backward) node.backward(grads[idx], sink);
    grads[idx] = Matrix();
  }
  return out;
}

namespace {

Tape& same_tape(Var a, Var b) {
  if (!a.valid() || !b.valid() || a.tape != b.tape) throw ContractError("variables from different tapes");
  return *a.tape;
}

void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
  if (!a.same_shape(b)) throw ShapeError(std::string(op) + ": shape mismatch");
}

}  // namespace

Var add(Var a, Var b) {
  Tape& t = same_tape(a, b);
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  require_same_shape(av, bv, "add");
  Matrix out = av;
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] += bv.data()[i];
  const int ia = a.id, ib = b.id;
  return t.record(std::move(out), {ia, ib}, [ia, ib](const Matrix& g, GradSink& s) {
    for (int id : {ia, ib}) {
      if (!s.wants(id)) continue;
      Matrix& dst = s.slot(id);
      for (std::size_t i = 0; i < g.size(); ++i) dst.data()[i] += g.data()[i];
    }
  });
}

Var mul(Var a, Var b) {
  Tape& t = same_tape(a, b);
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  require_same_shape(av, bv, "mul");
  Matrix out = av;
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] *= bv.data()[i];
  const int ia = a.id, ib = b.id;
  return t.record(std::move(out), {ia, ib}, [ia, ib, &av, &bv](const Matrix& g, GradSink& s) {
    if (s.wants(ia)) {
      Matrix& dst = s.slot(ia);
      for (std::size_t i = 0; i < g.size(); ++i) dst.data()[i] += g.data()[i] * bv.data()[i];
    }
    if (s.wants(ib)) {
      Matrix& dst = s.slot(ib);
      for (std::size_t i = 0; i < g.size(); ++i) dst.data()[i] += g.data()[i] * av.data()[i];
    }
  });
}

Var scale(Var a, double factor) {
  Tape& t = *a.tape;
  Matrix out = a.value();
  for (double& v : out.values()) v *= factor;
  const int ia = a.id;
  return t.record(std::move(out), {ia}, [ia, factor](const Matrix& g, GradSink& s) {
    Matrix& dst = s.slot(ia);
    for (std::size_t i = 0; i < g.size(); ++i) dst.data()[i] += g.data()[i] * factor;
  });
}

Var matmul(Var a, Var b) {
  Tape& t = same_tape(a, b);
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  Matrix out = kernels::matmul(av, bv);
  const int ia = a.id, ib = b.id;
  return t.record(std::move(out), {ia, ib}, [ia, ib, &av, &bv](const Matrix& g, GradSink& s) {
    if (s.wants(ia)) kernels::gemm_nt(g, bv, s.slot(ia), true);
    if (s.wants(ib)) kernels::gemm_tn(av, g, s.slot(ib), true);
  });
}

Var matmul_nt(Var a, Var b) {
  Tape& t = same_tape(a, b);
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  Matrix out = kernels::matmul_nt(av, bv);
  const int ia = a.id, ib = b.id;
  return t.record(std::move(out), {ia, ib}, [ia, ib, &av, &bv](const Matrix& g, GradSink& s) {
    if (s.wants(ia)) kernels::gemm_nn(g, bv, s.slot(ia), true);
    if (s.wants(ib)) kernels::gemm_tn(g, av, s.slot(ib), true);
  });
}

Var sigmoid(Var a) {
  Tape& t = *a.tape;
  const Matrix& x = a.value();
  Matrix out(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.size(); ++i) out.data()[i] = 1.0 / (1.0 + std::exp(-x.data()[i]));
  const int ia = a.id;
  return t.record(std::move(out), {ia}, [ia, &x](const Matrix& g, GradSink& s) {
    Matrix& dst = s.slot(ia);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double sv = 1.0 / (1.0 + std::exp(-x.data()[i]));
      dst.data()[i] += g.data()[i] * sv * (1.0 - sv);
    }
  });
}

Var silu(Var a) {
  Tape& t = *a.tape;
  const Matrix& x = a.value();
  Matrix out(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double v = x.data()[i];
    out.data()[i] = v / (1.0 + std::exp(-v));
  }
  const int ia = a.id;
  return t.record(std::move(out), {ia}, [ia, &x](const Matrix& g, GradSink& s) {
    Matrix& dst = s.slot(ia);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double v = x.data()[i];
      const double sg = 1.0 / (1.0 + std::exp(-v));
      dst.data()[i] += g.data()[i] * sg * (1.0 + v * (1.0 - sg));
    }
  });
}

Var rmsnorm_rows(Var x, Var gamma, double eps) {
  Tape& t = same_tape(x, gamma);
  const Matrix& xv = x.value();
  const Matrix& gv = gamma.value();
  if (gv.rows() != 1 || gv.cols() != xv.cols()) throw ShapeError("rmsnorm_rows: gain must be 1 x d");
  const std::size_t n = xv.rows(), d = xv.cols();
  auto inv = std::make_shared<std::vector<double>>(n);
  Matrix out(n, d);
  for (std::size_t r = 0; r < n; ++r) {
    auto row = xv.row(r);
    double sq = 0.0;
    for (double v : row) sq += v * v;
    const double denom = std::sqrt(sq / static_cast<double>(d) + eps);
    if (denom == 0.0) throw ContractError("rmsnorm_rows: zero row with eps = 0");
    (*inv)[r] = 1.0 / denom;
    auto dst = out.row(r);
    for (std::size_t c = 0; c < d; ++c) dst[c] = gv.data()[c] * row[c] / denom;
  }
  const int ix = x.id, ig = gamma.id;
  return t.record(std::move(out), {ix, ig}, [ix, ig, inv, &xv, &gv, n, d](const Matrix& g, GradSink& s) {
    if (s.wants(ig)) {
      Matrix& dg = s.slot(ig);
      for (std::size_t r = 0; r < n; ++r) {
        const double ir = (*inv)[r];
        for (std::size_t c = 0; c < d; ++c) dg.data()[c] += g(r, c) * xv(r, c) * ir;
      }
    }
    if (s.wants(ix)) {
      Matrix& dx = s.slot(ix);
      for (std::size_t r = 0; r < n; ++r) {
        const double ir = (*inv)[r];
        double dot = 0.0;
        for (std::size_t c = 0; c < d; ++c) dot += g(r, c) * gv.data()[c] * xv(r, c);
        const double coef = dot * ir * ir * ir / static_cast<double>(d);
        for (std::size_t c = 0; c < d; ++c)
          dx(r, c) += gv.data()[c] * g(r, c) * ir - xv(r, c) * coef;
      }
    }
  });
}

Var gather_rows(Var table, std::vector<std::size_t> ids) {
  Tape& t = *table.tape;
  const Matrix& tv = table.value();
  Matrix out(ids.size(), tv.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= tv.rows()) throw ShapeError("gather_rows: index out of range");
    std::copy(tv.row(ids[i]).begin(), tv.row(ids[i]).end(), out.row(i).begin());
  }
  const int it = table.id;
  return t.record(std::move(out), {it}, [it, ids = std::move(ids)](const Matrix& g, GradSink& s) {
    Matrix& dst = s.slot(it);
    for (std::size_t i = 0; i < ids.size(); ++i) {
      auto src = g.row(i);
      auto row = dst.row(ids[i]);
      for (std::size_t c = 0; c < src.size(); ++c) row[c] += src[c];
    }
  });
}

Var replace_rows(Var x, std::vector<std::size_t> rows, Matrix values) {
  Tape& t = *x.tape;
  const Matrix& xv = x.value();
  if (values.rows() != rows.size() || values.cols() != xv.cols())
    throw ShapeError("replace_rows: replacement shape mismatch");
  Matrix out = xv;
  std::vector<char> replaced(xv.rows(), 0);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= xv.rows()) throw ShapeError("replace_rows: row index out of range");
    std::copy(values.row(i).begin(), values.row(i).end(), out.row(rows[i]).begin());
    replaced[rows[i]] = 1;
  }
  const int ix = x.id;
  return t.record(std::move(out), {ix}, [ix, replaced = std::move(replaced)](const Matrix& g, GradSink& s) {
    Matrix& dst = s.slot(ix);
    for (std::size_t r = 0; r < g.rows(); ++r) {
      if (replaced[r]) continue;
      auto src = g.row(r);
      auto row = dst.row(r);
      for (std::size_t c = 0; c < src.size(); ++c) row[c] += src[c];
    }
  });
}

Var causal_attention(Var q, Var k, Var v, std::vector<Segment> segments, std::size_t n_heads) {
  Tape& t = same_tape(q, k);
  same_tape(q, v);
  const Matrix& qv = q.value();
  const Matrix& kv = k.value();
  const Matrix& vv = v.value();
  if (!qv.same_shape(kv) || !qv.same_shape(vv)) throw ShapeError("causal_attention: q/k/v shapes differ");
  const std::size_t d = qv.cols();
  if (n_heads == 0 || d % n_heads != 0) throw ShapeError("causal_attention: d not divisible by heads");
  const std::size_t dh = d / n_heads;
  const double inv_scale = 1.0 / std::sqrt(static_cast<double>(dh));
  std::size_t covered = 0;
  for (const Segment& seg : segments) {
    if (seg.start != covered) throw ContractError("causal_attention: segments must tile the rows in order");
    covered += seg.length;
  }
  if (covered != qv.rows()) throw ContractError("causal_attention: segments do not cover all rows");

  // probs layout: per segment, per head, lower-triangular length x length block.
  auto probs = std::make_shared<std::vector<double>>();
  std::vector<std::size_t> offsets;
  std::size_t total = 0;
  for (const Segment& seg : segments) {
    offsets.push_back(total);
    total += n_heads * seg.length * seg.length;
  }
  probs->assign(total, 0.0);

  Matrix out(qv.rows(), d);
  std::vector<double> scores;
  for (std::size_t si = 0; si < segments.size(); ++si) {
    const Segment seg = segments[si];
    for (std::size_t h = 0; h < n_heads; ++h) {
      double* p = probs->data() + offsets[si] + h * seg.length * seg.length;
      const std::size_t c0 = h * dh;
      for (std::size_t i = 0; i < seg.length; ++i) {
        const double* qi = qv.data() + (seg.start + i) * d + c0;
        double peak = -INFINITY;
        scores.assign(i + 1, 0.0);
        for (std::size_t j = 0; j <= i; ++j) {
          const double* kj = kv.data() + (seg.start + j) * d + c0;
          double acc = 0.0;
          for (std::size_t c = 0; c < dh; ++c) acc += qi[c] * kj[c];
          scores[j] = acc * inv_scale;
          peak = std::max(peak, scores[j]);
        }
        double z = 0.0;
        for (std::size_t j = 0; j <= i; ++j) {
          scores[j] = std::exp(scores[j] - peak);
          z += scores[j];
        }
        double* oi = out.data() + (seg.start + i) * d + c0;
        for (std::size_t j = 0; j <= i; ++j) {
          const double pij = scores[j] / z;
          p[i * seg.length + j] = pij;
          const double* vj = vv.data() + (seg.start + j) * d + c0;
          for (std::size_t c = 0; c < dh; ++c) oi[c] += pij * vj[c];
        }
      }
    }
  }

  const int iq = q.id, ik = k.id, iv = v.id;
  return t.record(
      std::move(out), {iq, ik, iv},
      [iq, ik, iv, &qv, &kv, &vv, probs, offsets = std::move(offsets), segments = std::move(segments),
       n_heads, dh, d, inv_scale](const Matrix& g, GradSink& s) {
        const bool wq = s.wants(iq), wk = s.wants(ik), wv = s.wants(iv);
        Matrix* dq = wq ? &s.slot(iq) : nullptr;
        Matrix* dk = wk ? &s.slot(ik) : nullptr;
        Matrix* dv = wv ? &s.slot(iv) : nullptr;
        std::vector<double> dp;
        for (std::size_t si = 0; si < segments.size(); ++si) {
          const Segment seg = segments[si];
          for (std::size_t h = 0; h < n_heads; ++h) {
            const double* p = probs->data() + offsets[si] + h * seg.length * seg.length;
            const std::size_t c0 = h * dh;
            for (std::size_t i = 0; i < seg.length; ++i) {
              const double* gi = g.data() + (seg.start + i) * d + c0;
              dp.assign(i + 1, 0.0);
              double weighted = 0.0;
              for (std::size_t j = 0; j <= i; ++j) {
                const double* vj = vv.data() + (seg.start + j) * d + c0;
                double acc = 0.0;
                for (std::size_t c = 0; c < dh; ++c) acc += gi[c] * vj[c];
                dp[j] = acc;
                weighted += p[i * seg.length + j] * acc;
                if (dv != nullptr) {
                  double* dvj = dv->data() + (seg.start + j) * d + c0;
                  const double pij = p[i * seg.length + j];
                  for (std::size_t c = 0; c < dh; ++c) dvj[c] += pij * gi[c];
                }
              }
              if (dq == nullptr && dk == nullptr) continue;
              const double* qi = qv.data() + (seg.start + i) * d + c0;
              double* dqi = dq != nullptr ? dq->data() + (seg.start + i) * d + c0 : nullptr;
              for (std::size_t j = 0; j <= i; ++j) {
                const double ds = p[i * seg.length + j] * (dp[j] - weighted) * inv_scale;
                if (ds == 0.0) continue;
                const double* kj = kv.data() + (seg.start + j) * d + c0;
                if (dqi != nullptr)
                  for (std::size_t c = 0; c < dh; ++c) dqi[c] += ds * kj[c];
                if (dk != nullptr) {
                  double* dkj = dk->data() + (seg.start + j) * d + c0;
                  for (std::size_t c = 0; c < dh; ++c) dkj[c] += ds * qi[c];
                }
              }
            }
          }
        }
      });
}

Var cross_entropy(Var logits, std::vector<int> targets) {
  Tape& t = *logits.tape;
  const Matrix& lv = logits.value();
  if (targets.size() != lv.rows()) throw ShapeError("cross_entropy: one target per row required");
  std::size_t count = 0;
  for (int tgt : targets) {
    if (tgt >= static_cast<int>(lv.cols())) throw ShapeError("cross_entropy: target id out of range");
    if (tgt >= 0) ++count;
  }
  if (count == 0) throw ContractError("cross_entropy: no unmasked targets");
  auto probs = std::make_shared<Matrix>(lv.rows(), lv.cols());
  double total = 0.0;
  for (std::size_t r = 0; r < lv.rows(); ++r) {
    if (targets[r] < 0) continue;
    auto row = lv.row(r);
    const double peak = *std::max_element(row.begin(), row.end());
    double z = 0.0;
    for (double v : row) z += std::exp(v - peak);
    const double log_z = std::log(z) + peak;
    total += log_z - row[static_cast<std::size_t>(targets[r])];
    auto pr = probs->row(r);
    for (std::size_t c = 0; c < row.size(); ++c) pr[c] = std::exp(row[c] - log_z);
  }
  const double inv_count = 1.0 / static_cast<double>(count);
  const int il = logits.id;
  return t.record(Matrix(1, 1, total * inv_count), {il},
                  [il, probs, targets = std::move(targets), inv_count](const Matrix& g, GradSink& s) {
                    Matrix& dst = s.slot(il);
                    const double gs = g(0, 0) * inv_count;
                    for (std::size_t r = 0; r < dst.rows(); ++r) {
                      if (targets[r] < 0) continue;
                      auto pr = probs->row(r);
                      auto dr = dst.row(r);
                      for (std::size_t c = 0; c < dr.size(); ++c) dr[c] += gs * pr[c];
                      dr[static_cast<std::size_t>(targets[r])] -= gs;
                    }
                  });
}

Var sum(Var a) {
  Tape& t = *a.tape;
  double total = 0.0;
  for (double v : a.value().values()) total += v;
  const int ia = a.id;
  return t.record(Matrix(1, 1, total), {ia}, [ia](const Matrix& g, GradSink& s) {
    Matrix& dst = s.slot(ia);
    for (double& v : dst.values()) v += g(0, 0);
  });
}

Var sum_squares(Var a) {
  Tape& t = *a.tape;
  const Matrix& x = a.value();
  double total = 0.0;
  for (double v : x.values()) total += v * v;
  const int ia = a.id;
  return t.record(Matrix(1, 1, total), {ia}, [ia, &x](const Matrix& g, GradSink& s) {
    Matrix& dst = s.slot(ia);
    for (std::size_t i = 0; i < x.size(); ++i) dst.data()[i] += 2.0 * g(0, 0) * x.data()[i];
  });
}

}  // namespace medlasa::ad
