#pragma once

// Tape-based reverse-mode differentiation over whole matrices.
//
// A Tape records primitive matrix operations in execution order. Leaves are
// either constants or trainable parameters; backward() walks the tape in
// reverse from a scalar node and returns gradients for the trainable leaves it
// reaches. A tape is single-owner and single-use: build one per forward pass.

#include <cstddef>
#include <deque>
#include <functional>
#include <map>
#include <vector>

#include "medlasa/numerics/matrix.hpp"

namespace medlasa::ad {

class Tape;

/// Handle to a recorded node.
struct Var {
  Tape* tape = nullptr;
  int id = -1;

  bool valid() const noexcept { return tape != nullptr && id >= 0; }
  const Matrix& value() const;
};

class Gradients {
 public:
  const Matrix* find(Var v) const;
  const Matrix& at(Var v) const;
  bool contains(Var v) const { return find(v) != nullptr; }
  std::size_t size() const noexcept { return grads_.size(); }

 private:
  friend class Tape;
  std::map<int, Matrix> grads_;
};

/// Write access to input gradients while a node's backward function runs.
class GradSink {
 public:
  /// True when gradients flowing into `id` can reach a trainable leaf.
  bool wants(int id) const;
  /// Gradient accumulator for node `id`, zero-initialised on first use.
  Matrix& slot(int id);

 private:
  friend class Tape;
  GradSink(const Tape& tape, std::vector<Matrix>& grads) : tape_(tape), grads_(grads) {}
  const Tape& tape_;
  std::vector<Matrix>& grads_;
};

class Tape {
 public:
  using BackwardFn = std::function<void(const Matrix& grad_out, GradSink& sink)>;

  /// With track_gradients = false, backward closures are discarded at record
  /// time and backward() is unavailable; used for inference-only passes.
  explicit Tape(bool track_gradients = true) : tracking_(track_gradients) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix value);
  Var parameter(Matrix value);

  const Matrix& value(Var v) const;
  const Matrix& value_at(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  bool requires_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].requires_grad; }
  bool tracking() const noexcept { return tracking_; }
  std::size_t size() const noexcept { return nodes_.size(); }

  /// Records a node. `inputs` must already be on this tape.
  Var record(Matrix value, std::vector<int> inputs, BackwardFn fn);

  /// Gradients of a 1x1 node with respect to every trainable leaf it depends on.
  Gradients backward(Var loss) const;

 private:
  struct Node {
    Matrix value;
    std::vector<int> inputs;
    BackwardFn backward;
    bool trainable = false;
    bool requires_grad = false;
  };
  // deque: backward closures hold references to earlier node values.
  std::deque<Node> nodes_;
  bool tracking_;
};

/// Contiguous row range of one packed sequence.
struct Segment {
  std::size_t start = 0;
  std::size_t length = 0;
};

Var add(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
Var matmul(Var a, Var b);
/// a * b^T, the natural form for y = x W^T with W stored out x in.
Var matmul_nt(Var a, Var b);
Var silu(Var a);
Var sigmoid(Var a);
/// Row-wise rmsnorm with a 1 x d gain.
Var rmsnorm_rows(Var x, Var gamma, double eps);
/// out[i] = table[ids[i]]; gradient scatter-adds into the table.
Var gather_rows(Var table, std::vector<std::size_t> ids);
/// Returns x with the listed rows replaced by constant values; no gradient
/// flows into replaced rows.
Var replace_rows(Var x, std::vector<std::size_t> rows, Matrix values);
/// Causal multi-head attention applied independently within each segment.
Var causal_attention(Var q, Var k, Var v, std::vector<Segment> segments, std::size_t n_heads);
/// Mean negative log-likelihood over rows whose target is >= 0.
Var cross_entropy(Var logits, std::vector<int> targets);
Var sum(Var a);
Var sum_squares(Var a);

}  // namespace medlasa::ad
