#pragma once
// Tensor value type and the reverse-mode autodiff tape.
//
// A Tensor is a shape plus a contiguous row-major buffer, shared by handle.
// Gradients live in an optional buffer of the same extent, allocated lazily
// the first time backward touches it.  f32 is the working precision; the
// same templates instantiate at f64 for gradient checking only.
//
// The Graph is an append-only tape: ops executed under a non-null Graph*
// push one node each, recording the input node ids and a closure that
// propagates the output gradient to the inputs.  Topological order is
// insertion order, so one reverse sweep visits every node exactly once.

#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "cseg/rng.hpp"

namespace cseg {

struct DimensionError : std::runtime_error {
  explicit DimensionError(const std::string& m) : std::runtime_error(m) {}
};
struct ArgumentError : std::runtime_error {
  explicit ArgumentError(const std::string& m) : std::runtime_error(m) {}
};
struct StateError : std::runtime_error {
  explicit StateError(const std::string& m) : std::runtime_error(m) {}
};
struct InputError : std::runtime_error {
  explicit InputError(const std::string& m) : std::runtime_error(m) {}
};
struct FormatError : std::runtime_error {
  explicit FormatError(const std::string& m) : std::runtime_error(m) {}
};
struct IngestError : std::runtime_error {
  explicit IngestError(const std::string& m) : std::runtime_error(m) {}
};
struct IoError : std::runtime_error {
  explicit IoError(const std::string& m) : std::runtime_error(m) {}
};

using Shape = std::vector<int>;

inline int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int e : s) n *= e;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << ']';
  return os.str();
}

template <class T>
struct Storage {
  Shape shape;
  std::vector<T> v;  // values, row-major
  std::vector<T> g;  // gradient; empty until backward needs it
  bool needs_grad = false;

  int64_t numel() const { return int64_t(v.size()); }
  void ensure_grad() {
    if (g.size() != v.size()) g.assign(v.size(), T(0));
  }
};

template <class T>
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool needs_grad = false) {
    Tensor t;
    t.s_ = std::make_shared<Storage<T>>();
    t.s_->shape = std::move(shape);
    t.s_->v.assign(size_t(shape_numel(t.s_->shape)), T(0));
    t.s_->needs_grad = needs_grad;
    return t;
  }

  static Tensor full(Shape shape, T value, bool needs_grad = false) {
    Tensor t = zeros(std::move(shape), needs_grad);
    for (auto& x : t.s_->v) x = value;
    return t;
  }

  static Tensor from_vec(Shape shape, std::vector<T> data, bool needs_grad = false) {
    if (int64_t(data.size()) != shape_numel(shape))
      throw DimensionError("from_vec: " + std::to_string(data.size()) +
                           " values for shape " + shape_str(shape));
    Tensor t;
    t.s_ = std::make_shared<Storage<T>>();
    t.s_->shape = std::move(shape);
    t.s_->v = std::move(data);
    t.s_->needs_grad = needs_grad;
    return t;
  }

  bool defined() const { return bool(s_); }
  const Shape& shape() const { return s_->shape; }
  int dim(int i) const { return s_->shape[size_t(i)]; }
  int rank() const { return int(s_->shape.size()); }
  int64_t numel() const { return s_->numel(); }
  bool needs_grad() const { return s_ && s_->needs_grad; }

  T* data() { return s_->v.data(); }
  const T* data() const { return s_->v.data(); }
  std::vector<T>& vec() { return s_->v; }
  const std::vector<T>& vec() const { return s_->v; }
  std::vector<T>& gradvec() { return s_->g; }
  const std::vector<T>& gradvec() const { return s_->g; }

  T* grad_data() {
    s_->ensure_grad();
    return s_->g.data();
  }
  void zero_grad() {
    for (auto& x : s_->g) x = T(0);
  }

  std::shared_ptr<Storage<T>> storage() const { return s_; }

  // producing tape node; -1 for leaves and ops run without a graph
  int node = -1;

 private:
  std::shared_ptr<Storage<T>> s_;
};

enum class Mode { train, eval };

template <class T>
class Graph {
 public:
  // Registers a tape node.  `inputs` are the producing node ids of the op's
  // tensor inputs (-1 entries, i.e. leaves, are dropped); `backward` reads
  // the output gradient and accumulates into the inputs' gradients.
  int emit(const std::vector<int>& inputs, std::function<void()> backward) {
    const int id = int(nodes_.size());
    for (int in : inputs)
      if (in >= id)
        throw StateError("graph: node input id " + std::to_string(in) +
                         " not older than node " + std::to_string(id));
    nodes_.push_back(Node{std::move(backward)});
    return id;
  }

  // Reverse sweep from a scalar loss.  Each node runs exactly once, in
  // reverse insertion order.  `seed` scales every gradient of the sweep —
  // accumulating seeded sweeps over micro-batches reproduces the gradient
  // of the full batch exactly.
  void backward(Tensor<T>& loss, T seed = T(1)) {
    if (loss.numel() != 1) throw ArgumentError("backward: loss must be scalar");
    loss.storage()->ensure_grad();
    loss.storage()->g[0] = seed;
    for (size_t i = nodes_.size(); i-- > 0;) nodes_[i].bw();
  }

  size_t num_nodes() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

 private:
  struct Node {
    std::function<void()> bw;
  };
  std::vector<Node> nodes_;
};

// Everything an op needs to know about its execution environment: the tape
// (null = pure inference, no autodiff bookkeeping), train/eval mode for
// batchnorm and dropout, and the rng that feeds dropout masks.
template <class T>
struct Ctx {
  Graph<T>* g = nullptr;
  Mode mode = Mode::eval;
  Rng* rng = nullptr;
};

}  // namespace cseg
