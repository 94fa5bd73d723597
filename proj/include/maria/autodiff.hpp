#pragma once

// Reverse-mode automatic differentiation over dense row-major tensors.
//
// A Graph is an append-only tape. Every operation appends one node whose
// parents were created earlier, so creation order is a topological order and
// backward() is a single reverse sweep. Trainable tensors live outside the
// graph as Parameters; param() and embed() create leaves that read them and
// accumulate into Parameter::grad on backward.
//
// Most primitives view a tensor as a matrix: cols = last dimension, rows =
// product of the leading dimensions. A rank-0 tensor is a 1x1 matrix.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace maria::ad {

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct Shape {
  std::vector<std::size_t> dims;

  Shape() = default;
  Shape(std::initializer_list<std::size_t> d) : dims(d) {}
  explicit Shape(std::vector<std::size_t> d) : dims(std::move(d)) {}

  static Shape matrix(std::size_t rows, std::size_t cols) { return Shape{rows, cols}; }
  static Shape scalar() { return Shape{}; }

  std::size_t numel() const;
  std::size_t cols() const { return dims.empty() ? 1 : dims.back(); }
  std::size_t rows() const;
  std::string str() const;

  friend bool operator==(const Shape&, const Shape&) = default;
};

/// A trainable tensor owned by a ParameterStore.
struct Parameter {
  std::string name;
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;

  /// Module group, the name up to the first '.'.
  std::string group() const;
};

class ParameterStore {
 public:
  ParameterStore() = default;
  ParameterStore(const ParameterStore&) = delete;
  ParameterStore& operator=(const ParameterStore&) = delete;
  ParameterStore(ParameterStore&&) = default;
  ParameterStore& operator=(ParameterStore&&) = default;

  /// Creates a zero-initialized parameter. Names must be unique.
  Parameter& create(std::string name, Shape shape);

  Parameter* find(std::string_view name);
  const Parameter* find(std::string_view name) const;

  std::vector<Parameter*> all();
  std::vector<const Parameter*> all() const;

  std::size_t size() const { return params_.size(); }
  /// Total scalar count.
  std::size_t scalar_count() const;
  /// Scalar count of parameters whose name starts with `prefix`.
  std::size_t scalar_count(std::string_view prefix) const;

  void zero_grads();

 private:
  std::vector<std::unique_ptr<Parameter>> params_;
};

class Graph;

/// Handle to a node in a Graph. Cheap to copy; valid while the graph lives.
class Value {
 public:
  Value() = default;
  Value(Graph* g, std::uint32_t id) : graph_(g), id_(id) {}

  Graph& graph() const { return *graph_; }
  std::uint32_t id() const { return id_; }
  bool valid() const { return graph_ != nullptr; }

  const Shape& shape() const;
  std::size_t rows() const { return shape().rows(); }
  std::size_t cols() const { return shape().cols(); }
  std::size_t numel() const { return shape().numel(); }
  std::span<const double> data() const;
  std::span<const double> grad() const;
  bool requires_grad() const;
  /// Convenience for 1-element values.
  double item() const;

 private:
  Graph* graph_ = nullptr;
  std::uint32_t id_ = 0;
};

class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, std::uint32_t self)>;

  struct Node {
    const char* kind = "leaf";
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;
    bool requires_grad = false;
    std::vector<std::uint32_t> parents;
    BackwardFn backward;
  };

  explicit Graph(std::uint64_t seed = 0) : rng_(seed) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  std::size_t size() const { return nodes_.size(); }
  const Node& node(std::uint32_t id) const { return nodes_[id]; }
  Node& node(std::uint32_t id) { return nodes_[id]; }

  /// Appends a node; parents must already exist.
  Value push(const char* kind, Shape shape, std::vector<double> data,
             std::vector<std::uint32_t> parents, BackwardFn backward);

  /// Runs reverse-mode accumulation from a scalar loss.
  void backward(Value loss);
  /// Resets every node gradient to zero.
  void zero_grads();

  std::mt19937_64& rng() { return rng_; }
  /// Uniform draw in [1e-12, 1 - 1e-12].
  double uniform_open();

  /// Count of loss inputs clamped away from {0, 1}.
  std::size_t clamp_events() const { return clamp_events_; }
  void add_clamp_events(std::size_t n) { clamp_events_ += n; }

  /// Test hook: multiplies the incoming gradient of every node of `kind` by
  /// `factor` before its backward recipe runs. An empty kind disables it.
  static void inject_backward_fault(std::string kind, double factor);

  /// Record / replay of stop_gradient outputs. While recording, every
  /// stop_gradient appends its value to `tape`; while replaying, the k-th
  /// stop_gradient returns tape[k] instead of its input. Finite-difference
  /// checks replay so that frozen branches stay constant, as autodiff assumes.
  enum class FreezeMode { off, record, replay };
  void freeze_stop_gradients(FreezeMode mode, std::vector<std::vector<double>>* tape);
  std::vector<double> frozen_value(const std::vector<double>& current);

 private:
  std::vector<Node> nodes_;
  FreezeMode freeze_mode_ = FreezeMode::off;
  std::vector<std::vector<double>>* freeze_tape_ = nullptr;
  std::size_t freeze_cursor_ = 0;
  std::mt19937_64 rng_;
  std::size_t clamp_events_ = 0;
};

enum class Mode { train, eval };

// ---- leaves ----------------------------------------------------------------

Value constant(Graph& g, Shape shape, std::vector<double> data);
Value variable(Graph& g, Shape shape, std::vector<double> data);
Value param(Graph& g, Parameter& p);
/// Rows of `table` (rows x dim) selected by `ids`, shape |ids| x dim.
Value embed(Graph& g, Parameter& table, std::span<const std::size_t> ids);

// ---- primitives ------------------------------------------------------------

Value matmul(Value a, Value b);
/// Blocks of `a` (batch*n x k) times blocks of `b` (batch*k x p), or of
/// b^T when `transpose_b` (b is batch*p x k).
Value batched_matmul(Value a, Value b, std::size_t batch, bool transpose_b);
Value transpose(Value a);

// Elementwise with row/column broadcasting: each operand dimension must
// match the other or be 1.
Value add(Value a, Value b);
Value sub(Value a, Value b);
Value mul(Value a, Value b);
Value scale(Value a, double factor);

Value concat(std::span<const Value> parts);
Value concat_rows(std::span<const Value> parts);
Value slice(Value a, std::size_t begin, std::size_t width);
Value gather_rows(Value a, std::span<const std::size_t> rows);
Value repeat_rows(Value a, std::size_t times);
/// Column j of `a` repeated widths[j] times.
Value expand_cols(Value a, std::span<const std::size_t> widths);
Value reshape(Value a, Shape shape);

Value sigmoid(Value a);
Value relu(Value a);
Value softmax(Value a);
/// Softmax over the last axis with entries where mask == 0 excluded
/// (their output is exactly 0). `mask` has one byte per element.
Value masked_softmax(Value a, std::span<const std::uint8_t> mask);
/// Rowwise (x - mean) / sqrt(var + eps).
Value normalize_rows(Value a, double eps = 1e-5);

/// Rowwise dot product, rows x 1.
Value dot_rows(Value a, Value b);
/// Sum of every element, scalar.
Value sum(Value a);
Value mean(Value a);
/// Rowwise sum over the last axis, rows x 1.
Value sum_cols(Value a);

Value stop_gradient(Value a);

/// Gumbel-softmax over the last axis. In train mode draws g = -log(-log u)
/// from the graph rng and returns softmax((logits + g) / temperature); in
/// eval mode returns the constant one-hot argmax of the logits.
Value gumbel_softmax(Value logits, double temperature, Mode mode);

/// Summed binary cross-entropy of predictions against 0/1 labels.
/// Predictions are clamped to [1e-12, 1 - 1e-12]; clamps are counted.
Value bce_sum(Value predictions, std::span<const double> labels);

// ---- optimizer -------------------------------------------------------------

struct AdamOptions {
  double learning_rate = 0.05;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.0;
};

struct AdamState {
  AdamOptions options;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  std::int64_t step = 0;
};

/// One bias-corrected Adam update with decoupled weight decay. Gradients are
/// left untouched; the caller zeroes them.
void adam_step(std::span<Parameter* const> params, AdamState& state);

}  // namespace maria::ad
