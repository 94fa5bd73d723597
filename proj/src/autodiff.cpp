#include "maria/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

namespace maria::ad {

namespace {

std::string g_fault_kind;
double g_fault_factor = 1.0;

Graph::Node& node_of(Value v) { return v.graph().node(v.id()); }

void require_same_graph(Value a, Value b, const char* op) {
  if (&a.graph() != &b.graph()) {
    throw std::invalid_argument(std::string(op) + ": operands belong to different graphs");
  }
}

[[noreturn]] void shape_error(const char* op, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op) + ": incompatible shapes " + a.str() + " and " + b.str());
}

[[noreturn]] void shape_error(const char* op, const Shape& a, const std::string& why) {
  throw ShapeError(std::string(op) + ": shape " + a.str() + " " + why);
}

// C[n x m] += A[n x k] * B[k x m]
void gemm_nn(std::size_t n, std::size_t k, std::size_t m, const double* a, const double* b,
             double* c) {
  for (std::size_t i = 0; i < n; ++i) {
    double* ci = c + i * m;
    const double* ai = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ai[p];
      if (av == 0.0) continue;
      const double* bp = b + p * m;
      for (std::size_t j = 0; j < m; ++j) ci[j] += av * bp[j];
    }
  }
}

// C[n x m] += A[n x k] * B[m x k]^T
void gemm_nt(std::size_t n, std::size_t k, std::size_t m, const double* a, const double* b,
             double* c) {
  for (std::size_t i = 0; i < n; ++i) {
    const double* ai = a + i * k;
    double* ci = c + i * m;
    for (std::size_t j = 0; j < m; ++j) {
      const double* bj = b + j * k;
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += ai[p] * bj[p];
      ci[j] += s;
    }
  }
}

// C[k x m] += A[n x k]^T * B[n x m]
void gemm_tn(std::size_t n, std::size_t k, std::size_t m, const double* a, const double* b,
             double* c) {
  for (std::size_t i = 0; i < n; ++i) {
    const double* ai = a + i * k;
    const double* bi = b + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ai[p];
      if (av == 0.0) continue;
      double* cp = c + p * m;
      for (std::size_t j = 0; j < m; ++j) cp[j] += av * bi[j];
    }
  }
}

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

struct Broadcast {
  std::size_t rows, cols, ar, ac, br, bc;
  Shape out;

  std::size_t ai(std::size_t i, std::size_t j) const {
    return (ar == 1 ? 0 : i) * ac + (ac == 1 ? 0 : j);
  }
  std::size_t bi(std::size_t i, std::size_t j) const {
    return (br == 1 ? 0 : i) * bc + (bc == 1 ? 0 : j);
  }
};

Broadcast broadcast(const char* op, const Shape& a, const Shape& b) {
  Broadcast r{};
  r.ar = a.rows();
  r.ac = a.cols();
  r.br = b.rows();
  r.bc = b.cols();
  auto merge = [&](std::size_t x, std::size_t y) {
    if (x == y || y == 1) return x;
    if (x == 1) return y;
    shape_error(op, a, b);
  };
  r.rows = merge(r.ar, r.br);
  r.cols = merge(r.ac, r.bc);
  if (r.ar == r.rows && r.ac == r.cols) {
    r.out = a;
  } else if (r.br == r.rows && r.bc == r.cols) {
    r.out = b;
  } else {
    r.out = Shape::matrix(r.rows, r.cols);
  }
  return r;
}

template <typename Fwd, typename Da, typename Db>
Value binary(const char* kind, Value a, Value b, Fwd fwd, Da da, Db db) {
  require_same_graph(a, b, kind);
  Graph& g = a.graph();
  Broadcast bc = broadcast(kind, a.shape(), b.shape());
  std::vector<double> out(bc.rows * bc.cols);
  {
    const auto& ad = node_of(a).data;
    const auto& bd = node_of(b).data;
    for (std::size_t i = 0; i < bc.rows; ++i)
      for (std::size_t j = 0; j < bc.cols; ++j)
        out[i * bc.cols + j] = fwd(ad[bc.ai(i, j)], bd[bc.bi(i, j)]);
  }
  const std::uint32_t ia = a.id(), ib = b.id();
  Shape shape = bc.out;
  return g.push(kind, std::move(shape), std::move(out), {ia, ib},
                [bc, ia, ib, da, db](Graph& gr, std::uint32_t self) {
                  const auto& gy = gr.node(self).grad;
                  auto& na = gr.node(ia);
                  auto& nb = gr.node(ib);
                  for (std::size_t i = 0; i < bc.rows; ++i) {
                    for (std::size_t j = 0; j < bc.cols; ++j) {
                      const double go = gy[i * bc.cols + j];
                      const std::size_t x = bc.ai(i, j), y = bc.bi(i, j);
                      if (na.requires_grad) na.grad[x] += da(go, na.data[x], nb.data[y]);
                      if (nb.requires_grad) nb.grad[y] += db(go, na.data[x], nb.data[y]);
                    }
                  }
                });
}

// Single-parent op; `bwd` accumulates into the parent when it needs a grad.
Value unary(const char* kind, Value a, Shape shape, std::vector<double> out,
            std::function<void(const Graph::Node& self, Graph::Node& parent)> bwd) {
  Graph& g = a.graph();
  const std::uint32_t ia = a.id();
  return g.push(kind, std::move(shape), std::move(out), {ia},
                [ia, bwd = std::move(bwd)](Graph& gr, std::uint32_t self) {
                  auto& p = gr.node(ia);
                  if (p.requires_grad) bwd(gr.node(self), p);
                });
}

void softmax_row_backward(const double* y, const double* gy, double* gx, std::size_t n,
                          double factor) {
  double dot = 0.0;
  for (std::size_t j = 0; j < n; ++j) dot += y[j] * gy[j];
  for (std::size_t j = 0; j < n; ++j) gx[j] += factor * y[j] * (gy[j] - dot);
}

}  // namespace

// ---- Shape / Parameter -----------------------------------------------------

std::size_t Shape::numel() const {
  std::size_t n = 1;
  for (auto d : dims) n *= d;
  return n;
}

std::size_t Shape::rows() const {
  if (dims.size() <= 1) return 1;
  std::size_t n = 1;
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) n *= dims[i];
  return n;
}

std::string Shape::str() const {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < dims.size(); ++i) os << (i ? "x" : "") << dims[i];
  os << ']';
  return os.str();
}

std::string Parameter::group() const { return name.substr(0, name.find('.')); }

Parameter& ParameterStore::create(std::string name, Shape shape) {
  if (find(name) != nullptr) throw std::invalid_argument("duplicate parameter name: " + name);
  auto p = std::make_unique<Parameter>();
  p->name = std::move(name);
  p->shape = std::move(shape);
  p->data.assign(p->shape.numel(), 0.0);
  p->grad.assign(p->shape.numel(), 0.0);
  params_.push_back(std::move(p));
  return *params_.back();
}

Parameter* ParameterStore::find(std::string_view name) {
  for (auto& p : params_)
    if (p->name == name) return p.get();
  return nullptr;
}

const Parameter* ParameterStore::find(std::string_view name) const {
  for (const auto& p : params_)
    if (p->name == name) return p.get();
  return nullptr;
}

std::vector<Parameter*> ParameterStore::all() {
  std::vector<Parameter*> out;
  out.reserve(params_.size());
  for (auto& p : params_) out.push_back(p.get());
  return out;
}

std::vector<const Parameter*> ParameterStore::all() const {
  std::vector<const Parameter*> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.push_back(p.get());
  return out;
}

std::size_t ParameterStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p->data.size();
  return n;
}

std::size_t ParameterStore::scalar_count(std::string_view prefix) const {
  std::size_t n = 0;
  for (const auto& p : params_)
    if (std::string_view(p->name).substr(0, prefix.size()) == prefix) n += p->data.size();
  return n;
}

void ParameterStore::zero_grads() {
  for (auto& p : params_) std::fill(p->grad.begin(), p->grad.end(), 0.0);
}

// ---- Value / Graph ---------------------------------------------------------

const Shape& Value::shape() const { return graph_->node(id_).shape; }
std::span<const double> Value::data() const { return graph_->node(id_).data; }
std::span<const double> Value::grad() const { return graph_->node(id_).grad; }
bool Value::requires_grad() const { return graph_->node(id_).requires_grad; }

double Value::item() const {
  if (numel() != 1) throw ShapeError("item: expected a single element, got " + shape().str());
  return data()[0];
}

Value Graph::push(const char* kind, Shape shape, std::vector<double> data,
                  std::vector<std::uint32_t> parents, BackwardFn backward) {
  if (data.size() != shape.numel()) {
    throw ShapeError(std::string(kind) + ": data length " + std::to_string(data.size()) +
                     " does not match shape " + shape.str());
  }
  Node n;
  n.kind = kind;
  n.shape = std::move(shape);
  n.grad.assign(data.size(), 0.0);
  n.data = std::move(data);
  for (auto p : parents) n.requires_grad = n.requires_grad || nodes_[p].requires_grad;
  n.parents = std::move(parents);
  if (n.requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Value(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

void Graph::backward(Value loss) {
  if (&loss.graph() != this) throw std::invalid_argument("backward: loss belongs to another graph");
  if (loss.numel() != 1) throw ShapeError("backward: loss must be a scalar, got " + loss.shape().str());
  nodes_[loss.id()].grad[0] += 1.0;
  for (std::int64_t i = loss.id(); i >= 0; --i) {
    Node& n = nodes_[static_cast<std::size_t>(i)];
    if (!n.requires_grad || !n.backward) continue;
    if (!g_fault_kind.empty() && g_fault_kind == n.kind) {
      for (auto& x : n.grad) x *= g_fault_factor;
    }
    n.backward(*this, static_cast<std::uint32_t>(i));
  }
}

void Graph::zero_grads() {
  for (auto& n : nodes_) std::fill(n.grad.begin(), n.grad.end(), 0.0);
}

double Graph::uniform_open() {
  const double u = static_cast<double>(rng_() >> 11) * 0x1.0p-53;
  return std::clamp(u, 1e-12, 1.0 - 1e-12);
}

void Graph::freeze_stop_gradients(FreezeMode mode, std::vector<std::vector<double>>* tape) {
  if (mode != FreezeMode::off && tape == nullptr) {
    throw std::invalid_argument("freeze_stop_gradients: a tape is required");
  }
  freeze_mode_ = mode;
  freeze_tape_ = tape;
  freeze_cursor_ = 0;
  if (mode == FreezeMode::record) tape->clear();
}

std::vector<double> Graph::frozen_value(const std::vector<double>& current) {
  switch (freeze_mode_) {
    case FreezeMode::off:
      return current;
    case FreezeMode::record:
      freeze_tape_->push_back(current);
      return current;
    case FreezeMode::replay:
      if (freeze_cursor_ >= freeze_tape_->size() ||
          (*freeze_tape_)[freeze_cursor_].size() != current.size()) {
        throw std::logic_error("stop_gradient replay does not match the recorded graph");
      }
      return (*freeze_tape_)[freeze_cursor_++];
  }
  return current;
}

void Graph::inject_backward_fault(std::string kind, double factor) {
  g_fault_kind = std::move(kind);
  g_fault_factor = factor;
}

// ---- leaves ----------------------------------------------------------------

Value constant(Graph& g, Shape shape, std::vector<double> data) {
  return g.push("constant", std::move(shape), std::move(data), {}, nullptr);
}

Value variable(Graph& g, Shape shape, std::vector<double> data) {
  Value v = g.push("variable", std::move(shape), std::move(data), {}, nullptr);
  g.node(v.id()).requires_grad = true;
  return v;
}

Value param(Graph& g, Parameter& p) {
  Value v = g.push("param", p.shape, p.data, {}, nullptr);
  auto& n = g.node(v.id());
  n.requires_grad = true;
  Parameter* target = &p;
  n.backward = [target](Graph& gr, std::uint32_t self) {
    const auto& gy = gr.node(self).grad;
    for (std::size_t i = 0; i < gy.size(); ++i) target->grad[i] += gy[i];
  };
  return v;
}

Value embed(Graph& g, Parameter& table, std::span<const std::size_t> ids) {
  if (table.shape.dims.size() != 2) shape_error("embed", table.shape, "is not a table");
  const std::size_t rows = table.shape.dims[0], dim = table.shape.dims[1];
  std::vector<double> out(ids.size() * dim);
  for (std::size_t r = 0; r < ids.size(); ++r) {
    if (ids[r] >= rows) {
      throw std::out_of_range("embed: id " + std::to_string(ids[r]) + " out of range for table '" +
                              table.name + "' with " + std::to_string(rows) + " rows");
    }
    std::copy_n(table.data.begin() + static_cast<std::ptrdiff_t>(ids[r] * dim), dim,
                out.begin() + static_cast<std::ptrdiff_t>(r * dim));
  }
  Value v = g.push("embed", Shape::matrix(ids.size(), dim), std::move(out), {}, nullptr);
  auto& n = g.node(v.id());
  n.requires_grad = true;
  Parameter* target = &table;
  std::vector<std::size_t> idx(ids.begin(), ids.end());
  n.backward = [target, idx = std::move(idx), dim](Graph& gr, std::uint32_t self) {
    const auto& gy = gr.node(self).grad;
    for (std::size_t r = 0; r < idx.size(); ++r) {
      double* dst = target->grad.data() + idx[r] * dim;
      const double* src = gy.data() + r * dim;
      for (std::size_t c = 0; c < dim; ++c) dst[c] += src[c];
    }
  };
  return v;
}

// ---- linear algebra --------------------------------------------------------

Value matmul(Value a, Value b) {
  require_same_graph(a, b, "matmul");
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sb.dims.size() != 2 || sa.cols() != sb.dims[0]) shape_error("matmul", sa, sb);
  const std::size_t n = sa.rows(), k = sa.cols(), m = sb.dims[1];
  std::vector<double> out(n * m, 0.0);
  gemm_nn(n, k, m, node_of(a).data.data(), node_of(b).data.data(), out.data());
  Shape os = sa.dims.empty() ? Shape{m} : sa;
  os.dims.back() = m;
  const std::uint32_t ia = a.id(), ib = b.id();
  return a.graph().push("matmul", std::move(os), std::move(out), {ia, ib},
                        [ia, ib, n, k, m](Graph& g, std::uint32_t self) {
                          const auto& gy = g.node(self).grad;
                          auto& na = g.node(ia);
                          auto& nb = g.node(ib);
                          if (na.requires_grad) gemm_nt(n, m, k, gy.data(), nb.data.data(), na.grad.data());
                          if (nb.requires_grad) gemm_tn(n, k, m, na.data.data(), gy.data(), nb.grad.data());
                        });
}

Value batched_matmul(Value a, Value b, std::size_t batch, bool transpose_b) {
  require_same_graph(a, b, "batched_matmul");
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (batch == 0 || sa.rows() % batch != 0 || sb.rows() % batch != 0) {
    shape_error("batched_matmul", sa, sb);
  }
  const std::size_t n = sa.rows() / batch, k = sa.cols();
  std::size_t p = 0;
  if (transpose_b) {
    if (sb.cols() != k) shape_error("batched_matmul", sa, sb);
    p = sb.rows() / batch;
  } else {
    if (sb.rows() / batch != k) shape_error("batched_matmul", sa, sb);
    p = sb.cols();
  }
  std::vector<double> out(batch * n * p, 0.0);
  const double* ad = node_of(a).data.data();
  const double* bd = node_of(b).data.data();
  for (std::size_t t = 0; t < batch; ++t) {
    if (transpose_b) {
      gemm_nt(n, k, p, ad + t * n * k, bd + t * p * k, out.data() + t * n * p);
    } else {
      gemm_nn(n, k, p, ad + t * n * k, bd + t * k * p, out.data() + t * n * p);
    }
  }
  const std::uint32_t ia = a.id(), ib = b.id();
  return a.graph().push(
      "batched_matmul", Shape::matrix(batch * n, p), std::move(out), {ia, ib},
      [=](Graph& g, std::uint32_t self) {
        const double* gy = g.node(self).grad.data();
        auto& na = g.node(ia);
        auto& nb = g.node(ib);
        for (std::size_t t = 0; t < batch; ++t) {
          const double* gt = gy + t * n * p;
          const double* at = na.data.data() + t * n * k;
          if (transpose_b) {
            const double* bt = nb.data.data() + t * p * k;
            if (na.requires_grad) gemm_nn(n, p, k, gt, bt, na.grad.data() + t * n * k);
            if (nb.requires_grad) gemm_tn(n, p, k, gt, at, nb.grad.data() + t * p * k);
          } else {
            const double* bt = nb.data.data() + t * k * p;
            if (na.requires_grad) gemm_nt(n, p, k, gt, bt, na.grad.data() + t * n * k);
            if (nb.requires_grad) gemm_tn(n, k, p, at, gt, nb.grad.data() + t * k * p);
          }
        }
      });
}


Value transpose(Value a) {
  const std::size_t r = a.rows(), c = a.cols();
  std::vector<double> out(r * c);
  const auto& ad = node_of(a).data;
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = ad[i * c + j];
  return unary("transpose", a, Shape::matrix(c, r), std::move(out),
               [r, c](const Graph::Node& self, Graph::Node& p) {
                 for (std::size_t i = 0; i < r; ++i)
                   for (std::size_t j = 0; j < c; ++j) p.grad[i * c + j] += self.grad[j * r + i];
               });
}

// ---- elementwise -----------------------------------------------------------

Value add(Value a, Value b) {
  return binary(
      "add", a, b, [](double x, double y) { return x + y; },
      [](double g, double, double) { return g; }, [](double g, double, double) { return g; });
}

Value sub(Value a, Value b) {
  return binary(
      "sub", a, b, [](double x, double y) { return x - y; },
      [](double g, double, double) { return g; }, [](double g, double, double) { return -g; });
}

Value mul(Value a, Value b) {
  return binary(
      "mul", a, b, [](double x, double y) { return x * y; },
      [](double g, double, double y) { return g * y; },
      [](double g, double x, double) { return g * x; });
}

Value scale(Value a, double factor) {
  std::vector<double> out(node_of(a).data);
  for (auto& x : out) x *= factor;
  return unary("scale", a, a.shape(), std::move(out),
               [factor](const Graph::Node& self, Graph::Node& p) {
                 for (std::size_t i = 0; i < p.grad.size(); ++i) p.grad[i] += factor * self.grad[i];
               });
}

// ---- structural ------------------------------------------------------------

Value concat(std::span<const Value> parts) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  Graph& g = parts[0].graph();
  const Shape& first = parts[0].shape();
  const std::size_t rows = first.rows();
  std::vector<std::size_t> widths;
  std::vector<std::uint32_t> ids;
  std::size_t total = 0;
  for (const Value& v : parts) {
    require_same_graph(parts[0], v, "concat");
    const Shape& s = v.shape();
    if (s.dims.size() != first.dims.size() || s.rows() != rows ||
        !std::equal(s.dims.begin(), s.dims.end() - (s.dims.empty() ? 0 : 1), first.dims.begin())) {
      shape_error("concat", first, s);
    }
    widths.push_back(s.cols());
    ids.push_back(v.id());
    total += s.cols();
  }
  std::vector<double> out(rows * total);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto& d = g.node(ids[k]).data;
    for (std::size_t r = 0; r < rows; ++r)
      std::copy_n(d.begin() + static_cast<std::ptrdiff_t>(r * widths[k]), widths[k],
                  out.begin() + static_cast<std::ptrdiff_t>(r * total + offset));
    offset += widths[k];
  }
  Shape os = first.dims.empty() ? Shape{total} : first;
  os.dims.back() = total;
  return g.push("concat", std::move(os), std::move(out), ids,
                [ids, widths, rows, total](Graph& gr, std::uint32_t self) {
                  const auto& gy = gr.node(self).grad;
                  std::size_t off = 0;
                  for (std::size_t k = 0; k < ids.size(); ++k) {
                    auto& p = gr.node(ids[k]);
                    if (p.requires_grad) {
                      for (std::size_t r = 0; r < rows; ++r)
                        for (std::size_t c = 0; c < widths[k]; ++c)
                          p.grad[r * widths[k] + c] += gy[r * total + off + c];
                    }
                    off += widths[k];
                  }
                });
}

Value concat_rows(std::span<const Value> parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  Graph& g = parts[0].graph();
  const std::size_t cols = parts[0].cols();
  std::vector<std::uint32_t> ids;
  std::vector<double> out;
  for (const Value& v : parts) {
    require_same_graph(parts[0], v, "concat_rows");
    if (v.cols() != cols) shape_error("concat_rows", parts[0].shape(), v.shape());
    ids.push_back(v.id());
    const auto& d = g.node(v.id()).data;
    out.insert(out.end(), d.begin(), d.end());
  }
  const std::size_t rows = out.size() / std::max<std::size_t>(cols, 1);
  return g.push("concat_rows", Shape::matrix(rows, cols), std::move(out), ids,
                [ids](Graph& gr, std::uint32_t self) {
                  const auto& gy = gr.node(self).grad;
                  std::size_t off = 0;
                  for (auto id : ids) {
                    auto& p = gr.node(id);
                    if (p.requires_grad)
                      for (std::size_t i = 0; i < p.grad.size(); ++i) p.grad[i] += gy[off + i];
                    off += p.grad.size();
                  }
                });
}

Value slice(Value a, std::size_t begin, std::size_t width) {
  const std::size_t rows = a.rows(), cols = a.cols();
  if (begin + width > cols) {
    shape_error("slice", a.shape(),
                "cannot be sliced at [" + std::to_string(begin) + ", " +
                    std::to_string(begin + width) + ")");
  }
  std::vector<double> out(rows * width);
  const auto& d = node_of(a).data;
  for (std::size_t r = 0; r < rows; ++r)
    std::copy_n(d.begin() + static_cast<std::ptrdiff_t>(r * cols + begin), width,
                out.begin() + static_cast<std::ptrdiff_t>(r * width));
  Shape os = a.shape().dims.empty() ? Shape{width} : a.shape();
  os.dims.back() = width;
  return unary("slice", a, std::move(os), std::move(out),
               [rows, cols, begin, width](const Graph::Node& self, Graph::Node& p) {
                 for (std::size_t r = 0; r < rows; ++r)
                   for (std::size_t c = 0; c < width; ++c)
                     p.grad[r * cols + begin + c] += self.grad[r * width + c];
               });
}

Value gather_rows(Value a, std::span<const std::size_t> rows) {
  const std::size_t n = a.rows(), cols = a.cols();
  std::vector<double> out(rows.size() * cols);
  const auto& d = node_of(a).data;
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] >= n) {
      throw std::out_of_range("gather_rows: row " + std::to_string(rows[r]) + " out of range for " +
                              a.shape().str());
    }
    std::copy_n(d.begin() + static_cast<std::ptrdiff_t>(rows[r] * cols), cols,
                out.begin() + static_cast<std::ptrdiff_t>(r * cols));
  }
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  return unary("gather_rows", a, Shape::matrix(rows.size(), cols), std::move(out),
               [idx = std::move(idx), cols](const Graph::Node& self, Graph::Node& p) {
                 for (std::size_t r = 0; r < idx.size(); ++r)
                   for (std::size_t c = 0; c < cols; ++c)
                     p.grad[idx[r] * cols + c] += self.grad[r * cols + c];
               });
}

Value repeat_rows(Value a, std::size_t times) {
  const std::size_t rows = a.rows(), cols = a.cols();
  std::vector<double> out(rows * times * cols);
  const auto& d = node_of(a).data;
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t t = 0; t < times; ++t)
      std::copy_n(d.begin() + static_cast<std::ptrdiff_t>(r * cols), cols,
                  out.begin() + static_cast<std::ptrdiff_t>((r * times + t) * cols));
  return unary("repeat_rows", a, Shape::matrix(rows * times, cols), std::move(out),
               [rows, cols, times](const Graph::Node& self, Graph::Node& p) {
                 for (std::size_t r = 0; r < rows; ++r)
                   for (std::size_t t = 0; t < times; ++t)
                     for (std::size_t c = 0; c < cols; ++c)
                       p.grad[r * cols + c] += self.grad[(r * times + t) * cols + c];
               });
}

Value expand_cols(Value a, std::span<const std::size_t> widths) {
  const std::size_t rows = a.rows(), cols = a.cols();
  if (widths.size() != cols) {
    shape_error("expand_cols", a.shape(),
                "does not have " + std::to_string(widths.size()) + " columns");
  }
  const std::size_t total = std::accumulate(widths.begin(), widths.end(), std::size_t{0});
  std::vector<std::size_t> source;
  source.reserve(total);
  for (std::size_t j = 0; j < cols; ++j) source.insert(source.end(), widths[j], j);
  std::vector<double> out(rows * total);
  const auto& d = node_of(a).data;
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < total; ++c) out[r * total + c] = d[r * cols + source[c]];
  return unary("expand_cols", a, Shape::matrix(rows, total), std::move(out),
               [source = std::move(source), rows, cols, total](const Graph::Node& self,
                                                               Graph::Node& p) {
                 for (std::size_t r = 0; r < rows; ++r)
                   for (std::size_t c = 0; c < total; ++c)
                     p.grad[r * cols + source[c]] += self.grad[r * total + c];
               });
}

Value reshape(Value a, Shape shape) {
  if (shape.numel() != a.numel()) shape_error("reshape", a.shape(), shape);
  std::vector<double> out(node_of(a).data);
  return unary("reshape", a, std::move(shape), std::move(out),
               [](const Graph::Node& self, Graph::Node& p) {
                 for (std::size_t i = 0; i < p.grad.size(); ++i) p.grad[i] += self.grad[i];
               });
}

// ---- nonlinearities --------------------------------------------------------

Value sigmoid(Value a) {
  std::vector<double> out(node_of(a).data);
  for (auto& x : out) x = stable_sigmoid(x);
  return unary("sigmoid", a, a.shape(), std::move(out),
               [](const Graph::Node& self, Graph::Node& p) {
                 for (std::size_t i = 0; i < p.grad.size(); ++i) {
                   const double y = self.data[i];
                   p.grad[i] += self.grad[i] * y * (1.0 - y);
                 }
               });
}

Value relu(Value a) {
  std::vector<double> out(node_of(a).data);
  for (auto& x : out) x = x > 0.0 ? x : 0.0;
  return unary("relu", a, a.shape(), std::move(out),
               [](const Graph::Node& self, Graph::Node& p) {
                 for (std::size_t i = 0; i < p.grad.size(); ++i)
                   if (p.data[i] > 0.0) p.grad[i] += self.grad[i];
               });
}

namespace {

Value softmax_impl(const char* kind, Value a, const std::uint8_t* mask) {
  const std::size_t rows = a.rows(), cols = a.cols();
  std::vector<double> out(node_of(a).data);
  for (std::size_t r = 0; r < rows; ++r) {
    double* row = out.data() + r * cols;
    const std::uint8_t* mk = mask ? mask + r * cols : nullptr;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < cols; ++c)
      if (!mk || mk[c]) mx = std::max(mx, row[c]);
    double total = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      row[c] = (!mk || mk[c]) ? std::exp(row[c] - mx) : 0.0;
      total += row[c];
    }
    if (total > 0.0)
      for (std::size_t c = 0; c < cols; ++c) row[c] /= total;
  }
  return unary(kind, a, a.shape(), std::move(out),
               [rows, cols](const Graph::Node& self, Graph::Node& p) {
                 for (std::size_t r = 0; r < rows; ++r)
                   softmax_row_backward(self.data.data() + r * cols, self.grad.data() + r * cols,
                                        p.grad.data() + r * cols, cols, 1.0);
               });
}

}  // namespace

Value softmax(Value a) { return softmax_impl("softmax", a, nullptr); }

Value masked_softmax(Value a, std::span<const std::uint8_t> mask) {
  if (mask.size() != a.numel()) {
    shape_error("masked_softmax", a.shape(),
                "does not match mask of length " + std::to_string(mask.size()));
  }
  return softmax_impl("masked_softmax", a, mask.data());
}

Value normalize_rows(Value a, double eps) {
  const std::size_t rows = a.rows(), cols = a.cols();
  std::vector<double> out(node_of(a).data);
  std::vector<double> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    double* row = out.data() + r * cols;
    double mu = 0.0;
    for (std::size_t c = 0; c < cols; ++c) mu += row[c];
    mu /= static_cast<double>(cols);
    double var = 0.0;
    for (std::size_t c = 0; c < cols; ++c) var += (row[c] - mu) * (row[c] - mu);
    var /= static_cast<double>(cols);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t c = 0; c < cols; ++c) row[c] = (row[c] - mu) * inv_std[r];
  }
  return unary("normalize_rows", a, a.shape(), std::move(out),
               [rows, cols, inv_std = std::move(inv_std)](const Graph::Node& self,
                                                          Graph::Node& p) {
                 const double n = static_cast<double>(cols);
                 for (std::size_t r = 0; r < rows; ++r) {
                   const double* y = self.data.data() + r * cols;
                   const double* gy = self.grad.data() + r * cols;
                   double mg = 0.0, mgy = 0.0;
                   for (std::size_t c = 0; c < cols; ++c) {
                     mg += gy[c];
                     mgy += gy[c] * y[c];
                   }
                   mg /= n;
                   mgy /= n;
                   for (std::size_t c = 0; c < cols; ++c)
                     p.grad[r * cols + c] += inv_std[r] * (gy[c] - mg - y[c] * mgy);
                 }
               });
}

// ---- reductions ------------------------------------------------------------

Value dot_rows(Value a, Value b) {
  require_same_graph(a, b, "dot_rows");
  const std::size_t rows = a.rows(), cols = a.cols();
  const std::size_t brows = b.rows();
  if (b.cols() != cols || (brows != rows && brows != 1)) shape_error("dot_rows", a.shape(), b.shape());
  std::vector<double> out(rows, 0.0);
  const auto& ad = node_of(a).data;
  const auto& bd = node_of(b).data;
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = ad.data() + r * cols;
    const double* y = bd.data() + (brows == 1 ? 0 : r) * cols;
    double s = 0.0;
    for (std::size_t c = 0; c < cols; ++c) s += x[c] * y[c];
    out[r] = s;
  }
  const std::uint32_t ia = a.id(), ib = b.id();
  return a.graph().push("dot_rows", Shape::matrix(rows, 1), std::move(out), {ia, ib},
                        [=](Graph& g, std::uint32_t self) {
                          const auto& gy = g.node(self).grad;
                          auto& na = g.node(ia);
                          auto& nb = g.node(ib);
                          for (std::size_t r = 0; r < rows; ++r) {
                            const std::size_t ro = (brows == 1 ? 0 : r) * cols;
                            for (std::size_t c = 0; c < cols; ++c) {
                              if (na.requires_grad) na.grad[r * cols + c] += gy[r] * nb.data[ro + c];
                              if (nb.requires_grad) nb.grad[ro + c] += gy[r] * na.data[r * cols + c];
                            }
                          }
                        });
}

Value sum(Value a) {
  const auto& d = node_of(a).data;
  double s = 0.0;
  for (double x : d) s += x;
  return unary("sum", a, Shape::scalar(), {s}, [](const Graph::Node& self, Graph::Node& p) {
    for (auto& x : p.grad) x += self.grad[0];
  });
}

Value mean(Value a) {
  const auto& d = node_of(a).data;
  const double n = static_cast<double>(d.size());
  double s = 0.0;
  for (double x : d) s += x;
  return unary("mean", a, Shape::scalar(), {s / n}, [n](const Graph::Node& self, Graph::Node& p) {
    for (auto& x : p.grad) x += self.grad[0] / n;
  });
}

Value sum_cols(Value a) {
  const std::size_t rows = a.rows(), cols = a.cols();
  std::vector<double> out(rows, 0.0);
  const auto& d = node_of(a).data;
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out[r] += d[r * cols + c];
  return unary("sum_cols", a, Shape::matrix(rows, 1), std::move(out),
               [rows, cols](const Graph::Node& self, Graph::Node& p) {
                 for (std::size_t r = 0; r < rows; ++r)
                   for (std::size_t c = 0; c < cols; ++c) p.grad[r * cols + c] += self.grad[r];
               });
}

Value stop_gradient(Value a) {
  return a.graph().push("stop_gradient", a.shape(), a.graph().frozen_value(node_of(a).data), {},
                        nullptr);
}

// ---- selection -------------------------------------------------------------

Value gumbel_softmax(Value logits, double temperature, Mode mode) {
  if (!(temperature > 0.0)) {
    throw std::invalid_argument("gumbel_softmax: temperature must be positive, got " +
                                std::to_string(temperature));
  }
  Graph& g = logits.graph();
  const std::size_t rows = logits.rows(), cols = logits.cols();
  if (cols == 0) shape_error("gumbel_softmax", logits.shape(), "has no classes");
  std::vector<double> out(node_of(logits).data);
  if (mode == Mode::eval) {
    for (std::size_t r = 0; r < rows; ++r) {
      double* row = out.data() + r * cols;
      const std::size_t best =
          static_cast<std::size_t>(std::max_element(row, row + cols) - row);
      std::fill(row, row + cols, 0.0);
      row[best] = 1.0;
    }
    return g.push("gumbel_argmax", logits.shape(), std::move(out), {}, nullptr);
  }
  for (std::size_t r = 0; r < rows; ++r) {
    double* row = out.data() + r * cols;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < cols; ++c) {
      const double noise = -std::log(-std::log(g.uniform_open()));
      row[c] = (row[c] + noise) / temperature;
      mx = std::max(mx, row[c]);
    }
    double total = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      row[c] = std::exp(row[c] - mx);
      total += row[c];
    }
    for (std::size_t c = 0; c < cols; ++c) row[c] /= total;
  }
  const double inv_t = 1.0 / temperature;
  return unary("gumbel_softmax", logits, logits.shape(), std::move(out),
               [rows, cols, inv_t](const Graph::Node& self, Graph::Node& p) {
                 for (std::size_t r = 0; r < rows; ++r)
                   softmax_row_backward(self.data.data() + r * cols, self.grad.data() + r * cols,
                                        p.grad.data() + r * cols, cols, inv_t);
               });
}

Value bce_sum(Value predictions, std::span<const double> labels) {
  if (labels.size() != predictions.numel()) {
    shape_error("bce_sum", predictions.shape(),
                "does not match " + std::to_string(labels.size()) + " labels");
  }
  constexpr double lo = 1e-12, hi = 1.0 - 1e-12;
  std::vector<double> p(node_of(predictions).data);
  std::size_t clamps = 0;
  double loss = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (labels[i] != 0.0 && labels[i] != 1.0) {
      throw std::invalid_argument("bce_sum: label " + std::to_string(labels[i]) + " at index " +
                                  std::to_string(i) + " is not 0 or 1");
    }
    if (!(p[i] >= lo && p[i] <= hi)) {
      p[i] = std::isnan(p[i]) ? p[i] : std::clamp(p[i], lo, hi);
      ++clamps;
    }
    loss -= labels[i] * std::log(p[i]) + (1.0 - labels[i]) * std::log(1.0 - p[i]);
  }
  predictions.graph().add_clamp_events(clamps);
  std::vector<double> y(labels.begin(), labels.end());
  return unary("bce_sum", predictions, Shape::scalar(), {loss},
               [p = std::move(p), y = std::move(y)](const Graph::Node& self, Graph::Node& parent) {
                 const double go = self.grad[0];
                 for (std::size_t i = 0; i < p.size(); ++i)
                   parent.grad[i] += go * (-y[i] / p[i] + (1.0 - y[i]) / (1.0 - p[i]));
               });
}

// ---- optimizer -------------------------------------------------------------

void adam_step(std::span<Parameter* const> params, AdamState& state) {
  if (state.m.empty()) {
    for (const Parameter* p : params) {
      state.m.emplace_back(p->data.size(), 0.0);
      state.v.emplace_back(p->data.size(), 0.0);
    }
  }
  if (state.m.size() != params.size()) {
    throw std::invalid_argument("adam_step: parameter list changed size since the first step");
  }
  const AdamOptions& o = state.options;
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(o.beta1, t);
  const double bc2 = 1.0 - std::pow(o.beta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    Parameter& p = *params[k];
    auto& m = state.m[k];
    auto& v = state.v[k];
    if (m.size() != p.data.size()) {
      throw std::invalid_argument("adam_step: moment shape mismatch for " + p.name);
    }
    for (std::size_t i = 0; i < p.data.size(); ++i) {
      const double g = p.grad[i];
      m[i] = o.beta1 * m[i] + (1.0 - o.beta1) * g;
      v[i] = o.beta2 * v[i] + (1.0 - o.beta2) * g * g;
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      p.data[i] -= o.learning_rate * (mhat / (std::sqrt(vhat) + o.epsilon) + o.weight_decay * p.data[i]);
    }
  }
}

}  // namespace maria::ad
