// Copyright 2026 The CRG Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Dense 2-D tensors with tape-based reverse-mode differentiation.
//
// Every value is a row-major matrix of doubles; vectors are 1 x n rows and
// scalars are 1 x 1. Operations record themselves on a Tape together with a
// closure that pushes gradients to their inputs. Tape::backward walks the
// records in reverse creation order, which is a reverse topological order.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <deque>
#include <functional>
#include <initializer_list>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "json.hpp"

#include "crg/error.hpp"
#include "crg/rng.hpp"

namespace crg::ad {

class Tensor {
 public:
  Tensor() = default;
  Tensor(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), values_(rows * cols, fill) {}

  /// Checked construction: size must match and every value must be finite.
  static Tensor from(std::size_t rows, std::size_t cols, std::vector<double> values) {
    if (values.size() != rows * cols) {
      throw Error(ErrorCode::ShapeMismatch, "expected " + std::to_string(rows * cols) +
                                                " values, got " + std::to_string(values.size()));
    }
    for (double v : values) {
      if (!std::isfinite(v)) throw Error(ErrorCode::NonFinite, "non-finite tensor value");
    }
    Tensor t;
    t.rows_ = rows;
    t.cols_ = cols;
    t.values_ = std::move(values);
    return t;
  }

  static Tensor row(std::vector<double> values) {
    const std::size_t n = values.size();
    return from(1, n, std::move(values));
  }

  static Tensor scalar(double v) { return from(1, 1, {v}); }

  static Tensor identity(std::size_t n) {
    Tensor t(n, n);
    for (std::size_t i = 0; i < n; ++i) t(i, i) = 1.0;
    return t;
  }

  static Tensor uniform(std::size_t rows, std::size_t cols, double scale, Rng& rng) {
    Tensor t(rows, cols);
    for (double& v : t.values_) v = rng.uniform(-scale, scale);
    return t;
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return values_.size(); }
  std::vector<std::size_t> shape() const { return {rows_, cols_}; }
  bool empty() const { return values_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return values_[r * cols_ + c]; }
  const double& operator()(std::size_t r, std::size_t c) const { return values_[r * cols_ + c]; }
  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }

  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }

  bool requires_grad() const { return requires_grad_; }
  void set_requires_grad(bool on) { requires_grad_ = on; }

  bool all_finite() const {
    return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
  }

  void fill(double v) { std::fill(values_.begin(), values_.end(), v); }

  bool same_shape(const Tensor& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

  bool operator==(const Tensor& o) const {
    return rows_ == o.rows_ && cols_ == o.cols_ && values_ == o.values_;
  }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> values_;
  bool requires_grad_ = false;
};

inline std::string shape_str(const Tensor& t) {
  return "[" + std::to_string(t.rows()) + "x" + std::to_string(t.cols()) + "]";
}

/// A named trainable tensor with its accumulated gradient.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
};

/// Owns parameters with stable addresses, in registration order.
class ParameterStore {
 public:
  Parameter& add(const std::string& name, Tensor value) {
    if (index_.count(name)) throw Error(ErrorCode::InvalidConfig, "duplicate parameter " + name);
    value.set_requires_grad(true);
    Tensor grad(value.rows(), value.cols());
    params_.push_back({name, std::move(value), std::move(grad)});
    index_[name] = params_.size() - 1;
    return params_.back();
  }

  Parameter& get(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw Error(ErrorCode::InvalidConfig, "no parameter " + name);
    return params_[it->second];
  }
  const Parameter& get(const std::string& name) const {
    return const_cast<ParameterStore*>(this)->get(name);
  }
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  std::deque<Parameter>& all() { return params_; }
  const std::deque<Parameter>& all() const { return params_; }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value.size();
    return n;
  }

  void zero_grad() {
    for (auto& p : params_) p.grad.fill(0.0);
  }

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json out = nlohmann::ordered_json::array();
    for (const auto& p : params_) {
      out.push_back({{"name", p.name},
                     {"shape", p.value.shape()},
                     {"data", std::vector<double>(p.value.values().begin(), p.value.values().end())}});
    }
    return out;
  }

  /// Overwrites values of existing parameters; names and shapes must match.
  void load_json(const nlohmann::json& tensors) {
    std::size_t seen = 0;
    for (const auto& t : tensors) {
      auto& p = get(t.at("name").get<std::string>());
      const auto shape = t.at("shape").get<std::vector<std::size_t>>();
      if (shape.size() != 2 || shape[0] != p.value.rows() || shape[1] != p.value.cols()) {
        throw Error(ErrorCode::ShapeMismatch, "checkpoint shape mismatch for " + p.name);
      }
      p.value = Tensor::from(shape[0], shape[1], t.at("data").get<std::vector<double>>());
      p.value.set_requires_grad(true);
      ++seen;
    }
    if (seen != params_.size()) {
      throw Error(ErrorCode::SchemaMismatch, "checkpoint has " + std::to_string(seen) +
                                                 " tensors, model has " +
                                                 std::to_string(params_.size()));
    }
  }

 private:
  std::deque<Parameter> params_;
  std::map<std::string, std::size_t> index_;
};

class Tape;

/// Handle to a value recorded on a Tape.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
};

class Tape {
 public:
  using Backward = std::function<void(Tape&, std::size_t)>;

  /// With grad disabled, operations keep values only (evaluation mode).
  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool grad_enabled() const { return grad_enabled_; }

  Var constant(Tensor value) { return push(std::move(value), false, nullptr); }

  /// Leaf whose gradient is kept on the tape (see grad()).
  Var input(Tensor value) { return push(std::move(value), grad_enabled_, nullptr); }

  /// Leaf bound to a parameter; one node per parameter per tape.
  Var param(Parameter& p) {
    auto it = param_nodes_.find(&p);
    if (it != param_nodes_.end()) return {this, it->second};
    Var v = push(p.value, grad_enabled_, nullptr);
    nodes_[v.id].param = &p;
    param_nodes_.emplace(&p, v.id);
    return v;
  }

  /// Records a derived value. `back` runs only when some input needs grad.
  Var record(Tensor value, std::initializer_list<Var> inputs, Backward back) {
    bool needs = false;
    for (const Var& in : inputs) {
      if (in.tape != this) throw Error(ErrorCode::ShapeMismatch, "operands live on different tapes");
      needs = needs || nodes_[in.id].needs_grad;
    }
    return push(std::move(value), needs, needs ? std::move(back) : nullptr);
  }

  const Tensor& value(Var v) const { return nodes_[v.id].value; }
  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  bool needs_grad(std::size_t id) const { return nodes_[id].needs_grad; }

  /// Gradient buffer of a node, allocated on first use.
  Tensor& grad_ref(std::size_t id) {
    Node& n = nodes_[id];
    if (n.grad.empty() && !n.value.empty()) n.grad = Tensor(n.value.rows(), n.value.cols());
    return n.grad;
  }

  const Tensor& grad(Var v) const { return nodes_[v.id].grad; }

  /// Reverse pass from a scalar. Parameter gradients are accumulated into
  /// Parameter::grad unless `accumulate_params` is false, in which case they
  /// stay on the tape for merge_param_grads().
  void backward(Var loss, bool accumulate_params = true) {
    if (value(loss).rows() != 1 || value(loss).cols() != 1) {
      throw Error(ErrorCode::NonScalarLoss, "loss has shape " + shape_str(value(loss)));
    }
    if (!nodes_[loss.id].needs_grad) return;
    grad_ref(loss.id)[0] += 1.0;
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.grad.empty()) continue;
      if (n.back) n.back(*this, i);
      if (n.param && accumulate_params) {
        auto dst = n.param->grad.values();
        auto src = n.grad.values();
        for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
      }
    }
  }

  /// Adds this tape's parameter gradients into Parameter::grad.
  void merge_param_grads() const {
    for (const auto& [param, id] : param_nodes_) {
      const Tensor& g = nodes_[id].grad;
      if (g.empty()) continue;
      auto dst = const_cast<Parameter*>(param)->grad.values();
      auto src = g.values();
      for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
    }
  }

  /// Surfaces any NaN/Inf produced during the forward pass.
  void check_finite() const {
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      if (!nodes_[i].value.all_finite()) {
        throw Error(ErrorCode::NonFinite, "non-finite value at tape node " + std::to_string(i));
      }
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    Backward back;
    Parameter* param = nullptr;
    bool needs_grad = false;
  };

  Var push(Tensor value, bool needs_grad, Backward back) {
    nodes_.push_back({std::move(value), Tensor{}, std::move(back), nullptr, needs_grad});
    return {this, nodes_.size() - 1};
  }

  bool grad_enabled_;
  std::deque<Node> nodes_;
  std::unordered_map<const Parameter*, std::size_t> param_nodes_;
};

inline const Tensor& Var::value() const { return tape->value(*this); }

namespace detail {

inline void require(bool ok, const char* op, const Tensor& a, const Tensor& b) {
  if (!ok) {
    throw Error(ErrorCode::ShapeMismatch,
                std::string(op) + ": " + shape_str(a) + " vs " + shape_str(b));
  }
}

// C += A * B   (A: m x k, B: k x n)
inline void gemm_nn(const Tensor& a, const Tensor& b, Tensor& c) {
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = &c(i, 0);
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a(i, p);
      if (av == 0.0) continue;
      const double* brow = &b(p, 0);
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C += A * B^T   (A: m x k, B: n x k)
inline void gemm_nt(const Tensor& a, const Tensor& b, Tensor& c) {
  const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = &a(i, 0);
    for (std::size_t j = 0; j < n; ++j) {
      const double* brow = &b(j, 0);
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += arow[p] * brow[p];
      c(i, j) += s;
    }
  }
}

// C += A^T * B   (A: k x m, B: k x n)
inline void gemm_tn(const Tensor& a, const Tensor& b, Tensor& c) {
  const std::size_t k = a.rows(), m = a.cols(), n = b.cols();
  for (std::size_t p = 0; p < k; ++p) {
    const double* brow = &b(p, 0);
    for (std::size_t i = 0; i < m; ++i) {
      const double av = a(p, i);
      if (av == 0.0) continue;
      double* crow = &c(i, 0);
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

}  // namespace detail

// ---- operations ----

inline Var matmul(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  detail::require(av.cols() == bv.rows(), "matmul", av, bv);
  Tensor out(av.rows(), bv.cols());
  detail::gemm_nn(av, bv, out);
  return a.tape->record(std::move(out), {a, b}, [a = a.id, b = b.id](Tape& t, std::size_t self) {
    const Tensor& g = t.grad_ref(self);
    if (t.needs_grad(a)) detail::gemm_nt(g, t.value(b), t.grad_ref(a));
    if (t.needs_grad(b)) detail::gemm_tn(t.value(a), g, t.grad_ref(b));
  });
}

/// a * b^T without materializing the transpose.
inline Var matmul_nt(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  detail::require(av.cols() == bv.cols(), "matmul_nt", av, bv);
  Tensor out(av.rows(), bv.rows());
  detail::gemm_nt(av, bv, out);
  return a.tape->record(std::move(out), {a, b}, [a = a.id, b = b.id](Tape& t, std::size_t self) {
    const Tensor& g = t.grad_ref(self);
    if (t.needs_grad(a)) detail::gemm_nn(g, t.value(b), t.grad_ref(a));
    if (t.needs_grad(b)) detail::gemm_tn(g, t.value(a), t.grad_ref(b));
  });
}

inline Var transpose(Var a) {
  const Tensor& av = a.value();
  Tensor out(av.cols(), av.rows());
  for (std::size_t i = 0; i < av.rows(); ++i)
    for (std::size_t j = 0; j < av.cols(); ++j) out(j, i) = av(i, j);
  return a.tape->record(std::move(out), {a}, [a = a.id](Tape& t, std::size_t self) {
    const Tensor& g = t.grad_ref(self);
    Tensor& ga = t.grad_ref(a);
    for (std::size_t i = 0; i < ga.rows(); ++i)
      for (std::size_t j = 0; j < ga.cols(); ++j) ga(i, j) += g(j, i);
  });
}

inline Var add(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  detail::require(av.same_shape(bv), "add", av, bv);
  Tensor out = av;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return a.tape->record(std::move(out), {a, b}, [a = a.id, b = b.id](Tape& t, std::size_t self) {
    const Tensor& g = t.grad_ref(self);
    for (std::size_t id : {a, b}) {
      if (!t.needs_grad(id)) continue;
      Tensor& gi = t.grad_ref(id);
      for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i];
    }
  });
}

inline Var sub(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  detail::require(av.same_shape(bv), "sub", av, bv);
  Tensor out = av;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  return a.tape->record(std::move(out), {a, b}, [a = a.id, b = b.id](Tape& t, std::size_t self) {
    const Tensor& g = t.grad_ref(self);
    if (t.needs_grad(a)) {
      Tensor& ga = t.grad_ref(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (t.needs_grad(b)) {
      Tensor& gb = t.grad_ref(b);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
}

/// Elementwise product.
inline Var mul(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  detail::require(av.same_shape(bv), "mul", av, bv);
  Tensor out = av;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return a.tape->record(std::move(out), {a, b}, [a = a.id, b = b.id](Tape& t, std::size_t self) {
    const Tensor& g = t.grad_ref(self);
    if (t.needs_grad(a)) {
      Tensor& ga = t.grad_ref(a);
      const Tensor& bv = t.value(b);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
    }
    if (t.needs_grad(b)) {
      Tensor& gb = t.grad_ref(b);
      const Tensor& av = t.value(a);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
    }
  });
}

inline Var scale(Var a, double k) {
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= k;
  return a.tape->record(std::move(out), {a}, [a = a.id, k](Tape& t, std::size_t self) {
    const Tensor& g = t.grad_ref(self);
    Tensor& ga = t.grad_ref(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += k * g[i];
  });
}

inline Var add_scalar(Var a, double k) {
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += k;
  return a.tape->record(std::move(out), {a}, [a = a.id](Tape& t, std::size_t self) {
    const Tensor& g = t.grad_ref(self);
    Tensor& ga = t.grad_ref(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
}

/// Adds a 1 x n row to every row of an m x n matrix.
inline Var add_row(Var a, Var row) {
  const Tensor& av = a.value();
  const Tensor& rv = row.value();
  detail::require(rv.rows() == 1 && rv.cols() == av.cols(), "add_row", av, rv);
  Tensor out = av;
  for (std::size_t i = 0; i < av.rows(); ++i)
    for (std::size_t j = 0; j < av.cols(); ++j) out(i, j) += rv[j];
  return a.tape->record(std::move(out), {a, row},
                        [a = a.id, r = row.id](Tape& t, std::size_t self) {
                          const Tensor& g = t.grad_ref(self);
                          if (t.needs_grad(a)) {
                            Tensor& ga = t.grad_ref(a);
                            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                          }
                          if (t.needs_grad(r)) {
                            Tensor& gr = t.grad_ref(r);
                            for (std::size_t i = 0; i < g.rows(); ++i)
                              for (std::size_t j = 0; j < g.cols(); ++j) gr[j] += g(i, j);
                          }
                        });
}

inline Var relu(Var a) {
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = out[i] > 0.0 ? out[i] : 0.0;
  return a.tape->record(std::move(out), {a}, [a = a.id](Tape& t, std::size_t self) {
    const Tensor& g = t.grad_ref(self);
    const Tensor& x = t.value(a);
    Tensor& ga = t.grad_ref(a);
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (x[i] > 0.0) ga[i] += g[i];
    }
  });
}

/// Sum of all elements, as a 1 x 1 scalar.
inline Var sum(Var a) {
  double s = 0.0;
  for (double v : a.value().values()) s += v;
  return a.tape->record(Tensor::scalar(s), {a}, [a = a.id](Tape& t, std::size_t self) {
    const double g = t.grad_ref(self)[0];
    Tensor& ga = t.grad_ref(a);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g;
  });
}

/// Column means: m x n -> 1 x n.
inline Var mean_rows(Var a) {
  const Tensor& av = a.value();
  if (av.rows() == 0) throw Error(ErrorCode::ShapeMismatch, "mean_rows of empty tensor");
  Tensor out(1, av.cols());
  for (std::size_t i = 0; i < av.rows(); ++i)
    for (std::size_t j = 0; j < av.cols(); ++j) out[j] += av(i, j);
  const double inv = 1.0 / static_cast<double>(av.rows());
  for (std::size_t j = 0; j < av.cols(); ++j) out[j] *= inv;
  return a.tape->record(std::move(out), {a}, [a = a.id, inv](Tape& t, std::size_t self) {
    const Tensor& g = t.grad_ref(self);
    Tensor& ga = t.grad_ref(a);
    for (std::size_t i = 0; i < ga.rows(); ++i)
      for (std::size_t j = 0; j < ga.cols(); ++j) ga(i, j) += g[j] * inv;
  });
}

inline Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw Error(ErrorCode::ShapeMismatch, "concat_rows of nothing");
  Tape* tape = parts.front().tape;
  const std::size_t cols = parts.front().cols();
  std::size_t rows = 0;
  for (const Var& p : parts) {
    detail::require(p.cols() == cols, "concat_rows", parts.front().value(), p.value());
    rows += p.rows();
  }
  Tensor out(rows, cols);
  std::size_t r = 0;
  std::vector<std::size_t> ids;
  for (const Var& p : parts) {
    const Tensor& v = p.value();
    std::copy(v.values().begin(), v.values().end(), out.values().begin() + r * cols);
    r += v.rows();
    ids.push_back(p.id);
  }
  // Record against the first part, then make the closure cover all parts.
  Var marker = parts.front();
  for (const Var& p : parts) {
    if (tape->needs_grad(p.id)) {
      marker = p;
      break;
    }
  }
  return tape->record(std::move(out), {marker}, [ids](Tape& t, std::size_t self) {
    const Tensor& g = t.grad_ref(self);
    std::size_t offset = 0;
    for (std::size_t id : ids) {
      const std::size_t n = t.value(id).size();
      if (t.needs_grad(id)) {
        Tensor& gi = t.grad_ref(id);
        for (std::size_t k = 0; k < n; ++k) gi[k] += g[offset + k];
      }
      offset += n;
    }
  });
}

inline Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw Error(ErrorCode::ShapeMismatch, "concat_cols of nothing");
  Tape* tape = parts.front().tape;
  const std::size_t rows = parts.front().rows();
  std::size_t cols = 0;
  for (const Var& p : parts) {
    detail::require(p.rows() == rows, "concat_cols", parts.front().value(), p.value());
    cols += p.cols();
  }
  Tensor out(rows, cols);
  std::vector<std::size_t> ids;
  std::size_t c0 = 0;
  Var marker = parts.front();
  bool found = false;
  for (const Var& p : parts) {
    const Tensor& v = p.value();
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < v.cols(); ++j) out(i, c0 + j) = v(i, j);
    c0 += v.cols();
    ids.push_back(p.id);
    if (!found && tape->needs_grad(p.id)) {
      marker = p;
      found = true;
    }
  }
  return tape->record(std::move(out), {marker}, [ids](Tape& t, std::size_t self) {
    const Tensor& g = t.grad_ref(self);
    std::size_t c0 = 0;
    for (std::size_t id : ids) {
      const std::size_t w = t.value(id).cols();
      if (t.needs_grad(id)) {
        Tensor& gi = t.grad_ref(id);
        for (std::size_t i = 0; i < g.rows(); ++i)
          for (std::size_t j = 0; j < w; ++j) gi(i, j) += g(i, c0 + j);
      }
      c0 += w;
    }
  });
}

inline Var slice_rows(Var a, std::size_t start, std::size_t count) {
  const Tensor& av = a.value();
  if (start + count > av.rows() || count == 0) {
    throw Error(ErrorCode::ShapeMismatch, "slice_rows out of range on " + shape_str(av));
  }
  Tensor out(count, av.cols());
  std::copy(av.values().begin() + start * av.cols(),
            av.values().begin() + (start + count) * av.cols(), out.values().begin());
  return a.tape->record(std::move(out), {a}, [a = a.id, start](Tape& t, std::size_t self) {
    const Tensor& g = t.grad_ref(self);
    Tensor& ga = t.grad_ref(a);
    const std::size_t base = start * ga.cols();
    for (std::size_t k = 0; k < g.size(); ++k) ga[base + k] += g[k];
  });
}

inline Var slice_cols(Var a, std::size_t start, std::size_t count) {
  const Tensor& av = a.value();
  if (start + count > av.cols() || count == 0) {
    throw Error(ErrorCode::ShapeMismatch, "slice_cols out of range on " + shape_str(av));
  }
  Tensor out(av.rows(), count);
  for (std::size_t i = 0; i < av.rows(); ++i)
    for (std::size_t j = 0; j < count; ++j) out(i, j) = av(i, start + j);
  return a.tape->record(std::move(out), {a}, [a = a.id, start](Tape& t, std::size_t self) {
    const Tensor& g = t.grad_ref(self);
    Tensor& ga = t.grad_ref(a);
    for (std::size_t i = 0; i < g.rows(); ++i)
      for (std::size_t j = 0; j < g.cols(); ++j) ga(i, start + j) += g(i, j);
  });
}

/// Row-wise softmax with max subtraction.
inline Var softmax_rows(Var a) {
  const Tensor& av = a.value();
  Tensor out(av.rows(), av.cols());
  for (std::size_t i = 0; i < av.rows(); ++i) {
    double m = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < av.cols(); ++j) m = std::max(m, av(i, j));
    double z = 0.0;
    for (std::size_t j = 0; j < av.cols(); ++j) {
      out(i, j) = std::exp(av(i, j) - m);
      z += out(i, j);
    }
    for (std::size_t j = 0; j < av.cols(); ++j) out(i, j) /= z;
  }
  return a.tape->record(std::move(out), {a}, [a = a.id](Tape& t, std::size_t self) {
    const Tensor& g = t.grad_ref(self);
    const Tensor& y = t.value(self);
    Tensor& ga = t.grad_ref(a);
    for (std::size_t i = 0; i < y.rows(); ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < y.cols(); ++j) dot += g(i, j) * y(i, j);
      for (std::size_t j = 0; j < y.cols(); ++j) ga(i, j) += y(i, j) * (g(i, j) - dot);
    }
  });
}

/// log(sum(exp(a))) over every element, as a scalar.
inline Var logsumexp(Var a) {
  const Tensor& av = a.value();
  double m = -std::numeric_limits<double>::infinity();
  for (double v : av.values()) m = std::max(m, v);
  double z = 0.0;
  for (double v : av.values()) z += std::exp(v - m);
  const double lse = m + std::log(z);
  return a.tape->record(Tensor::scalar(lse), {a}, [a = a.id, lse](Tape& t, std::size_t self) {
    const double g = t.grad_ref(self)[0];
    const Tensor& x = t.value(a);
    Tensor& ga = t.grad_ref(a);
    for (std::size_t i = 0; i < x.size(); ++i) ga[i] += g * std::exp(x[i] - lse);
  });
}

inline constexpr double kLayerNormEps = 1e-12;

/// Per-row normalization followed by gain * x_hat + bias (gain, bias: 1 x n).
inline Var layer_norm(Var a, Var gain, Var bias, double eps = kLayerNormEps) {
  const Tensor& x = a.value();
  const Tensor& g = gain.value();
  const Tensor& b = bias.value();
  detail::require(g.rows() == 1 && g.cols() == x.cols(), "layer_norm gain", x, g);
  detail::require(b.rows() == 1 && b.cols() == x.cols(), "layer_norm bias", x, b);
  const std::size_t n = x.cols();
  Tensor xhat(x.rows(), n);
  std::vector<double> inv_std(x.rows());
  Tensor out(x.rows(), n);
  for (std::size_t i = 0; i < x.rows(); ++i) {
    double mu = 0.0;
    for (std::size_t j = 0; j < n; ++j) mu += x(i, j);
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (x(i, j) - mu) * (x(i, j) - mu);
    var /= static_cast<double>(n);
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) {
      xhat(i, j) = (x(i, j) - mu) * inv_std[i];
      out(i, j) = g[j] * xhat(i, j) + b[j];
    }
  }
  return a.tape->record(
      std::move(out), {a, gain, bias},
      [a = a.id, gid = gain.id, bid = bias.id, xhat = std::move(xhat),
       inv_std = std::move(inv_std)](Tape& t, std::size_t self) {
        const Tensor& dy = t.grad_ref(self);
        const Tensor& gv = t.value(gid);
        const std::size_t n = dy.cols();
        if (t.needs_grad(gid)) {
          Tensor& dg = t.grad_ref(gid);
          for (std::size_t i = 0; i < dy.rows(); ++i)
            for (std::size_t j = 0; j < n; ++j) dg[j] += dy(i, j) * xhat(i, j);
        }
        if (t.needs_grad(bid)) {
          Tensor& db = t.grad_ref(bid);
          for (std::size_t i = 0; i < dy.rows(); ++i)
            for (std::size_t j = 0; j < n; ++j) db[j] += dy(i, j);
        }
        if (!t.needs_grad(a)) return;
        Tensor& dx = t.grad_ref(a);
        std::vector<double> dxhat(n);
        for (std::size_t i = 0; i < dy.rows(); ++i) {
          double s1 = 0.0, s2 = 0.0;
          for (std::size_t j = 0; j < n; ++j) {
            dxhat[j] = dy(i, j) * gv[j];
            s1 += dxhat[j];
            s2 += dxhat[j] * xhat(i, j);
          }
          const double k = inv_std[i] / static_cast<double>(n);
          for (std::size_t j = 0; j < n; ++j) {
            dx(i, j) += k * (static_cast<double>(n) * dxhat[j] - s1 - xhat(i, j) * s2);
          }
        }
      });
}

/// x W + b, with x: m x in, W: in x out, b: 1 x out.
inline Var linear(Var w, Var b, Var x) { return add_row(matmul(x, w), b); }

/// Softmax(Q K^T / sqrt(d)) V for one head; d is the key width.
inline Var scaled_dot_attention(Var keys, Var queries, Var values) {
  const Tensor& k = keys.value();
  const Tensor& q = queries.value();
  const Tensor& v = values.value();
  detail::require(k.cols() == q.cols(), "attention Q/K width", q, k);
  detail::require(k.rows() == v.rows(), "attention K/V rows", k, v);
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(k.cols()));
  return matmul(softmax_rows(scale(matmul_nt(queries, keys), inv_sqrt_d)), values);
}

}  // namespace crg::ad
