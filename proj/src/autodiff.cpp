#include "deta/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace deta::ad {

namespace {

std::string shape_of(std::size_t r, std::size_t c) {
  return "(" + std::to_string(r) + "x" + std::to_string(c) + ")";
}

[[noreturn]] void shape_error(const char* op, const Tensor& a, const Tensor& b) {
  throw std::invalid_argument(std::string(op) + ": shape mismatch " + a.shape_string() +
                              " vs " + b.shape_string());
}

std::vector<double>& grad_of(auto& storage) {
  if (storage.grad.empty()) storage.grad.assign(storage.value.size(), 0.0);
  return storage.grad;
}

void require_finite(const char* op, const Tensor& a) {
  for (double v : a.data())
    if (!std::isfinite(v)) throw std::domain_error(std::string(op) + ": non-finite input");
}

}  // namespace

// ---------------------------------------------------------------- Tensor

Tensor::Tensor() : impl_(std::make_shared<Storage>()) {}

Tensor::Tensor(std::size_t rows, std::size_t cols, double fill)
    : impl_(std::make_shared<Storage>()) {
  impl_->rows = rows;
  impl_->cols = cols;
  impl_->value.assign(rows * cols, fill);
}

Tensor::Tensor(std::size_t rows, std::size_t cols, std::vector<double> values)
    : impl_(std::make_shared<Storage>()) {
  if (values.size() != rows * cols)
    throw std::invalid_argument("Tensor: " + std::to_string(values.size()) +
                                " values do not fill shape " + shape_of(rows, cols));
  impl_->rows = rows;
  impl_->cols = cols;
  impl_->value = std::move(values);
}

Tensor::Tensor(std::shared_ptr<Storage> s) : impl_(std::move(s)) {}

Tensor Tensor::row(std::vector<double> values) {
  const auto n = values.size();
  return Tensor(1, n, std::move(values));
}

Tensor Tensor::scalar(double value) { return Tensor(1, 1, value); }

Tensor Tensor::identity(std::size_t n) {
  Tensor t(n, n);
  for (std::size_t i = 0; i < n; ++i) t.at(i, i) = 1.0;
  return t;
}

std::size_t Tensor::rows() const { return impl_->rows; }
std::size_t Tensor::cols() const { return impl_->cols; }
std::size_t Tensor::size() const { return impl_->value.size(); }
std::string Tensor::shape_string() const { return shape_of(rows(), cols()); }

std::span<double> Tensor::data() { return impl_->value; }
std::span<const double> Tensor::data() const { return impl_->value; }

double& Tensor::at(std::size_t r, std::size_t c) { return impl_->value[r * impl_->cols + c]; }
double Tensor::at(std::size_t r, std::size_t c) const { return impl_->value[r * impl_->cols + c]; }

double Tensor::item() const {
  if (size() != 1) throw std::invalid_argument("item: tensor " + shape_string() + " is not scalar");
  return impl_->value[0];
}

bool Tensor::has_grad() const { return !impl_->grad.empty(); }
std::span<double> Tensor::grad() { return impl_->grad; }
std::span<const double> Tensor::grad() const { return impl_->grad; }
void Tensor::ensure_grad() { grad_of(*impl_); }
void Tensor::clear_grad() { impl_->grad.clear(); }

Tensor Tensor::clone() const {
  auto s = std::make_shared<Storage>(*impl_);
  return Tensor(std::move(s));
}

std::vector<double> Tensor::to_vector() const { return impl_->value; }

bool Tensor::same_storage(const Tensor& other) const { return impl_ == other.impl_; }

// ---------------------------------------------------------------- Tape

Tensor Tape::record(std::size_t rows, std::size_t cols, std::vector<double> value,
                    std::function<void(Tensor::Storage&)> back) {
  auto out = std::make_shared<Tensor::Storage>();
  out->rows = rows;
  out->cols = cols;
  out->value = std::move(value);
  Tensor::Storage* raw = out.get();
  records_.push_back({out, [raw, back = std::move(back)] { back(*raw); }});
  return Tensor(std::move(out));
}

Tensor Tape::matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows()) shape_error("matmul", a, b);
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  std::vector<double> out(n * m, 0.0);
  const auto A = a.data();
  const auto B = b.data();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = A[i * k + p];
      if (aip == 0.0) continue;
      for (std::size_t j = 0; j < m; ++j) out[i * m + j] += aip * B[p * m + j];
    }
  auto sa = a.impl_, sb = b.impl_;
  return record(n, m, std::move(out), [sa, sb, n, k, m](Tensor::Storage& o) {
    const auto& G = o.grad;
    auto& ga = grad_of(*sa);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t p = 0; p < k; ++p) {
        double acc = 0.0;
        for (std::size_t j = 0; j < m; ++j) acc += G[i * m + j] * sb->value[p * m + j];
        ga[i * k + p] += acc;
      }
    auto& gb = grad_of(*sb);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t p = 0; p < k; ++p) {
        const double aip = sa->value[i * k + p];
        if (aip == 0.0) continue;
        for (std::size_t j = 0; j < m; ++j) gb[p * m + j] += aip * G[i * m + j];
      }
  });
}

Tensor Tape::add(const Tensor& a, const Tensor& b) {
  const bool same = a.rows() == b.rows() && a.cols() == b.cols();
  const bool bcast = !same && b.rows() == 1 && b.cols() == a.cols();
  if (!same && !bcast) shape_error("add", a, b);
  const std::size_t n = a.rows(), m = a.cols();
  std::vector<double> out(a.data().begin(), a.data().end());
  const auto B = b.data();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out[i * m + j] += B[same ? i * m + j : j];
  auto sa = a.impl_, sb = b.impl_;
  return record(n, m, std::move(out), [sa, sb, n, m, same](Tensor::Storage& o) {
    auto& ga = grad_of(*sa);
    for (std::size_t i = 0; i < n * m; ++i) ga[i] += o.grad[i];
    auto& gb = grad_of(*sb);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) gb[same ? i * m + j : j] += o.grad[i * m + j];
  });
}

Tensor Tape::sub(const Tensor& a, const Tensor& b) { return add(a, neg(b)); }

Tensor Tape::mul(const Tensor& a, const Tensor& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) shape_error("mul", a, b);
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  auto sa = a.impl_, sb = b.impl_;
  return record(a.rows(), a.cols(), std::move(out), [sa, sb](Tensor::Storage& o) {
    auto& ga = grad_of(*sa);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += o.grad[i] * sb->value[i];
    auto& gb = grad_of(*sb);
    for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += o.grad[i] * sa->value[i];
  });
}

Tensor Tape::unary(const Tensor& a, const char* /*name*/, const std::function<double(double)>& f,
                   const std::function<double(double, double)>& df) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(a.data()[i]);
  auto sa = a.impl_;
  return record(a.rows(), a.cols(), std::move(out), [sa, df](Tensor::Storage& o) {
    auto& ga = grad_of(*sa);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += o.grad[i] * df(sa->value[i], o.value[i]);
  });
}

Tensor Tape::neg(const Tensor& a) { return scale(a, -1.0); }

Tensor Tape::scale(const Tensor& a, double s) {
  return unary(a, "scale", [s](double x) { return s * x; }, [s](double, double) { return s; });
}

Tensor Tape::add_scalar(const Tensor& a, double s) {
  return unary(a, "add_scalar", [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Tensor Tape::log(const Tensor& a) {
  require_finite("log", a);
  for (double v : a.data())
    if (v <= 0.0) throw std::domain_error("log: non-positive input " + std::to_string(v));
  return unary(a, "log", [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Tensor Tape::exp(const Tensor& a) {
  return unary(a, "exp", [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor Tape::sigmoid(const Tensor& a) {
  return unary(
      a, "sigmoid",
      [](double x) {
        if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor Tape::relu(const Tensor& a) {
  return unary(a, "relu", [](double x) { return x > 0.0 ? x : 0.0; },
               [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor Tape::clamp(const Tensor& a, double lo, double hi) {
  return unary(a, "clamp", [lo, hi](double x) { return std::clamp(x, lo, hi); },
               [lo, hi](double x, double) { return (x >= lo && x <= hi) ? 1.0 : 0.0; });
}

Tensor Tape::softmax_rows(const Tensor& a) {
  require_finite("softmax_rows", a);
  const std::size_t n = a.rows(), m = a.cols();
  std::vector<double> out(n * m);
  const auto A = a.data();
  for (std::size_t i = 0; i < n; ++i) {
    double mx = A[i * m];
    for (std::size_t j = 1; j < m; ++j) mx = std::max(mx, A[i * m + j]);
    double z = 0.0;
    for (std::size_t j = 0; j < m; ++j) z += out[i * m + j] = std::exp(A[i * m + j] - mx);
    for (std::size_t j = 0; j < m; ++j) out[i * m + j] /= z;
  }
  auto sa = a.impl_;
  return record(n, m, std::move(out), [sa, n, m](Tensor::Storage& o) {
    auto& ga = grad_of(*sa);
    for (std::size_t i = 0; i < n; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < m; ++j) dot += o.grad[i * m + j] * o.value[i * m + j];
      for (std::size_t j = 0; j < m; ++j)
        ga[i * m + j] += o.value[i * m + j] * (o.grad[i * m + j] - dot);
    }
  });
}

Tensor Tape::sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  auto sa = a.impl_;
  return record(1, 1, {s}, [sa](Tensor::Storage& o) {
    auto& ga = grad_of(*sa);
    for (double& g : ga) g += o.grad[0];
  });
}

Tensor Tape::mean(const Tensor& a) {
  if (a.size() == 0) throw std::invalid_argument("mean: empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.size()));
}

Tensor Tape::mean_rows(const Tensor& a) {
  const std::size_t n = a.rows(), m = a.cols();
  if (n == 0) throw std::invalid_argument("mean_rows: tensor has no rows");
  std::vector<double> out(m, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out[j] += a.data()[i * m + j];
  const double inv = 1.0 / static_cast<double>(n);
  for (double& v : out) v *= inv;
  auto sa = a.impl_;
  return record(1, m, std::move(out), [sa, n, m, inv](Tensor::Storage& o) {
    auto& ga = grad_of(*sa);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) ga[i * m + j] += o.grad[j] * inv;
  });
}

Tensor Tape::concat_rows(std::span<const Tensor> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: no tensors");
  const std::size_t m = parts.front().cols();
  std::size_t n = 0;
  std::vector<std::shared_ptr<Tensor::Storage>> srcs;
  for (const auto& p : parts) {
    if (p.cols() != m) shape_error("concat_rows", parts.front(), p);
    n += p.rows();
    srcs.push_back(p.impl_);
  }
  std::vector<double> out;
  out.reserve(n * m);
  for (const auto& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
  return record(n, m, std::move(out), [srcs](Tensor::Storage& o) {
    std::size_t off = 0;
    for (const auto& s : srcs) {
      auto& g = grad_of(*s);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[off + i];
      off += g.size();
    }
  });
}

Tensor Tape::concat_cols(const Tensor& a, const Tensor& b) {
  if (a.rows() != b.rows()) shape_error("concat_cols", a, b);
  const std::size_t n = a.rows(), ma = a.cols(), mb = b.cols(), m = ma + mb;
  std::vector<double> out(n * m);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < ma; ++j) out[i * m + j] = a.data()[i * ma + j];
    for (std::size_t j = 0; j < mb; ++j) out[i * m + ma + j] = b.data()[i * mb + j];
  }
  auto sa = a.impl_, sb = b.impl_;
  return record(n, m, std::move(out), [sa, sb, n, ma, mb, m](Tensor::Storage& o) {
    auto& ga = grad_of(*sa);
    auto& gb = grad_of(*sb);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < ma; ++j) ga[i * ma + j] += o.grad[i * m + j];
      for (std::size_t j = 0; j < mb; ++j) gb[i * mb + j] += o.grad[i * m + ma + j];
    }
  });
}

Tensor Tape::select_rows(const Tensor& a, std::span<const std::size_t> rows) {
  const std::size_t m = a.cols();
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  std::vector<double> out;
  out.reserve(idx.size() * m);
  for (auto r : idx) {
    if (r >= a.rows())
      throw std::out_of_range("select_rows: row " + std::to_string(r) + " outside " + a.shape_string());
    out.insert(out.end(), a.data().begin() + r * m, a.data().begin() + (r + 1) * m);
  }
  auto sa = a.impl_;
  return record(idx.size(), m, std::move(out), [sa, idx, m](Tensor::Storage& o) {
    auto& ga = grad_of(*sa);
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (std::size_t j = 0; j < m; ++j) ga[idx[i] * m + j] += o.grad[i * m + j];
  });
}

Tensor Tape::select_cols(const Tensor& a, std::span<const std::size_t> cols) {
  const std::size_t n = a.rows(), m = a.cols();
  std::vector<std::size_t> idx(cols.begin(), cols.end());
  for (auto c : idx)
    if (c >= m)
      throw std::out_of_range("select_cols: column " + std::to_string(c) + " outside " + a.shape_string());
  const std::size_t w = idx.size();
  std::vector<double> out(n * w);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < w; ++j) out[i * w + j] = a.data()[i * m + idx[j]];
  auto sa = a.impl_;
  return record(n, w, std::move(out), [sa, idx, n, m, w](Tensor::Storage& o) {
    auto& ga = grad_of(*sa);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < w; ++j) ga[i * m + idx[j]] += o.grad[i * w + j];
  });
}

void Tape::backward(const Tensor& root) {
  if (root.size() != 1)
    throw std::invalid_argument("backward: root " + root.shape_string() + " is not a scalar");
  auto it = std::find_if(records_.begin(), records_.end(),
                         [&](const Record& r) { return r.out == root.impl_; });
  if (it == records_.end()) throw std::invalid_argument("backward: root was not produced on this tape");
  root.impl_->grad.assign(1, 1.0);
  for (auto r = std::make_reverse_iterator(it + 1); r != records_.rend(); ++r) {
    if (r->out->grad.empty()) continue;
    r->back();
  }
}

// ---------------------------------------------------------------- Optimizer

Optimizer::Optimizer(OptimizerConfig cfg, std::vector<Tensor> params)
    : cfg_(cfg), params_(std::move(params)) {
  if (cfg_.kind == OptimizerConfig::Kind::adam)
    for (const auto& p : params_) {
      m_.emplace_back(p.size(), 0.0);
      v_.emplace_back(p.size(), 0.0);
    }
}

void Optimizer::prepare() {
  for (auto& p : params_) p.ensure_grad();
}

void Optimizer::step() {
  for (std::size_t i = 0; i < params_.size(); ++i)
    if (!params_[i].has_grad())
      throw std::logic_error("optimizer: parameter " + std::to_string(i) + " " +
                             params_[i].shape_string() + " has no gradient");
  ++steps_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(steps_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(steps_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto w = params_[i].data();
    auto g = params_[i].grad();
    if (cfg_.kind == OptimizerConfig::Kind::sgd) {
      for (std::size_t j = 0; j < w.size(); ++j) w[j] -= cfg_.lr * g[j];
    } else {
      auto& m = m_[i];
      auto& v = v_[i];
      for (std::size_t j = 0; j < w.size(); ++j) {
        m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * g[j];
        v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * g[j] * g[j];
        w[j] -= cfg_.lr * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + cfg_.eps);
      }
    }
    params_[i].clear_grad();
  }
}

}  // namespace deta::ad
