#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace deta::ad {

/// Dense row-major matrix with an optional gradient buffer.
///
/// Tensor is a shared handle: copies alias the same storage, which is what the
/// tape needs to route gradients back to parameters. Use clone() for a deep copy.
/// Vectors are 1 x n rows and scalars are 1 x 1.
class Tensor {
 public:
  Tensor();
  Tensor(std::size_t rows, std::size_t cols, double fill = 0.0);
  Tensor(std::size_t rows, std::size_t cols, std::vector<double> values);

  static Tensor row(std::vector<double> values);
  static Tensor scalar(double value);
  static Tensor identity(std::size_t n);

  std::size_t rows() const;
  std::size_t cols() const;
  std::size_t size() const;
  std::string shape_string() const;

  std::span<double> data();
  std::span<const double> data() const;
  double& at(std::size_t r, std::size_t c);
  double at(std::size_t r, std::size_t c) const;
  double item() const;

  bool has_grad() const;
  std::span<double> grad();
  std::span<const double> grad() const;
  /// Allocates a zero gradient if none exists.
  void ensure_grad();
  void clear_grad();

  Tensor clone() const;
  std::vector<double> to_vector() const;
  bool same_storage(const Tensor& other) const;

 private:
  friend class Tape;
  struct Storage {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> value;
    std::vector<double> grad;
  };
  explicit Tensor(std::shared_ptr<Storage> s);
  std::shared_ptr<Storage> impl_;
};

/// Records primitive operations in execution order so that backward() can
/// replay them in reverse. One tape per forward pass; tensors created outside a
/// tape are leaves (parameters, inputs, constants).
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Tensor matmul(const Tensor& a, const Tensor& b);
  /// Same shape, or b a 1 x cols row broadcast over the rows of a.
  Tensor add(const Tensor& a, const Tensor& b);
  Tensor sub(const Tensor& a, const Tensor& b);
  Tensor mul(const Tensor& a, const Tensor& b);
  Tensor neg(const Tensor& a);
  Tensor scale(const Tensor& a, double s);
  Tensor add_scalar(const Tensor& a, double s);
  Tensor log(const Tensor& a);
  Tensor exp(const Tensor& a);
  Tensor sigmoid(const Tensor& a);
  Tensor relu(const Tensor& a);
  /// Elementwise clamp; gradient passes only where the input is inside [lo, hi].
  Tensor clamp(const Tensor& a, double lo, double hi);
  Tensor softmax_rows(const Tensor& a);
  Tensor sum(const Tensor& a);
  Tensor mean(const Tensor& a);
  /// Column means, n x d -> 1 x d.
  Tensor mean_rows(const Tensor& a);
  /// Stacks tensors vertically; all must share the column count.
  Tensor concat_rows(std::span<const Tensor> parts);
  /// Joins two tensors side by side; row counts must match.
  Tensor concat_cols(const Tensor& a, const Tensor& b);
  Tensor select_rows(const Tensor& a, std::span<const std::size_t> rows);
  Tensor select_cols(const Tensor& a, std::span<const std::size_t> cols);

  /// Seeds d(root)/d(root) = 1 and accumulates gradients into every tensor
  /// reachable from root. Leaf gradients accumulate across calls.
  void backward(const Tensor& root);

  std::size_t size() const { return records_.size(); }

 private:
  struct Record {
    std::shared_ptr<Tensor::Storage> out;
    std::function<void()> back;
  };
  Tensor record(std::size_t rows, std::size_t cols, std::vector<double> value,
                std::function<void(Tensor::Storage&)> back);
  Tensor unary(const Tensor& a, const char* name,
               const std::function<double(double)>& f,
               const std::function<double(double, double)>& df);

  std::vector<Record> records_;
};

struct OptimizerConfig {
  enum class Kind { sgd, adam };
  Kind kind = Kind::adam;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// First-order optimizer over a fixed parameter list. step() requires every
/// parameter to carry a gradient and clears gradients afterwards.
class Optimizer {
 public:
  Optimizer(OptimizerConfig cfg, std::vector<Tensor> params);

  void step();
  /// Gives every parameter a zero gradient so parameters unreachable from a
  /// particular loss still satisfy step()'s precondition.
  void prepare();
  void set_lr(double lr) { cfg_.lr = lr; }
  const OptimizerConfig& config() const { return cfg_; }
  std::span<const Tensor> params() const { return params_; }

 private:
  OptimizerConfig cfg_;
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  long steps_ = 0;
};

}  // namespace deta::ad
