#pragma once

#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "kfbench/gaussmath.hpp"

namespace kfb {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Named row-major block of the flat parameter vector. fan_in is 0 for biases
/// and scalars, which initialize to zero.
struct Slice {
  std::string name;
  Eigen::Index offset = 0;
  Eigen::Index rows = 0;
  Eigen::Index cols = 1;
  Eigen::Index fan_in = 0;

  Eigen::Index size() const { return rows * cols; }
};

class ParamStore {
 public:
  const Slice& add_weight(std::string name, Eigen::Index rows, Eigen::Index cols);
  const Slice& add_bias(std::string name, Eigen::Index rows);
  const Slice& add(std::string name, Eigen::Index rows, Eigen::Index cols,
                   Eigen::Index fan_in);

  const Slice& slice(std::string_view name) const;
  bool has(std::string_view name) const;
  const std::vector<Slice>& layout() const { return layout_; }
  Eigen::Index size() const { return values.size(); }

  Eigen::Map<const RowMatrix> matrix(const Slice& s) const {
    return {values.data() + s.offset, s.rows, s.cols};
  }
  Eigen::Map<RowMatrix> matrix(const Slice& s) {
    return {values.data() + s.offset, s.rows, s.cols};
  }
  auto segment(const Slice& s) const { return values.segment(s.offset, s.size()); }
  auto segment(const Slice& s) { return values.segment(s.offset, s.size()); }

  /// Weights uniform in +-1/sqrt(fan_in), biases zero.
  void initialize(Rng& rng);

  Vector values;

 private:
  std::vector<Slice> layout_;
};

/// Handle to a node on a Tape.
struct Var {
  std::size_t id = 0;
};

/// Records one forward evaluation over vector-valued nodes and replays it in
/// reverse. Parameter gradients accumulate into param_grad(). A Tape is
/// single-use and single-threaded.
class Tape {
 public:
  explicit Tape(const ParamStore& params);

  Var constant(Vector value);
  /// Leaf bound to a parameter slice (flattened row-major).
  Var param(const Slice& s);

  Var linear(const Slice& weight, const Slice& bias, Var x);
  Var linear(const Slice& weight, Var x);

  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var scale(Var a, double s);
  Var add_const(Var a, const Vector& c);
  Var mul_const(Var a, const Vector& c);
  /// s * v where s is a size-1 node.
  Var scalar_mul(Var s, Var v);

  Var sigmoid(Var a);
  Var tanh(Var a);
  Var relu(Var a);
  Var exp(Var a);
  Var clamp(Var a, double lo, double hi);
  Var one_minus(Var a);

  Var concat(Var a, Var b);
  Var slice(Var a, Eigen::Index offset, Eigen::Index length);

  /// reshape(k, rows, cols) * v with k stored row-major.
  Var gain_apply(Var k, Var v, Eigen::Index rows, Eigen::Index cols);

  /// Node with value fx = f(x) and Jacobian jac = df/dx at x.
  Var map(Var x, Vector fx, Matrix jac);

  Var squared_error(Var a, const Vector& target);
  Var norm_error(Var a, const Vector& target);
  Var sum(std::span<const Var> scalars);

  /// -ln N(y; H mean, H diag(var) H^T + R).
  Var gaussian_nll(Var mean, Var var, const Matrix& H, const Matrix& R, const Vector& y);

  const Vector& value(Var v) const { return nodes_[v.id].value; }
  double scalar(Var v) const { return nodes_[v.id].value[0]; }

  /// Reverse sweep from a scalar node with seed 1. Returns its value.
  double backward(Var out);
  /// Reverse sweep from any node with an explicit seed.
  void backward(Var out, const Vector& seed);
  /// Clears node and parameter gradients for another sweep over the same tape.
  void zero_grad();

  /// Gradient of the last sweep with respect to node v (zeros if untouched).
  Vector grad(Var v) const;
  const Vector& param_grad() const { return param_grad_; }
  const ParamStore& params() const { return *params_; }
  std::size_t size() const { return nodes_.size(); }

 private:
  using Backward = std::function<void(Tape&, const Vector&)>;
  struct Node {
    Vector value;
    Vector grad;
    Backward backward;
  };

  Var push(Vector value, Backward backward);
  void accumulate(std::size_t id, const Vector& g);
  template <typename Expr>
  void accumulate_param(const Slice& s, const Expr& g);
  void sweep(std::size_t from);

  const ParamStore* params_;
  std::vector<Node> nodes_;
  Vector param_grad_;
};

struct LossAndGrad {
  double loss = 0.0;
  Vector grad;
};

/// Evaluates a scalar loss on a fresh tape and returns its reverse-mode
/// gradient. Throws NonFiniteLoss on NaN/inf loss or gradient.
LossAndGrad gradient_of(const std::function<Var(Tape&)>& loss_eval,
                        const ParamStore& params);

/// Central finite-difference gradient of an arbitrary scalar function of the
/// parameters.
Vector finite_difference_gradient(const std::function<double(const ParamStore&)>& loss,
                                  const ParamStore& params, double step = 1e-6);

struct AdamState {
  Vector m;
  Vector v;
  long step = 0;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  static AdamState for_params(const ParamStore& params, double lr);
};

void adam_step(AdamState& state, ParamStore& params, const Vector& grad);

/// Rescales grad in place so its Euclidean norm is at most max_norm.
double clip_grad_norm(Vector& grad, double max_norm);

struct Checkpoint {
  std::string method;
  ParamStore params;
  nlohmann::json meta = nlohmann::json::object();
  /// Method-specific architecture and non-trainable buffers.
  nlohmann::json arch = nlohmann::json::object();
};

nlohmann::json checkpoint_to_json(const Checkpoint& ckpt);
Checkpoint checkpoint_from_json(const nlohmann::json& j);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

nlohmann::json vector_to_json(const Vector& v);
Vector vector_from_json(const nlohmann::json& j);
nlohmann::json matrix_to_json(const Matrix& m);
Matrix matrix_from_json(const nlohmann::json& j);

}  // namespace kfb
