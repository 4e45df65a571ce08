#include "kfbench/autodiff.hpp"

#include <cmath>
#include <fstream>
#include <numbers>

namespace kfb {

using nlohmann::json;

// ---------------------------------------------------------------------------
// ParamStore

const Slice& ParamStore::add(std::string name, Eigen::Index rows, Eigen::Index cols,
                             Eigen::Index fan_in) {
  if (has(name)) throw Error(Errc::InvalidArgument, "duplicate parameter '" + name + "'");
  Slice s{std::move(name), values.size(), rows, cols, fan_in};
  values.conservativeResize(values.size() + s.size());
  values.tail(s.size()).setZero();
  layout_.push_back(std::move(s));
  return layout_.back();
}

const Slice& ParamStore::add_weight(std::string name, Eigen::Index rows, Eigen::Index cols) {
  return add(std::move(name), rows, cols, cols);
}

const Slice& ParamStore::add_bias(std::string name, Eigen::Index rows) {
  return add(std::move(name), rows, 1, 0);
}

const Slice& ParamStore::slice(std::string_view name) const {
  for (const auto& s : layout_) {
    if (s.name == name) return s;
  }
  throw Error(Errc::InvalidArgument, "unknown parameter '" + std::string(name) + "'");
}

bool ParamStore::has(std::string_view name) const {
  for (const auto& s : layout_) {
    if (s.name == name) return true;
  }
  return false;
}

void ParamStore::initialize(Rng& rng) {
  for (const auto& s : layout_) {
    auto seg = values.segment(s.offset, s.size());
    if (s.fan_in <= 0) {
      seg.setZero();
      continue;
    }
    const double bound = 1.0 / std::sqrt(static_cast<double>(s.fan_in));
    for (Eigen::Index i = 0; i < seg.size(); ++i) seg[i] = rng.uniform(-bound, bound);
  }
}

// ---------------------------------------------------------------------------
// Tape

Tape::Tape(const ParamStore& params)
    : params_(&params), param_grad_(Vector::Zero(params.size())) {
  nodes_.reserve(256);
}

Var Tape::push(Vector value, Backward backward) {
  nodes_.push_back(Node{std::move(value), Vector(), std::move(backward)});
  return Var{nodes_.size() - 1};
}

void Tape::accumulate(std::size_t id, const Vector& g) {
  Vector& dst = nodes_[id].grad;
  if (dst.size() == 0) {
    dst = g;
  } else {
    dst += g;
  }
}

template <typename Expr>
void Tape::accumulate_param(const Slice& s, const Expr& g) {
  Eigen::Map<RowMatrix>(param_grad_.data() + s.offset, s.rows, s.cols) += g;
}

Var Tape::constant(Vector value) { return push(std::move(value), nullptr); }

Var Tape::param(const Slice& s) {
  Vector value = params_->values.segment(s.offset, s.size());
  const Eigen::Index offset = s.offset;
  return push(std::move(value), [offset](Tape& t, const Vector& g) {
    t.param_grad_.segment(offset, g.size()) += g;
  });
}

Var Tape::linear(const Slice& weight, const Slice& bias, Var x) {
  const Var out = linear(weight, x);
  nodes_[out.id].value += params_->segment(bias);
  const Eigen::Index b_off = bias.offset;
  auto inner = std::move(nodes_[out.id].backward);
  nodes_[out.id].backward = [inner = std::move(inner), b_off](Tape& t, const Vector& g) {
    inner(t, g);
    t.param_grad_.segment(b_off, g.size()) += g;
  };
  return out;
}

Var Tape::linear(const Slice& weight, Var x) {
  const Vector& xv = value(x);
  if (weight.cols != xv.size()) {
    throw Error(Errc::ShapeMismatch, "linear '" + weight.name + "' expects input " +
                                         std::to_string(weight.cols) + ", got " +
                                         std::to_string(xv.size()));
  }
  Vector out = params_->matrix(weight) * xv;
  const Slice w = {std::string(), weight.offset, weight.rows, weight.cols, 0};
  return push(std::move(out), [w, xid = x.id](Tape& t, const Vector& g) {
    const auto wm = t.params_->matrix(w);
    t.accumulate(xid, wm.transpose() * g);
    t.accumulate_param(w, g * t.nodes_[xid].value.transpose());
  });
}

Var Tape::add(Var a, Var b) {
  require_same_dim(value(a).size(), value(b).size(), "add");
  return push(value(a) + value(b), [a, b](Tape& t, const Vector& g) {
    t.accumulate(a.id, g);
    t.accumulate(b.id, g);
  });
}

Var Tape::sub(Var a, Var b) {
  require_same_dim(value(a).size(), value(b).size(), "sub");
  return push(value(a) - value(b), [a, b](Tape& t, const Vector& g) {
    t.accumulate(a.id, g);
    t.accumulate(b.id, -g);
  });
}

Var Tape::mul(Var a, Var b) {
  require_same_dim(value(a).size(), value(b).size(), "mul");
  return push(value(a).cwiseProduct(value(b)), [a, b](Tape& t, const Vector& g) {
    t.accumulate(a.id, g.cwiseProduct(t.nodes_[b.id].value));
    t.accumulate(b.id, g.cwiseProduct(t.nodes_[a.id].value));
  });
}

Var Tape::scale(Var a, double s) {
  return push(value(a) * s, [a, s](Tape& t, const Vector& g) { t.accumulate(a.id, g * s); });
}

Var Tape::add_const(Var a, const Vector& c) {
  require_same_dim(value(a).size(), c.size(), "add_const");
  return push(value(a) + c, [a](Tape& t, const Vector& g) { t.accumulate(a.id, g); });
}

Var Tape::mul_const(Var a, const Vector& c) {
  require_same_dim(value(a).size(), c.size(), "mul_const");
  return push(value(a).cwiseProduct(c),
              [a, c](Tape& t, const Vector& g) { t.accumulate(a.id, g.cwiseProduct(c)); });
}

Var Tape::scalar_mul(Var s, Var v) {
  require_same_dim(value(s).size(), 1, "scalar_mul scalar");
  return push(value(s)[0] * value(v), [s, v](Tape& t, const Vector& g) {
    t.accumulate(s.id, Vector::Constant(1, g.dot(t.nodes_[v.id].value)));
    t.accumulate(v.id, g * t.nodes_[s.id].value[0]);
  });
}

Var Tape::sigmoid(Var a) {
  Vector out = (1.0 + (-value(a).array()).exp()).inverse().matrix();
  const std::size_t self = nodes_.size();
  return push(std::move(out), [a, self](Tape& t, const Vector& g) {
    const auto y = t.nodes_[self].value.array();
    t.accumulate(a.id, (g.array() * y * (1.0 - y)).matrix());
  });
}

Var Tape::tanh(Var a) {
  Vector out = value(a).array().tanh().matrix();
  const std::size_t self = nodes_.size();
  return push(std::move(out), [a, self](Tape& t, const Vector& g) {
    const Vector& y = t.nodes_[self].value;
    t.accumulate(a.id, g.cwiseProduct((1.0 - y.array().square()).matrix()));
  });
}

Var Tape::relu(Var a) {
  Vector out = value(a).cwiseMax(0.0);
  return push(std::move(out), [a](Tape& t, const Vector& g) {
    const Vector& x = t.nodes_[a.id].value;
    t.accumulate(a.id, (x.array() > 0.0).select(g, 0.0).matrix());
  });
}

Var Tape::exp(Var a) {
  Vector out = value(a).array().exp().matrix();
  const std::size_t self = nodes_.size();
  return push(std::move(out), [a, self](Tape& t, const Vector& g) {
    t.accumulate(a.id, g.cwiseProduct(t.nodes_[self].value));
  });
}

Var Tape::clamp(Var a, double lo, double hi) {
  Vector out = value(a).cwiseMax(lo).cwiseMin(hi);
  return push(std::move(out), [a, lo, hi](Tape& t, const Vector& g) {
    const Vector& x = t.nodes_[a.id].value;
    t.accumulate(a.id, (x.array() >= lo && x.array() <= hi).select(g, 0.0).matrix());
  });
}

Var Tape::one_minus(Var a) {
  Vector out = (1.0 - value(a).array()).matrix();
  return push(std::move(out), [a](Tape& t, const Vector& g) { t.accumulate(a.id, -g); });
}

Var Tape::concat(Var a, Var b) {
  const Eigen::Index na = value(a).size();
  Vector out(na + value(b).size());
  out << value(a), value(b);
  return push(std::move(out), [a, b, na](Tape& t, const Vector& g) {
    t.accumulate(a.id, g.head(na));
    t.accumulate(b.id, g.tail(g.size() - na));
  });
}

Var Tape::slice(Var a, Eigen::Index offset, Eigen::Index length) {
  const Eigen::Index n = value(a).size();
  if (offset < 0 || length < 0 || offset + length > n) {
    throw Error(Errc::ShapeMismatch, "slice out of range");
  }
  return push(value(a).segment(offset, length), [a, offset, n](Tape& t, const Vector& g) {
    Vector full = Vector::Zero(n);
    full.segment(offset, g.size()) = g;
    t.accumulate(a.id, full);
  });
}

Var Tape::gain_apply(Var k, Var v, Eigen::Index rows, Eigen::Index cols) {
  require_same_dim(value(k).size(), rows * cols, "gain_apply gain size");
  require_same_dim(value(v).size(), cols, "gain_apply vector size");
  Eigen::Map<const RowMatrix> km(value(k).data(), rows, cols);
  Vector out = km * value(v);
  return push(std::move(out), [k, v, rows, cols](Tape& t, const Vector& g) {
    Eigen::Map<const RowMatrix> km(t.nodes_[k.id].value.data(), rows, cols);
    const Vector& vv = t.nodes_[v.id].value;
    t.accumulate(v.id, km.transpose() * g);
    RowMatrix dk = g * vv.transpose();
    t.accumulate(k.id, Eigen::Map<const Vector>(dk.data(), rows * cols));
  });
}

Var Tape::map(Var x, Vector fx, Matrix jac) {
  require_same_dim(jac.cols(), value(x).size(), "map Jacobian columns");
  require_same_dim(jac.rows(), fx.size(), "map Jacobian rows");
  return push(std::move(fx), [x, jac = std::move(jac)](Tape& t, const Vector& g) {
    t.accumulate(x.id, jac.transpose() * g);
  });
}

Var Tape::squared_error(Var a, const Vector& target) {
  require_same_dim(value(a).size(), target.size(), "squared_error");
  Vector diff = value(a) - target;
  const double loss = diff.squaredNorm();
  return push(Vector::Constant(1, loss), [a, diff = std::move(diff)](Tape& t, const Vector& g) {
    t.accumulate(a.id, 2.0 * g[0] * diff);
  });
}

Var Tape::norm_error(Var a, const Vector& target) {
  require_same_dim(value(a).size(), target.size(), "norm_error");
  Vector diff = value(a) - target;
  const double norm = diff.norm();
  return push(Vector::Constant(1, norm), [a, diff = std::move(diff), norm](Tape& t, const Vector& g) {
    if (norm > 0.0) t.accumulate(a.id, g[0] / norm * diff);
  });
}

Var Tape::sum(std::span<const Var> scalars) {
  double total = 0.0;
  for (const Var& s : scalars) total += value(s)[0];
  std::vector<Var> ids(scalars.begin(), scalars.end());
  return push(Vector::Constant(1, total), [ids = std::move(ids)](Tape& t, const Vector& g) {
    for (const Var& s : ids) t.accumulate(s.id, g);
  });
}

Var Tape::gaussian_nll(Var mean, Var var, const Matrix& H, const Matrix& R, const Vector& y) {
  const Vector& mu = value(mean);
  const Vector& v = value(var);
  require_same_dim(mu.size(), H.cols(), "gaussian_nll mean");
  require_same_dim(v.size(), H.cols(), "gaussian_nll variance");
  require_same_dim(y.size(), H.rows(), "gaussian_nll observation");
  const Matrix S = symmetrize(H * v.asDiagonal() * H.transpose() + R);
  const auto llt = psd_llt(S);
  const Vector e = y - H * mu;
  const Vector s_inv_e = llt.solve(e);
  const double log_det = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
  const double n = static_cast<double>(y.size());
  const double nll =
      0.5 * (n * std::log(2.0 * std::numbers::pi) + log_det + e.dot(s_inv_e));
  Matrix s_inv = llt.solve(Matrix::Identity(S.rows(), S.cols()));
  return push(Vector::Constant(1, nll),
              [mean, var, H, s_inv = std::move(s_inv), s_inv_e](Tape& t, const Vector& g) {
                t.accumulate(mean.id, -g[0] * (H.transpose() * s_inv_e));
                const Matrix dS = 0.5 * g[0] * (s_inv - s_inv_e * s_inv_e.transpose());
                const Matrix hdh = H.transpose() * dS * H;
                t.accumulate(var.id, hdh.diagonal());
              });
}

void Tape::sweep(std::size_t from) {
  for (std::size_t i = from + 1; i-- > 0;) {
    Node& node = nodes_[i];
    if (node.grad.size() == 0 || !node.backward) continue;
    node.backward(*this, node.grad);
  }
}

double Tape::backward(Var out) {
  require_same_dim(value(out).size(), 1, "backward needs a scalar output");
  backward(out, Vector::Ones(1));
  return scalar(out);
}

void Tape::backward(Var out, const Vector& seed) {
  require_same_dim(seed.size(), value(out).size(), "backward seed");
  accumulate(out.id, seed);
  sweep(out.id);
}

void Tape::zero_grad() {
  for (auto& n : nodes_) n.grad.resize(0);
  param_grad_.setZero();
}

Vector Tape::grad(Var v) const {
  const Node& n = nodes_[v.id];
  return n.grad.size() ? n.grad : Vector::Zero(n.value.size());
}

// ---------------------------------------------------------------------------

LossAndGrad gradient_of(const std::function<Var(Tape&)>& loss_eval, const ParamStore& params) {
  Tape tape(params);
  const Var out = loss_eval(tape);
  LossAndGrad res;
  res.loss = tape.backward(out);
  res.grad = tape.param_grad();
  if (!std::isfinite(res.loss) || !res.grad.allFinite()) {
    throw Error(Errc::NonFiniteLoss, "loss or gradient is not finite");
  }
  return res;
}

Vector finite_difference_gradient(const std::function<double(const ParamStore&)>& loss,
                                  const ParamStore& params, double step) {
  ParamStore probe = params;
  Vector grad(params.size());
  for (Eigen::Index i = 0; i < params.size(); ++i) {
    const double orig = probe.values[i];
    probe.values[i] = orig + step;
    const double up = loss(probe);
    probe.values[i] = orig - step;
    const double down = loss(probe);
    probe.values[i] = orig;
    grad[i] = (up - down) / (2.0 * step);
  }
  return grad;
}

AdamState AdamState::for_params(const ParamStore& params, double lr) {
  AdamState s;
  s.m = Vector::Zero(params.size());
  s.v = Vector::Zero(params.size());
  s.lr = lr;
  return s;
}

void adam_step(AdamState& state, ParamStore& params, const Vector& grad) {
  require_same_dim(grad.size(), params.size(), "adam_step gradient");
  require_same_dim(state.m.size(), params.size(), "adam_step state");
  ++state.step;
  state.m = state.beta1 * state.m + (1.0 - state.beta1) * grad;
  state.v = state.beta2 * state.v + (1.0 - state.beta2) * grad.cwiseAbs2();
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  params.values.array() -= state.lr * (state.m.array() / c1) /
                           ((state.v.array() / c2).sqrt() + state.eps);
}

double clip_grad_norm(Vector& grad, double max_norm) {
  const double norm = grad.norm();
  if (norm > max_norm && norm > 0.0) grad *= max_norm / norm;
  return norm;
}

// ---------------------------------------------------------------------------
// Serialization

json vector_to_json(const Vector& v) {
  json out = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v[i]);
  return out;
}

Vector vector_from_json(const json& j) {
  if (!j.is_array()) throw Error(Errc::SchemaError, "expected a numeric array");
  Vector v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number()) throw Error(Errc::SchemaError, "expected a numeric array");
    v[static_cast<Eigen::Index>(i)] = j[i].get<double>();
  }
  return v;
}

json matrix_to_json(const Matrix& m) {
  json out = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) out.push_back(vector_to_json(m.row(r).transpose()));
  return out;
}

Matrix matrix_from_json(const json& j) {
  if (!j.is_array() || j.empty()) throw Error(Errc::SchemaError, "expected a nested array");
  const Vector first = vector_from_json(j[0]);
  Matrix m(static_cast<Eigen::Index>(j.size()), first.size());
  for (std::size_t r = 0; r < j.size(); ++r) {
    const Vector row = vector_from_json(j[r]);
    require_same_dim(row.size(), first.size(), "matrix row length");
    m.row(static_cast<Eigen::Index>(r)) = row.transpose();
  }
  return m;
}

json checkpoint_to_json(const Checkpoint& ckpt) {
  json j;
  j["method"] = ckpt.method;
  json layout = json::array();
  for (const auto& s : ckpt.params.layout()) {
    layout.push_back({{"name", s.name},
                      {"offset", s.offset},
                      {"shape", json::array({s.rows, s.cols})},
                      {"fan_in", s.fan_in}});
  }
  j["layout"] = std::move(layout);
  j["values"] = vector_to_json(ckpt.params.values);
  j["meta"] = ckpt.meta;
  j["arch"] = ckpt.arch;
  return j;
}

Checkpoint checkpoint_from_json(const json& j) {
  try {
    Checkpoint ckpt;
    ckpt.method = j.at("method").get<std::string>();
    for (const auto& entry : j.at("layout")) {
      const auto& shape = entry.at("shape");
      const Eigen::Index fan_in = entry.contains("fan_in") ? entry["fan_in"].get<Eigen::Index>() : 0;
      const Slice& s = ckpt.params.add(entry.at("name").get<std::string>(),
                                       shape.at(0).get<Eigen::Index>(),
                                       shape.at(1).get<Eigen::Index>(), fan_in);
      if (s.offset != entry.at("offset").get<Eigen::Index>()) {
        throw Error(Errc::SchemaError, "checkpoint layout offsets are not contiguous");
      }
    }
    const Vector values = vector_from_json(j.at("values"));
    require_same_dim(values.size(), ckpt.params.size(), "checkpoint values vs layout");
    ckpt.params.values = values;
    if (j.contains("meta")) ckpt.meta = j["meta"];
    if (j.contains("arch")) ckpt.arch = j["arch"];
    return ckpt;
  } catch (const json::exception& e) {
    throw Error(Errc::SchemaError, std::string("malformed checkpoint: ") + e.what());
  } catch (const Error& e) {
    if (e.code() == Errc::SchemaError) throw;
    throw Error(Errc::SchemaError, e.what());
  }
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(Errc::IoError, "cannot write checkpoint '" + path.string() + "'");
  out << checkpoint_to_json(ckpt).dump() << '\n';
  if (!out) throw Error(Errc::IoError, "write failed for '" + path.string() + "'");
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::IoError, "cannot read checkpoint '" + path.string() + "'");
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw Error(Errc::SchemaError, std::string("malformed checkpoint: ") + e.what());
  }
  return checkpoint_from_json(j);
}

}  // namespace kfb
