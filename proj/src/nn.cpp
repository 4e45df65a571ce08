#include "kfbench/nn.hpp"

namespace kfb {

Activation activation_from_string(std::string_view name) {
  if (name == "identity") return Activation::Identity;
  if (name == "relu") return Activation::Relu;
  if (name == "tanh") return Activation::Tanh;
  throw Error(Errc::ConfigError, "unknown activation '" + std::string(name) + "'");
}

FcLayer FcLayer::create(ParamStore& params, const std::string& prefix, Eigen::Index in,
                        Eigen::Index out) {
  FcLayer layer;
  layer.weight = params.add_weight(prefix + ".W", out, in);
  layer.bias = params.add_bias(prefix + ".b", out);
  return layer;
}

FcLayer FcLayer::bind(const ParamStore& params, const std::string& prefix) {
  return {params.slice(prefix + ".W"), params.slice(prefix + ".b")};
}

Var fc_forward(Tape& tape, const FcLayer& layer, Var x, Activation act) {
  const Var pre = tape.linear(layer.weight, layer.bias, x);
  switch (act) {
    case Activation::Identity: return pre;
    case Activation::Relu: return tape.relu(pre);
    case Activation::Tanh: return tape.tanh(pre);
  }
  return pre;
}

Vector fc_forward(const ParamStore& params, const FcLayer& layer, const Vector& x,
                  Activation act) {
  require_same_dim(x.size(), layer.in(), "fc_forward input");
  Vector out = params.matrix(layer.weight) * x + params.segment(layer.bias);
  switch (act) {
    case Activation::Identity: break;
    case Activation::Relu: out = out.cwiseMax(0.0); break;
    case Activation::Tanh: out = out.array().tanh().matrix(); break;
  }
  return out;
}

GruCell GruCell::create(ParamStore& params, const std::string& prefix, Eigen::Index in,
                        Eigen::Index hidden) {
  GruCell cell;
  cell.w_input = params.add_weight(prefix + ".W_i", 3 * hidden, in);
  cell.w_hidden = params.add_weight(prefix + ".W_h", 3 * hidden, hidden);
  cell.b_input = params.add_bias(prefix + ".b_i", 3 * hidden);
  cell.b_hidden = params.add_bias(prefix + ".b_h", 3 * hidden);
  return cell;
}

GruCell GruCell::bind(const ParamStore& params, const std::string& prefix) {
  return {params.slice(prefix + ".W_i"), params.slice(prefix + ".W_h"),
          params.slice(prefix + ".b_i"), params.slice(prefix + ".b_h")};
}

Var gru_step(Tape& tape, const GruCell& cell, Var x, Var h) {
  const Eigen::Index hs = cell.hidden();
  require_same_dim(tape.value(h).size(), hs, "gru_step hidden");
  const Var gi = tape.linear(cell.w_input, cell.b_input, x);
  const Var gh = tape.linear(cell.w_hidden, cell.b_hidden, h);
  const Var r = tape.sigmoid(tape.add(tape.slice(gi, 0, hs), tape.slice(gh, 0, hs)));
  const Var z = tape.sigmoid(tape.add(tape.slice(gi, hs, hs), tape.slice(gh, hs, hs)));
  const Var n = tape.tanh(
      tape.add(tape.slice(gi, 2 * hs, hs), tape.mul(r, tape.slice(gh, 2 * hs, hs))));
  // (1 - z) * n + z * h == n + z * (h - n)
  return tape.add(n, tape.mul(z, tape.sub(h, n)));
}

Vector gru_step(const ParamStore& params, const GruCell& cell, const Vector& x,
                const Vector& h) {
  const Eigen::Index hs = cell.hidden();
  require_same_dim(x.size(), cell.in(), "gru_step input");
  require_same_dim(h.size(), hs, "gru_step hidden");
  const Vector gi = params.matrix(cell.w_input) * x + params.segment(cell.b_input);
  const Vector gh = params.matrix(cell.w_hidden) * h + params.segment(cell.b_hidden);
  const auto sigmoid = [](const Vector& v) -> Vector {
    return (1.0 + (-v.array()).exp()).inverse().matrix();
  };
  const Vector r = sigmoid(gi.head(hs) + gh.head(hs));
  const Vector z = sigmoid(gi.segment(hs, hs) + gh.segment(hs, hs));
  const Vector n =
      (gi.tail(hs) + r.cwiseProduct(gh.tail(hs))).array().tanh().matrix();
  return n + z.cwiseProduct(h - n);
}

}  // namespace kfb
