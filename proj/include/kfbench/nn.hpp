#pragma once

#include <string>
#include <string_view>

#include "kfbench/autodiff.hpp"

namespace kfb {

enum class Activation { Identity, Relu, Tanh };

Activation activation_from_string(std::string_view name);

/// W x + b followed by an activation.
struct FcLayer {
  Slice weight;
  Slice bias;

  Eigen::Index in() const { return weight.cols; }
  Eigen::Index out() const { return weight.rows; }

  static FcLayer create(ParamStore& params, const std::string& prefix, Eigen::Index in,
                        Eigen::Index out);
  static FcLayer bind(const ParamStore& params, const std::string& prefix);
};

Var fc_forward(Tape& tape, const FcLayer& layer, Var x, Activation act);
Vector fc_forward(const ParamStore& params, const FcLayer& layer, const Vector& x,
                  Activation act);

/// GRU cell with gates stacked as [reset; update; candidate]:
///   r = s(W_ir x + b_ir + W_hr h + b_hr)
///   z = s(W_iz x + b_iz + W_hz h + b_hz)
///   n = tanh(W_in x + b_in + r * (W_hn h + b_hn))
///   h' = (1 - z) * n + z * h
struct GruCell {
  Slice w_input;   // 3H x in
  Slice w_hidden;  // 3H x H
  Slice b_input;   // 3H
  Slice b_hidden;  // 3H

  Eigen::Index in() const { return w_input.cols; }
  Eigen::Index hidden() const { return w_hidden.cols; }

  static GruCell create(ParamStore& params, const std::string& prefix, Eigen::Index in,
                        Eigen::Index hidden);
  static GruCell bind(const ParamStore& params, const std::string& prefix);
};

Var gru_step(Tape& tape, const GruCell& cell, Var x, Var h);
Vector gru_step(const ParamStore& params, const GruCell& cell, const Vector& x,
                const Vector& h);

}  // namespace kfb
