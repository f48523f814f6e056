#pragma once
// LSTM building blocks on the autodiff tape. Parameters live in a flat
// TensorMap under dotted prefixes ("obj_ctx.fwd.w_input", ...), so the
// same code serves checkpointing, gradient bookkeeping and hashing.

#include <functional>
#include <string>
#include <vector>

#include "cig/autodiff.hpp"
#include "cig/rng.hpp"
#include "cig/tensor.hpp"

namespace cig {

// Gate layout in the 4H blocks: input, forget, cell, output.
inline void init_lstm_params(TensorMap& params, const std::string& prefix,
                             int input_dim, int hidden_dim,
                             std::mt19937_64& rng) {
  double k = 1.0 / std::sqrt(static_cast<double>(hidden_dim));
  std::uniform_real_distribution<double> d(-k, k);
  Tensor wi({4 * hidden_dim, input_dim});
  Tensor wh({4 * hidden_dim, hidden_dim});
  Tensor b({4 * hidden_dim});
  for (double& v : wi.data) v = d(rng);
  for (double& v : wh.data) v = d(rng);
  for (double& v : b.data) v = d(rng);
  // Forget-gate bias offset keeps early memory open.
  for (int i = hidden_dim; i < 2 * hidden_dim; ++i) b.data[static_cast<size_t>(i)] += 1.0;
  params.emplace(prefix + ".w_input", std::move(wi));
  params.emplace(prefix + ".w_recur", std::move(wh));
  params.emplace(prefix + ".bias", std::move(b));
}

using TrainablePred = std::function<bool(const std::string&)>;

struct LstmVars {
  ad::Var w_input, w_recur, bias;
  int input_dim = 0, hidden_dim = 0;
};

inline LstmVars bind_lstm(ad::Tape& tape, const TensorMap& params,
                          const std::string& prefix,
                          const TrainablePred& trainable) {
  const Tensor& wi = params.at(prefix + ".w_input");
  const Tensor& wh = params.at(prefix + ".w_recur");
  const Tensor& b = params.at(prefix + ".bias");
  LstmVars v;
  v.hidden_dim = wh.shape.at(1);
  v.input_dim = wi.shape.at(1);
  v.w_input = tape.bind(prefix + ".w_input", wi, trainable(prefix + ".w_input"));
  v.w_recur = tape.bind(prefix + ".w_recur", wh, trainable(prefix + ".w_recur"));
  v.bias = tape.bind(prefix + ".bias", b, trainable(prefix + ".bias"));
  return v;
}

struct LstmState {
  ad::Var h, c;
};

inline LstmState lstm_step(ad::Tape& t, const LstmVars& p, ad::Var x,
                           const LstmState& prev) {
  int H = p.hidden_dim;
  ad::Var gates = t.add(t.add(t.matvec(p.w_input, 4 * H, p.input_dim, x),
                              t.matvec(p.w_recur, 4 * H, H, prev.h)),
                        p.bias);
  ad::Var ig = t.sigmoid(t.slice(gates, 0, H));
  ad::Var fg = t.sigmoid(t.slice(gates, H, H));
  ad::Var gg = t.tanh_op(t.slice(gates, 2 * H, H));
  ad::Var og = t.sigmoid(t.slice(gates, 3 * H, H));
  LstmState s;
  s.c = t.add(t.mul(fg, prev.c), t.mul(ig, gg));
  s.h = t.mul(og, t.tanh_op(s.c));
  return s;
}

inline LstmState lstm_zero_state(ad::Tape& t, int hidden_dim) {
  LstmState s;
  s.h = t.constant(ad::Vec(static_cast<size_t>(hidden_dim), 0.0));
  s.c = t.constant(ad::Vec(static_cast<size_t>(hidden_dim), 0.0));
  return s;
}

inline std::vector<ad::Var> lstm_run(ad::Tape& t, const LstmVars& p,
                                     const std::vector<ad::Var>& inputs) {
  std::vector<ad::Var> hs;
  hs.reserve(inputs.size());
  LstmState s = lstm_zero_state(t, p.hidden_dim);
  for (ad::Var x : inputs) {
    s = lstm_step(t, p, x, s);
    hs.push_back(s.h);
  }
  return hs;
}

// Per-position concatenation of a forward and a reversed pass.
inline std::vector<ad::Var> bilstm_run(ad::Tape& t, const LstmVars& fwd,
                                       const LstmVars& bwd,
                                       const std::vector<ad::Var>& inputs) {
  std::vector<ad::Var> hf = lstm_run(t, fwd, inputs);
  std::vector<ad::Var> rev(inputs.rbegin(), inputs.rend());
  std::vector<ad::Var> hb_rev = lstm_run(t, bwd, rev);
  std::vector<ad::Var> out;
  out.reserve(inputs.size());
  for (size_t i = 0; i < inputs.size(); ++i)
    out.push_back(t.concat({hf[i], hb_rev[inputs.size() - 1 - i]}));
  return out;
}

}  // namespace cig
