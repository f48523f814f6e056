#pragma once
// Reverse-mode tape over 1-D double vectors. A Tape is built per forward
// pass; leaves are either constants or named trainable tensors, and
// backward() accumulates gradients per tensor name. Small graphs only —
// everything here is desk scale.

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "cig/tensor.hpp"

namespace cig::ad {

using Vec = std::vector<double>;

struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

inline Vec softmax(const Vec& z) {
  double m = z[0];
  for (double v : z) m = std::max(m, v);
  Vec p(z.size());
  double sum = 0;
  for (size_t i = 0; i < z.size(); ++i) {
    p[i] = std::exp(z[i] - m);
    sum += p[i];
  }
  for (double& v : p) v /= sum;
  return p;
}

inline int argmax_lowest(const Vec& v) {
  int best = 0;
  for (int i = 1; i < static_cast<int>(v.size()); ++i)
    if (v[static_cast<size_t>(i)] > v[static_cast<size_t>(best)]) best = i;
  return best;
}

class Tape {
 public:
  Var constant(Vec v) { return push(std::move(v), {}); }

  // Trainable leaf. Binding the same name twice returns the first Var.
  Var param(const std::string& name, const Tensor& t) {
    auto it = param_vars_.find(name);
    if (it != param_vars_.end()) return it->second;
    Var v = push(t.data, {});
    param_vars_.emplace(name, v);
    param_shapes_.emplace(name, t.shape);
    return v;
  }

  // Leaf that may or may not collect gradients.
  Var bind(const std::string& name, const Tensor& t, bool trainable) {
    return trainable ? param(name, t) : constant(t.data);
  }

  const Vec& val(Var v) const { return nodes_[static_cast<size_t>(v.id)].val; }
  const Vec& grad(Var v) const { return nodes_[static_cast<size_t>(v.id)].grad; }

  Var add(Var a, Var b) {
    Vec out = val(a);
    const Vec& bv = val(b);
    check_same_size(out.size(), bv.size(), "add");
    for (size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
    return push(std::move(out), [a, b](Tape& t, int id) {
      const Vec& g = t.nodes_[static_cast<size_t>(id)].grad;
      t.axpy(a, g);
      t.axpy(b, g);
    });
  }

  Var sub(Var a, Var b) {
    Vec out = val(a);
    const Vec& bv = val(b);
    check_same_size(out.size(), bv.size(), "sub");
    for (size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
    return push(std::move(out), [a, b](Tape& t, int id) {
      const Vec& g = t.nodes_[static_cast<size_t>(id)].grad;
      t.axpy(a, g);
      Vec& gb = t.nodes_[static_cast<size_t>(b.id)].grad;
      for (size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    });
  }

  Var mul(Var a, Var b) {
    Vec out = val(a);
    const Vec& bv = val(b);
    check_same_size(out.size(), bv.size(), "mul");
    for (size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
    return push(std::move(out), [a, b](Tape& t, int id) {
      const Vec& g = t.nodes_[static_cast<size_t>(id)].grad;
      const Vec& av = t.val(a);
      const Vec& bv2 = t.val(b);
      Vec& ga = t.nodes_[static_cast<size_t>(a.id)].grad;
      Vec& gb = t.nodes_[static_cast<size_t>(b.id)].grad;
      for (size_t i = 0; i < g.size(); ++i) {
        ga[i] += g[i] * bv2[i];
        gb[i] += g[i] * av[i];
      }
    });
  }

  Var scale(Var a, double c) {
    Vec out = val(a);
    for (double& v : out) v *= c;
    return push(std::move(out), [a, c](Tape& t, int id) {
      const Vec& g = t.nodes_[static_cast<size_t>(id)].grad;
      Vec& ga = t.nodes_[static_cast<size_t>(a.id)].grad;
      for (size_t i = 0; i < g.size(); ++i) ga[i] += c * g[i];
    });
  }

  Var add_n(const std::vector<Var>& xs) {
    if (xs.empty()) throw Error("add_n over empty list");
    Vec out = val(xs[0]);
    for (size_t k = 1; k < xs.size(); ++k) {
      const Vec& xv = val(xs[k]);
      check_same_size(out.size(), xv.size(), "add_n");
      for (size_t i = 0; i < out.size(); ++i) out[i] += xv[i];
    }
    return push(std::move(out), [xs](Tape& t, int id) {
      const Vec& g = t.nodes_[static_cast<size_t>(id)].grad;
      for (Var x : xs) t.axpy(x, g);
    });
  }

  Var concat(const std::vector<Var>& xs) {
    Vec out;
    for (Var x : xs) {
      const Vec& xv = val(x);
      out.insert(out.end(), xv.begin(), xv.end());
    }
    return push(std::move(out), [xs](Tape& t, int id) {
      const Vec& g = t.nodes_[static_cast<size_t>(id)].grad;
      size_t off = 0;
      for (Var x : xs) {
        Vec& gx = t.nodes_[static_cast<size_t>(x.id)].grad;
        for (size_t i = 0; i < gx.size(); ++i) gx[i] += g[off + i];
        off += gx.size();
      }
    });
  }

  Var slice(Var a, int offset, int length) {
    const Vec& av = val(a);
    if (offset < 0 || length < 0 ||
        static_cast<size_t>(offset + length) > av.size())
      throw Error("slice out of range");
    Vec out(av.begin() + offset, av.begin() + offset + length);
    return push(std::move(out), [a, offset](Tape& t, int id) {
      const Vec& g = t.nodes_[static_cast<size_t>(id)].grad;
      Vec& ga = t.nodes_[static_cast<size_t>(a.id)].grad;
      for (size_t i = 0; i < g.size(); ++i) ga[static_cast<size_t>(offset) + i] += g[i];
    });
  }

  // w holds a row-major (rows x cols) matrix; x is a cols vector.
  Var matvec(Var w, int rows, int cols, Var x) {
    const Vec& wv = val(w);
    const Vec& xv = val(x);
    if (wv.size() != static_cast<size_t>(rows) * static_cast<size_t>(cols))
      throw Error("matvec: weight size does not match rows*cols");
    check_same_size(xv.size(), static_cast<size_t>(cols), "matvec input");
    Vec out(static_cast<size_t>(rows), 0.0);
    for (int r = 0; r < rows; ++r) {
      double acc = 0;
      const double* wr = wv.data() + static_cast<size_t>(r) * static_cast<size_t>(cols);
      for (int c = 0; c < cols; ++c) acc += wr[c] * xv[static_cast<size_t>(c)];
      out[static_cast<size_t>(r)] = acc;
    }
    return push(std::move(out), [w, x, rows, cols](Tape& t, int id) {
      const Vec& g = t.nodes_[static_cast<size_t>(id)].grad;
      const Vec& wv2 = t.val(w);
      const Vec& xv2 = t.val(x);
      Vec& gw = t.nodes_[static_cast<size_t>(w.id)].grad;
      Vec& gx = t.nodes_[static_cast<size_t>(x.id)].grad;
      for (int r = 0; r < rows; ++r) {
        double gr = g[static_cast<size_t>(r)];
        if (gr == 0.0) continue;
        size_t base = static_cast<size_t>(r) * static_cast<size_t>(cols);
        for (int c = 0; c < cols; ++c) {
          gw[base + static_cast<size_t>(c)] += gr * xv2[static_cast<size_t>(c)];
          gx[static_cast<size_t>(c)] += gr * wv2[base + static_cast<size_t>(c)];
        }
      }
    });
  }

  Var sigmoid(Var a) {
    Vec out = val(a);
    for (double& v : out) v = 1.0 / (1.0 + std::exp(-v));
    return unary_from_output(a, std::move(out), [](double y) { return y * (1.0 - y); });
  }

  Var tanh_op(Var a) {
    Vec out = val(a);
    for (double& v : out) v = std::tanh(v);
    return unary_from_output(a, std::move(out), [](double y) { return 1.0 - y * y; });
  }

  Var leaky_relu(Var a, double slope) {
    const Vec& av = val(a);
    Vec out(av.size());
    for (size_t i = 0; i < av.size(); ++i) out[i] = av[i] >= 0 ? av[i] : slope * av[i];
    return push(std::move(out), [a, slope](Tape& t, int id) {
      const Vec& g = t.nodes_[static_cast<size_t>(id)].grad;
      const Vec& av2 = t.val(a);
      Vec& ga = t.nodes_[static_cast<size_t>(a.id)].grad;
      for (size_t i = 0; i < g.size(); ++i)
        ga[i] += g[i] * (av2[i] >= 0 ? 1.0 : slope);
    });
  }

  // 1/sqrt(x + eps), elementwise.
  Var rsqrt_shift(Var a, double eps) {
    Vec out = val(a);
    for (double& v : out) v = 1.0 / std::sqrt(v + eps);
    return unary_from_output(a, std::move(out),
                             [](double y) { return -0.5 * y * y * y; });
  }

  // Fixed elementwise mask (dropout).
  Var mul_mask(Var a, Vec mask) {
    const Vec& av = val(a);
    check_same_size(av.size(), mask.size(), "mul_mask");
    Vec out(av.size());
    for (size_t i = 0; i < av.size(); ++i) out[i] = av[i] * mask[i];
    auto m = std::make_shared<Vec>(std::move(mask));
    return push(std::move(out), [a, m](Tape& t, int id) {
      const Vec& g = t.nodes_[static_cast<size_t>(id)].grad;
      Vec& ga = t.nodes_[static_cast<size_t>(a.id)].grad;
      for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (*m)[i];
    });
  }

  Var sum_all(Var a) {
    const Vec& av = val(a);
    double s = 0;
    for (double v : av) s += v;
    return push(Vec{s}, [a](Tape& t, int id) {
      double g = t.nodes_[static_cast<size_t>(id)].grad[0];
      Vec& ga = t.nodes_[static_cast<size_t>(a.id)].grad;
      for (double& v : ga) v += g;
    });
  }

  // Numerically stable -log softmax(logits)[target].
  Var softmax_cross_entropy(Var logits, int target) {
    const Vec& z = val(logits);
    if (target < 0 || static_cast<size_t>(target) >= z.size())
      throw Error("softmax_cross_entropy: target out of range");
    double m = z[0];
    for (double v : z) m = std::max(m, v);
    double sum = 0;
    for (double v : z) sum += std::exp(v - m);
    double loss = m + std::log(sum) - z[static_cast<size_t>(target)];
    return push(Vec{loss}, [logits, target](Tape& t, int id) {
      double g = t.nodes_[static_cast<size_t>(id)].grad[0];
      Vec p = softmax(t.val(logits));
      Vec& gz = t.nodes_[static_cast<size_t>(logits.id)].grad;
      for (size_t i = 0; i < p.size(); ++i)
        gz[i] += g * (p[i] - (static_cast<int>(i) == target ? 1.0 : 0.0));
    });
  }

  // Runs the reverse sweep from a scalar node and collects per-name grads.
  void backward(Var loss) {
    if (val(loss).size() != 1) throw Error("backward: loss must be scalar");
    nodes_[static_cast<size_t>(loss.id)].grad[0] = 1.0;
    for (int i = loss.id; i >= 0; --i) {
      auto& n = nodes_[static_cast<size_t>(i)];
      if (n.back) n.back(*this, i);
    }
    grads_.clear();
    for (const auto& [name, var] : param_vars_) {
      Tensor g(param_shapes_.at(name));
      g.data = nodes_[static_cast<size_t>(var.id)].grad;
      grads_.emplace(name, std::move(g));
    }
  }

  const TensorMap& grads() const { return grads_; }

  size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    Vec val;
    Vec grad;
    std::function<void(Tape&, int)> back;
  };

  Var push(Vec v, std::function<void(Tape&, int)> back) {
    Node n;
    n.grad.assign(v.size(), 0.0);
    n.val = std::move(v);
    n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  template <typename F>
  Var unary_from_output(Var a, Vec out, F dydx_of_y) {
    return push(std::move(out), [a, dydx_of_y](Tape& t, int id) {
      const Vec& g = t.nodes_[static_cast<size_t>(id)].grad;
      const Vec& y = t.nodes_[static_cast<size_t>(id)].val;
      Vec& ga = t.nodes_[static_cast<size_t>(a.id)].grad;
      for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * dydx_of_y(y[i]);
    });
  }

  void axpy(Var x, const Vec& g) {
    Vec& gx = nodes_[static_cast<size_t>(x.id)].grad;
    for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  }

  static void check_same_size(size_t a, size_t b, const char* op) {
    if (a != b) throw Error(std::string("dimension mismatch in ") + op);
  }

  std::vector<Node> nodes_;
  std::map<std::string, Var> param_vars_;
  std::map<std::string, std::vector<int>> param_shapes_;
  TensorMap grads_;
};

// Adam optimizer over a TensorMap; moments keyed by tensor name.
class AdamOptimizer {
 public:
  explicit AdamOptimizer(double lr, double beta1 = 0.9, double beta2 = 0.999,
                         double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  // Applies grads to the matching entries of params. Tensors without a
  // gradient are untouched.
  void step(TensorMap& params, const TensorMap& grads) {
    ++t_;
    double bc1 = 1.0 - std::pow(beta1_, t_);
    double bc2 = 1.0 - std::pow(beta2_, t_);
    for (const auto& [name, g] : grads) {
      auto it = params.find(name);
      if (it == params.end()) throw Error("optimizer: unknown tensor " + name);
      Tensor& p = it->second;
      if (p.data.size() != g.data.size())
        throw Error("optimizer: gradient shape mismatch for " + name);
      Vec& m = moment1_[name];
      Vec& v = moment2_[name];
      if (m.empty()) {
        m.assign(p.data.size(), 0.0);
        v.assign(p.data.size(), 0.0);
      }
      for (size_t i = 0; i < p.data.size(); ++i) {
        double gi = g.data[i];
        m[i] = beta1_ * m[i] + (1.0 - beta1_) * gi;
        v[i] = beta2_ * v[i] + (1.0 - beta2_) * gi * gi;
        double mhat = m[i] / bc1;
        double vhat = v[i] / bc2;
        p.data[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
      }
    }
  }

  double learning_rate() const { return lr_; }

 private:
  double lr_, beta1_, beta2_, eps_;
  long long t_ = 0;
  std::map<std::string, Vec> moment1_;
  std::map<std::string, Vec> moment2_;
};

}  // namespace cig::ad
