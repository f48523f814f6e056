#pragma once
// Adversarial domain adaptation: seen/unseen discriminator, inverted-label
// model loss, the alternating block schedule, and the predicate fine-tuning
// baseline.

#include <array>
#include <chrono>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "cig/relmodel.hpp"

namespace cig {

enum class DiscVariant { kConcatenated, kGOnly };

inline std::string to_string(DiscVariant v) {
  return v == DiscVariant::kConcatenated ? "concatenated" : "g_only";
}

inline DiscVariant parse_disc_variant(const std::string& s) {
  if (s == "concatenated") return DiscVariant::kConcatenated;
  if (s == "g_only") return DiscVariant::kGOnly;
  throw ValidationError("unknown discriminator input variant: " + s);
}

// One labeled pair extracted from a target image. d_i/d_j are edge-context
// vectors under the frozen backbone; only W_h/W_t move during adaptation, so
// these can be precomputed once per run.
struct AdaptPair {
  std::vector<double> d_i, d_j, f_ij;
  bool seen = false;
};

// Two hidden affine layers, each followed by batch normalization, a leaky
// rectifier (slope 0.2) and dropout (keep 0.5, training only), then a 2-way
// output layer. Output order: index 0 = seen, index 1 = unseen.
struct Discriminator {
  int input_dim = 0;
  int hidden_dim = 0;
  TensorMap params;

  static constexpr double kLeakySlope = 0.2;
  static constexpr double kDropoutKeep = 0.5;
  static constexpr double kBnEps = 1e-5;
  static constexpr double kBnMomentum = 0.1;

  // Running normalization statistics are state, not weights; the optimizer
  // never touches them.
  static bool is_trainable_name(const std::string& name) {
    return name.find("running") == std::string::npos;
  }

  static Discriminator init(int input_dim, int hidden_dim, uint64_t seed) {
    if (input_dim <= 0 || hidden_dim <= 0)
      throw ValidationError("discriminator dimensions must be positive");
    Discriminator d;
    d.input_dim = input_dim;
    d.hidden_dim = hidden_dim;
    SeedStream root(seed);
    auto rng = root.fork("disc_init");
    auto glorot = [&](const std::string& name, int rows, int cols) {
      Tensor t({rows, cols});
      double bound = std::sqrt(6.0 / (rows + cols));
      std::uniform_real_distribution<double> u(-bound, bound);
      for (double& v : t.data) v = u(rng);
      d.params.emplace(name, std::move(t));
    };
    auto fill = [&](const std::string& name, int n, double value) {
      Tensor t({n});
      std::fill(t.data.begin(), t.data.end(), value);
      d.params.emplace(name, std::move(t));
    };
    glorot("disc.W1", hidden_dim, input_dim);
    fill("disc.b1", hidden_dim, 0.0);
    fill("disc.bn1.gamma", hidden_dim, 1.0);
    fill("disc.bn1.beta", hidden_dim, 0.0);
    fill("disc.bn1.running_mean", hidden_dim, 0.0);
    fill("disc.bn1.running_var", hidden_dim, 1.0);
    glorot("disc.W2", hidden_dim, hidden_dim);
    fill("disc.b2", hidden_dim, 0.0);
    fill("disc.bn2.gamma", hidden_dim, 1.0);
    fill("disc.bn2.beta", hidden_dim, 0.0);
    fill("disc.bn2.running_mean", hidden_dim, 0.0);
    fill("disc.bn2.running_var", hidden_dim, 1.0);
    glorot("disc.W_out", 2, hidden_dim);
    fill("disc.b_out", 2, 0.0);
    return d;
  }

  // Batched tape forward. Training mode normalizes with batch statistics
  // (batch of at least 2) and applies dropout from `dropout_rng`; evaluation
  // mode uses the stored running statistics, making per-item outputs
  // independent of batch composition. `update_stats` folds the batch
  // statistics into the running ones and is a deliberate side effect of
  // training steps only.
  std::vector<ad::Var> forward_batch(ad::Tape& t,
                                     const std::vector<ad::Var>& inputs,
                                     bool train, std::mt19937_64* dropout_rng,
                                     bool update_stats, bool trainable) {
    if (inputs.empty()) throw ValidationError("empty discriminator batch");
    for (ad::Var x : inputs)
      if (static_cast<int>(t.val(x).size()) != input_dim)
        throw ValidationError("discriminator input dimension mismatch");
    if (train && inputs.size() < 2)
      throw ValidationError("batch normalization needs at least 2 items");
    if (train && dropout_rng == nullptr)
      throw ValidationError("training-mode forward requires a dropout rng");

    auto bound = [&](const std::string& name) {
      return t.bind(name, params.at(name), trainable && is_trainable_name(name));
    };
    std::vector<ad::Var> h = inputs;
    for (int layer = 1; layer <= 2; ++layer) {
      std::string p = "disc.bn" + std::to_string(layer);
      ad::Var w = bound(layer == 1 ? "disc.W1" : "disc.W2");
      ad::Var b = bound(layer == 1 ? "disc.b1" : "disc.b2");
      int cols = layer == 1 ? input_dim : hidden_dim;
      for (auto& x : h) x = t.add(t.matvec(w, hidden_dim, cols, x), b);
      h = batch_norm(t, h, bound(p + ".gamma"), bound(p + ".beta"),
                     params.at(p + ".running_mean"),
                     params.at(p + ".running_var"), train, update_stats);
      for (auto& x : h) x = t.leaky_relu(x, kLeakySlope);
      if (train) {
        std::bernoulli_distribution keep(kDropoutKeep);
        for (auto& x : h) {
          std::vector<double> mask(static_cast<size_t>(hidden_dim));
          for (double& m : mask)
            m = keep(*dropout_rng) ? 1.0 / kDropoutKeep : 0.0;
          x = t.mul_mask(x, std::move(mask));
        }
      }
    }
    ad::Var wo = bound("disc.W_out");
    ad::Var bo = bound("disc.b_out");
    std::vector<ad::Var> logits;
    logits.reserve(h.size());
    for (ad::Var x : h) logits.push_back(t.add(t.matvec(wo, 2, hidden_dim, x), bo));
    return logits;
  }

  // Evaluation-mode probabilities for a single input, plain arithmetic.
  std::array<double, 2> forward_eval(const std::vector<double>& input) const {
    if (static_cast<int>(input.size()) != input_dim)
      throw ValidationError("discriminator input dimension mismatch");
    std::vector<double> h = input;
    for (int layer = 1; layer <= 2; ++layer) {
      const auto& w = params.at(layer == 1 ? "disc.W1" : "disc.W2").data;
      const auto& b = params.at(layer == 1 ? "disc.b1" : "disc.b2").data;
      int cols = layer == 1 ? input_dim : hidden_dim;
      std::vector<double> z(static_cast<size_t>(hidden_dim), 0.0);
      for (int r = 0; r < hidden_dim; ++r) {
        double acc = b[static_cast<size_t>(r)];
        for (int c = 0; c < cols; ++c)
          acc += w[static_cast<size_t>(r * cols + c)] * h[static_cast<size_t>(c)];
        z[static_cast<size_t>(r)] = acc;
      }
      std::string p = "disc.bn" + std::to_string(layer);
      const auto& gamma = params.at(p + ".gamma").data;
      const auto& beta = params.at(p + ".beta").data;
      const auto& mean = params.at(p + ".running_mean").data;
      const auto& var = params.at(p + ".running_var").data;
      for (int k = 0; k < hidden_dim; ++k) {
        size_t i = static_cast<size_t>(k);
        double n = (z[i] - mean[i]) / std::sqrt(var[i] + kBnEps);
        double a = gamma[i] * n + beta[i];
        z[i] = a >= 0 ? a : kLeakySlope * a;
      }
      h = std::move(z);
    }
    const auto& wo = params.at("disc.W_out").data;
    const auto& bo = params.at("disc.b_out").data;
    std::vector<double> logits(2, 0.0);
    for (int r = 0; r < 2; ++r) {
      double acc = bo[static_cast<size_t>(r)];
      for (int c = 0; c < hidden_dim; ++c)
        acc += wo[static_cast<size_t>(r * hidden_dim + c)] * h[static_cast<size_t>(c)];
      logits[static_cast<size_t>(r)] = acc;
    }
    std::vector<double> p = ad::softmax(logits);
    return {p[0], p[1]};
  }

 private:
  std::vector<ad::Var> batch_norm(ad::Tape& t, const std::vector<ad::Var>& xs,
                                  ad::Var gamma, ad::Var beta,
                                  Tensor& running_mean, Tensor& running_var,
                                  bool train, bool update_stats) {
    std::vector<ad::Var> out;
    out.reserve(xs.size());
    if (train) {
      double inv_b = 1.0 / static_cast<double>(xs.size());
      ad::Var mean = t.scale(t.add_n(xs), inv_b);
      std::vector<ad::Var> centered, squares;
      for (ad::Var x : xs) {
        ad::Var c = t.sub(x, mean);
        centered.push_back(c);
        squares.push_back(t.mul(c, c));
      }
      ad::Var var = t.scale(t.add_n(squares), inv_b);
      ad::Var inv_std = t.rsqrt_shift(var, kBnEps);
      for (ad::Var c : centered)
        out.push_back(t.add(t.mul(t.mul(c, inv_std), gamma), beta));
      if (update_stats) {
        const auto& m = t.val(mean);
        const auto& v = t.val(var);
        double b = static_cast<double>(xs.size());
        double unbias = b / (b - 1.0);
        for (size_t i = 0; i < m.size(); ++i) {
          running_mean.data[i] =
              (1.0 - kBnMomentum) * running_mean.data[i] + kBnMomentum * m[i];
          running_var.data[i] = (1.0 - kBnMomentum) * running_var.data[i] +
                                kBnMomentum * v[i] * unbias;
        }
      }
    } else {
      std::vector<double> inv(running_var.data.size());
      for (size_t i = 0; i < inv.size(); ++i)
        inv[i] = 1.0 / std::sqrt(running_var.data[i] + kBnEps);
      ad::Var mean_c = t.constant(running_mean.data);
      ad::Var inv_c = t.constant(inv);
      for (ad::Var x : xs)
        out.push_back(
            t.add(t.mul(t.mul(t.sub(x, mean_c), inv_c), gamma), beta));
    }
    return out;
  }
};

// The head/tail projection (W_h d_i)∘(W_t d_j) and the full pair
// representation g built on the tape from a precomputed pair.
// `model_trainable` controls whether W_h/W_t collect gradients.
struct DiscInputVars {
  ad::Var head_tail;
  ad::Var g;
  ad::Var input;
};

inline DiscInputVars build_disc_input(ad::Tape& t, const RelationModel& model,
                                      const AdaptPair& pair, DiscVariant variant,
                                      bool model_trainable) {
  int F = model.config.feature_dim;
  int D = model.config.edge_context_dim();
  ad::Var wh = t.bind("W_h", model.params.at("W_h"), model_trainable);
  ad::Var wt = t.bind("W_t", model.params.at("W_t"), model_trainable);
  DiscInputVars r;
  r.head_tail = t.mul(t.matvec(wh, F, D, t.constant(pair.d_i)),
                      t.matvec(wt, F, D, t.constant(pair.d_j)));
  r.g = t.mul(r.head_tail, t.constant(pair.f_ij));
  r.input = variant == DiscVariant::kConcatenated
                ? t.concat({r.g, r.head_tail})
                : r.g;
  return r;
}

inline std::vector<double> build_disc_input_values(const RelationModel& model,
                                                   const AdaptPair& pair,
                                                   DiscVariant variant) {
  ad::Tape t;
  return t.val(build_disc_input(t, model, pair, variant, false).input);
}

inline int disc_input_dim(const ModelConfig& cfg, DiscVariant variant) {
  return variant == DiscVariant::kConcatenated ? 2 * cfg.feature_dim
                                               : cfg.feature_dim;
}

// Shared graph for both adversarial losses. `sum` is the per-equation summed
// loss; the optimizer steps on `mean`. Labels: 0 = seen, 1 = unseen.
struct AdaptLoss {
  ad::Var sum;
  ad::Var mean;
  int count = 0;
};

struct DomainLossOptions {
  bool model_trainable = false;
  bool disc_trainable = false;
  bool disc_train_mode = false;
  std::mt19937_64* dropout_rng = nullptr;
  bool update_stats = false;
};

inline AdaptLoss domain_loss_with_labels(ad::Tape& t, const RelationModel& model,
                                         Discriminator& disc,
                                         const std::vector<const AdaptPair*>& batch,
                                         const std::vector<int>& labels,
                                         DiscVariant variant,
                                         const DomainLossOptions& opt) {
  if (batch.empty()) throw ValidationError("empty adaptation batch");
  if (labels.size() != batch.size())
    throw ValidationError("domain loss labels do not match batch");
  std::vector<ad::Var> inputs;
  inputs.reserve(batch.size());
  for (const AdaptPair* p : batch)
    inputs.push_back(
        build_disc_input(t, model, *p, variant, opt.model_trainable).input);
  std::vector<ad::Var> logits =
      disc.forward_batch(t, inputs, opt.disc_train_mode, opt.dropout_rng,
                         opt.update_stats, opt.disc_trainable);
  std::vector<ad::Var> terms;
  terms.reserve(logits.size());
  for (size_t i = 0; i < logits.size(); ++i)
    terms.push_back(t.softmax_cross_entropy(logits[i], labels[i]));
  AdaptLoss out;
  out.sum = t.add_n(terms);
  out.mean = t.scale(out.sum, 1.0 / static_cast<double>(terms.size()));
  out.count = static_cast<int>(terms.size());
  return out;
}

// L_d: supervised seen/unseen classification over labeled pairs, summed.
inline AdaptLoss discriminator_loss(ad::Tape& t, const RelationModel& model,
                                    Discriminator& disc,
                                    const std::vector<const AdaptPair*>& batch,
                                    DiscVariant variant, bool train_mode,
                                    std::mt19937_64* dropout_rng,
                                    bool update_stats) {
  std::vector<int> labels;
  labels.reserve(batch.size());
  for (const AdaptPair* p : batch) labels.push_back(p->seen ? 0 : 1);
  DomainLossOptions opt;
  opt.model_trainable = false;
  opt.disc_trainable = true;
  opt.disc_train_mode = train_mode;
  opt.dropout_rng = dropout_rng;
  opt.update_stats = update_stats;
  return domain_loss_with_labels(t, model, disc, batch, labels, variant, opt);
}

// L_a: the discriminator loss with every label inverted to "seen", restricted
// to unseen pairs. The discriminator is frozen in evaluation mode so the only
// trainable tensors in the graph are W_h and W_t.
inline AdaptLoss adversarial_model_loss(ad::Tape& t, const RelationModel& model,
                                        Discriminator& disc,
                                        const std::vector<const AdaptPair*>& batch,
                                        DiscVariant variant) {
  for (const AdaptPair* p : batch)
    if (p->seen)
      throw ValidationError("adversarial model loss is restricted to unseen pairs");
  std::vector<int> labels(batch.size(), 0);
  DomainLossOptions opt;
  opt.model_trainable = true;
  return domain_loss_with_labels(t, model, disc, batch, labels, variant, opt);
}

// Extracts every ordered proposal pair whose predicted class pair is labeled
// by the partition. Pairs in neither set carry no domain label and are
// dropped. Context vectors come from the frozen backbone.
inline std::vector<AdaptPair> collect_adapt_pairs(
    const RelationModel& model, const std::vector<ImageRecord>& records,
    const DomainPartition& partition) {
  std::vector<AdaptPair> out;
  for (const auto& rec : records) {
    if (rec.proposals.size() < 2) continue;
    ad::Tape t;
    auto ctx = model.contextualize(t, rec, trainable_none());
    for (const auto& [key, feat] : rec.union_features) {
      int ci = ctx.labels[static_cast<size_t>(key.first)];
      int cj = ctx.labels[static_cast<size_t>(key.second)];
      bool seen = partition.is_seen(ci, cj);
      if (!seen && !partition.is_unseen(ci, cj)) continue;
      AdaptPair p;
      p.d_i = t.val(ctx.edge_context[static_cast<size_t>(key.first)]);
      p.d_j = t.val(ctx.edge_context[static_cast<size_t>(key.second)]);
      p.f_ij = feat;
      p.seen = seen;
      out.push_back(std::move(p));
    }
  }
  return out;
}

struct AdaptConfig {
  int n_model = 50;   // N_m
  int n_disc = 150;   // N_d
  int epochs = 12;
  double disc_lr = 1.2e-2;
  double model_lr = 1.2e-3;
  DiscVariant variant = DiscVariant::kConcatenated;
  int batch_pairs = 32;
  int probe_cap = 120;
  uint64_t seed = 1;
  // 0 selects the width rule: hidden units scale with the feature dimension
  // (full scale: F=4096 and width 4096).
  int disc_hidden = 0;

  int hidden_for(const ModelConfig& cfg) const {
    return disc_hidden > 0 ? disc_hidden : cfg.feature_dim;
  }

  void validate() const {
    if (n_model <= 0 || n_disc <= 0)
      throw ValidationError("step block sizes must be positive");
    if (n_model >= n_disc)
      throw ValidationError("the discriminator must be updated more often (N_m < N_d)");
    if (epochs < 0) throw ValidationError("epochs must be nonnegative");
    if (disc_lr <= 0 || model_lr <= 0)
      throw ValidationError("learning rates must be positive");
    if (batch_pairs < 2)
      throw ValidationError("batch_pairs must be at least 2 for batch norm");
  }
};

struct AdaptStepRecord {
  int step = 0;           // 1-based global step index
  std::string phase;      // "disc" or "model"
  double loss_sum = 0;    // summed L_d or L_a over the step batch
  double probe_accuracy = 0;
  double wall_ms = 0;
};

// Alternating optimization: one block of N_d discriminator steps, then one of
// N_m model steps, repeating. The discriminator block runs first so the
// inverted-label gradients act against a non-trivial opponent. One epoch is
// one full (N_d + N_m) cycle.
class AdversarialTrainer {
 public:
  AdversarialTrainer(RelationModel& model, Discriminator& disc,
                     std::vector<AdaptPair> train_pairs,
                     std::vector<AdaptPair> probe_pairs, AdaptConfig cfg)
      : model_(model),
        disc_(disc),
        pairs_(std::move(train_pairs)),
        probe_(std::move(probe_pairs)),
        cfg_(cfg),
        disc_opt_(cfg.disc_lr),
        model_opt_(cfg.model_lr) {
    cfg_.validate();
    for (size_t i = 0; i < pairs_.size(); ++i) {
      disc_pool_.push_back(i);
      if (!pairs_[i].seen) model_pool_.push_back(i);
    }
    if (model_pool_.empty())
      throw ValidationError("no unseen pairs: nothing to adapt");
    if (probe_.empty())
      throw ValidationError("adversarial training needs a probe set");
    SeedStream root(cfg_.seed);
    disc_rng_ = root.fork("disc_batches");
    model_rng_ = root.fork("model_batches");
    dropout_rng_ = root.fork("dropout");
    shuffle_vector(disc_pool_, disc_rng_);
    shuffle_vector(model_pool_, model_rng_);
  }

  void run() { run_steps(cfg_.epochs * (cfg_.n_disc + cfg_.n_model)); }

  void run_steps(int total_steps) {
    for (int s = 0; s < total_steps; ++s) {
      auto t0 = std::chrono::steady_clock::now();
      int pos = step_count_ % (cfg_.n_disc + cfg_.n_model);
      AdaptStepRecord rec;
      rec.step = step_count_ + 1;
      if (pos < cfg_.n_disc) {
        rec.phase = "disc";
        rec.loss_sum = disc_step();
      } else {
        rec.phase = "model";
        rec.loss_sum = model_step();
      }
      rec.probe_accuracy = probe_accuracy();
      auto t1 = std::chrono::steady_clock::now();
      rec.wall_ms =
          std::chrono::duration<double, std::milli>(t1 - t0).count();
      log_.push_back(std::move(rec));
      ++step_count_;
    }
  }

  // Fraction of probe pairs whose true domain label wins under the current
  // parameters (evaluation mode).
  double probe_accuracy() const {
    int hits = 0;
    for (const auto& p : probe_) {
      auto probs = disc_.forward_eval(
          build_disc_input_values(model_, p, cfg_.variant));
      int pred = probs[1] > probs[0] ? 1 : 0;
      if (pred == (p.seen ? 0 : 1)) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(probe_.size());
  }

  const std::vector<AdaptStepRecord>& log() const { return log_; }
  const std::set<std::string>& last_disc_grads() const { return last_disc_grads_; }
  const std::set<std::string>& last_model_grads() const { return last_model_grads_; }

 private:
  std::vector<const AdaptPair*> next_batch(std::vector<size_t>& pool,
                                           size_t& cursor,
                                           std::mt19937_64& rng) {
    std::vector<const AdaptPair*> batch;
    int want = std::min<int>(cfg_.batch_pairs, static_cast<int>(pool.size()));
    want = std::max(want, 2);
    while (static_cast<int>(batch.size()) < want) {
      if (cursor >= pool.size()) {
        shuffle_vector(pool, rng);
        cursor = 0;
      }
      batch.push_back(&pairs_[pool[cursor++]]);
    }
    return batch;
  }

  double disc_step() {
    auto batch = next_batch(disc_pool_, disc_cursor_, disc_rng_);
    ad::Tape t;
    AdaptLoss loss = discriminator_loss(t, model_, disc_, batch, cfg_.variant,
                                        true, &dropout_rng_, true);
    t.backward(loss.mean);
    last_disc_grads_.clear();
    for (const auto& [name, g] : t.grads()) last_disc_grads_.insert(name);
    disc_opt_.step(disc_.params, t.grads());
    return t.val(loss.sum)[0];
  }

  double model_step() {
    auto batch = next_batch(model_pool_, model_cursor_, model_rng_);
    ad::Tape t;
    AdaptLoss loss = adversarial_model_loss(t, model_, disc_, batch, cfg_.variant);
    t.backward(loss.mean);
    last_model_grads_.clear();
    for (const auto& [name, g] : t.grads()) last_model_grads_.insert(name);
    model_opt_.step(model_.params, t.grads());
    return t.val(loss.sum)[0];
  }

  RelationModel& model_;
  Discriminator& disc_;
  std::vector<AdaptPair> pairs_;
  std::vector<AdaptPair> probe_;
  AdaptConfig cfg_;
  ad::AdamOptimizer disc_opt_, model_opt_;
  std::vector<size_t> disc_pool_, model_pool_;
  size_t disc_cursor_ = 0, model_cursor_ = 0;
  std::mt19937_64 disc_rng_, model_rng_, dropout_rng_;
  int step_count_ = 0;
  std::vector<AdaptStepRecord> log_;
  std::set<std::string> last_disc_grads_, last_model_grads_;
};

// End-to-end wrapper: extracts pairs, truncates the probe set, runs the full
// epoch schedule in place.
inline std::vector<AdaptStepRecord> adversarial_train(
    RelationModel& model, Discriminator& disc,
    const std::vector<ImageRecord>& target_train,
    const std::vector<ImageRecord>& target_heldout,
    const DomainPartition& partition, const AdaptConfig& cfg) {
  auto train_pairs = collect_adapt_pairs(model, target_train, partition);
  auto probe = collect_adapt_pairs(model, target_heldout, partition);
  if (static_cast<int>(probe.size()) > cfg.probe_cap)
    probe.resize(static_cast<size_t>(cfg.probe_cap));
  AdversarialTrainer trainer(model, disc, std::move(train_pairs),
                             std::move(probe), cfg);
  trainer.run();
  return trainer.log();
}

using NameTriple = std::tuple<std::string, std::string, std::string>;

inline std::set<NameTriple> triple_name_set(const std::vector<Triple>& triples) {
  std::set<NameTriple> out;
  for (const auto& t : triples) out.insert({t.subject, t.predicate, t.object});
  return out;
}

struct FinetuneOptions {
  int epochs = 6;
  double lr = 1.2e-3;
  int batch_images = 8;
  uint64_t seed = 1;
};

// L_f: cross-entropy on gold pairs whose triple lies in R_CG; every other
// term has l = 0 and vanishes, so no background sampling happens here. Only
// W_r and bias_table are trainable.
inline std::vector<double> finetune_predicates(
    RelationModel& model, const std::vector<ImageRecord>& data,
    const std::set<NameTriple>& r_cg, const ObjectVocabulary& objects,
    const PredicateVocabulary& predicates, const FinetuneOptions& opt) {
  if (r_cg.empty()) throw ValidationError("empty target relation set R_CG");
  if (opt.epochs < 0) throw ValidationError("epochs must be nonnegative");
  if (opt.lr <= 0) throw ValidationError("learning rate must be positive");

  auto trainable = trainable_only({"W_r", "bias_table"});

  // Targets are fixed by the gold annotations; precompute them per image.
  std::vector<std::pair<size_t, std::vector<RelationModel::PairTarget>>> usable;
  for (size_t idx = 0; idx < data.size(); ++idx) {
    std::vector<RelationModel::PairTarget> targets;
    for (const auto& gold : data[idx].gold) {
      NameTriple key{objects.classes.at(static_cast<size_t>(gold.subject.cls)),
                     predicates.predicates.at(static_cast<size_t>(gold.predicate)),
                     objects.classes.at(static_cast<size_t>(gold.object.cls))};
      if (!r_cg.count(key)) continue;
      auto [si, oi] = model.match_gold_to_proposals(data[idx], gold);
      targets.push_back({si, oi, gold.predicate});
    }
    if (!targets.empty()) usable.push_back({idx, std::move(targets)});
  }
  if (usable.empty())
    throw ValidationError("no gold relation matches the target relation set");

  SeedStream root(opt.seed);
  ad::AdamOptimizer optimizer(opt.lr);
  std::vector<double> epoch_losses;
  for (int epoch = 0; epoch < opt.epochs; ++epoch) {
    auto rng = root.fork("finetune_epoch_" + std::to_string(epoch));
    std::vector<size_t> order(usable.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    shuffle_vector(order, rng);
    double loss_sum = 0;
    long target_count = 0;
    for (size_t at = 0; at < order.size();) {
      ad::Tape t;
      std::vector<ad::Var> terms;
      int batch_targets = 0;
      for (int b = 0; b < opt.batch_images && at < order.size(); ++b, ++at) {
        const auto& [idx, targets] = usable[order[at]];
        terms.push_back(model.image_loss(t, data[idx], targets, trainable));
        batch_targets += static_cast<int>(targets.size());
      }
      ad::Var sum = t.add_n(terms);
      ad::Var mean = t.scale(sum, 1.0 / batch_targets);
      t.backward(mean);
      optimizer.step(model.params, t.grads());
      loss_sum += t.val(sum)[0];
      target_count += batch_targets;
    }
    epoch_losses.push_back(loss_sum / static_cast<double>(target_count));
  }
  return epoch_losses;
}

// Centroid diagnostic for the seen and unseen clouds under the pre-projection
// representation (W_h d_i)∘(W_t d_j). Pairs are extracted with the `before`
// parameters; adaptation leaves everything upstream of W_h/W_t untouched, so
// the same pairs are valid under both checkpoints.
//
// The headline centroid distances are reported in units of the pooled
// within-cloud RMS spread. The multiplicative representation is free to grow
// or shrink as a whole during adaptation, which moves raw Euclidean
// distances without changing how separable the clouds are; normalizing by
// the spread keeps the value tied to separability. The raw Euclidean
// distances and the per-pair mean displacement stay in representation units.
struct ShiftReport {
  double centroid_distance_before = 0;
  double centroid_distance_after = 0;
  double raw_centroid_distance_before = 0;
  double raw_centroid_distance_after = 0;
  double mean_displacement = 0;
};

inline ShiftReport representation_shift_report(
    const RelationModel& before, const RelationModel& after,
    const std::vector<ImageRecord>& records, const DomainPartition& partition) {
  if (before.config != after.config)
    throw ValidationError("checkpoints disagree on architecture");
  auto pairs = collect_adapt_pairs(before, records, partition);
  bool any_seen = false, any_unseen = false;
  for (const auto& p : pairs) (p.seen ? any_seen : any_unseen) = true;
  if (!any_seen || !any_unseen)
    throw ValidationError("shift report needs both seen and unseen pairs");

  int F = before.config.feature_dim;
  auto head_tail = [&](const RelationModel& m, const AdaptPair& p) {
    ad::Tape t;
    return t.val(build_disc_input(t, m, p, DiscVariant::kGOnly, false).head_tail);
  };
  // Returns {normalized, raw} centroid distances for one checkpoint.
  auto centroid_distance = [&](const RelationModel& m) {
    std::vector<std::vector<double>> reps;
    reps.reserve(pairs.size());
    std::vector<double> cs(static_cast<size_t>(F), 0.0);
    std::vector<double> cu(static_cast<size_t>(F), 0.0);
    long ns = 0, nu = 0;
    for (const auto& p : pairs) {
      reps.push_back(head_tail(m, p));
      auto& acc = p.seen ? cs : cu;
      for (size_t k = 0; k < reps.back().size(); ++k) acc[k] += reps.back()[k];
      (p.seen ? ns : nu) += 1;
    }
    for (size_t k = 0; k < cs.size(); ++k) {
      cs[k] /= static_cast<double>(ns);
      cu[k] /= static_cast<double>(nu);
    }
    double d2 = 0;
    for (size_t k = 0; k < cs.size(); ++k) {
      double diff = cs[k] - cu[k];
      d2 += diff * diff;
    }
    double spread2 = 0;
    for (size_t i = 0; i < reps.size(); ++i) {
      const auto& c = pairs[i].seen ? cs : cu;
      for (size_t k = 0; k < reps[i].size(); ++k) {
        double diff = reps[i][k] - c[k];
        spread2 += diff * diff;
      }
    }
    spread2 /= static_cast<double>(reps.size());
    double raw = std::sqrt(d2);
    // Degenerate case: every pair sits exactly on its centroid.
    double norm = spread2 == 0.0 ? raw : std::sqrt(d2 / spread2);
    return std::make_pair(norm, raw);
  };

  ShiftReport rep;
  std::tie(rep.centroid_distance_before, rep.raw_centroid_distance_before) =
      centroid_distance(before);
  std::tie(rep.centroid_distance_after, rep.raw_centroid_distance_after) =
      centroid_distance(after);
  double disp = 0;
  for (const auto& p : pairs) {
    auto hb = head_tail(before, p);
    auto ha = head_tail(after, p);
    double d2 = 0;
    for (size_t k = 0; k < hb.size(); ++k) {
      double diff = ha[k] - hb[k];
      d2 += diff * diff;
    }
    disp += std::sqrt(d2);
  }
  rep.mean_displacement = disp / static_cast<double>(pairs.size());
  return rep;
}

}  // namespace cig
