#pragma once
// MotifNet-style relation head: object context biLSTM, optional label
// decoder, edge context biLSTM, multiplicative pair representation and
// per-pair predicate classification, plus supervised pretraining.

#include <algorithm>
#include <map>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cig/autodiff.hpp"
#include "cig/core.hpp"
#include "cig/data.hpp"
#include "cig/lstm.hpp"
#include "cig/rng.hpp"
#include "cig/tensor.hpp"

namespace cig {

struct ModelConfig {
  int feature_dim = 64;     // F, read from data at full scale
  int num_classes = 19;     // real classes, background excluded
  int num_predicates = 32;  // real predicates, background excluded
  int embed_dim = 100;      // label embedding size for W1 / W2
  int obj_hidden = 16;      // per-direction hidden size, object context
  int edge_hidden = 16;     // per-direction hidden size, edge context
  int decoder_hidden = 16;
  bool use_decoder = false;

  int object_context_dim() const { return 2 * obj_hidden; }
  int edge_context_dim() const { return 2 * edge_hidden; }

  void validate() const {
    if (feature_dim < 1 || num_classes < 1 || num_predicates < 1 ||
        embed_dim < 1 || obj_hidden < 1 || edge_hidden < 1 ||
        decoder_hidden < 1)
      throw ConfigError("model dimensions must be positive");
  }

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["feature_dim"] = feature_dim;
    j["num_classes"] = num_classes;
    j["num_predicates"] = num_predicates;
    j["embed_dim"] = embed_dim;
    j["obj_hidden"] = obj_hidden;
    j["edge_hidden"] = edge_hidden;
    j["decoder_hidden"] = decoder_hidden;
    j["use_decoder"] = use_decoder;
    return j;
  }

  static ModelConfig from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.feature_dim = j.at("feature_dim").get<int>();
    c.num_classes = j.at("num_classes").get<int>();
    c.num_predicates = j.at("num_predicates").get<int>();
    c.embed_dim = j.at("embed_dim").get<int>();
    c.obj_hidden = j.at("obj_hidden").get<int>();
    c.edge_hidden = j.at("edge_hidden").get<int>();
    c.decoder_hidden = j.at("decoder_hidden").get<int>();
    c.use_decoder = j.at("use_decoder").get<bool>();
    c.validate();
    return c;
  }

  bool operator==(const ModelConfig&) const = default;
};

inline TrainablePred trainable_all() {
  return [](const std::string&) { return true; };
}
inline TrainablePred trainable_none() {
  return [](const std::string&) { return false; };
}
inline TrainablePred trainable_only(std::set<std::string> names) {
  return [names = std::move(names)](const std::string& n) {
    return names.count(n) > 0;
  };
}

// Sequence ordering for the context LSTMs: descending best real-class
// probability, ties by leftmost box center, then original index.
inline std::vector<int> proposal_order(const std::vector<RegionProposal>& ps) {
  std::vector<int> order(ps.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    const auto& pa = ps[static_cast<size_t>(a)];
    const auto& pb = ps[static_cast<size_t>(b)];
    double ca = pa.label_probs[static_cast<size_t>(pa.predicted_class() + 1)];
    double cb = pb.label_probs[static_cast<size_t>(pb.predicted_class() + 1)];
    if (ca != cb) return ca > cb;
    if (pa.box.x != pb.box.x) return pa.box.x < pb.box.x;
    return a < b;
  });
  return order;
}

// Per-image contextualization result; every list is indexed by ORIGINAL
// proposal index (the sequence order is internal).
struct Contextualized {
  std::vector<ad::Var> object_context;  // c_i
  std::vector<int> labels;              // predicted class per proposal
  std::vector<ad::Var> edge_context;    // d_i
  std::vector<ad::Var> decoder_hidden;  // h_i, only when use_decoder
};

class RelationModel {
 public:
  ModelConfig config;
  TensorMap params;

  static RelationModel init(const ModelConfig& cfg, uint64_t seed) {
    cfg.validate();
    RelationModel m;
    m.config = cfg;
    SeedStream root(seed);
    auto rng = root.fork("model_init");
    int F = cfg.feature_dim, K = cfg.num_classes, P = cfg.num_predicates;
    int E = cfg.embed_dim;
    m.params.emplace("W1", glorot({E, K + 1}, rng));
    m.params.emplace("W2", glorot({E, K}, rng));
    init_lstm_params(m.params, "obj_ctx.fwd", F + E, cfg.obj_hidden, rng);
    init_lstm_params(m.params, "obj_ctx.bwd", F + E, cfg.obj_hidden, rng);
    init_lstm_params(m.params, "decoder", cfg.object_context_dim() + K,
                     cfg.decoder_hidden, rng);
    m.params.emplace("decoder.W_o", glorot({K, cfg.decoder_hidden}, rng));
    init_lstm_params(m.params, "edge_ctx.fwd", cfg.object_context_dim() + E,
                     cfg.edge_hidden, rng);
    init_lstm_params(m.params, "edge_ctx.bwd", cfg.object_context_dim() + E,
                     cfg.edge_hidden, rng);
    m.params.emplace("W_h", glorot({F, cfg.edge_context_dim()}, rng));
    m.params.emplace("W_t", glorot({F, cfg.edge_context_dim()}, rng));
    m.params.emplace("W_r", glorot({P + 1, F}, rng));
    // Sparse-by-convention pair bias: zero means "pair absent".
    m.params.emplace("bias_table", Tensor({K, K, P + 1}));
    return m;
  }

  // Eqs. 1-4 over one image.
  Contextualized contextualize(ad::Tape& t, const ImageRecord& image,
                               const TrainablePred& trainable) const {
    if (image.proposals.empty())
      throw ValidationError("contextualize requires at least one proposal");
    int F = config.feature_dim, K = config.num_classes, E = config.embed_dim;
    for (const auto& p : image.proposals) {
      if (static_cast<int>(p.feature.size()) != F)
        throw ValidationError("proposal feature dimension " +
                              std::to_string(p.feature.size()) +
                              " does not match model feature_dim " +
                              std::to_string(F));
      if (static_cast<int>(p.label_probs.size()) != K + 1)
        throw ValidationError("label_probs dimension does not match model");
    }

    std::vector<int> order = proposal_order(image.proposals);
    int n = static_cast<int>(order.size());

    ad::Var w1 = t.bind("W1", params.at("W1"), trainable("W1"));
    std::vector<ad::Var> inputs;  // [f_i; W1 l_i] in sequence order
    for (int pos = 0; pos < n; ++pos) {
      const auto& p = image.proposals[static_cast<size_t>(order[static_cast<size_t>(pos)])];
      ad::Var f = t.constant(p.feature);
      ad::Var l = t.constant(p.label_probs);
      inputs.push_back(t.concat({f, t.matvec(w1, E, K + 1, l)}));
    }

    LstmVars obj_f = bind_lstm(t, params, "obj_ctx.fwd", trainable);
    LstmVars obj_b = bind_lstm(t, params, "obj_ctx.bwd", trainable);
    std::vector<ad::Var> c_seq = bilstm_run(t, obj_f, obj_b, inputs);

    Contextualized out;
    out.object_context.resize(static_cast<size_t>(n));
    out.labels.assign(static_cast<size_t>(n), -1);
    out.edge_context.resize(static_cast<size_t>(n));

    std::vector<int> labels_seq(static_cast<size_t>(n));
    std::vector<ad::Var> dec_seq;
    if (config.use_decoder) {
      // Sequential decode: h_i = LSTM([c_i; one-hot of previous label]),
      // label_i = argmax(W_o h_i). The argmax blocks gradients; labels are
      // data from here on.
      LstmVars dec = bind_lstm(t, params, "decoder", trainable);
      ad::Var wo = t.bind("decoder.W_o", params.at("decoder.W_o"),
                          trainable("decoder.W_o"));
      LstmState state = lstm_zero_state(t, config.decoder_hidden);
      int prev = -1;  // first step uses the zero label embedding
      for (int pos = 0; pos < n; ++pos) {
        ad::Vec prev_onehot(static_cast<size_t>(K), 0.0);
        if (prev >= 0) prev_onehot[static_cast<size_t>(prev)] = 1.0;
        ad::Var x = t.concat({c_seq[static_cast<size_t>(pos)], t.constant(prev_onehot)});
        state = lstm_step(t, dec, x, state);
        ad::Var logits = t.matvec(wo, K, config.decoder_hidden, state.h);
        prev = ad::argmax_lowest(t.val(logits));
        labels_seq[static_cast<size_t>(pos)] = prev;
        dec_seq.push_back(state.h);
      }
    } else {
      for (int pos = 0; pos < n; ++pos)
        labels_seq[static_cast<size_t>(pos)] =
            image.proposals[static_cast<size_t>(order[static_cast<size_t>(pos)])]
                .predicted_class();
    }

    ad::Var w2 = t.bind("W2", params.at("W2"), trainable("W2"));
    std::vector<ad::Var> edge_in;  // [c_i; W2 one-hot(label_i)]
    for (int pos = 0; pos < n; ++pos) {
      ad::Vec onehot(static_cast<size_t>(K), 0.0);
      onehot[static_cast<size_t>(labels_seq[static_cast<size_t>(pos)])] = 1.0;
      edge_in.push_back(t.concat(
          {c_seq[static_cast<size_t>(pos)], t.matvec(w2, E, K, t.constant(onehot))}));
    }
    LstmVars edge_f = bind_lstm(t, params, "edge_ctx.fwd", trainable);
    LstmVars edge_b = bind_lstm(t, params, "edge_ctx.bwd", trainable);
    std::vector<ad::Var> d_seq = bilstm_run(t, edge_f, edge_b, edge_in);

    if (config.use_decoder) out.decoder_hidden.resize(static_cast<size_t>(n));
    for (int pos = 0; pos < n; ++pos) {
      int orig = order[static_cast<size_t>(pos)];
      out.object_context[static_cast<size_t>(orig)] = c_seq[static_cast<size_t>(pos)];
      out.labels[static_cast<size_t>(orig)] = labels_seq[static_cast<size_t>(pos)];
      out.edge_context[static_cast<size_t>(orig)] = d_seq[static_cast<size_t>(pos)];
      if (config.use_decoder)
        out.decoder_hidden[static_cast<size_t>(orig)] = dec_seq[static_cast<size_t>(pos)];
    }
    return out;
  }

  // Pair representation g_ij from edge contexts and the union feature.
  ad::Var pair_representation(ad::Tape& t, ad::Var d_i, ad::Var d_j,
                              const std::vector<double>& f_ij,
                              const TrainablePred& trainable) const {
    int F = config.feature_dim, D = config.edge_context_dim();
    if (static_cast<int>(f_ij.size()) != F)
      throw ValidationError("union feature dimension does not match model");
    ad::Var wh = t.bind("W_h", params.at("W_h"), trainable("W_h"));
    ad::Var wt = t.bind("W_t", params.at("W_t"), trainable("W_t"));
    ad::Var head = t.matvec(wh, F, D, d_i);
    ad::Var tail = t.matvec(wt, F, D, d_j);
    return t.mul(t.mul(head, tail), t.constant(f_ij));
  }

  // Predicate logits W_r g + per-ordered-class-pair bias.
  ad::Var predicate_logits(ad::Tape& t, ad::Var g, int subject_cls,
                           int object_cls, const TrainablePred& trainable) const {
    int F = config.feature_dim, K = config.num_classes, P = config.num_predicates;
    if (subject_cls < 0 || subject_cls >= K || object_cls < 0 || object_cls >= K)
      throw ValidationError("class index out of range in predicate_logits");
    ad::Var wr = t.bind("W_r", params.at("W_r"), trainable("W_r"));
    ad::Var proj = t.matvec(wr, P + 1, F, g);
    int offset = (subject_cls * K + object_cls) * (P + 1);
    if (trainable("bias_table")) {
      ad::Var table = t.bind("bias_table", params.at("bias_table"), true);
      return t.add(proj, t.slice(table, offset, P + 1));
    }
    const auto& table = params.at("bias_table").data;
    ad::Vec bias(table.begin() + offset, table.begin() + offset + P + 1);
    return t.add(proj, t.constant(bias));
  }

  // Full per-pair distribution on a throwaway tape (evaluation use).
  std::vector<double> predicate_distribution(const Contextualized& ctx,
                                             ad::Tape& t,
                                             const ImageRecord& image, int i,
                                             int j) const {
    auto it = image.union_features.find({i, j});
    if (it == image.union_features.end())
      throw ValidationError("missing union feature for pair (" +
                            std::to_string(i) + "," + std::to_string(j) +
                            ") in image " + image.image_id);
    ad::Var g = pair_representation(t, ctx.edge_context[static_cast<size_t>(i)],
                                    ctx.edge_context[static_cast<size_t>(j)],
                                    it->second, trainable_none());
    ad::Var logits =
        predicate_logits(t, g, ctx.labels[static_cast<size_t>(i)],
                         ctx.labels[static_cast<size_t>(j)], trainable_none());
    return ad::softmax(t.val(logits));
  }

  struct PairScore {
    int i = 0, j = 0;
    int subject_cls = 0, object_cls = 0;
    std::vector<double> probs;       // background + predicates
    double best_nonbg_score = 0;     // ranking key for pair retrieval
    int best_nonbg_predicate = 0;
  };

  struct ForwardResult {
    std::vector<ScoredRelation> relations;  // argmax non-background pairs
    std::vector<PairScore> pairs;           // every ordered pair
  };

  // Deterministic evaluation pass over all ordered proposal pairs.
  ForwardResult forward(const ImageRecord& image) const {
    ForwardResult out;
    int n = static_cast<int>(image.proposals.size());
    if (n < 2) return out;
    ad::Tape t;
    Contextualized ctx = contextualize(t, image, trainable_none());
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        if (i == j) continue;
        PairScore ps;
        ps.i = i;
        ps.j = j;
        ps.subject_cls = ctx.labels[static_cast<size_t>(i)];
        ps.object_cls = ctx.labels[static_cast<size_t>(j)];
        ps.probs = predicate_distribution(ctx, t, image, i, j);
        ps.best_nonbg_predicate = 1;
        for (int p = 1; p < static_cast<int>(ps.probs.size()); ++p)
          if (ps.probs[static_cast<size_t>(p)] >
              ps.probs[static_cast<size_t>(ps.best_nonbg_predicate)])
            ps.best_nonbg_predicate = p;
        ps.best_nonbg_score = ps.probs[static_cast<size_t>(ps.best_nonbg_predicate)];

        int arg = ad::argmax_lowest(ps.probs);
        if (arg != PredicateVocabulary::kBackground) {
          ScoredRelation r;
          r.subject = {ps.subject_cls, image.proposals[static_cast<size_t>(i)].box};
          r.object = {ps.object_cls, image.proposals[static_cast<size_t>(j)].box};
          r.predicate = arg;
          r.score = ps.probs[static_cast<size_t>(arg)];
          out.relations.push_back(std::move(r));
        }
        out.pairs.push_back(std::move(ps));
      }
    std::stable_sort(out.relations.begin(), out.relations.end(), relation_order);
    std::stable_sort(out.pairs.begin(), out.pairs.end(),
                     [](const PairScore& a, const PairScore& b) {
                       if (a.best_nonbg_score != b.best_nonbg_score)
                         return a.best_nonbg_score > b.best_nonbg_score;
                       if (a.i != b.i) return a.i < b.i;
                       return a.j < b.j;
                     });
    return out;
  }

  // Gold pairs plus sampled background negatives for one image.
  struct PairTarget {
    int i = 0, j = 0;
    int predicate = 0;  // background for negatives
  };

  std::vector<PairTarget> sample_pair_targets(const ImageRecord& image,
                                              int bg_per_gold,
                                              std::mt19937_64& rng) const {
    int n = static_cast<int>(image.proposals.size());
    std::map<std::pair<int, int>, int> gold_pairs;
    for (const auto& g : image.gold) {
      auto idx = match_gold_to_proposals(image, g);
      gold_pairs[idx] = g.predicate;
    }
    std::vector<PairTarget> targets;
    std::vector<std::pair<int, int>> negatives;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        if (i == j) continue;
        auto it = gold_pairs.find({i, j});
        if (it != gold_pairs.end())
          targets.push_back({i, j, it->second});
        else
          negatives.push_back({i, j});
      }
    int want = static_cast<int>(gold_pairs.size()) * bg_per_gold;
    shuffle_vector(negatives, rng);
    for (int k = 0; k < want && k < static_cast<int>(negatives.size()); ++k)
      targets.push_back({negatives[static_cast<size_t>(k)].first,
                         negatives[static_cast<size_t>(k)].second,
                         PredicateVocabulary::kBackground});
    return targets;
  }

  // Summed cross-entropy of the sampled targets of one image.
  ad::Var image_loss(ad::Tape& t, const ImageRecord& image,
                     const std::vector<PairTarget>& targets,
                     const TrainablePred& trainable) const {
    Contextualized ctx = contextualize(t, image, trainable);
    std::vector<ad::Var> terms;
    for (const auto& tgt : targets) {
      auto it = image.union_features.find({tgt.i, tgt.j});
      if (it == image.union_features.end())
        throw ValidationError("missing union feature for sampled pair in image " +
                              image.image_id);
      ad::Var g = pair_representation(
          t, ctx.edge_context[static_cast<size_t>(tgt.i)],
          ctx.edge_context[static_cast<size_t>(tgt.j)], it->second, trainable);
      ad::Var logits =
          predicate_logits(t, g, ctx.labels[static_cast<size_t>(tgt.i)],
                           ctx.labels[static_cast<size_t>(tgt.j)], trainable);
      terms.push_back(t.softmax_cross_entropy(logits, tgt.predicate));
    }
    if (terms.empty()) throw ValidationError("image has no pair targets");
    return t.add_n(terms);
  }

  struct PretrainOptions {
    int epochs = 12;
    double lr = 1e-3;
    int batch_images = 8;
    int bg_per_gold = 3;
    uint64_t seed = 1;
  };

  // Supervised pretraining on gold predicate labels. Returns the mean
  // per-target loss of each epoch.
  std::vector<double> pretrain(const std::vector<ImageRecord>& train,
                               const PretrainOptions& opt) {
    bool any_gold = false;
    for (const auto& r : train) any_gold = any_gold || !r.gold.empty();
    if (!any_gold)
      throw ValidationError("pretraining requires gold relations");
    SeedStream root(opt.seed);
    ad::AdamOptimizer adam(opt.lr);
    std::vector<double> epoch_losses;
    for (int epoch = 0; epoch < opt.epochs; ++epoch) {
      auto rng = root.fork("pretrain_epoch_" + std::to_string(epoch));
      std::vector<int> order(train.size());
      std::iota(order.begin(), order.end(), 0);
      shuffle_vector(order, rng);
      double loss_sum = 0;
      long target_count = 0;
      for (size_t start = 0; start < order.size();
           start += static_cast<size_t>(opt.batch_images)) {
        ad::Tape t;
        std::vector<ad::Var> terms;
        int batch_targets = 0;
        for (size_t b = start;
             b < order.size() && b < start + static_cast<size_t>(opt.batch_images);
             ++b) {
          const ImageRecord& img = train[static_cast<size_t>(order[b])];
          if (img.gold.empty() || img.proposals.size() < 2) continue;
          auto targets = sample_pair_targets(img, opt.bg_per_gold, rng);
          terms.push_back(image_loss(t, img, targets, trainable_all()));
          batch_targets += static_cast<int>(targets.size());
        }
        if (terms.empty()) continue;
        ad::Var mean = t.scale(t.add_n(terms), 1.0 / batch_targets);
        t.backward(mean);
        adam.step(params, t.grads());
        loss_sum += t.val(mean)[0] * batch_targets;
        target_count += batch_targets;
      }
      epoch_losses.push_back(target_count ? loss_sum / static_cast<double>(target_count)
                                          : 0.0);
    }
    return epoch_losses;
  }

  // Mean per-target loss under frozen parameters with deterministic
  // negative sampling (held-out monitoring).
  double dataset_mean_loss(const std::vector<ImageRecord>& records,
                           int bg_per_gold, uint64_t seed) const {
    SeedStream root(seed);
    double loss_sum = 0;
    long count = 0;
    for (size_t idx = 0; idx < records.size(); ++idx) {
      const ImageRecord& img = records[idx];
      if (img.gold.empty() || img.proposals.size() < 2) continue;
      auto rng = root.fork("eval_image_" + std::to_string(idx));
      auto targets = sample_pair_targets(img, bg_per_gold, rng);
      ad::Tape t;
      ad::Var loss = image_loss(t, img, targets, trainable_none());
      loss_sum += t.val(loss)[0];
      count += static_cast<long>(targets.size());
    }
    if (count == 0) throw ValidationError("no pair targets in dataset");
    return loss_sum / static_cast<double>(count);
  }

  // Gold relations carry boxes; match each side to the first proposal with
  // an identical box (the subject's proposal is excluded for the object).
  std::pair<int, int> match_gold_to_proposals(const ImageRecord& image,
                                              const ScoredRelation& g) const {
    int n = static_cast<int>(image.proposals.size());
    int si = -1, oi = -1;
    for (int k = 0; k < n && si < 0; ++k)
      if (image.proposals[static_cast<size_t>(k)].box == g.subject.box) si = k;
    for (int k = 0; k < n && oi < 0; ++k)
      if (k != si && image.proposals[static_cast<size_t>(k)].box == g.object.box)
        oi = k;
    if (si < 0 || oi < 0)
      throw ValidationError("gold relation does not match proposals in image " +
                            image.image_id);
    return {si, oi};
  }

 private:
  static Tensor glorot(std::vector<int> shape, std::mt19937_64& rng) {
    Tensor t(std::move(shape));
    double fan = 0;
    for (int d : t.shape) fan += d;
    double k = std::sqrt(6.0 / fan);
    std::uniform_real_distribution<double> d(-k, k);
    for (double& v : t.data) v = d(rng);
    return t;
  }
};

}  // namespace cig
