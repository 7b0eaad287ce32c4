#pragma once

#include <chrono>
#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "acctdst/model.hpp"

namespace acctdst {

/// -(1/T) sum_n log softmax(logits[n])[target[n]], in double.
template <class T>
double lm_loss(const Matrix<T>& token_logits, std::span<const int> target) {
  if (target.empty()) throw Error("invalid_argument", "lm_loss: empty target");
  if (token_logits.rows != target.size())
    throw Error("shape_error", "lm_loss: one logit row per target token expected");
  double total = 0;
  for (std::size_t n = 0; n < target.size(); ++n) {
    const T* r = token_logits.row(n);
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < token_logits.cols; ++j) mx = std::max(mx, double(r[j]));
    double z = 0;
    for (std::size_t j = 0; j < token_logits.cols; ++j) z += std::exp(double(r[j]) - mx);
    total += mx + std::log(z) - double(r[static_cast<std::size_t>(target[n])]);
  }
  return total / static_cast<double>(target.size());
}

/// Binary cross-entropy averaged over slots, from probabilities.
inline double bce_loss(std::span<const double> p, std::span<const std::uint8_t> y) {
  if (p.size() != y.size() || p.empty()) throw Error("shape_error", "bce_loss: size mismatch");
  double total = 0;
  for (std::size_t s = 0; s < p.size(); ++s)
    total -= y[s] ? std::log(p[s]) : std::log1p(-p[s]);
  return total / static_cast<double>(p.size());
}

/// Same loss from logits: softplus(z) - y z.
inline double bce_loss_from_logits(std::span<const double> z, std::span<const std::uint8_t> y) {
  if (z.size() != y.size() || z.empty()) throw Error("shape_error", "bce_loss: size mismatch");
  double total = 0;
  for (std::size_t s = 0; s < z.size(); ++s) total += kernels::softplus(z[s]) - z[s] * y[s];
  return total / static_cast<double>(z.size());
}

/// One training example: a turn's context, its serialized gold state, and slot labels.
struct Example {
  std::string dialogue_id;
  std::size_t turn = 0;
  std::vector<TokenId> context;
  std::vector<TokenId> target;
  SlotLabels labels;
};

inline std::vector<Example> build_examples(const CorpusSplit& split, const Vocabulary& vocab,
                                           std::size_t max_context_len) {
  std::vector<Example> out;
  for (const auto& d : split.dialogues) {
    std::vector<Turn> prefix;
    for (std::size_t t = 0; t < d.turns.size(); ++t) {
      prefix.push_back(d.turns[t]);
      Example ex;
      ex.dialogue_id = d.id;
      ex.turn = t;
      ex.context = encode_context(prefix, split.ontology, vocab, max_context_len).token_ids;
      ex.target = encode_state(d.turns[t].gold_state, vocab);
      ex.labels = slot_labels(d.turns[t].gold_state, split.ontology);
      out.push_back(std::move(ex));
    }
  }
  return out;
}

enum class SelectionLoss { kAccount, kLm };

struct TrainingConfig {
  double lambda = 0.25;
  double learning_rate = 5e-5;
  std::size_t epochs = 4;
  std::size_t batch_size = 8;
  std::size_t grad_accumulation_steps = 1;
  std::uint64_t seed = 1;
  std::string checkpoint_dir;  // empty: keep the result in memory only
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double grad_clip = 0.0;  // global-norm clip; 0 disables
  std::size_t warmup_steps = 0;
  SelectionLoss selection = SelectionLoss::kAccount;
  std::size_t max_context_len = 192;
  std::size_t log_every = 0;  // batches between progress lines; 0 silences

  std::vector<std::string> problems() const {
    std::vector<std::string> bad;
    if (!(lambda >= 0.0 && lambda <= 1.0)) bad.push_back("training.lambda must lie in [0, 1]");
    if (!(learning_rate >= 0.0)) bad.push_back("training.learning_rate must be >= 0");
    if (epochs < 1) bad.push_back("training.epochs must be >= 1");
    if (batch_size < 1) bad.push_back("training.batch_size must be >= 1");
    if (grad_accumulation_steps < 1) bad.push_back("training.grad_accumulation_steps must be >= 1");
    if (weight_decay < 0.0) bad.push_back("training.weight_decay must be >= 0");
    if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1))
      bad.push_back("training.beta1/beta2 must lie in [0, 1)");
    if (grad_clip < 0.0) bad.push_back("training.grad_clip must be >= 0");
    return bad;
  }

  void validate() const {
    const auto bad = problems();
    if (bad.empty()) return;
    std::string msg;
    for (const auto& b : bad) msg += b + "; ";
    throw Error("invalid_config", msg);
  }

  json to_json() const {
    return {{"lambda", lambda},
            {"learning_rate", learning_rate},
            {"epochs", epochs},
            {"batch_size", batch_size},
            {"grad_accumulation_steps", grad_accumulation_steps},
            {"seed", seed},
            {"checkpoint_dir", checkpoint_dir},
            {"weight_decay", weight_decay},
            {"beta1", beta1},
            {"beta2", beta2},
            {"adam_eps", adam_eps},
            {"grad_clip", grad_clip},
            {"warmup_steps", warmup_steps},
            {"selection", selection == SelectionLoss::kAccount ? "account" : "lm"},
            {"max_context_len", max_context_len},
            {"log_every", log_every}};
  }

  static TrainingConfig from_json(const json& j) {
    TrainingConfig c;
    c.lambda = j.value("lambda", c.lambda);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.grad_accumulation_steps = j.value("grad_accumulation_steps", c.grad_accumulation_steps);
    c.seed = j.value("seed", c.seed);
    c.checkpoint_dir = j.value("checkpoint_dir", c.checkpoint_dir);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.beta1 = j.value("beta1", c.beta1);
    c.beta2 = j.value("beta2", c.beta2);
    c.adam_eps = j.value("adam_eps", c.adam_eps);
    c.grad_clip = j.value("grad_clip", c.grad_clip);
    c.warmup_steps = j.value("warmup_steps", c.warmup_steps);
    const auto sel = j.value("selection", std::string("account"));
    if (sel != "account" && sel != "lm")
      throw Error("invalid_config", "training.selection must be \"account\" or \"lm\"");
    c.selection = sel == "lm" ? SelectionLoss::kLm : SelectionLoss::kAccount;
    c.max_context_len = j.value("max_context_len", c.max_context_len);
    c.log_every = j.value("log_every", c.log_every);
    return c;
  }
};

struct LossValues {
  double lm = 0, bce = 0, account = 0;
  json to_json() const { return {{"lm", lm}, {"bce", bce}, {"account", account}}; }
};

struct EpochLosses {
  std::size_t epoch = 0;
  LossValues train;
  LossValues validation;
  double seconds = 0;
};

struct LossReport {
  std::vector<EpochLosses> epochs;
  std::size_t best_epoch = 0;  // 1-based

  const EpochLosses& best() const { return epochs.at(best_epoch - 1); }

  json to_json() const {
    json e = json::array();
    for (const auto& x : epochs)
      e.push_back({{"epoch", x.epoch},
                   {"train", x.train.to_json()},
                   {"validation", x.validation.to_json()},
                   {"seconds", x.seconds}});
    return {{"epochs", e}, {"best_epoch", best_epoch}};
  }
};

/// Adam with decoupled weight decay, applied only to params with `decay` set.
template <class T>
class AdamW {
 public:
  AdamW(const ModelParameters<T>& params, const TrainingConfig& cfg) : cfg_(cfg) {
    for (const auto& p : params.all()) {
      m_.emplace_back(p.value.size(), T(0));
      v_.emplace_back(p.value.size(), T(0));
    }
  }

  std::size_t steps() const { return t_; }

  /// One update from the accumulated grads, scaled by `grad_scale`.
  /// `skip_decay` names params exempt from weight decay for this run.
  void step(ModelParameters<T>& params, double lr, T grad_scale,
            const std::function<bool(const Param<T>&)>& skip_decay = {}) {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, double(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, double(t_));
    const T b1 = T(cfg_.beta1), b2 = T(cfg_.beta2);
    for (std::size_t i = 0; i < params.all().size(); ++i) {
      auto& p = params.at(i);
      const bool decay = p.decay && cfg_.weight_decay > 0 && !(skip_decay && skip_decay(p));
      auto& m = m_[i];
      auto& v = v_[i];
      for (std::size_t k = 0; k < p.value.size(); ++k) {
        const T g = p.grad.data[k] * grad_scale;
        m[k] = b1 * m[k] + (T(1) - b1) * g;
        v[k] = b2 * v[k] + (T(1) - b2) * g * g;
        const double mhat = double(m[k]) / bc1;
        const double vhat = double(v[k]) / bc2;
        double upd = mhat / (std::sqrt(vhat) + cfg_.adam_eps);
        if (decay) upd += cfg_.weight_decay * double(p.value.data[k]);
        p.value.data[k] = static_cast<T>(double(p.value.data[k]) - lr * upd);
      }
    }
  }

 private:
  TrainingConfig cfg_;
  std::vector<std::vector<T>> m_, v_;
  std::size_t t_ = 0;
};

/// Mean per-example losses over `data` in inference mode (no dropout).
template <class T>
LossValues evaluate_losses(ModelParameters<T>& params, const std::vector<Example>& data,
                           double lambda) {
  if (data.empty()) throw Error("invalid_argument", "loss evaluation on an empty split");
  double lm = 0, bce = 0;
  for (const auto& ex : data) {
    Tape<T> tape(false);
    auto out = forward(tape, params, ex.context, ex.target, Mode::kInfer);
    lm += double(tape.scalar(tape.cross_entropy(out.token_logits, ex.target)));
    bce += double(tape.scalar(tape.bce_with_logits(out.slot_logits, ex.labels)));
  }
  LossValues v;
  v.lm = lm / double(data.size());
  v.bce = bce / double(data.size());
  v.account = v.lm + lambda * v.bce;
  return v;
}

/// Builds the joint loss for one batch on `tape`:
/// L = mean_i L_LM(i) + lambda * mean_i L_BCE(i).
template <class T>
struct BatchLoss {
  typename Tape<T>::Var lm, bce, account;
};

template <class T>
BatchLoss<T> batch_loss(Tape<T>& tape, ModelParameters<T>& params,
                        const std::vector<const Example*>& batch, T lambda, Mode mode,
                        Rng* rng) {
  std::vector<typename Tape<T>::Var> lms, bces;
  for (const Example* ex : batch) {
    auto out = forward(tape, params, ex->context, ex->target, mode, rng);
    lms.push_back(tape.cross_entropy(out.token_logits, ex->target));
    bces.push_back(tape.bce_with_logits(out.slot_logits, ex->labels));
  }
  BatchLoss<T> b;
  b.lm = tape.mean(lms);
  b.bce = tape.mean(bces);
  b.account = tape.combine(b.lm, T(1), b.bce, lambda);
  return b;
}

template <class T>
struct TrainResult {
  ModelParameters<T> params;  // weights of the selected epoch
  LossReport report;
};

/// Rescales accumulated grads so their global L2 norm is at most `max_norm`.
template <class T>
void clip_gradients(ModelParameters<T>& params, double max_norm) {
  double sq = 0;
  for (const auto& p : params.all())
    for (T g : p.grad.data) sq += double(g) * double(g);
  const double norm = std::sqrt(sq);
  if (norm <= max_norm || norm == 0) return;
  const T f = static_cast<T>(max_norm / norm);
  for (auto& p : params.all())
    for (T& g : p.grad.data) g *= f;
}

/// Shuffled mini-batch training; keeps the epoch with the lowest validation loss.
template <class T>
TrainResult<T> train(ModelParameters<T> params, const std::vector<Example>& train_set,
                     const std::vector<Example>& validation_set, const TrainingConfig& cfg) {
  cfg.validate();
  if (train_set.empty()) throw Error("invalid_argument", "empty training set");
  if (params.config().n_slots != train_set.front().labels.size())
    throw Error("invalid_argument", "model n_slots does not match the ontology");

  Rng shuffle_rng(cfg.seed * 2654435761ULL + 17);
  Rng dropout_rng(cfg.seed * 40503ULL + 29);
  AdamW<T> opt(params, cfg);
  const bool freeze_head_decay = cfg.lambda == 0.0;
  const auto skip_decay = [&](const Param<T>& p) {
    return freeze_head_decay && p.name.starts_with("acc_head.");
  };
  const T lambda = static_cast<T>(cfg.lambda);

  std::vector<std::size_t> order(train_set.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  TrainResult<T> result;
  std::optional<double> best;
  std::size_t batch_id = 0;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    shuffle_rng.shuffle(order);
    params.zero_grad();
    std::size_t pending = 0;
    double sum_lm = 0, sum_bce = 0;
    std::size_t n_batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size, ++batch_id) {
      std::vector<const Example*> batch;
      for (std::size_t k = start; k < std::min(order.size(), start + cfg.batch_size); ++k)
        batch.push_back(&train_set[order[k]]);
      Tape<T> tape;
      const auto loss = batch_loss(tape, params, batch, lambda, Mode::kTrain, &dropout_rng);
      const T value = tape.scalar(loss.account);
      if (!std::isfinite(value))
        throw Error("nan_loss", "non-finite loss at batch " + std::to_string(batch_id) +
                                    " (epoch " + std::to_string(epoch) + ")");
      tape.backward(loss.account);
      sum_lm += double(tape.scalar(loss.lm));
      sum_bce += double(tape.scalar(loss.bce));
      ++n_batches;
      const bool last = start + cfg.batch_size >= order.size();
      if (++pending == cfg.grad_accumulation_steps || last) {
        const T scale = T(1) / T(pending);
        if (cfg.grad_clip > 0) clip_gradients(params, cfg.grad_clip / double(scale));
        double lr = cfg.learning_rate;
        if (cfg.warmup_steps > 0 && opt.steps() < cfg.warmup_steps)
          lr *= double(opt.steps() + 1) / double(cfg.warmup_steps);
        opt.step(params, lr, scale, skip_decay);
        params.zero_grad();
        pending = 0;
        if (!params.all_finite())
          throw Error("nan_loss", "non-finite parameters after batch " + std::to_string(batch_id));
      }
      if (cfg.log_every && n_batches % cfg.log_every == 0) {
        char buf[160];
        std::snprintf(buf, sizeof buf, "epoch %zu batch %zu lm %.4f bce %.4f", epoch, n_batches,
                      sum_lm / double(n_batches), sum_bce / double(n_batches));
        log(LogLevel::kInfo, buf);
      }
    }
    EpochLosses el;
    el.epoch = epoch;
    el.train.lm = sum_lm / double(n_batches);
    el.train.bce = sum_bce / double(n_batches);
    el.train.account = el.train.lm + cfg.lambda * el.train.bce;
    el.validation = validation_set.empty() ? el.train
                                           : evaluate_losses(params, validation_set, cfg.lambda);
    el.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const double key =
        cfg.selection == SelectionLoss::kAccount ? el.validation.account : el.validation.lm;
    if (!best || key < *best) {
      best = key;
      result.params = params;
      result.report.best_epoch = epoch;
    }
    result.report.epochs.push_back(el);
    char buf[200];
    std::snprintf(buf, sizeof buf, "epoch %zu/%zu train %.4f val lm %.4f bce %.4f (%.1fs)", epoch,
                  cfg.epochs, el.train.account, el.validation.lm, el.validation.bce, el.seconds);
    log(LogLevel::kInfo, buf);
  }
  return result;
}

/// Index of the best lambda by validation JGA hits; ties go to the smaller lambda.
inline std::size_t select_lambda_index(const std::vector<double>& grid,
                                       const std::vector<std::size_t>& jga_hits) {
  if (grid.empty() || grid.size() != jga_hits.size())
    throw Error("invalid_argument", "lambda grid and scores must be equal-length and nonempty");
  std::size_t best = 0;
  for (std::size_t i = 1; i < grid.size(); ++i)
    if (jga_hits[i] > jga_hits[best] || (jga_hits[i] == jga_hits[best] && grid[i] < grid[best]))
      best = i;
  return best;
}

inline std::vector<double> default_lambda_grid() { return {0.0, 0.1, 0.25, 0.5, 0.75, 1.0}; }

}  // namespace acctdst
