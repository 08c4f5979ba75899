#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

#include <json.hpp>

#include "dgen/error.hpp"
#include "dgen/model.hpp"
#include "dgen/text.hpp"

namespace dgen {

struct TrainingConfig {
  std::size_t embed_dim = 300;
  std::size_t hidden_dim = 512;
  std::size_t attn_dim = 512;
  std::size_t num_layers = 2;
  std::size_t dict_size = 10;
  double dropout = 0.5;
  std::size_t batch_size = 64;
  double learning_rate = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double clip_norm = 5.0;
  double init_scale = 0.08;
  std::size_t max_epochs = 20;
  std::size_t patience = 5;
  std::uint64_t seed = 1;
  std::int64_t min_count = 10;
  std::size_t max_src_len = 30;
  std::size_t max_tgt_len = 30;
  bool dictionary_guidance = true;
  bool log_wall_time = true;

  ModelConfig model_config(std::size_t vocab_size) const {
    ModelConfig m;
    m.vocab_size = vocab_size;
    m.embed_dim = embed_dim;
    m.hidden_dim = hidden_dim;
    m.attn_dim = attn_dim;
    m.num_layers = num_layers;
    m.dict_size = dict_size;
    m.dictionary_guidance = dictionary_guidance;
    return m;
  }

  void validate() const {
    if (!embed_dim || !hidden_dim || !attn_dim || !num_layers || !dict_size || !batch_size || !max_epochs ||
        !max_src_len || !max_tgt_len)
      throw Error(ErrorCode::BadConfig, "dimensions, batch size and epoch counts must be positive");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw Error(ErrorCode::BadConfig, "dropout must be in [0, 1)");
    if (!(learning_rate > 0.0) || !(epsilon > 0.0) || !(clip_norm > 0.0) || !(init_scale > 0.0))
      throw Error(ErrorCode::BadConfig, "learning_rate, epsilon, clip_norm and init_scale must be positive");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
      throw Error(ErrorCode::BadConfig, "Adam betas must be in [0, 1)");
    if (min_count < 0) throw Error(ErrorCode::BadConfig, "min_count must be non-negative");
  }
};

namespace detail {

inline bool parse_bool(const std::string& v) {
  auto s = to_lower(v);
  if (s == "1" || s == "true" || s == "yes" || s == "on") return true;
  if (s == "0" || s == "false" || s == "no" || s == "off") return false;
  throw Error(ErrorCode::BadConfig, "not a boolean: " + v);
}

template <typename T>
T parse_number(const std::string& key, const std::string& v) {
  std::istringstream in(v);
  T out{};
  if (!(in >> out) || !(in >> std::ws).eof()) throw Error(ErrorCode::BadConfig, "bad value for " + key + ": " + v);
  return out;
}

}  // namespace detail

/// Sets one field by name. Unknown keys are an error.
inline void set_config_value(TrainingConfig& c, const std::string& key, const std::string& value) {
  using detail::parse_number;
  static const std::map<std::string, std::function<void(TrainingConfig&, const std::string&)>> setters = {
      {"embed_dim", [](TrainingConfig& c, const std::string& v) { c.embed_dim = parse_number<std::size_t>("embed_dim", v); }},
      {"hidden_dim", [](TrainingConfig& c, const std::string& v) { c.hidden_dim = parse_number<std::size_t>("hidden_dim", v); }},
      {"attn_dim", [](TrainingConfig& c, const std::string& v) { c.attn_dim = parse_number<std::size_t>("attn_dim", v); }},
      {"num_layers", [](TrainingConfig& c, const std::string& v) { c.num_layers = parse_number<std::size_t>("num_layers", v); }},
      {"dict_size", [](TrainingConfig& c, const std::string& v) { c.dict_size = parse_number<std::size_t>("dict_size", v); }},
      {"dropout", [](TrainingConfig& c, const std::string& v) { c.dropout = parse_number<double>("dropout", v); }},
      {"batch_size", [](TrainingConfig& c, const std::string& v) { c.batch_size = parse_number<std::size_t>("batch_size", v); }},
      {"learning_rate", [](TrainingConfig& c, const std::string& v) { c.learning_rate = parse_number<double>("learning_rate", v); }},
      {"beta1", [](TrainingConfig& c, const std::string& v) { c.beta1 = parse_number<double>("beta1", v); }},
      {"beta2", [](TrainingConfig& c, const std::string& v) { c.beta2 = parse_number<double>("beta2", v); }},
      {"epsilon", [](TrainingConfig& c, const std::string& v) { c.epsilon = parse_number<double>("epsilon", v); }},
      {"clip_norm", [](TrainingConfig& c, const std::string& v) { c.clip_norm = parse_number<double>("clip_norm", v); }},
      {"init_scale", [](TrainingConfig& c, const std::string& v) { c.init_scale = parse_number<double>("init_scale", v); }},
      {"max_epochs", [](TrainingConfig& c, const std::string& v) { c.max_epochs = parse_number<std::size_t>("max_epochs", v); }},
      {"patience", [](TrainingConfig& c, const std::string& v) { c.patience = parse_number<std::size_t>("patience", v); }},
      {"seed", [](TrainingConfig& c, const std::string& v) { c.seed = parse_number<std::uint64_t>("seed", v); }},
      {"min_count", [](TrainingConfig& c, const std::string& v) { c.min_count = parse_number<std::int64_t>("min_count", v); }},
      {"max_src_len", [](TrainingConfig& c, const std::string& v) { c.max_src_len = parse_number<std::size_t>("max_src_len", v); }},
      {"max_tgt_len", [](TrainingConfig& c, const std::string& v) { c.max_tgt_len = parse_number<std::size_t>("max_tgt_len", v); }},
      {"dictionary_guidance", [](TrainingConfig& c, const std::string& v) { c.dictionary_guidance = detail::parse_bool(v); }},
      {"log_wall_time", [](TrainingConfig& c, const std::string& v) { c.log_wall_time = detail::parse_bool(v); }},
  };
  auto it = setters.find(key);
  if (it == setters.end()) throw Error(ErrorCode::BadConfig, "unknown config key: " + key);
  it->second(c, trim(value));
}

/// Flat key=value text; '#' starts a comment.
inline TrainingConfig parse_config(std::string_view text, TrainingConfig base = {}) {
  std::size_t lineno = 0;
  for (const auto& raw : split_on(text, "\n")) {
    ++lineno;
    std::string line = raw.substr(0, raw.find('#'));
    line = trim(line);
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw Error(ErrorCode::BadConfig, "line " + std::to_string(lineno) + ": expected key=value");
    set_config_value(base, trim(line.substr(0, eq)), line.substr(eq + 1));
  }
  return base;
}

inline nlohmann::json config_to_json(const TrainingConfig& c) {
  return {{"embed_dim", c.embed_dim},     {"hidden_dim", c.hidden_dim},
          {"attn_dim", c.attn_dim},       {"num_layers", c.num_layers},
          {"dict_size", c.dict_size},     {"dropout", c.dropout},
          {"batch_size", c.batch_size},   {"learning_rate", c.learning_rate},
          {"beta1", c.beta1},             {"beta2", c.beta2},
          {"epsilon", c.epsilon},         {"clip_norm", c.clip_norm},
          {"init_scale", c.init_scale},   {"max_epochs", c.max_epochs},
          {"patience", c.patience},       {"seed", c.seed},
          {"min_count", c.min_count},     {"max_src_len", c.max_src_len},
          {"max_tgt_len", c.max_tgt_len}, {"dictionary_guidance", c.dictionary_guidance},
          {"log_wall_time", c.log_wall_time}};
}

inline TrainingConfig config_from_json(const nlohmann::json& j) {
  TrainingConfig c;
  for (const auto& [key, value] : j.items()) {
    if (value.is_boolean())
      set_config_value(c, key, value.get<bool>() ? "true" : "false");
    else
      set_config_value(c, key, value.dump());
  }
  return c;
}

/// Σ over sequences of -Σ_t log p(y_t), divided by the number of sequences.
/// Positions whose target is PAD are skipped.
template <typename Scalar>
double nll_loss(const std::vector<std::vector<Vector<Scalar>>>& distributions, const std::vector<TokenIds>& targets) {
  if (distributions.empty()) return 0.0;
  double total = 0.0;
  for (std::size_t b = 0; b < distributions.size(); ++b) {
    for (std::size_t t = 0; t < distributions[b].size() && t < targets[b].size(); ++t) {
      if (targets[b][t] == kPad) continue;
      total -= std::log(static_cast<double>(distributions[b][t](targets[b][t])));
    }
  }
  return total / static_cast<double>(distributions.size());
}

template <typename Scalar>
class Adam {
 public:
  Adam(const ModelConfig& cfg, double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : m_(ModelParameters<Scalar>::zeros(cfg)), v_(ModelParameters<Scalar>::zeros(cfg)),
        lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(ModelParameters<Scalar>& params, const ModelParameters<Scalar>& grads) {
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    const Scalar alpha = static_cast<Scalar>(lr_ * std::sqrt(c2) / c1);
    const Scalar eps_hat = static_cast<Scalar>(eps_ * std::sqrt(c2));
    const Scalar b1 = static_cast<Scalar>(beta1_), b2 = static_cast<Scalar>(beta2_);
    auto p = params.tensors();
    auto g = grads.tensors();
    auto m = m_.tensors();
    auto v = v_.tensors();
    for (std::size_t i = 0; i < p.size(); ++i) {
      auto& mi = *m[i].second;
      auto& vi = *v[i].second;
      const auto& gi = *g[i].second;
      mi = b1 * mi + (Scalar(1) - b1) * gi;
      vi = b2 * vi + (Scalar(1) - b2) * gi.cwiseAbs2();
      p[i].second->array() -= alpha * mi.array() / (vi.array().sqrt() + eps_hat);
    }
  }

  std::size_t steps() const { return t_; }

 private:
  ModelParameters<Scalar> m_, v_;
  double lr_, beta1_, beta2_, eps_;
  std::size_t t_ = 0;
};

/// Rescales grads so their global L2 norm is at most max_norm. Returns the
/// norm before clipping.
template <typename Scalar>
double clip_gradients(ModelParameters<Scalar>& grads, double max_norm) {
  const double norm = std::sqrt(grads.squared_norm());
  if (norm > max_norm && norm > 0) {
    const Scalar s = static_cast<Scalar>(max_norm / norm);
    for (auto& [name, t] : grads.tensors()) *t *= s;
  }
  return norm;
}

struct EpochMetrics {
  std::size_t epoch = 0;
  std::string split;
  double loss = 0.0;  // mean per-sequence NLL
  double token_accuracy = 0.0;
  double wall_time = 0.0;
};

inline nlohmann::json metrics_to_json(const EpochMetrics& m) {
  return {{"epoch", m.epoch}, {"split", m.split}, {"loss", m.loss}, {"token_accuracy", m.token_accuracy},
          {"wall_time", m.wall_time}};
}

struct SetMetrics {
  double loss = 0.0;
  double token_accuracy = 0.0;
};

/// Inference-mode mean per-sequence NLL and teacher-forced token accuracy.
template <typename Scalar>
SetMetrics evaluate_set(const ModelParameters<Scalar>& params, const std::vector<TrainingExample>& data) {
  SetMetrics out;
  if (data.empty()) return out;
  std::size_t correct = 0, total = 0;
  double loss = 0.0;
  for (const auto& ex : data) {
    auto f = forward_sequence(params, ex);
    loss += f.loss;
    correct += f.correct;
    total += f.predicted;
  }
  out.loss = loss / static_cast<double>(data.size());
  out.token_accuracy = total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0;
  return out;
}

template <typename Scalar>
struct TrainCallbacks {
  std::function<void(const EpochMetrics&)> on_metrics;
  std::function<void(const ModelParameters<Scalar>&, std::size_t epoch)> on_best;
  // returning true after a validation record stops training
  std::function<bool(const EpochMetrics&)> should_stop;
};

template <typename Scalar>
struct TrainResult {
  ModelParameters<Scalar> best;
  double best_valid_loss = std::numeric_limits<double>::infinity();
  std::size_t best_epoch = 0;
  std::size_t epochs_run = 0;
  std::vector<EpochMetrics> log;
};

/// Mini-batch Adam on the per-sequence NLL averaged over each batch, with
/// dropout, global-norm clipping and early stopping on validation loss.
template <typename Scalar>
TrainResult<Scalar> train(const TrainingConfig& cfg, const std::vector<TrainingExample>& train_set,
                          const std::vector<TrainingExample>& valid_set, ModelParameters<Scalar> params,
                          const TrainCallbacks<Scalar>& callbacks = {}) {
  cfg.validate();
  if (train_set.empty()) throw Error(ErrorCode::EmptyCorpus, "training set is empty");
  using clock = std::chrono::steady_clock;
  const auto start = clock::now();
  auto elapsed = [&] {
    return cfg.log_wall_time ? std::chrono::duration<double>(clock::now() - start).count() : 0.0;
  };

  std::mt19937_64 shuffle_rng(cfg.seed * 0x9E3779B97F4A7C15ull + 1);
  std::mt19937_64 dropout_rng(cfg.seed * 0x9E3779B97F4A7C15ull + 2);
  RunMode mode{true, cfg.dropout, &dropout_rng};

  Adam<Scalar> adam(params.config, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.epsilon);
  auto grads = ModelParameters<Scalar>::zeros(params.config);
  TrainResult<Scalar> result;
  result.best = params;
  std::size_t since_best = 0;
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);

  auto emit = [&](const EpochMetrics& m) {
    result.log.push_back(m);
    if (callbacks.on_metrics) callbacks.on_metrics(m);
  };

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double epoch_loss = 0.0;
    std::size_t correct = 0, predicted = 0;
    for (std::size_t b = 0; b < order.size(); b += cfg.batch_size) {
      const std::size_t e = std::min(order.size(), b + cfg.batch_size);
      const Scalar scale = Scalar(1) / static_cast<Scalar>(e - b);
      grads.set_zero();
      double batch_loss = 0.0;
      for (std::size_t k = b; k < e; ++k) {
        const auto& ex = train_set[order[k]];
        auto f = forward_sequence(params, ex, mode);
        batch_loss += f.loss;
        correct += f.correct;
        predicted += f.predicted;
        backward_sequence(params, f, ex, grads, scale);
      }
      if (!std::isfinite(batch_loss)) {
        std::ostringstream msg;
        msg << "epoch " << epoch << ", batch examples [";
        for (std::size_t k = b; k < e; ++k) msg << (k > b ? "," : "") << order[k];
        msg << "], parameter norm " << std::sqrt(params.squared_norm());
        throw Error(ErrorCode::NonFiniteLoss, msg.str());
      }
      epoch_loss += batch_loss;
      clip_gradients(grads, cfg.clip_norm);
      adam.step(params, grads);
    }
    emit({epoch, "train", epoch_loss / static_cast<double>(order.size()),
          predicted ? static_cast<double>(correct) / static_cast<double>(predicted) : 0.0, elapsed()});

    result.epochs_run = epoch;
    const auto& eval_set = valid_set.empty() ? train_set : valid_set;
    auto vm = evaluate_set(params, eval_set);
    EpochMetrics valid{epoch, "valid", vm.loss, vm.token_accuracy, elapsed()};
    emit(valid);
    if (vm.loss < result.best_valid_loss) {
      result.best_valid_loss = vm.loss;
      result.best_epoch = epoch;
      result.best = params;
      since_best = 0;
      if (callbacks.on_best) callbacks.on_best(params, epoch);
    } else if (++since_best >= cfg.patience) {
      break;
    }
    if (callbacks.should_stop && callbacks.should_stop(valid)) break;
  }
  return result;
}

struct GradientCheckEntry {
  std::string tensor;
  std::size_t checked = 0;
  double max_relative_error = 0.0;  // over elements with max(|analytic|, |numeric|) >= floor
  double max_absolute_error = 0.0;  // over elements below the floor
};

struct GradientCheckReport {
  std::vector<GradientCheckEntry> groups;
  double max_relative_error = 0.0;
  double max_absolute_error = 0.0;
};

/// Mean per-sequence NLL over a batch, inference mode.
template <typename Scalar>
auto batch_loss(const ModelParameters<Scalar>& params, const std::vector<TrainingExample>& batch) {
  std::common_type_t<Scalar, double> total = 0;
  for (const auto& ex : batch) total += forward_sequence(params, ex).loss;
  return total / static_cast<double>(batch.size());
}

/// Compares the float64 analytic gradient of every element of every tensor
/// with a central difference of step eps. The finite differences are taken
/// on an extended-precision copy of the model so that the reference is not
/// swamped by float64 cancellation. Elements whose gradients are both below
/// `floor` in magnitude are compared by absolute difference instead.
inline GradientCheckReport gradient_check(const ModelParameters<double>& params,
                                          const std::vector<TrainingExample>& batch, double eps = 1e-5,
                                          GradientFaults faults = {}, double floor = 1e-8) {
  using Wide = long double;
  auto grads = ModelParameters<double>::zeros(params.config);
  const double scale = 1.0 / static_cast<double>(batch.size());
  for (const auto& ex : batch) {
    auto f = forward_sequence(params, ex);
    backward_sequence(params, f, ex, grads, scale, faults);
  }
  auto wide = params.cast<Wide>();
  GradientCheckReport report;
  auto p = wide.tensors();
  auto g = grads.tensors();
  const Wide h = static_cast<Wide>(eps);
  for (std::size_t i = 0; i < p.size(); ++i) {
    GradientCheckEntry entry;
    entry.tensor = p[i].first;
    auto& tensor = *p[i].second;
    for (Eigen::Index k = 0; k < tensor.size(); ++k) {
      const Wide saved = tensor.data()[k];
      tensor.data()[k] = saved + h;
      const Wide up = batch_loss(wide, batch);
      tensor.data()[k] = saved - h;
      const Wide down = batch_loss(wide, batch);
      tensor.data()[k] = saved;
      const double numeric = static_cast<double>((up - down) / (2 * h));
      const double analytic = g[i].second->data()[k];
      const double diff = std::abs(numeric - analytic);
      const double mag = std::max(std::abs(numeric), std::abs(analytic));
      if (mag < floor)
        entry.max_absolute_error = std::max(entry.max_absolute_error, diff);
      else
        entry.max_relative_error = std::max(entry.max_relative_error, diff / mag);
      ++entry.checked;
    }
    report.max_relative_error = std::max(report.max_relative_error, entry.max_relative_error);
    report.max_absolute_error = std::max(report.max_absolute_error, entry.max_absolute_error);
    report.groups.push_back(std::move(entry));
  }
  return report;
}

}  // namespace dgen
