#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "neuroprobe/activation_store.hpp"
#include "neuroprobe/error.hpp"
#include "neuroprobe/gru_tagger.hpp"
#include "neuroprobe/random.hpp"
#include "neuroprobe/ranking.hpp"

namespace neuroprobe {

inline constexpr double kStdFloor = 1e-8;

struct ProbeConfig {
  double lambda1 = 1e-4;
  double lambda2 = 1e-4;
  double learning_rate = 0.1;
  std::size_t epochs = 30;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
  double train_fraction = 0.8;
  // Accuracy-retention tolerance for the minimal neuron set.
  double selection_delta = 0.05;
  // Stop early once the step-size-normalized parameter change falls below
  // this; 0 disables.
  double convergence_tolerance = 0.0;

  void validate() const {
    if (!(lambda1 >= 0.0) || !(lambda2 >= 0.0)) throw InvalidInput("lambda1 and lambda2 must be >= 0");
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw InvalidInput("learning_rate must be > 0");
    if (epochs == 0 || batch_size == 0) throw InvalidInput("epochs and batch_size must be >= 1");
    if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw InvalidInput("train_fraction must be in (0,1)");
    if (!(selection_delta > 0.0 && selection_delta < 1.0)) throw InvalidInput("selection_delta must be in (0,1)");
  }
};

inline void to_json(nlohmann::json& j, const ProbeConfig& c) {
  j = nlohmann::json{{"lambda1", c.lambda1},
                     {"lambda2", c.lambda2},
                     {"learning_rate", c.learning_rate},
                     {"epochs", c.epochs},
                     {"batch_size", c.batch_size},
                     {"seed", c.seed},
                     {"train_fraction", c.train_fraction},
                     {"selection_delta", c.selection_delta},
                     {"convergence_tolerance", c.convergence_tolerance}};
}

inline void from_json(const nlohmann::json& j, ProbeConfig& c) {
  c.lambda1 = j.value("lambda1", c.lambda1);
  c.lambda2 = j.value("lambda2", c.lambda2);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.seed = j.value("seed", c.seed);
  c.train_fraction = j.value("train_fraction", c.train_fraction);
  c.selection_delta = j.value("selection_delta", c.selection_delta);
  c.convergence_tolerance = j.value("convergence_tolerance", c.convergence_tolerance);
}

/// Softmax regression from standardized activations to labels, together
/// with the standardization and the sentence split it was trained on.
struct ProbeModel {
  std::string task;
  std::size_t layers = 1;
  std::size_t neurons_per_layer = 0;
  Matrix weights;  // C x N
  std::vector<double> bias;
  std::vector<double> means;
  std::vector<double> stds;
  std::vector<std::string> labels;
  std::vector<std::size_t> train_ids;
  std::vector<std::size_t> test_ids;

  std::size_t neurons() const { return weights.cols; }
  std::size_t classes() const { return weights.rows; }
};

struct Standardized {
  Matrix features;  // tokens x N
  std::vector<double> means;
  std::vector<double> stds;
};

/// Z-scores every token's features with statistics of the given training
/// token rows (flat corpus order). Standard deviations are floored.
inline Standardized standardize(const ActivationCorpus& corpus, std::span<const std::size_t> train_tokens) {
  if (train_tokens.empty()) throw InvalidInput("standardize: empty training split");
  const std::size_t N = corpus.width(), T = corpus.total_tokens();
  Standardized out{Matrix(T, N), std::vector<double>(N, 0.0), std::vector<double>(N, 0.0)};
  std::size_t row = 0;
  for (const auto& s : corpus.sentences())
    for (float v : s.activations) out.features.data[row++] = v;
  for (auto t : train_tokens)
    if (t >= T) throw OutOfRange("standardize: token index out of range");

  const double n = static_cast<double>(train_tokens.size());
  for (std::size_t j = 0; j < N; ++j) {
    double sum = 0.0;
    for (auto t : train_tokens) sum += out.features(t, j);
    const double mean = sum / n;
    double sq = 0.0;
    for (auto t : train_tokens) {
      const double d = out.features(t, j) - mean;
      sq += d * d;
    }
    out.means[j] = mean;
    out.stds[j] = std::max(std::sqrt(sq / n), kStdFloor);
  }
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t j = 0; j < N; ++j) {
      double& x = out.features(t, j);
      // A constant training column is exactly zero after centering.
      x = x == out.means[j] ? 0.0 : (x - out.means[j]) / out.stds[j];
    }
  return out;
}

struct ProbeGradient {
  double loss = 0.0;
  Matrix weights;
  std::vector<double> bias;
};

/// Mean cross-entropy of softmax(Wx + b) plus lambda1*|W|_1 + lambda2*|W|_2^2
/// over the given rows, with its (sub)gradient; d|w|/dw is taken as 0 at 0.
/// Bias is not penalized.
inline ProbeGradient probe_loss_and_grad(const Matrix& weights, std::span<const double> bias, const Matrix& features,
                                         std::span<const std::size_t> labels, std::span<const std::size_t> rows,
                                         double lambda1, double lambda2) {
  const std::size_t C = weights.rows, N = weights.cols;
  if (features.cols != N || bias.size() != C) throw InvalidInput("probe: shape mismatch");
  if (rows.empty()) throw InvalidInput("probe: no rows");
  ProbeGradient g{0.0, Matrix(C, N), std::vector<double>(C, 0.0)};
  std::vector<double> logits(C);
  const double scale = 1.0 / static_cast<double>(rows.size());
  for (auto t : rows) {
    const auto x = features.row(t);
    const std::size_t y = labels[t];
    if (y >= C) throw OutOfRange("probe: label index out of range");
    for (std::size_t c = 0; c < C; ++c) {
      double a = bias[c];
      for (std::size_t j = 0; j < N; ++j) a += weights(c, j) * x[j];
      logits[c] = a;
    }
    const double mx = *std::max_element(logits.begin(), logits.end());
    double sum = 0.0;
    for (double a : logits) sum += std::exp(a - mx);
    g.loss += -(logits[y] - mx - std::log(sum)) * scale;
    softmax_in_place(logits);
    for (std::size_t c = 0; c < C; ++c) {
      const double d = (logits[c] - (c == y ? 1.0 : 0.0)) * scale;
      g.bias[c] += d;
      for (std::size_t j = 0; j < N; ++j) g.weights(c, j) += d * x[j];
    }
  }
  double l1 = 0.0, l2 = 0.0;
  for (std::size_t i = 0; i < weights.data.size(); ++i) {
    const double w = weights.data[i];
    l1 += std::abs(w);
    l2 += w * w;
    g.weights.data[i] += lambda1 * (w > 0.0 ? 1.0 : w < 0.0 ? -1.0 : 0.0) + 2.0 * lambda2 * w;
  }
  g.loss += lambda1 * l1 + lambda2 * l2;
  if (!std::isfinite(g.loss)) throw NumericError("probe loss is not finite");
  return g;
}

struct ProbeReport {
  std::vector<double> epoch_losses;
  double train_accuracy = 0.0;
  double test_accuracy = 0.0;
  std::size_t steps = 0;
  bool converged = false;
};

struct ProbeResult {
  ProbeModel model;
  ProbeReport report;
};

namespace detail {

struct ProbeData {
  Standardized standardized;
  std::vector<std::size_t> labels;  // per flat token; SIZE_MAX if unknown
  std::vector<std::size_t> train_rows, test_rows;
};

inline std::vector<std::size_t> rows_of(const ActivationCorpus& corpus, const std::set<std::size_t>& ids) {
  std::vector<std::size_t> rows;
  std::size_t row = 0;
  for (const auto& s : corpus.sentences()) {
    if (ids.count(s.id))
      for (std::size_t t = 0; t < s.tokens.size(); ++t) rows.push_back(row + t);
    row += s.tokens.size();
  }
  return rows;
}

inline std::vector<std::size_t> label_ids(const ActivationCorpus& corpus, const std::vector<std::string>& label_set) {
  if (!corpus.labeled()) throw InvalidInput("probe: corpus has no labels");
  std::vector<std::size_t> out;
  for (const auto& s : corpus.sentences())
    for (const auto& l : *s.labels) {
      auto it = std::lower_bound(label_set.begin(), label_set.end(), l);
      out.push_back(it != label_set.end() && *it == l ? static_cast<std::size_t>(it - label_set.begin())
                                                      : SIZE_MAX);
    }
  return out;
}

// Accuracy over `rows` with masked features treated as zero.
inline double masked_accuracy(const ProbeModel& model, const Matrix& features, std::span<const std::size_t> labels,
                              std::span<const std::size_t> rows, const std::vector<bool>& keep) {
  if (rows.empty()) return 0.0;
  const std::size_t C = model.classes(), N = model.neurons();
  std::vector<double> logits(C);
  std::size_t correct = 0;
  for (auto t : rows) {
    const auto x = features.row(t);
    for (std::size_t c = 0; c < C; ++c) {
      double a = model.bias[c];
      for (std::size_t j = 0; j < N; ++j)
        if (keep[j]) a += model.weights(c, j) * x[j];
      logits[c] = a;
    }
    correct += argmax_lowest(logits) == labels[t];
  }
  return static_cast<double>(correct) / static_cast<double>(rows.size());
}

// Standardized features of a corpus under a trained probe's statistics.
inline Matrix apply_standardization(const ProbeModel& model, const ActivationCorpus& corpus) {
  if (corpus.width() != model.neurons()) throw InvalidInput("corpus width does not match probe");
  const std::size_t N = model.neurons();
  Matrix f(corpus.total_tokens(), N);
  std::size_t i = 0;
  for (const auto& s : corpus.sentences())
    for (float v : s.activations) {
      const std::size_t j = i % N;
      const double x = v;
      f.data[i++] = x == model.means[j] ? 0.0 : (x - model.means[j]) / model.stds[j];
    }
  return f;
}

}  // namespace detail

/// Seeded sentence-level split; returns (train ids, test ids), each sorted.
inline std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_sentences(
    const ActivationCorpus& corpus, double train_fraction, std::uint64_t seed) {
  std::vector<std::size_t> ids;
  for (const auto& s : corpus.sentences()) ids.push_back(s.id);
  if (ids.size() < 2) throw InvalidInput("probe needs at least 2 sentences for a train/test split");
  Rng rng(seed);
  rng.shuffle(std::span<std::size_t>(ids));
  auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(ids.size())));
  n_train = std::clamp<std::size_t>(n_train, 1, ids.size() - 1);
  std::vector<std::size_t> train(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_train));
  std::vector<std::size_t> test(ids.begin() + static_cast<std::ptrdiff_t>(n_train), ids.end());
  std::sort(train.begin(), train.end());
  std::sort(test.begin(), test.end());
  return {train, test};
}

/// Trains the elastic-net probe with mini-batch proximal gradient descent:
/// a gradient step on the smooth part followed by soft-thresholding for the
/// L1 term.
inline ProbeResult train_probe(const ActivationCorpus& corpus, const ProbeConfig& config, std::string task = "task") {
  config.validate();
  if (!corpus.labeled()) throw InvalidInput("probe: corpus has no labels");

  ProbeModel model;
  model.task = std::move(task);
  model.layers = corpus.layers();
  model.neurons_per_layer = corpus.neurons_per_layer();
  {
    std::set<std::string> all;
    for (const auto& s : corpus.sentences()) all.insert(s.labels->begin(), s.labels->end());
    model.labels.assign(all.begin(), all.end());
  }
  std::tie(model.train_ids, model.test_ids) = split_sentences(corpus, config.train_fraction, config.seed);
  const auto train_rows = detail::rows_of(corpus, {model.train_ids.begin(), model.train_ids.end()});
  const auto labels = detail::label_ids(corpus, model.labels);
  {
    std::set<std::size_t> present;
    for (auto t : train_rows) present.insert(labels[t]);
    if (present.size() < 2) throw InvalidInput("probe: training split has a single class");
  }

  Standardized st = standardize(corpus, train_rows);
  const std::size_t C = model.labels.size(), N = corpus.width();
  model.means = st.means;
  model.stds = st.stds;
  model.weights = Matrix(C, N);
  model.bias.assign(C, 0.0);

  ProbeReport report;
  Rng rng(config.seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<std::size_t> order = train_rows;
  const double lr = config.learning_rate, shrink = lr * config.lambda1;
  for (std::size_t epoch = 0; epoch < config.epochs && !report.converged; ++epoch) {
    rng.shuffle(std::span<std::size_t>(order));
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const auto end = std::min(start + config.batch_size, order.size());
      const auto g = probe_loss_and_grad(model.weights, model.bias, st.features, labels,
                                         std::span<const std::size_t>(order).subspan(start, end - start), 0.0,
                                         config.lambda2);
      double change = 0.0;
      for (std::size_t i = 0; i < model.weights.data.size(); ++i) {
        double& w = model.weights.data[i];
        const double before = w;
        const double stepped = w - lr * g.weights.data[i];
        w = stepped > shrink ? stepped - shrink : stepped < -shrink ? stepped + shrink : 0.0;
        change += (w - before) * (w - before);
      }
      for (std::size_t c = 0; c < C; ++c) {
        const double d = lr * g.bias[c];
        model.bias[c] -= d;
        change += d * d;
      }
      ++report.steps;
      if (config.convergence_tolerance > 0.0 && std::sqrt(change) / lr < config.convergence_tolerance) {
        report.converged = true;
        break;
      }
    }
    const auto full = probe_loss_and_grad(model.weights, model.bias, st.features, labels, train_rows,
                                          config.lambda1, config.lambda2);
    if (!std::isfinite(full.loss)) throw NumericError("probe diverged at epoch " + std::to_string(epoch + 1));
    report.epoch_losses.push_back(full.loss);
  }

  const std::vector<bool> all(N, true);
  const auto test_rows = detail::rows_of(corpus, {model.test_ids.begin(), model.test_ids.end()});
  report.train_accuracy = detail::masked_accuracy(model, st.features, labels, train_rows, all);
  report.test_accuracy = detail::masked_accuracy(model, st.features, labels, test_rows, all);
  return {std::move(model), std::move(report)};
}

/// Neuron importance = sum over classes of |weight|.
inline RankingResult rank_by_probe_weights(const ProbeModel& model, std::string model_id = "") {
  std::vector<double> scores(model.neurons(), 0.0);
  for (std::size_t c = 0; c < model.classes(); ++c)
    for (std::size_t j = 0; j < model.neurons(); ++j) scores[j] += std::abs(model.weights(c, j));
  return rank_scores("probe:" + model.task, std::move(model_id), scores, model.neurons_per_layer);
}

/// Caches the standardized test split so repeated maskings are cheap.
class MaskedEvaluator {
 public:
  MaskedEvaluator(const ProbeModel& model, const ActivationCorpus& corpus)
      : model_(model),
        features_(detail::apply_standardization(model, corpus)),
        labels_(detail::label_ids(corpus, model.labels)),
        rows_(detail::rows_of(corpus, {model.test_ids.begin(), model.test_ids.end()})) {}

  double accuracy(const std::vector<bool>& keep) const {
    return detail::masked_accuracy(model_, features_, labels_, rows_, keep);
  }

  double accuracy(const std::set<NeuronId>& keep) const {
    std::vector<bool> mask(model_.neurons(), false);
    for (const auto& id : keep) {
      if (id.layer >= model_.layers || id.index >= model_.neurons_per_layer)
        throw OutOfRange("unknown neuron " + id.str());
      mask[id.flat(model_.neurons_per_layer)] = true;
    }
    return accuracy(mask);
  }

 private:
  ProbeModel model_;
  Matrix features_;
  std::vector<std::size_t> labels_;
  std::vector<std::size_t> rows_;
};

/// Test-split accuracy with every neuron outside `keep` set to its training
/// mean (zero after standardization).
inline double evaluate_masked(const ProbeModel& model, const ActivationCorpus& corpus, const std::set<NeuronId>& keep) {
  return MaskedEvaluator(model, corpus).accuracy(keep);
}

inline std::set<NeuronId> all_neurons(const ProbeModel& model) {
  std::set<NeuronId> out;
  for (std::size_t j = 0; j < model.neurons(); ++j) out.insert(NeuronId::from_flat(j, model.neurons_per_layer));
  return out;
}

struct MinimalSelection {
  std::vector<NeuronId> neurons;  // in ranking order
  double accuracy = 0.0;
  double threshold = 0.0;
};

/// Grows the kept set along the probe ranking until masked accuracy reaches
/// (1 - delta) of the unmasked test accuracy.
inline MinimalSelection select_minimal_neurons(const ProbeModel& model, const ActivationCorpus& corpus, double delta) {
  if (!(delta > 0.0 && delta < 1.0)) throw InvalidInput("delta must be in (0,1)");
  const MaskedEvaluator eval(model, corpus);
  const std::vector<bool> all(model.neurons(), true);
  MinimalSelection sel;
  sel.threshold = (1.0 - delta) * eval.accuracy(all);
  std::vector<bool> keep(model.neurons(), false);
  for (const auto& e : rank_by_probe_weights(model).entries) {
    keep[e.neuron.flat(model.neurons_per_layer)] = true;
    sel.neurons.push_back(e.neuron);
    sel.accuracy = eval.accuracy(keep);
    if (sel.accuracy >= sel.threshold) break;
  }
  return sel;
}

inline nlohmann::ordered_json probe_model_json(const ProbeModel& m) {
  nlohmann::ordered_json w = nlohmann::ordered_json::array();
  for (std::size_t c = 0; c < m.classes(); ++c) {
    auto row = m.weights.row(c);
    w.push_back(std::vector<double>(row.begin(), row.end()));
  }
  return {{"task", m.task}, {"labels", m.labels},   {"weights", std::move(w)}, {"bias", m.bias},
          {"means", m.means}, {"stds", m.stds},     {"test_ids", m.test_ids}};
}

/// Full probe report: config echo, accuracies, per-epoch losses, ranking and
/// the minimal neuron set.
inline nlohmann::ordered_json probe_report_json(const ProbeConfig& config, const ProbeResult& result,
                                                const RankingResult& ranking, const MinimalSelection& selection) {
  std::vector<std::string> selected;
  for (const auto& n : selection.neurons) selected.push_back(n.str());
  return {{"version", 1},
          {"config", nlohmann::json(config)},
          {"task", result.model.task},
          {"labels", result.model.labels},
          {"train_accuracy", result.report.train_accuracy},
          {"test_accuracy", result.report.test_accuracy},
          {"epoch_losses", result.report.epoch_losses},
          {"ranking", ranking_to_json(ranking)},
          {"minimal_set", {{"neurons", selected}, {"accuracy", selection.accuracy}, {"threshold", selection.threshold}}},
          {"probe", probe_model_json(result.model)}};
}

}  // namespace neuroprobe
