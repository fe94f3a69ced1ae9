#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include <json.hpp>

#include "neuroprobe/activation_store.hpp"
#include "neuroprobe/error.hpp"
#include "neuroprobe/gru_tagger.hpp"
#include "neuroprobe/random.hpp"
#include "neuroprobe/task.hpp"

namespace neuroprobe {

struct TrainConfig {
  std::uint64_t seed = 0;
  std::size_t epochs = 15;
  double learning_rate = 0.01;
  std::size_t batch_size = 16;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::size_t embedding_dim = 16;
  std::size_t hidden_dim = 32;

  void validate() const {
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw InvalidInput("learning_rate must be > 0");
    if (batch_size == 0) throw InvalidInput("batch_size must be positive");
    if (embedding_dim == 0 || hidden_dim == 0) throw InvalidInput("model dimensions must be positive");
    if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0 && epsilon > 0.0))
      throw InvalidInput("bad Adam hyperparameters");
  }
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"seed", c.seed},          {"epochs", c.epochs},
                     {"learning_rate", c.learning_rate}, {"batch_size", c.batch_size},
                     {"beta1", c.beta1},        {"beta2", c.beta2},
                     {"epsilon", c.epsilon},    {"embedding_dim", c.embedding_dim},
                     {"hidden_dim", c.hidden_dim}};
}

// Missing keys keep their defaults.
inline void from_json(const nlohmann::json& j, TrainConfig& c) {
  c.seed = j.value("seed", c.seed);
  c.epochs = j.value("epochs", c.epochs);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.beta1 = j.value("beta1", c.beta1);
  c.beta2 = j.value("beta2", c.beta2);
  c.epsilon = j.value("epsilon", c.epsilon);
  c.embedding_dim = j.value("embedding_dim", c.embedding_dim);
  c.hidden_dim = j.value("hidden_dim", c.hidden_dim);
}

struct EpochReport {
  std::size_t epoch = 0;  // 1-based
  double loss = 0.0;      // mean token cross-entropy over the epoch's batches
  double accuracy = 0.0;  // token accuracy on the training corpus after the epoch
};

struct TrainResult {
  GruTagger model;
  std::vector<EpochReport> epochs;
};

/// Token ids and label ids of a text corpus under a model's vocabulary.
struct EncodedSentence {
  std::size_t id = 0;
  std::vector<std::size_t> tokens;
  std::vector<std::size_t> labels;
};

inline std::vector<EncodedSentence> encode_corpus(const GruTagger& model, const TextCorpus& corpus) {
  std::vector<EncodedSentence> out;
  out.reserve(corpus.sentences.size());
  for (const auto& s : corpus.sentences) {
    EncodedSentence e{s.id, model.encode(s.tokens), {}};
    if (s.labels.size() != s.tokens.size())
      throw InvalidInput("sentence " + std::to_string(s.id) + ": label/token length mismatch");
    for (const auto& l : s.labels) e.labels.push_back(model.task().label_index(l));
    out.push_back(std::move(e));
  }
  return out;
}

/// Mean token cross-entropy over a batch; writes its gradient into `grad`.
inline double batch_loss_and_gradient(const GruTagger& model, std::span<const EncodedSentence> batch,
                                      GruParameters& grad) {
  std::size_t tokens = 0;
  for (const auto& s : batch) tokens += s.tokens.size();
  grad.zero();
  double loss = 0.0;
  const double scale = 1.0 / static_cast<double>(tokens);
  for (const auto& s : batch) loss += model.loss_and_gradient(s.tokens, s.labels, grad, scale);
  return loss;
}

inline double token_accuracy(const GruTagger& model, std::span<const EncodedSentence> data) {
  std::size_t correct = 0, total = 0;
  for (const auto& s : data) {
    const auto fwd = model.forward(s.tokens);
    for (std::size_t t = 0; t < s.labels.size(); ++t) correct += fwd.predictions[t] == s.labels[t];
    total += s.labels.size();
  }
  return total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0;
}

class Adam {
 public:
  Adam(const GruParameters& shape, const TrainConfig& cfg) : m_(shape), v_(shape), cfg_(cfg) {
    m_.zero();
    v_.zero();
  }

  void step(GruParameters& params, const GruParameters& grad) {
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    std::vector<Matrix*> p, m, v;
    std::vector<const Matrix*> g;
    params.for_each([&](const char*, Matrix& x) { p.push_back(&x); });
    grad.for_each([&](const char*, const Matrix& x) { g.push_back(&x); });
    m_.for_each([&](const char*, Matrix& x) { m.push_back(&x); });
    v_.for_each([&](const char*, Matrix& x) { v.push_back(&x); });
    for (std::size_t k = 0; k < p.size(); ++k) {
      for (std::size_t i = 0; i < p[k]->data.size(); ++i) {
        const double gi = g[k]->data[i];
        double& mi = m[k]->data[i];
        double& vi = v[k]->data[i];
        mi = cfg_.beta1 * mi + (1.0 - cfg_.beta1) * gi;
        vi = cfg_.beta2 * vi + (1.0 - cfg_.beta2) * gi * gi;
        p[k]->data[i] -= cfg_.learning_rate * (mi / c1) / (std::sqrt(vi / c2) + cfg_.epsilon);
      }
    }
  }

 private:
  GruParameters m_, v_;
  TrainConfig cfg_;
  std::size_t t_ = 0;
};

/// Mini-batch Adam on mean token cross-entropy with full BPTT. The data
/// order of every epoch is a seeded shuffle, so runs are reproducible.
inline TrainResult train(GruTagger model, const TextCorpus& corpus, const TrainConfig& config) {
  config.validate();
  if (corpus.sentences.empty()) throw InvalidInput("training corpus is empty");
  const auto data = encode_corpus(model, corpus);

  TrainResult result{std::move(model), {}};
  GruParameters grad = result.model.parameters();
  Adam adam(grad, config);
  Rng rng(config.seed ^ 0x5eedda7aULL);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    rng.shuffle(std::span<std::size_t>(order));
    double loss_sum = 0.0;
    std::size_t token_sum = 0;
    std::vector<EncodedSentence> batch;
    for (std::size_t start = 0, b = 0; start < order.size(); start += config.batch_size, ++b) {
      batch.clear();
      std::size_t tokens = 0;
      for (std::size_t i = start; i < std::min(start + config.batch_size, order.size()); ++i) {
        batch.push_back(data[order[i]]);
        tokens += data[order[i]].tokens.size();
      }
      const double loss = batch_loss_and_gradient(result.model, batch, grad);
      if (!std::isfinite(loss))
        throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " + std::to_string(b));
      adam.step(result.model.parameters(), grad);
      loss_sum += loss * static_cast<double>(tokens);
      token_sum += tokens;
    }
    result.epochs.push_back({epoch, loss_sum / static_cast<double>(token_sum), token_accuracy(result.model, data)});
  }
  return result;
}

inline nlohmann::ordered_json train_report_json(const TrainConfig& config, const TrainResult& result) {
  nlohmann::ordered_json epochs = nlohmann::ordered_json::array();
  for (const auto& e : result.epochs)
    epochs.push_back({{"epoch", e.epoch}, {"loss", e.loss}, {"accuracy", e.accuracy}});
  return {{"config", nlohmann::json(config)}, {"epochs", std::move(epochs)}};
}

/// Runs the model over each sentence and records the hidden state of every
/// token as one activation row (1 layer, hidden_dim neurons).
inline ActivationCorpus extract_activations(const GruTagger& model, const TextCorpus& corpus) {
  ActivationCorpus out(1, model.hidden_dim());
  for (const auto& s : corpus.sentences) {
    const auto fwd = model.forward(model.encode(s.tokens));
    SentenceRecord rec;
    rec.id = s.id;
    rec.tokens = s.tokens;
    rec.activations.reserve(fwd.hidden.data.size());
    for (double v : fwd.hidden.data) rec.activations.push_back(static_cast<float>(v));
    if (!s.labels.empty()) rec.labels = s.labels;
    out.add(std::move(rec));
  }
  return out;
}

}  // namespace neuroprobe
