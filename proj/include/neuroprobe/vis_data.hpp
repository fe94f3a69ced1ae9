#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "neuroprobe/activation_store.hpp"
#include "neuroprobe/error.hpp"

namespace neuroprobe {

struct WordActivation {
  std::string word;
  double mean = 0.0;
  std::size_t count = 0;
};

/// Word types ranked by the neuron's mean activation over their
/// occurrences, keeping types seen at least `min_count` times.
inline std::vector<WordActivation> top_words(const ActivationCorpus& corpus, const NeuronId& neuron, std::size_t k,
                                             std::size_t min_count = 2) {
  const std::size_t flat = corpus.flat_index(neuron);
  const std::size_t width = corpus.width();
  std::map<std::string, std::pair<double, std::size_t>> groups;
  for (const auto& s : corpus.sentences())
    for (std::size_t t = 0; t < s.tokens.size(); ++t) {
      auto& g = groups[s.tokens[t]];
      g.first += s.activations[t * width + flat];
      ++g.second;
    }
  std::vector<WordActivation> out;
  for (const auto& [word, g] : groups)
    if (g.second >= min_count) out.push_back({word, g.first / static_cast<double>(g.second), g.second});
  // groups are already in lexicographic order; stable sort keeps it for ties
  std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.mean > b.mean; });
  if (out.size() > k) out.resize(k);
  return out;
}

struct TracePoint {
  std::string token;
  double activation = 0.0;
  double intensity = 0.0;  // in [-1, 1]
};

namespace detail {

inline double max_abs(const ActivationCorpus& corpus, std::size_t flat) {
  double m = 0.0;
  const std::size_t width = corpus.width();
  for (const auto& s : corpus.sentences())
    for (std::size_t t = 0; t < s.tokens.size(); ++t)
      m = std::max(m, std::abs(static_cast<double>(s.activations[t * width + flat])));
  return m;
}

}  // namespace detail

/// Activations of one sentence scaled by the neuron's largest absolute
/// activation over the whole corpus.
inline std::vector<TracePoint> trace(const ActivationCorpus& corpus, const NeuronId& neuron, std::size_t sentence_id) {
  const std::size_t flat = corpus.flat_index(neuron);
  const auto& s = corpus.sentence(sentence_id);
  const double scale = detail::max_abs(corpus, flat);
  std::vector<TracePoint> out;
  for (std::size_t t = 0; t < s.tokens.size(); ++t) {
    const double a = s.activations[t * corpus.width() + flat];
    out.push_back({s.tokens[t], a, scale == 0.0 ? 0.0 : std::clamp(a / scale, -1.0, 1.0)});
  }
  return out;
}

/// Per-token mean of the individual normalized traces. `activation` holds
/// the mean raw activation.
inline std::vector<TracePoint> multi_trace(const ActivationCorpus& corpus, std::span<const NeuronId> neurons,
                                           std::size_t sentence_id) {
  if (neurons.empty()) throw InvalidInput("multi_trace: no neurons selected");
  std::vector<TracePoint> out;
  for (const auto& n : neurons) {
    const auto single = trace(corpus, n, sentence_id);
    if (out.empty()) {
      out = single;
      continue;
    }
    for (std::size_t t = 0; t < out.size(); ++t) {
      out[t].activation += single[t].activation;
      out[t].intensity += single[t].intensity;
    }
  }
  const double k = static_cast<double>(neurons.size());
  if (neurons.size() > 1)
    for (auto& p : out) {
      p.activation /= k;
      p.intensity /= k;
    }
  return out;
}

struct NeuronCard {
  NeuronStats stats;
  std::vector<WordActivation> words;
};

inline NeuronCard neuron_card(const ActivationCorpus& corpus, const NeuronId& neuron, std::size_t k = 10,
                              std::size_t min_count = 2) {
  return {neuron_stats(corpus, neuron), top_words(corpus, neuron, k, min_count)};
}

inline nlohmann::ordered_json stats_json(const NeuronStats& s) {
  return {{"neuron", s.neuron.str()}, {"mean", s.mean}, {"variance", s.variance}, {"min", s.min},
          {"max", s.max}, {"mean_abs_dev", s.mean_abs_dev}, {"token_count", s.token_count}};
}

inline nlohmann::ordered_json card_json(const NeuronCard& card) {
  nlohmann::ordered_json words = nlohmann::ordered_json::array();
  for (const auto& w : card.words) words.push_back({{"word", w.word}, {"mean", w.mean}, {"count", w.count}});
  return {{"version", 1}, {"neuron", card.stats.neuron.str()}, {"stats", stats_json(card.stats)},
          {"top_words", std::move(words)}};
}

inline nlohmann::ordered_json trace_json(const std::vector<TracePoint>& points, std::size_t sentence,
                                         const std::vector<std::string>& neurons) {
  nlohmann::ordered_json tokens = nlohmann::ordered_json::array();
  for (const auto& p : points)
    tokens.push_back({{"token", p.token}, {"activation", p.activation}, {"intensity", p.intensity}});
  return {{"version", 1}, {"neurons", neurons}, {"sentence", sentence}, {"tokens", std::move(tokens)}};
}

}  // namespace neuroprobe
