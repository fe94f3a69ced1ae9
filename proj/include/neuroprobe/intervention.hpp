#pragma once

#include <cmath>
#include <cstddef>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "neuroprobe/activation_store.hpp"
#include "neuroprobe/gru_tagger.hpp"
#include "neuroprobe/intervention_spec.hpp"
#include "neuroprobe/task.hpp"
#include "neuroprobe/training.hpp"

namespace neuroprobe {

struct PredictionDiff {
  std::size_t sentence = 0;
  std::size_t token = 0;
  std::string before;
  std::string after;

  friend bool operator==(const PredictionDiff&, const PredictionDiff&) = default;
};

struct EffectReport {
  double baseline_accuracy = 0.0;
  double intervened_accuracy = 0.0;
  std::vector<PredictionDiff> diffs;  // sentence id order, then token order
  std::size_t total_tokens = 0;
  double changed_token_fraction = 0.0;

  friend bool operator==(const EffectReport&, const EffectReport&) = default;
};

/// Runs every sentence with and without the spec and compares predictions.
inline EffectReport manipulate(const GruTagger& model, const TextCorpus& corpus, const InterventionSpec& spec) {
  spec.validate();
  for (const auto& [id, _] : spec.entries)
    if (id.layer != 0 || id.index >= model.hidden_dim())
      throw OutOfRange("neuron " + id.str() + " outside model with 1 layer of " + std::to_string(model.hidden_dim()));
  const auto data = encode_corpus(model, corpus);

  EffectReport report;
  std::size_t base_correct = 0, new_correct = 0;
  const auto& labels = model.task().labels;
  for (const auto& s : data) {
    const auto before = model.forward(s.tokens);
    const auto after = model.forward(s.tokens, spec);
    for (std::size_t t = 0; t < s.tokens.size(); ++t) {
      base_correct += before.predictions[t] == s.labels[t];
      new_correct += after.predictions[t] == s.labels[t];
      if (before.predictions[t] != after.predictions[t])
        report.diffs.push_back({s.id, t, labels[before.predictions[t]], labels[after.predictions[t]]});
    }
    report.total_tokens += s.tokens.size();
  }
  if (report.total_tokens) {
    const double n = static_cast<double>(report.total_tokens);
    report.baseline_accuracy = static_cast<double>(base_correct) / n;
    report.intervened_accuracy = static_cast<double>(new_correct) / n;
    report.changed_token_fraction = static_cast<double>(report.diffs.size()) / n;
  }
  return report;
}

inline InterventionSpec ablation_spec(const std::set<NeuronId>& neurons) {
  InterventionSpec spec;
  for (const auto& n : neurons) spec.entries.emplace(n, InterventionAction::ablate());
  return spec;
}

/// Clamps the given neurons to zero.
inline EffectReport ablate(const GruTagger& model, const TextCorpus& corpus, const std::set<NeuronId>& neurons) {
  return manipulate(model, corpus, ablation_spec(neurons));
}

/// mean + k standard deviations of the neuron's activations; a scale for
/// manipulation values.
inline double sigma_clamp_value(const NeuronStats& stats, double k) { return stats.mean + k * std::sqrt(stats.variance); }

/// Keeps only sentences whose ids are listed.
inline TextCorpus restrict_to(const TextCorpus& corpus, const std::set<std::size_t>& ids) {
  TextCorpus out{corpus.task, corpus.seed, {}};
  for (const auto& s : corpus.sentences)
    if (ids.count(s.id)) out.sentences.push_back(s);
  if (out.sentences.size() != ids.size()) throw OutOfRange("scope names unknown sentence ids");
  return out;
}

inline nlohmann::ordered_json effect_report_json(const EffectReport& r) {
  nlohmann::ordered_json diffs = nlohmann::ordered_json::array();
  for (const auto& d : r.diffs)
    diffs.push_back({{"sentence", d.sentence}, {"token", d.token}, {"before", d.before}, {"after", d.after}});
  return {{"version", 1},
          {"baseline_accuracy", r.baseline_accuracy},
          {"intervened_accuracy", r.intervened_accuracy},
          {"total_tokens", r.total_tokens},
          {"changed_token_fraction", r.changed_token_fraction},
          {"diffs", std::move(diffs)}};
}

}  // namespace neuroprobe
