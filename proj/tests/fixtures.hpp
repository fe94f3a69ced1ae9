#pragma once

// Shared corpora for probe, intervention and acceptance tests.

#include <cstdint>
#include <map>
#include <string>

#include "neuroprobe/neuroprobe.hpp"

namespace fixture {

// Two-class corpus where only `planted` carries the label (+1/-1 plus small
// noise); every other neuron is i.i.d. standard normal.
inline neuroprobe::ActivationCorpus planted_signal(std::uint64_t seed, std::size_t neurons = 8,
                                                   std::size_t planted = 5, std::size_t n_sentences = 60) {
  neuroprobe::Rng rng(seed);
  neuroprobe::ActivationCorpus c(1, neurons);
  for (std::size_t id = 0; id < n_sentences; ++id) {
    neuroprobe::SentenceRecord r;
    r.id = id;
    std::vector<std::string> labels;
    const std::size_t len = 3 + rng.below(6);
    for (std::size_t t = 0; t < len; ++t) {
      const bool yes = rng.below(2) == 1;
      r.tokens.push_back(yes ? "yes" + std::to_string(rng.below(3)) : "no" + std::to_string(rng.below(3)));
      labels.push_back(yes ? "yes" : "no");
      for (std::size_t j = 0; j < neurons; ++j)
        r.activations.push_back(static_cast<float>(j == planted ? (yes ? 1.0 : -1.0) + 0.3 * rng.normal()
                                                                : rng.normal()));
    }
    r.labels = labels;
    c.add(std::move(r));
  }
  return c;
}

// Two Gaussian blobs in 4 dimensions whose means are 2 standard deviations
// apart along every axis.
inline neuroprobe::ActivationCorpus separable_blobs(std::uint64_t seed, std::size_t n_sentences = 40) {
  neuroprobe::Rng rng(seed);
  neuroprobe::ActivationCorpus c(1, 4);
  for (std::size_t id = 0; id < n_sentences; ++id) {
    neuroprobe::SentenceRecord r;
    r.id = id;
    std::vector<std::string> labels;
    for (std::size_t t = 0; t < 4; ++t) {
      const bool pos = rng.below(2) == 1;
      r.tokens.push_back("x");
      labels.push_back(pos ? "pos" : "neg");
      for (std::size_t j = 0; j < 4; ++j)
        r.activations.push_back(static_cast<float>((pos ? 1.0 : -1.0) + 0.25 * rng.normal()));
    }
    r.labels = labels;
    c.add(std::move(r));
  }
  return c;
}

struct TrainedPosition {
  neuroprobe::TextCorpus text;
  neuroprobe::GruTagger model;
  neuroprobe::ActivationCorpus activations;
  double final_accuracy = 0.0;
};

// Position-task tagger with the default configuration (2000 sentences,
// E=16, H=32, 15 epochs), memoized per seed.
inline const TrainedPosition& trained_position(std::uint64_t seed) {
  static std::map<std::uint64_t, TrainedPosition> cache;
  auto it = cache.find(seed);
  if (it != cache.end()) return it->second;
  auto text = neuroprobe::generate_corpus(neuroprobe::TaskSpec::make("position"), 2000, seed);
  neuroprobe::TrainConfig cfg;
  cfg.seed = seed;
  auto result = neuroprobe::train(
      neuroprobe::GruTagger::initialize(text.task, cfg.embedding_dim, cfg.hidden_dim, seed), text, cfg);
  auto acts = neuroprobe::extract_activations(result.model, text);
  const double acc = result.epochs.back().accuracy;
  return cache
      .emplace(seed, TrainedPosition{std::move(text), std::move(result.model), std::move(acts), acc})
      .first->second;
}

// Probe settings with a stronger L1 term, used where a sparse ranking over
// the redundant tagger units is wanted.
inline neuroprobe::ProbeConfig sparse_probe(std::uint64_t seed) {
  neuroprobe::ProbeConfig pc;
  pc.seed = seed;
  pc.lambda1 = 0.05;
  pc.epochs = 100;
  return pc;
}

}  // namespace fixture
