#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "neuroprobe/activation_store.hpp"
#include "neuroprobe/error.hpp"
#include "neuroprobe/neuron_id.hpp"

namespace neuroprobe {

struct RankedNeuron {
  NeuronId neuron;
  double score = 0.0;
};

/// A full ordering of a corpus's neurons, highest score first; equal scores
/// keep ascending flat index.
struct RankingResult {
  std::string method;
  std::string model_id;
  std::vector<RankedNeuron> entries;

  std::vector<NeuronId> top(std::size_t k) const {
    std::vector<NeuronId> out;
    for (std::size_t i = 0; i < std::min(k, entries.size()); ++i) out.push_back(entries[i].neuron);
    return out;
  }

  std::vector<NeuronId> bottom(std::size_t k) const {
    std::vector<NeuronId> out;
    for (std::size_t i = entries.size() - std::min(k, entries.size()); i < entries.size(); ++i)
      out.push_back(entries[i].neuron);
    return out;
  }
};

/// Builds a ranking from per-flat-index scores.
inline RankingResult rank_scores(std::string method, std::string model_id, std::span<const double> scores,
                                 std::size_t neurons_per_layer) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  RankingResult r{std::move(method), std::move(model_id), {}};
  r.entries.reserve(order.size());
  for (auto i : order) r.entries.push_back({NeuronId::from_flat(i, neurons_per_layer), scores[i]});
  return r;
}

inline nlohmann::ordered_json ranking_to_json(const RankingResult& r) {
  nlohmann::ordered_json entries = nlohmann::ordered_json::array();
  for (const auto& e : r.entries) entries.push_back({{"neuron", e.neuron.str()}, {"score", e.score}});
  return {{"version", 1}, {"method", r.method}, {"model", r.model_id}, {"entries", std::move(entries)}};
}

/// Canonical ranking file bytes, shared by the CLI and the HTTP service.
inline std::string ranking_to_string(const RankingResult& r) { return ranking_to_json(r).dump(2) + "\n"; }

inline RankingResult ranking_from_json(const nlohmann::json& j) {
  try {
    RankingResult r{j.at("method").get<std::string>(), j.at("model").get<std::string>(), {}};
    for (const auto& e : j.at("entries"))
      r.entries.push_back({NeuronId::parse(e.at("neuron").get<std::string>()), e.at("score").get<double>()});
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed ranking: ") + e.what());
  }
}

namespace detail {

template <typename Stat>
RankingResult rank_by_stat(const ActivationCorpus& corpus, std::string method, std::string model_id, Stat stat) {
  if (corpus.total_tokens() < 2) throw InvalidInput("ranking needs at least 2 tokens");
  const auto cols = columns(corpus);
  std::vector<double> scores(cols.size());
  for (std::size_t n = 0; n < cols.size(); ++n) scores[n] = stat(summarize(cols[n]));
  return rank_scores(std::move(method), std::move(model_id), scores, corpus.neurons_per_layer());
}

}  // namespace detail

inline RankingResult rank_by_variance(const ActivationCorpus& corpus, std::string model_id = "") {
  return detail::rank_by_stat(corpus, "variance", std::move(model_id), [](const NeuronStats& s) { return s.variance; });
}

inline RankingResult rank_by_mean_deviation(const ActivationCorpus& corpus, std::string model_id = "") {
  return detail::rank_by_stat(corpus, "meandev", std::move(model_id),
                              [](const NeuronStats& s) { return s.mean_abs_dev; });
}

/// Pearson product-moment correlation, two-pass. Throws for constant input.
inline double pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw InvalidInput("pearson: length mismatch");
  if (x.size() < 2) throw InvalidInput("pearson: need at least 2 values");
  auto constant = [](std::span<const double> v) {
    return std::all_of(v.begin(), v.end(), [&](double a) { return a == v[0]; });
  };
  if (constant(x) || constant(y)) throw InvalidInput("pearson: constant input");
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx, dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) throw InvalidInput("pearson: constant input");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

namespace detail {

// Mean-centered, unit-norm columns; constant columns become empty.
inline std::vector<std::vector<double>> normalized_columns(const ActivationCorpus& corpus) {
  auto cols = columns(corpus);
  for (auto& c : cols) {
    if (std::all_of(c.begin(), c.end(), [&](double v) { return v == c[0]; })) {
      c.clear();
      continue;
    }
    const double mean = std::accumulate(c.begin(), c.end(), 0.0) / static_cast<double>(c.size());
    double ss = 0.0;
    for (double& v : c) {
      v -= mean;
      ss += v * v;
    }
    if (ss == 0.0) {
      c.clear();
      continue;
    }
    const double norm = std::sqrt(ss);
    for (double& v : c) v /= norm;
  }
  return cols;
}

inline void check_aligned(const ActivationCorpus& a, const ActivationCorpus& b) {
  const auto& sa = a.sentences();
  const auto& sb = b.sentences();
  if (sa.size() != sb.size()) throw InvalidInput("corpora differ in sentence count");
  for (std::size_t i = 0; i < sa.size(); ++i)
    if (sa[i].id != sb[i].id || sa[i].tokens != sb[i].tokens)
      throw InvalidInput("corpora are not aligned at sentence " + std::to_string(sa[i].id));
}

}  // namespace detail

/// Scores each neuron of the target corpus by how well some neuron of every
/// other model tracks it: mean over other models of max |pearson|.
inline RankingResult cross_model_rank(std::span<const ActivationCorpus* const> corpora, std::size_t target,
                                      std::string model_id = "") {
  if (corpora.size() < 2) throw InvalidInput("cross-model ranking needs at least 2 corpora");
  if (target >= corpora.size()) throw OutOfRange("target corpus index out of range");
  for (std::size_t m = 0; m < corpora.size(); ++m)
    if (m != target) detail::check_aligned(*corpora[target], *corpora[m]);
  if (corpora[target]->total_tokens() < 2) throw InvalidInput("cross-model ranking needs at least 2 tokens");

  const auto base = detail::normalized_columns(*corpora[target]);
  std::vector<double> scores(base.size(), 0.0);
  for (std::size_t m = 0; m < corpora.size(); ++m) {
    if (m == target) continue;
    const auto other = detail::normalized_columns(*corpora[m]);
    for (std::size_t n = 0; n < base.size(); ++n) {
      if (base[n].empty()) continue;
      double best = 0.0;
      for (const auto& o : other) {
        if (o.empty()) continue;
        double dot = 0.0;
        for (std::size_t t = 0; t < o.size(); ++t) dot += base[n][t] * o[t];
        best = std::max(best, std::min(std::abs(dot), 1.0));
      }
      scores[n] += best;
    }
  }
  for (double& s : scores) s /= static_cast<double>(corpora.size() - 1);
  return rank_scores("crossmodel", std::move(model_id), scores, corpora[target]->neurons_per_layer());
}

inline RankingResult cross_model_rank(const std::vector<ActivationCorpus>& corpora, std::size_t target,
                                      std::string model_id = "") {
  std::vector<const ActivationCorpus*> ptrs;
  for (const auto& c : corpora) ptrs.push_back(&c);
  return cross_model_rank(std::span<const ActivationCorpus* const>(ptrs), target, std::move(model_id));
}

}  // namespace neuroprobe
