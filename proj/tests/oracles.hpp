#pragma once

// Independent reference implementations used only by tests: direct-formula
// statistics in extended precision, losses recomputed from forward outputs,
// and central finite differences.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "neuroprobe/gru_tagger.hpp"
#include "neuroprobe/random.hpp"

namespace oracle {

inline long double mean(std::span<const double> x) {
  long double s = 0;
  for (double v : x) s += v;
  return s / x.size();
}

inline long double variance(std::span<const double> x) {
  const long double m = mean(x);
  long double s = 0;
  for (double v : x) s += (v - m) * (v - m);
  return s / x.size();
}

inline long double mean_abs_dev(std::span<const double> x) {
  const long double m = mean(x);
  long double s = 0;
  for (double v : x) s += std::fabs(static_cast<long double>(v) - m);
  return s / x.size();
}

inline long double pearson(std::span<const double> x, std::span<const double> y) {
  const long double mx = mean(x), my = mean(y);
  long double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  return sxy / std::sqrt(sxx * syy);
}

// Summed token cross-entropy recomputed from the model's forward logits.
inline double sequence_cross_entropy(const neuroprobe::GruTagger& model, std::span<const std::size_t> tokens,
                                     std::span<const std::size_t> labels) {
  const auto fwd = model.forward(tokens);
  double loss = 0.0;
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    const auto row = fwd.logits.row(t);
    long double z = 0;
    for (double a : row) z += std::exp(static_cast<long double>(a));
    loss += static_cast<double>(std::log(z) - row[labels[t]]);
  }
  return loss;
}

// Mean softmax cross-entropy + lambda1*|W|_1 + lambda2*|W|^2, direct formula.
inline double probe_objective(const neuroprobe::Matrix& W, std::span<const double> b, const neuroprobe::Matrix& X,
                              std::span<const std::size_t> y, double lambda1, double lambda2) {
  long double total = 0;
  for (std::size_t t = 0; t < X.rows; ++t) {
    std::vector<long double> logit(W.rows);
    for (std::size_t c = 0; c < W.rows; ++c) {
      logit[c] = b[c];
      for (std::size_t j = 0; j < W.cols; ++j) logit[c] += W(c, j) * X(t, j);
    }
    long double z = 0;
    for (auto a : logit) z += std::exp(a);
    total += std::log(z) - logit[y[t]];
  }
  long double pen = 0;
  for (double w : W.data) pen += lambda1 * std::fabs(w) + lambda2 * w * w;
  return static_cast<double>(total / X.rows + pen);
}

inline double central_difference(const std::function<double()>& f, double& x, double h = 1e-5) {
  const double orig = x;
  x = orig + h;
  const double up = f();
  x = orig - h;
  const double down = f();
  x = orig;
  return (up - down) / (2.0 * h);
}

// |a - n| / max(|a|, |n|), guarded for entries that are zero in both.
inline double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-6});
}

struct GradCheck {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
};

// Compares a model's BPTT gradient with central differences of the
// forward-pass loss for every parameter.
inline GradCheck check_gru_gradient(neuroprobe::GruTagger& model, const std::vector<std::size_t>& tokens,
                                    const std::vector<std::size_t>& labels, double h = 1e-5) {
  neuroprobe::GruParameters grad = model.parameters();
  grad.zero();
  model.loss_and_gradient(tokens, labels, grad, 1.0);
  std::vector<neuroprobe::Matrix*> params;
  std::vector<const neuroprobe::Matrix*> grads;
  model.parameters().for_each([&](const char*, neuroprobe::Matrix& m) { params.push_back(&m); });
  grad.for_each([&](const char*, const neuroprobe::Matrix& m) { grads.push_back(&m); });
  GradCheck out;
  auto loss = [&] { return sequence_cross_entropy(model, tokens, labels); };
  for (std::size_t k = 0; k < params.size(); ++k)
    for (std::size_t i = 0; i < params[k]->data.size(); ++i) {
      const double numeric = central_difference(loss, params[k]->data[i], h);
      out.max_rel_error = std::max(out.max_rel_error, relative_error(grads[k]->data[i], numeric));
      ++out.checked;
    }
  return out;
}

// Random small tagger with weights large enough to exercise nonlinearity.
inline neuroprobe::GruTagger random_tagger(neuroprobe::Rng& rng, std::size_t vocab, std::size_t embed,
                                           std::size_t hidden, std::size_t classes) {
  auto task = neuroprobe::TaskSpec::make("position", vocab - 1, 2, 5);
  auto model = neuroprobe::GruTagger::initialize(task, embed, hidden, rng.next());
  // Rebuild with the requested class count by truncating the output layer.
  auto& p = model.parameters();
  p.output = neuroprobe::Matrix(classes, hidden);
  p.output_bias = neuroprobe::Matrix(classes, 1);
  p.for_each([&](const char*, neuroprobe::Matrix& m) {
    for (double& w : m.data) w = rng.uniform(-0.8, 0.8);
  });
  return model;
}

}  // namespace oracle
