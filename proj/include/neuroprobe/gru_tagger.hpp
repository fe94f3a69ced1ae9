#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "neuroprobe/error.hpp"
#include "neuroprobe/intervention_spec.hpp"
#include "neuroprobe/random.hpp"
#include "neuroprobe/task.hpp"

namespace neuroprobe {

/// Dense row-major matrix of doubles.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

  std::span<double> row(std::size_t r) { return std::span<double>(data).subspan(r * cols, cols); }
  std::span<const double> row(std::size_t r) const { return std::span<const double>(data).subspan(r * cols, cols); }

  friend bool operator==(const Matrix&, const Matrix&) = default;
};

/// All trainable tensors of the tagger. Gate naming follows the usual GRU
/// convention: z (update), r (reset), n (candidate).
struct GruParameters {
  Matrix embedding;            // V x E
  Matrix update_input;         // H x E
  Matrix update_recurrent;     // H x H
  Matrix update_bias;          // H x 1
  Matrix reset_input;
  Matrix reset_recurrent;
  Matrix reset_bias;
  Matrix candidate_input;
  Matrix candidate_recurrent;
  Matrix candidate_bias;
  Matrix output;               // C x H
  Matrix output_bias;          // C x 1

  GruParameters() = default;
  GruParameters(std::size_t vocab, std::size_t embed, std::size_t hidden, std::size_t classes)
      : embedding(vocab, embed),
        update_input(hidden, embed), update_recurrent(hidden, hidden), update_bias(hidden, 1),
        reset_input(hidden, embed), reset_recurrent(hidden, hidden), reset_bias(hidden, 1),
        candidate_input(hidden, embed), candidate_recurrent(hidden, hidden), candidate_bias(hidden, 1),
        output(classes, hidden), output_bias(classes, 1) {}

  /// Visits every tensor in the fixed canonical order (also the
  /// initialization and serialization order).
  template <typename Self, typename F>
  static void visit(Self& self, F&& fn) {
    fn("embedding", self.embedding);
    fn("update_input", self.update_input);
    fn("update_recurrent", self.update_recurrent);
    fn("update_bias", self.update_bias);
    fn("reset_input", self.reset_input);
    fn("reset_recurrent", self.reset_recurrent);
    fn("reset_bias", self.reset_bias);
    fn("candidate_input", self.candidate_input);
    fn("candidate_recurrent", self.candidate_recurrent);
    fn("candidate_bias", self.candidate_bias);
    fn("output", self.output);
    fn("output_bias", self.output_bias);
  }
  template <typename F> void for_each(F&& fn) { visit(*this, fn); }
  template <typename F> void for_each(F&& fn) const { visit(*this, fn); }

  void zero() {
    for_each([](const char*, Matrix& m) { std::fill(m.data.begin(), m.data.end(), 0.0); });
  }

  friend bool operator==(const GruParameters&, const GruParameters&) = default;
};

struct ForwardResult {
  Matrix hidden;  // T x H
  Matrix logits;  // T x C
  std::vector<std::size_t> predictions;
};

namespace detail {

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Per-step intermediates kept for backpropagation.
struct StepCache {
  std::vector<double> prev, z, r, n, h;
  std::vector<bool> overwritten;
};

inline std::size_t argmax_lowest(std::span<const double> v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

}  // namespace detail

inline void softmax_in_place(std::span<double> v) {
  const double mx = *std::max_element(v.begin(), v.end());
  double sum = 0.0;
  for (double& x : v) sum += (x = std::exp(x - mx));
  for (double& x : v) x /= sum;
}

/// Single-layer unidirectional GRU tagger over a closed vocabulary.
class GruTagger {
 public:
  GruTagger() = default;

  /// Weights uniform in [-0.1, 0.1] drawn in canonical tensor order,
  /// row-major within each tensor; biases zero.
  static GruTagger initialize(const TaskSpec& task, std::size_t embedding_dim, std::size_t hidden_dim,
                              std::uint64_t seed) {
    if (embedding_dim == 0 || hidden_dim == 0) throw InvalidInput("model dimensions must be positive");
    GruTagger m;
    m.task_ = task;
    m.set_vocabulary(task.vocabulary());
    m.params_ = GruParameters(m.vocabulary_.size(), embedding_dim, hidden_dim, task.labels.size());
    Rng rng(seed);
    m.params_.for_each([&](const char*, Matrix& t) {
      if (t.cols == 1) return;  // bias
      for (double& w : t.data) w = rng.uniform(-0.1, 0.1);
    });
    return m;
  }

  const TaskSpec& task() const { return task_; }
  const std::vector<std::string>& vocabulary() const { return vocabulary_; }
  const GruParameters& parameters() const { return params_; }
  GruParameters& parameters() { return params_; }
  std::size_t embedding_dim() const { return params_.embedding.cols; }
  std::size_t hidden_dim() const { return params_.update_recurrent.rows; }
  std::size_t classes() const { return params_.output.rows; }
  std::size_t vocab_size() const { return vocabulary_.size(); }

  std::size_t token_id(const std::string& token) const {
    auto it = token_ids_.find(token);
    if (it == token_ids_.end()) throw InvalidInput("out-of-vocabulary token '" + token + "'");
    return it->second;
  }

  std::vector<std::size_t> encode(const std::vector<std::string>& tokens) const {
    std::vector<std::size_t> ids;
    ids.reserve(tokens.size());
    for (const auto& t : tokens) ids.push_back(token_id(t));
    return ids;
  }

  ForwardResult forward(std::span<const std::size_t> tokens, const InterventionSpec* interventions = nullptr) const {
    return run(tokens, interventions, nullptr);
  }

  ForwardResult forward(std::span<const std::size_t> tokens, const InterventionSpec& interventions) const {
    return run(tokens, &interventions, nullptr);
  }

  /// Summed cross-entropy over the sequence; accumulates `scale` times its
  /// gradient into `grad`.
  double loss_and_gradient(std::span<const std::size_t> tokens, std::span<const std::size_t> labels,
                           GruParameters& grad, double scale) const;

  friend bool operator==(const GruTagger& a, const GruTagger& b) {
    return a.task_.name == b.task_.name && a.vocabulary_ == b.vocabulary_ && a.params_ == b.params_;
  }

  nlohmann::ordered_json to_json() const;
  static GruTagger from_json(const nlohmann::json& j);

 private:
  void set_vocabulary(std::vector<std::string> vocab) {
    vocabulary_ = std::move(vocab);
    token_ids_.clear();
    for (std::size_t i = 0; i < vocabulary_.size(); ++i)
      if (!token_ids_.emplace(vocabulary_[i], i).second) throw InvalidInput("duplicate vocabulary entry");
  }

  ForwardResult run(std::span<const std::size_t> tokens, const InterventionSpec* interventions,
                    std::vector<detail::StepCache>* cache) const;

  TaskSpec task_;
  std::vector<std::string> vocabulary_;
  std::unordered_map<std::string, std::size_t> token_ids_;
  GruParameters params_;
};

inline ForwardResult GruTagger::run(std::span<const std::size_t> tokens, const InterventionSpec* interventions,
                                    std::vector<detail::StepCache>* cache) const {
  const std::size_t H = hidden_dim(), E = embedding_dim(), C = classes(), T = tokens.size();
  const auto& p = params_;

  std::vector<std::pair<std::size_t, double>> overrides;
  if (interventions) {
    interventions->validate();
    for (const auto& [id, action] : interventions->entries) {
      if (id.layer != 0 || id.index >= H)
        throw OutOfRange("neuron " + id.str() + " outside model with 1 layer of " + std::to_string(H));
      overrides.emplace_back(id.index, action.target());
    }
  }
  for (auto t : tokens)
    if (t >= vocab_size()) throw OutOfRange("token id " + std::to_string(t) + " >= vocab size");

  ForwardResult out{Matrix(T, H), Matrix(T, C), std::vector<std::size_t>(T)};
  if (cache) cache->assign(T, {});
  std::vector<double> h(H, 0.0), z(H), r(H), n(H), rh(H);

  for (std::size_t t = 0; t < T; ++t) {
    const auto x = p.embedding.row(tokens[t]);
    for (std::size_t i = 0; i < H; ++i) {
      double az = p.update_bias.data[i], ar = p.reset_bias.data[i];
      for (std::size_t k = 0; k < E; ++k) {
        az += p.update_input(i, k) * x[k];
        ar += p.reset_input(i, k) * x[k];
      }
      for (std::size_t k = 0; k < H; ++k) {
        az += p.update_recurrent(i, k) * h[k];
        ar += p.reset_recurrent(i, k) * h[k];
      }
      z[i] = detail::sigmoid(az);
      r[i] = detail::sigmoid(ar);
    }
    for (std::size_t k = 0; k < H; ++k) rh[k] = r[k] * h[k];
    for (std::size_t i = 0; i < H; ++i) {
      double an = p.candidate_bias.data[i];
      for (std::size_t k = 0; k < E; ++k) an += p.candidate_input(i, k) * x[k];
      for (std::size_t k = 0; k < H; ++k) an += p.candidate_recurrent(i, k) * rh[k];
      n[i] = std::tanh(an);
    }
    std::vector<double> next(H);
    for (std::size_t i = 0; i < H; ++i) next[i] = z[i] * h[i] + (1.0 - z[i]) * n[i];

    std::vector<bool> overwritten;
    if (!overrides.empty()) {
      overwritten.assign(H, false);
      for (const auto& [unit, value] : overrides) {
        next[unit] = value;
        overwritten[unit] = true;
      }
    }
    if (cache) (*cache)[t] = {h, z, r, n, next, std::move(overwritten)};
    h = std::move(next);

    std::copy(h.begin(), h.end(), out.hidden.row(t).begin());
    auto logits = out.logits.row(t);
    for (std::size_t c = 0; c < C; ++c) {
      double a = p.output_bias.data[c];
      for (std::size_t k = 0; k < H; ++k) a += p.output(c, k) * h[k];
      logits[c] = a;
    }
    out.predictions[t] = detail::argmax_lowest(logits);
  }
  return out;
}

inline double GruTagger::loss_and_gradient(std::span<const std::size_t> tokens, std::span<const std::size_t> labels,
                                           GruParameters& grad, double scale) const {
  if (labels.size() != tokens.size()) throw InvalidInput("label/token length mismatch");
  const std::size_t H = hidden_dim(), E = embedding_dim(), C = classes(), T = tokens.size();
  const auto& p = params_;
  std::vector<detail::StepCache> cache;
  const ForwardResult fwd = run(tokens, nullptr, &cache);

  double loss = 0.0;
  Matrix dlogits(T, C);
  for (std::size_t t = 0; t < T; ++t) {
    if (labels[t] >= C) throw OutOfRange("label index out of range");
    std::vector<double> prob(fwd.logits.row(t).begin(), fwd.logits.row(t).end());
    const double mx = *std::max_element(prob.begin(), prob.end());
    double sum = 0.0;
    for (double v : prob) sum += std::exp(v - mx);
    loss += -(prob[labels[t]] - mx - std::log(sum));
    softmax_in_place(prob);
    for (std::size_t c = 0; c < C; ++c) dlogits(t, c) = scale * (prob[c] - (c == labels[t] ? 1.0 : 0.0));
  }

  std::vector<double> dh(H, 0.0), daz(H), dar(H), dan(H), drh(H);
  for (std::size_t ti = T; ti-- > 0;) {
    const auto& s = cache[ti];
    for (std::size_t c = 0; c < C; ++c) {
      const double g = dlogits(ti, c);
      grad.output_bias.data[c] += g;
      for (std::size_t k = 0; k < H; ++k) {
        grad.output(c, k) += g * s.h[k];
        dh[k] += g * p.output(c, k);
      }
    }
    if (!s.overwritten.empty())
      for (std::size_t k = 0; k < H; ++k)
        if (s.overwritten[k]) dh[k] = 0.0;

    // h = z*prev + (1-z)*n
    std::vector<double> dprev(H);
    for (std::size_t i = 0; i < H; ++i) {
      const double dz = dh[i] * (s.prev[i] - s.n[i]);
      const double dn = dh[i] * (1.0 - s.z[i]);
      dprev[i] = dh[i] * s.z[i];
      daz[i] = dz * s.z[i] * (1.0 - s.z[i]);
      dan[i] = dn * (1.0 - s.n[i] * s.n[i]);
    }
    const auto x = p.embedding.row(tokens[ti]);
    auto dx = grad.embedding.row(tokens[ti]);
    std::fill(drh.begin(), drh.end(), 0.0);
    for (std::size_t i = 0; i < H; ++i) {
      grad.candidate_bias.data[i] += dan[i];
      for (std::size_t k = 0; k < E; ++k) {
        grad.candidate_input(i, k) += dan[i] * x[k];
        dx[k] += dan[i] * p.candidate_input(i, k);
      }
      for (std::size_t k = 0; k < H; ++k) {
        grad.candidate_recurrent(i, k) += dan[i] * s.r[k] * s.prev[k];
        drh[k] += dan[i] * p.candidate_recurrent(i, k);
      }
    }
    for (std::size_t k = 0; k < H; ++k) {
      dprev[k] += drh[k] * s.r[k];
      const double dr = drh[k] * s.prev[k];
      dar[k] = dr * s.r[k] * (1.0 - s.r[k]);
    }
    for (std::size_t i = 0; i < H; ++i) {
      grad.update_bias.data[i] += daz[i];
      grad.reset_bias.data[i] += dar[i];
      for (std::size_t k = 0; k < E; ++k) {
        grad.update_input(i, k) += daz[i] * x[k];
        grad.reset_input(i, k) += dar[i] * x[k];
        dx[k] += daz[i] * p.update_input(i, k) + dar[i] * p.reset_input(i, k);
      }
      for (std::size_t k = 0; k < H; ++k) {
        grad.update_recurrent(i, k) += daz[i] * s.prev[k];
        grad.reset_recurrent(i, k) += dar[i] * s.prev[k];
        dprev[k] += daz[i] * p.update_recurrent(i, k) + dar[i] * p.reset_recurrent(i, k);
      }
    }
    dh = std::move(dprev);
  }
  return loss * scale;
}

// ---------------------------------------------------------------------------
// Model file

inline constexpr const char* kModelVersionKey = "neuroprobe-model";

namespace detail {

inline nlohmann::ordered_json matrix_to_json(const Matrix& m) {
  if (m.cols == 1) return nlohmann::ordered_json(m.data);
  nlohmann::ordered_json rows = nlohmann::ordered_json::array();
  for (std::size_t r = 0; r < m.rows; ++r) {
    auto row = m.row(r);
    rows.push_back(std::vector<double>(row.begin(), row.end()));
  }
  return rows;
}

inline void matrix_from_json(const nlohmann::json& j, Matrix& m, const char* name) {
  auto fail = [&] { throw InvalidInput(std::string("parameter '") + name + "' has wrong shape"); };
  if (!j.is_array() || j.size() != m.rows) fail();
  for (std::size_t r = 0; r < m.rows; ++r) {
    if (m.cols == 1) {
      m.data[r] = j[r].get<double>();
      continue;
    }
    if (!j[r].is_array() || j[r].size() != m.cols) fail();
    for (std::size_t c = 0; c < m.cols; ++c) m(r, c) = j[r][c].get<double>();
  }
  for (double v : m.data)
    if (!std::isfinite(v)) throw InvalidInput(std::string("parameter '") + name + "' is not finite");
}

}  // namespace detail

inline nlohmann::ordered_json GruTagger::to_json() const {
  nlohmann::ordered_json j;
  j[kModelVersionKey] = 1;
  j["dims"] = {{"vocab_size", vocab_size()},
               {"embedding", embedding_dim()},
               {"hidden", hidden_dim()},
               {"classes", classes()}};
  j["task"] = nlohmann::json(task_);
  j["labels"] = task_.labels;
  j["vocabulary"] = vocabulary_;
  nlohmann::ordered_json params;
  params_.for_each([&](const char* name, const Matrix& m) { params[name] = detail::matrix_to_json(m); });
  j["parameters"] = std::move(params);
  return j;
}

inline GruTagger GruTagger::from_json(const nlohmann::json& j) {
  try {
    if (j.value(kModelVersionKey, 0) != 1) throw InvalidInput("not a version-1 neuroprobe model");
    GruTagger m;
    m.task_ = j.at("task").get<TaskSpec>();
    m.set_vocabulary(j.at("vocabulary").get<std::vector<std::string>>());
    const auto& dims = j.at("dims");
    const auto V = dims.at("vocab_size").get<std::size_t>(), E = dims.at("embedding").get<std::size_t>(),
               H = dims.at("hidden").get<std::size_t>(), C = dims.at("classes").get<std::size_t>();
    if (V != m.vocabulary_.size() || C != m.task_.labels.size() || E == 0 || H == 0)
      throw InvalidInput("model dims inconsistent with vocabulary or label set");
    m.params_ = GruParameters(V, E, H, C);
    const auto& params = j.at("parameters");
    m.params_.for_each([&](const char* name, Matrix& t) { detail::matrix_from_json(params.at(name), t, name); });
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw InvalidInput(std::string("malformed model file: ") + e.what());
  }
}

inline void save_model(const GruTagger& model, const std::filesystem::path& path,
                       const nlohmann::ordered_json& metadata = {}) {
  auto j = model.to_json();
  if (!metadata.is_null()) j["metadata"] = metadata;
  auto out = detail::open_for_write(path);
  out << j.dump(1) << '\n';
}

inline GruTagger load_model(const std::filesystem::path& path) {
  auto in = detail::open_for_read(path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed model JSON: ") + e.what());
  }
  return GruTagger::from_json(j);
}

}  // namespace neuroprobe
