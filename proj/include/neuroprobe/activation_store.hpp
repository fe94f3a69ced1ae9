#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "neuroprobe/error.hpp"
#include "neuroprobe/neuron_id.hpp"

namespace neuroprobe {

inline constexpr const char* kActivationsFormat = "neuroprobe-activations";
inline constexpr int kActivationsVersion = 1;

/// One tokenized sentence with a row of activations per token. Rows are
/// stored contiguously, layer-major within a row.
struct SentenceRecord {
  std::size_t id = 0;
  std::vector<std::string> tokens;
  std::vector<float> activations;  // tokens.size() x width
  std::optional<std::vector<std::string>> labels;

  std::span<const float> row(std::size_t token, std::size_t width) const {
    return std::span<const float>(activations).subspan(token * width, width);
  }
};

struct NeuronStats {
  NeuronId neuron;
  double mean = 0.0;
  double variance = 0.0;  // population
  double min = 0.0;
  double max = 0.0;
  double mean_abs_dev = 0.0;
  std::size_t token_count = 0;
};

class ActivationCorpus {
 public:
  ActivationCorpus() = default;
  ActivationCorpus(std::size_t layers, std::size_t neurons_per_layer)
      : layers_(layers), neurons_per_layer_(neurons_per_layer) {
    if (layers == 0 || neurons_per_layer == 0) throw InvalidInput("corpus dimensions must be positive");
  }

  std::size_t layers() const { return layers_; }
  std::size_t neurons_per_layer() const { return neurons_per_layer_; }
  std::size_t width() const { return layers_ * neurons_per_layer_; }
  const std::vector<SentenceRecord>& sentences() const { return sentences_; }

  std::size_t total_tokens() const {
    std::size_t n = 0;
    for (const auto& s : sentences_) n += s.tokens.size();
    return n;
  }

  bool labeled() const {
    return !sentences_.empty() &&
           std::all_of(sentences_.begin(), sentences_.end(), [](const auto& s) { return s.labels.has_value(); });
  }

  /// Validates and inserts a sentence, keeping ids sorted.
  void add(SentenceRecord record) {
    if (record.tokens.empty()) throw InvalidInput("sentence " + std::to_string(record.id) + " has no tokens");
    if (record.activations.size() != record.tokens.size() * width())
      throw InvalidInput("sentence " + std::to_string(record.id) + ": activation width mismatch");
    for (float v : record.activations)
      if (!std::isfinite(v)) throw InvalidInput("sentence " + std::to_string(record.id) + ": non-finite value");
    if (record.labels && record.labels->size() != record.tokens.size())
      throw InvalidInput("sentence " + std::to_string(record.id) + ": label/token length mismatch");
    auto pos = std::lower_bound(sentences_.begin(), sentences_.end(), record.id,
                                [](const SentenceRecord& s, std::size_t id) { return s.id < id; });
    if (pos != sentences_.end() && pos->id == record.id)
      throw InvalidInput("duplicate sentence id " + std::to_string(record.id));
    sentences_.insert(pos, std::move(record));
  }

  const SentenceRecord& sentence(std::size_t id) const {
    auto pos = std::lower_bound(sentences_.begin(), sentences_.end(), id,
                                [](const SentenceRecord& s, std::size_t i) { return s.id < i; });
    if (pos == sentences_.end() || pos->id != id) throw OutOfRange("unknown sentence id " + std::to_string(id));
    return *pos;
  }

  /// Attaches labels keyed by sentence id. Every sentence must be covered.
  void set_labels(const std::map<std::size_t, std::vector<std::string>>& labels) {
    for (const auto& [id, _] : labels) sentence(id);
    for (auto& s : sentences_) {
      auto it = labels.find(s.id);
      if (it == labels.end()) throw InvalidInput("no labels for sentence " + std::to_string(s.id));
      if (it->second.size() != s.tokens.size())
        throw InvalidInput("sentence " + std::to_string(s.id) + ": label/token length mismatch");
      s.labels = it->second;
    }
  }

  std::size_t flat_index(const NeuronId& n) const {
    if (n.layer >= layers_ || n.index >= neurons_per_layer_)
      throw OutOfRange("neuron " + n.str() + " outside " + std::to_string(layers_) + "x" +
                       std::to_string(neurons_per_layer_) + " corpus");
    return n.flat(neurons_per_layer_);
  }

  NeuronId neuron(std::size_t flat) const { return NeuronId::from_flat(flat, neurons_per_layer_); }

 private:
  std::size_t layers_ = 0;
  std::size_t neurons_per_layer_ = 0;
  std::vector<SentenceRecord> sentences_;
};

/// One neuron's activations over every token, sentences in id order.
inline std::vector<double> column(const ActivationCorpus& corpus, const NeuronId& neuron) {
  const std::size_t flat = corpus.flat_index(neuron);
  const std::size_t width = corpus.width();
  std::vector<double> out;
  out.reserve(corpus.total_tokens());
  for (const auto& s : corpus.sentences())
    for (std::size_t t = 0; t < s.tokens.size(); ++t) out.push_back(s.activations[t * width + flat]);
  return out;
}

/// All columns at once, neuron-major (width x total_tokens).
inline std::vector<std::vector<double>> columns(const ActivationCorpus& corpus) {
  const std::size_t width = corpus.width();
  std::vector<std::vector<double>> out(width);
  for (auto& c : out) c.reserve(corpus.total_tokens());
  for (const auto& s : corpus.sentences())
    for (std::size_t t = 0; t < s.tokens.size(); ++t)
      for (std::size_t n = 0; n < width; ++n) out[n].push_back(s.activations[t * width + n]);
  return out;
}

/// Summary statistics of a sample, two-pass in double precision.
inline NeuronStats summarize(std::span<const double> values) {
  if (values.empty()) throw InvalidInput("statistics need at least one value");
  NeuronStats st;
  st.token_count = values.size();
  const double n = static_cast<double>(values.size());
  double sum = 0.0;
  st.min = st.max = values[0];
  for (double v : values) {
    sum += v;
    st.min = std::min(st.min, v);
    st.max = std::max(st.max, v);
  }
  st.mean = sum / n;
  double sq = 0.0, ab = 0.0;
  for (double v : values) {
    const double d = v - st.mean;
    sq += d * d;
    ab += std::abs(d);
  }
  st.variance = sq / n;
  st.mean_abs_dev = ab / n;
  // Rounding can push the mean a hair outside [min, max] for near-constant data.
  st.mean = std::clamp(st.mean, st.min, st.max);
  if (st.min == st.max) st.variance = st.mean_abs_dev = 0.0;
  return st;
}

inline NeuronStats neuron_stats(const ActivationCorpus& corpus, const NeuronId& neuron) {
  corpus.flat_index(neuron);
  if (corpus.total_tokens() == 0) throw InvalidInput("corpus has no tokens");
  const auto col = column(corpus, neuron);
  NeuronStats st = summarize(col);
  st.neuron = neuron;
  return st;
}

// ---------------------------------------------------------------------------
// File formats

namespace detail {

inline std::ofstream open_for_write(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  return out;
}

inline std::ifstream open_for_read(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  return in;
}

inline nlohmann::json parse_line(const std::string& line, std::size_t lineno) {
  try {
    auto j = nlohmann::json::parse(line);
    if (!j.is_object()) throw FormatError("expected a JSON object", lineno);
    return j;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed JSON: ") + e.what(), lineno);
  }
}

template <typename T>
T get_field(const nlohmann::json& j, const char* key, std::size_t lineno) {
  auto it = j.find(key);
  if (it == j.end()) throw FormatError(std::string("missing key '") + key + "'", lineno);
  try {
    return it->get<T>();
  } catch (const nlohmann::json::exception&) {
    throw FormatError(std::string("bad value for '") + key + "'", lineno);
  }
}

}  // namespace detail

inline std::map<std::size_t, std::vector<std::string>> load_labels(const std::filesystem::path& path) {
  auto in = detail::open_for_read(path);
  std::map<std::size_t, std::vector<std::string>> out;
  std::string line;
  for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
    if (line.empty()) continue;
    auto j = detail::parse_line(line, lineno);
    auto id = detail::get_field<std::size_t>(j, "id", lineno);
    if (!out.emplace(id, detail::get_field<std::vector<std::string>>(j, "labels", lineno)).second)
      throw FormatError("duplicate sentence id " + std::to_string(id), lineno);
  }
  return out;
}

inline void save_labels(const ActivationCorpus& corpus, const std::filesystem::path& path) {
  auto out = detail::open_for_write(path);
  for (const auto& s : corpus.sentences()) {
    if (!s.labels) throw InvalidInput("sentence " + std::to_string(s.id) + " has no labels");
    out << nlohmann::json{{"id", s.id}, {"labels", *s.labels}}.dump() << '\n';
  }
}

/// Reads an activations file (and optionally its labels file), validating
/// every invariant of the data model.
inline ActivationCorpus load_corpus(const std::filesystem::path& path,
                                    const std::optional<std::filesystem::path>& labels_path = std::nullopt) {
  auto in = detail::open_for_read(path);
  std::string line;
  if (!std::getline(in, line)) throw FormatError("empty activations file", 1);
  auto header = detail::parse_line(line, 1);
  if (header.value("format", "") != kActivationsFormat)
    throw FormatError("not a neuroprobe activations file", 1);
  if (detail::get_field<int>(header, "version", 1) != kActivationsVersion)
    throw FormatError("unsupported activations version", 1);
  const auto layers = detail::get_field<std::size_t>(header, "layers", 1);
  const auto npl = detail::get_field<std::size_t>(header, "neurons_per_layer", 1);
  if (layers == 0 || npl == 0) throw FormatError("dimensions must be positive", 1);
  ActivationCorpus corpus(layers, npl);
  const std::size_t width = corpus.width();

  for (std::size_t lineno = 2; std::getline(in, line); ++lineno) {
    if (line.empty()) continue;
    auto j = detail::parse_line(line, lineno);
    SentenceRecord rec;
    rec.id = detail::get_field<std::size_t>(j, "id", lineno);
    rec.tokens = detail::get_field<std::vector<std::string>>(j, "tokens", lineno);
    auto rows = j.find("activations");
    if (rows == j.end() || !rows->is_array()) throw FormatError("missing activations array", lineno);
    if (rows->size() != rec.tokens.size()) throw FormatError("activation row count != token count", lineno);
    rec.activations.reserve(rec.tokens.size() * width);
    for (const auto& row : *rows) {
      if (!row.is_array() || row.size() != width) throw FormatError("width mismatch", lineno);
      for (const auto& v : row) {
        if (!v.is_number()) throw FormatError("non-numeric activation", lineno);
        const float f = static_cast<float>(v.get<double>());
        if (!std::isfinite(f)) throw FormatError("non-finite value", lineno);
        rec.activations.push_back(f);
      }
    }
    try {
      corpus.add(std::move(rec));
    } catch (const InvalidInput& e) {
      throw FormatError(e.what(), lineno);
    }
  }
  if (labels_path) corpus.set_labels(load_labels(*labels_path));
  return corpus;
}

/// Canonical serialization. Each 32-bit value is written as the shortest
/// decimal of its exact double widening, so reloading is bit-exact.
inline void save_corpus(const ActivationCorpus& corpus, const std::filesystem::path& path) {
  auto out = detail::open_for_write(path);
  nlohmann::ordered_json header = {{"format", kActivationsFormat},
                                   {"version", kActivationsVersion},
                                   {"layers", corpus.layers()},
                                   {"neurons_per_layer", corpus.neurons_per_layer()}};
  out << header.dump() << '\n';
  const std::size_t width = corpus.width();
  for (const auto& s : corpus.sentences()) {
    nlohmann::ordered_json rows = nlohmann::ordered_json::array();
    for (std::size_t t = 0; t < s.tokens.size(); ++t) {
      nlohmann::ordered_json row = nlohmann::ordered_json::array();
      for (float v : s.row(t, width)) row.push_back(static_cast<double>(v));
      rows.push_back(std::move(row));
    }
    nlohmann::ordered_json line = {{"id", s.id}, {"tokens", s.tokens}, {"activations", std::move(rows)}};
    out << line.dump() << '\n';
  }
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

}  // namespace neuroprobe
