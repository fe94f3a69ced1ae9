#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "neuroprobe/activation_store.hpp"
#include "neuroprobe/error.hpp"
#include "neuroprobe/random.hpp"

namespace neuroprobe {

inline constexpr std::array<std::string_view, 12> kMonthNames = {
    "january", "february", "march",     "april",   "may",      "june",
    "july",    "august",   "september", "october", "november", "december"};

// Every generated sentence ends with this token.
inline constexpr std::string_view kEndOfSentence = "</s>";

inline constexpr const char* kTextFormat = "neuroprobe-text";

/// A synthetic tagging task.
struct TaskSpec {
  std::string name;
  std::size_t vocab_size = 50;
  std::size_t min_length = 4;
  std::size_t max_length = 12;
  std::vector<std::string> labels;

  static TaskSpec make(std::string_view name, std::size_t vocab_size = 50, std::size_t min_length = 4,
                       std::size_t max_length = 12) {
    TaskSpec t;
    t.name = std::string(name);
    t.vocab_size = vocab_size;
    t.min_length = min_length;
    t.max_length = max_length;
    if (name == "position")
      t.labels = {"first", "mid", "last"};
    else if (name == "month")
      t.labels = {"month", "other"};
    else if (name == "eos-distance")
      t.labels = {"eos-1", "eos-2", "far"};
    else
      throw InvalidInput("unknown task '" + std::string(name) + "'");
    if (vocab_size == 0) throw InvalidInput("vocab_size must be positive");
    if (min_length < 1 || min_length > max_length) throw InvalidInput("bad sentence length range");
    return t;
  }

  /// Closed vocabulary: w0..w{V-1}, the month names (month task only), then
  /// the end-of-sentence token.
  std::vector<std::string> vocabulary() const {
    std::vector<std::string> v;
    for (std::size_t i = 0; i < vocab_size; ++i) v.push_back("w" + std::to_string(i));
    if (name == "month")
      for (auto m : kMonthNames) v.emplace_back(m);
    v.emplace_back(kEndOfSentence);
    return v;
  }

  std::size_t label_index(std::string_view label) const {
    auto it = std::find(labels.begin(), labels.end(), label);
    if (it == labels.end()) throw InvalidInput("label '" + std::string(label) + "' not in task " + name);
    return static_cast<std::size_t>(it - labels.begin());
  }
};

inline void to_json(nlohmann::json& j, const TaskSpec& t) {
  j = nlohmann::json{{"name", t.name},
                     {"vocab_size", t.vocab_size},
                     {"sentence_length_range", {t.min_length, t.max_length}},
                     {"labels", t.labels}};
}

inline void from_json(const nlohmann::json& j, TaskSpec& t) {
  const auto range = j.at("sentence_length_range").get<std::array<std::size_t, 2>>();
  t = TaskSpec::make(j.at("name").get<std::string>(), j.at("vocab_size").get<std::size_t>(), range[0], range[1]);
  if (j.at("labels").get<std::vector<std::string>>() != t.labels)
    throw InvalidInput("label set does not match task " + t.name);
}

/// Applies the task's labeling rule to a token sequence.
inline std::vector<std::string> label_tokens(const TaskSpec& task, const std::vector<std::string>& tokens) {
  const std::size_t n = tokens.size();
  std::vector<std::string> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (task.name == "position") {
      out[i] = i == 0 ? "first" : i + 1 == n ? "last" : "mid";
    } else if (task.name == "month") {
      const bool is_month = std::find(kMonthNames.begin(), kMonthNames.end(), tokens[i]) != kMonthNames.end();
      out[i] = is_month ? "month" : "other";
    } else if (task.name == "eos-distance") {
      const std::size_t to_end = n - i;
      out[i] = to_end == 1 ? "eos-1" : to_end == 2 ? "eos-2" : "far";
    } else {
      throw InvalidInput("unknown task '" + task.name + "'");
    }
  }
  return out;
}

struct LabeledSentence {
  std::size_t id = 0;
  std::vector<std::string> tokens;
  std::vector<std::string> labels;
};

struct TextCorpus {
  TaskSpec task;
  std::uint64_t seed = 0;
  std::vector<LabeledSentence> sentences;

  std::size_t total_tokens() const {
    std::size_t n = 0;
    for (const auto& s : sentences) n += s.tokens.size();
    return n;
  }
};

/// Draws n sentences for the task. Lengths are uniform in the task's range
/// and the last token is always the end-of-sentence marker.
inline TextCorpus generate_corpus(const TaskSpec& task, std::size_t n_sentences, std::uint64_t seed) {
  if (n_sentences == 0) throw InvalidInput("n_sentences must be positive");
  TaskSpec::make(task.name, task.vocab_size, task.min_length, task.max_length);
  TextCorpus corpus{task, seed, {}};
  Rng rng(seed);
  const std::size_t span = task.max_length - task.min_length + 1;
  for (std::size_t id = 0; id < n_sentences; ++id) {
    const std::size_t len = task.min_length + rng.below(span);
    LabeledSentence s;
    s.id = id;
    for (std::size_t i = 0; i + 1 < len; ++i) {
      if (task.name == "month" && rng.uniform() < 0.2)
        s.tokens.emplace_back(kMonthNames[rng.below(kMonthNames.size())]);
      else
        s.tokens.push_back("w" + std::to_string(rng.below(task.vocab_size)));
    }
    s.tokens.emplace_back(kEndOfSentence);
    s.labels = label_tokens(task, s.tokens);
    corpus.sentences.push_back(std::move(s));
  }
  return corpus;
}

// ---------------------------------------------------------------------------
// Text corpus directory: corpus.jsonl (header + labeled sentences) and a
// <task>.labels.jsonl file in the activation labels format.

inline std::filesystem::path text_corpus_file(const std::filesystem::path& dir) { return dir / "corpus.jsonl"; }

inline void save_text_corpus(const TextCorpus& corpus, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  {
    auto out = detail::open_for_write(text_corpus_file(dir));
    nlohmann::ordered_json header = {{"format", kTextFormat},
                                     {"version", 1},
                                     {"task", nlohmann::json(corpus.task)},
                                     {"seed", corpus.seed},
                                     {"sentences", corpus.sentences.size()}};
    out << header.dump() << '\n';
    for (const auto& s : corpus.sentences)
      out << nlohmann::ordered_json{{"id", s.id}, {"tokens", s.tokens}, {"labels", s.labels}}.dump() << '\n';
  }
  auto out = detail::open_for_write(dir / (corpus.task.name + ".labels.jsonl"));
  for (const auto& s : corpus.sentences)
    out << nlohmann::ordered_json{{"id", s.id}, {"labels", s.labels}}.dump() << '\n';
}

inline TextCorpus load_text_corpus(const std::filesystem::path& dir) {
  auto in = detail::open_for_read(text_corpus_file(dir));
  std::string line;
  if (!std::getline(in, line)) throw FormatError("empty text corpus", 1);
  auto header = detail::parse_line(line, 1);
  if (header.value("format", "") != kTextFormat) throw FormatError("not a neuroprobe text corpus", 1);
  TextCorpus corpus;
  try {
    corpus.task = header.at("task").get<TaskSpec>();
    corpus.seed = header.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(e.what(), 1);
  } catch (const InvalidInput& e) {
    throw FormatError(e.what(), 1);
  }
  for (std::size_t lineno = 2; std::getline(in, line); ++lineno) {
    if (line.empty()) continue;
    auto j = detail::parse_line(line, lineno);
    LabeledSentence s;
    s.id = detail::get_field<std::size_t>(j, "id", lineno);
    s.tokens = detail::get_field<std::vector<std::string>>(j, "tokens", lineno);
    s.labels = detail::get_field<std::vector<std::string>>(j, "labels", lineno);
    if (s.tokens.empty()) throw FormatError("empty sentence", lineno);
    if (s.labels.size() != s.tokens.size()) throw FormatError("label/token length mismatch", lineno);
    for (const auto& l : s.labels) {
      try {
        corpus.task.label_index(l);
      } catch (const InvalidInput& e) {
        throw FormatError(e.what(), lineno);
      }
    }
    if (!corpus.sentences.empty() && corpus.sentences.back().id >= s.id)
      throw FormatError("sentence ids must be unique and ascending", lineno);
    corpus.sentences.push_back(std::move(s));
  }
  return corpus;
}

/// Rebuilds a labeled text corpus from an activation dump, labeling with the
/// task rule.
inline TextCorpus text_from_activations(const ActivationCorpus& acts, const TaskSpec& task) {
  TextCorpus out{task, 0, {}};
  for (const auto& s : acts.sentences()) out.sentences.push_back({s.id, s.tokens, label_tokens(task, s.tokens)});
  return out;
}

}  // namespace neuroprobe
