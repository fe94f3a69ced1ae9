#pragma once

#include <algorithm>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "neuroprobe/activation_store.hpp"
#include "neuroprobe/gru_tagger.hpp"
#include "neuroprobe/probe.hpp"
#include "neuroprobe/ranking.hpp"

namespace neuroprobe {

inline constexpr std::string_view kActivationsSuffix = ".activations.jsonl";
inline constexpr std::string_view kLabelsSuffix = ".labels.jsonl";

/// Strips a known suffix from a file name: "base.activations.jsonl" -> "base".
inline std::string artifact_id(const std::filesystem::path& path, std::string_view suffix) {
  const std::string name = path.filename().string();
  if (name.size() > suffix.size() && name.ends_with(suffix)) return name.substr(0, name.size() - suffix.size());
  return path.stem().string();
}

/// Read-only view of a workspace directory:
///   model.json              live toy model (optional)
///   <id>.activations.jsonl  one activation set per model id
///   <task>.labels.jsonl     token labels, usable with any aligned set
///   rankings/*.json         precomputed ranking files
class Workspace {
 public:
  static Workspace load(const std::filesystem::path& dir) {
    if (!std::filesystem::is_directory(dir)) throw std::runtime_error("workspace is not a directory: " + dir.string());
    Workspace ws;
    ws.dir_ = dir;
    std::vector<std::filesystem::path> files;
    for (const auto& entry : std::filesystem::directory_iterator(dir))
      if (entry.is_regular_file()) files.push_back(entry.path());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      const std::string name = f.filename().string();
      if (name.ends_with(kActivationsSuffix))
        ws.activations_.emplace(artifact_id(f, kActivationsSuffix), load_corpus(f));
      else if (name.ends_with(kLabelsSuffix))
        ws.labels_.emplace(artifact_id(f, kLabelsSuffix), load_labels(f));
    }
    if (std::filesystem::exists(dir / "model.json")) ws.model_ = load_model(dir / "model.json");
    if (std::filesystem::is_directory(dir / "rankings")) {
      for (const auto& entry : std::filesystem::directory_iterator(dir / "rankings"))
        if (entry.path().extension() == ".json") ws.ranking_files_.push_back("rankings/" + entry.path().filename().string());
      std::sort(ws.ranking_files_.begin(), ws.ranking_files_.end());
    }
    return ws;
  }

  const std::filesystem::path& dir() const { return dir_; }
  bool empty() const { return activations_.empty(); }
  const std::map<std::string, ActivationCorpus>& activations() const { return activations_; }
  const std::optional<GruTagger>& model() const { return model_; }
  const std::vector<std::string>& ranking_files() const { return ranking_files_; }

  std::vector<std::string> model_ids() const {
    std::vector<std::string> ids;
    for (const auto& [id, _] : activations_) ids.push_back(id);
    return ids;
  }

  std::string default_model() const { return activations_.empty() ? "" : activations_.begin()->first; }

  const ActivationCorpus& corpus(const std::string& id) const {
    auto it = activations_.find(id);
    if (it == activations_.end()) throw OutOfRange("unknown model '" + id + "'");
    return it->second;
  }

  /// Tasks whose labels cover every sentence of the given activation set.
  std::vector<std::string> tasks_for(const std::string& model_id) const {
    std::vector<std::string> out;
    for (const auto& [task, _] : labels_)
      if (labeled_corpus(model_id, task)) out.push_back(task);
    return out;
  }

  std::optional<ActivationCorpus> labeled_corpus(const std::string& model_id, const std::string& task) const {
    auto it = labels_.find(task);
    if (it == labels_.end()) return std::nullopt;
    ActivationCorpus c = corpus(model_id);
    try {
      c.set_labels(it->second);
    } catch (const std::exception&) {
      return std::nullopt;
    }
    return c;
  }

  /// Activation sets aligned with the given one (itself first).
  std::vector<std::string> aligned_with(const std::string& model_id) const {
    const auto& base = corpus(model_id);
    std::vector<std::string> out{model_id};
    for (const auto& [id, c] : activations_) {
      if (id == model_id) continue;
      try {
        detail::check_aligned(base, c);
        out.push_back(id);
      } catch (const InvalidInput&) {
      }
    }
    return out;
  }

  std::vector<std::string> methods_for(const std::string& model_id) const {
    std::vector<std::string> out{"variance", "meandev"};
    if (aligned_with(model_id).size() >= 2) out.push_back("crossmodel");
    for (const auto& t : tasks_for(model_id)) out.push_back("probe:" + t);
    return out;
  }

 private:
  std::filesystem::path dir_;
  std::map<std::string, ActivationCorpus> activations_;
  std::map<std::string, std::map<std::size_t, std::vector<std::string>>> labels_;
  std::optional<GruTagger> model_;
  std::vector<std::string> ranking_files_;
};

/// Thrown when a ranking method's precondition is not met by the data.
class MethodUnavailable : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Computes a ranking by method name; shared by the CLI and the service so
/// both emit identical bytes for identical inputs.
inline RankingResult compute_ranking(const std::string& method, const std::string& model_id,
                                     const std::vector<const ActivationCorpus*>& corpora,
                                     const ActivationCorpus* labeled = nullptr, const ProbeConfig& probe = {}) {
  if (corpora.empty()) throw InvalidInput("no activations given");
  if (method == "variance") return rank_by_variance(*corpora.front(), model_id);
  if (method == "meandev") return rank_by_mean_deviation(*corpora.front(), model_id);
  if (method == "crossmodel") {
    if (corpora.size() < 2) throw MethodUnavailable("crossmodel needs at least 2 aligned activation sets");
    return cross_model_rank(std::span<const ActivationCorpus* const>(corpora), 0, model_id);
  }
  if (method.starts_with("probe:") && method.size() > 6) {
    if (!labeled) throw MethodUnavailable("probe ranking needs labels");
    const auto result = train_probe(*labeled, probe, method.substr(6));
    return rank_by_probe_weights(result.model, model_id);
  }
  throw InvalidInput("unknown ranking method '" + method + "'");
}

}  // namespace neuroprobe
