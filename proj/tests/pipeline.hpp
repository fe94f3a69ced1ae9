#pragma once

// Drives the CLI through a full generate -> train -> extract -> rank ->
// probe -> intervene run. The output directory is also a valid service
// workspace (model.json, m1/m2 activation sets, position labels, rankings/).

#include <filesystem>
#include <fstream>
#include <map>
#include <string>

#include "cli_runner.hpp"
#include "test_util.hpp"

namespace pipeline {

struct Scale {
  std::size_t sentences;
  std::string generate_flags;
  std::string train_config;  // JSON

  static Scale small() {
    return {120, "--vocab-size 20 --min-length 3 --max-length 8",
            R"({"epochs": 3, "hidden_dim": 8, "embedding_dim": 6})"};
  }
  // Toolkit defaults: 2000 sentences, E=16, H=32, 15 epochs.
  static Scale full() { return {2000, "", "{}"}; }
};

inline std::string q(const std::filesystem::path& p) { return "\"" + p.string() + "\""; }

// Returns an empty string on success, else the failing step.
inline std::string run(const std::filesystem::path& ws, const Scale& scale) {
  namespace fs = std::filesystem;
  fs::create_directories(ws);
  const auto corpus = ws / "corpus";
  std::ofstream(ws / "train.json") << scale.train_config;
  std::ofstream(ws / "spec.json") << R"({"L0:0": "ablate", "L0:3": {"clamp": 0.8}})";
  const std::string acts = " --activations " + q(ws / "m1.activations.jsonl");
  const std::string labels = " --labels " + q(corpus / "position.labels.jsonl");
  const std::vector<std::string> steps{
      "generate --task position --n " + std::to_string(scale.sentences) + " --seed 5 " + scale.generate_flags +
          " --out " + q(corpus),
      "train --corpus " + q(corpus) + " --config " + q(ws / "train.json") + " --seed 1 --out " + q(ws / "model.json"),
      "train --corpus " + q(corpus) + " --config " + q(ws / "train.json") + " --seed 2 --out " +
          q(ws / "second.model.json"),
      "extract --model " + q(ws / "model.json") + " --corpus " + q(corpus) + " --out " +
          q(ws / "m1.activations.jsonl"),
      "extract --model " + q(ws / "second.model.json") + " --corpus " + q(corpus) + " --out " +
          q(ws / "m2.activations.jsonl"),
      "rank --method variance" + acts + " --out " + q(ws / "rankings/variance.json"),
      "rank --method meandev" + acts + " --out " + q(ws / "rankings/meandev.json"),
      "rank --method crossmodel" + acts + " --activations " + q(ws / "m2.activations.jsonl") + " --out " +
          q(ws / "rankings/crossmodel.json"),
      "rank --method probe:position" + acts + labels + " --out " + q(ws / "rankings/probe.json"),
      "probe" + acts + labels + " --out " + q(ws / "probe_report.json"),
      "intervene --model " + q(ws / "model.json") + " --corpus " + q(corpus) + " --spec " + q(ws / "spec.json") +
          " --out " + q(ws / "intervention.json"),
  };
  for (const auto& step : steps) {
    if (step.starts_with("rank --method variance"))
      fs::copy_file(corpus / "position.labels.jsonl", ws / "position.labels.jsonl",
                    fs::copy_options::overwrite_existing);
    if (const int code = run_cli(step); code != 0) return step + " (exit " + std::to_string(code) + ")";
  }
  return "";
}

inline std::map<std::string, std::string> snapshot(const std::filesystem::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : std::filesystem::recursive_directory_iterator(dir))
    if (e.is_regular_file()) out[std::filesystem::relative(e.path(), dir).string()] = read_file(e.path());
  return out;
}

}  // namespace pipeline
