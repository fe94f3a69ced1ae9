// neuroprobe command-line driver: generate -> train -> extract -> rank/probe
// -> intervene, plus the HTTP service.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "neuroprobe/neuroprobe.hpp"
#include "neuroprobe/service.hpp"

namespace fs = std::filesystem;
using namespace neuroprobe;

namespace {

// Precondition failures detected after flag parsing; exit code 2.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

nlohmann::json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"neuroprobe: neuron-level analysis of recurrent taggers"};
  app.require_subcommand(1);

  // generate
  std::string task_name = "position";
  std::size_t n_sentences = 2000, vocab_size = 50, min_len = 4, max_len = 12;
  std::uint64_t seed = 0;
  fs::path out_path;
  auto* generate = app.add_subcommand("generate", "Generate a synthetic labeled text corpus");
  generate->add_option("--task", task_name, "position | month | eos-distance")->required();
  generate->add_option("--n", n_sentences, "Number of sentences")->required()->check(CLI::PositiveNumber);
  generate->add_option("--seed", seed, "Random seed")->required();
  generate->add_option("--vocab-size", vocab_size, "Synthetic vocabulary size")->check(CLI::PositiveNumber);
  generate->add_option("--min-length", min_len, "Minimum sentence length (tokens, incl. </s>)");
  generate->add_option("--max-length", max_len, "Maximum sentence length");
  generate->add_option("--out", out_path, "Output directory")->required();

  // train
  fs::path corpus_dir, config_path;
  std::optional<std::uint64_t> seed_override;
  std::optional<std::size_t> epochs_override;
  auto* train_cmd = app.add_subcommand("train", "Train the GRU tagger on a text corpus");
  train_cmd->add_option("--corpus", corpus_dir, "Text corpus directory")->required();
  train_cmd->add_option("--config", config_path, "TrainConfig JSON file (missing keys use defaults)");
  train_cmd->add_option("--seed", seed_override, "Override config seed");
  train_cmd->add_option("--epochs", epochs_override, "Override config epochs");
  train_cmd->add_option("--out", out_path, "Output model.json")->required();

  // extract
  fs::path model_path;
  auto* extract = app.add_subcommand("extract", "Dump hidden-state activations for a corpus");
  extract->add_option("--model", model_path, "model.json")->required();
  extract->add_option("--corpus", corpus_dir, "Text corpus directory")->required();
  extract->add_option("--out", out_path, "Output *.activations.jsonl")->required();

  // rank
  std::string method;
  std::vector<fs::path> activation_paths;
  fs::path labels_path;
  auto* rank = app.add_subcommand("rank", "Rank neurons by variance, meandev, crossmodel or probe:<task>");
  rank->add_option("--method", method, "variance | meandev | crossmodel | probe:<task>")->required();
  rank->add_option("--activations", activation_paths, "Activation file(s); the first is the target")->required();
  rank->add_option("--labels", labels_path, "Labels file (probe methods)");
  rank->add_option("--config", config_path, "ProbeConfig JSON (probe methods)");
  rank->add_option("--out", out_path, "Output ranking JSON")->required();

  // probe
  std::string probe_task;
  auto* probe = app.add_subcommand("probe", "Train a linguistic-correlation probe and report");
  probe->add_option("--activations", activation_paths, "Activation file")->required()->expected(1);
  probe->add_option("--labels", labels_path, "Labels file")->required();
  probe->add_option("--config", config_path, "ProbeConfig JSON");
  probe->add_option("--task", probe_task, "Task name (default: labels file stem)");
  probe->add_option("--out", out_path, "Output report JSON")->required();

  // intervene
  fs::path spec_path;
  std::vector<std::size_t> scope;
  auto* intervene = app.add_subcommand("intervene", "Ablate/clamp neurons of the tagger and report the effect");
  intervene->add_option("--model", model_path, "model.json")->required();
  intervene->add_option("--corpus", corpus_dir, "Text corpus directory")->required();
  intervene->add_option("--spec", spec_path, "Intervention spec JSON")->required();
  intervene->add_option("--sentences", scope, "Restrict to these sentence ids");
  intervene->add_option("--out", out_path, "Output report JSON")->required();

  // serve
  fs::path workspace_dir, ui_dir;
  int port = 8080;
  std::string host = "127.0.0.1";
  auto* serve = app.add_subcommand("serve", "Serve the JSON API (and UI bundle) for a workspace");
  serve->add_option("--workspace", workspace_dir, "Workspace directory")->required();
  serve->add_option("--port", port, "Port")->check(CLI::Range(0, 65535));
  serve->add_option("--host", host, "Bind address");
  serve->add_option("--ui", ui_dir, "Static UI bundle directory (default: <workspace>/ui)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*generate) {
      const auto task = TaskSpec::make(task_name, vocab_size, min_len, max_len);
      save_text_corpus(generate_corpus(task, n_sentences, seed), out_path);
    } else if (*train_cmd) {
      TrainConfig config;
      if (!config_path.empty()) config = read_json_file(config_path).get<TrainConfig>();
      if (seed_override) config.seed = *seed_override;
      if (epochs_override) config.epochs = *epochs_override;
      config.validate();
      const auto corpus = load_text_corpus(corpus_dir);
      auto init = GruTagger::initialize(corpus.task, config.embedding_dim, config.hidden_dim, config.seed);
      const auto result = train(std::move(init), corpus, config);
      for (const auto& e : result.epochs)
        std::cout << "epoch " << e.epoch << " loss " << e.loss << " accuracy " << e.accuracy << "\n";
      auto meta = train_report_json(config, result);
      meta["corpus_seed"] = corpus.seed;
      save_model(result.model, out_path, meta);
    } else if (*extract) {
      const auto model = load_model(model_path);
      save_corpus(extract_activations(model, load_text_corpus(corpus_dir)), out_path);
    } else if (*rank) {
      const bool is_probe = method.starts_with("probe:");
      if (method != "variance" && method != "meandev" && method != "crossmodel" && !(is_probe && method.size() > 6))
        throw UsageError("unknown method '" + method + "'");
      if (method == "crossmodel" && activation_paths.size() < 2)
        throw UsageError("--method crossmodel needs at least two --activations files");
      if (is_probe && labels_path.empty()) throw UsageError("--method " + method + " needs --labels");
      std::vector<ActivationCorpus> corpora;
      for (const auto& p : activation_paths) corpora.push_back(load_corpus(p));
      std::vector<const ActivationCorpus*> ptrs;
      for (const auto& c : corpora) ptrs.push_back(&c);
      std::optional<ActivationCorpus> labeled;
      ProbeConfig probe_config;
      if (is_probe) {
        labeled = load_corpus(activation_paths.front(), labels_path);
        if (!config_path.empty()) probe_config = read_json_file(config_path).get<ProbeConfig>();
      }
      const auto model_id = artifact_id(activation_paths.front(), kActivationsSuffix);
      write_text(out_path, ranking_to_string(compute_ranking(method, model_id, ptrs,
                                                             labeled ? &*labeled : nullptr, probe_config)));
    } else if (*probe) {
      ProbeConfig config;
      if (!config_path.empty()) config = read_json_file(config_path).get<ProbeConfig>();
      const auto corpus = load_corpus(activation_paths.front(), labels_path);
      const auto task = probe_task.empty() ? artifact_id(labels_path, kLabelsSuffix) : probe_task;
      const auto result = train_probe(corpus, config, task);
      const auto ranking = rank_by_probe_weights(result.model, artifact_id(activation_paths.front(), kActivationsSuffix));
      const auto selection = select_minimal_neurons(result.model, corpus, config.selection_delta);
      std::cout << "train accuracy " << result.report.train_accuracy << " test accuracy "
                << result.report.test_accuracy << " minimal set " << selection.neurons.size() << "\n";
      write_text(out_path, probe_report_json(config, result, ranking, selection).dump(2) + "\n");
    } else if (*intervene) {
      const auto model = load_model(model_path);
      auto corpus = load_text_corpus(corpus_dir);
      if (!scope.empty()) corpus = restrict_to(corpus, {scope.begin(), scope.end()});
      const auto spec = InterventionSpec::from_json(read_json_file(spec_path));
      auto report = effect_report_json(manipulate(model, corpus, spec));
      report["spec"] = spec.to_json();
      write_text(out_path, report.dump(2) + "\n");
    } else if (*serve) {
      auto ws = Workspace::load(workspace_dir);
      Service service(std::move(ws), ui_dir.empty() ? workspace_dir / "ui" : ui_dir);
      std::cout << "serving " << workspace_dir << " on http://" << host << ":" << port << "/" << std::endl;
      if (!service.listen(host, port)) throw std::runtime_error("cannot listen on " + host + ":" + std::to_string(port));
    }
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
