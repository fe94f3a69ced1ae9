#pragma once

#include <charconv>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "neuroprobe/intervention.hpp"
#include "neuroprobe/vis_data.hpp"
#include "neuroprobe/workspace.hpp"

namespace neuroprobe {

/// HTTP error with a status code; rendered as {"version":1,"error":...}.
struct HttpError {
  int status;
  std::string message;
};

/// JSON API over a read-only workspace. All data is immutable after
/// construction; rankings are memoized per (model, method).
class Service {
 public:
  explicit Service(Workspace workspace, std::optional<std::filesystem::path> ui_dir = std::nullopt)
      : ws_(std::move(workspace)) {
    routes(ui_dir);
  }

  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  httplib::Server& server() { return server_; }
  const Workspace& workspace() const { return ws_; }

  bool listen(const std::string& host, int port) { return server_.listen(host, port); }
  int bind_to_any_port(const std::string& host) { return server_.bind_to_any_port(host); }
  bool listen_after_bind() { return server_.listen_after_bind(); }
  void stop() { server_.stop(); }

  // Endpoint bodies; exposed for direct use by tests and tools.
  std::string meta(const httplib::Params& q) const {
    const std::string model = model_param(q);
    const auto& c = ws_.corpus(model);
    nlohmann::ordered_json j = {{"version", 1},
                                {"layers", c.layers()},
                                {"neurons_per_layer", c.neurons_per_layer()},
                                {"sentences", c.sentences().size()},
                                {"tokens", c.total_tokens()},
                                {"models", ws_.model_ids()},
                                {"default_model", ws_.default_model()},
                                {"model", model},
                                {"tasks", ws_.tasks_for(model)},
                                {"methods", ws_.methods_for(model)},
                                {"live_model", ws_.model().has_value()},
                                {"ranking_files", ws_.ranking_files()}};
    if (ws_.model()) j["model_task"] = ws_.model()->task().name;
    return j.dump();
  }

  std::string ranking(const httplib::Params& q) {
    const std::string model = model_param(q);
    const std::string method = param(q, "method").value_or("");
    if (method.empty()) throw HttpError{400, "missing 'method' parameter"};
    const auto methods = ws_.methods_for(model);
    const bool known = method == "variance" || method == "meandev" || method == "crossmodel" ||
                       (method.starts_with("probe:") && method.size() > 6);
    if (!known) throw HttpError{400, "unknown ranking method '" + method + "'"};
    if (std::find(methods.begin(), methods.end(), method) == methods.end()) {
      if (method == "crossmodel") throw HttpError{409, "crossmodel needs at least 2 aligned activation sets"};
      throw HttpError{400, "no labels for method '" + method + "'"};
    }
    const std::string key = model + "\n" + method;
    {
      std::lock_guard lock(memo_mutex_);
      if (auto it = memo_.find(key); it != memo_.end()) return it->second;
    }
    // Computed outside the lock; concurrent first requests recompute the
    // same deterministic bytes.
    std::vector<const ActivationCorpus*> corpora;
    for (const auto& id : ws_.aligned_with(model)) corpora.push_back(&ws_.corpus(id));
    std::optional<ActivationCorpus> labeled;
    if (method.starts_with("probe:")) labeled = ws_.labeled_corpus(model, method.substr(6));
    std::string body = ranking_to_string(compute_ranking(method, model, corpora, labeled ? &*labeled : nullptr));
    std::lock_guard lock(memo_mutex_);
    return memo_.emplace(key, std::move(body)).first->second;
  }

  std::string card(const std::string& neuron, const httplib::Params& q) const {
    const auto& c = ws_.corpus(model_param(q));
    const NeuronId id = neuron_param(c, neuron);
    const auto k = size_param(q, "k").value_or(10);
    const auto min_count = size_param(q, "min_count").value_or(2);
    if (k == 0 || min_count == 0) throw HttpError{400, "k and min_count must be positive"};
    return card_json(neuron_card(c, id, k, min_count)).dump();
  }

  std::string trace_body(const std::vector<std::string>& neurons, const httplib::Params& q) const {
    const auto& c = ws_.corpus(model_param(q));
    if (neurons.empty()) throw HttpError{400, "no neurons given"};
    std::vector<NeuronId> ids;
    for (const auto& n : neurons) ids.push_back(neuron_param(c, n));
    const auto sentence = size_param(q, "sentence");
    if (!sentence) throw HttpError{400, "missing 'sentence' parameter"};
    try {
      c.sentence(*sentence);
    } catch (const OutOfRange& e) {
      throw HttpError{404, e.what()};
    }
    std::vector<std::string> names;
    for (const auto& id : ids) names.push_back(id.str());
    return trace_json(multi_trace(c, ids, *sentence), *sentence, names).dump();
  }

  std::string sentences(const httplib::Params& q) const {
    const auto& c = ws_.corpus(model_param(q));
    const auto offset = size_param(q, "offset").value_or(0);
    const auto limit = size_param(q, "limit").value_or(100);
    nlohmann::ordered_json list = nlohmann::ordered_json::array();
    const auto& all = c.sentences();
    for (std::size_t i = offset; i < std::min(all.size(), offset + limit); ++i)
      list.push_back({{"id", all[i].id}, {"tokens", all[i].tokens}});
    return nlohmann::ordered_json{{"version", 1}, {"total", all.size()}, {"offset", offset}, {"sentences", list}}
        .dump();
  }

  std::string intervene(const std::string& body) const {
    if (!ws_.model()) throw HttpError{409, "workspace has no live model (model.json); use probe masking instead"};
    nlohmann::json req;
    try {
      req = nlohmann::json::parse(body);
    } catch (const nlohmann::json::exception& e) {
      throw HttpError{422, std::string("request body is not JSON: ") + e.what()};
    }
    if (!req.is_object()) throw HttpError{422, "request body must be an object"};
    const std::string model_id = req.contains("model") && req["model"].is_string() ? req["model"].get<std::string>()
                                                                                     : ws_.default_model();
    const GruTagger& model = *ws_.model();
    InterventionSpec spec;
    TextCorpus text;
    try {
      spec = InterventionSpec::from_json(req.value("spec", nlohmann::json::object()));
      for (const auto& [id, _] : spec.entries)
        if (id.layer != 0 || id.index >= model.hidden_dim()) throw OutOfRange("neuron " + id.str() + " out of range");
      text = text_from_activations(ws_.corpus(model_id), model.task());
      const auto scope = req.value("scope", nlohmann::json("all"));
      if (scope.is_array()) {
        text = restrict_to(text, scope.get<std::set<std::size_t>>());
      } else if (!(scope.is_string() && scope.get<std::string>() == "all")) {
        throw InvalidInput("scope must be \"all\" or a list of sentence ids");
      }
    } catch (const std::invalid_argument& e) {
      throw HttpError{422, e.what()};
    } catch (const std::out_of_range& e) {
      throw HttpError{422, e.what()};
    } catch (const nlohmann::json::exception& e) {
      throw HttpError{422, e.what()};
    }
    try {
      return effect_report_json(manipulate(model, text, spec)).dump();
    } catch (const InvalidInput& e) {
      throw HttpError{409, std::string("activation set does not match the model: ") + e.what()};
    }
  }

 private:
  static std::optional<std::string> param(const httplib::Params& q, const std::string& key) {
    auto it = q.find(key);
    if (it == q.end()) return std::nullopt;
    return it->second;
  }

  static std::optional<std::size_t> size_param(const httplib::Params& q, const std::string& key) {
    const auto v = param(q, key);
    if (!v) return std::nullopt;
    std::size_t out = 0;
    const auto [ptr, ec] = std::from_chars(v->data(), v->data() + v->size(), out);
    if (v->empty() || ec != std::errc() || ptr != v->data() + v->size())
      throw HttpError{400, "parameter '" + key + "' must be a non-negative integer"};
    return out;
  }

  std::string model_param(const httplib::Params& q) const {
    const std::string id = param(q, "model").value_or(ws_.default_model());
    if (!ws_.activations().count(id)) throw HttpError{404, "unknown model '" + id + "'"};
    return id;
  }

  static NeuronId neuron_param(const ActivationCorpus& c, const std::string& text) {
    try {
      const NeuronId id = NeuronId::parse(text);
      c.flat_index(id);
      return id;
    } catch (const std::exception& e) {
      throw HttpError{400, e.what()};
    }
  }

  static void reply(httplib::Response& res, int status, const std::string& body) {
    res.status = status;
    res.set_content(body, "application/json");
  }

  static std::string error_body(const std::string& message) {
    return nlohmann::ordered_json{{"version", 1}, {"error", message}}.dump();
  }

  template <typename F>
  void guarded(httplib::Response& res, F&& fn) {
    try {
      if (ws_.empty()) throw HttpError{404, "workspace contains no activation sets"};
      reply(res, 200, fn());
    } catch (const HttpError& e) {
      reply(res, e.status, error_body(e.message));
    } catch (const std::exception& e) {
      reply(res, 500, error_body(e.what()));
    }
  }

  void routes(const std::optional<std::filesystem::path>& ui_dir) {
    server_.Get("/api/meta", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] { return meta(req.params); });
    });
    server_.Get("/api/rankings", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] { return ranking(req.params); });
    });
    server_.Get(R"(/api/neurons/([^/]+)/trace)", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] { return trace_body({req.matches[1].str()}, req.params); });
    });
    server_.Get(R"(/api/neurons/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] { return card(req.matches[1].str(), req.params); });
    });
    server_.Get("/api/trace", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        std::vector<std::string> names;
        std::string list = req.get_param_value("neurons");
        for (std::size_t pos = 0; !list.empty() && pos <= list.size();) {
          const auto comma = std::min(list.find(',', pos), list.size());
          names.push_back(list.substr(pos, comma - pos));
          pos = comma + 1;
        }
        return trace_body(names, req.params);
      });
    });
    server_.Get("/api/sentences", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] { return sentences(req.params); });
    });
    server_.Post("/api/interventions", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] { return intervene(req.body); });
    });

    if (ui_dir && std::filesystem::is_directory(*ui_dir)) {
      server_.set_mount_point("/", ui_dir->string());
    } else {
      server_.Get("/", [](const httplib::Request&, httplib::Response& res) {
        res.set_content(
            "<!doctype html><title>neuroprobe</title><h1>neuroprobe</h1>"
            "<p>No UI bundle installed. The JSON API is available under <code>/api/</code>: "
            "<code>meta</code>, <code>rankings?method=</code>, <code>neurons/{id}</code>, "
            "<code>neurons/{id}/trace?sentence=</code>, <code>trace?neurons=&amp;sentence=</code>, "
            "<code>sentences</code>, <code>POST interventions</code>.</p>",
            "text/html");
      });
    }
    server_.set_error_handler([](const httplib::Request& req, httplib::Response& res) {
      if (req.path.starts_with("/api/") && res.body.empty())
        res.set_content(error_body("no such endpoint: " + req.path), "application/json");
    });
  }

  Workspace ws_;
  httplib::Server server_;
  std::mutex memo_mutex_;
  std::map<std::string, std::string> memo_;
};

}  // namespace neuroprobe
