#pragma once

// A small on-disk workspace plus a running service on an ephemeral port.

#include <memory>
#include <thread>

#include <httplib.h>

#include "neuroprobe/neuroprobe.hpp"
#include "neuroprobe/service.hpp"
#include "test_util.hpp"

namespace fixture {

// model.json (H=8 tagger), two aligned activation sets "m1" and "m2" from
// differently seeded taggers, and position.labels.jsonl.
inline void write_workspace(const std::filesystem::path& dir, bool with_model = true, bool second_set = true) {
  using namespace neuroprobe;
  std::filesystem::create_directories(dir);
  const auto text = generate_corpus(TaskSpec::make("position", 20, 3, 8), 60, 3);
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.hidden_dim = 8;
  cfg.embedding_dim = 6;
  const auto m1 = train(GruTagger::initialize(text.task, 6, 8, 1), text, cfg).model;
  const auto a1 = extract_activations(m1, text);
  save_corpus(a1, dir / "m1.activations.jsonl");
  save_labels(a1, dir / "position.labels.jsonl");
  if (with_model) save_model(m1, dir / "model.json");
  if (second_set) {
    const auto m2 = train(GruTagger::initialize(text.task, 6, 8, 2), text, cfg).model;
    save_corpus(extract_activations(m2, text), dir / "m2.activations.jsonl");
  }
}

class RunningService {
 public:
  explicit RunningService(const std::filesystem::path& workspace)
      : service_(std::make_unique<neuroprobe::Service>(neuroprobe::Workspace::load(workspace))) {
    port_ = service_->bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { service_->listen_after_bind(); });
    service_->server().wait_until_ready();
  }
  ~RunningService() {
    service_->stop();
    thread_.join();
  }
  RunningService(const RunningService&) = delete;
  RunningService& operator=(const RunningService&) = delete;

  httplib::Client client() const {
    httplib::Client c("127.0.0.1", port_);
    c.set_read_timeout(120, 0);
    return c;
  }
  int port() const { return port_; }
  neuroprobe::Service& service() { return *service_; }

 private:
  std::unique_ptr<neuroprobe::Service> service_;
  int port_ = 0;
  std::thread thread_;
};

}  // namespace fixture
