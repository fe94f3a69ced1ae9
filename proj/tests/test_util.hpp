#pragma once

#include <unistd.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "neuroprobe/activation_store.hpp"
#include "neuroprobe/random.hpp"

// Scratch directory removed on destruction.
class TempDir {
 public:
  TempDir() {
    static int counter = 0;
    dir_ = std::filesystem::temp_directory_path() /
           ("neuroprobe_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(dir_);
    std::filesystem::create_directories(dir_);
  }
  ~TempDir() { std::filesystem::remove_all(dir_); }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& dir() const { return dir_; }
  std::filesystem::path path(const std::string& name) const { return dir_ / name; }

  std::filesystem::path write(const std::string& name, const std::string& content) const {
    std::ofstream(path(name), std::ios::binary) << content;
    return path(name);
  }

 private:
  std::filesystem::path dir_;
};

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Random labeled corpus with normal activations and tokens from a small
// vocabulary; sentence ids are 0..n-1.
inline neuroprobe::ActivationCorpus random_corpus(neuroprobe::Rng& rng, std::size_t n_sentences,
                                                  std::size_t layers, std::size_t npl) {
  neuroprobe::ActivationCorpus c(layers, npl);
  for (std::size_t id = 0; id < n_sentences; ++id) {
    neuroprobe::SentenceRecord r;
    r.id = id;
    const std::size_t len = 1 + rng.below(6);
    std::vector<std::string> labels;
    for (std::size_t t = 0; t < len; ++t) {
      r.tokens.push_back("tok" + std::to_string(rng.below(10)));
      labels.push_back(rng.below(2) ? "A" : "B");
      for (std::size_t j = 0; j < layers * npl; ++j)
        r.activations.push_back(static_cast<float>(rng.normal() * std::pow(10.0, double(rng.below(5)) - 2)));
    }
    r.labels = labels;
    c.add(std::move(r));
  }
  return c;
}
