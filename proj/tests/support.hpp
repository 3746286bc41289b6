#pragma once

#include <filesystem>
#include <fstream>
#include <random>
#include <string>

#include "rfid/config.hpp"
#include "rfid/data.hpp"

namespace rfid::testing {

/// Fresh scratch directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("rfid-" + tag + "-" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream(path, std::ios::binary | std::ios::trunc) << text;
}

/// Small synthetic corpus for fast tests.
inline SynthesisConfig small_synthesis(int passages = 2, int train = 8) {
  SynthesisConfig sc;
  sc.passages = passages;
  sc.train_size = train;
  sc.dev_size = 4;
  sc.test_size = 4;
  sc.name_pool = 40;
  sc.value_pool = 16;
  sc.filler_pool = 20;
  sc.entity_tokens = 2;
  sc.filler_tokens = 2;
  return sc;
}

/// Tiny model used by gradient and shape tests.
inline ModelConfig tiny_model(int vocab_size, int passages = 2) {
  ModelConfig mc;
  mc.passages = passages;
  mc.max_tokens = 8;
  mc.hidden = 16;
  mc.enc_layers = 1;
  mc.dec_layers = 1;
  mc.heads = 2;
  mc.vocab_size = vocab_size;
  mc.max_target = 4;
  return mc;
}

}  // namespace rfid::testing
