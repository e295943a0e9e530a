#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace xmodal::cli {

// Provenance record for one command. Written only after the command
// succeeded, so a missing manifest marks a failed run.
class RunManifest {
 public:
  RunManifest(std::string command, std::vector<std::string> argv);

  // Drops any manifest left by an earlier run at `path`.
  void claim(const std::filesystem::path& path);

  void set_config(const std::string& key, nlohmann::ordered_json value);
  void add_input(const std::filesystem::path& path);
  void add_output(const std::filesystem::path& path);
  void set_seed(std::uint64_t seed) { seed_ = seed; has_seed_ = true; }

  nlohmann::ordered_json to_json() const;
  void write() const;

 private:
  std::string command_;
  std::vector<std::string> argv_;
  nlohmann::ordered_json config_ = nlohmann::ordered_json::object();
  nlohmann::ordered_json inputs_ = nlohmann::ordered_json::array();
  nlohmann::ordered_json outputs_ = nlohmann::ordered_json::array();
  std::uint64_t seed_ = 0;
  bool has_seed_ = false;
  std::filesystem::path path_;
  std::chrono::steady_clock::time_point start_;
};

}  // namespace xmodal::cli
