#include "run_manifest.hpp"

#include <system_error>

#include "xmodal/binary_io.hpp"
#include "xmodal/errors.hpp"

#ifndef XMODAL_VERSION
#define XMODAL_VERSION "0.0.0"
#endif

namespace xmodal::cli {

RunManifest::RunManifest(std::string command, std::vector<std::string> argv)
    : command_(std::move(command)), argv_(std::move(argv)), start_(std::chrono::steady_clock::now()) {}

void RunManifest::claim(const std::filesystem::path& path) {
  path_ = path;
  std::error_code ec;
  std::filesystem::remove(path_, ec);
}

void RunManifest::set_config(const std::string& key, nlohmann::ordered_json value) {
  config_[key] = std::move(value);
}

void RunManifest::add_input(const std::filesystem::path& path) {
  inputs_.push_back({{"path", path.string()}, {"sha256", io::sha256_hex(io::read_file(path))}});
}

void RunManifest::add_output(const std::filesystem::path& path) {
  outputs_.push_back(path.string());
}

nlohmann::ordered_json RunManifest::to_json() const {
  const std::chrono::duration<double> elapsed = std::chrono::steady_clock::now() - start_;
  nlohmann::ordered_json j;
  j["toolkit"] = "xmodal";
  j["version"] = XMODAL_VERSION;
  j["command"] = command_;
  j["argv"] = argv_;
  j["config"] = config_;
  j["inputs"] = inputs_;
  j["outputs"] = outputs_;
  j["seed"] = has_seed_ ? nlohmann::ordered_json(seed_) : nlohmann::ordered_json(nullptr);
  j["duration_seconds"] = elapsed.count();
  return j;
}

void RunManifest::write() const {
  if (path_.empty()) throw ArgumentError("run manifest has no destination");
  io::write_file_atomic(path_, to_json().dump(2) + "\n");
}

}  // namespace xmodal::cli
