#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace xmodal::cli {

// Each command prints machine-readable output on stdout and logs on stderr,
// and throws xmodal errors that main() turns into exit codes.

struct FitOptions {
  std::string method;
  std::string src;
  std::string tgt;
  std::string pairs;
  std::string out;
  double ridge = 0.0;
  std::string direction = "text_to_image";
  bool normalize = false;
  std::string manifest;
};

struct ApplyOptions {
  std::string map;
  std::string in;
  std::string out;
  bool normalize = false;
  std::string manifest;
};

struct EvalOptions {
  std::vector<std::string> maps;
  std::string queries;
  std::string gallery;
  std::string pairs;
  std::string direction = "text_to_image";
  std::vector<std::size_t> ks = {1, 5, 10, 20, 100};
  bool normalize = false;
  std::string manifest = "xmodal-eval.run.json";
};

struct RetrieveOptions {
  std::string map;  // empty: identity
  std::string queries;
  std::vector<std::string> query_ids;
  std::string query_file;
  std::string gallery;
  std::size_t top = 10;
  std::string pairs;
  bool normalize = false;
  std::string manifest = "xmodal-retrieve.run.json";
};

struct TrainHeadOptions {
  std::string src;
  std::string tgt;
  std::string pairs;
  std::string gmlp_config;
  std::string train_config;
  std::string out_dir;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> epochs;
  std::size_t eval_groups = 0;
  std::string manifest;
};

struct SynthOptions {
  std::size_t groups = 100;
  std::size_t captions = 1;
  std::size_t dim = 32;
  double noise = 0.05;
  double spread = 0.0;
  std::uint64_t seed = 0;
  std::size_t test_groups = 0;
  std::string out_dir;
  std::string manifest;
};

void run_fit(const FitOptions& o, const std::vector<std::string>& argv);
void run_apply(const ApplyOptions& o, const std::vector<std::string>& argv);
void run_eval(const EvalOptions& o, const std::vector<std::string>& argv);
void run_retrieve(const RetrieveOptions& o, const std::vector<std::string>& argv);
void run_train_head(const TrainHeadOptions& o, const std::vector<std::string>& argv);
void run_synth(const SynthOptions& o, const std::vector<std::string>& argv);

}  // namespace xmodal::cli
