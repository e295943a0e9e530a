#include <CLI11.hpp>

#include <filesystem>
#include <iostream>

#include "commands.hpp"
#include "xmodal/errors.hpp"

#ifndef XMODAL_VERSION
#define XMODAL_VERSION "0.0.0"
#endif

namespace {

int exit_code(xmodal::ErrorKind kind) {
  switch (kind) {
    case xmodal::ErrorKind::argument:
      return 2;
    case xmodal::ErrorKind::numerical:
      return 3;
    case xmodal::ErrorKind::data:
      return 4;
    case xmodal::ErrorKind::training:
      return 5;
  }
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  using namespace xmodal::cli;
  const std::vector<std::string> args(argv, argv + argc);

  CLI::App app{"Cross-modal embedding alignment and retrieval toolkit"};
  app.set_version_flag("--version", XMODAL_VERSION);
  app.require_subcommand(1);

  FitOptions fit;
  auto* c_fit = app.add_subcommand("fit", "Fit a linear map between paired embeddings");
  c_fit->add_option("--method", fit.method, "lsq or procrustes")->required()
      ->check(CLI::IsMember({"lsq", "least_squares", "procrustes"}));
  c_fit->add_option("--src", fit.src, "Text-side EMB1 file")->required();
  c_fit->add_option("--tgt", fit.tgt, "Image-side EMB1 file")->required();
  c_fit->add_option("--pairs", fit.pairs, "JSONL pair manifest")->required();
  c_fit->add_option("--out", fit.out, "Output XMAP file")->required();
  c_fit->add_option("--ridge", fit.ridge, "Ridge coefficient for lsq")->capture_default_str();
  c_fit->add_option("--direction", fit.direction, "text_to_image maps text into image space")
      ->capture_default_str();
  c_fit->add_flag("--normalize", fit.normalize, "L2-normalize rows before fitting");
  c_fit->add_option("--manifest", fit.manifest, "Run manifest path (default <out>.run.json)");

  ApplyOptions apply;
  auto* c_apply = app.add_subcommand("apply", "Map an embedding file through a fitted map");
  c_apply->add_option("--map", apply.map, "XMAP file")->required();
  c_apply->add_option("--in", apply.in, "Input EMB1 file")->required();
  c_apply->add_option("--out", apply.out, "Output EMB1 file")->required();
  c_apply->add_flag("--normalize", apply.normalize, "L2-normalize rows before mapping");
  c_apply->add_option("--manifest", apply.manifest, "Run manifest path (default <out>.run.json)");

  EvalOptions eval;
  auto* c_eval = app.add_subcommand("eval", "Recall@k of one or two maps on held-out pairs");
  c_eval->add_option("--map", eval.maps, "XMAP file; give two for best-of reporting")->required();
  c_eval->add_option("--queries", eval.queries, "Query-side EMB1 file")->required();
  c_eval->add_option("--gallery", eval.gallery, "Gallery-side EMB1 file")->required();
  c_eval->add_option("--pairs", eval.pairs, "JSONL pair manifest")->required();
  c_eval->add_option("--direction", eval.direction, "text_to_image or image_to_text")
      ->capture_default_str();
  c_eval->add_option("--k", eval.ks, "Comma-separated cutoffs")->delimiter(',')
      ->capture_default_str();
  c_eval->add_flag("--normalize", eval.normalize, "L2-normalize rows before mapping");
  c_eval->add_option("--manifest", eval.manifest, "Run manifest path")->capture_default_str();

  RetrieveOptions ret;
  auto* c_ret = app.add_subcommand("retrieve", "Print ranked gallery items for given queries");
  c_ret->add_option("--map", ret.map, "XMAP file (identity when omitted)");
  c_ret->add_option("--queries", ret.queries, "Query-side EMB1 file")->required();
  c_ret->add_option("--query-id", ret.query_ids, "Query id; repeatable");
  c_ret->add_option("--query-file", ret.query_file, "File with one query id per line");
  c_ret->add_option("--gallery", ret.gallery, "Gallery-side EMB1 file")->required();
  c_ret->add_option("--top", ret.top, "Results per query")->capture_default_str();
  c_ret->add_option("--pairs", ret.pairs, "JSONL pair manifest for correct/incorrect marks");
  c_ret->add_flag("--normalize", ret.normalize, "L2-normalize rows before mapping");
  c_ret->add_option("--manifest", ret.manifest, "Run manifest path")->capture_default_str();

  TrainHeadOptions train;
  auto* c_train = app.add_subcommand("train-head", "Train gMLP projection heads contrastively");
  c_train->add_option("--src", train.src, "Text-side EMB1 file")->required();
  c_train->add_option("--tgt", train.tgt, "Image-side EMB1 file")->required();
  c_train->add_option("--pairs", train.pairs, "JSONL pair manifest")->required();
  c_train->add_option("--gmlp-config", train.gmlp_config, "key=value head shape file");
  c_train->add_option("--train-config", train.train_config, "key=value optimizer file");
  c_train->add_option("--out-dir", train.out_dir, "Output directory")->required();
  c_train->add_option("--seed", train.seed, "Override the configured seed");
  c_train->add_option("--epochs", train.epochs, "Override the configured epoch count");
  c_train->add_option("--eval-groups", train.eval_groups,
                      "Hold out this many groups and report recall before and after training");
  c_train->add_option("--manifest", train.manifest,
                      "Run manifest path (default <out-dir>/run_manifest.json)");

  SynthOptions synth;
  auto* c_synth = app.add_subcommand("synth", "Write a synthetic rotated-pairs dataset");
  c_synth->add_option("--groups", synth.groups, "Images (groups)")->capture_default_str();
  c_synth->add_option("--captions", synth.captions, "Captions per image")->capture_default_str();
  c_synth->add_option("--dim", synth.dim, "Embedding width")->capture_default_str();
  c_synth->add_option("--noise", synth.noise, "Image-side noise std")->capture_default_str();
  c_synth->add_option("--spread", synth.spread, "Caption offset std")->capture_default_str();
  c_synth->add_option("--seed", synth.seed, "Generator seed")->capture_default_str();
  c_synth->add_option("--test-groups", synth.test_groups,
                      "Also write pairs_train/pairs_test with this many test groups");
  c_synth->add_option("--out-dir", synth.out_dir, "Output directory")->required();
  c_synth->add_option("--manifest", synth.manifest,
                      "Run manifest path (default <out-dir>/run_manifest.json)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  try {
    if (*c_fit) run_fit(fit, args);
    if (*c_apply) run_apply(apply, args);
    if (*c_eval) run_eval(eval, args);
    if (*c_ret) run_retrieve(ret, args);
    if (*c_train) run_train_head(train, args);
    if (*c_synth) run_synth(synth, args);
  } catch (const xmodal::Error& e) {
    std::cerr << "xmodal: error: " << e.what() << "\n";
    return exit_code(e.kind());
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "xmodal: error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "xmodal: internal error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
