#include "commands.hpp"

#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include <nlohmann/json.hpp>

#include "run_manifest.hpp"
#include "xmodal/binary_io.hpp"
#include "xmodal/embstore.hpp"
#include "xmodal/errors.hpp"
#include "xmodal/gmlp.hpp"
#include "xmodal/mapping.hpp"
#include "xmodal/retrieval.hpp"
#include "xmodal/synthetic.hpp"

namespace xmodal::cli {
namespace {

using json = nlohmann::ordered_json;
namespace fs = std::filesystem;

void emit(const json& j) { std::cout << j.dump(2) << "\n"; }

void log(const std::string& line) { std::cerr << "xmodal: " << line << "\n"; }

EmbeddingMatrix load_side(const std::string& path, bool normalize, RunManifest& rm) {
  rm.add_input(path);
  auto m = load_emb(path);
  if (!normalize) return m;
  auto n = l2_normalize_rows(m);
  if (n.zero_rows > 0) {
    log("warning: " + std::to_string(n.zero_rows) + " zero rows in " + path + " left unnormalized");
  }
  return std::move(n.matrix);
}

PairManifest load_pairs(const std::string& path, RunManifest& rm) {
  rm.add_input(path);
  return load_manifest(path);
}

fs::path manifest_path(const std::string& requested, const fs::path& fallback) {
  return requested.empty() ? fallback : fs::path(requested);
}

// Text side is the manifest's src column. For text_to_image the queries are
// text; for image_to_text they are images.
PairedDataset align_for(Direction dir, const EmbeddingMatrix& queries,
                        const EmbeddingMatrix& gallery, const PairManifest& pairs) {
  return dir == Direction::text_to_image ? align_pairs(queries, gallery, pairs)
                                         : align_pairs(gallery, queries, pairs);
}

std::string format_score(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

std::string format_exact(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

void run_fit(const FitOptions& o, const std::vector<std::string>& argv) {
  const auto method = parse_map_method(o.method);
  const auto dir = parse_direction(o.direction);
  if (method == MapMethod::procrustes && o.ridge != 0.0) {
    throw ArgumentError("--ridge applies to the least-squares method only");
  }
  RunManifest rm("fit", argv);
  rm.claim(manifest_path(o.manifest, o.out + ".run.json"));

  const auto src = load_side(o.src, o.normalize, rm);
  const auto tgt = load_side(o.tgt, o.normalize, rm);
  const auto ds = align_pairs(src, tgt, load_pairs(o.pairs, rm));
  const bool forward = dir == Direction::text_to_image;
  const Eigen::MatrixXd x = (forward ? ds.src : ds.tgt).cast<double>();
  const Eigen::MatrixXd y = (forward ? ds.tgt : ds.src).cast<double>();
  log("fitting " + std::string(to_string(method)) + " on " + std::to_string(ds.rows()) +
      " pairs, " + std::to_string(x.cols()) + " -> " + std::to_string(y.cols()));

  const LinearMap map =
      method == MapMethod::procrustes ? fit_procrustes(x, y) : fit_least_squares(x, y, o.ridge);
  save_map(map, o.out);
  rm.add_output(o.out);

  json summary;
  summary["command"] = "fit";
  summary["method"] = std::string(to_string(method));
  summary["direction"] = std::string(to_string(dir));
  summary["lambda"] = map.lambda();
  summary["n_pairs"] = ds.rows();
  summary["d_src"] = map.d_src();
  summary["d_tgt"] = map.d_tgt();
  summary["train_residual"] = residual(x, map.matrix(), y);
  if (method == MapMethod::procrustes) {
    summary["orthogonality_error"] = orthogonality_error(map.matrix());
  }
  summary["out"] = o.out;
  emit(summary);

  rm.set_config("method", summary["method"]);
  rm.set_config("direction", summary["direction"]);
  rm.set_config("ridge", o.ridge);
  rm.set_config("normalize", o.normalize);
  rm.write();
}

void run_apply(const ApplyOptions& o, const std::vector<std::string>& argv) {
  RunManifest rm("apply", argv);
  rm.claim(manifest_path(o.manifest, o.out + ".run.json"));
  rm.add_input(o.map);
  const auto map = load_map(o.map);
  const auto in = load_side(o.in, o.normalize, rm);
  save_emb(apply_map(map, in), o.out);
  rm.add_output(o.out);

  json summary;
  summary["command"] = "apply";
  summary["rows"] = in.rows();
  summary["d_in"] = map.d_src();
  summary["d_out"] = map.d_tgt();
  summary["out"] = o.out;
  emit(summary);
  rm.set_config("normalize", o.normalize);
  rm.write();
}

void run_eval(const EvalOptions& o, const std::vector<std::string>& argv) {
  if (o.maps.empty() || o.maps.size() > 2) {
    throw ArgumentError("eval takes one or two --map files");
  }
  const auto dir = parse_direction(o.direction);
  RunManifest rm("eval", argv);
  rm.claim(o.manifest);

  std::vector<LinearMap> maps;
  for (const auto& path : o.maps) {
    rm.add_input(path);
    maps.push_back(load_map(path));
  }
  const auto queries = load_side(o.queries, o.normalize, rm);
  const auto gallery = load_side(o.gallery, o.normalize, rm);
  const auto ds = align_for(dir, queries, gallery, load_pairs(o.pairs, rm));

  std::vector<RecallReport> reports;
  for (const auto& map : maps) reports.push_back(evaluate_direction(ds, map, dir, o.ks));

  // Blocks are named by method; two maps of one method fall back to map1/map2.
  const bool same_method = maps.size() == 2 && maps[0].method() == maps[1].method();
  json out;
  for (std::size_t i = 0; i < maps.size(); ++i) {
    const std::string key =
        same_method ? "map" + std::to_string(i + 1) : std::string(to_string(maps[i].method()));
    out[key] = reports[i].to_json();
    out[key]["map"] = o.maps[i];
  }
  if (maps.size() == 2) {
    out["best_of"] = best_of(reports).to_json();
    out["best_of"]["note"] = "per-cell maximum over the two maps";
  }
  emit(out);

  rm.set_config("direction", std::string(to_string(dir)));
  rm.set_config("k", o.ks);
  rm.set_config("normalize", o.normalize);
  rm.write();
}

void run_retrieve(const RetrieveOptions& o, const std::vector<std::string>& argv) {
  if (o.top < 1) throw ArgumentError("--top must be at least 1");
  RunManifest rm("retrieve", argv);
  rm.claim(o.manifest);

  std::vector<std::string> ids = o.query_ids;
  if (!o.query_file.empty()) {
    rm.add_input(o.query_file);
    std::istringstream in(io::read_file(o.query_file));
    for (std::string line; std::getline(in, line);) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (!line.empty()) ids.push_back(line);
    }
  }
  if (ids.empty()) throw ArgumentError("retrieve needs --query-id or --query-file");

  const auto queries = load_side(o.queries, o.normalize, rm);
  const auto gallery = load_side(o.gallery, o.normalize, rm);
  Eigen::MatrixXd q = queries.to_double();
  if (!o.map.empty()) {
    rm.add_input(o.map);
    q = apply_map(load_map(o.map), q);
  }

  // Ground truth: every id in either manifest column -> its group.
  std::map<std::string, std::string> group_of;
  if (!o.pairs.empty()) {
    for (const auto& e : load_pairs(o.pairs, rm).entries) {
      for (const auto* id : {&e.src_id, &e.tgt_id}) {
        const auto [it, fresh] = group_of.emplace(*id, e.group);
        if (!fresh && it->second != e.group) {
          throw ValidationError("id '" + *id + "' belongs to groups '" + it->second + "' and '" +
                                e.group + "' in " + o.pairs);
        }
      }
    }
  }
  std::vector<std::string> groups;
  for (const auto& id : gallery.ids()) {
    const auto it = group_of.find(id);
    // Unpaired gallery rows get a group no query can match.
    groups.push_back(it != group_of.end() ? it->second : "\x1f" + id);
  }
  const auto index = build_index(gallery.to_double(), gallery.ids(), groups);

  std::size_t top = o.top;
  if (top > index.size()) {
    log("warning: --top " + std::to_string(top) + " exceeds the gallery size, clipped to " +
        std::to_string(index.size()));
    top = index.size();
  }
  for (const auto& id : ids) {
    const auto row = static_cast<Eigen::Index>(queries.index_of(id));
    const Eigen::VectorXd v = q.row(row).transpose();
    const auto g = group_of.find(id);
    std::cout << "# query " << id;
    if (g != group_of.end()) std::cout << " group=" << g->second;
    std::cout << "\n";
    std::size_t rank = 1;
    for (const auto& hit : topk(std::span<const double>(v.data(), static_cast<std::size_t>(v.size())), index, top)) {
      std::cout << rank++ << "\t" << hit.id << "\t" << format_score(hit.score);
      if (g != group_of.end()) {
        std::cout << "\t" << (index.groups()[hit.row] == g->second ? "correct" : "incorrect");
      }
      std::cout << "\n";
    }
  }

  rm.set_config("top", top);
  rm.set_config("queries", ids);
  rm.set_config("normalize", o.normalize);
  rm.write();
}

void run_train_head(const TrainHeadOptions& o, const std::vector<std::string>& argv) {
  const fs::path out_dir = o.out_dir;
  fs::create_directories(out_dir);
  RunManifest rm("train-head", argv);
  rm.claim(manifest_path(o.manifest, out_dir / "run_manifest.json"));

  const auto src = load_side(o.src, false, rm);
  const auto tgt = load_side(o.tgt, false, rm);
  const auto ds = align_pairs(src, tgt, load_pairs(o.pairs, rm));

  std::map<std::string, std::string> gkv;
  if (!o.gmlp_config.empty()) {
    rm.add_input(o.gmlp_config);
    gkv = gmlp::parse_key_values(io::read_file(o.gmlp_config), o.gmlp_config);
  }
  // seq_len decides d_model, so resolve it before the remaining keys.
  std::size_t seq_len = 1;
  if (const auto it = gkv.find("seq_len"); it != gkv.end()) {
    seq_len = gmlp::gmlp_config_from({{"seq_len", it->second}}, {}).seq_len;
  }
  if (seq_len == 0 || ds.src_dim() % seq_len != 0) {
    throw ArgumentError("embedding width " + std::to_string(ds.src_dim()) +
                        " is not a multiple of seq_len " + std::to_string(seq_len));
  }
  const auto gcfg = gmlp::gmlp_config_from(gkv, gmlp::GmlpConfig::defaults(seq_len, ds.src_dim() / seq_len));

  gmlp::TrainConfig tcfg;
  if (!o.train_config.empty()) {
    rm.add_input(o.train_config);
    tcfg = gmlp::train_config_from(gmlp::parse_key_values(io::read_file(o.train_config), o.train_config));
  }
  if (o.seed) tcfg.seed = *o.seed;
  if (o.epochs) tcfg.epochs = *o.epochs;
  gcfg.validate();
  tcfg.validate();

  PairedDataset train = ds;
  PairedDataset test;
  if (o.eval_groups > 0) {
    auto parts = split(ds, o.eval_groups, tcfg.seed);
    train = std::move(parts.train);
    test = std::move(parts.test);
  }
  log("training on " + std::to_string(train.rows()) + " pairs for " + std::to_string(tcfg.epochs) +
      " epochs");
  const auto result = gmlp::train_head(train, gcfg, tcfg, [&](std::size_t epoch, double loss) {
    log("epoch " + std::to_string(epoch + 1) + "/" + std::to_string(tcfg.epochs) +
        " mean_loss=" + format_exact(loss));
  });

  const auto head_src = out_dir / "head_src.xgml";
  const auto head_tgt = out_dir / "head_tgt.xgml";
  const auto loss_csv = out_dir / "loss.csv";
  const auto resolved = out_dir / "resolved_config.txt";
  gmlp::save_head(gcfg, result.heads.src, head_src);
  gmlp::save_head(gcfg, result.heads.tgt, head_tgt);
  std::string csv = "epoch,mean_loss\n";
  for (std::size_t e = 0; e < result.epoch_losses.size(); ++e) {
    csv += std::to_string(e + 1) + "," + format_exact(result.epoch_losses[e]) + "\n";
  }
  io::write_file_atomic(loss_csv, csv);
  io::write_file_atomic(resolved, "# gmlp\n" + gmlp::format_config(gcfg) + "# train\n" +
                                      gmlp::format_config(tcfg));
  for (const auto& p : {head_src, head_tgt, loss_csv, resolved}) rm.add_output(p);

  json summary;
  summary["command"] = "train-head";
  summary["n_train"] = train.rows();
  summary["epochs"] = tcfg.epochs;
  summary["epoch_losses"] = result.epoch_losses;
  if (o.eval_groups > 0) {
    std::vector<std::size_t> ks;
    const auto gallery = direction_view(test, Direction::text_to_image).gallery.rows();
    for (std::size_t k : {1, 5, 10}) {
      if (static_cast<Eigen::Index>(k) <= gallery) ks.push_back(k);
    }
    const auto initial = gmlp::initial_heads(gcfg, tcfg);
    summary["eval"]["initial"] =
        gmlp::evaluate_heads(test, initial, gcfg, Direction::text_to_image, ks).to_json();
    summary["eval"]["trained"] =
        gmlp::evaluate_heads(test, result.heads, gcfg, Direction::text_to_image, ks).to_json();
  }
  summary["out_dir"] = out_dir.string();
  emit(summary);

  const auto kv_json = [](const std::string& text) {
    json j = json::object();
    for (const auto& [k, v] : gmlp::parse_key_values(text)) j[k] = v;
    return j;
  };
  rm.set_config("gmlp", kv_json(gmlp::format_config(gcfg)));
  rm.set_config("train", kv_json(gmlp::format_config(tcfg)));
  rm.set_config("eval_groups", o.eval_groups);
  rm.set_seed(tcfg.seed);
  rm.write();
}

void run_synth(const SynthOptions& o, const std::vector<std::string>& argv) {
  if (o.test_groups >= o.groups) {
    throw ArgumentError("--test-groups must be smaller than --groups");
  }
  const fs::path out_dir = o.out_dir;
  fs::create_directories(out_dir);
  RunManifest rm("synth", argv);
  rm.claim(manifest_path(o.manifest, out_dir / "run_manifest.json"));

  synthetic::RotationPairsOptions so;
  so.n_groups = o.groups;
  so.captions_per_group = o.captions;
  so.dim = o.dim;
  so.noise = o.noise;
  so.caption_spread = o.spread;
  so.seed = o.seed;
  const auto data = synthetic::rotation_pairs(so);

  std::vector<fs::path> written = {out_dir / "text.emb", out_dir / "image.emb",
                                   out_dir / "pairs.jsonl"};
  save_emb(data.text, written[0]);
  save_emb(data.image, written[1]);
  save_manifest(data.manifest, written[2]);
  if (o.test_groups > 0) {
    const auto cut = o.groups - o.test_groups;
    written.push_back(out_dir / "pairs_train.jsonl");
    written.push_back(out_dir / "pairs_test.jsonl");
    save_manifest(synthetic::slice_groups(data.manifest, 0, cut), written[3]);
    save_manifest(synthetic::slice_groups(data.manifest, cut, o.groups), written[4]);
  }

  json summary;
  summary["command"] = "synth";
  summary["groups"] = o.groups;
  summary["captions_per_group"] = o.captions;
  summary["dim"] = o.dim;
  summary["files"] = json::array();
  for (const auto& p : written) {
    summary["files"].push_back(p.string());
    rm.add_output(p);
  }
  emit(summary);

  rm.set_config("groups", o.groups);
  rm.set_config("captions", o.captions);
  rm.set_config("dim", o.dim);
  rm.set_config("noise", o.noise);
  rm.set_config("spread", o.spread);
  rm.set_config("test_groups", o.test_groups);
  rm.set_seed(o.seed);
  rm.write();
}

}  // namespace xmodal::cli
