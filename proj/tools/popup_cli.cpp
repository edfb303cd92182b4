#include <algorithm>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "popup/baseline.hpp"
#include "popup/io.hpp"
#include "popup/pipeline.hpp"
#include "popup/saliency.hpp"
#include "popup/synth.hpp"
#include "popup/training.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumeric = 3;

std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw popup::DataError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

popup::ad::Matrix load_cloud(const std::filesystem::path& path) {
  return popup::points_to_matrix(popup::io::read_points(path));
}

struct TrainFileConfig {
  popup::PopupConfig model;
  popup::TrainConfig train;
};

TrainFileConfig parse_train_config(const std::optional<std::string>& path) {
  TrainFileConfig out;
  if (!path) return out;
  auto j = nlohmann::json::parse(slurp(*path));
  if (j.contains("model")) out.model = popup::PopupConfig::from_json_string(j["model"].dump());
  if (j.contains("train")) out.train = popup::TrainConfig::from_json_string(j["train"].dump());
  return out;
}

void dump_defaults() {
  nlohmann::json j;
  j["model"] = nlohmann::json::parse(popup::PopupConfig{}.to_json_string());
  j["train"] = nlohmann::json::parse(popup::TrainConfig{}.to_json_string());
  j["synth"] = nlohmann::json::parse(popup::SynthConfig{}.to_json_string());
  std::cout << j.dump(2) << "\n";
}

popup::PopupNetwork load_network(const std::string& checkpoint_path) {
  auto ckpt = popup::Checkpoint::load(checkpoint_path);
  return popup::PopupNetwork::from_checkpoint(ckpt);
}

std::vector<std::filesystem::path> sorted_cloud_files(const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    auto ext = e.path().extension().string();
    if (ext == ".ply" || ext == ".xyz") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw popup::DataError("no .ply/.xyz files in " + dir.string());
  return files;
}

// ---- subcommand bodies ----

int run_synth(const std::string& out, std::uint64_t seed,
              const std::optional<std::string>& config_path) {
  popup::SynthConfig cfg;
  if (config_path) cfg = popup::SynthConfig::from_json_string(slurp(*config_path));
  auto manifest = popup::generate_synthetic(cfg, seed, out);
  std::cout << "wrote " << manifest.sequences.size() << " sequences to " << out << "\n";
  return kExitOk;
}

int run_train(const std::string& data, const std::string& out,
              const std::optional<std::string>& config_path,
              std::optional<std::uint64_t> seed, std::optional<std::size_t> epochs) {
  auto cfg = parse_train_config(config_path);
  if (seed) cfg.train.seed = *seed;
  if (epochs) cfg.train.epochs = *epochs;

  auto dataset = popup::Dataset::load(data);
  if (!config_path) {
    cfg.model.num_classes = dataset.manifest().classes.size();
    cfg.model.keypoint_count = dataset.manifest().keypoint_count;
  }
  if (cfg.model.num_classes != dataset.manifest().classes.size())
    throw popup::DataError("train: model class count does not match the dataset");
  if (cfg.model.keypoint_count != dataset.manifest().keypoint_count)
    throw popup::DataError("train: model keypoint count does not match the dataset");

  auto train_set = popup::build_samples(dataset, "train", cfg.train.train_points);
  auto val_set = popup::build_samples(dataset, "val", cfg.train.train_points);

  std::filesystem::create_directories(out);
  auto result = popup::train(cfg.train, cfg.model, train_set, val_set, dataset.templates(),
                             std::filesystem::path(out) / "train_log.jsonl");
  result.checkpoint.save(std::filesystem::path(out) / "checkpoint.bin");
  if (result.diverged) {
    std::cerr << "training diverged at epoch " << result.completed_epochs
              << "; last good checkpoint saved\n";
    return kExitNumeric;
  }
  std::cout << "trained " << result.completed_epochs << " epochs; checkpoint written to " << out
            << "\n";
  return kExitOk;
}

int run_infer(const std::string& checkpoint, const std::string& data, const std::string& cloud,
              std::optional<std::size_t> class_id, bool sequence, double sigma, double fps,
              const std::optional<std::string>& out, bool export_mesh) {
  auto net = load_network(checkpoint);
  auto dataset = popup::Dataset::load(data);
  const auto& templates = dataset.templates();

  std::vector<popup::PoseEstimate> estimates;
  if (sequence) {
    popup::FrameSequence seq;
    seq.fps = fps;
    for (const auto& f : sorted_cloud_files(cloud)) seq.frames.push_back({load_cloud(f), {}});
    popup::SequenceOptions opts;
    opts.smoothing_sigma = sigma;
    opts.class_id = class_id;
    estimates = popup::popup_sequence(seq, net, templates, opts);
  } else {
    if (!class_id && !net.config().class_head)
      throw popup::DataError("infer: --class required for a model without a class head");
    auto m = load_cloud(cloud);
    std::size_t cid = class_id ? *class_id
                               : popup::vote_class({net.predict_class(m)});
    estimates.push_back(popup::popup_single(m, cid, net, templates.at(cid)));
  }

  std::ostream* os = &std::cout;
  std::ofstream file;
  if (out) {
    std::filesystem::create_directories(*out);
    file.open(std::filesystem::path(*out) / "poses.jsonl", std::ios::trunc);
    os = &file;
  }
  for (std::size_t f = 0; f < estimates.size(); ++f) {
    *os << estimates[f].to_json_line(f) << "\n";
    if (out && export_mesh) {
      char name[32];
      std::snprintf(name, sizeof(name), "pose_%05zu", f);
      popup::io::write_obj(std::filesystem::path(*out) / (std::string(name) + ".obj"),
                           estimates[f].posed_template);
      popup::io::write_ply(std::filesystem::path(*out) / (std::string(name) + "_keypoints.ply"),
                           estimates[f].posed_keypoints);
    }
  }
  return kExitOk;
}

popup::Predictor make_model_predictor(const popup::PopupNetwork& net,
                                      const std::vector<popup::ObjectTemplate>& templates) {
  return [&net, &templates](const popup::ad::Matrix& cloud,
                            std::optional<std::size_t> class_id) {
    std::size_t cid;
    if (class_id) {
      cid = *class_id;
    } else {
      auto scores = net.predict_class(cloud);
      cid = static_cast<std::size_t>(
          std::max_element(scores.begin(), scores.end()) - scores.begin());
    }
    auto est = popup::popup_single(cloud, cid, net, templates.at(cid));
    return popup::PredictorOutput{est.center, est.posed_keypoints, cid};
  };
}

popup::Predictor make_nn_predictor(const popup::TrainBank& bank,
                                   const std::vector<popup::ObjectTemplate>& templates) {
  return [&bank, &templates](const popup::ad::Matrix& cloud,
                             std::optional<std::size_t> class_id) {
    auto nn = popup::nn_retrieve(cloud, bank, class_id);
    const auto& tmpl = templates.at(nn.class_id);
    popup::PredictorOutput out;
    out.posed_keypoints = nn.pose.apply(tmpl.keypoints);
    out.center = popup::Vec3::Zero();
    for (const auto& p : out.posed_keypoints) out.center += p;
    out.center /= static_cast<double>(out.posed_keypoints.size());
    out.class_id = nn.class_id;
    return out;
  };
}

int run_eval(const std::optional<std::string>& checkpoint, const std::string& data,
             const std::string& mode, const std::optional<std::string>& baseline,
             const std::string& split, std::size_t points,
             const std::optional<std::string>& out) {
  auto dataset = popup::Dataset::load(data);
  const auto& templates = dataset.templates();

  popup::EvalMode eval_mode;
  if (mode == "given-class")
    eval_mode = popup::EvalMode::GivenClass;
  else if (mode == "predicted-class")
    eval_mode = popup::EvalMode::PredictedClass;
  else
    throw CLI::ValidationError("--mode must be given-class or predicted-class");

  std::vector<popup::PredictionSample> samples;
  for (auto si : dataset.sequence_indices(split)) {
    auto seq = dataset.load_sequence(si);
    for (std::size_t f = 0; f < seq.clouds.size(); ++f) {
      popup::PredictionSample s;
      s.cloud = popup::subsample_cloud_stride(seq.clouds[f], points);
      s.gt = seq.gt[f];
      s.gt_class = seq.meta.class_id;
      samples.push_back(std::move(s));
    }
  }

  std::optional<popup::PopupNetwork> net;
  popup::TrainBank bank;
  popup::Predictor predictor;
  if (baseline) {
    if (*baseline != "nn") throw CLI::ValidationError("--baseline: only 'nn' is supported");
    bank = popup::build_train_bank(dataset, "train", points);
    predictor = make_nn_predictor(bank, templates);
  } else {
    if (!checkpoint) throw CLI::ValidationError("eval: --checkpoint or --baseline required");
    net = load_network(*checkpoint);
    predictor = make_model_predictor(*net, templates);
  }

  auto report = popup::evaluate(samples, templates, predictor, eval_mode,
                                dataset.manifest().classes.size());
  std::cout << report.to_text_table();
  if (out) {
    std::filesystem::create_directories(*out);
    popup::io::write_file_atomic(std::filesystem::path(*out) / "report.json",
                                 report.to_json_string());
    if (!report.confusion.empty())
      popup::io::write_file_atomic(std::filesystem::path(*out) / "confusion.csv",
                                   report.confusion_csv());
  }
  return kExitOk;
}

int run_saliency(const std::string& checkpoint, const std::string& data,
                 const std::string& cloud, std::size_t class_id, const std::string& gt,
                 std::size_t iters, double frac, double step, const std::string& out) {
  auto net = load_network(checkpoint);
  auto dataset = popup::Dataset::load(data);
  const auto& tmpl = dataset.template_for_class(class_id);
  auto keypoints = popup::points_to_matrix(tmpl.keypoints);

  auto m = load_cloud(cloud);
  auto gt_kp = popup::io::read_points(gt);
  auto result = popup::saliency_iterate(m, class_id, gt_kp, net, keypoints, iters, frac, step);

  std::filesystem::create_directories(out);
  auto points = popup::matrix_to_points(m);
  popup::io::write_ply(std::filesystem::path(out) / "scores.ply", points,
                       popup::io::PlyFormat::BinaryLittleEndian, &result.scores, "saliency");
  nlohmann::json j{{"masks", result.masks}, {"loss_trace", result.loss_trace}};
  popup::io::write_file_atomic(std::filesystem::path(out) / "trace.json", j.dump(2));
  for (std::size_t it = 0; it < result.clouds.size(); ++it) {
    char name[32];
    std::snprintf(name, sizeof(name), "iter_%02zu.ply", it + 1);
    popup::io::write_ply(std::filesystem::path(out) / name,
                         popup::matrix_to_points(result.clouds[it]));
  }
  std::cout << "saliency written to " << out << "\n";
  return kExitOk;
}

int run_baseline(const std::string& data, const std::string& query,
                 std::optional<std::size_t> class_id, const std::string& split,
                 std::size_t points) {
  auto dataset = popup::Dataset::load(data);
  auto bank = popup::build_train_bank(dataset, split, points);
  auto q = popup::subsample_cloud_stride(load_cloud(query), points);
  auto nn = popup::nn_retrieve(q, bank, class_id);

  std::vector<double> r(9);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) r[static_cast<std::size_t>(3 * i + j)] = nn.pose.R(i, j);
  nlohmann::json j{{"index", nn.index},
                   {"class", nn.class_id},
                   {"class_name", dataset.manifest().classes.at(nn.class_id)},
                   {"distance", nn.distance},
                   {"R", r},
                   {"t", {nn.pose.t.x(), nn.pose.t.y(), nn.pose.t.z()}}};
  std::cout << j.dump(2) << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"object pop-up: object pose from a human point cloud"};
  app.require_subcommand(0, 1);
  bool dump_config = false;
  app.add_flag("--dump-config", dump_config, "print all default configs as JSON and exit");

  // synth-data
  auto* synth = app.add_subcommand("synth-data", "generate the synthetic dataset");
  std::string synth_out;
  std::uint64_t synth_seed = 0;
  std::optional<std::string> synth_config;
  synth->add_option("--out", synth_out, "output directory")->required();
  synth->add_option("--seed", synth_seed, "generation seed");
  synth->add_option("--config", synth_config, "generator config (JSON)");

  // train
  auto* train = app.add_subcommand("train", "train a model");
  std::string train_data, train_out;
  std::optional<std::string> train_config;
  std::optional<std::uint64_t> train_seed;
  std::optional<std::size_t> train_epochs;
  train->add_option("--data", train_data, "dataset manifest")->required();
  train->add_option("--out", train_out, "output directory")->required();
  train->add_option("--config", train_config, "model+train config (JSON)");
  train->add_option("--seed", train_seed, "seed override");
  train->add_option("--epochs", train_epochs, "epoch override");

  // infer
  auto* infer = app.add_subcommand("infer", "predict object pose for a cloud or sequence");
  std::string infer_ckpt, infer_data, infer_cloud;
  std::optional<std::size_t> infer_class;
  bool infer_sequence = false, infer_mesh = false;
  double infer_sigma = 3.0, infer_fps = 10.0;
  std::optional<std::string> infer_out;
  infer->add_option("--checkpoint", infer_ckpt, "model checkpoint")->required();
  infer->add_option("--data", infer_data, "dataset manifest (for templates)")->required();
  infer->add_option("--cloud", infer_cloud, "point file, or directory with --sequence")
      ->required();
  infer->add_option("--class", infer_class, "object class id");
  infer->add_flag("--sequence", infer_sequence, "treat --cloud as a frame directory");
  infer->add_option("--sigma", infer_sigma, "smoothing sigma in frames");
  infer->add_option("--fps", infer_fps, "sequence frame rate");
  infer->add_option("--out", infer_out, "output directory (default: stdout)");
  infer->add_flag("--export-mesh", infer_mesh, "write posed OBJ/PLY per frame");

  // eval
  auto* eval = app.add_subcommand("eval", "evaluate a model or the NN baseline");
  std::optional<std::string> eval_ckpt, eval_baseline, eval_out;
  std::string eval_data, eval_mode, eval_split = "test";
  std::size_t eval_points = 0;
  eval->add_option("--checkpoint", eval_ckpt, "model checkpoint");
  eval->add_option("--data", eval_data, "dataset manifest")->required();
  eval->add_option("--mode", eval_mode, "given-class or predicted-class")->required();
  eval->add_option("--baseline", eval_baseline, "evaluate a baseline instead (nn)");
  eval->add_option("--split", eval_split, "dataset split (default test)");
  eval->add_option("--points", eval_points, "stride-subsample clouds to this count");
  eval->add_option("--out", eval_out, "report output directory");

  // saliency
  auto* sal = app.add_subcommand("saliency", "gradient saliency for the offset loss");
  std::string sal_ckpt, sal_data, sal_cloud, sal_gt, sal_out = "saliency_out";
  std::size_t sal_class = 0, sal_iters = 10;
  double sal_frac = 0.01, sal_step = 0.05;
  sal->add_option("--checkpoint", sal_ckpt, "model checkpoint")->required();
  sal->add_option("--data", sal_data, "dataset manifest (for templates)")->required();
  sal->add_option("--cloud", sal_cloud, "input point file")->required();
  sal->add_option("--class", sal_class, "object class id")->required();
  sal->add_option("--gt", sal_gt, "ground-truth posed key points (PLY/XYZ)")->required();
  sal->add_option("--iters", sal_iters, "iterations");
  sal->add_option("--frac", sal_frac, "fraction of points per iteration");
  sal->add_option("--step", sal_step, "shift factor toward the median");
  sal->add_option("--out", sal_out, "output directory");

  // baseline
  auto* base = app.add_subcommand("baseline", "nearest-neighbor retrieval for one query");
  std::string base_data, base_query, base_split = "train";
  std::optional<std::size_t> base_class;
  std::size_t base_points = 0;
  base->add_option("--data", base_data, "dataset manifest")->required();
  base->add_option("--query", base_query, "query point file")->required();
  base->add_option("--class", base_class, "restrict retrieval to a class");
  base->add_option("--split", base_split, "bank split (default train)");
  base->add_option("--points", base_points, "stride-subsample clouds to this count");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (dump_config) {
      dump_defaults();
      return kExitOk;
    }
    if (synth->parsed()) return run_synth(synth_out, synth_seed, synth_config);
    if (train->parsed())
      return run_train(train_data, train_out, train_config, train_seed, train_epochs);
    if (infer->parsed())
      return run_infer(infer_ckpt, infer_data, infer_cloud, infer_class, infer_sequence,
                       infer_sigma, infer_fps, infer_out, infer_mesh);
    if (eval->parsed())
      return run_eval(eval_ckpt, eval_data, eval_mode, eval_baseline, eval_split, eval_points,
                      eval_out);
    if (sal->parsed())
      return run_saliency(sal_ckpt, sal_data, sal_cloud, sal_class, sal_gt, sal_iters, sal_frac,
                          sal_step, sal_out);
    if (base->parsed())
      return run_baseline(base_data, base_query, base_class, base_split, base_points);
    std::cout << app.help();
    return kExitUsage;
  } catch (const CLI::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const popup::ad::AdError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  }
}
