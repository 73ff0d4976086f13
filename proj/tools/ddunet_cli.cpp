#include <cstdlib>
#include <iostream>

#include <CLI11.hpp>

#include "ddunet/train.hpp"

namespace {

using namespace ddunet;

ddunet::TrainConfig make_config(const std::string& config_path, const std::string& seed,
                                const std::string& dataset, const std::string& out) {
  TrainConfig cfg;
  if (!config_path.empty()) cfg = load_train_config(config_path);
  std::map<std::string, std::string> overrides;
  if (!seed.empty()) overrides["seed"] = seed;
  if (!dataset.empty()) overrides["dataset"] = dataset;
  if (!out.empty()) overrides["out_dir"] = out;
  cfg.apply(overrides);
  return cfg;
}

int cmd_train(const std::string& config_path, const std::string& seed,
              const std::string& dataset, const std::string& out, const std::string& resume) {
  const TrainConfig cfg = make_config(config_path, seed, dataset, out);
  std::optional<std::filesystem::path> resume_dir;
  if (!resume.empty()) resume_dir = resume;
  const TrainResult result = train(cfg, resume_dir);
  std::cout << "trained " << result.step_log.size() << " steps this run; checkpoints under "
            << result.out_dir.string() << "\n";
  if (result.best_val_miou) {
    std::cout << "best val mIoU " << *result.best_val_miou << " at epoch "
              << result.best_epoch << "\n";
  }
  return 0;
}

int cmd_eval(const std::string& checkpoint, const std::string& config_path,
             const std::string& split_str, const std::string& dataset, const std::string& out,
             double threshold) {
  TrainConfig cfg;
  auto model = model_from_checkpoint(checkpoint, &cfg);
  if (!config_path.empty()) {
    // the override may retarget data/reporting, never the architecture
    const std::string model_keys_before = model_config_fingerprint(cfg);
    cfg.apply(parse_config_file(config_path));
    if (model_config_fingerprint(cfg) != model_keys_before) {
      throw std::runtime_error(
          "config disagrees with the checkpoint's model settings; retrain or drop the "
          "conflicting model keys");
    }
  }
  if (!dataset.empty()) cfg.dataset = dataset;
  if (threshold > 0.0) cfg.threshold = threshold;
  auto data = make_dataset(cfg);
  const Split split = split_from_name(split_str);
  if (data->count(split) == 0) {
    throw std::runtime_error("split '" + split_str + "' is empty");
  }
  const EvalResult result = evaluate_split(*model, *data, split, cfg.threshold);
  const std::filesystem::path out_dir =
      out.empty() ? cfg.out_dir / "eval" : std::filesystem::path(out);
  std::filesystem::create_directories(out_dir);
  write_eval_json(out_dir / ("metrics_" + split_str + ".json"), result, split);
  write_eval_csv(out_dir / ("per_image_" + split_str + ".csv"), result);
  auto show = [](const char* name, const std::optional<double>& v) {
    std::cout << "  " << name << ": ";
    if (v)
      std::cout << *v << "\n";
    else
      std::cout << "undefined\n";
  };
  std::cout << "pooled metrics on " << split_str << " (" << result.rows.size() << " images):\n";
  show("accuracy", result.pooled.accuracy);
  show("precision", result.pooled.precision);
  show("recall", result.pooled.recall);
  show("f1", result.pooled.f1);
  show("iou_road", result.pooled.iou_road);
  show("miou", result.pooled.miou);
  std::cout << "reports written to " << out_dir.string() << "\n";
  return 0;
}

int cmd_predict(const std::string& checkpoint, const std::string& config_path,
                const std::vector<std::string>& images, const std::string& out,
                double threshold, bool threshold_given) {
  auto model = model_from_checkpoint(checkpoint);
  if (!config_path.empty() && !threshold_given) {
    TrainConfig cfg;
    cfg.apply(parse_config_file(config_path));
    threshold = cfg.threshold;
  }
  std::vector<std::filesystem::path> paths(images.begin(), images.end());
  const PredictOutcome outcome = predict_images(*model, paths, out, threshold);
  std::cout << "wrote " << outcome.written.size() << " files to " << out << "\n";
  if (!outcome.failures.empty()) {
    std::cerr << outcome.failures.size() << " inputs failed\n";
    return 1;
  }
  return 0;
}

int cmd_ablate(const std::string& config_path, const std::string& seed,
               const std::string& dataset, const std::string& out) {
  const TrainConfig cfg = make_config(config_path, seed, dataset, out);
  const auto rows = run_ablation(cfg);
  std::filesystem::create_directories(cfg.out_dir);
  write_ablation_json(cfg.out_dir / "ablation_report.json", rows);
  write_ablation_csv(cfg.out_dir / "ablation_report.csv", rows);
  bool any_error = false;
  for (const auto& row : rows) {
    std::cout << row.name << ": ";
    if (!row.error.empty()) {
      std::cout << "FAILED (" << row.error << ")\n";
      any_error = true;
    } else if (row.metrics.miou) {
      std::cout << "miou " << *row.metrics.miou << "\n";
    } else {
      std::cout << "miou undefined\n";
    }
  }
  std::cout << "ablation report under " << cfg.out_dir.string() << "\n";
  return any_error ? 1 : 0;
}

int cmd_heatmap(const std::string& checkpoint, const std::string& image_path,
                const std::string& layer, const std::string& out) {
  auto model = model_from_checkpoint(checkpoint);
  const Tensor image = image_to_tensor(read_image(image_path));
  const ImageU8 map = heatmap_image(*model, image, layer);
  write_png(out, map);
  std::cout << "heatmap (" << layer << ") written to " << out << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ddunet: dual-decoder road-extraction network"};
  app.require_subcommand(1);

  std::string config_path, seed, dataset, out, resume, checkpoint, split = "test";
  std::string image_path, layer = "fused";
  std::vector<std::string> images;
  double threshold = 0.5;

  auto* train_cmd = app.add_subcommand("train", "train a model");
  train_cmd->add_option("--config", config_path, "key=value config file");
  train_cmd->add_option("--seed", seed, "override seed");
  train_cmd->add_option("--dataset", dataset, "dataset dir or 'synthetic'");
  train_cmd->add_option("--out", out, "output directory");
  train_cmd->add_option("--resume", resume, "checkpoint directory to resume from");

  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
  eval_cmd->add_option("--checkpoint", checkpoint, "checkpoint directory")->required();
  eval_cmd->add_option("--config", config_path, "config overriding the checkpoint snapshot");
  eval_cmd->add_option("--split", split, "train|val|test (default test)");
  eval_cmd->add_option("--dataset", dataset, "override dataset");
  eval_cmd->add_option("--out", out, "report directory");
  eval_cmd->add_option("--threshold", threshold, "mask threshold");

  auto* predict_cmd = app.add_subcommand("predict", "write masks and overlays");
  predict_cmd->add_option("--checkpoint", checkpoint, "checkpoint directory")->required();
  predict_cmd->add_option("--config", config_path, "config supplying the threshold");
  predict_cmd->add_option("--out", out, "output directory")->required();
  predict_cmd->add_option("--threshold", threshold, "mask threshold");
  predict_cmd->add_option("images", images, "input images")->required();

  auto* ablate_cmd = app.add_subcommand("ablate", "train and score the three variants");
  ablate_cmd->add_option("--config", config_path, "key=value config file");
  ablate_cmd->add_option("--seed", seed, "override seed");
  ablate_cmd->add_option("--dataset", dataset, "dataset dir or 'synthetic'");
  ablate_cmd->add_option("--out", out, "output directory");

  auto* heatmap_cmd = app.add_subcommand("heatmap", "export a feature heatmap");
  heatmap_cmd->add_option("--checkpoint", checkpoint, "checkpoint directory")->required();
  heatmap_cmd->add_option("--config", config_path, "accepted for uniformity across verbs");
  heatmap_cmd->add_option("--image", image_path, "input image")->required();
  heatmap_cmd->add_option("--layer", layer,
                          "large_decoder_out|small_decoder_out|fused|logits");
  heatmap_cmd->add_option("--out", out, "output PNG path")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (train_cmd->parsed()) return cmd_train(config_path, seed, dataset, out, resume);
    if (eval_cmd->parsed()) return cmd_eval(checkpoint, config_path, split, dataset, out, threshold);
    if (predict_cmd->parsed()) {
      return cmd_predict(checkpoint, config_path, images, out, threshold,
                         predict_cmd->count("--threshold") > 0);
    }
    if (ablate_cmd->parsed()) return cmd_ablate(config_path, seed, dataset, out);
    if (heatmap_cmd->parsed()) return cmd_heatmap(checkpoint, image_path, layer, out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
