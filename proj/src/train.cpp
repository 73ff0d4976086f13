#include "ddunet/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>

#include <json.hpp>

namespace ddunet {

namespace fs = std::filesystem;

TrainingDiverged::TrainingDiverged(int64_t step_, double lr_, double grad_norm_)
    : std::runtime_error("training diverged: non-finite loss at step " + std::to_string(step_) +
                         " (lr " + std::to_string(lr_) + ", grad norm " +
                         std::to_string(grad_norm_) + ")"),
      step(step_),
      lr(lr_),
      grad_norm(grad_norm_) {}

std::pair<Tensor, Tensor> stack_samples(const std::vector<Sample>& samples) {
  if (samples.empty()) throw std::invalid_argument("stack_samples: empty batch");
  const int64_t B = static_cast<int64_t>(samples.size());
  const int64_t H = samples[0].image.dim(1), W = samples[0].image.dim(2);
  Tensor images({B, 3, H, W});
  Tensor masks({B, 1, H, W});
  for (int64_t b = 0; b < B; ++b) {
    const Sample& s = samples[static_cast<size_t>(b)];
    if (s.image.dim(1) != H || s.image.dim(2) != W) {
      throw ShapeError("stack_samples: samples disagree spatially");
    }
    std::copy_n(s.image.data(), 3 * H * W, images.data() + b * 3 * H * W);
    std::copy_n(s.mask.data(), H * W, masks.data() + b * H * W);
  }
  return {std::move(images), std::move(masks)};
}

namespace {

// flips plus quarter turns; quarter turns require square tiles
void augment_sample(Sample& s, bool horizontal, bool vertical, int quarter_turns) {
  const int64_t H = s.image.dim(1), W = s.image.dim(2);
  if (quarter_turns % 2 != 0 && H != W) quarter_turns = 0;
  if (!horizontal && !vertical && quarter_turns == 0) return;
  auto transform_plane = [&](double* p) {
    Tensor tmp({H, W});
    for (int64_t h = 0; h < H; ++h)
      for (int64_t w = 0; w < W; ++w) {
        int64_t sh = vertical ? H - 1 - h : h;
        int64_t sw = horizontal ? W - 1 - w : w;
        for (int q = 0; q < quarter_turns; ++q) {
          const int64_t nh = W - 1 - sw;  // 90-degree turn
          const int64_t nw = sh;
          sh = nh;
          sw = nw;
        }
        tmp[h * W + w] = p[sh * W + sw];
      }
    std::copy_n(tmp.data(), H * W, p);
  };
  for (int64_t c = 0; c < 3; ++c) transform_plane(s.image.data() + c * H * W);
  transform_plane(s.mask.data());
}

std::string metric_str(const std::optional<double>& m) {
  if (!m) return "";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6f", *m);
  return buf;
}

nlohmann::ordered_json metrics_to_json(const MetricsReport& r) {
  nlohmann::ordered_json j;
  auto put = [&](const char* key, const std::optional<double>& v) {
    if (v)
      j[key] = *v;
    else
      j[key] = nullptr;
  };
  put("accuracy", r.accuracy);
  put("precision", r.precision);
  put("recall", r.recall);
  put("f1", r.f1);
  put("iou_road", r.iou_road);
  put("miou", r.miou);
  j["counts"] = {{"tp", r.counts.tp}, {"fp", r.counts.fp}, {"fn", r.counts.fn},
                 {"tn", r.counts.tn}};
  return j;
}

}  // namespace

Tensor infer_logits(DduNet& model, const Tensor& image) {
  if (image.rank() != 3 || image.dim(0) != 3) {
    throw ShapeError("infer_logits: expected (3,H,W) image, got " +
                     shape_to_string(image.shape()));
  }
  NoGradGuard no_grad;
  auto [padded, geo] = pad_to_multiple(image, 32);
  Tensor batch({1, 3, padded.dim(1), padded.dim(2)});
  std::copy_n(padded.data(), padded.numel(), batch.data());
  Var logits = model.forward(make_var(std::move(batch)));
  return crop_back(logits->value, geo);
}

EvalResult evaluate_split(DduNet& model, Dataset& data, Split split, double threshold) {
  model.set_training(false);
  EvalResult result;
  const int64_t n = data.count(split);
  for (int64_t i = 0; i < n; ++i) {
    const Sample sample = data.get(split, i);
    const Tensor logits = infer_logits(model, sample.image);
    Tensor pred = predict_mask(logits, threshold);
    Tensor gt({1, 1, sample.mask.dim(1), sample.mask.dim(2)});
    std::copy_n(sample.mask.data(), sample.mask.numel(), gt.data());
    ConfusionCounts counts;
    accumulate_confusion(pred, gt, counts);
    result.pooled.counts += counts;
    result.rows.push_back({data.id(split, i), compute_metrics(counts)});
  }
  if (result.pooled.counts.total() > 0) {
    result.pooled = compute_metrics(result.pooled.counts);
  }
  model.set_training(true);
  return result;
}

std::optional<double> EvalResult::mean_of(const char* metric) const {
  double sum = 0.0;
  int64_t count = 0;
  for (const auto& row : rows) {
    const MetricsReport& m = row.metrics;
    std::optional<double> v;
    const std::string key = metric;
    if (key == "accuracy") v = m.accuracy;
    else if (key == "precision") v = m.precision;
    else if (key == "recall") v = m.recall;
    else if (key == "f1") v = m.f1;
    else if (key == "iou_road") v = m.iou_road;
    else if (key == "miou") v = m.miou;
    if (v) {
      sum += *v;
      ++count;
    }
  }
  if (count == 0) return std::nullopt;
  return sum / static_cast<double>(count);
}

void write_eval_json(const fs::path& path, const EvalResult& result, Split split) {
  nlohmann::ordered_json j;
  j["split"] = split_name(split);
  j["pooled"] = metrics_to_json(result.pooled);
  nlohmann::ordered_json per_image_mean;
  for (const char* key : {"accuracy", "precision", "recall", "f1", "iou_road", "miou"}) {
    const auto v = result.mean_of(key);
    if (v)
      per_image_mean[key] = *v;
    else
      per_image_mean[key] = nullptr;
  }
  j["per_image_mean"] = per_image_mean;
  j["images"] = static_cast<int64_t>(result.rows.size());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write report: " + path.string());
  out << j.dump(2) << "\n";
}

void write_eval_csv(const fs::path& path, const EvalResult& result) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write report: " + path.string());
  out << "image_id,accuracy,precision,recall,f1,iou_road,miou\n";
  for (const auto& row : result.rows) {
    const MetricsReport& m = row.metrics;
    out << row.id << "," << metric_str(m.accuracy) << "," << metric_str(m.precision) << ","
        << metric_str(m.recall) << "," << metric_str(m.f1) << "," << metric_str(m.iou_road)
        << "," << metric_str(m.miou) << "\n";
  }
}

void save_checkpoint(const fs::path& dir, DduNet& model, Adam& optim, const TrainConfig& cfg,
                     int64_t epoch, int64_t global_step, const TrainResult& progress) {
  fs::create_directories(dir);
  ParamSink sink;
  model.collect("model", sink);
  write_tensor_archive(dir / "model.dduw", named_tensors(sink));
  write_tensor_archive(dir / "optim.dduw", optim.state_tensors());

  nlohmann::ordered_json state;
  state["config"] = nlohmann::ordered_json::parse(config_to_json(cfg));
  state["epoch"] = epoch;
  state["global_step"] = global_step;
  state["best_epoch"] = progress.best_epoch;
  if (progress.best_val_miou)
    state["best_val_miou"] = *progress.best_val_miou;
  else
    state["best_val_miou"] = nullptr;
  auto& hist = state["val_miou_history"] = nlohmann::ordered_json::array();
  for (const auto& v : progress.val_miou_history) {
    if (v)
      hist.push_back(*v);
    else
      hist.push_back(nullptr);
  }
  std::ofstream out(dir / "state.json", std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write checkpoint state: " + dir.string());
  out << state.dump(2) << "\n";
}

std::unique_ptr<DduNet> model_from_checkpoint(const fs::path& dir, TrainConfig* out_cfg) {
  std::ifstream in(dir / "state.json");
  if (!in) throw std::runtime_error("cannot read checkpoint: " + (dir / "state.json").string());
  const auto state = nlohmann::json::parse(in);
  TrainConfig cfg = config_from_json(state.at("config").dump());
  if (out_cfg) *out_cfg = cfg;

  Rng init_rng(derive_seed(cfg.seed, 1));
  auto model = std::make_unique<DduNet>(init_rng, cfg.model);
  ParamSink sink;
  model->collect("model", sink);
  const auto entries = read_tensor_archive(dir / "model.dduw");
  const LoadReport report = apply_archive(entries, named_tensors(sink));
  if (!report.missing.empty()) {
    std::string msg = "checkpoint " + dir.string() + " is missing tensors:";
    for (const auto& name : report.missing) msg += " " + name;
    throw std::runtime_error(msg);
  }
  return model;
}

TrainResult train(const TrainConfig& cfg, const std::optional<fs::path>& resume_dir,
                  std::optional<int64_t> stop_after_epoch) {
  if (cfg.batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (cfg.epochs < 1) throw ConfigError("epochs must be >= 1");

  auto dataset = make_dataset(cfg);
  const int64_t n_train = dataset->count(Split::Train);
  if (n_train < 1) throw ConfigError("training split is empty");
  const int64_t batch = std::min<int64_t>(cfg.batch_size, n_train);
  const int64_t steps_per_epoch = n_train / batch;  // partial tail batch dropped
  const int64_t total_steps = cfg.epochs * steps_per_epoch;

  Rng init_rng(derive_seed(cfg.seed, 1));
  DduNet model(init_rng, cfg.model);
  ParamSink sink;
  model.collect("model", sink);

  AdamConfig adam_cfg = cfg.adam;
  adam_cfg.weight_decay = cfg.weight_decay;
  adam_cfg.decoupled_weight_decay = cfg.decoupled_weight_decay;
  Adam optim(sink.params, adam_cfg);

  TrainResult result;
  result.out_dir = cfg.out_dir;
  result.last_checkpoint = cfg.out_dir / "last";
  result.best_checkpoint = cfg.out_dir / "best";

  int64_t start_epoch = 0;  // epochs completed so far
  int64_t global_step = 0;
  if (resume_dir) {
    const auto entries = read_tensor_archive(*resume_dir / "model.dduw");
    const LoadReport rep = apply_archive(entries, named_tensors(sink));
    if (!rep.missing.empty()) {
      throw std::runtime_error("resume checkpoint lacks " +
                               std::to_string(rep.missing.size()) + " tensors");
    }
    const NamedTensorRefs optim_refs = optim.state_tensors();
    const LoadReport optim_rep =
        apply_archive(read_tensor_archive(*resume_dir / "optim.dduw"), optim_refs);
    if (!optim_rep.missing.empty()) {
      throw std::runtime_error("resume checkpoint lacks optimizer state for " +
                               std::to_string(optim_rep.missing.size()) + " tensors");
    }
    optim.sync_step_from_state();
    std::ifstream in(*resume_dir / "state.json");
    const auto state = nlohmann::json::parse(in);
    start_epoch = state.at("epoch").get<int64_t>();
    global_step = state.at("global_step").get<int64_t>();
    result.best_epoch = state.at("best_epoch").get<int64_t>();
    if (!state.at("best_val_miou").is_null()) {
      result.best_val_miou = state.at("best_val_miou").get<double>();
    }
    for (const auto& v : state.at("val_miou_history")) {
      result.val_miou_history.push_back(v.is_null() ? std::nullopt
                                                    : std::optional<double>(v.get<double>()));
    }
  }

  fs::create_directories(cfg.out_dir);
  const bool resuming = resume_dir.has_value();
  std::ofstream log(cfg.out_dir / "train_log.csv",
                    resuming ? std::ios::app : std::ios::trunc);
  if (!log) throw std::runtime_error("cannot write train log under " + cfg.out_dir.string());
  if (!resuming) log << "step,lr,loss\n";
  std::ofstream val_log(cfg.out_dir / "val_log.jsonl",
                        resuming ? std::ios::app : std::ios::trunc);

  model.set_training(true);
  std::vector<int64_t> order(static_cast<size_t>(n_train));
  for (int64_t i = 0; i < n_train; ++i) order[static_cast<size_t>(i)] = i;

  const int64_t end_epoch = std::min<int64_t>(cfg.epochs, stop_after_epoch.value_or(cfg.epochs));
  for (int64_t epoch = start_epoch; epoch < end_epoch; ++epoch) {
    Rng shuffle_rng(derive_seed(cfg.seed, 1000 + static_cast<uint64_t>(epoch)));
    std::vector<int64_t> perm = order;
    shuffle_rng.shuffle(perm);

    for (int64_t s = 0; s < steps_per_epoch; ++s) {
      std::vector<Sample> samples;
      samples.reserve(static_cast<size_t>(batch));
      for (int64_t b = 0; b < batch; ++b) {
        Sample sample = dataset->get(Split::Train, perm[static_cast<size_t>(s * batch + b)]);
        if (cfg.augment) {
          augment_sample(sample, shuffle_rng.uniform() < 0.5, shuffle_rng.uniform() < 0.5,
                         static_cast<int>(shuffle_rng.uniform_int(0, 3)));
        }
        samples.push_back(std::move(sample));
      }
      auto [images, masks] = stack_samples(samples);
      const double lr = poly_lr(global_step, total_steps, cfg.initial_lr, cfg.poly_power);

      Var input = make_var(std::move(images));
      Var loss;
      try {
        loss = focal_loss(sigmoid(model.forward(input)), masks, cfg.focal);
      } catch (const ShapeError& e) {
        // the block-boundary finite checks fire before the loss can
        if (std::string(e.what()).find("non-finite") != std::string::npos) {
          throw TrainingDiverged(global_step + 1, lr, optim.grad_norm());
        }
        throw;
      }
      const double loss_value = loss->value[0];
      backward(loss);
      const double gn = optim.grad_norm();
      // a non-finite gradient would poison the parameters on update
      if (!std::isfinite(loss_value) || !std::isfinite(gn)) {
        throw TrainingDiverged(global_step + 1, lr, gn);
      }
      if (cfg.grad_clip > 0.0 && gn > cfg.grad_clip) {
        const double scale = cfg.grad_clip / gn;
        for (auto& [name, p] : sink.params) {
          Tensor& g = p->ensure_grad();
          for (int64_t i = 0; i < g.numel(); ++i) g[i] *= scale;
        }
      }
      optim.step(lr);
      optim.zero_grad();
      ++global_step;

      char line[96];
      std::snprintf(line, sizeof(line), "%lld,%.17g,%.17g\n",
                    static_cast<long long>(global_step), lr, loss_value);
      log << line;
      result.step_log.push_back({global_step, lr, loss_value});
    }

    // validation cadence: once per epoch
    std::optional<double> val_miou;
    if (dataset->count(Split::Val) > 0) {
      EvalResult val;
      try {
        val = evaluate_split(model, *dataset, Split::Val, cfg.threshold);
      } catch (const ShapeError& e) {
        // divergence can poison the normalization buffers before the loss:
        // surface it with the training diagnostic rather than a shape error
        if (std::string(e.what()).find("non-finite") != std::string::npos) {
          throw TrainingDiverged(global_step,
                                 poly_lr(global_step, total_steps, cfg.initial_lr,
                                         cfg.poly_power),
                                 optim.grad_norm());
        }
        throw;
      }
      val_miou = val.pooled.miou;
      nlohmann::ordered_json j;
      j["epoch"] = epoch + 1;
      j["metrics"] = metrics_to_json(val.pooled);
      val_log << j.dump() << "\n";
    }
    result.val_miou_history.push_back(val_miou);

    save_checkpoint(cfg.out_dir / "last", model, optim, cfg, epoch + 1, global_step, result);
    const double current = val_miou.value_or(-1.0);
    const double best = result.best_val_miou.value_or(-1.0);
    if (result.best_epoch < 0 || current > best) {
      result.best_epoch = epoch + 1;
      result.best_val_miou = val_miou;
      save_checkpoint(cfg.out_dir / "best", model, optim, cfg, epoch + 1, global_step, result);
    }
  }
  return result;
}

std::vector<AblationRow> run_ablation(const TrainConfig& cfg) {
  const std::array<std::tuple<std::string, bool, bool>, 3> variants = {
      std::make_tuple("unet", false, false),
      std::make_tuple("unet_dcam", true, false),
      std::make_tuple("unet_dcam_dual", true, true),
  };
  std::vector<AblationRow> rows;
  for (const auto& [name, use_dcam, use_small] : variants) {
    AblationRow row;
    row.name = name;
    row.use_dcam = use_dcam;
    row.use_small_decoder = use_small;
    try {
      TrainConfig variant = cfg;
      variant.model.use_dcam = use_dcam;
      variant.model.use_small_decoder = use_small;
      variant.out_dir = cfg.out_dir / name;
      const TrainResult tr = train(variant);
      auto dataset = make_dataset(variant);
      auto model = model_from_checkpoint(tr.last_checkpoint);
      const Split eval_split =
          dataset->count(Split::Test) > 0 ? Split::Test : Split::Val;
      const EvalResult ev = evaluate_split(*model, *dataset, eval_split, variant.threshold);
      row.metrics = ev.pooled;
    } catch (const std::exception& e) {
      row.error = e.what();
      std::cerr << "ablation variant '" << name << "' failed: " << e.what() << "\n";
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

void write_ablation_json(const fs::path& path, const std::vector<AblationRow>& rows) {
  nlohmann::ordered_json j = nlohmann::ordered_json::array();
  for (const auto& row : rows) {
    nlohmann::ordered_json r;
    r["name"] = row.name;
    r["use_dcam"] = row.use_dcam;
    r["use_small_decoder"] = row.use_small_decoder;
    if (row.error.empty()) {
      r["metrics"] = metrics_to_json(row.metrics);
    } else {
      r["error"] = row.error;
    }
    j.push_back(std::move(r));
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write ablation report: " + path.string());
  out << j.dump(2) << "\n";
}

void write_ablation_csv(const fs::path& path, const std::vector<AblationRow>& rows) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write ablation report: " + path.string());
  out << "method,accuracy,precision,recall,f1,miou\n";
  for (const auto& row : rows) {
    const MetricsReport& m = row.metrics;
    out << row.name << "," << metric_str(m.accuracy) << "," << metric_str(m.precision) << ","
        << metric_str(m.recall) << "," << metric_str(m.f1) << "," << metric_str(m.miou)
        << "\n";
  }
}

ImageU8 heatmap_image(DduNet& model, const Tensor& image, const std::string& layer_tag) {
  if (image.rank() != 3 || image.dim(0) != 3) {
    throw ShapeError("heatmap: expected (3,H,W) image");
  }
  static const char* kTags[] = {"large_decoder_out", "small_decoder_out", "fused", "logits"};
  if (std::find_if(std::begin(kTags), std::end(kTags),
                   [&](const char* t) { return layer_tag == t; }) == std::end(kTags)) {
    throw std::invalid_argument(
        "unknown heatmap layer '" + layer_tag +
        "' (valid: large_decoder_out, small_decoder_out, fused, logits)");
  }

  NoGradGuard no_grad;
  model.set_training(false);
  auto [padded, geo] = pad_to_multiple(image, 32);
  Tensor batch({1, 3, padded.dim(1), padded.dim(2)});
  std::copy_n(padded.data(), padded.numel(), batch.data());
  DduNet::Taps taps = model.forward_detailed(make_var(std::move(batch)));
  model.set_training(true);

  Var tap;
  if (layer_tag == "large_decoder_out") tap = taps.large_out;
  else if (layer_tag == "small_decoder_out") tap = taps.small_out;
  else if (layer_tag == "fused") tap = taps.fused;
  else tap = taps.logits;
  if (!tap) {
    throw std::invalid_argument("heatmap layer '" + layer_tag +
                                "' is not present in this model variant");
  }

  // channel mean at the tap's own resolution
  const int64_t C = tap->dim(1), h = tap->dim(2), w = tap->dim(3);
  Tensor mean({h, w});
  for (int64_t i = 0; i < h * w; ++i) {
    double s = 0.0;
    for (int64_t c = 0; c < C; ++c) s += tap->value[c * h * w + i];
    mean[i] = s / static_cast<double>(C);
  }

  double lo = mean[0], hi = mean[0];
  for (int64_t i = 1; i < h * w; ++i) {
    lo = std::min(lo, mean[i]);
    hi = std::max(hi, mean[i]);
  }

  // nearest-neighbor lift to the padded resolution, then crop to the input
  const int64_t Hp = padded.dim(1), Wp = padded.dim(2);
  ImageU8 img;
  img.height = geo.original_height;
  img.width = geo.original_width;
  img.channels = 1;
  img.pixels.resize(static_cast<size_t>(img.height * img.width));
  const double range = hi - lo;
  for (int64_t y = 0; y < img.height; ++y)
    for (int64_t x = 0; x < img.width; ++x) {
      const int64_t sy = std::min(h - 1, y * h / Hp);
      const int64_t sx = std::min(w - 1, x * w / Wp);
      uint8_t v = 128;  // degenerate flat map renders mid-gray
      if (range > 1e-12) {
        v = static_cast<uint8_t>(std::lround((mean[sy * w + sx] - lo) / range * 255.0));
      }
      img.at(y, x, 0) = v;
    }
  return img;
}

PredictOutcome predict_images(DduNet& model, const std::vector<fs::path>& images,
                              const fs::path& out_dir, double threshold) {
  fs::create_directories(out_dir);
  PredictOutcome outcome;
  model.set_training(false);
  for (const auto& path : images) {
    try {
      const ImageU8 raw = read_image(path);
      const Tensor image = image_to_tensor(raw);
      const Tensor logits = infer_logits(model, image);
      const Tensor mask = predict_mask(logits, threshold);
      const int64_t H = mask.dim(2), W = mask.dim(3);

      ImageU8 mask_img;
      mask_img.height = H;
      mask_img.width = W;
      mask_img.channels = 1;
      mask_img.pixels.resize(static_cast<size_t>(H * W));
      for (int64_t i = 0; i < H * W; ++i) {
        mask_img.pixels[static_cast<size_t>(i)] = mask[i] == 1.0 ? 255 : 0;
      }

      ImageU8 overlay;
      overlay.height = H;
      overlay.width = W;
      overlay.channels = 3;
      overlay.pixels.resize(static_cast<size_t>(H * W * 3));
      for (int64_t y = 0; y < H; ++y)
        for (int64_t x = 0; x < W; ++x) {
          for (int64_t c = 0; c < 3; ++c) {
            const uint8_t base = raw.at(y, x, raw.channels == 1 ? 0 : c);
            if (mask[y * W + x] == 1.0) {
              overlay.at(y, x, c) = static_cast<uint8_t>(
                  c == 0 ? std::min(255, int(base) / 2 + 128) : int(base) / 2);
            } else {
              overlay.at(y, x, c) = base;
            }
          }
        }

      const std::string stem = path.stem().string();
      const fs::path mask_path = out_dir / (stem + "_mask.png");
      const fs::path overlay_path = out_dir / (stem + "_overlay.png");
      write_png(mask_path, mask_img);
      write_png(overlay_path, overlay);
      outcome.written.push_back(mask_path);
      outcome.written.push_back(overlay_path);
    } catch (const std::exception& e) {
      outcome.failures.push_back(path.string() + ": " + e.what());
      std::cerr << "predict: " << path.string() << " failed: " << e.what() << "\n";
    }
  }
  model.set_training(true);
  return outcome;
}

}  // namespace ddunet
