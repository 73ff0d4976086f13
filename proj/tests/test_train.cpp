#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "ddunet/train.hpp"
#include "test_helpers.hpp"

#include <json.hpp>

using namespace ddunet;
namespace fs = std::filesystem;

namespace {

TrainConfig tiny_config(const fs::path& out_dir, int64_t epochs) {
  TrainConfig cfg;
  cfg.model.encoder.preset = EncoderPreset::Small;
  cfg.model.encoder.width_multiplier = 0.25;
  cfg.model.cbam.reduction = 2;
  cfg.model.decoder.fused_channels = 16;
  cfg.dataset = "synthetic";
  cfg.synth_train_count = 8;
  cfg.synth_val_count = 2;
  cfg.synth_test_count = 2;
  cfg.synth_size = 64;
  cfg.batch_size = 4;
  cfg.epochs = epochs;
  cfg.seed = 11;
  cfg.out_dir = out_dir;
  return cfg;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("train config defaults match the reference recipe") {
  const TrainConfig cfg;
  CHECK(cfg.optimizer == "adam");
  CHECK(cfg.batch_size == 4);
  CHECK(cfg.initial_lr == 0.001);
  CHECK(cfg.schedule == "poly");
  CHECK(cfg.poly_power == 0.9);
  CHECK(cfg.weight_decay == 5e-4);
  CHECK(cfg.epochs == 50);
  CHECK(cfg.focal.gamma == 2.0);
  CHECK(cfg.tile_size == 512);
  CHECK(cfg.tile_stride == 484);
  CHECK(cfg.adam.beta1 == 0.9);
  CHECK(cfg.adam.beta2 == 0.999);
  CHECK(cfg.adam.eps == 1e-8);
}

TEST_CASE("config files parse, reject unknown keys, and round trip") {
  const fs::path dir = fs::temp_directory_path() / "ddunet_cfg_test";
  fs::create_directories(dir);
  {
    std::ofstream out(dir / "good.cfg");
    out << "# comment line\n"
        << "initial_lr = 0.01\n"
        << "encoder_preset = small\n"
        << "width_multiplier = 0.5\n"
        << "dcam_dilations = 1,2,4\n"
        << "use_small_decoder = false\n";
  }
  const TrainConfig cfg = load_train_config(dir / "good.cfg");
  CHECK(cfg.initial_lr == 0.01);
  CHECK(cfg.model.encoder.width_multiplier == 0.5);
  CHECK_FALSE(cfg.model.use_small_decoder);

  {
    std::ofstream out(dir / "bad.cfg");
    out << "learning_rate = 0.01\n";  // not a key
  }
  CHECK_THROWS_AS(load_train_config(dir / "bad.cfg"), ConfigError);

  {
    std::ofstream out(dir / "badval.cfg");
    out << "batch_size = four\n";
  }
  CHECK_THROWS_AS(load_train_config(dir / "badval.cfg"), ConfigError);

  // JSON snapshot round trip preserves every field it prints
  TrainConfig snap = cfg;
  snap.seed = 123;
  snap.model.decoder.fused_channels = 64;
  const TrainConfig back = config_from_json(config_to_json(snap));
  CHECK(config_to_json(back) == config_to_json(snap));
  fs::remove_all(dir);
}

TEST_CASE("short training run reduces the loss and logs every step") {
  const fs::path out = fs::temp_directory_path() / "ddunet_train_smoke";
  fs::remove_all(out);
  TrainConfig cfg = tiny_config(out, 15);  // 8 samples / batch 4 = 2 steps per epoch
  const TrainResult result = train(cfg);
  REQUIRE(result.step_log.size() == 30);
  CHECK(result.step_log.front().step == 1);
  CHECK(result.step_log.back().step == 30);
  CHECK(result.step_log.back().loss < result.step_log.front().loss);
  CHECK(result.step_log.front().lr == doctest::Approx(0.001));
  CHECK(fs::exists(out / "last" / "model.dduw"));
  CHECK(fs::exists(out / "last" / "optim.dduw"));
  CHECK(fs::exists(out / "last" / "state.json"));
  CHECK(fs::exists(out / "best" / "model.dduw"));
  CHECK(fs::exists(out / "train_log.csv"));
  CHECK(result.val_miou_history.size() == 15);

  SUBCASE("checkpoint reload rebuilds an identical model") {
    auto model = model_from_checkpoint(out / "last");
    ParamSink sink;
    model->collect("model", sink);
    CHECK_FALSE(sink.params.empty());
    NoGradGuard guard;
    model->set_training(false);
    Rng rng(3);
    Var image = testutil::random_var(rng, {1, 3, 64, 64}, false, 0.0, 1.0);
    CHECK(model->forward(image)->value.shape() == Shape{1, 1, 64, 64});
  }
  fs::remove_all(out);
}

TEST_CASE("training is deterministic: equal logs and byte-equal archives") {
  const fs::path out_a = fs::temp_directory_path() / "ddunet_det_a";
  const fs::path out_b = fs::temp_directory_path() / "ddunet_det_b";
  fs::remove_all(out_a);
  fs::remove_all(out_b);
  TrainConfig cfg_a = tiny_config(out_a, 2);
  TrainConfig cfg_b = tiny_config(out_b, 2);
  const TrainResult ra = train(cfg_a);
  const TrainResult rb = train(cfg_b);
  REQUIRE(ra.step_log.size() == rb.step_log.size());
  for (size_t i = 0; i < ra.step_log.size(); ++i) {
    CHECK(ra.step_log[i].loss == rb.step_log[i].loss);
    CHECK(ra.step_log[i].lr == rb.step_log[i].lr);
  }
  CHECK(slurp(out_a / "last" / "model.dduw") == slurp(out_b / "last" / "model.dduw"));
  CHECK(slurp(out_a / "train_log.csv") == slurp(out_b / "train_log.csv"));
  fs::remove_all(out_a);
  fs::remove_all(out_b);
}

TEST_CASE("resume continues the uninterrupted loss sequence") {
  const fs::path out_full = fs::temp_directory_path() / "ddunet_resume_full";
  const fs::path out_part = fs::temp_directory_path() / "ddunet_resume_part";
  fs::remove_all(out_full);
  fs::remove_all(out_part);

  TrainConfig cfg_full = tiny_config(out_full, 4);
  const TrainResult full = train(cfg_full);

  // same 4-epoch schedule, interrupted after 2 epochs, then resumed
  TrainConfig cfg_part = tiny_config(out_part, 4);
  const TrainResult part = train(cfg_part, std::nullopt, 2);
  const TrainResult resumed = train(cfg_part, out_part / "last");

  REQUIRE(full.step_log.size() == 8);
  REQUIRE(part.step_log.size() == 4);
  REQUIRE(resumed.step_log.size() == 4);  // steps 5..8
  CHECK(resumed.step_log.front().step == 5);
  for (size_t i = 0; i < 4; ++i) {
    CHECK(resumed.step_log[i].loss == full.step_log[4 + i].loss);
    CHECK(resumed.step_log[i].lr == full.step_log[4 + i].lr);
  }
  CHECK(slurp(out_full / "last" / "model.dduw") == slurp(out_part / "last" / "model.dduw"));
  fs::remove_all(out_full);
  fs::remove_all(out_part);
}

TEST_CASE("evaluation pipeline: perfect background prediction scores accuracy 1") {
  // empty ground-truth masks and a head biased to silence: pred == gt
  TrainConfig cfg = tiny_config(fs::temp_directory_path() / "ddunet_eval", 1);
  cfg.synth.min_roads = 0;
  cfg.synth.max_roads = 0;
  auto data = make_dataset(cfg);

  Rng rng(derive_seed(cfg.seed, 1));
  DduNet model(rng, cfg.model);
  ParamSink sink;
  model.collect("model", sink);
  for (auto& [name, p] : sink.params) {
    if (name == "model.head.head_conv.bias") p->value.fill(-50.0);
  }
  const EvalResult result = evaluate_split(model, *data, Split::Val, 0.5);
  REQUIRE(result.rows.size() == 2);
  CHECK(*result.pooled.accuracy == 1.0);
  CHECK_FALSE(result.pooled.precision.has_value());
  CHECK_FALSE(result.pooled.miou.has_value());
  for (const auto& row : result.rows) CHECK(*row.metrics.accuracy == 1.0);
}

TEST_CASE("evaluation reports carry the six report columns and pool correctly") {
  const fs::path out = fs::temp_directory_path() / "ddunet_eval_cols";
  fs::remove_all(out);
  fs::create_directories(out);
  TrainConfig cfg = tiny_config(out, 1);
  auto data = make_dataset(cfg);
  Rng rng(derive_seed(cfg.seed, 1));
  DduNet model(rng, cfg.model);

  const EvalResult result = evaluate_split(model, *data, Split::Test, 0.5);
  write_eval_json(out / "metrics.json", result, Split::Test);
  write_eval_csv(out / "per_image.csv", result);

  const auto j = nlohmann::json::parse(slurp(out / "metrics.json"));
  const std::vector<std::string> cols = {"accuracy", "precision", "recall",
                                         "f1",       "iou_road",  "miou"};
  for (const auto& c : cols) {
    CHECK(j.at("pooled").contains(c));
    CHECK(j.at("per_image_mean").contains(c));
  }
  std::string header;
  std::ifstream csv(out / "per_image.csv");
  std::getline(csv, header);
  CHECK(header == "image_id,accuracy,precision,recall,f1,iou_road,miou");

  // pooled counts equal an independent whole-set recount
  ConfusionCounts recount;
  model.set_training(false);
  for (int64_t i = 0; i < data->count(Split::Test); ++i) {
    const Sample s = data->get(Split::Test, i);
    const Tensor logits = infer_logits(model, s.image);
    const Tensor pred = predict_mask(logits, 0.5);
    Tensor gt({1, 1, s.mask.dim(1), s.mask.dim(2)});
    std::copy_n(s.mask.data(), s.mask.numel(), gt.data());
    accumulate_confusion(pred, gt, recount);
  }
  CHECK(recount == result.pooled.counts);
  fs::remove_all(out);
}

TEST_CASE("ablation harness emits three variants with the standard columns") {
  const fs::path out = fs::temp_directory_path() / "ddunet_ablate_test";
  fs::remove_all(out);
  TrainConfig cfg = tiny_config(out, 1);
  cfg.synth_train_count = 4;
  cfg.synth_val_count = 1;
  cfg.synth_test_count = 1;
  const auto rows = run_ablation(cfg);
  REQUIRE(rows.size() == 3);
  CHECK(rows[0].name == "unet");
  CHECK_FALSE(rows[0].use_dcam);
  CHECK_FALSE(rows[0].use_small_decoder);
  CHECK(rows[1].use_dcam);
  CHECK_FALSE(rows[1].use_small_decoder);
  CHECK(rows[2].use_dcam);
  CHECK(rows[2].use_small_decoder);
  for (const auto& row : rows) CHECK(row.error.empty());

  write_ablation_json(out / "ablation_report.json", rows);
  write_ablation_csv(out / "ablation_report.csv", rows);
  const auto j = nlohmann::json::parse(slurp(out / "ablation_report.json"));
  REQUIRE(j.size() == 3);
  for (const auto& r : j) {
    for (const char* c : {"accuracy", "precision", "recall", "f1", "miou"}) {
      CHECK(r.at("metrics").contains(c));
    }
  }
  std::string header;
  std::ifstream csv(out / "ablation_report.csv");
  std::getline(csv, header);
  CHECK(header == "method,accuracy,precision,recall,f1,miou");

  // variant configs differ only in the two architecture flags
  TrainConfig a = cfg, b = cfg;
  a.model.use_dcam = false;
  a.model.use_small_decoder = false;
  b.model.use_dcam = true;
  b.model.use_small_decoder = false;
  auto ja = nlohmann::json::parse(config_to_json(a));
  auto jb = nlohmann::json::parse(config_to_json(b));
  std::vector<std::string> diff;
  for (auto it = ja.begin(); it != ja.end(); ++it) {
    if (jb.at(it.key()) != it.value()) diff.push_back(it.key());
  }
  CHECK(diff == std::vector<std::string>{"use_dcam"});
  fs::remove_all(out);
}

TEST_CASE("heatmaps: flat maps render mid-gray, channel mean matches a loop") {
  TrainConfig cfg = tiny_config(fs::temp_directory_path() / "ddunet_heat", 1);
  Rng rng(derive_seed(cfg.seed, 1));
  DduNet model(rng, cfg.model);

  const Sample sample = synth_road_sample(5, 64, cfg.synth);

  SUBCASE("unknown layer names the valid tags") {
    try {
      heatmap_image(model, sample.image, "bogus");
      FAIL("expected invalid_argument");
    } catch (const std::invalid_argument& e) {
      CHECK(std::string(e.what()).find("fused") != std::string::npos);
    }
  }

  SUBCASE("zeroed model yields a constant map rendered as 128") {
    ParamSink sink;
    model.collect("model", sink);
    for (auto& [name, p] : sink.params) p->value.fill(0.0);
    const ImageU8 map = heatmap_image(model, sample.image, "logits");
    CHECK(map.height == 64);
    CHECK(map.width == 64);
    for (const uint8_t v : map.pixels) CHECK(v == 128);
  }

  SUBCASE("fused heatmap equals an independent per-pixel loop") {
    const ImageU8 map = heatmap_image(model, sample.image, "fused");
    CHECK(map.height == 64);
    CHECK(map.width == 64);

    NoGradGuard guard;
    model.set_training(false);
    Tensor batch({1, 3, 64, 64});
    std::copy_n(sample.image.data(), sample.image.numel(), batch.data());
    const DduNet::Taps taps = model.forward_detailed(make_var(std::move(batch)));
    model.set_training(true);
    const int64_t C = taps.fused->dim(1), h = taps.fused->dim(2), w = taps.fused->dim(3);
    std::vector<double> mean(static_cast<size_t>(h * w));
    for (int64_t i = 0; i < h * w; ++i) {
      double s = 0.0;
      for (int64_t c = 0; c < C; ++c) s += taps.fused->value[c * h * w + i];
      mean[static_cast<size_t>(i)] = s / static_cast<double>(C);
    }
    double lo = mean[0], hi = mean[0];
    for (double v : mean) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    for (int64_t y = 0; y < 64; ++y)
      for (int64_t x = 0; x < 64; ++x) {
        const int64_t sy = y * h / 64, sx = x * w / 64;
        const auto expect = static_cast<uint8_t>(
            std::lround((mean[static_cast<size_t>(sy * w + sx)] - lo) / (hi - lo) * 255.0));
        CHECK(map.at(y, x, 0) == expect);
      }
  }
}

TEST_CASE("predict writes masks and overlays, and survives unreadable inputs") {
  const fs::path dir = fs::temp_directory_path() / "ddunet_predict_test";
  fs::remove_all(dir);
  fs::create_directories(dir);

  TrainConfig cfg = tiny_config(dir / "run", 1);
  Rng rng(derive_seed(cfg.seed, 1));
  DduNet model(rng, cfg.model);

  const Sample sample = synth_road_sample(4, 64, cfg.synth);
  write_png(dir / "scene.png", tensor_to_image(sample.image));

  // 70x90 forces the reflect-pad/crop round trip
  ImageU8 odd;
  odd.height = 70;
  odd.width = 90;
  odd.channels = 3;
  odd.pixels.assign(70 * 90 * 3, 120);
  write_png(dir / "odd.png", odd);

  const PredictOutcome outcome = predict_images(
      model, {dir / "scene.png", dir / "missing.png", dir / "odd.png"}, dir / "out", 0.5);
  CHECK(outcome.written.size() == 4);
  REQUIRE(outcome.failures.size() == 1);
  CHECK(outcome.failures[0].find("missing.png") != std::string::npos);

  const ImageU8 mask = read_image(dir / "out" / "scene_mask.png");
  CHECK(mask.height == 64);
  CHECK(mask.width == 64);
  for (const uint8_t v : mask.pixels) CHECK((v == 0 || v == 255));
  const ImageU8 odd_mask = read_image(dir / "out" / "odd_mask.png");
  CHECK(odd_mask.height == 70);
  CHECK(odd_mask.width == 90);
  const ImageU8 overlay = read_image(dir / "out" / "scene_overlay.png");
  CHECK(overlay.channels == 3);

  SUBCASE("full-size 1500x1500 raster survives the pad/crop round trip") {
    ImageU8 big;
    big.height = 1500;
    big.width = 1500;
    big.channels = 3;
    big.pixels.assign(1500 * 1500 * 3, 100);
    write_png(dir / "big.png", big);
    const PredictOutcome big_outcome =
        predict_images(model, {dir / "big.png"}, dir / "out_big", 0.5);
    CHECK(big_outcome.failures.empty());
    const ImageU8 big_mask = read_image(dir / "out_big" / "big_mask.png");
    CHECK(big_mask.height == 1500);
    CHECK(big_mask.width == 1500);
  }
  fs::remove_all(dir);
}

TEST_CASE("training from a disk dataset: tiles, loader cache, eval on whole images") {
  const fs::path root = fs::temp_directory_path() / "ddunet_disk_train";
  fs::remove_all(root);
  // render synthetic scenes to PNG pairs; train images are 128^2 so the
  // 64-tile/64-stride grid yields 4 tiles each
  auto dump = [&](Split split, int count, int64_t size, uint64_t seed0) {
    const fs::path dir = root / split_name(split);
    fs::create_directories(dir / "images");
    fs::create_directories(dir / "masks");
    for (int i = 0; i < count; ++i) {
      const Sample s = synth_road_sample(seed0 + static_cast<uint64_t>(i), size);
      write_png(dir / "images" / ("scene" + std::to_string(i) + ".png"),
                tensor_to_image(s.image));
      ImageU8 mask;
      mask.height = mask.width = size;
      mask.channels = 1;
      mask.pixels.resize(static_cast<size_t>(size * size));
      for (int64_t p = 0; p < size * size; ++p) {
        mask.pixels[static_cast<size_t>(p)] = s.mask[p] == 1.0 ? 255 : 0;
      }
      write_png(dir / "masks" / ("scene" + std::to_string(i) + ".png"), mask);
    }
  };
  dump(Split::Train, 2, 128, 100);
  dump(Split::Val, 1, 64, 200);
  dump(Split::Test, 1, 64, 300);

  TrainConfig cfg = tiny_config(root / "run", 2);
  cfg.dataset = root.string();
  cfg.tile_size = 64;
  cfg.tile_stride = 64;

  const TrainResult result = train(cfg);
  CHECK(result.step_log.size() == 4);  // 2 images x 4 tiles / batch 4 = 2 steps/epoch
  CHECK(result.val_miou_history.size() == 2);

  auto data = make_dataset(cfg);
  CHECK(data->count(Split::Train) == 8);
  CHECK(data->count(Split::Test) == 1);
  auto model = model_from_checkpoint(result.last_checkpoint);
  const EvalResult ev = evaluate_split(*model, *data, Split::Test, cfg.threshold);
  CHECK(ev.rows.size() == 1);
  CHECK(ev.pooled.counts.total() == 64 * 64);
  fs::remove_all(root);
}

TEST_CASE("diverged training aborts with a diagnostic dump") {
  const fs::path out = fs::temp_directory_path() / "ddunet_diverge";
  fs::remove_all(out);
  TrainConfig cfg = tiny_config(out, 2);
  cfg.initial_lr = 1e80;  // blows activations past the representable range
  cfg.weight_decay = 0.0;
  try {
    train(cfg);
    FAIL("expected TrainingDiverged");
  } catch (const TrainingDiverged& e) {
    CHECK(e.step >= 1);
    CHECK(std::string(e.what()).find("non-finite") != std::string::npos);
  }
  fs::remove_all(out);
}
