#include "ddunet/config.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

namespace ddunet {

namespace {

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    const double d = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': cannot parse '" + v + "' as a number");
  }
}

int64_t parse_int(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    const long long i = std::stoll(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return i;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': cannot parse '" + v + "' as an integer");
  }
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError("config key '" + key + "': cannot parse '" + v + "' as a boolean");
}

std::vector<int64_t> parse_int_list(const std::string& key, const std::string& v) {
  std::vector<int64_t> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(parse_int(key, item));
  }
  return out;
}

}  // namespace

std::map<std::string, std::string> parse_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path.string());
  std::map<std::string, std::string> kv;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(path.string() + ":" + std::to_string(lineno) +
                        ": expected 'key = value'");
    }
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return kv;
}

void TrainConfig::apply(const std::map<std::string, std::string>& kv) {
  for (const auto& [key, value] : kv) {
    if (key == "optimizer") {
      if (value != "adam") throw ConfigError("optimizer must be 'adam', got '" + value + "'");
      optimizer = value;
    } else if (key == "batch_size") {
      batch_size = parse_int(key, value);
    } else if (key == "initial_lr") {
      initial_lr = parse_double(key, value);
    } else if (key == "schedule") {
      if (value != "poly") throw ConfigError("schedule must be 'poly', got '" + value + "'");
      schedule = value;
    } else if (key == "poly_power") {
      poly_power = parse_double(key, value);
    } else if (key == "weight_decay") {
      weight_decay = parse_double(key, value);
    } else if (key == "decoupled_weight_decay") {
      decoupled_weight_decay = parse_bool(key, value);
    } else if (key == "epochs") {
      epochs = parse_int(key, value);
    } else if (key == "grad_clip") {
      grad_clip = parse_double(key, value);
    } else if (key == "focal_gamma") {
      focal.gamma = parse_double(key, value);
    } else if (key == "focal_floor") {
      focal.probability_floor = parse_double(key, value);
    } else if (key == "adam_beta1") {
      adam.beta1 = parse_double(key, value);
    } else if (key == "adam_beta2") {
      adam.beta2 = parse_double(key, value);
    } else if (key == "adam_eps") {
      adam.eps = parse_double(key, value);
    } else if (key == "encoder_preset") {
      if (value == "resnet50")
        model.encoder.preset = EncoderPreset::ResNet50;
      else if (value == "small")
        model.encoder.preset = EncoderPreset::Small;
      else
        throw ConfigError("encoder_preset must be resnet50|small, got '" + value + "'");
    } else if (key == "width_multiplier") {
      model.encoder.width_multiplier = parse_double(key, value);
    } else if (key == "pretrained_encoder") {
      model.encoder.pretrained_weights = value;
    } else if (key == "freeze_bn_stats") {
      model.encoder.freeze_bn_stats = parse_bool(key, value);
    } else if (key == "dcam_dilations") {
      model.dcam_dilations = parse_int_list(key, value);
    } else if (key == "dcam_kernel") {
      model.dcam_kernel = parse_int(key, value);
    } else if (key == "cbam_reduction") {
      model.cbam.reduction = parse_int(key, value);
    } else if (key == "cbam_spatial_padding") {
      if (value == "zero")
        model.cbam.spatial_padding = PadMode::Zero;
      else if (value == "reflect")
        model.cbam.spatial_padding = PadMode::Reflect;
      else
        throw ConfigError("cbam_spatial_padding must be zero|reflect, got '" + value + "'");
    } else if (key == "use_dcam") {
      model.use_dcam = parse_bool(key, value);
    } else if (key == "use_small_decoder") {
      model.use_small_decoder = parse_bool(key, value);
    } else if (key == "fused_channels") {
      model.decoder.fused_channels = parse_int(key, value);
    } else if (key == "upsample_mode") {
      if (value == "tconv")
        model.decoder.upsample = UpsampleMode::TransposedConv;
      else if (value == "bilinear")
        model.decoder.upsample = UpsampleMode::BilinearConv;
      else
        throw ConfigError("upsample_mode must be tconv|bilinear, got '" + value + "'");
    } else if (key == "decoder_large_channels") {
      const auto list = parse_int_list(key, value);
      if (list.size() != 4) throw ConfigError("decoder_large_channels needs 4 entries");
      std::copy(list.begin(), list.end(), model.decoder.large_channels.begin());
      model.decoder_widths_explicit = true;
    } else if (key == "decoder_small_channels") {
      const auto list = parse_int_list(key, value);
      if (list.size() != 2) throw ConfigError("decoder_small_channels needs 2 entries");
      std::copy(list.begin(), list.end(), model.decoder.small_channels.begin());
      model.decoder_widths_explicit = true;
    } else if (key == "seed") {
      seed = static_cast<uint64_t>(parse_int(key, value));
    } else if (key == "threshold") {
      threshold = parse_double(key, value);
    } else if (key == "dataset") {
      dataset = value;
    } else if (key == "out_dir") {
      out_dir = value;
    } else if (key == "binarize_threshold") {
      binarize_threshold = static_cast<int>(parse_int(key, value));
    } else if (key == "tile_size") {
      tile_size = parse_int(key, value);
    } else if (key == "tile_stride") {
      tile_stride = parse_int(key, value);
    } else if (key == "augment") {
      augment = parse_bool(key, value);
    } else if (key == "synth_train_count") {
      synth_train_count = parse_int(key, value);
    } else if (key == "synth_val_count") {
      synth_val_count = parse_int(key, value);
    } else if (key == "synth_test_count") {
      synth_test_count = parse_int(key, value);
    } else if (key == "synth_size") {
      synth_size = parse_int(key, value);
    } else if (key == "synth_min_roads") {
      synth.min_roads = parse_int(key, value);
    } else if (key == "synth_max_roads") {
      synth.max_roads = parse_int(key, value);
    } else if (key == "synth_min_width") {
      synth.min_width = parse_double(key, value);
    } else if (key == "synth_max_width") {
      synth.max_width = parse_double(key, value);
    } else if (key == "synth_max_blobs") {
      synth.max_blobs = parse_int(key, value);
    } else if (key == "synth_low_contrast_prob") {
      synth.low_contrast_prob = parse_double(key, value);
    } else {
      throw ConfigError("unknown config key '" + key + "'");
    }
  }
}

TrainConfig load_train_config(const std::filesystem::path& path) {
  TrainConfig cfg;
  cfg.apply(parse_config_file(path));
  return cfg;
}

std::string config_to_json(const TrainConfig& cfg) {
  nlohmann::ordered_json j;
  j["optimizer"] = cfg.optimizer;
  j["batch_size"] = cfg.batch_size;
  j["initial_lr"] = cfg.initial_lr;
  j["schedule"] = cfg.schedule;
  j["poly_power"] = cfg.poly_power;
  j["weight_decay"] = cfg.weight_decay;
  j["decoupled_weight_decay"] = cfg.decoupled_weight_decay;
  j["epochs"] = cfg.epochs;
  j["grad_clip"] = cfg.grad_clip;
  j["focal_gamma"] = cfg.focal.gamma;
  j["focal_floor"] = cfg.focal.probability_floor;
  j["adam_beta1"] = cfg.adam.beta1;
  j["adam_beta2"] = cfg.adam.beta2;
  j["adam_eps"] = cfg.adam.eps;
  j["encoder_preset"] =
      cfg.model.encoder.preset == EncoderPreset::ResNet50 ? "resnet50" : "small";
  j["width_multiplier"] = cfg.model.encoder.width_multiplier;
  j["pretrained_encoder"] = cfg.model.encoder.pretrained_weights;
  j["freeze_bn_stats"] = cfg.model.encoder.freeze_bn_stats;
  j["dcam_dilations"] = cfg.model.dcam_dilations;
  j["dcam_kernel"] = cfg.model.dcam_kernel;
  j["cbam_reduction"] = cfg.model.cbam.reduction;
  j["cbam_spatial_padding"] =
      cfg.model.cbam.spatial_padding == PadMode::Zero ? "zero" : "reflect";
  j["use_dcam"] = cfg.model.use_dcam;
  j["use_small_decoder"] = cfg.model.use_small_decoder;
  j["fused_channels"] = cfg.model.decoder.fused_channels;
  j["upsample_mode"] =
      cfg.model.decoder.upsample == UpsampleMode::TransposedConv ? "tconv" : "bilinear";
  if (cfg.model.decoder_widths_explicit) {
    j["decoder_large_channels"] = cfg.model.decoder.large_channels;
    j["decoder_small_channels"] = cfg.model.decoder.small_channels;
  }
  j["seed"] = cfg.seed;
  j["threshold"] = cfg.threshold;
  j["dataset"] = cfg.dataset;
  j["out_dir"] = cfg.out_dir.string();
  j["binarize_threshold"] = cfg.binarize_threshold;
  j["tile_size"] = cfg.tile_size;
  j["tile_stride"] = cfg.tile_stride;
  j["augment"] = cfg.augment;
  j["synth_train_count"] = cfg.synth_train_count;
  j["synth_val_count"] = cfg.synth_val_count;
  j["synth_test_count"] = cfg.synth_test_count;
  j["synth_size"] = cfg.synth_size;
  j["synth_min_roads"] = cfg.synth.min_roads;
  j["synth_max_roads"] = cfg.synth.max_roads;
  j["synth_min_width"] = cfg.synth.min_width;
  j["synth_max_width"] = cfg.synth.max_width;
  j["synth_max_blobs"] = cfg.synth.max_blobs;
  j["synth_low_contrast_prob"] = cfg.synth.low_contrast_prob;
  return j.dump(2);
}

TrainConfig config_from_json(const std::string& json_text) {
  const auto j = nlohmann::json::parse(json_text);
  std::map<std::string, std::string> kv;
  for (auto it = j.begin(); it != j.end(); ++it) {
    const auto& v = it.value();
    if (v.is_string()) {
      kv[it.key()] = v.get<std::string>();
    } else if (v.is_boolean()) {
      kv[it.key()] = v.get<bool>() ? "true" : "false";
    } else if (v.is_array()) {
      std::string s;
      for (const auto& e : v) {
        if (!s.empty()) s += ",";
        s += std::to_string(e.get<int64_t>());
      }
      kv[it.key()] = s;
    } else if (v.is_number_unsigned()) {
      kv[it.key()] = std::to_string(v.get<uint64_t>());
    } else if (v.is_number_integer()) {
      kv[it.key()] = std::to_string(v.get<int64_t>());
    } else {
      std::ostringstream os;
      os.precision(17);
      os << v.get<double>();
      kv[it.key()] = os.str();
    }
  }
  TrainConfig cfg;
  cfg.apply(kv);
  return cfg;
}

std::string model_config_fingerprint(const TrainConfig& cfg) {
  nlohmann::ordered_json j;
  j["encoder_preset"] =
      cfg.model.encoder.preset == EncoderPreset::ResNet50 ? "resnet50" : "small";
  j["width_multiplier"] = cfg.model.encoder.width_multiplier;
  j["dcam_dilations"] = cfg.model.dcam_dilations;
  j["dcam_kernel"] = cfg.model.dcam_kernel;
  j["cbam_reduction"] = cfg.model.cbam.reduction;
  j["cbam_spatial_padding"] =
      cfg.model.cbam.spatial_padding == PadMode::Zero ? "zero" : "reflect";
  j["use_dcam"] = cfg.model.use_dcam;
  j["use_small_decoder"] = cfg.model.use_small_decoder;
  j["fused_channels"] = cfg.model.decoder.fused_channels;
  j["upsample_mode"] =
      cfg.model.decoder.upsample == UpsampleMode::TransposedConv ? "tconv" : "bilinear";
  j["decoder_widths_explicit"] = cfg.model.decoder_widths_explicit;
  if (cfg.model.decoder_widths_explicit) {
    j["decoder_large_channels"] = cfg.model.decoder.large_channels;
    j["decoder_small_channels"] = cfg.model.decoder.small_channels;
  }
  return j.dump();
}

std::unique_ptr<Dataset> make_dataset(const TrainConfig& cfg) {
  if (cfg.dataset == "synthetic") {
    return std::make_unique<SyntheticDataset>(cfg.synth_train_count, cfg.synth_val_count,
                                              cfg.synth_test_count, cfg.synth_size, cfg.seed,
                                              cfg.synth);
  }
  DatasetIndex index = build_dataset_index(cfg.dataset, cfg.tile_size, cfg.tile_stride);
  return std::make_unique<DiskDataset>(std::move(index), cfg.binarize_threshold);
}

}  // namespace ddunet
