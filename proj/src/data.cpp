#include "ddunet/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>

#include <json.hpp>

namespace ddunet {

namespace fs = std::filesystem;

std::string split_name(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "?";
}

Split split_from_name(const std::string& name) {
  if (name == "train") return Split::Train;
  if (name == "val") return Split::Val;
  if (name == "test") return Split::Test;
  throw std::invalid_argument("unknown split '" + name + "' (expected train|val|test)");
}

std::vector<int64_t> tile_positions(int64_t extent, int64_t tile, int64_t stride) {
  if (stride < 1) throw std::invalid_argument("tile_positions: stride must be >= 1");
  if (tile < 1 || tile > extent) {
    throw std::invalid_argument("tile_positions: tile " + std::to_string(tile) +
                                " does not fit extent " + std::to_string(extent));
  }
  std::vector<int64_t> offsets;
  for (int64_t off = 0; off + tile <= extent; off += stride) offsets.push_back(off);
  return offsets;
}

namespace {

const char* kRasterExtensions[] = {".png", ".tif", ".tiff", ".PNG", ".TIF", ".TIFF"};

bool is_raster(const fs::path& p) {
  const std::string ext = p.extension().string();
  for (const char* e : kRasterExtensions) {
    if (ext == e) return true;
  }
  return false;
}

// id -> file path, sorted by id
std::map<std::string, fs::path> list_rasters(const fs::path& dir) {
  std::map<std::string, fs::path> out;
  if (!fs::exists(dir)) return out;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && is_raster(entry.path())) {
      out[entry.path().stem().string()] = entry.path();
    }
  }
  return out;
}

}  // namespace

std::filesystem::path image_path(const DatasetIndex& index, Split split,
                                 const std::string& image_id) {
  const auto files = list_rasters(index.root / split_name(split) / "images");
  auto it = files.find(image_id);
  if (it == files.end()) {
    throw std::runtime_error("image id '" + image_id + "' not found under " +
                             (index.root / split_name(split) / "images").string());
  }
  return it->second;
}

std::filesystem::path mask_path(const DatasetIndex& index, Split split,
                                const std::string& image_id) {
  const auto files = list_rasters(index.root / split_name(split) / "masks");
  auto it = files.find(image_id);
  if (it == files.end()) {
    throw std::runtime_error("mask id '" + image_id + "' not found under " +
                             (index.root / split_name(split) / "masks").string());
  }
  return it->second;
}

DatasetIndex build_dataset_index(const fs::path& root, int64_t tile, int64_t stride) {
  DatasetIndex index;
  index.root = root;
  for (Split split : {Split::Train, Split::Val, Split::Test}) {
    const fs::path images_dir = root / split_name(split) / "images";
    const fs::path masks_dir = root / split_name(split) / "masks";
    const auto images = list_rasters(images_dir);
    const auto masks = list_rasters(masks_dir);

    std::vector<std::string> orphans;
    for (const auto& [id, path] : images) {
      if (!masks.count(id)) orphans.push_back(id);
    }
    if (!orphans.empty()) {
      std::string msg = "images without a mask partner under " + images_dir.string() + ":";
      for (const auto& id : orphans) msg += " " + id;
      throw std::runtime_error(msg);
    }

    for (const auto& [id, path] : images) {
      const auto [height, width] = probe_image_size(path);
      if (split == Split::Test) {
        index.test.push_back({id, height, width});
        continue;
      }
      auto& records = (split == Split::Train) ? index.train : index.val;
      for (int64_t y : tile_positions(height, tile, stride)) {
        for (int64_t x : tile_positions(width, tile, stride)) {
          records.push_back({id, x, y, tile, split});
        }
      }
    }
  }
  return index;
}

void write_index_cache(const fs::path& path, const DatasetIndex& index) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write index cache: " + path.string());
  auto emit_tile = [&](const TileSpec& t) {
    nlohmann::ordered_json j;
    j["image_id"] = t.image_id;
    j["x_offset"] = t.x_offset;
    j["y_offset"] = t.y_offset;
    j["tile_size"] = t.tile_size;
    j["split"] = split_name(t.split);
    out << j.dump() << "\n";
  };
  for (const auto& t : index.train) emit_tile(t);
  for (const auto& t : index.val) emit_tile(t);
  for (const auto& r : index.test) {
    nlohmann::ordered_json j;
    j["image_id"] = r.image_id;
    j["height"] = r.height;
    j["width"] = r.width;
    j["split"] = "test";
    out << j.dump() << "\n";
  }
}

DatasetIndex read_index_cache(const fs::path& path, const fs::path& root) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read index cache: " + path.string());
  DatasetIndex index;
  index.root = root;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line);
    const Split split = split_from_name(j.at("split").get<std::string>());
    if (split == Split::Test) {
      index.test.push_back({j.at("image_id").get<std::string>(), j.at("height").get<int64_t>(),
                            j.at("width").get<int64_t>()});
    } else {
      TileSpec t;
      t.image_id = j.at("image_id").get<std::string>();
      t.x_offset = j.at("x_offset").get<int64_t>();
      t.y_offset = j.at("y_offset").get<int64_t>();
      t.tile_size = j.at("tile_size").get<int64_t>();
      t.split = split;
      ((split == Split::Train) ? index.train : index.val).push_back(std::move(t));
    }
  }
  return index;
}

const Sample& SampleLoader::cached_full(const DatasetIndex& index, Split split,
                                        const std::string& id) {
  const std::string key = split_name(split) + "/" + id;
  if (key != cache_key_) {
    cache_.image = image_to_tensor(read_image(image_path(index, split, id)));
    cache_.mask = mask_from_image(read_image(mask_path(index, split, id)), binarize_threshold_);
    if (cache_.image.dim(1) != cache_.mask.dim(1) || cache_.image.dim(2) != cache_.mask.dim(2)) {
      throw std::runtime_error("image and mask dims differ for id '" + id + "'");
    }
    cache_key_ = key;
  }
  return cache_;
}

Sample SampleLoader::load_tile(const DatasetIndex& index, const TileSpec& spec) {
  const Sample& full = cached_full(index, spec.split, spec.image_id);
  const int64_t H = full.image.dim(1), W = full.image.dim(2), T = spec.tile_size;
  if (spec.x_offset < 0 || spec.y_offset < 0 || spec.x_offset + T > W || spec.y_offset + T > H) {
    throw std::invalid_argument("tile out of bounds for image '" + spec.image_id + "'");
  }
  Sample s;
  s.image = Tensor({3, T, T});
  s.mask = Tensor({1, T, T});
  for (int64_t c = 0; c < 3; ++c)
    for (int64_t h = 0; h < T; ++h)
      for (int64_t w = 0; w < T; ++w) {
        s.image[(c * T + h) * T + w] =
            full.image[(c * H + spec.y_offset + h) * W + spec.x_offset + w];
      }
  for (int64_t h = 0; h < T; ++h)
    for (int64_t w = 0; w < T; ++w) {
      s.mask[h * T + w] = full.mask[(spec.y_offset + h) * W + spec.x_offset + w];
    }
  return s;
}

Sample SampleLoader::load_whole(const DatasetIndex& index, Split split,
                                const std::string& image_id) {
  return cached_full(index, split, image_id);
}

namespace {

int64_t reflect_index(int64_t i, int64_t n) {
  if (n == 1) return 0;
  const int64_t period = 2 * n - 2;
  i = ((i % period) + period) % period;
  return i < n ? i : period - i;
}

}  // namespace

std::pair<Tensor, PadGeometry> pad_to_multiple(const Tensor& t, int64_t multiple) {
  if (multiple < 1) throw std::invalid_argument("pad_to_multiple: multiple must be >= 1");
  if (t.rank() != 3 && t.rank() != 4) {
    throw ShapeError("pad_to_multiple: expected rank 3 or 4, got " +
                     shape_to_string(t.shape()));
  }
  const int64_t H = t.dim(t.rank() - 2), W = t.dim(t.rank() - 1);
  const int64_t Hp = (H + multiple - 1) / multiple * multiple;
  const int64_t Wp = (W + multiple - 1) / multiple * multiple;
  PadGeometry geo{H, W};
  if (Hp == H && Wp == W) return {t, geo};

  Shape out_shape = t.shape();
  out_shape[static_cast<size_t>(t.rank() - 2)] = Hp;
  out_shape[static_cast<size_t>(t.rank() - 1)] = Wp;
  Tensor out(out_shape);
  const int64_t planes = t.numel() / (H * W);
  for (int64_t p = 0; p < planes; ++p) {
    const double* src = t.data() + p * H * W;
    double* dst = out.data() + p * Hp * Wp;
    for (int64_t h = 0; h < Hp; ++h) {
      const int64_t sh = reflect_index(h, H);
      for (int64_t w = 0; w < Wp; ++w) dst[h * Wp + w] = src[sh * W + reflect_index(w, W)];
    }
  }
  return {out, geo};
}

Tensor crop_back(const Tensor& t, const PadGeometry& geometry) {
  if (t.rank() != 3 && t.rank() != 4) {
    throw ShapeError("crop_back: expected rank 3 or 4, got " + shape_to_string(t.shape()));
  }
  const int64_t H = t.dim(t.rank() - 2), W = t.dim(t.rank() - 1);
  const int64_t Ho = geometry.original_height, Wo = geometry.original_width;
  if (Ho > H || Wo > W) throw ShapeError("crop_back: geometry larger than tensor");
  if (Ho == H && Wo == W) return t;
  Shape out_shape = t.shape();
  out_shape[static_cast<size_t>(t.rank() - 2)] = Ho;
  out_shape[static_cast<size_t>(t.rank() - 1)] = Wo;
  Tensor out(out_shape);
  const int64_t planes = t.numel() / (H * W);
  for (int64_t p = 0; p < planes; ++p) {
    const double* src = t.data() + p * H * W;
    double* dst = out.data() + p * Ho * Wo;
    for (int64_t h = 0; h < Ho; ++h)
      for (int64_t w = 0; w < Wo; ++w) dst[h * Wo + w] = src[h * W + w];
  }
  return out;
}

Sample synth_road_sample(uint64_t seed, int64_t size, const SynthParams& params) {
  if (size < 32 || size % 32 != 0) {
    throw std::invalid_argument("synth_road_sample: size must be >= 32 and divisible by 32");
  }
  Rng rng(derive_seed(seed, 0x5eed));
  Sample s;
  s.image = Tensor({3, size, size});
  s.mask = Tensor({1, size, size});
  const int64_t hw = size * size;

  // background: per-channel base tone + coarse low-frequency field + grain
  const double base_r = rng.uniform(0.30, 0.50);
  const double base_g = rng.uniform(0.35, 0.55);
  const double base_b = rng.uniform(0.25, 0.45);
  const double base[3] = {base_r, base_g, base_b};
  const int64_t grid = 9;  // coarse noise control points
  std::vector<double> coarse(static_cast<size_t>(grid * grid));
  for (auto& v : coarse) v = rng.uniform(-0.06, 0.06);
  auto coarse_at = [&](int64_t h, int64_t w) {
    const double fy = static_cast<double>(h) / static_cast<double>(size - 1) * (grid - 1);
    const double fx = static_cast<double>(w) / static_cast<double>(size - 1) * (grid - 1);
    const int64_t y0 = std::min<int64_t>(static_cast<int64_t>(fy), grid - 2);
    const int64_t x0 = std::min<int64_t>(static_cast<int64_t>(fx), grid - 2);
    const double ty = fy - static_cast<double>(y0);
    const double tx = fx - static_cast<double>(x0);
    const double a = coarse[static_cast<size_t>(y0 * grid + x0)];
    const double b = coarse[static_cast<size_t>(y0 * grid + x0 + 1)];
    const double c = coarse[static_cast<size_t>((y0 + 1) * grid + x0)];
    const double d = coarse[static_cast<size_t>((y0 + 1) * grid + x0 + 1)];
    return (1 - ty) * ((1 - tx) * a + tx * b) + ty * ((1 - tx) * c + tx * d);
  };
  for (int64_t h = 0; h < size; ++h)
    for (int64_t w = 0; w < size; ++w) {
      const double low = coarse_at(h, w);
      const double grain = rng.uniform(-0.03, 0.03);
      for (int64_t c = 0; c < 3; ++c) {
        s.image[c * hw + h * size + w] = std::clamp(base[c] + low + grain, 0.0, 1.0);
      }
    }

  // roads: polylines spanning the image, stamped as capsules per segment
  const int64_t n_roads = rng.uniform_int(params.min_roads, params.max_roads);
  std::vector<int64_t> road_pixels;
  for (int64_t r = 0; r < n_roads; ++r) {
    const bool vertical = rng.uniform() < 0.5;
    const bool low_contrast = rng.uniform() < params.low_contrast_prob;
    const double width = rng.uniform(params.min_width, params.max_width);
    double road_tone[3];
    if (low_contrast) {
      for (int64_t c = 0; c < 3; ++c) road_tone[c] = std::clamp(base[c] + 0.06, 0.0, 1.0);
    } else {
      const double gray = rng.uniform(0.55, 0.75);
      for (int64_t c = 0; c < 3; ++c) road_tone[c] = gray + rng.uniform(-0.02, 0.02);
    }

    const int64_t n_points = rng.uniform_int(3, 5);
    std::vector<std::pair<double, double>> pts;  // (y, x)
    for (int64_t k = 0; k < n_points; ++k) {
      const double main = static_cast<double>(k) / static_cast<double>(n_points - 1) *
                          static_cast<double>(size - 1);
      const double cross = (k == 0 || k == n_points - 1)
                               ? rng.uniform(0.1, 0.9) * static_cast<double>(size - 1)
                               : rng.uniform(0.05, 0.95) * static_cast<double>(size - 1);
      pts.emplace_back(vertical ? main : cross, vertical ? cross : main);
    }
    const double half = width / 2.0;
    for (size_t k = 0; k + 1 < pts.size(); ++k) {
      const auto [y0, x0] = pts[k];
      const auto [y1, x1] = pts[k + 1];
      const int64_t hy0 = std::max<int64_t>(0, static_cast<int64_t>(std::min(y0, y1) - half - 1));
      const int64_t hy1 = std::min<int64_t>(size - 1, static_cast<int64_t>(std::max(y0, y1) + half + 1));
      const int64_t wx0 = std::max<int64_t>(0, static_cast<int64_t>(std::min(x0, x1) - half - 1));
      const int64_t wx1 = std::min<int64_t>(size - 1, static_cast<int64_t>(std::max(x0, x1) + half + 1));
      const double dy = y1 - y0, dx = x1 - x0;
      const double len2 = dy * dy + dx * dx;
      for (int64_t h = hy0; h <= hy1; ++h)
        for (int64_t w = wx0; w <= wx1; ++w) {
          const double t = len2 > 0.0
                               ? std::clamp(((h - y0) * dy + (w - x0) * dx) / len2, 0.0, 1.0)
                               : 0.0;
          const double py = y0 + t * dy, px = x0 + t * dx;
          const double dist = std::hypot(h - py, w - px);
          if (dist <= half) {
            const int64_t idx = h * size + w;
            if (s.mask[idx] == 0.0) road_pixels.push_back(idx);
            s.mask[idx] = 1.0;
            for (int64_t c = 0; c < 3; ++c) {
              s.image[c * hw + idx] = std::clamp(road_tone[c], 0.0, 1.0);
            }
          }
        }
    }
  }

  // occluders darken the image after the mask snapshot (shadow analogue)
  const int64_t n_blobs = params.max_blobs > 0 ? rng.uniform_int(0, params.max_blobs) : 0;
  for (int64_t bidx = 0; bidx < n_blobs && !road_pixels.empty(); ++bidx) {
    const int64_t center =
        road_pixels[static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(road_pixels.size()) - 1))];
    const int64_t cy = center / size, cx = center % size;
    const double radius = rng.uniform(3.0, static_cast<double>(size) / 12.0);
    const double factor = rng.uniform(0.30, 0.60);
    const int64_t y0 = std::max<int64_t>(0, cy - static_cast<int64_t>(radius) - 1);
    const int64_t y1 = std::min<int64_t>(size - 1, cy + static_cast<int64_t>(radius) + 1);
    const int64_t x0 = std::max<int64_t>(0, cx - static_cast<int64_t>(radius) - 1);
    const int64_t x1 = std::min<int64_t>(size - 1, cx + static_cast<int64_t>(radius) + 1);
    for (int64_t h = y0; h <= y1; ++h)
      for (int64_t w = x0; w <= x1; ++w) {
        if (std::hypot(h - cy, w - cx) <= radius) {
          for (int64_t c = 0; c < 3; ++c) s.image[c * hw + h * size + w] *= factor;
        }
      }
  }
  return s;
}

DiskDataset::DiskDataset(DatasetIndex index, int binarize_threshold)
    : index_(std::move(index)), loader_(binarize_threshold) {}

int64_t DiskDataset::count(Split split) const {
  switch (split) {
    case Split::Train: return static_cast<int64_t>(index_.train.size());
    case Split::Val: return static_cast<int64_t>(index_.val.size());
    case Split::Test: return static_cast<int64_t>(index_.test.size());
  }
  return 0;
}

Sample DiskDataset::get(Split split, int64_t i) {
  if (split == Split::Test) {
    return loader_.load_whole(index_, split, index_.test[static_cast<size_t>(i)].image_id);
  }
  const auto& records = (split == Split::Train) ? index_.train : index_.val;
  return loader_.load_tile(index_, records[static_cast<size_t>(i)]);
}

std::string DiskDataset::id(Split split, int64_t i) const {
  if (split == Split::Test) return index_.test[static_cast<size_t>(i)].image_id;
  const auto& records = (split == Split::Train) ? index_.train : index_.val;
  const TileSpec& t = records[static_cast<size_t>(i)];
  return t.image_id + "_y" + std::to_string(t.y_offset) + "_x" + std::to_string(t.x_offset);
}

SyntheticDataset::SyntheticDataset(int64_t train_count, int64_t val_count, int64_t test_count,
                                   int64_t size, uint64_t seed, SynthParams params)
    : counts_{train_count, val_count, test_count}, size_(size), seed_(seed), params_(params) {}

int64_t SyntheticDataset::count(Split split) const {
  return counts_[static_cast<int>(split)];
}

Sample SyntheticDataset::get(Split split, int64_t i) {
  if (i < 0 || i >= count(split)) throw std::out_of_range("synthetic sample index");
  const uint64_t stream = static_cast<uint64_t>(split) * 1000003ull + static_cast<uint64_t>(i);
  return synth_road_sample(derive_seed(seed_, stream), size_, params_);
}

std::string SyntheticDataset::id(Split split, int64_t i) const {
  return "synth_" + split_name(split) + "_" + std::to_string(i);
}

}  // namespace ddunet
