#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "ddunet/image.hpp"
#include "ddunet/rng.hpp"

namespace ddunet {

enum class Split { Train, Val, Test };

std::string split_name(Split s);
Split split_from_name(const std::string& name);

/// Crop geometry of one training/validation tile.
struct TileSpec {
  std::string image_id;
  int64_t x_offset = 0;
  int64_t y_offset = 0;
  int64_t tile_size = 512;
  Split split = Split::Train;
};

/// Test images stay uncropped; only their identity and extent are recorded.
struct TestRecord {
  std::string image_id;
  int64_t height = 0;
  int64_t width = 0;
};

struct DatasetIndex {
  std::filesystem::path root;
  std::vector<TileSpec> train;
  std::vector<TileSpec> val;
  std::vector<TestRecord> test;
};

/// Offsets 0, stride, 2*stride, ... while offset + tile <= extent. No extra
/// boundary-aligned tile is appended.
std::vector<int64_t> tile_positions(int64_t extent, int64_t tile, int64_t stride);

/// Scans root/{train,val,test}/{images,masks}. Every image needs a mask with
/// the same stem; orphans are a hard error listing the ids. Records are
/// ordered lexicographically by id, then row-major by (y, x) offset.
DatasetIndex build_dataset_index(const std::filesystem::path& root, int64_t tile,
                                 int64_t stride);

/// One TileSpec JSON object per line.
void write_index_cache(const std::filesystem::path& path, const DatasetIndex& index);
DatasetIndex read_index_cache(const std::filesystem::path& path,
                              const std::filesystem::path& root);

struct Sample {
  Tensor image;  // (3,H,W), values in [0,1]
  Tensor mask;   // (1,H,W), values exactly {0,1}
};

/// Reads tiles/whole images from an indexed directory tree, keeping the most
/// recently decoded raster pair around since consecutive tiles usually share
/// a source image.
class SampleLoader {
 public:
  explicit SampleLoader(int binarize_threshold = 127)
      : binarize_threshold_(binarize_threshold) {}

  Sample load_tile(const DatasetIndex& index, const TileSpec& spec);
  Sample load_whole(const DatasetIndex& index, Split split, const std::string& image_id);

 private:
  const Sample& cached_full(const DatasetIndex& index, Split split, const std::string& id);

  int binarize_threshold_;
  std::string cache_key_;
  Sample cache_;
};

std::filesystem::path image_path(const DatasetIndex& index, Split split,
                                 const std::string& image_id);
std::filesystem::path mask_path(const DatasetIndex& index, Split split,
                                const std::string& image_id);

struct PadGeometry {
  int64_t original_height = 0;
  int64_t original_width = 0;
};

/// Reflect-pads right/bottom until both spatial dims divide `multiple`.
/// Works on (...,H,W) tensors of rank 3 or 4.
std::pair<Tensor, PadGeometry> pad_to_multiple(const Tensor& t, int64_t multiple);
Tensor crop_back(const Tensor& t, const PadGeometry& geometry);

struct SynthParams {
  int64_t min_roads = 1;
  int64_t max_roads = 3;
  double min_width = 2.0;
  double max_width = 5.0;
  int64_t max_blobs = 3;             // occluding dark blobs stamped onto roads
  double low_contrast_prob = 0.25;   // chance a road matches the background tone
};

/// Deterministic synthetic road scene: textured background, 1..n polyline
/// roads, optional occluders drawn after the mask is captured.
Sample synth_road_sample(uint64_t seed, int64_t size, const SynthParams& params = {});

/// Uniform sample access for training/evaluation across data sources.
class Dataset {
 public:
  virtual ~Dataset() = default;
  virtual int64_t count(Split split) const = 0;
  virtual Sample get(Split split, int64_t i) = 0;
  virtual std::string id(Split split, int64_t i) const = 0;
  /// Test samples of a disk dataset are whole images; tiles otherwise.
  virtual bool whole_image(Split split) const = 0;
};

class DiskDataset : public Dataset {
 public:
  DiskDataset(DatasetIndex index, int binarize_threshold);
  int64_t count(Split split) const override;
  Sample get(Split split, int64_t i) override;
  std::string id(Split split, int64_t i) const override;
  bool whole_image(Split split) const override { return split == Split::Test; }
  const DatasetIndex& index() const { return index_; }

 private:
  DatasetIndex index_;
  SampleLoader loader_;
};

class SyntheticDataset : public Dataset {
 public:
  SyntheticDataset(int64_t train_count, int64_t val_count, int64_t test_count, int64_t size,
                   uint64_t seed, SynthParams params = {});
  int64_t count(Split split) const override;
  Sample get(Split split, int64_t i) override;
  std::string id(Split split, int64_t i) const override;
  bool whole_image(Split) const override { return true; }

 private:
  int64_t counts_[3];
  int64_t size_;
  uint64_t seed_;
  SynthParams params_;
};

}  // namespace ddunet
