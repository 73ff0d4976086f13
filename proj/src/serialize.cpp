#include "ddunet/serialize.hpp"

#include <cstring>
#include <fstream>

#include <json.hpp>

namespace ddunet {

namespace {

constexpr char kMagic[8] = {'D', 'D', 'U', 'T', 'N', 'S', 'R', '1'};

void put_u64_le(std::string& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

uint64_t get_u64_le(const unsigned char* p) {
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(p[i]) << (8 * i);
  return v;
}

void put_f64_le(std::string& out, double d) {
  uint64_t bits;
  std::memcpy(&bits, &d, 8);
  put_u64_le(out, bits);
}

double get_f64_le(const unsigned char* p) {
  const uint64_t bits = get_u64_le(p);
  double d;
  std::memcpy(&d, &bits, 8);
  return d;
}

float get_f32_le(const unsigned char* p) {
  uint32_t bits = 0;
  for (int i = 0; i < 4; ++i) bits |= static_cast<uint32_t>(p[i]) << (8 * i);
  float f;
  std::memcpy(&f, &bits, 4);
  return f;
}

}  // namespace

NamedTensorRefs named_tensors(const ParamSink& sink) {
  NamedTensorRefs refs;
  refs.reserve(sink.params.size() + sink.buffers.size());
  for (const auto& [name, var] : sink.params) refs.emplace_back(name, &var->value);
  for (const auto& [name, buf] : sink.buffers) refs.emplace_back(name, buf);
  return refs;
}

void write_tensor_archive(const std::filesystem::path& path, const NamedTensorRefs& tensors) {
  nlohmann::ordered_json manifest;
  manifest["format"] = 1;
  auto& entries = manifest["entries"] = nlohmann::ordered_json::array();

  std::string blob;
  for (const auto& [name, tensor] : tensors) {
    nlohmann::ordered_json e;
    e["name"] = name;
    e["dtype"] = "f64";
    e["shape"] = tensor->shape();
    e["offset"] = blob.size();
    e["nbytes"] = static_cast<uint64_t>(tensor->numel()) * 8;
    entries.push_back(std::move(e));
    for (int64_t i = 0; i < tensor->numel(); ++i) put_f64_le(blob, (*tensor)[i]);
  }

  const std::string manifest_str = manifest.dump();
  std::string header(kMagic, sizeof(kMagic));
  put_u64_le(header, manifest_str.size());

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open archive for writing: " + path.string());
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  out.write(manifest_str.data(), static_cast<std::streamsize>(manifest_str.size()));
  out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
  if (!out) throw std::runtime_error("failed writing archive: " + path.string());
}

std::vector<ArchiveEntry> read_tensor_archive(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open archive: " + path.string());
  std::vector<unsigned char> raw((std::istreambuf_iterator<char>(in)),
                                 std::istreambuf_iterator<char>());
  if (raw.size() < 16 || std::memcmp(raw.data(), kMagic, 8) != 0) {
    throw std::runtime_error("not a tensor archive: " + path.string());
  }
  const uint64_t manifest_size = get_u64_le(raw.data() + 8);
  if (16 + manifest_size > raw.size()) {
    throw std::runtime_error("truncated archive manifest: " + path.string());
  }
  const auto manifest = nlohmann::json::parse(raw.begin() + 16,
                                              raw.begin() + 16 + static_cast<long>(manifest_size));
  const unsigned char* data = raw.data() + 16 + manifest_size;
  const uint64_t data_size = raw.size() - 16 - manifest_size;

  std::vector<ArchiveEntry> out;
  for (const auto& e : manifest.at("entries")) {
    ArchiveEntry entry;
    entry.name = e.at("name").get<std::string>();
    entry.dtype = e.at("dtype").get<std::string>();
    entry.shape = e.at("shape").get<Shape>();
    const uint64_t offset = e.at("offset").get<uint64_t>();
    const uint64_t nbytes = e.at("nbytes").get<uint64_t>();
    if (offset + nbytes > data_size) {
      throw std::runtime_error("archive entry '" + entry.name + "' extends past data section");
    }
    const int64_t count = shape_numel(entry.shape);
    entry.data.resize(static_cast<size_t>(count));
    if (entry.dtype == "f64") {
      if (nbytes != static_cast<uint64_t>(count) * 8) {
        throw std::runtime_error("archive entry '" + entry.name + "' has inconsistent size");
      }
      for (int64_t i = 0; i < count; ++i) {
        entry.data[static_cast<size_t>(i)] = get_f64_le(data + offset + 8 * i);
      }
    } else if (entry.dtype == "f32") {
      if (nbytes != static_cast<uint64_t>(count) * 4) {
        throw std::runtime_error("archive entry '" + entry.name + "' has inconsistent size");
      }
      for (int64_t i = 0; i < count; ++i) {
        entry.data[static_cast<size_t>(i)] =
            static_cast<double>(get_f32_le(data + offset + 4 * i));
      }
    } else {
      throw std::runtime_error("archive entry '" + entry.name + "' has unsupported dtype " +
                               entry.dtype);
    }
    out.push_back(std::move(entry));
  }
  return out;
}

LoadReport apply_archive(const std::vector<ArchiveEntry>& entries,
                         const NamedTensorRefs& destinations) {
  LoadReport report;
  std::vector<bool> used(entries.size(), false);
  for (const auto& [name, tensor] : destinations) {
    const ArchiveEntry* found = nullptr;
    for (size_t i = 0; i < entries.size(); ++i) {
      if (entries[i].name == name) {
        found = &entries[i];
        used[i] = true;
        break;
      }
    }
    if (!found) {
      report.missing.push_back(name);
      continue;
    }
    if (found->shape != tensor->shape()) {
      throw ConfigError("archive tensor '" + name + "' has shape " +
                        shape_to_string(found->shape) + ", model expects " +
                        shape_to_string(tensor->shape()));
    }
    std::copy(found->data.begin(), found->data.end(), tensor->data());
    report.matched.push_back(name);
  }
  for (size_t i = 0; i < entries.size(); ++i) {
    if (!used[i]) report.unused.push_back(entries[i].name);
  }
  return report;
}

}  // namespace ddunet
