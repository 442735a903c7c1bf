#include "stdn/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace stdn {

namespace {

using nlohmann::json;

constexpr char kMagic[] = "STDNCKPT1\n";
constexpr std::size_t kMagicLen = sizeof(kMagic) - 1;

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint64_t get_u64(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

void put_blob(std::string& out, const Tensor& t, BlobType type) {
  for (double x : t.values()) {
    if (type == BlobType::f64) {
      put_u64(out, std::bit_cast<std::uint64_t>(x));
    } else {
      const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(x));
      for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
    }
  }
}

std::size_t elem_bytes(BlobType type) { return type == BlobType::f64 ? 8 : 4; }

struct RawFile {
  json manifest;
  std::string blobs;
};

RawFile read_raw(const std::filesystem::path& path, bool with_blobs) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint: " + path.string());
  char magic[kMagicLen];
  if (!is.read(magic, kMagicLen) || std::memcmp(magic, kMagic, kMagicLen) != 0) {
    throw std::runtime_error("not a checkpoint file: " + path.string());
  }
  unsigned char len_bytes[8];
  if (!is.read(reinterpret_cast<char*>(len_bytes), 8)) throw std::runtime_error("truncated checkpoint: " + path.string());
  const std::uint64_t len = get_u64(len_bytes);
  if (len > (1ULL << 32)) throw std::runtime_error("corrupt checkpoint manifest length: " + path.string());
  std::string text(len, '\0');
  if (!is.read(text.data(), static_cast<std::streamsize>(len))) {
    throw std::runtime_error("truncated checkpoint manifest: " + path.string());
  }
  RawFile raw;
  try {
    raw.manifest = json::parse(text);
  } catch (const json::exception& e) {
    throw std::runtime_error("corrupt checkpoint manifest in " + path.string() + ": " + e.what());
  }
  if (with_blobs) raw.blobs.assign(std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>());
  return raw;
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path, BlobType type) {
  std::string blobs;
  json tensors = json::array();
  auto emit = [&](const std::vector<NamedTensor>& list, const char* group) {
    for (const NamedTensor& nt : list) {
      tensors.push_back({{"name", nt.name},
                         {"group", group},
                         {"shape", nt.value.shape()},
                         {"offset", blobs.size()},
                         {"bytes", nt.value.size() * elem_bytes(type)}});
      put_blob(blobs, nt.value, type);
    }
  };
  emit(ckpt.params, "param");
  emit(ckpt.momentum, "momentum");

  json manifest{{"format", "stdn-checkpoint"},
                {"version", 1},
                {"dtype", type == BlobType::f64 ? "f64" : "f32"},
                {"epoch", ckpt.epoch},
                {"step", ckpt.step},
                {"source_val_accuracy", ckpt.source_val_accuracy},
                {"source_val_loss", ckpt.source_val_loss},
                {"config", to_json(ckpt.config)},
                {"normalization", {{"mean", ckpt.normalization.mean}, {"std", ckpt.normalization.std}}},
                {"rng_state", ckpt.rng_state},
                {"tensors", tensors}};
  const std::string text = manifest.dump();

  std::string out(kMagic, kMagicLen);
  put_u64(out, text.size());
  out += text;
  out += blobs;

  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write checkpoint: " + path.string());
    os.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!os) throw std::runtime_error("failed writing checkpoint: " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

nlohmann::json read_checkpoint_manifest(const std::filesystem::path& path) { return read_raw(path, false).manifest; }

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  RawFile raw = read_raw(path, true);
  const json& m = raw.manifest;
  Checkpoint ckpt;
  try {
    if (m.at("format").get<std::string>() != "stdn-checkpoint") throw std::runtime_error("unexpected format tag");
    const std::string dtype = m.at("dtype").get<std::string>();
    if (dtype != "f64" && dtype != "f32") throw std::runtime_error("unsupported dtype " + dtype);
    const BlobType type = dtype == "f64" ? BlobType::f64 : BlobType::f32;
    ckpt.epoch = m.at("epoch").get<int>();
    ckpt.step = m.at("step").get<long>();
    ckpt.source_val_accuracy = m.at("source_val_accuracy").get<double>();
    ckpt.source_val_loss = m.at("source_val_loss").get<double>();
    ckpt.config = train_config_from_json(m.at("config"));
    ckpt.normalization.mean = m.at("normalization").at("mean").get<std::array<double, 3>>();
    ckpt.normalization.std = m.at("normalization").at("std").get<std::array<double, 3>>();
    ckpt.rng_state = m.at("rng_state").get<std::string>();
    for (const json& t : m.at("tensors")) {
      Shape shape = t.at("shape").get<Shape>();
      const std::size_t offset = t.at("offset").get<std::size_t>();
      const std::size_t bytes = t.at("bytes").get<std::size_t>();
      const std::size_t count = shape_numel(shape);
      if (bytes != count * elem_bytes(type) || offset + bytes > raw.blobs.size()) {
        throw std::runtime_error("tensor '" + t.at("name").get<std::string>() + "' has an inconsistent extent");
      }
      std::vector<double> values(count);
      const auto* p = reinterpret_cast<const unsigned char*>(raw.blobs.data() + offset);
      for (std::size_t i = 0; i < count; ++i) {
        if (type == BlobType::f64) {
          values[i] = std::bit_cast<double>(get_u64(p + 8 * i));
        } else {
          std::uint32_t bits = 0;
          for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(p[4 * i + b]) << (8 * b);
          values[i] = std::bit_cast<float>(bits);
        }
      }
      NamedTensor nt{t.at("name").get<std::string>(), Tensor(std::move(shape), std::move(values))};
      const std::string group = t.at("group").get<std::string>();
      if (group == "param") {
        ckpt.params.push_back(std::move(nt));
      } else if (group == "momentum") {
        ckpt.momentum.push_back(std::move(nt));
      } else {
        throw std::runtime_error("unknown tensor group " + group);
      }
    }
  } catch (const json::exception& e) {
    throw std::runtime_error("corrupt checkpoint " + path.string() + ": " + e.what());
  } catch (const std::invalid_argument& e) {
    throw std::runtime_error("corrupt checkpoint " + path.string() + ": " + e.what());
  }
  return ckpt;
}

}  // namespace stdn
