#include "spmim/checkpoint.hpp"

#include <zlib.h>

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>

#include "spmim/errors.hpp"

namespace spmim {
namespace {

constexpr const char* kOptimizerM = "optimizer.m/";
constexpr const char* kOptimizerV = "optimizer.v/";

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint64_t get_u64(std::string_view in, std::size_t pos) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  return v;
}

std::string encode_payload(const Tensor& t) {
  std::string out;
  out.reserve(t.numel() * 4);
  for (double v : t.data()) {
    const std::uint32_t bits = std::bit_cast<std::uint32_t>(static_cast<float>(v));
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
  }
  return out;
}

std::uint32_t crc_of(std::string_view bytes) {
  return static_cast<std::uint32_t>(
      crc32(0L, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size())));
}

Tensor rounded(const Tensor& t) {
  Tensor out = t;
  for (double& v : out.data()) v = static_cast<double>(static_cast<float>(v));
  return out;
}

}  // namespace

void Checkpoint::put(std::string name, const Tensor& value) {
  for (auto& [n, t] : tensors) {
    if (n == name) {
      t = rounded(value);
      return;
    }
  }
  tensors.emplace_back(std::move(name), rounded(value));
}

const Tensor* Checkpoint::find(std::string_view name) const {
  for (const auto& [n, t] : tensors)
    if (n == name) return &t;
  return nullptr;
}

std::string encode_checkpoint(const Checkpoint& ckpt) {
  if (ckpt.meta.contains("tensors")) throw ArgumentError("checkpoint metadata key 'tensors' is reserved");
  nlohmann::json meta = ckpt.meta;
  meta["format_version"] = kCheckpointVersion;
  nlohmann::json dir = nlohmann::json::array();
  std::string payload;
  for (const auto& [name, t] : ckpt.tensors) {
    std::string bytes = encode_payload(t);
    dir.push_back({{"name", name}, {"shape", t.shape()}, {"crc32", crc_of(bytes)}});
    payload += bytes;
  }
  meta["tensors"] = dir;
  const std::string text = meta.dump();

  std::string out(kCheckpointMagicPrefix);
  char version[4];
  std::snprintf(version, sizeof(version), "%03d", kCheckpointVersion);
  out.append(version, 3);
  put_u64(out, text.size());
  out += text;
  out += payload;
  return out;
}

Checkpoint decode_checkpoint(std::string_view bytes) {
  if (bytes.size() < 8 || bytes.substr(0, 5) != kCheckpointMagicPrefix) {
    throw FormatError("not a checkpoint file (bad magic)");
  }
  const std::string_view version = bytes.substr(5, 3);
  char expected[4];
  std::snprintf(expected, sizeof(expected), "%03d", kCheckpointVersion);
  if (version != std::string_view(expected, 3)) {
    throw VersionError("unsupported checkpoint version '" + std::string(version) + "'");
  }
  if (bytes.size() < 16) throw CorruptionError("checkpoint truncated in header");
  const std::uint64_t meta_len = get_u64(bytes, 8);
  if (meta_len > bytes.size() - 16) throw CorruptionError("checkpoint truncated in metadata");

  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(bytes.substr(16, meta_len));
  } catch (const nlohmann::json::exception& e) {
    throw CorruptionError(std::string("checkpoint metadata unreadable: ") + e.what());
  }
  if (!meta.is_object() || !meta.contains("tensors") || meta.value("format_version", 0) != kCheckpointVersion) {
    throw CorruptionError("checkpoint metadata lacks a tensor directory or version");
  }

  Checkpoint ckpt;
  std::size_t pos = 16 + meta_len;
  try {
    for (const auto& entry : meta.at("tensors")) {
      const std::string name = entry.at("name");
      const Shape shape = entry.at("shape").get<Shape>();
      const std::uint32_t crc = entry.at("crc32");
      const std::size_t count = shape_numel(shape);
      if (count * 4 > bytes.size() - pos) throw CorruptionError("checkpoint payload truncated at " + name);
      const std::string_view raw = bytes.substr(pos, count * 4);
      if (crc_of(raw) != crc) throw CorruptionError("checksum mismatch in tensor " + name);
      std::vector<double> values(count);
      for (std::size_t i = 0; i < count; ++i) {
        std::uint32_t bits = 0;
        for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(raw[i * 4 + b])) << (8 * b);
        values[i] = static_cast<double>(std::bit_cast<float>(bits));
      }
      ckpt.tensors.emplace_back(name, Tensor(shape, std::move(values)));
      pos += count * 4;
    }
  } catch (const nlohmann::json::exception& e) {
    throw CorruptionError(std::string("checkpoint directory malformed: ") + e.what());
  } catch (const DimensionError& e) {
    throw CorruptionError(std::string("checkpoint directory malformed: ") + e.what());
  }
  if (pos != bytes.size()) throw CorruptionError("checkpoint has trailing bytes");
  meta.erase("tensors");
  meta.erase("format_version");
  ckpt.meta = std::move(meta);
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  const std::string bytes = encode_checkpoint(ckpt);
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write checkpoint " + path.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError("short write on checkpoint " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  const std::string bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  return decode_checkpoint(bytes);
}

void store_parameters(Checkpoint& ckpt, const ParameterList& list) {
  for (const Parameter* p : list.params) ckpt.put(p->name, p->value);
  for (const auto& [name, t] : list.buffers) ckpt.put(name, *t);
}

void restore_parameters(const Checkpoint& ckpt, ParameterList& list, bool require_all) {
  auto restore = [&](const std::string& name, Tensor& dst) {
    const Tensor* src = ckpt.find(name);
    if (!src) {
      if (require_all) throw ConfigError("checkpoint lacks tensor " + name);
      return;
    }
    if (src->shape() != dst.shape()) {
      throw ConfigError("checkpoint tensor " + name + " has shape " + shape_to_string(src->shape()) +
                        ", model expects " + shape_to_string(dst.shape()));
    }
    dst = *src;
  };
  for (Parameter* p : list.params) restore(p->name, p->value);
  for (auto& [name, t] : list.buffers) restore(name, *t);
}

void store_optimizer(Checkpoint& ckpt, const AdamP& opt) {
  ckpt.meta["optimizer"] = {{"step", opt.step_count()}, {"options", opt.options().to_json()}};
  for (const auto& [name, s] : opt.state()) {
    ckpt.put(kOptimizerM + name, s.m);
    ckpt.put(kOptimizerV + name, s.v);
  }
}

void restore_optimizer(const Checkpoint& ckpt, AdamP& opt) {
  if (!ckpt.meta.contains("optimizer")) throw ConfigError("checkpoint has no optimizer state");
  opt.set_step_count(ckpt.meta["optimizer"].at("step").get<std::int64_t>());
  opt.state().clear();
  const std::string pm = kOptimizerM, pv = kOptimizerV;
  for (const auto& [name, t] : ckpt.tensors) {
    if (name.rfind(pm, 0) == 0) {
      const std::string key = name.substr(pm.size());
      const Tensor* v = ckpt.find(pv + key);
      if (!v) throw CorruptionError("optimizer second moment missing for " + key);
      opt.state()[key] = {t, *v};
    }
  }
}

}  // namespace spmim
