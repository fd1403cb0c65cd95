#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include <json.hpp>
#include <zlib.h>

#include "phrasal/encoder.h"

namespace phrasal {

static_assert(std::endian::native == std::endian::little, "checkpoint payloads assume a little-endian host");

namespace {

constexpr char kMagic[8] = {'P', 'H', 'R', 'C', 'K', 'P', 'T', '1'};
constexpr int kFormatVersion = 1;

nlohmann::ordered_json config_json(const EncoderConfig& c) {
  return {{"vocab_size", c.vocab_size}, {"d", c.d},         {"layers", c.layers},
          {"heads", c.heads},           {"o", c.o},         {"ffn", c.ffn},
          {"max_positions", c.max_positions}, {"dropout", c.dropout}, {"align_hidden", c.align_hidden}};
}

EncoderConfig config_from_json(const nlohmann::json& j) {
  EncoderConfig c;
  c.vocab_size = j.at("vocab_size");
  c.d = j.at("d");
  c.layers = j.at("layers");
  c.heads = j.at("heads");
  c.o = j.at("o");
  c.ffn = j.at("ffn");
  c.max_positions = j.at("max_positions");
  c.dropout = j.at("dropout");
  c.align_hidden = j.at("align_hidden");
  return c;
}

}  // namespace

std::filesystem::path resolve_checkpoint_path(const std::filesystem::path& path) {
  if (std::filesystem::is_directory(path)) return path / "model.ckpt";
  return path;
}

void save_checkpoint(const std::filesystem::path& path, const PhraseModel& model) {
  const auto& params = model.params;
  nlohmann::ordered_json header;
  header["format_version"] = kFormatVersion;
  header["config"] = config_json(params.config);
  header["lowercase"] = model.lowercase;
  header["vocab"] = model.vocab.tokens();

  std::vector<char> payload;
  nlohmann::ordered_json tensors = nlohmann::ordered_json::array();
  for_each_tensor(params, [&](const std::string& name, const auto& t) {
    const std::size_t bytes = static_cast<std::size_t>(t.size()) * sizeof(float);
    tensors.push_back({{"name", name},
                       {"shape", {t.rows(), t.cols()}},
                       {"offset", payload.size()},
                       {"bytes", bytes}});
    const auto* raw = reinterpret_cast<const char*>(t.data());
    payload.insert(payload.end(), raw, raw + bytes);
  });
  header["tensors"] = tensors;
  header["payload_bytes"] = payload.size();
  header["payload_crc32"] =
      crc32(0L, reinterpret_cast<const Bytef*>(payload.data()), static_cast<uInt>(payload.size()));

  const std::string text = header.dump();
  const std::uint64_t len = text.size();

  const auto target = path;
  if (target.has_parent_path()) std::filesystem::create_directories(target.parent_path());
  const auto tmp = std::filesystem::path(target.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out.write(kMagic, sizeof(kMagic));
    out.write(reinterpret_cast<const char*>(&len), sizeof(len));
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
    if (!out) throw std::runtime_error("short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, target);
}

PhraseModel load_checkpoint(const std::filesystem::path& path_in) {
  const auto path = resolve_checkpoint_path(path_in);
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read checkpoint " + path.string());
  char magic[8];
  std::uint64_t len = 0;
  in.read(magic, sizeof(magic));
  in.read(reinterpret_cast<char*>(&len), sizeof(len));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw std::runtime_error(path.string() + " is not a phrasal checkpoint");
  }
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw std::runtime_error(path.string() + ": truncated header");
  const auto header = nlohmann::json::parse(text);
  if (header.at("format_version").get<int>() != kFormatVersion) {
    throw std::runtime_error(path.string() + ": unsupported checkpoint version");
  }
  const std::size_t payload_bytes = header.at("payload_bytes");
  std::vector<char> payload(payload_bytes);
  in.read(payload.data(), static_cast<std::streamsize>(payload_bytes));
  if (!in || in.peek() != std::char_traits<char>::eof()) {
    throw std::runtime_error(path.string() + ": payload size mismatch");
  }
  const auto crc =
      crc32(0L, reinterpret_cast<const Bytef*>(payload.data()), static_cast<uInt>(payload.size()));
  if (crc != header.at("payload_crc32").get<unsigned long>()) {
    throw std::runtime_error(path.string() + ": checksum mismatch");
  }

  PhraseModel model;
  model.lowercase = header.value("lowercase", false);
  for (const auto& t : header.at("vocab")) model.vocab.intern(t.get<std::string>());
  model.params = zero_params<float>(config_from_json(header.at("config")));
  const auto& tensors = header.at("tensors");
  std::size_t k = 0;
  for_each_tensor(model.params, [&](const std::string& name, auto& t) {
    if (k >= tensors.size()) throw std::runtime_error(path.string() + ": missing tensor " + name);
    const auto& meta = tensors[k++];
    const std::size_t bytes = static_cast<std::size_t>(t.size()) * sizeof(float);
    if (meta.at("name").get<std::string>() != name || meta.at("shape")[0].get<long>() != t.rows() ||
        meta.at("shape")[1].get<long>() != t.cols() || meta.at("bytes").get<std::size_t>() != bytes) {
      throw std::runtime_error(path.string() + ": tensor layout mismatch at " + name);
    }
    const std::size_t offset = meta.at("offset");
    if (offset + bytes > payload.size()) throw std::runtime_error(path.string() + ": tensor out of bounds");
    std::memcpy(t.data(), payload.data() + offset, bytes);
  });
  if (k != tensors.size()) throw std::runtime_error(path.string() + ": unexpected extra tensors");
  if (model.vocab.size() != model.params.config.vocab_size) {
    throw std::runtime_error(path.string() + ": vocabulary size disagrees with config");
  }
  return model;
}

}  // namespace phrasal
