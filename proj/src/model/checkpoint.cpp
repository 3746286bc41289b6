#include "rfid/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "rfid/errors.hpp"

namespace rfid {

using nlohmann::json;

namespace {

constexpr char kMagic[8] = {'R', 'F', 'I', 'D', 'C', 'K', 'P', '1'};

template <class T>
T to_little(T value) {
  if constexpr (std::endian::native == std::endian::big) {
    unsigned char bytes[sizeof(T)];
    std::memcpy(bytes, &value, sizeof(T));
    std::reverse(bytes, bytes + sizeof(T));
    std::memcpy(&value, bytes, sizeof(T));
  }
  return value;
}

template <class T>
void put(std::ostream& out, T value) {
  value = to_little(value);
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <class T>
T get(std::istream& in, const std::string& what) {
  T value{};
  if (!in.read(reinterpret_cast<char*>(&value), sizeof(T))) {
    throw DataError("checkpoint truncated while reading " + what);
  }
  return to_little(value);
}

void put_tensor(std::ostream& out, const std::string& name, const Matrix<float>& t) {
  put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
  out.write(name.data(), static_cast<std::streamsize>(name.size()));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(t.rows()));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(t.cols()));
  for (Eigen::Index i = 0; i < t.size(); ++i) put<float>(out, t.data()[i]);
}

std::string get_name(std::istream& in) {
  const auto len = get<std::uint32_t>(in, "tensor name length");
  if (len > 4096) throw DataError("checkpoint tensor name too long");
  std::string name(len, '\0');
  if (!in.read(name.data(), len)) throw DataError("checkpoint truncated in tensor name");
  return name;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  json tensors = json::array();
  for (std::size_t i = 0; i < ckpt.params.size(); ++i) {
    tensors.push_back({{"name", ckpt.params.name(i)},
                       {"rows", ckpt.params[i].rows()},
                       {"cols", ckpt.params[i].cols()}});
  }
  for (const auto& [name, t] : ckpt.extras) {
    tensors.push_back({{"name", name}, {"rows", t.rows()}, {"cols", t.cols()}});
  }
  const json header = {{"model", ckpt.model},
                       {"vocabulary", ckpt.vocabulary.tokens()},
                       {"meta", ckpt.meta},
                       {"tensors", tensors}};
  const std::string text = header.dump();

  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write checkpoint: " + tmp.string());
    out.write(kMagic, sizeof kMagic);
    put<std::uint64_t>(out, text.size());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(tensors.size()));
    for (std::size_t i = 0; i < ckpt.params.size(); ++i) put_tensor(out, ckpt.params.name(i), ckpt.params[i]);
    for (const auto& [name, t] : ckpt.extras) put_tensor(out, name, t);
    if (!out) throw DataError("failed writing checkpoint: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint: " + path.string());
  char magic[8];
  if (!in.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof kMagic) != 0) {
    throw DataError("not a checkpoint file: " + path.string());
  }
  const auto header_len = get<std::uint64_t>(in, "header length");
  if (header_len > (1ULL << 30)) throw DataError("checkpoint header too large");
  std::string text(header_len, '\0');
  if (!in.read(text.data(), static_cast<std::streamsize>(header_len))) {
    throw DataError("checkpoint truncated in header");
  }
  json header;
  try {
    header = json::parse(text);
  } catch (const json::exception& e) {
    throw DataError(std::string("checkpoint header is not valid JSON: ") + e.what());
  }

  ModelConfig cfg = header.at("model").get<ModelConfig>();
  try {
    cfg.validate();
  } catch (const ConfigError& e) {
    throw DataError(std::string("checkpoint model config invalid: ") + e.what());
  }
  Checkpoint ckpt(cfg);
  ckpt.vocabulary = Vocabulary::from_tokens(header.at("vocabulary").get<std::vector<std::string>>());
  if (ckpt.vocabulary.size() != cfg.vocab_size) {
    throw DataError("checkpoint vocabulary has " + std::to_string(ckpt.vocabulary.size()) +
                    " tokens but vocab_size is " + std::to_string(cfg.vocab_size));
  }
  if (header.contains("meta")) ckpt.meta = header["meta"];

  const auto& layout = ckpt.params.layout();
  const auto count = get<std::uint32_t>(in, "tensor count");
  std::vector<bool> seen(layout.specs.size(), false);
  for (std::uint32_t n = 0; n < count; ++n) {
    const std::string name = get_name(in);
    const auto rows = get<std::uint32_t>(in, name + " rows");
    const auto cols = get<std::uint32_t>(in, name + " cols");
    const int slot = layout.find(name);
    Matrix<float> t;
    if (slot >= 0) {
      const auto& spec = layout.specs[static_cast<std::size_t>(slot)];
      if (static_cast<int>(rows) != spec.rows || static_cast<int>(cols) != spec.cols) {
        throw DataError("checkpoint tensor " + name + " has shape " + std::to_string(rows) + "x" +
                        std::to_string(cols) + ", header implies " + std::to_string(spec.rows) +
                        "x" + std::to_string(spec.cols));
      }
      seen[static_cast<std::size_t>(slot)] = true;
    }
    t.resize(rows, cols);
    for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = get<float>(in, name);
    if (slot >= 0) {
      ckpt.params[static_cast<std::size_t>(slot)] = std::move(t);
    } else {
      ckpt.extras.emplace(name, std::move(t));
    }
  }
  for (std::size_t i = 0; i < seen.size(); ++i) {
    if (!seen[i]) throw DataError("checkpoint is missing tensor " + layout.specs[i].name);
  }
  return ckpt;
}

}  // namespace rfid
