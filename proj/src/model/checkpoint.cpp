#include "medlasa/model/checkpoint.hpp"

#include <bit>
#include <cstring>

#include "medlasa/errors.hpp"
#include "medlasa/util/io.hpp"

namespace medlasa {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {
constexpr std::size_t kMagicLen = sizeof(kCheckpointMagic) - 1;
}

const Matrix& TensorContainer::tensor(const std::string& name) const {
  for (const auto& [n, m] : tensors)
    if (n == name) return m;
  throw FormatError("checkpoint has no tensor '" + name + "'");
}

std::string encode_container(const std::string& kind, const nlohmann::json& meta,
                             const std::vector<std::pair<std::string, const Matrix*>>& tensors) {
  nlohmann::json manifest = nlohmann::json::array();
  std::size_t offset = 0;
  for (const auto& [name, m] : tensors) {
    manifest.push_back({{"name", name}, {"shape", {m->rows(), m->cols()}}, {"offset", offset}});
    offset += m->size() * sizeof(double);
  }
  nlohmann::json header{{"kind", kind}, {"meta", meta}, {"tensors", manifest}};
  const std::string text = header.dump();
  const std::uint64_t len = text.size();

  std::string out(kCheckpointMagic, kMagicLen);
  out.append(reinterpret_cast<const char*>(&len), sizeof(len));
  out += text;
  for (const auto& [name, m] : tensors)
    out.append(reinterpret_cast<const char*>(m->data()), m->size() * sizeof(double));
  return out;
}

TensorContainer decode_container(const std::string& bytes) {
  if (bytes.size() < kMagicLen + sizeof(std::uint64_t) || bytes.compare(0, kMagicLen, kCheckpointMagic) != 0)
    throw FormatError("not an MLSA1 container (bad magic)");
  std::uint64_t len = 0;
  std::memcpy(&len, bytes.data() + kMagicLen, sizeof(len));
  const std::size_t header_start = kMagicLen + sizeof(len);
  if (len > bytes.size() - header_start) throw FormatError("truncated container header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(header_start, len));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("container header is not valid JSON: ") + e.what());
  }
  const std::size_t data_start = header_start + len;
  const std::size_t data_len = bytes.size() - data_start;

  TensorContainer c;
  try {
    c.kind = header.at("kind").get<std::string>();
    c.meta = header.at("meta");
    for (const auto& t : header.at("tensors")) {
      const auto name = t.at("name").get<std::string>();
      const auto rows = t.at("shape").at(0).get<std::size_t>();
      const auto cols = t.at("shape").at(1).get<std::size_t>();
      const auto offset = t.at("offset").get<std::size_t>();
      const std::size_t nbytes = rows * cols * sizeof(double);
      if (offset > data_len || nbytes > data_len - offset)
        throw FormatError("truncated container: tensor '" + name + "' runs past end of file");
      std::vector<double> values(rows * cols);
      std::memcpy(values.data(), bytes.data() + data_start + offset, nbytes);
      c.tensors.emplace_back(name, Matrix(rows, cols, std::move(values)));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed container header: ") + e.what());
  }
  return c;
}

void write_container(const std::filesystem::path& path, const std::string& kind, const nlohmann::json& meta,
                     const std::vector<std::pair<std::string, const Matrix*>>& tensors) {
  io::write_file_atomic(path, encode_container(kind, meta, tensors));
}

TensorContainer read_container(const std::filesystem::path& path) {
  std::string bytes;
  try {
    bytes = io::read_file(path);
  } catch (const std::runtime_error& e) {
    throw FormatError(e.what());
  }
  return decode_container(bytes);
}

void save_checkpoint(const MicroTransformer& model, const std::filesystem::path& path) {
  write_container(path, "model", nlohmann::json{{"config", model.config()}}, model.named_parameters());
}

MicroTransformer load_checkpoint(const std::filesystem::path& path) {
  TensorContainer c = read_container(path);
  if (c.kind != "model") throw FormatError("expected a model checkpoint, found '" + c.kind + "'");
  ModelConfig cfg;
  try {
    cfg = c.meta.at("config").get<ModelConfig>();
    cfg.validate();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint config: ") + e.what());
  } catch (const ContractError& e) {
    throw FormatError(std::string("checkpoint config: ") + e.what());
  }
  MicroTransformer model(cfg);
  auto params = model.named_parameters();
  if (params.size() != c.tensors.size()) throw FormatError("checkpoint tensor count does not match config");
  for (auto& [name, dst] : params) {
    const Matrix& src = c.tensor(name);
    if (!src.same_shape(*dst)) throw FormatError("checkpoint tensor '" + name + "' has the wrong shape");
    *dst = src;
  }
  return model;
}

}  // namespace medlasa
