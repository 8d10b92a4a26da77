#pragma once

// Tensor container shared by model and adapter checkpoints:
//
//   "MLSA1" | u64 LE header length | UTF-8 JSON header | f64 LE tensor data
//
// The header carries {"kind", "meta", "tensors": [{name, shape, offset}]},
// offsets in bytes from the start of the data section.

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "medlasa/model/transformer.hpp"

namespace medlasa {

inline constexpr char kCheckpointMagic[] = "MLSA1";

struct TensorContainer {
  std::string kind;
  nlohmann::json meta;
  std::vector<std::pair<std::string, Matrix>> tensors;

  /// Throws FormatError when the tensor is missing.
  const Matrix& tensor(const std::string& name) const;
};

std::string encode_container(const std::string& kind, const nlohmann::json& meta,
                             const std::vector<std::pair<std::string, const Matrix*>>& tensors);
TensorContainer decode_container(const std::string& bytes);

void write_container(const std::filesystem::path& path, const std::string& kind, const nlohmann::json& meta,
                     const std::vector<std::pair<std::string, const Matrix*>>& tensors);
TensorContainer read_container(const std::filesystem::path& path);

void save_checkpoint(const MicroTransformer& model, const std::filesystem::path& path);
MicroTransformer load_checkpoint(const std::filesystem::path& path);

}  // namespace medlasa
