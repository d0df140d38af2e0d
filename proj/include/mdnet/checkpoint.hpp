#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "mdnet/model.hpp"

namespace mdnet::model {

// On-disk layout, all integers little-endian:
//   "MDNC" | u32 version | u32 tensor count |
//   per tensor: u32 name length, UTF-8 name, u8 dtype (0 = f64), u32 rank,
//               u64 dims[rank], raw f64 payload
inline constexpr char kCheckpointMagic[4] = {'M', 'D', 'N', 'C'};
inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr std::uint8_t kDtypeF64 = 0;

enum class CheckpointErrorKind {
  Io,
  BadMagic,
  UnsupportedVersion,
  Truncated,
  BadDtype,
  DuplicateName,
  ShapeMismatch,
  UnknownParameter,
  MissingParameter,
};

const char* to_string(CheckpointErrorKind kind);

class CheckpointError : public std::runtime_error {
 public:
  CheckpointError(CheckpointErrorKind kind, const std::string& detail);
  CheckpointErrorKind kind() const { return kind_; }

 private:
  CheckpointErrorKind kind_;
};

struct StoredTensor {
  nn::Shape shape;
  std::vector<double> values;
};

using TensorMap = std::map<std::string, StoredTensor>;

std::string encode_checkpoint(const std::vector<NamedTensor>& tensors);
TensorMap decode_checkpoint(const std::string& bytes);

// Copies stored values into `targets`. Every stored name must exist in
// targets and vice versa, with identical shapes.
void apply_tensors(const TensorMap& stored, const std::vector<NamedTensor>& targets);

void save_checkpoint(const MdNetParams& params, const std::filesystem::path& path);
MdNetParams load_mdnet_checkpoint(const std::filesystem::path& path);

void save_checkpoint(const TeacherParams& params, const std::filesystem::path& path);
TeacherParams load_teacher_checkpoint(const std::filesystem::path& path);

}  // namespace mdnet::model
