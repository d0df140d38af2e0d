#include "mdnet/checkpoint.hpp"

#include <bit>
#include <cstring>

#include "mdnet/io_util.hpp"

namespace mdnet::model {

const char* to_string(CheckpointErrorKind kind) {
  switch (kind) {
    case CheckpointErrorKind::Io: return "io error";
    case CheckpointErrorKind::BadMagic: return "bad magic";
    case CheckpointErrorKind::UnsupportedVersion: return "unsupported version";
    case CheckpointErrorKind::Truncated: return "truncated";
    case CheckpointErrorKind::BadDtype: return "bad dtype";
    case CheckpointErrorKind::DuplicateName: return "duplicate name";
    case CheckpointErrorKind::ShapeMismatch: return "shape mismatch";
    case CheckpointErrorKind::UnknownParameter: return "unknown parameter";
    case CheckpointErrorKind::MissingParameter: return "missing parameter";
  }
  return "checkpoint error";
}

CheckpointError::CheckpointError(CheckpointErrorKind kind, const std::string& detail)
    : std::runtime_error(std::string("checkpoint: ") + to_string(kind) + ": " + detail),
      kind_(kind) {}

namespace {

template <class T>
void put_le(std::string& out, T v) {
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    out.push_back(static_cast<char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xff));
  }
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  template <class T>
  T get(const char* what) {
    need(sizeof(T), what);
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    }
    pos_ += sizeof(T);
    return static_cast<T>(v);
  }

  std::string get_bytes(std::size_t n, const char* what) {
    need(n, what);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n, const char* what) {
    if (remaining() < n) {
      throw CheckpointError(CheckpointErrorKind::Truncated,
                            std::string("file ends inside ") + what + " at byte " +
                                std::to_string(pos_));
    }
  }

  const std::string& bytes_;
  std::size_t pos_ = 0;
};

std::string read_checkpoint_file(const std::filesystem::path& path) {
  try {
    return read_file(path);
  } catch (const IoError& e) {
    throw CheckpointError(CheckpointErrorKind::Io, e.what());
  }
}

}  // namespace

std::string encode_checkpoint(const std::vector<NamedTensor>& tensors) {
  std::string out(kCheckpointMagic, sizeof(kCheckpointMagic));
  put_le<std::uint32_t>(out, kCheckpointVersion);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& t : tensors) {
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.name.size()));
    out += t.name;
    put_le<std::uint8_t>(out, kDtypeF64);
    const auto& shape = t.tensor.shape();
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(shape.size()));
    for (auto d : shape) put_le<std::uint64_t>(out, d);
    for (double v : t.tensor.values()) put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
  }
  return out;
}

TensorMap decode_checkpoint(const std::string& bytes) {
  if (bytes.size() < sizeof(kCheckpointMagic) ||
      std::memcmp(bytes.data(), kCheckpointMagic, sizeof(kCheckpointMagic)) != 0) {
    throw CheckpointError(CheckpointErrorKind::BadMagic, "expected \"MDNC\" header");
  }
  Reader r(bytes);
  r.get_bytes(sizeof(kCheckpointMagic), "magic");
  const auto version = r.get<std::uint32_t>("version");
  if (version != kCheckpointVersion) {
    throw CheckpointError(CheckpointErrorKind::UnsupportedVersion,
                          "file version " + std::to_string(version) + ", reader supports " +
                              std::to_string(kCheckpointVersion));
  }
  const auto count = r.get<std::uint32_t>("tensor count");
  TensorMap out;
  for (std::uint32_t k = 0; k < count; ++k) {
    const auto name_len = r.get<std::uint32_t>("name length");
    std::string name = r.get_bytes(name_len, "tensor name");
    const auto dtype = r.get<std::uint8_t>("dtype");
    if (dtype != kDtypeF64) {
      throw CheckpointError(CheckpointErrorKind::BadDtype,
                            "tensor '" + name + "' has dtype tag " + std::to_string(dtype));
    }
    const auto rank = r.get<std::uint32_t>("rank");
    StoredTensor st;
    std::uint64_t count_values = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
      const auto d = r.get<std::uint64_t>("dims");
      st.shape.push_back(static_cast<std::size_t>(d));
      count_values *= d;
    }
    if (count_values > r.remaining() / sizeof(double)) {
      throw CheckpointError(CheckpointErrorKind::Truncated,
                            "payload of tensor '" + name + "' is incomplete");
    }
    st.values.resize(static_cast<std::size_t>(count_values));
    for (auto& v : st.values) v = std::bit_cast<double>(r.get<std::uint64_t>("payload"));
    if (!out.emplace(name, std::move(st)).second) {
      throw CheckpointError(CheckpointErrorKind::DuplicateName, "tensor '" + name + "'");
    }
  }
  return out;
}

void apply_tensors(const TensorMap& stored, const std::vector<NamedTensor>& targets) {
  std::map<std::string, const NamedTensor*> by_name;
  for (const auto& t : targets) by_name[t.name] = &t;
  for (const auto& [name, st] : stored) {
    if (!by_name.contains(name)) {
      throw CheckpointError(CheckpointErrorKind::UnknownParameter, "'" + name + "'");
    }
  }
  for (const auto& t : targets) {
    auto it = stored.find(t.name);
    if (it == stored.end()) {
      throw CheckpointError(CheckpointErrorKind::MissingParameter, "'" + t.name + "'");
    }
    if (it->second.shape != t.tensor.shape()) {
      throw CheckpointError(CheckpointErrorKind::ShapeMismatch,
                            "'" + t.name + "' stored " + nn::to_string(it->second.shape) +
                                ", expected " + nn::to_string(t.tensor.shape()));
    }
  }
  for (const auto& t : targets) {
    const auto& src = stored.at(t.name).values;
    Tensor dst = t.tensor;
    std::copy(src.begin(), src.end(), dst.mutable_values().begin());
  }
}

void save_checkpoint(const MdNetParams& params, const std::filesystem::path& path) {
  write_file_atomic(path, encode_checkpoint(params.named_tensors()));
}

MdNetParams load_mdnet_checkpoint(const std::filesystem::path& path) {
  auto stored = decode_checkpoint(read_checkpoint_file(path));
  MdNetParams params = MdNetParams::initialize(0);
  apply_tensors(stored, params.named_tensors());
  return params;
}

void save_checkpoint(const TeacherParams& params, const std::filesystem::path& path) {
  write_file_atomic(path, encode_checkpoint(params.named_tensors()));
}

TeacherParams load_teacher_checkpoint(const std::filesystem::path& path) {
  auto stored = decode_checkpoint(read_checkpoint_file(path));
  TeacherParams params = TeacherParams::initialize(0);
  apply_tensors(stored, params.named_tensors());
  return params;
}

}  // namespace mdnet::model
