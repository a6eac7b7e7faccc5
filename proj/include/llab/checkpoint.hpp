#ifndef LLAB_CHECKPOINT_HPP
#define LLAB_CHECKPOINT_HPP

// Binary checkpoint, all integers little-endian:
//
//   "LLAB"  u32 version=1
//   u32 input_dim  u32 num_hidden  u32 width * num_hidden  u32 num_classes
//   u64 parameter_count  f64 * parameter_count
//   u64 meta_length  meta_length bytes of UTF-8 JSON

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <optional>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include <nlohmann/json.hpp>

#include "llab/autodiff.hpp"
#include "llab/error.hpp"

namespace llab {

inline constexpr char kCheckpointMagic[4] = {'L', 'L', 'A', 'B'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  ModelSpec spec;
  ParamVector theta;
  nlohmann::json meta = nlohmann::json::object();
};

namespace detail {

template <class T>
void put_le(std::string& out, T value) {
  std::uint64_t bits = 0;
  if constexpr (sizeof(T) == 8) {
    bits = std::bit_cast<std::uint64_t>(value);
  } else {
    bits = static_cast<std::uint64_t>(value);
  }
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

class ByteReader {
 public:
  explicit ByteReader(std::string_view bytes) : bytes_(bytes) {}

  template <class T>
  T get(const char* what) {
    if (bytes_.size() - pos_ < sizeof(T))
      throw FormatError(std::string("checkpoint truncated reading ") + what);
    std::uint64_t bits = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i)
      bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += sizeof(T);
    if constexpr (std::is_same_v<T, double>) {
      return std::bit_cast<double>(bits);
    } else {
      return static_cast<T>(bits);
    }
  }

  std::string_view take(std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n) throw FormatError(std::string("checkpoint truncated reading ") + what);
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool at_end() const noexcept { return pos_ == bytes_.size(); }

 private:
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string encode_checkpoint(const ModelSpec& spec, const ParamVector& theta,
                                     const nlohmann::json& meta) {
  detail::check_theta(spec, theta);
  std::string out(kCheckpointMagic, 4);
  detail::put_le<std::uint32_t>(out, kCheckpointVersion);
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(spec.input_dim));
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(spec.hidden_widths.size()));
  for (std::size_t w : spec.hidden_widths) detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(w));
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(spec.num_classes));
  detail::put_le<std::uint64_t>(out, theta.size());
  for (double v : theta.values()) detail::put_le<double>(out, v);
  const std::string text = meta.dump();
  detail::put_le<std::uint64_t>(out, text.size());
  out += text;
  return out;
}

inline Checkpoint decode_checkpoint(std::string_view bytes) {
  detail::ByteReader in(bytes);
  if (in.take(4, "magic") != std::string_view(kCheckpointMagic, 4))
    throw FormatError("checkpoint: bad magic");
  const auto version = in.get<std::uint32_t>("version");
  if (version != kCheckpointVersion)
    throw FormatError("checkpoint: unsupported version " + std::to_string(version));
  Checkpoint ck;
  ck.spec.input_dim = in.get<std::uint32_t>("input_dim");
  const auto hidden = in.get<std::uint32_t>("num_hidden");
  if (hidden > 1024) throw FormatError("checkpoint: implausible hidden layer count");
  for (std::uint32_t k = 0; k < hidden; ++k) ck.spec.hidden_widths.push_back(in.get<std::uint32_t>("width"));
  ck.spec.num_classes = in.get<std::uint32_t>("num_classes");
  try {
    ck.spec.validate();
  } catch (const ParameterError& e) {
    throw FormatError(std::string("checkpoint: ") + e.what());
  }
  const auto count = in.get<std::uint64_t>("parameter count");
  if (count != ck.spec.parameter_count())
    throw FormatError("checkpoint: parameter count " + std::to_string(count) +
                      " does not match spec (" + std::to_string(ck.spec.parameter_count()) + ")");
  std::vector<double> values(count);
  for (auto& v : values) v = in.get<double>("parameters");
  ck.theta = ParamVector(ParamLayout::for_model(ck.spec), std::move(values));
  const auto meta_len = in.get<std::uint64_t>("meta length");
  const auto text = in.take(meta_len, "meta");
  if (!in.at_end()) throw FormatError("checkpoint: trailing bytes");
  try {
    ck.meta = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint: bad meta JSON: ") + e.what());
  }
  return ck;
}

inline void save_checkpoint(const std::filesystem::path& path, const ModelSpec& spec,
                            const ParamVector& theta, const nlohmann::json& meta = nlohmann::json::object()) {
  const std::string bytes = encode_checkpoint(spec, theta, meta);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string() + " for writing");
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("write failed: " + path.string());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

/// Loads and checks the stored model against the expected one.
inline Checkpoint load_checkpoint(const std::filesystem::path& path, const ModelSpec& expected) {
  Checkpoint ck = load_checkpoint(path);
  if (!(ck.spec == expected))
    throw DimensionError("checkpoint " + path.string() + ": layout does not match expected model");
  return ck;
}

}  // namespace llab

#endif  // LLAB_CHECKPOINT_HPP
