#pragma once

// FeatureTensorFile (.ftf) reader and writer.
//
// Layout, all integers little-endian:
//   bytes 0..3   magic "FTF1"
//   bytes 4..7   uint32 header length H
//   next H bytes UTF-8 JSON header {dtype:"f32", shape:[d0,d1], sample_rate_hz, unit, source, ...}
//   payload      d0·d1 float32 values, row-major

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "diotic/feature_tensor.hpp"

namespace diotic {

class FileFormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class BadMagicError : public FileFormatError {
 public:
  using FileFormatError::FileFormatError;
};
class TruncatedFileError : public FileFormatError {
 public:
  using FileFormatError::FileFormatError;
};
class MalformedHeaderError : public FileFormatError {
 public:
  using FileFormatError::FileFormatError;
};

inline constexpr std::array<char, 4> kFeatureFileMagic{'F', 'T', 'F', '1'};

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

inline std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

}  // namespace detail

inline nlohmann::json feature_header(const FeatureTensor& t) {
  nlohmann::json header = t.attributes.is_object() ? t.attributes : nlohmann::json::object();
  header["dtype"] = "f32";
  header["shape"] = {t.rows, t.cols};
  header["sample_rate_hz"] = t.sample_rate_hz;
  header["unit"] = t.unit;
  header["source"] = t.source;
  return header;
}

inline std::string encode_feature_tensor(const FeatureTensor& t) {
  if (t.values.size() != t.rows * t.cols) throw DimensionError("feature tensor shape does not match payload");
  const std::string header = feature_header(t).dump();
  std::string out(kFeatureFileMagic.begin(), kFeatureFileMagic.end());
  detail::put_u32(out, static_cast<std::uint32_t>(header.size()));
  out += header;
  out.reserve(out.size() + 4 * t.values.size());
  for (float v : t.values) detail::put_u32(out, std::bit_cast<std::uint32_t>(v));
  return out;
}

inline FeatureTensor decode_feature_tensor(const std::string& bytes, const std::string& origin = "<memory>") {
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  if (bytes.size() < 4 || std::memcmp(p, kFeatureFileMagic.data(), 4) != 0)
    throw BadMagicError(origin + ": not a feature tensor file (bad magic)");
  if (bytes.size() < 8) throw TruncatedFileError(origin + ": truncated before header length");
  const std::uint32_t header_len = detail::get_u32(p + 4);
  if (bytes.size() < 8 + static_cast<std::size_t>(header_len))
    throw TruncatedFileError(origin + ": truncated inside header");

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.begin() + 8, bytes.begin() + 8 + header_len);
  } catch (const nlohmann::json::parse_error& e) {
    throw MalformedHeaderError(origin + ": header is not valid JSON (" + e.what() + ")");
  }
  FeatureTensor t;
  try {
    if (!header.is_object()) throw MalformedHeaderError("header is not an object");
    if (header.at("dtype").get<std::string>() != "f32") throw MalformedHeaderError("dtype must be \"f32\"");
    const auto& shape = header.at("shape");
    if (!shape.is_array() || shape.size() != 2) throw MalformedHeaderError("shape must have exactly 2 dimensions");
    t.rows = shape[0].get<std::size_t>();
    t.cols = shape[1].get<std::size_t>();
    t.sample_rate_hz = header.at("sample_rate_hz").get<double>();
    t.unit = header.value("unit", "");
    t.source = header.value("source", "");
  } catch (const MalformedHeaderError& e) {
    throw MalformedHeaderError(origin + ": " + e.what());
  } catch (const nlohmann::json::exception& e) {
    throw MalformedHeaderError(origin + ": bad header field (" + e.what() + ")");
  }
  for (const char* key : {"dtype", "shape", "sample_rate_hz", "unit", "source"}) header.erase(key);
  t.attributes = std::move(header);

  const std::size_t need = 4 * t.rows * t.cols;
  const std::size_t have = bytes.size() - 8 - header_len;
  if (have < need) {
    throw TruncatedFileError(origin + ": payload has " + std::to_string(have) + " bytes, shape requires " +
                             std::to_string(need));
  }
  if (have > need) throw FileFormatError(origin + ": " + std::to_string(have - need) + " trailing bytes");
  t.values.resize(t.rows * t.cols);
  const unsigned char* payload = p + 8 + header_len;
  for (std::size_t i = 0; i < t.values.size(); ++i)
    t.values[i] = std::bit_cast<float>(detail::get_u32(payload + 4 * i));
  return t;
}

inline std::string read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline FeatureTensor read_feature_file(const std::filesystem::path& path) {
  return decode_feature_tensor(read_file_bytes(path), path.string());
}

inline void write_feature_file(const std::filesystem::path& path, const FeatureTensor& t) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const std::string bytes = encode_feature_tensor(t);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

inline void write_text_file(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

}  // namespace diotic
