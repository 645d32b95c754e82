#pragma once

#include "cvgan/common.hpp"

#include <json.hpp>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

namespace cvgan::io {

using nlohmann::json;

// Container format shared by datasets, checkpoints and reports:
//   magic(4) | format_version(u32) | header_len(u64) | header JSON | payload
// The header carries an explicit schema_version plus a blob index with
// byte offsets into the payload. Writing is deterministic, so identical
// content produces identical bytes (used for content addressing).

inline constexpr std::uint32_t kFormatVersion = 1;

class BlobWriter {
 public:
  explicit BlobWriter(std::string magic, json meta = json::object()) : magic_(std::move(magic)), meta_(std::move(meta)) {
    require(magic_.size() == 4, ErrorKind::Contract, "blob magic must be 4 bytes");
    header_["schema_version"] = 1;
    header_["blobs"] = json::array();
  }

  json& meta() { return meta_; }

  void add_matrix(const std::string& name, const Matrix& m) {
    json entry;
    entry["name"] = name;
    entry["dtype"] = "f64";
    entry["rows"] = m.rows();
    entry["cols"] = m.cols();
    entry["offset"] = payload_.size();
    header_["blobs"].push_back(entry);
    append(m.data(), sizeof(double) * static_cast<std::size_t>(m.size()));
  }

  void add_ints(const std::string& name, const std::vector<std::int32_t>& v) {
    json entry;
    entry["name"] = name;
    entry["dtype"] = "i32";
    entry["rows"] = v.size();
    entry["cols"] = 1;
    entry["offset"] = payload_.size();
    header_["blobs"].push_back(entry);
    append(v.data(), sizeof(std::int32_t) * v.size());
  }

  void add_doubles(const std::string& name, const std::vector<double>& v) {
    Eigen::Map<const Matrix> m(v.data(), static_cast<long>(v.size()), 1);
    add_matrix(name, m);
  }

  std::string serialize() const {
    json header = header_;
    header["meta"] = meta_;
    const std::string hs = header.dump();
    std::string out;
    out.reserve(4 + 12 + hs.size() + payload_.size());
    out.append(magic_);
    const std::uint32_t ver = kFormatVersion;
    const std::uint64_t hlen = hs.size();
    out.append(reinterpret_cast<const char*>(&ver), sizeof(ver));
    out.append(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
    out.append(hs);
    out.append(payload_);
    return out;
  }

  std::uint64_t write_file(const std::filesystem::path& path) const {
    const std::string bytes = serialize();
    std::filesystem::create_directories(path.parent_path().empty() ? "." : path.parent_path());
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    require(f.good(), ErrorKind::Data, "cannot open for writing: " + path.string());
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    require(f.good(), ErrorKind::Data, "write failed: " + path.string());
    return fnv1a(bytes.data(), bytes.size());
  }

 private:
  void append(const void* data, std::size_t len) {
    const auto* p = static_cast<const char*>(data);
    payload_.append(p, len);
  }

  std::string magic_;
  json header_;
  json meta_;
  std::string payload_;
};

class BlobReader {
 public:
  static BlobReader from_file(const std::filesystem::path& path, const std::string& magic) {
    std::ifstream f(path, std::ios::binary);
    require(f.good(), ErrorKind::Data, "cannot open: " + path.string());
    std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return from_bytes(std::move(bytes), magic, path.string());
  }

  static BlobReader from_bytes(std::string bytes, const std::string& magic, const std::string& origin = "<memory>") {
    BlobReader r;
    require(bytes.size() >= 16, ErrorKind::Data, "truncated container: " + origin);
    require(bytes.compare(0, 4, magic) == 0, ErrorKind::Data,
            "bad magic in " + origin + " (expected " + magic + ")");
    std::uint32_t ver = 0;
    std::uint64_t hlen = 0;
    std::memcpy(&ver, bytes.data() + 4, sizeof(ver));
    std::memcpy(&hlen, bytes.data() + 8, sizeof(hlen));
    require(ver == kFormatVersion, ErrorKind::Data, "unsupported container version in " + origin);
    require(bytes.size() >= 16 + hlen, ErrorKind::Data, "truncated header: " + origin);
    r.header_ = json::parse(bytes.substr(16, hlen));
    r.payload_offset_ = 16 + hlen;
    r.fingerprint_ = fnv1a(bytes.data(), bytes.size());
    r.bytes_ = std::move(bytes);
    r.origin_ = origin;
    return r;
  }

  const json& meta() const { return header_.at("meta"); }
  int schema_version() const { return header_.at("schema_version").get<int>(); }
  std::uint64_t fingerprint() const { return fingerprint_; }

  bool has(const std::string& name) const { return find(name) != nullptr; }

  Matrix matrix(const std::string& name) const {
    const json* e = find(name);
    require(e != nullptr, ErrorKind::Data, "missing blob '" + name + "' in " + origin_);
    require(e->at("dtype") == "f64", ErrorKind::Data, "blob '" + name + "' is not f64");
    const long rows = e->at("rows").get<long>();
    const long cols = e->at("cols").get<long>();
    const std::size_t off = payload_offset_ + e->at("offset").get<std::size_t>();
    const std::size_t len = sizeof(double) * static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols);
    require(off + len <= bytes_.size(), ErrorKind::Data, "blob '" + name + "' out of range");
    Matrix m(rows, cols);
    std::memcpy(m.data(), bytes_.data() + off, len);
    return m;
  }

  std::vector<std::int32_t> ints(const std::string& name) const {
    const json* e = find(name);
    require(e != nullptr, ErrorKind::Data, "missing blob '" + name + "' in " + origin_);
    require(e->at("dtype") == "i32", ErrorKind::Data, "blob '" + name + "' is not i32");
    const std::size_t count = e->at("rows").get<std::size_t>();
    const std::size_t off = payload_offset_ + e->at("offset").get<std::size_t>();
    require(off + count * sizeof(std::int32_t) <= bytes_.size(), ErrorKind::Data, "blob out of range");
    std::vector<std::int32_t> v(count);
    std::memcpy(v.data(), bytes_.data() + off, count * sizeof(std::int32_t));
    return v;
  }

  std::vector<double> doubles(const std::string& name) const {
    Matrix m = matrix(name);
    return {m.data(), m.data() + m.size()};
  }

 private:
  const json* find(const std::string& name) const {
    for (const auto& e : header_.at("blobs"))
      if (e.at("name") == name) return &e;
    return nullptr;
  }

  json header_;
  std::string bytes_;
  std::string origin_;
  std::size_t payload_offset_ = 0;
  std::uint64_t fingerprint_ = 0;
};

inline void write_text_file(const std::filesystem::path& path, const std::string& content) {
  if (!path.parent_path().empty()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::trunc);
  require(f.good(), ErrorKind::Data, "cannot open for writing: " + path.string());
  f << content;
}

inline void write_bytes(const std::filesystem::path& path, const std::string& bytes) {
  if (!path.parent_path().empty()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  require(f.good(), ErrorKind::Data, "cannot open for writing: " + path.string());
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  require(f.good(), ErrorKind::Data, "write failed: " + path.string());
}

inline std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream f(path);
  require(f.good(), ErrorKind::Data, "cannot open: " + path.string());
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

}  // namespace cvgan::io
