#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>

namespace cvgan {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Error taxonomy. The CLI maps kinds onto distinct exit codes, so every
/// throw site picks the kind deliberately.
enum class ErrorKind {
  Config,    // bad configuration / unknown keys / invalid hyperparameters
  Data,      // malformed or missing input data
  Numeric,   // non-finite values, divergence, failed decompositions
  Contract,  // API misuse (variant gating, shape contracts)
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, std::string msg) : std::runtime_error(std::move(msg)), kind_(kind) {}
  ErrorKind kind() const { return kind_; }

  static Error config(std::string msg) { return {ErrorKind::Config, std::move(msg)}; }
  static Error data(std::string msg) { return {ErrorKind::Data, std::move(msg)}; }
  static Error numeric(std::string msg) { return {ErrorKind::Numeric, std::move(msg)}; }
  static Error contract(std::string msg) { return {ErrorKind::Contract, std::move(msg)}; }

 private:
  ErrorKind kind_;
};

inline void require(bool cond, ErrorKind kind, const std::string& msg) {
  if (!cond) throw Error(kind, msg);
}

/// FNV-1a over raw bytes; used for content fingerprints throughout.
inline std::uint64_t fnv1a(const void* data, std::size_t len, std::uint64_t h = 0xcbf29ce484222325ull) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::uint64_t fnv1a(const std::string& s, std::uint64_t h = 0xcbf29ce484222325ull) {
  return fnv1a(s.data(), s.size(), h);
}

inline std::uint64_t fnv1a(const Matrix& m, std::uint64_t h = 0xcbf29ce484222325ull) {
  return fnv1a(m.data(), sizeof(double) * static_cast<std::size_t>(m.size()), h);
}

inline std::string hex64(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = digits[v & 0xf];
    v >>= 4;
  }
  return out;
}

}  // namespace cvgan
