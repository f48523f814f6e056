#pragma once
// Dense double tensors with named-collection helpers, content hashing and a
// round-trip-exact text serialization used by checkpoints and data files.

#include <algorithm>
#include <bit>
#include <charconv>
#include <cstdint>
#include <map>
#include <numeric>
#include <stdexcept>
#include <string>
#include <system_error>
#include <vector>

namespace cig {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad/ill-formed input data (files, records, batches).
class ValidationError : public Error {
 public:
  using Error::Error;
};

// Missing or unreadable/unwritable files.
class IoError : public Error {
 public:
  using Error::Error;
};

// Checkpoint/architecture disagreements.
class CheckpointError : public Error {
 public:
  using Error::Error;
};

// Unknown keys, out-of-range values, inconsistent settings.
class ConfigError : public Error {
 public:
  using Error::Error;
};

struct Tensor {
  std::vector<int> shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(std::vector<int> s) : shape(std::move(s)) {
    data.assign(static_cast<size_t>(element_count(shape)), 0.0);
  }
  Tensor(std::vector<int> s, std::vector<double> d)
      : shape(std::move(s)), data(std::move(d)) {
    if (static_cast<long long>(data.size()) != element_count(shape))
      throw ValidationError("tensor shape/data size mismatch");
  }

  static long long element_count(const std::vector<int>& s) {
    long long n = 1;
    for (int d : s) {
      if (d <= 0) throw ValidationError("tensor dimensions must be positive");
      n *= d;
    }
    return n;
  }

  size_t size() const { return data.size(); }
  bool same_shape(const Tensor& other) const { return shape == other.shape; }

  bool all_finite() const {
    return std::all_of(data.begin(), data.end(),
                       [](double v) { return std::isfinite(v); });
  }
};

// Named tensors; std::map so iteration order is stable for serialization
// and optimizer stepping.
using TensorMap = std::map<std::string, Tensor>;

// FNV-1a over raw bytes.
inline uint64_t fnv1a64(const void* bytes, size_t n, uint64_t h = 0xcbf29ce484222325ull) {
  const auto* p = static_cast<const unsigned char*>(bytes);
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

inline uint64_t fnv1a64(const std::string& s) { return fnv1a64(s.data(), s.size()); }

// Hash covers shape and the exact bit pattern of every element.
inline uint64_t tensor_hash(const Tensor& t) {
  uint64_t h = 0xcbf29ce484222325ull;
  for (int d : t.shape) h = fnv1a64(&d, sizeof(d), h);
  for (double v : t.data) {
    auto bits = std::bit_cast<uint64_t>(v);
    h = fnv1a64(&bits, sizeof(bits), h);
  }
  return h;
}

inline std::string hash_hex(uint64_t h) {
  static const char* digits = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<size_t>(i)] = digits[h & 0xf];
    h >>= 4;
  }
  return out;
}

// Shortest decimal form that parses back to the same double.
inline std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline double parse_double(std::string_view s) {
  double v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw ValidationError("bad floating-point literal '" + std::string(s) + "'");
  return v;
}

inline long long parse_int(std::string_view s) {
  long long v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw ValidationError("bad integer literal '" + std::string(s) + "'");
  return v;
}

}  // namespace cig
