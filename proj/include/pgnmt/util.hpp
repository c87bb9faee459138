#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace pgnmt {

// FNV-1a over bytes; used to fingerprint tokenizers for checkpoint pairing.
inline std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (char c : bytes) {
    h ^= static_cast<std::uint64_t>(static_cast<unsigned char>(c));
    h *= 0x100000001b3ull;
  }
  return h;
}

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, std::string_view content);

// Whitespace-separated fields (any run of blanks is one separator).
std::vector<std::string> split_whitespace(std::string_view line);

std::string to_hex(std::uint64_t value);

// Compensated (Kahan) summation; the accumulator, exposed so callers can
// stream values in.
class KahanSum {
 public:
  void add(double x) {
    double y = x - c_;
    double t = s_ + y;
    c_ = (t - s_) - y;
    s_ = t;
  }
  double value() const { return s_; }

 private:
  double s_ = 0.0;
  double c_ = 0.0;
};

}  // namespace pgnmt
