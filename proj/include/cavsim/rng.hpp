#pragma once

#include <array>
#include <cstdint>
#include <string_view>

namespace cavsim {

/// Philox4x32-10 block function.
std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> ctr, std::array<std::uint32_t, 2> key);

/// Hash-based derivation of an independent stream seed from a master seed
/// and a textual label.
std::uint64_t derive_seed(std::uint64_t master, std::string_view label);

std::uint64_t splitmix64(std::uint64_t x);

/// Counter-based stream: (key, stream index) select the sequence, an
/// internal draw counter walks along it. Copies are independent cursors.
class Stream {
 public:
  Stream(std::uint64_t key, std::uint64_t index);

  std::uint32_t next_u32();
  std::uint64_t next_u64();
  /// Uniform on (0, 1), never exactly 0 or 1.
  double uniform();
  double uniform(double lo, double hi);
  double normal();
  double normal(double mean, double sd);
  std::uint64_t poisson(double mean);

 private:
  void refill();

  std::array<std::uint32_t, 2> key_;
  std::uint64_t index_;
  std::uint64_t block_ = 0;
  std::array<std::uint32_t, 4> buf_{};
  int pos_ = 4;
  bool has_spare_ = false;
  double spare_ = 0;
};

}  // namespace cavsim
