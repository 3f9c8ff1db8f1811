#pragma once

// Bit-array LFSR written straight from the register recurrence, used as an
// oracle for the packed implementation.

#include <cstdint>
#include <vector>

namespace shiftbnn::testing {

struct ReferenceLfsr {
  int width;
  std::vector<int> taps;
  std::vector<int> reg;  // reg[i] holds R_i, index 0 unused

  ReferenceLfsr(int n, std::vector<int> t, std::uint64_t seed) : width(n), taps(std::move(t)) {
    reg.assign(static_cast<std::size_t>(n) + 1, 0);
    for (int i = 1; i <= n; ++i) reg[i] = static_cast<int>((seed >> (n - i)) & 1u);
  }

  ReferenceLfsr(int n, std::vector<int> t, const std::vector<std::uint64_t>& words)
      : width(n), taps(std::move(t)) {
    reg.assign(static_cast<std::size_t>(n) + 1, 0);
    for (int i = 1; i <= n; ++i) {
      const int pos = n - i;
      reg[i] = static_cast<int>((words[pos / 64] >> (pos % 64)) & 1u);
    }
  }

  int forward() {
    int head = 0;
    for (int t : taps) head ^= reg[t];
    const int tail = reg[width];
    for (int i = width; i > 1; --i) reg[i] = reg[i - 1];
    reg[1] = head;
    return tail;
  }

  int reverse() {
    int tail = reg[1];
    for (int t : taps)
      if (t != width) tail ^= reg[t + 1];
    for (int i = 1; i < width; ++i) reg[i] = reg[i + 1];
    reg[width] = tail;
    return tail;
  }

  int popcount() const {
    int c = 0;
    for (int i = 1; i <= width; ++i) c += reg[i];
    return c;
  }

  std::uint64_t value() const {
    std::uint64_t v = 0;
    for (int i = 1; i <= width; ++i) v |= static_cast<std::uint64_t>(reg[i]) << (width - i);
    return v;
  }
};

}  // namespace shiftbnn::testing
