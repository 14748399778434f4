#include <scriptdbg/cyclic.hpp>
#include <scriptdbg/error.hpp>

#include <algorithm>
#include <limits>
#include <string>

namespace scriptdbg::tools {

namespace {

constexpr std::uint8_t kAlphabet[] = "abcdefghijklmnopqrstuvwxyz";
constexpr std::size_t kSymbols = 26;

// Fredricksen-Kessler-Maiorana: concatenating, in lexicographic order, the
// Lyndon words whose length divides n yields the smallest de Bruijn sequence.
// Emits bytes until `sink` returns false or the sequence is exhausted.
template <typename Sink>
void generate(std::size_t n, Sink&& sink) {
  std::vector<std::size_t> a(n + 1, 0);
  auto emit = [&](std::size_t p) {
    for (std::size_t j = 1; j <= p; ++j) {
      if (!sink(kAlphabet[a[j]])) return false;
    }
    return true;
  };
  if (!emit(1)) return;
  for (;;) {
    std::size_t i = n;
    while (i > 0 && a[i] == kSymbols - 1) --i;
    if (i == 0) return;
    ++a[i];
    for (std::size_t j = i + 1; j <= n; ++j) a[j] = a[j - i];
    if (n % i == 0 && !emit(i)) return;
  }
}

void check_width(std::size_t width) {
  if (width == 0 || width > 13) {
    Error::raise(ErrorCode::CapacityError, "cyclic width must be in 1..13");
  }
}

}  // namespace

std::uint64_t cyclic_capacity(std::size_t width) {
  check_width(width);
  std::uint64_t cap = 1;
  for (std::size_t i = 0; i < width; ++i) cap *= kSymbols;
  return cap;
}

std::vector<std::uint8_t> cyclic(std::size_t length, std::size_t width) {
  auto cap = cyclic_capacity(width);
  if (length > cap) {
    Error::raise(ErrorCode::CapacityError, "cyclic(" + std::to_string(length) +
                                               ") exceeds the capacity " + std::to_string(cap));
  }
  std::vector<std::uint8_t> out;
  out.reserve(length);
  if (length == 0) return out;
  generate(width, [&](std::uint8_t c) {
    out.push_back(c);
    return out.size() < length;
  });
  return out;
}

std::size_t cyclic_find(std::span<const std::uint8_t> window, std::size_t width,
                        std::optional<std::uint64_t> limit) {
  auto cap = cyclic_capacity(width);
  if (window.size() != width) {
    Error::raise(ErrorCode::NotInPattern, "window length " + std::to_string(window.size()) +
                                              " differs from the pattern width " +
                                              std::to_string(width));
  }
  for (auto c : window) {
    if (c < 'a' || c > 'z') Error::raise(ErrorCode::NotInPattern, "window leaves the alphabet");
  }
  std::uint64_t budget = std::min(limit.value_or(cap), cap);
  // Sliding comparison against a ring of the last `width` bytes.
  std::vector<std::uint8_t> ring(width);
  std::uint64_t produced = 0;
  std::optional<std::size_t> found;
  generate(width, [&](std::uint8_t c) {
    if (produced >= budget) return false;
    ring[produced % width] = c;
    ++produced;
    if (produced < width) return true;
    std::uint64_t start = produced - width;
    for (std::size_t k = 0; k < width; ++k) {
      if (ring[(start + k) % width] != window[k]) return true;
    }
    found = static_cast<std::size_t>(start);
    return false;
  });
  if (!found) Error::raise(ErrorCode::NotInPattern, "window does not occur in the pattern");
  return *found;
}

}  // namespace scriptdbg::tools
