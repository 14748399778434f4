#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace scriptdbg::tools {

// De Bruijn patterns over the lowercase alphabet. Every window of `width`
// bytes occurs at most once in a pattern of up to cyclic_capacity(width)
// bytes, so a window read back from a crashed register names its offset.
inline constexpr std::size_t kDefaultCyclicWidth = 4;

std::uint64_t cyclic_capacity(std::size_t width = kDefaultCyclicWidth);

// Throws CapacityError when length exceeds the capacity for width.
std::vector<std::uint8_t> cyclic(std::size_t length, std::size_t width = kDefaultCyclicWidth);

// Offset of window in the pattern, searching at most `limit` bytes of it
// (the whole capacity by default). Throws NotInPattern.
std::size_t cyclic_find(std::span<const std::uint8_t> window,
                        std::size_t width = kDefaultCyclicWidth,
                        std::optional<std::uint64_t> limit = std::nullopt);

}  // namespace scriptdbg::tools
