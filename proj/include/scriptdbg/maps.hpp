#pragma once

#include <scriptdbg/arch.hpp>

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace scriptdbg {

struct MemoryMap {
  Address start = 0;
  Address end = 0;
  bool readable = false;
  bool writable = false;
  bool executable = false;
  bool is_private = false;
  std::uint64_t file_offset = 0;
  std::optional<std::string> path;

  std::uint64_t size() const { return end - start; }
  bool contains(Address addr) const { return start <= addr && addr < end; }
  // Backed by a file (pseudo paths such as "[stack]" do not count).
  bool file_backed() const { return path && !path->empty() && path->front() == '/'; }
  friend bool operator==(const MemoryMap&, const MemoryMap&) = default;
};

// One line of /proc/<pid>/maps. Throws MapParseError.
MemoryMap parse_maps_line(std::string_view line);

// Whole file. Sorted by start, validated for page alignment and overlap.
std::vector<MemoryMap> parse_maps(std::string_view text);

std::vector<MemoryMap> read_maps(int pid);

// Binary search over a list sorted by start.
std::optional<MemoryMap> find_map(std::span<const MemoryMap> maps, Address addr);

}  // namespace scriptdbg
