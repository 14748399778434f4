#include <scriptdbg/error.hpp>
#include <scriptdbg/maps.hpp>

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

namespace scriptdbg {

namespace {

constexpr Address kPageMask = 0xFFF;

std::string_view next_field(std::string_view& rest) {
  auto begin = rest.find_first_not_of(' ');
  if (begin == std::string_view::npos) {
    rest = {};
    return {};
  }
  rest.remove_prefix(begin);
  auto end = rest.find(' ');
  auto field = rest.substr(0, end);
  rest.remove_prefix(end == std::string_view::npos ? rest.size() : end);
  return field;
}

bool parse_hex(std::string_view text, std::uint64_t& out) {
  if (text.empty()) return false;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), out, 16);
  return ec == std::errc{} && ptr == text.data() + text.size();
}

}  // namespace

MemoryMap parse_maps_line(std::string_view line) {
  std::string_view rest = line;
  auto range = next_field(rest);
  auto perms = next_field(rest);
  auto offset = next_field(rest);
  auto dev = next_field(rest);
  auto inode = next_field(rest);

  MemoryMap map;
  auto dash = range.find('-');
  if (dash == std::string_view::npos || !parse_hex(range.substr(0, dash), map.start) ||
      !parse_hex(range.substr(dash + 1), map.end)) {
    throw MapParseError(std::string(line));
  }
  if (perms.size() != 4) throw MapParseError(std::string(line));
  auto flag = [&](char c, char set, bool& out) {
    if (c == set) {
      out = true;
    } else if (c != '-') {
      throw MapParseError(std::string(line));
    }
  };
  flag(perms[0], 'r', map.readable);
  flag(perms[1], 'w', map.writable);
  flag(perms[2], 'x', map.executable);
  if (perms[3] == 'p') {
    map.is_private = true;
  } else if (perms[3] != 's') {
    throw MapParseError(std::string(line));
  }
  if (!parse_hex(offset, map.file_offset) || dev.find(':') == std::string_view::npos ||
      inode.empty()) {
    throw MapParseError(std::string(line));
  }
  if (map.start >= map.end || (map.start & kPageMask) || (map.end & kPageMask)) {
    throw MapParseError(std::string(line));
  }

  auto path_begin = rest.find_first_not_of(' ');
  if (path_begin != std::string_view::npos) map.path = std::string(rest.substr(path_begin));
  return map;
}

std::vector<MemoryMap> parse_maps(std::string_view text) {
  std::vector<MemoryMap> maps;
  while (!text.empty()) {
    auto nl = text.find('\n');
    auto line = text.substr(0, nl);
    text.remove_prefix(nl == std::string_view::npos ? text.size() : nl + 1);
    if (line.empty()) continue;
    maps.push_back(parse_maps_line(line));
  }
  std::sort(maps.begin(), maps.end(),
            [](const MemoryMap& a, const MemoryMap& b) { return a.start < b.start; });
  for (std::size_t i = 1; i < maps.size(); ++i) {
    if (maps[i].start < maps[i - 1].end) {
      std::ostringstream os;
      os << std::hex << maps[i].start << "-" << maps[i].end << " overlaps previous region";
      throw MapParseError(os.str());
    }
  }
  return maps;
}

std::vector<MemoryMap> read_maps(int pid) {
  std::ifstream in("/proc/" + std::to_string(pid) + "/maps");
  if (!in) Error::raise(ErrorCode::NoSuchProcess, "cannot open maps of pid " + std::to_string(pid));
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_maps(buf.str());
}

std::optional<MemoryMap> find_map(std::span<const MemoryMap> maps, Address addr) {
  auto it = std::upper_bound(maps.begin(), maps.end(), addr,
                             [](Address a, const MemoryMap& m) { return a < m.start; });
  if (it == maps.begin()) return std::nullopt;
  --it;
  if (it->contains(addr)) return *it;
  return std::nullopt;
}

}  // namespace scriptdbg
