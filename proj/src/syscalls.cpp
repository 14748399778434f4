#include <scriptdbg/error.hpp>
#include <scriptdbg/syscalls.hpp>

#include <charconv>

namespace scriptdbg {

extern const char kSyscallTableText[];

namespace {

std::string_view next_token(std::string_view& rest) {
  auto begin = rest.find_first_not_of(" \t");
  if (begin == std::string_view::npos) {
    rest = {};
    return {};
  }
  rest.remove_prefix(begin);
  auto end = rest.find_first_of(" \t");
  auto tok = rest.substr(0, end);
  rest.remove_prefix(end == std::string_view::npos ? rest.size() : end);
  return tok;
}

}  // namespace

SyscallTable SyscallTable::parse(std::string_view text) {
  SyscallTable table;
  std::size_t line_no = 0;
  while (!text.empty()) {
    auto nl = text.find('\n');
    auto line = text.substr(0, nl);
    text.remove_prefix(nl == std::string_view::npos ? text.size() : nl + 1);
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    std::string_view rest = line;
    auto arch = next_token(rest);
    if (arch.empty()) continue;
    auto nr_text = next_token(rest);
    auto name = next_token(rest);
    auto bad = [&](const char* why) {
      Error::raise(ErrorCode::SystemError,
                   "syscall table line " + std::to_string(line_no) + ": " + why);
    };
    if (name.empty() || !next_token(rest).empty()) bad("expected '<arch> <nr> <name>'");
    std::uint64_t nr = 0;
    auto [ptr, ec] = std::from_chars(nr_text.data(), nr_text.data() + nr_text.size(), nr);
    if (ec != std::errc{} || ptr != nr_text.data() + nr_text.size()) bad("bad syscall number");
    PerArch* target = nullptr;
    if (arch == "amd64") {
      target = &table.amd64_;
    } else if (arch == "aarch64") {
      target = &table.aarch64_;
    } else {
      bad("unknown architecture");
    }
    target->by_number.emplace(nr, std::string(name));
    target->by_name.emplace(std::string(name), nr);
  }
  return table;
}

const SyscallTable& SyscallTable::builtin() {
  static const SyscallTable table = parse(kSyscallTableText);
  return table;
}

std::optional<std::string_view> SyscallTable::name(Arch arch, std::uint64_t nr) const {
  const auto& t = of(arch).by_number;
  if (auto it = t.find(nr); it != t.end()) return it->second;
  return std::nullopt;
}

std::optional<std::uint64_t> SyscallTable::number(Arch arch, std::string_view name) const {
  const auto& t = of(arch).by_name;
  if (auto it = t.find(std::string(name)); it != t.end()) return it->second;
  return std::nullopt;
}

std::size_t SyscallTable::size(Arch arch) const { return of(arch).by_number.size(); }

std::string SyscallTable::describe(Arch arch, std::uint64_t nr) const {
  if (auto n = name(arch, nr)) return std::string(*n);
  return "syscall_" + std::to_string(nr);
}

}  // namespace scriptdbg
