#pragma once

#include <scriptdbg/arch.hpp>

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>

namespace scriptdbg {

// Per-architecture syscall number <-> name mapping, loaded from the
// `<arch> <nr> <name>` table format.
class SyscallTable {
 public:
  // Throws Error(SystemError) naming the first malformed line.
  static SyscallTable parse(std::string_view text);
  // The table compiled into the library from data/syscalls.tbl.
  static const SyscallTable& builtin();

  std::optional<std::string_view> name(Arch arch, std::uint64_t nr) const;
  std::optional<std::uint64_t> number(Arch arch, std::string_view name) const;
  std::size_t size(Arch arch) const;

  // Name lookup that falls back to "syscall_<nr>".
  std::string describe(Arch arch, std::uint64_t nr) const;

 private:
  struct PerArch {
    std::map<std::uint64_t, std::string> by_number;
    std::unordered_map<std::string, std::uint64_t> by_name;
  };
  const PerArch& of(Arch arch) const { return arch == Arch::Amd64 ? amd64_ : aarch64_; }
  PerArch amd64_;
  PerArch aarch64_;
};

}  // namespace scriptdbg
