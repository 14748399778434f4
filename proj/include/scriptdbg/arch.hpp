#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string_view>

namespace scriptdbg {

using Address = std::uint64_t;
using Tid = int;

enum class Arch { Amd64, Aarch64 };

std::string_view to_string(Arch arch);
Arch host_arch();

// Abstract register roles; every role resolves to exactly one concrete
// register per architecture.
enum class Role {
  Pc,
  Sp,
  Fp,
  SyscallNr,
  SyscallArg0,
  SyscallArg1,
  SyscallArg2,
  SyscallArg3,
  SyscallArg4,
  SyscallArg5,
  SyscallRet,
};

inline constexpr std::array kAllRoles = {
    Role::Pc,          Role::Sp,          Role::Fp,          Role::SyscallNr,
    Role::SyscallArg0, Role::SyscallArg1, Role::SyscallArg2, Role::SyscallArg3,
    Role::SyscallArg4, Role::SyscallArg5, Role::SyscallRet,
};

std::string_view to_string(Role role);
Role syscall_arg_role(std::size_t index);

struct ArchInfo {
  Arch arch;
  std::string_view name;
  // Concrete register names, in RegisterFile storage order.
  std::span<const std::string_view> registers;
  // Storage indexes of the general-purpose set (gp0, gp1, ...).
  std::span<const std::size_t> general_purpose;
  // Storage index per Role, indexed by static_cast<size_t>(role).
  std::span<const std::size_t> roles;
  // Software-breakpoint trap instruction bytes.
  std::span<const std::uint8_t> trap_instruction;
  // Distance the hardware leaves pc past a software trap.
  std::size_t trap_pc_advance;
  std::size_t hw_slot_capacity;
  // Syscall used in place of a faulted one; it has no side effects.
  std::uint64_t harmless_syscall;
  // Fixed instruction width, or 0 for variable-length encodings.
  std::size_t fixed_instruction_width;
};

const ArchInfo& arch_info(Arch arch);

inline constexpr std::size_t kMaxRegisters = 35;

// Architecture-tagged snapshot of the integer register file. Floating-point
// and vector state are not modelled.
class RegisterFile {
 public:
  explicit RegisterFile(Arch arch = host_arch());

  Arch arch() const noexcept { return arch_; }
  const ArchInfo& info() const { return arch_info(arch_); }
  std::size_t size() const;

  std::uint64_t get(Role role) const;
  void set(Role role, std::uint64_t value);

  // Lookup by concrete register name ("rax", "x8", ...) or "gpN".
  std::uint64_t get(std::string_view name) const;
  void set(std::string_view name, std::uint64_t value);
  std::optional<std::size_t> index_of(std::string_view name) const;

  std::uint64_t at(std::size_t index) const;
  void set_at(std::size_t index, std::uint64_t value);

  std::uint64_t gp(std::size_t n) const;
  void set_gp(std::size_t n, std::uint64_t value);

  Address pc() const { return get(Role::Pc); }
  Address sp() const { return get(Role::Sp); }
  Address fp() const { return get(Role::Fp); }

  std::span<std::uint64_t> raw() { return {values_.data(), size()}; }
  std::span<const std::uint64_t> raw() const { return {values_.data(), size()}; }

  friend bool operator==(const RegisterFile& a, const RegisterFile& b);

 private:
  Arch arch_;
  std::array<std::uint64_t, kMaxRegisters> values_{};
};

// Kernel convention: raw return values in [-4095, -1] encode -errno.
std::optional<int> syscall_errno(std::int64_t ret);

}  // namespace scriptdbg
