#include <scriptdbg/arch.hpp>
#include <scriptdbg/error.hpp>

#include <algorithm>
#include <charconv>
#include <string>

namespace scriptdbg {

namespace {

// Same order as struct user_regs_struct on x86-64.
constexpr std::array<std::string_view, 27> kAmd64Registers = {
    "r15", "r14", "r13", "r12", "rbp", "rbx", "r11", "r10", "r9",
    "r8",  "rax", "rcx", "rdx", "rsi", "rdi", "orig_rax", "rip", "cs",
    "eflags", "rsp", "ss", "fs_base", "gs_base", "ds", "es", "fs", "gs",
};

enum Amd64Index : std::size_t {
  kR15, kR14, kR13, kR12, kRbp, kRbx, kR11, kR10, kR9, kR8, kRax, kRcx, kRdx,
  kRsi, kRdi, kOrigRax, kRip, kCs, kEflags, kRsp, kSs, kFsBase, kGsBase, kDs,
  kEs, kFs, kGs,
};

constexpr std::array<std::size_t, 16> kAmd64Gp = {
    kRax, kRbx, kRcx, kRdx, kRsi, kRdi, kRbp, kRsp,
    kR8,  kR9,  kR10, kR11, kR12, kR13, kR14, kR15,
};

// The syscall number lives in orig_rax at a syscall stop; rax already holds
// -ENOSYS on entry and the result on exit.
constexpr std::array<std::size_t, 11> kAmd64Roles = {
    kRip, kRsp, kRbp, kOrigRax, kRdi, kRsi, kRdx, kR10, kR8, kR9, kRax,
};

constexpr std::array<std::uint8_t, 1> kAmd64Trap = {0xCC};

// user_pt_regs followed by the NT_ARM_SYSTEM_CALL pseudo register.
constexpr std::array<std::string_view, 35> kAarch64Registers = {
    "x0",  "x1",  "x2",  "x3",  "x4",  "x5",  "x6",  "x7",  "x8",
    "x9",  "x10", "x11", "x12", "x13", "x14", "x15", "x16", "x17",
    "x18", "x19", "x20", "x21", "x22", "x23", "x24", "x25", "x26",
    "x27", "x28", "x29", "x30", "sp",  "pc",  "pstate", "syscallno",
};

constexpr std::array<std::size_t, 31> kAarch64Gp = {
    0,  1,  2,  3,  4,  5,  6,  7,  8,  9,  10, 11, 12, 13, 14, 15,
    16, 17, 18, 19, 20, 21, 22, 23, 24, 25, 26, 27, 28, 29, 30,
};

// x0 carries both the first argument (entry) and the result (exit).
constexpr std::array<std::size_t, 11> kAarch64Roles = {
    32, 31, 29, 34, 0, 1, 2, 3, 4, 5, 0,
};

// brk #0
constexpr std::array<std::uint8_t, 4> kAarch64Trap = {0x00, 0x00, 0x20, 0xD4};

const ArchInfo kAmd64Info{
    Arch::Amd64, "amd64", kAmd64Registers, kAmd64Gp, kAmd64Roles, kAmd64Trap,
    /*trap_pc_advance=*/1, /*hw_slot_capacity=*/4, /*harmless_syscall=*/39,
    /*fixed_instruction_width=*/0,
};

const ArchInfo kAarch64Info{
    Arch::Aarch64, "aarch64", kAarch64Registers, kAarch64Gp, kAarch64Roles, kAarch64Trap,
    /*trap_pc_advance=*/0, /*hw_slot_capacity=*/4, /*harmless_syscall=*/172,
    /*fixed_instruction_width=*/4,
};

}  // namespace

std::string_view to_string(Arch arch) { return arch_info(arch).name; }

Arch host_arch() {
#if defined(__x86_64__)
  return Arch::Amd64;
#elif defined(__aarch64__)
  return Arch::Aarch64;
#else
#error "unsupported host architecture"
#endif
}

std::string_view to_string(Role role) {
  switch (role) {
    case Role::Pc: return "pc";
    case Role::Sp: return "sp";
    case Role::Fp: return "fp";
    case Role::SyscallNr: return "syscall_nr";
    case Role::SyscallArg0: return "syscall_arg0";
    case Role::SyscallArg1: return "syscall_arg1";
    case Role::SyscallArg2: return "syscall_arg2";
    case Role::SyscallArg3: return "syscall_arg3";
    case Role::SyscallArg4: return "syscall_arg4";
    case Role::SyscallArg5: return "syscall_arg5";
    case Role::SyscallRet: return "syscall_ret";
  }
  return "?";
}

Role syscall_arg_role(std::size_t index) {
  if (index > 5) Error::raise(ErrorCode::InvalidContext, "syscall argument index out of range");
  return static_cast<Role>(static_cast<std::size_t>(Role::SyscallArg0) + index);
}

const ArchInfo& arch_info(Arch arch) {
  return arch == Arch::Amd64 ? kAmd64Info : kAarch64Info;
}

RegisterFile::RegisterFile(Arch arch) : arch_(arch) {}

std::size_t RegisterFile::size() const { return info().registers.size(); }

std::uint64_t RegisterFile::get(Role role) const {
  return values_[info().roles[static_cast<std::size_t>(role)]];
}

void RegisterFile::set(Role role, std::uint64_t value) {
  values_[info().roles[static_cast<std::size_t>(role)]] = value;
}

std::optional<std::size_t> RegisterFile::index_of(std::string_view name) const {
  const auto& ai = info();
  if (name.starts_with("gp")) {
    std::size_t n = 0;
    auto rest = name.substr(2);
    auto [ptr, ec] = std::from_chars(rest.data(), rest.data() + rest.size(), n);
    if (ec == std::errc{} && ptr == rest.data() + rest.size() && n < ai.general_purpose.size()) {
      return ai.general_purpose[n];
    }
    return std::nullopt;
  }
  for (std::size_t i = 0; i < ai.registers.size(); ++i) {
    if (ai.registers[i] == name) return i;
  }
  return std::nullopt;
}

std::uint64_t RegisterFile::get(std::string_view name) const {
  auto idx = index_of(name);
  if (!idx) Error::raise(ErrorCode::InvalidContext, "unknown register '" + std::string(name) + "'");
  return values_[*idx];
}

void RegisterFile::set(std::string_view name, std::uint64_t value) {
  auto idx = index_of(name);
  if (!idx) Error::raise(ErrorCode::InvalidContext, "unknown register '" + std::string(name) + "'");
  values_[*idx] = value;
}

std::uint64_t RegisterFile::at(std::size_t index) const {
  if (index >= size()) Error::raise(ErrorCode::InvalidContext, "register index out of range");
  return values_[index];
}

void RegisterFile::set_at(std::size_t index, std::uint64_t value) {
  if (index >= size()) Error::raise(ErrorCode::InvalidContext, "register index out of range");
  values_[index] = value;
}

std::uint64_t RegisterFile::gp(std::size_t n) const {
  const auto& gps = info().general_purpose;
  if (n >= gps.size()) Error::raise(ErrorCode::InvalidContext, "no such general-purpose register");
  return values_[gps[n]];
}

void RegisterFile::set_gp(std::size_t n, std::uint64_t value) {
  const auto& gps = info().general_purpose;
  if (n >= gps.size()) Error::raise(ErrorCode::InvalidContext, "no such general-purpose register");
  values_[gps[n]] = value;
}

bool operator==(const RegisterFile& a, const RegisterFile& b) {
  if (a.arch_ != b.arch_) return false;
  auto ra = a.raw();
  auto rb = b.raw();
  return std::equal(ra.begin(), ra.end(), rb.begin());
}

std::optional<int> syscall_errno(std::int64_t ret) {
  if (ret >= -4095 && ret <= -1) return static_cast<int>(-ret);
  return std::nullopt;
}

}  // namespace scriptdbg
