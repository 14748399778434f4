#pragma once

#include <scriptdbg/arch.hpp>

#include <cstdint>
#include <optional>
#include <string>
#include <variant>

namespace scriptdbg {

using TrapId = std::uint64_t;

namespace stop {
// Initial stop after spawn/attach, before any event was delivered.
struct Initial {};
struct Breakpoint {
  TrapId id = 0;
};
struct Watchpoint {
  TrapId id = 0;
};
struct SyscallEnter {
  std::uint64_t nr = 0;
};
struct SyscallExit {
  std::uint64_t nr = 0;
  std::int64_t ret = 0;
};
struct Signal {
  int signo = 0;
};
struct Step {};
struct Exited {
  int code = 0;
  // Set when the process was terminated by a signal instead of exiting.
  std::optional<int> signal;
};
struct ThreadCreated {
  Tid tid = 0;
};
}  // namespace stop

using StopReason = std::variant<stop::Initial, stop::Breakpoint, stop::Watchpoint,
                                stop::SyscallEnter, stop::SyscallExit, stop::Signal, stop::Step,
                                stop::Exited, stop::ThreadCreated>;

std::string describe(const StopReason& reason);

struct ThreadContext {
  Tid tid = 0;
  StopReason stop_reason = stop::Initial{};
  // Valid only while the tracee is stopped.
  RegisterFile regs;
  // Toggles false -> true on syscall entry and back on exit.
  bool in_syscall = false;
};

}  // namespace scriptdbg
