#pragma once

#include <scriptdbg/backend.hpp>
#include <scriptdbg/process.hpp>

#include <functional>
#include <optional>
#include <string>
#include <variant>

namespace scriptdbg {

class Debugger;

enum class Directive { Continue, Stop };

enum class BreakpointKind { Software, Hardware };
enum class WatchTrigger { Write, ReadWrite };

struct Breakpoint;
struct Watchpoint;

using BreakpointCallback =
    std::function<Directive(Debugger&, const ThreadContext&, const Breakpoint&)>;
using WatchpointCallback =
    std::function<Directive(Debugger&, const ThreadContext&, const Watchpoint&)>;

struct Breakpoint {
  TrapId id = 0;
  Address address = 0;
  BreakpointKind kind = BreakpointKind::Software;
  bool enabled = true;
  bool one_shot = false;
  std::uint64_t hit_count = 0;
  // Original instruction bytes under the patch; empty while disabled.
  Bytes saved_bytes;
  std::optional<std::size_t> slot;  // hardware only
  BreakpointCallback callback;
};

struct Watchpoint {
  TrapId id = 0;
  Address address = 0;
  std::size_t length = 1;
  WatchTrigger trigger = WatchTrigger::Write;
  std::size_t slot = 0;
  bool enabled = true;
  std::uint64_t hit_count = 0;
  WatchpointCallback callback;
};

// A symbol, optionally restricted to one loaded object, plus a byte offset.
struct SymbolSpec {
  std::string name;
  std::optional<std::string> object;
  std::uint64_t offset = 0;
};

using Location = std::variant<Address, SymbolSpec>;

}  // namespace scriptdbg
