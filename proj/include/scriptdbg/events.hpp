#pragma once

#include <scriptdbg/breakpoints.hpp>
#include <scriptdbg/process.hpp>

#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <variant>
#include <vector>

namespace scriptdbg {

enum class SyscallDirection { Enter, Exit };

struct SyscallRecord {
  Tid tid = 0;
  std::uint64_t nr = 0;
  std::string name;
  std::array<std::uint64_t, 6> args{};
  std::optional<std::int64_t> ret;  // EXIT only
  SyscallDirection direction = SyscallDirection::Enter;
  std::uint64_t seq = 0;
  bool injected = false;
  bool hijacked = false;
};

using SyscallHandler = std::function<Directive(Debugger&, SyscallRecord&)>;
using SubscriptionId = std::uint64_t;
using RuleId = std::uint64_t;

// ALL, or a set of syscall names resolved against the tracee's arch.
struct SyscallSelector {
  bool all = true;
  std::vector<std::string> names;

  static SyscallSelector any() { return {}; }
  static SyscallSelector of(std::vector<std::string> names) { return {false, std::move(names)}; }
};

enum class SignalAction { Pass, Suppress, Callback };

using SignalHandler = std::function<Directive(Debugger&, const ThreadContext&)>;

struct SignalRule {
  SignalAction action = SignalAction::Pass;
  SignalHandler handler;
  // What happens to the signal after a Callback rule ran.
  SignalAction then = SignalAction::Pass;
};

// Per-signal action table. Signals without a rule are passed through.
class SignalPolicy {
 public:
  SignalPolicy& pass(int signo);
  SignalPolicy& suppress(int signo);
  SignalPolicy& callback(int signo, SignalHandler handler,
                         SignalAction then = SignalAction::Pass);

  const SignalRule* find(int signo) const;
  const std::map<int, SignalRule>& rules() const { return rules_; }

 private:
  std::map<int, SignalRule> rules_;
};

struct DebugEvent {
  Tid tid = 0;
  StopReason reason;
  std::uint64_t seq = 0;
  std::uint64_t timestamp_ns = 0;  // steady clock
};

struct FaultRule {
  std::variant<std::string, std::uint64_t> syscall;
  std::function<bool(const std::array<std::uint64_t, 6>&)> predicate;
  // 1-based occurrence to fault; nullopt faults every match.
  std::optional<std::uint64_t> nth = 1;
  int errno_value = 0;
};

struct RunResult {
  enum class Kind { Exited, Killed, Stopped };
  Kind kind = Kind::Exited;
  std::optional<int> exit_code;
  std::optional<int> signal;
};

}  // namespace scriptdbg
