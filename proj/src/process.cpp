#include <scriptdbg/events.hpp>
#include <scriptdbg/error.hpp>
#include <scriptdbg/process.hpp>

#include <csignal>
#include <cstring>

namespace scriptdbg {

std::string describe(const StopReason& reason) {
  return std::visit(
      [](const auto& r) -> std::string {
        using T = std::decay_t<decltype(r)>;
        if constexpr (std::is_same_v<T, stop::Initial>) {
          return "INITIAL";
        } else if constexpr (std::is_same_v<T, stop::Breakpoint>) {
          return "BREAKPOINT(" + std::to_string(r.id) + ")";
        } else if constexpr (std::is_same_v<T, stop::Watchpoint>) {
          return "WATCHPOINT(" + std::to_string(r.id) + ")";
        } else if constexpr (std::is_same_v<T, stop::SyscallEnter>) {
          return "SYSCALL_ENTER(" + std::to_string(r.nr) + ")";
        } else if constexpr (std::is_same_v<T, stop::SyscallExit>) {
          return "SYSCALL_EXIT(" + std::to_string(r.nr) + ", " + std::to_string(r.ret) + ")";
        } else if constexpr (std::is_same_v<T, stop::Signal>) {
          const char* abbrev = sigabbrev_np(r.signo);
          return std::string("SIGNAL(") + (abbrev ? std::string("SIG") + abbrev : std::to_string(r.signo)) + ")";
        } else if constexpr (std::is_same_v<T, stop::Step>) {
          return "STEP";
        } else if constexpr (std::is_same_v<T, stop::Exited>) {
          if (r.signal) return "EXITED(signal " + std::to_string(*r.signal) + ")";
          return "EXITED(" + std::to_string(r.code) + ")";
        } else {
          return "THREAD_CREATED(" + std::to_string(r.tid) + ")";
        }
      },
      reason);
}

namespace {

void check_overridable(int signo) {
  if (signo == SIGKILL || signo == SIGSTOP) {
    Error::raise(ErrorCode::PolicyError, "SIGKILL and SIGSTOP cannot be intercepted");
  }
  if (signo <= 0 || signo >= NSIG) {
    Error::raise(ErrorCode::PolicyError, "invalid signal number " + std::to_string(signo));
  }
}

}  // namespace

SignalPolicy& SignalPolicy::pass(int signo) {
  check_overridable(signo);
  rules_[signo] = SignalRule{SignalAction::Pass, {}, SignalAction::Pass};
  return *this;
}

SignalPolicy& SignalPolicy::suppress(int signo) {
  check_overridable(signo);
  rules_[signo] = SignalRule{SignalAction::Suppress, {}, SignalAction::Suppress};
  return *this;
}

SignalPolicy& SignalPolicy::callback(int signo, SignalHandler handler, SignalAction then) {
  check_overridable(signo);
  if (!handler) Error::raise(ErrorCode::PolicyError, "callback rule without a handler");
  if (then == SignalAction::Callback) {
    Error::raise(ErrorCode::PolicyError, "a callback rule must end in PASS or SUPPRESS");
  }
  rules_[signo] = SignalRule{SignalAction::Callback, std::move(handler), then};
  return *this;
}

const SignalRule* SignalPolicy::find(int signo) const {
  auto it = rules_.find(signo);
  return it == rules_.end() ? nullptr : &it->second;
}

}  // namespace scriptdbg
