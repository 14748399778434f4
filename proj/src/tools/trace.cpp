#include "common.hpp"

#include <scriptdbg/syscalls.hpp>

namespace scriptdbg::tools {

std::string format_trace_line(const SyscallRecord& r) {
  std::string line = std::to_string(r.tid) + " " + r.name + "(";
  for (std::size_t i = 0; i < r.args.size(); ++i) {
    if (i) line += ", ";
    line += hex(r.args[i]);
  }
  std::int64_t ret = r.ret.value_or(0);
  line += ") = ";
  line += ret < 0 ? "-" + hex(static_cast<std::uint64_t>(-ret)) : hex(static_cast<std::uint64_t>(ret));
  return line;
}

int cmd_trace(const TraceOptions& options, std::ostream& log) {
  // Unknown names fail here, before anything is spawned.
  SyscallSelector selector = SyscallSelector::any();
  if (!options.filter.empty()) {
    const auto& table = SyscallTable::builtin();
    Arch arch = probe_arch(options.target.binary).value_or(host_arch());
    for (const auto& name : options.filter) {
      if (!table.number(arch, name)) {
        Error::raise(ErrorCode::UnknownSyscall, "unknown syscall '" + name + "'");
      }
    }
    selector = SyscallSelector::of(options.filter);
  }

  Watchdog dog(options.target.timeout);
  auto dbg = launch(options.target, StdioMode::Inherit);
  dog.watch(dbg->pid());
  dbg->trace_syscalls(selector, {}, [&](Debugger&, SyscallRecord& r) {
    log << format_trace_line(r) << '\n';
    return Directive::Continue;
  });
  RunResult result = dbg->run_until_exit();
  log.flush();
  check_timeout(dog);
  if (result.kind == RunResult::Kind::Killed) return 128 + result.signal.value_or(0);
  return result.exit_code.value_or(0);
}

}  // namespace scriptdbg::tools
