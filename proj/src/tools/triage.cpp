#include "common.hpp"

#include <scriptdbg/cyclic.hpp>

#include <json.hpp>

#include <signal.h>
#include <string.h>

#include <thread>

namespace scriptdbg::tools {

namespace {

struct Crash {
  int signal = 0;
  RegisterFile regs;
  std::vector<StackFrame> frames;
  std::optional<std::uint64_t> stack_word;  // [sp] at the fault
  bool at_return = false;                   // pc sits on a return instruction
};

constexpr int kFatalSignals[] = {SIGSEGV, SIGBUS, SIGILL, SIGFPE, SIGABRT, SIGTRAP};

bool is_return_instruction(Debugger& dbg, Address pc) {
  try {
    if (dbg.arch() == Arch::Amd64) {
      auto b = dbg.read_memory(pc, 1);
      return b[0] == 0xC3;
    }
    auto b = dbg.read_memory(pc, 4);
    std::uint32_t insn = b[0] | b[1] << 8 | b[2] << 16 | static_cast<std::uint32_t>(b[3]) << 24;
    return (insn & 0xFFFFFC1Fu) == 0xD65F0000u;  // ret {xN}
  } catch (const Error&) {
    return false;
  }
}

// Runs the target on `input` and captures the first fatal signal.
std::optional<Crash> run_once(const RunTarget& target, const Bytes& input) {
  Watchdog dog(target.timeout);
  auto dbg = launch(target, StdioMode::Pipe);
  dog.watch(dbg->pid());
  std::optional<Crash> crash;
  SignalPolicy policy;
  for (int sig : kFatalSignals) {
    policy.callback(
        sig,
        [&crash](Debugger& d, const ThreadContext& ctx) {
          Crash c;
          c.signal = std::get<stop::Signal>(ctx.stop_reason).signo;
          c.regs = ctx.regs;
          c.frames = d.backtrace(ctx.tid);
          try {
            c.stack_word = d.read_u64(ctx.regs.sp());
          } catch (const Error&) {
          }
          c.at_return = is_return_instruction(d, ctx.regs.pc());
          crash = std::move(c);
          return Directive::Stop;
        },
        SignalAction::Suppress);
  }
  dbg->set_signal_policy(std::move(policy));

  // The feeder runs beside the loop so large inputs cannot fill the pipe
  // while nobody is reading.
  dbg->resume();
  std::thread feeder([&] {
    try {
      dbg->stdin_write(std::span<const std::uint8_t>(input));
      dbg->stdin_close();
    } catch (const Error&) {
      // The target stopped reading; what it consumed is what counts.
    }
  });
  RunResult result;
  try {
    result = dbg->run_until_exit();
  } catch (...) {
    feeder.join();
    throw;
  }
  if (result.kind == RunResult::Kind::Stopped) dbg->kill();
  feeder.join();
  check_timeout(dog);
  return crash;
}

std::optional<std::size_t> locate(std::uint64_t value, std::size_t max_len) {
  std::uint8_t window[kTriageWindow];
  for (std::size_t i = 0; i < kTriageWindow; ++i) window[i] = static_cast<std::uint8_t>(value >> (8 * i));
  try {
    return cyclic_find(window, kTriageWindow, max_len);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::NotInPattern) throw;
    return std::nullopt;
  }
}

}  // namespace

TriageFinding cmd_triage(const TriageOptions& options) {
  Bytes pattern = cyclic(options.max_len, kTriageWindow);
  const Bytes& candidate = options.payload ? *options.payload : pattern;
  auto first = run_once(options.target, candidate);
  if (!first) Error::raise(ErrorCode::NoCrash, "the input did not crash " + options.target.binary);

  TriageFinding f;
  f.signal = first->signal;
  f.registers = first->regs;
  f.stack_trace = first->frames;
  if (first->signal != SIGSEGV) return f;

  auto probe = options.payload ? run_once(options.target, pattern) : first;
  if (!probe || probe->signal != SIGSEGV) return f;
  f.offset_to_fp = locate(probe->regs.fp(), options.max_len);
  f.offset_to_pc = locate(probe->regs.pc(), options.max_len);
  // A return to a non-canonical address faults on the return itself; the
  // pattern is then still waiting at [sp].
  if (!f.offset_to_pc && probe->at_return && probe->stack_word) {
    f.offset_to_pc = locate(*probe->stack_word, options.max_len);
  }
  f.fp_controlled = f.offset_to_fp.has_value();
  f.pc_controlled = f.offset_to_pc.has_value();
  return f;
}

std::string TriageFinding::to_json() const {
  using nlohmann::ordered_json;
  ordered_json j;
  const char* abbrev = sigabbrev_np(signal);
  j["signal"] = abbrev ? std::string("SIG") + abbrev : std::to_string(signal);
  j["signo"] = signal;
  ordered_json regs = ordered_json::object();
  const auto& names = registers.info().registers;
  for (std::size_t i = 0; i < names.size(); ++i) regs[std::string(names[i])] = hex(registers.at(i));
  j["registers"] = regs;
  j["clobbered"] = {{"fp", fp_controlled}, {"pc", pc_controlled}};
  j["offset_to_fp"] = offset_to_fp ? ordered_json(*offset_to_fp) : ordered_json(nullptr);
  j["offset_to_pc"] = offset_to_pc ? ordered_json(*offset_to_pc) : ordered_json(nullptr);
  ordered_json frames = ordered_json::array();
  for (const auto& fr : stack_trace) {
    ordered_json o;
    o["return_address"] = hex(fr.return_address);
    o["frame_base"] = hex(fr.frame_base);
    o["symbol"] = fr.symbol ? ordered_json(*fr.symbol) : ordered_json(nullptr);
    o["offset"] = fr.offset;
    frames.push_back(o);
  }
  j["stack_trace"] = frames;
  return j.dump(2);
}

}  // namespace scriptdbg::tools
