#include "properties.hpp"

#include "support.hpp"

#include <scriptdbg/elf.hpp>
#include <scriptdbg/error.hpp>

#include <random>
#include <sstream>

using namespace scriptdbg;

namespace testsupport {

namespace {

PropertyResult fail(PropertyResult r, const std::string& why) {
  r.ok = false;
  if (r.detail.empty()) r.detail = why;
  return r;
}

bool terminal(TraceeState s) {
  return s == TraceeState::Exited || s == TraceeState::Killed || s == TraceeState::Detached;
}

// CREATED -> STOPPED -> (RUNNING <-> STOPPED)* -> EXITED | KILLED, plus
// STOPPED -> DETACHED for detach().
bool edge_allowed(TraceeState from, TraceeState to) {
  if (from == to) return true;
  switch (from) {
    case TraceeState::Created:
      return to == TraceeState::Stopped;
    case TraceeState::Stopped:
      return to == TraceeState::Running || to == TraceeState::Exited ||
             to == TraceeState::Killed || to == TraceeState::Detached;
    case TraceeState::Running:
      return to == TraceeState::Stopped || to == TraceeState::Exited ||
             to == TraceeState::Killed;
    default:
      return false;
  }
}

enum class Op { Resume, Wait, Cont, Step, Kill, Detach, Registers, Read, Breakpoint, RunToExit };
constexpr const char* kOpNames[] = {"resume",    "wait", "cont",       "step",
                                    "kill",      "detach", "registers", "read_memory",
                                    "breakpoint", "run_until_exit"};

bool precondition(Op op, TraceeState s) {
  switch (op) {
    case Op::Wait:
      return s == TraceeState::Running;
    case Op::Kill:
      return s == TraceeState::Stopped || s == TraceeState::Running;
    case Op::RunToExit:
      return s == TraceeState::Stopped || s == TraceeState::Running;
    default:
      return s == TraceeState::Stopped;
  }
}

}  // namespace

PropertyResult elf_fuzz(std::uint64_t seed, std::size_t cases) {
  PropertyResult r;
  std::vector<std::vector<std::uint8_t>> seeds;
  for (const char* name : {"loop", "faults", "libshadow.so", "firstwrite"}) {
    seeds.push_back(read_file(fixture(name)));
  }
  std::mt19937_64 rng(seed);
  std::size_t rejected = 0;
  for (std::size_t i = 0; i < cases; ++i) {
    auto bytes = seeds[rng() % seeds.size()];
    switch (rng() % 3) {
      case 0:
        bytes.resize(rng() % bytes.size());
        break;
      case 1: {
        // Headers and tables sit at the start and the end of the file.
        int flips = 1 + static_cast<int>(rng() % 16);
        for (int k = 0; k < flips; ++k) {
          std::size_t at = rng() % 2 ? rng() % std::min<std::size_t>(bytes.size(), 4096)
                                     : bytes.size() - 1 - rng() % std::min<std::size_t>(bytes.size(), 8192);
          bytes[at] = static_cast<std::uint8_t>(rng());
        }
        break;
      }
      default: {
        std::size_t at = rng() % 64;
        for (int k = 0; k < 8; ++k) bytes[at + k] = 0xff;
        bytes.resize(bytes.size() - rng() % 512);
      }
    }
    try {
      auto img = ElfImage::parse(bytes);
      for (const auto& s : img.symbols()) {
        if (s.name.empty()) return fail(r, "case " + std::to_string(i) + ": unnamed symbol");
      }
    } catch (const Error& e) {
      if (e.code() != ErrorCode::ElfParseError && e.code() != ErrorCode::UnsupportedTarget) {
        return fail(r, "case " + std::to_string(i) + ": unexpected " +
                           std::string(to_string(e.code())));
      }
      ++rejected;
    }
    ++r.cases;
  }
  // A fuzzer that never trips the parser is not exercising it.
  if (rejected == 0) return fail(r, "no input was rejected");
  return r;
}

PropertyResult lifecycle_sequences(std::uint64_t seed, std::size_t sequences,
                                   std::size_t max_ops) {
  PropertyResult r;
  std::mt19937_64 rng(seed);
  for (std::size_t seq = 0; seq < sequences; ++seq) {
    std::ostringstream trail;
    auto dbg = spawn("loop", {"30"});
    if (dbg->state() != TraceeState::Stopped) {
      return fail(r, "spawn left the tracee " + std::string(to_string(dbg->state())));
    }
    std::optional<TrapId> bp;
    std::size_t ops = 1 + rng() % max_ops;
    for (std::size_t i = 0; i < ops; ++i) {
      // Detach and kill end a sequence early, so draw them less often.
      std::uint64_t draw = rng() % 100;
      Op op = draw < 2   ? Op::Detach
              : draw < 5 ? Op::Kill
              : draw < 8 ? Op::RunToExit
                         : static_cast<Op>(std::array{0, 1, 2, 3, 6, 7, 8}[rng() % 7]);
      trail << kOpNames[static_cast<int>(op)] << ' ';
      TraceeState before = dbg->state();
      bool legal = precondition(op, before);
      std::optional<ErrorCode> raised;
      try {
        switch (op) {
          case Op::Resume: dbg->resume(); break;
          case Op::Wait: dbg->wait(); break;
          case Op::Cont: dbg->cont(); break;
          case Op::Step: {
            auto tids = dbg->threads();
            dbg->step(tids.empty() ? dbg->pid() : tids.front());
            break;
          }
          case Op::Kill: dbg->kill(); break;
          case Op::Detach: dbg->detach(); break;
          case Op::Registers: {
            auto tids = dbg->threads();
            dbg->registers(tids.empty() ? dbg->pid() : tids.front());
            break;
          }
          case Op::Read: {
            auto tids = dbg->threads();
            if (tids.empty()) {
              dbg->read_memory(0x1000, 8);
            } else {
              dbg->read_memory(dbg->registers(tids.front()).get(Role::Pc), 8);
            }
            break;
          }
          case Op::Breakpoint:
            if (bp) {
              dbg->clear(*bp);
              bp.reset();
            } else {
              bp = dbg->set_breakpoint(SymbolSpec{"f"}).id;
            }
            break;
          case Op::RunToExit: dbg->run_until_exit(); break;
        }
      } catch (const Error& e) {
        raised = e.code();
      }
      TraceeState after = dbg->state();
      std::string where = "sequence " + std::to_string(seq) + " [" + trail.str() + "]: ";
      if (legal && raised) {
        return fail(r, where + "legal op raised " + std::string(to_string(*raised)) + " in " +
                           std::string(to_string(before)));
      }
      if (!legal) {
        // A thread-addressed op on a finished tracee names a tid that no
        // longer exists; unknown tids are NoSuchThread everywhere.
        bool by_tid = op == Op::Step || op == Op::Registers;
        ErrorCode expected = by_tid && terminal(before) ? ErrorCode::NoSuchThread
                                                        : ErrorCode::InvalidState;
        if (raised != expected) {
          return fail(r, where + "illegal op in " + std::string(to_string(before)) +
                             " did not raise " +
                             std::string(to_string(expected)));
        }
        if (after != before) return fail(r, where + "rejected op changed state");
      }
      if (!edge_allowed(before, after)) {
        return fail(r, where + std::string(to_string(before)) + " -> " +
                           std::string(to_string(after)));
      }
      ++r.cases;
    }
    if (!terminal(dbg->state())) {
      if (dbg->state() == TraceeState::Running) dbg->wait();
      if (!terminal(dbg->state())) dbg->kill();
    }
  }
  return r;
}

PropertyResult state_roundtrips(std::uint64_t seed, std::size_t cases) {
  PropertyResult r;
  std::mt19937_64 rng(seed);
  auto dbg = spawn("loop", {"1"});
  Tid tid = dbg->threads().front();
  std::vector<MemoryMap> writable;
  for (const auto& m : dbg->maps()) {
    if (m.readable && m.writable) writable.push_back(m);
  }
  if (writable.empty()) return fail(r, "no writable mapping");
  std::size_t gp_count = arch_info(dbg->arch()).general_purpose.size();
  for (std::size_t i = 0; i < cases; ++i) {
    std::string where = "case " + std::to_string(i) + ": ";
    if (rng() % 2) {
      const auto& m = writable[rng() % writable.size()];
      std::size_t len = 1 + rng() % std::min<std::uint64_t>(4096, m.size());
      Address at = m.start + rng() % (m.size() - len + 1);
      Bytes data(len);
      for (auto& b : data) b = static_cast<std::uint8_t>(rng());
      dbg->write_memory(at, data);
      if (dbg->read_memory(at, len) != data) {
        return fail(r, where + "memory mismatch at " + std::to_string(at) + " len " +
                           std::to_string(len));
      }
    } else {
      RegisterFile regs = dbg->registers(tid);
      std::size_t n = rng() % gp_count;
      std::uint64_t value = rng();
      regs.set_gp(n, value);
      dbg->set_registers(tid, regs);
      RegisterFile back = dbg->registers(tid);
      if (back.gp(n) != value || !(back == regs)) {
        return fail(r, where + "register gp" + std::to_string(n) + " did not round-trip");
      }
    }
    ++r.cases;
  }
  dbg->kill();
  return r;
}

}  // namespace testsupport
