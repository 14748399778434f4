#include "wait_demux.hpp"

#include <scriptdbg/backend.hpp>
#include <scriptdbg/elf.hpp>
#include <scriptdbg/error.hpp>

#include <elf.h>
#include <fcntl.h>
#include <signal.h>
#include <sys/personality.h>
#include <sys/ptrace.h>
#include <sys/stat.h>
#include <sys/syscall.h>
#include <sys/uio.h>
#include <sys/user.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cstddef>
#include <cstdlib>
#include <cstring>
#include <deque>
#include <filesystem>
#include <fstream>
#include <set>

extern char** environ;

namespace scriptdbg {

std::string_view to_string(TraceeState state) {
  switch (state) {
    case TraceeState::Created: return "CREATED";
    case TraceeState::Stopped: return "STOPPED";
    case TraceeState::Running: return "RUNNING";
    case TraceeState::Exited: return "EXITED";
    case TraceeState::Killed: return "KILLED";
    case TraceeState::Detached: return "DETACHED";
  }
  return "?";
}

bool TraceeHandle::has_thread(Tid tid) const {
  return std::find(tids.begin(), tids.end(), tid) != tids.end();
}

bool default_disable_aslr() {
  const char* keep = std::getenv("SCRIPTDBG_KEEP_ASLR");
  return !(keep && std::string_view(keep) == "1");
}

void FileDescriptor::reset() noexcept {
  if (fd_ >= 0) ::close(fd_);
  fd_ = -1;
}

namespace {

constexpr long kTraceOptions = PTRACE_O_TRACESYSGOOD | PTRACE_O_TRACECLONE |
                               PTRACE_O_TRACEEXEC | PTRACE_O_EXITKILL;

// Transfers above this size go through process_vm_readv/writev.
constexpr std::size_t kBulkThreshold = 16;

int tgkill(int pid, int tid, int sig) {
  return static_cast<int>(::syscall(SYS_tgkill, pid, tid, sig));
}

struct ThreadState {
  bool running = false;
  bool stepping = false;
  // A SIGSTOP we sent is still queued and must be swallowed when it arrives.
  bool sigstop_expected = false;
  int deferred_signal = 0;
  long last_request = PTRACE_CONT;
  std::deque<RawStopNotice> pending;
};

class PtraceBackend final : public Backend {
 public:
  PtraceBackend(int pid, Arch arch, bool aslr_disabled, bool owns_process)
      : owns_process_(owns_process) {
    h_.pid = pid;
    h_.arch = arch;
    h_.aslr_disabled = aslr_disabled;
    slots_.resize(hw_slot_capacity());
  }

  ~PtraceBackend() override {
    try {
      switch (h_.state) {
        case TraceeState::Stopped:
          if (owns_process_) {
            kill();
          } else {
            detach();
          }
          break;
        case TraceeState::Running:
          if (owns_process_) {
            kill();
          } else {
            halt();
            detach();
          }
          break;
        default:
          break;
      }
    } catch (...) {
    }
  }

  void add_thread(Tid tid, bool running) {
    h_.tids.push_back(tid);
    threads_[tid].running = running;
  }

  void set_state(TraceeState s) { h_.state = s; }
  void set_last(Tid tid) { last_tid_ = tid; }
  void set_stdio(StdioChannels s) { stdio_ = std::move(s); }
  void defer_signal(Tid tid, int sig) { threads_[tid].deferred_signal = sig; }

  const TraceeHandle& handle() const override { return h_; }
  StdioChannels take_stdio() override { return std::move(stdio_); }

  void detach() override {
    require_stopped("detach");
    for (std::size_t i = 0; i < slots_.size(); ++i) {
      if (slots_[i]) set_hw_slot(i, std::nullopt);
    }
    bool queued_stops = std::any_of(threads_.begin(), threads_.end(),
                                    [](const auto& kv) { return kv.second.sigstop_expected; });
    // SIGCONT discards queued stop signals, so the tracee does not enter a
    // group-stop right after we let go of it.
    if (queued_stops) ::kill(h_.pid, SIGCONT);
    for (auto& [tid, ts] : threads_) {
      int sig = ts.deferred_signal;
      for (const auto& n : ts.pending) {
        if (const auto* s = std::get_if<cause::Signal>(&n.cause)) {
          if (s->signo == SIGTRAP && s->code == SI_KERNEL) {
            rewind_cancelled_trap(tid);
          } else if (s->signo != SIGSTOP && s->signo != SIGTRAP) {
            sig = s->signo;
          }
        }
      }
      ::ptrace(PTRACE_DETACH, tid, nullptr, reinterpret_cast<void*>(static_cast<long>(sig)));
    }
    threads_.clear();
    h_.tids.clear();
    h_.state = TraceeState::Detached;
  }

  void kill() override {
    if (h_.state == TraceeState::Exited || h_.state == TraceeState::Killed ||
        h_.state == TraceeState::Detached) {
      Error::raise(ErrorCode::InvalidState,
                   std::string("kill: tracee is ") + std::string(to_string(h_.state)));
    }
    ::kill(h_.pid, SIGKILL);
    auto& demux = detail::WaitDemux::instance();
    std::vector<Tid> others;
    for (const auto& [tid, ts] : threads_) {
      if (tid != h_.pid) others.push_back(tid);
    }
    for (Tid tid : others) {
      for (;;) {
        int st = 0;
        try {
          st = demux.wait_for(tid);
        } catch (const Error&) {
          break;
        }
        if (WIFEXITED(st) || WIFSIGNALED(st)) break;
      }
    }
    int leader_status = 0;
    for (;;) {
      try {
        leader_status = demux.wait_for(h_.pid);
      } catch (const Error&) {
        break;
      }
      if (WIFEXITED(leader_status) || WIFSIGNALED(leader_status)) break;
    }
    threads_.clear();
    h_.tids.clear();
    if (WIFEXITED(leader_status)) {
      h_.state = TraceeState::Exited;
      h_.exit_code = WEXITSTATUS(leader_status);
    } else {
      h_.state = TraceeState::Killed;
      h_.term_signal = SIGKILL;
    }
  }

  RegisterFile read_registers(Tid tid) override {
    check_thread(tid, "read_registers");
    RegisterFile regs(h_.arch);
#if defined(__x86_64__)
    user_regs_struct u{};
    static_assert(sizeof(u) == 27 * sizeof(std::uint64_t));
    if (::ptrace(PTRACE_GETREGS, tid, nullptr, &u) < 0) thread_error("PTRACE_GETREGS", tid);
    std::memcpy(regs.raw().data(), &u, sizeof(u));
#elif defined(__aarch64__)
    user_pt_regs u{};
    iovec iov{&u, sizeof(u)};
    if (::ptrace(PTRACE_GETREGSET, tid, NT_PRSTATUS, &iov) < 0) thread_error("NT_PRSTATUS", tid);
    std::memcpy(regs.raw().data(), &u, sizeof(u));
    int nr = 0;
    iovec sc{&nr, sizeof(nr)};
    if (::ptrace(PTRACE_GETREGSET, tid, NT_ARM_SYSTEM_CALL, &sc) == 0) {
      regs.set_at(34, static_cast<std::uint64_t>(static_cast<std::int64_t>(nr)));
    }
#endif
    return regs;
  }

  void write_registers(Tid tid, const RegisterFile& regs) override {
    check_thread(tid, "write_registers");
    if (regs.arch() != h_.arch) {
      Error::raise(ErrorCode::UnsupportedTarget, "register file architecture mismatch");
    }
#if defined(__x86_64__)
    user_regs_struct u{};
    std::memcpy(&u, regs.raw().data(), sizeof(u));
    if (::ptrace(PTRACE_SETREGS, tid, nullptr, &u) < 0) thread_error("PTRACE_SETREGS", tid);
#elif defined(__aarch64__)
    user_pt_regs u{};
    std::memcpy(&u, regs.raw().data(), sizeof(u));
    iovec iov{&u, sizeof(u)};
    if (::ptrace(PTRACE_SETREGSET, tid, NT_PRSTATUS, &iov) < 0) thread_error("NT_PRSTATUS", tid);
    int nr = static_cast<int>(regs.at(34));
    iovec sc{&nr, sizeof(nr)};
    ::ptrace(PTRACE_SETREGSET, tid, NT_ARM_SYSTEM_CALL, &sc);
#endif
  }

  Bytes read_memory_raw(Address addr, std::size_t len) override {
    require_stopped("read_memory");
    Bytes out(len);
    if (len == 0) return out;
    check_range(addr, len);
    std::size_t done = 0;
    if (len > kBulkThreshold) {
      while (done < len) {
        iovec local{out.data() + done, len - done};
        iovec remote{reinterpret_cast<void*>(addr + done), len - done};
        auto n = ::process_vm_readv(h_.pid, &local, 1, &remote, 1, 0);
        if (n <= 0) break;
        done += static_cast<std::size_t>(n);
      }
    }
    if (done < len) peek_words(addr + done, std::span(out).subspan(done));
    return out;
  }

  void write_memory_raw(Address addr, std::span<const std::uint8_t> data) override {
    require_stopped("write_memory");
    if (data.empty()) return;
    check_range(addr, data.size());
    std::size_t done = 0;
    if (data.size() > kBulkThreshold) {
      while (done < data.size()) {
        iovec local{const_cast<std::uint8_t*>(data.data()) + done, data.size() - done};
        iovec remote{reinterpret_cast<void*>(addr + done), data.size() - done};
        auto n = ::process_vm_writev(h_.pid, &local, 1, &remote, 1, 0);
        if (n <= 0) break;
        done += static_cast<std::size_t>(n);
      }
    }
    if (done < data.size()) poke_words(addr + done, data.subspan(done));
  }

  void resume(ResumeMode mode, std::optional<int> deliver_signal) override {
    require_stopped("resume");
    long request = mode == ResumeMode::SyscallStop ? PTRACE_SYSCALL : PTRACE_CONT;
    if (deliver_signal) {
      if (auto it = threads_.find(last_tid_); it != threads_.end()) {
        it->second.deferred_signal = *deliver_signal;
      }
    }
    step_tid_.reset();
    h_.state = TraceeState::Running;
    bool any_pending = std::any_of(threads_.begin(), threads_.end(),
                                   [](const auto& kv) { return !kv.second.pending.empty(); });
    for (auto& [tid, ts] : threads_) {
      ts.last_request = request;
      if (any_pending || ts.running) continue;
      restart(tid, ts, request);
    }
  }

  void queue_signal(Tid tid, int signo) override {
    if (auto it = threads_.find(tid); it != threads_.end()) it->second.deferred_signal = signo;
  }

  void single_step(Tid tid) override {
    check_thread(tid, "single_step");
    auto& ts = threads_.at(tid);
    h_.state = TraceeState::Running;
    step_tid_ = tid;
    ts.last_request = PTRACE_SINGLESTEP;
    if (!ts.pending.empty()) return;
    restart(tid, ts, PTRACE_SINGLESTEP);
  }

  RawStopNotice wait_notice() override {
    if (h_.state != TraceeState::Running) {
      Error::raise(ErrorCode::InvalidState,
                   std::string("wait: tracee is ") + std::string(to_string(h_.state)));
    }
    auto eligible = [this](Tid t) { return !step_tid_ || *step_tid_ == t; };
    for (Tid tid : h_.tids) {
      auto& ts = threads_.at(tid);
      if (eligible(tid) && !ts.pending.empty()) {
        auto n = ts.pending.front();
        ts.pending.pop_front();
        return finish(n);
      }
    }

    auto& demux = detail::WaitDemux::instance();
    for (;;) {
      std::vector<Tid> running;
      for (const auto& [tid, ts] : threads_) {
        if (ts.running) running.push_back(tid);
      }
      if (running.empty()) Error::raise(ErrorCode::ProcessLost, "no traced thread is running");
      Tid tid = 0;
      int status = 0;
      if (running.size() == 1) {
        tid = running.front();
        status = demux.wait_for(tid);
      } else {
        std::tie(tid, status) = demux.wait_any([this](int t) {
          auto it = threads_.find(t);
          return it != threads_.end() && it->second.running;
        });
      }

      auto notice = decode(tid, status);
      if (!notice) continue;
      if (is_process_end(*notice)) return finish_exit(*notice);

      auto& ts = threads_.at(tid);
      ts.running = false;
      ts.stepping = false;
      if (const auto* s = std::get_if<cause::Signal>(&notice->cause);
          s && s->signo == SIGSTOP && ts.sigstop_expected) {
        ts.sigstop_expected = false;
        restart(tid, ts, ts.last_request);
        continue;
      }
      if (const auto* c = std::get_if<cause::Clone>(&notice->cause)) adopt_clone(c->new_tid);
      stop_others(tid);
      return finish(*notice);
    }
  }

  std::size_t hw_slot_capacity() const override {
    return arch_info(h_.arch).hw_slot_capacity;
  }

  void set_hw_slot(std::size_t slot, std::optional<HardwareTrap> trap) override {
    if (h_.state != TraceeState::Stopped) {
      Error::raise(ErrorCode::InvalidState, "debug registers can only change while stopped");
    }
    if (slot >= slots_.size()) Error::raise(ErrorCode::NoFreeSlot, "slot index out of range");
    if (trap) validate_trap(*trap);
    slots_[slot] = trap;
    for (const auto& [tid, ts] : threads_) program_slots(tid);
  }

  std::optional<std::size_t> take_hw_hit(Tid tid, const cause::Signal& sig) override {
#if defined(__x86_64__)
    (void)sig;
    constexpr auto dr6_off = offsetof(struct user, u_debugreg) + 6 * sizeof(long);
    errno = 0;
    long dr6 = ::ptrace(PTRACE_PEEKUSER, tid, dr6_off, nullptr);
    if (errno != 0) return std::nullopt;
    ::ptrace(PTRACE_POKEUSER, tid, dr6_off, nullptr);
    for (std::size_t i = 0; i < slots_.size(); ++i) {
      if ((dr6 & (1L << i)) && slots_[i]) return i;
    }
    return std::nullopt;
#else
    for (std::size_t i = 0; i < slots_.size(); ++i) {
      if (!slots_[i]) continue;
      const auto& t = *slots_[i];
      Address lo = t.address & ~Address{7};
      if (sig.address >= lo && sig.address < t.address + std::max<std::size_t>(t.length, 8)) return i;
    }
    (void)tid;
    return std::nullopt;
#endif
  }

  void halt() override {
    if (h_.state != TraceeState::Running) {
      Error::raise(ErrorCode::InvalidState,
                   std::string("halt: tracee is ") + std::string(to_string(h_.state)));
    }
    stop_others(-1);
    step_tid_.reset();
    h_.state = TraceeState::Stopped;
  }

 private:
  static bool is_process_end(const RawStopNotice& n) {
    return std::holds_alternative<cause::Exit>(n.cause) ||
           std::holds_alternative<cause::Killed>(n.cause);
  }

  RawStopNotice finish(const RawStopNotice& n) {
    h_.state = TraceeState::Stopped;
    last_tid_ = n.tid;
    step_tid_.reset();
    return n;
  }

  RawStopNotice finish_exit(const RawStopNotice& n) {
    if (const auto* e = std::get_if<cause::Exit>(&n.cause)) {
      h_.state = TraceeState::Exited;
      h_.exit_code = e->code;
    } else {
      h_.state = TraceeState::Killed;
      h_.term_signal = std::get<cause::Killed>(n.cause).signo;
    }
    for (const auto& [tid, ts] : threads_) detail::WaitDemux::instance().forget(tid);
    threads_.clear();
    h_.tids.clear();
    step_tid_.reset();
    return n;
  }

  void restart(Tid tid, ThreadState& ts, long request) {
    long sig = ts.deferred_signal;
    ts.deferred_signal = 0;
    ts.running = true;
    ts.stepping = request == PTRACE_SINGLESTEP;
    // ESRCH means the thread died under us; its exit is collected by wait.
    ::ptrace(static_cast<__ptrace_request>(request), tid, nullptr, reinterpret_cast<void*>(sig));
  }

  std::optional<RawStopNotice> decode(Tid tid, int status) {
    if (WIFEXITED(status) || WIFSIGNALED(status)) {
      if (tid == h_.pid) {
        if (WIFEXITED(status)) return RawStopNotice{tid, cause::Exit{WEXITSTATUS(status)}};
        return RawStopNotice{tid, cause::Killed{WTERMSIG(status)}};
      }
      remove_thread(tid);
      return std::nullopt;
    }
    int sig = WSTOPSIG(status);
    int event = status >> 16;
    if (sig == (SIGTRAP | 0x80)) return RawStopNotice{tid, cause::SyscallTrap{}};
    if (sig == SIGTRAP && event == PTRACE_EVENT_CLONE) {
      unsigned long msg = 0;
      ::ptrace(PTRACE_GETEVENTMSG, tid, nullptr, &msg);
      return RawStopNotice{tid, cause::Clone{static_cast<Tid>(msg)}};
    }
    if (sig == SIGTRAP && event == PTRACE_EVENT_EXEC) return RawStopNotice{tid, cause::Exec{}};

    cause::Signal s{sig, 0, 0};
    siginfo_t si{};
    if (::ptrace(PTRACE_GETSIGINFO, tid, nullptr, &si) == 0) {
      s.code = si.si_code;
      s.address = reinterpret_cast<std::uint64_t>(si.si_addr);
    }
    const auto& ts = threads_.at(tid);
    if (sig == SIGTRAP && ts.stepping &&
        (s.code == TRAP_TRACE || s.code == TRAP_BRKPT || s.code == TRAP_HWBKPT)) {
      return RawStopNotice{tid, cause::Step{}};
    }
    return RawStopNotice{tid, s};
  }

  void remove_thread(Tid tid) {
    threads_.erase(tid);
    std::erase(h_.tids, tid);
    detail::WaitDemux::instance().forget(tid);
  }

  // Consumes the initial stop of a freshly cloned thread and starts tracking it.
  void adopt_clone(Tid new_tid) {
    if (threads_.count(new_tid)) return;
    int st = detail::WaitDemux::instance().wait_for(new_tid);
    if (!WIFSTOPPED(st)) return;
    add_thread(new_tid, false);
    if (WSTOPSIG(st) != SIGSTOP) threads_[new_tid].deferred_signal = WSTOPSIG(st);
    program_slots(new_tid);
  }

  // All-stop: bring every other running thread to a halt. Events they report
  // on the way are queued and surfaced by later waits.
  void stop_others(Tid except) {
    std::vector<Tid> targets;
    for (auto& [tid, ts] : threads_) {
      if (tid == except || !ts.running) continue;
      if (!ts.sigstop_expected) {
        tgkill(h_.pid, tid, SIGSTOP);
        ts.sigstop_expected = true;
      }
      targets.push_back(tid);
    }
    auto& demux = detail::WaitDemux::instance();
    for (Tid tid : targets) {
      int st = 0;
      try {
        st = demux.wait_for(tid);
      } catch (const Error&) {
        remove_thread(tid);
        continue;
      }
      auto notice = decode(tid, st);
      if (!notice) continue;
      auto& ts = threads_.at(tid);
      ts.running = false;
      ts.stepping = false;
      if (const auto* s = std::get_if<cause::Signal>(&notice->cause);
          s && s->signo == SIGSTOP && ts.sigstop_expected) {
        ts.sigstop_expected = false;
        continue;
      }
      if (const auto* c = std::get_if<cause::Clone>(&notice->cause)) adopt_clone(c->new_tid);
      ts.pending.push_back(*notice);
    }
  }

  // A software trap reported for a patch that has since been removed: put pc
  // back on the restored instruction.
  void rewind_cancelled_trap(Tid tid) {
    auto regs = read_registers(tid);
    const auto& ai = arch_info(h_.arch);
    if (ai.trap_pc_advance == 0) return;
    Address pc = regs.pc() - ai.trap_pc_advance;
    try {
      auto bytes = read_memory_raw(pc, ai.trap_instruction.size());
      if (!std::equal(bytes.begin(), bytes.end(), ai.trap_instruction.begin())) {
        regs.set(Role::Pc, pc);
        write_registers(tid, regs);
      }
    } catch (const Error&) {
    }
  }

  void require_stopped(const char* op) const {
    if (h_.state != TraceeState::Stopped) {
      Error::raise(ErrorCode::InvalidState,
                   std::string(op) + ": tracee is " + std::string(to_string(h_.state)));
    }
  }

  void check_thread(Tid tid, const char* op) const {
    if (h_.state == TraceeState::Running) {
      Error::raise(ErrorCode::InvalidState, std::string(op) + ": tracee is RUNNING");
    }
    if (!threads_.count(tid)) {
      Error::raise(ErrorCode::NoSuchThread, std::string(op) + ": unknown tid " + std::to_string(tid));
    }
    require_stopped(op);
  }

  [[noreturn]] static void thread_error(const char* what, Tid tid) {
    if (errno == ESRCH) {
      Error::raise(ErrorCode::NoSuchThread, std::string(what) + " on tid " + std::to_string(tid));
    }
    Error::raise_errno(std::string(what) + " on tid " + std::to_string(tid));
  }

  static void check_range(Address addr, std::size_t len) {
    if (addr + len < addr) throw MemoryAccessError(addr, "range wraps the address space");
  }

  Tid io_tid() const {
    if (threads_.count(last_tid_)) return last_tid_;
    if (!threads_.empty()) return threads_.begin()->first;
    return h_.pid;
  }

  void peek_words(Address addr, std::span<std::uint8_t> out) {
    Tid tid = io_tid();
    Address end = addr + out.size();
    for (Address word = addr & ~Address{7}; word < end; word += 8) {
      errno = 0;
      long value = ::ptrace(PTRACE_PEEKDATA, tid, word, nullptr);
      if (errno != 0) throw MemoryAccessError(std::max(word, addr), "cannot read tracee memory");
      std::uint8_t bytes[8];
      std::memcpy(bytes, &value, 8);
      for (int i = 0; i < 8; ++i) {
        Address a = word + i;
        if (a >= addr && a < end) out[a - addr] = bytes[i];
      }
    }
  }

  void poke_words(Address addr, std::span<const std::uint8_t> data) {
    Tid tid = io_tid();
    Address end = addr + data.size();
    for (Address word = addr & ~Address{7}; word < end; word += 8) {
      std::uint8_t bytes[8];
      bool partial = word < addr || word + 8 > end;
      if (partial) {
        errno = 0;
        long old = ::ptrace(PTRACE_PEEKDATA, tid, word, nullptr);
        if (errno != 0) throw MemoryAccessError(std::max(word, addr), "cannot read tracee memory");
        std::memcpy(bytes, &old, 8);
      }
      for (int i = 0; i < 8; ++i) {
        Address a = word + i;
        if (a >= addr && a < end) bytes[i] = data[a - addr];
      }
      long value = 0;
      std::memcpy(&value, bytes, 8);
      if (::ptrace(PTRACE_POKEDATA, tid, word, value) < 0) {
        throw MemoryAccessError(std::max(word, addr), "cannot write tracee memory");
      }
    }
  }

  void validate_trap(const HardwareTrap& t) const {
    if (t.length != 1 && t.length != 2 && t.length != 4 && t.length != 8) {
      Error::raise(ErrorCode::AlignmentError, "hardware trap length must be 1, 2, 4 or 8");
    }
    if (t.address % t.length != 0) {
      Error::raise(ErrorCode::AlignmentError, "hardware trap address not aligned to its length");
    }
    if (t.trigger == HwTrigger::Execute && h_.arch == Arch::Amd64 && t.length != 1) {
      Error::raise(ErrorCode::AlignmentError, "execute traps cover a single byte");
    }
  }

#if defined(__x86_64__)
  void program_slots(Tid tid) {
    auto dr = [](std::size_t i) { return offsetof(struct user, u_debugreg) + i * sizeof(long); };
    std::uint64_t dr7 = 0;
    for (std::size_t i = 0; i < slots_.size(); ++i) {
      if (!slots_[i]) continue;
      const auto& t = *slots_[i];
      std::uint64_t rw = t.trigger == HwTrigger::Execute ? 0b00
                         : t.trigger == HwTrigger::Write ? 0b01
                                                         : 0b11;
      std::uint64_t len = t.length == 1 ? 0b00 : t.length == 2 ? 0b01 : t.length == 8 ? 0b10 : 0b11;
      dr7 |= std::uint64_t{1} << (2 * i);
      dr7 |= rw << (16 + 4 * i);
      dr7 |= len << (18 + 4 * i);
    }
    ::ptrace(PTRACE_POKEUSER, tid, dr(7), nullptr);
    for (std::size_t i = 0; i < slots_.size(); ++i) {
      if (!slots_[i]) continue;
      if (::ptrace(PTRACE_POKEUSER, tid, dr(i), slots_[i]->address) < 0) {
        Error::raise_errno("programming debug register " + std::to_string(i));
      }
    }
    if (::ptrace(PTRACE_POKEUSER, tid, dr(7), dr7) < 0) Error::raise_errno("programming DR7");
  }
#elif defined(__aarch64__)
  void program_slots(Tid tid) {
    user_hwdebug_state breaks{};
    user_hwdebug_state watches{};
    std::size_t nb = 0;
    std::size_t nw = 0;
    for (const auto& slot : slots_) {
      if (!slot) continue;
      const auto& t = *slot;
      if (t.trigger == HwTrigger::Execute) {
        breaks.dbg_regs[nb].addr = t.address;
        breaks.dbg_regs[nb].ctrl = (0xFu << 5) | (2u << 1) | 1u;
        ++nb;
      } else {
        Address base = t.address & ~Address{7};
        unsigned mask = ((1u << t.length) - 1u) << (t.address - base);
        unsigned type = t.trigger == HwTrigger::Write ? 2u : 3u;
        watches.dbg_regs[nw].addr = base;
        watches.dbg_regs[nw].ctrl = (mask << 5) | (type << 3) | (2u << 1) | 1u;
        ++nw;
      }
    }
    auto write_set = [tid](int type, user_hwdebug_state& st, std::size_t n) {
      iovec iov{&st, offsetof(user_hwdebug_state, dbg_regs) + std::max<std::size_t>(n, 1) * sizeof(st.dbg_regs[0])};
      if (::ptrace(PTRACE_SETREGSET, tid, type, &iov) < 0) Error::raise_errno("programming debug registers");
    };
    write_set(NT_ARM_HW_BREAK, breaks, nb);
    write_set(NT_ARM_HW_WATCH, watches, nw);
  }
#endif

  TraceeHandle h_;
  std::map<Tid, ThreadState> threads_;
  Tid last_tid_ = 0;
  std::optional<Tid> step_tid_;
  std::vector<std::optional<HardwareTrap>> slots_;
  StdioChannels stdio_;
  bool owns_process_;
};

struct ChildFailure {
  char stage;  // 'P' ptrace, 'E' exec
  int err;
};

[[noreturn]] void child_fail(int fd, char stage) {
  ChildFailure f{stage, errno};
  [[maybe_unused]] auto n = ::write(fd, &f, sizeof(f));
  ::_exit(127);
}

std::vector<Tid> list_tasks(int pid) {
  std::vector<Tid> out;
  std::error_code ec;
  for (const auto& entry :
       std::filesystem::directory_iterator("/proc/" + std::to_string(pid) + "/task", ec)) {
    out.push_back(std::stoi(entry.path().filename().string()));
  }
  std::sort(out.begin(), out.end());
  return out;
}

bool personality_has_no_aslr(int pid) {
  std::ifstream in("/proc/" + std::to_string(pid) + "/personality");
  unsigned long value = 0;
  if (!(in >> std::hex >> value)) return false;
  return (value & ADDR_NO_RANDOMIZE) != 0;
}

}  // namespace

std::unique_ptr<Backend> spawn_ptrace(const SpawnRequest& req) {
  struct stat sb{};
  if (::stat(req.path.c_str(), &sb) != 0) {
    Error::raise(ErrorCode::SpawnError, req.path + ": no such file");
  }
  if (!S_ISREG(sb.st_mode) || ::access(req.path.c_str(), X_OK) != 0) {
    Error::raise(ErrorCode::SpawnError, req.path + ": not an executable file");
  }
  Arch arch = probe_arch(req.path).value_or(host_arch());
  if (arch != host_arch()) {
    Error::raise(ErrorCode::UnsupportedTarget,
                 req.path + " targets " + std::string(to_string(arch)) + ", host is " +
                     std::string(to_string(host_arch())));
  }

  std::vector<std::string> arg_storage;
  arg_storage.push_back(req.path);
  arg_storage.insert(arg_storage.end(), req.argv.begin(), req.argv.end());
  std::vector<char*> argv;
  for (auto& a : arg_storage) argv.push_back(a.data());
  argv.push_back(nullptr);

  std::vector<std::string> env_storage;
  std::vector<char*> envp;
  char** env_ptr = environ;
  if (req.env) {
    for (const auto& [k, v] : *req.env) env_storage.push_back(k + "=" + v);
    for (auto& e : env_storage) envp.push_back(e.data());
    envp.push_back(nullptr);
    env_ptr = envp.data();
  }

  int in_pipe[2] = {-1, -1};
  int out_pipe[2] = {-1, -1};
  int err_pipe[2] = {-1, -1};
  int status_pipe[2] = {-1, -1};
  if (::pipe2(status_pipe, O_CLOEXEC) < 0) Error::raise_errno("pipe2", ErrorCode::SpawnError);
  FileDescriptor status_read(status_pipe[0]);
  FileDescriptor status_write(status_pipe[1]);
  StdioChannels parent_ends;
  FileDescriptor child_in;
  FileDescriptor child_out;
  FileDescriptor child_err;
  if (req.stdio == StdioMode::Pipe) {
    if (::pipe2(in_pipe, O_CLOEXEC) < 0 || ::pipe2(out_pipe, O_CLOEXEC) < 0 ||
        ::pipe2(err_pipe, O_CLOEXEC) < 0) {
      Error::raise_errno("pipe2", ErrorCode::SpawnError);
    }
    child_in = FileDescriptor(in_pipe[0]);
    parent_ends.in = FileDescriptor(in_pipe[1]);
    parent_ends.out = FileDescriptor(out_pipe[0]);
    child_out = FileDescriptor(out_pipe[1]);
    parent_ends.err = FileDescriptor(err_pipe[0]);
    child_err = FileDescriptor(err_pipe[1]);
  }

  bool disable_aslr = req.disable_aslr;
  pid_t pid = ::fork();
  if (pid < 0) Error::raise_errno("fork", ErrorCode::SpawnError);
  if (pid == 0) {
    if (req.stdio == StdioMode::Pipe) {
      ::dup2(child_in.get(), 0);
      ::dup2(child_out.get(), 1);
      ::dup2(child_err.get(), 2);
    }
    ::signal(SIGPIPE, SIG_DFL);
    sigset_t empty;
    sigemptyset(&empty);
    ::sigprocmask(SIG_SETMASK, &empty, nullptr);
    if (disable_aslr) {
      int current = ::personality(0xffffffff);
      ::personality(static_cast<unsigned long>(current) | ADDR_NO_RANDOMIZE);
    }
    if (::ptrace(PTRACE_TRACEME, 0, nullptr, nullptr) < 0) child_fail(status_pipe[1], 'P');
    ::execve(argv[0], argv.data(), env_ptr);
    child_fail(status_pipe[1], 'E');
  }

  status_write.reset();
  child_in.reset();
  child_out.reset();
  child_err.reset();

  auto backend = std::make_unique<PtraceBackend>(pid, arch, disable_aslr, /*owns_process=*/true);
  int status = detail::WaitDemux::instance().wait_for(pid);
  if (!WIFSTOPPED(status)) {
    ChildFailure f{'E', 0};
    auto n = ::read(status_read.get(), &f, sizeof(f));
    backend->set_state(TraceeState::Exited);
    errno = f.err;
    if (n == static_cast<ssize_t>(sizeof(f)) && f.stage == 'P') {
      Error::raise_errno("PTRACE_TRACEME", f.err == EPERM ? ErrorCode::PermissionError
                                                          : ErrorCode::SpawnError);
    }
    Error::raise_errno("execve " + req.path, ErrorCode::SpawnError);
  }
  if (::ptrace(PTRACE_SETOPTIONS, pid, nullptr, kTraceOptions) < 0) {
    ::kill(pid, SIGKILL);
    detail::WaitDemux::instance().wait_for(pid);
    backend->set_state(TraceeState::Killed);
    Error::raise_errno("PTRACE_SETOPTIONS", ErrorCode::PermissionError);
  }
  backend->add_thread(pid, false);
  backend->set_last(pid);
  backend->set_stdio(std::move(parent_ends));
  backend->set_state(TraceeState::Stopped);
  return backend;
}

std::unique_ptr<Backend> attach_ptrace(int pid) {
  if (pid <= 0 || (::kill(pid, 0) != 0 && errno == ESRCH)) {
    Error::raise(ErrorCode::NoSuchProcess, "no process with pid " + std::to_string(pid));
  }
  Arch arch = host_arch();
  try {
    arch = probe_arch("/proc/" + std::to_string(pid) + "/exe").value_or(host_arch());
  } catch (const Error& e) {
    if (e.code() == ErrorCode::UnsupportedTarget) throw;
  }
  if (arch != host_arch()) Error::raise(ErrorCode::UnsupportedTarget, "foreign architecture");

  auto backend = std::make_unique<PtraceBackend>(pid, arch, personality_has_no_aslr(pid),
                                                 /*owns_process=*/false);
  auto& demux = detail::WaitDemux::instance();
  std::set<Tid> attached;
  std::vector<Tid> order;
  for (bool added = true; added;) {
    added = false;
    for (Tid tid : list_tasks(pid)) {
      if (attached.count(tid)) continue;
      if (::ptrace(PTRACE_ATTACH, tid, nullptr, nullptr) < 0) {
        if (errno == ESRCH) continue;
        if (attached.empty()) {
          Error::raise_errno("PTRACE_ATTACH", errno == EPERM ? ErrorCode::PermissionError
                                                             : ErrorCode::SystemError);
        }
        continue;
      }
      int deferred = 0;
      bool alive = true;
      for (;;) {
        int st = demux.wait_for(tid);
        if (!WIFSTOPPED(st)) {
          alive = false;
          break;
        }
        if (WSTOPSIG(st) == SIGSTOP) break;
        deferred = WSTOPSIG(st);
        ::ptrace(PTRACE_CONT, tid, nullptr, nullptr);
      }
      if (!alive) continue;
      attached.insert(tid);
      order.push_back(tid);
      backend->add_thread(tid, false);
      if (deferred) backend->defer_signal(tid, deferred);
      added = true;
    }
  }
  if (order.empty()) Error::raise(ErrorCode::NoSuchProcess, "process vanished during attach");
  for (Tid tid : order) ::ptrace(PTRACE_SETOPTIONS, tid, nullptr, kTraceOptions);
  backend->set_last(order.front());
  backend->set_state(TraceeState::Stopped);
  return backend;
}

}  // namespace scriptdbg
