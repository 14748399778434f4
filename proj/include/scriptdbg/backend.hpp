#pragma once

#include <scriptdbg/arch.hpp>
#include <scriptdbg/fd.hpp>

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace scriptdbg {

using Bytes = std::vector<std::uint8_t>;

// CREATED -> STOPPED -> (RUNNING <-> STOPPED)* -> EXITED | KILLED.
// DETACHED is the terminal state of a handle that released its tracee.
enum class TraceeState { Created, Stopped, Running, Exited, Killed, Detached };

std::string_view to_string(TraceeState state);

struct TraceeHandle {
  int pid = -1;
  // Insertion ordered; the first entry is the pid for spawned processes.
  std::vector<Tid> tids;
  Arch arch = host_arch();
  TraceeState state = TraceeState::Created;
  // Present iff state == Exited.
  std::optional<int> exit_code;
  // Present iff state == Killed and the kernel reported the signal.
  std::optional<int> term_signal;
  bool aslr_disabled = false;

  bool has_thread(Tid tid) const;
};

namespace cause {
struct Signal {
  int signo = 0;
  int code = 0;                // si_code
  std::uint64_t address = 0;   // si_addr, for faults
};
struct SyscallTrap {};
struct Exec {};
struct Clone {
  Tid new_tid = 0;
};
struct Exit {
  int code = 0;
};
struct Killed {
  int signo = 0;
};
struct Step {};
}  // namespace cause

using StopCause = std::variant<cause::Signal, cause::SyscallTrap, cause::Exec, cause::Clone,
                               cause::Exit, cause::Killed, cause::Step>;

struct RawStopNotice {
  Tid tid = 0;
  StopCause cause;
};

enum class ResumeMode { Continue, SyscallStop };
enum class StdioMode { Pipe, Inherit };

struct SpawnRequest {
  std::string path;
  std::vector<std::string> argv;  // arguments after argv[0]
  // Absent: inherit the tracer's environment. Present: exact environment.
  std::optional<std::map<std::string, std::string>> env;
  StdioMode stdio = StdioMode::Pipe;
  bool disable_aslr = true;
};

// ASLR default at spawn: disabled unless SCRIPTDBG_KEEP_ASLR=1.
bool default_disable_aslr();

struct StdioChannels {
  FileDescriptor in;   // write end of the tracee's stdin
  FileDescriptor out;  // read end of the tracee's stdout
  FileDescriptor err;  // read end of the tracee's stderr
};

enum class HwTrigger { Execute, Write, ReadWrite };

struct HardwareTrap {
  Address address = 0;
  std::size_t length = 1;
  HwTrigger trigger = HwTrigger::Execute;
};

// Native debug API transport. Implementations own exactly one tracee and
// must be driven from the thread that created them.
class Backend {
 public:
  virtual ~Backend() = default;

  virtual const TraceeHandle& handle() const = 0;
  virtual StdioChannels take_stdio() = 0;

  virtual void detach() = 0;
  virtual void kill() = 0;
  // Brings a running tracee to STOPPED; stops collected here are queued
  // for later waits.
  virtual void halt() = 0;

  virtual RegisterFile read_registers(Tid tid) = 0;
  virtual void write_registers(Tid tid, const RegisterFile& regs) = 0;

  virtual Bytes read_memory_raw(Address addr, std::size_t len) = 0;
  virtual void write_memory_raw(Address addr, std::span<const std::uint8_t> data) = 0;

  // deliver_signal goes to the thread of the most recent notice.
  virtual void resume(ResumeMode mode, std::optional<int> deliver_signal = std::nullopt) = 0;
  // Deliver signo to tid the next time it is resumed.
  virtual void queue_signal(Tid tid, int signo) = 0;
  virtual void single_step(Tid tid) = 0;
  virtual RawStopNotice wait_notice() = 0;

  // Debug-register slots, programmed identically on every thread including
  // ones created later.
  virtual std::size_t hw_slot_capacity() const = 0;
  virtual void set_hw_slot(std::size_t slot, std::optional<HardwareTrap> trap) = 0;
  // Which slot fired for the last SIGTRAP of tid; clears the status.
  virtual std::optional<std::size_t> take_hw_hit(Tid tid, const cause::Signal& sig) = 0;
};

std::unique_ptr<Backend> spawn_ptrace(const SpawnRequest& request);
std::unique_ptr<Backend> attach_ptrace(int pid);

}  // namespace scriptdbg
