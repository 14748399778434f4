#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace scriptdbg {

enum class ErrorCode {
  SpawnError,
  PermissionError,
  NoSuchProcess,
  NoSuchThread,
  InvalidState,
  InvalidContext,
  MemoryAccessError,
  ProcessLost,
  UnsupportedTarget,
  MapParseError,
  ElfParseError,
  SymbolNotFound,
  AmbiguousSymbol,
  BadLocation,
  NoFreeSlot,
  AlignmentError,
  NoSuchTrap,
  UnknownSyscall,
  RuleConflict,
  PolicyError,
  EndOfStream,
  CapacityError,
  NotInPattern,
  MapFormatError,
  NoCrash,
  FixtureError,
  SystemError,
};

std::string_view to_string(ErrorCode code);

// Every engine failure is reported through this type (or a subclass that
// carries extra context). code() is stable; what() is for humans.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message);

  ErrorCode code() const noexcept { return code_; }

  [[noreturn]] static void raise(ErrorCode code, const std::string& message);
  // Raises SystemError (or a more specific code) with strerror(errno) appended.
  [[noreturn]] static void raise_errno(const std::string& prefix,
                                       ErrorCode code = ErrorCode::SystemError);

 private:
  ErrorCode code_;
};

class MemoryAccessError : public Error {
 public:
  MemoryAccessError(std::uint64_t address, const std::string& message);
  std::uint64_t address() const noexcept { return address_; }

 private:
  std::uint64_t address_;
};

class ElfParseError : public Error {
 public:
  ElfParseError(std::uint64_t offset, const std::string& cause);
  std::uint64_t offset() const noexcept { return offset_; }

 private:
  std::uint64_t offset_;
};

class MapParseError : public Error {
 public:
  explicit MapParseError(std::string line);
  const std::string& line() const noexcept { return line_; }

 private:
  std::string line_;
};

class AmbiguousSymbolError : public Error {
 public:
  AmbiguousSymbolError(const std::string& name, std::vector<std::string> candidates);
  const std::vector<std::string>& candidates() const noexcept { return candidates_; }

 private:
  std::vector<std::string> candidates_;
};

class MapFormatError : public Error {
 public:
  MapFormatError(std::size_t line_number, const std::string& message);
  std::size_t line_number() const noexcept { return line_number_; }

 private:
  std::size_t line_number_;
};

}  // namespace scriptdbg
