#include <scriptdbg/error.hpp>

#include <cerrno>
#include <cstring>
#include <sstream>

namespace scriptdbg {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::SpawnError: return "SpawnError";
    case ErrorCode::PermissionError: return "PermissionError";
    case ErrorCode::NoSuchProcess: return "NoSuchProcess";
    case ErrorCode::NoSuchThread: return "NoSuchThread";
    case ErrorCode::InvalidState: return "InvalidState";
    case ErrorCode::InvalidContext: return "InvalidContext";
    case ErrorCode::MemoryAccessError: return "MemoryAccessError";
    case ErrorCode::ProcessLost: return "ProcessLost";
    case ErrorCode::UnsupportedTarget: return "UnsupportedTarget";
    case ErrorCode::MapParseError: return "MapParseError";
    case ErrorCode::ElfParseError: return "ElfParseError";
    case ErrorCode::SymbolNotFound: return "SymbolNotFound";
    case ErrorCode::AmbiguousSymbol: return "AmbiguousSymbol";
    case ErrorCode::BadLocation: return "BadLocation";
    case ErrorCode::NoFreeSlot: return "NoFreeSlot";
    case ErrorCode::AlignmentError: return "AlignmentError";
    case ErrorCode::NoSuchTrap: return "NoSuchTrap";
    case ErrorCode::UnknownSyscall: return "UnknownSyscall";
    case ErrorCode::RuleConflict: return "RuleConflict";
    case ErrorCode::PolicyError: return "PolicyError";
    case ErrorCode::EndOfStream: return "EndOfStream";
    case ErrorCode::CapacityError: return "CapacityError";
    case ErrorCode::NotInPattern: return "NotInPattern";
    case ErrorCode::MapFormatError: return "MapFormatError";
    case ErrorCode::NoCrash: return "NoCrash";
    case ErrorCode::FixtureError: return "FixtureError";
    case ErrorCode::SystemError: return "SystemError";
  }
  return "Unknown";
}

Error::Error(ErrorCode code, const std::string& message)
    : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

void Error::raise(ErrorCode code, const std::string& message) { throw Error(code, message); }

void Error::raise_errno(const std::string& prefix, ErrorCode code) {
  throw Error(code, prefix + ": " + std::strerror(errno));
}

namespace {
std::string hex(std::uint64_t v) {
  std::ostringstream os;
  os << "0x" << std::hex << v;
  return os.str();
}
}  // namespace

MemoryAccessError::MemoryAccessError(std::uint64_t address, const std::string& message)
    : Error(ErrorCode::MemoryAccessError, message + " at " + hex(address)), address_(address) {}

ElfParseError::ElfParseError(std::uint64_t offset, const std::string& cause)
    : Error(ErrorCode::ElfParseError, cause + " (offset " + hex(offset) + ")"), offset_(offset) {}

MapParseError::MapParseError(std::string line)
    : Error(ErrorCode::MapParseError, "cannot parse maps line '" + line + "'"),
      line_(std::move(line)) {}

namespace {
std::string join(const std::vector<std::string>& items) {
  std::string out;
  for (const auto& s : items) {
    if (!out.empty()) out += ", ";
    out += s;
  }
  return out;
}
}  // namespace

AmbiguousSymbolError::AmbiguousSymbolError(const std::string& name,
                                           std::vector<std::string> candidates)
    : Error(ErrorCode::AmbiguousSymbol,
            "'" + name + "' is defined in several objects: " + join(candidates)),
      candidates_(std::move(candidates)) {}

MapFormatError::MapFormatError(std::size_t line_number, const std::string& message)
    : Error(ErrorCode::MapFormatError,
            "branch map line " + std::to_string(line_number) + ": " + message),
      line_number_(line_number) {}

}  // namespace scriptdbg
