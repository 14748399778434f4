#pragma once

#include <scriptdbg/debugger.hpp>

#include <cstdint>
#include <cstdlib>
#include <optional>
#include <string>
#include <variant>

#ifndef SCRIPTDBG_FIXTURE_DIR
#error "SCRIPTDBG_FIXTURE_DIR must point at the built fixtures"
#endif

namespace testsupport {

inline std::string fixture(const std::string& name) {
  return std::string(SCRIPTDBG_FIXTURE_DIR) + "/" + name;
}

inline std::unique_ptr<scriptdbg::Debugger> spawn(const std::string& name,
                                                  std::vector<std::string> argv = {}) {
  scriptdbg::SpawnOptions opts;
  opts.argv = std::move(argv);
  return scriptdbg::Debugger::spawn(fixture(name), opts);
}

// Output of the fixture run without a debugger.
std::string run_plain(const std::string& name, const std::vector<std::string>& argv = {},
                      int* status = nullptr);

template <class T>
bool is(const scriptdbg::StopReason& r) {
  return std::holds_alternative<T>(r);
}

}  // namespace testsupport

namespace testsupport {

// stdout of a shell command; throws when it cannot be started.
std::string shell(const std::string& command);

// Link-time address of a symbol per `nm` (defined symbols only).
std::optional<std::uint64_t> nm_address(const std::string& path, const std::string& symbol);
// Symbol size per `nm -S`.
std::optional<std::uint64_t> nm_size(const std::string& path, const std::string& symbol);
// Entry point per `readelf -h`.
std::uint64_t readelf_entry(const std::string& path);
// File bytes backing a link-time virtual address, located through the
// LOAD program headers `readelf -l` prints.
std::vector<std::uint8_t> file_bytes_at(const std::string& path, std::uint64_t vaddr,
                                        std::size_t len);

}  // namespace testsupport

namespace testsupport {

// Distance from the start of a function's stack buffer to its saved frame
// pointer, read off the disassembly: the first `lea -N(%rbp)` inside the
// function. amd64 only; nullopt elsewhere.
std::optional<std::uint64_t> stack_buffer_offset(const std::string& path,
                                                 const std::string& function);

// Branch outcomes a coverage fixture plan exercises, per branch_N: '1' and
// '0' reach one side each, 'b' both, '-' none.
std::vector<int> plan_outcomes(const std::string& plan);

}  // namespace testsupport
