#pragma once

#include <scriptdbg/error.hpp>
#include <scriptdbg/tools.hpp>

#include <memory>
#include <string>

namespace scriptdbg::tools {

std::unique_ptr<Debugger> launch(const RunTarget& target, StdioMode stdio);

// The loaded object backing `binary`. Throws BadLocation.
const LoadedObject& main_object(const std::vector<LoadedObject>& objects,
                                const std::string& binary);

// Raises once the watchdog killed the tracee.
void check_timeout(const Watchdog& dog);

std::string hex(std::uint64_t v);

}  // namespace scriptdbg::tools
