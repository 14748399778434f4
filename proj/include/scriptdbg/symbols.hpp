#pragma once

#include <scriptdbg/backend.hpp>
#include <scriptdbg/elf.hpp>
#include <scriptdbg/maps.hpp>

#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace scriptdbg {

struct LoadedObject {
  std::string path;
  // Lowest start among the mappings backed by this file.
  Address base = 0;
  bool is_pie = false;
  // Added to a symbol value to get its runtime address (0 for ET_EXEC).
  Address load_bias = 0;
  std::shared_ptr<const ElfImage> image;  // null when the file could not be parsed

  const std::vector<SymbolEntry>& symbols() const;
};

struct AddressInfo {
  std::string object;
  std::optional<std::string> symbol;
  // From the symbol start, or from the object base when no symbol matched.
  std::uint64_t offset = 0;
};

struct StackFrame {
  // pc for the innermost frame, the return address for the others.
  Address return_address = 0;
  // Stack pointer of this frame at return_address. Strictly increases
  // walking outward.
  Address frame_base = 0;
  std::optional<std::string> symbol;
  std::uint64_t offset = 0;
};

// Parsed images are cached by path, size and modification time.
std::shared_ptr<const ElfImage> cached_image(const std::string& path);

std::vector<LoadedObject> enumerate_objects(std::span<const MemoryMap> maps);

bool object_matches(const LoadedObject& object, std::string_view filter);

// Throws SymbolNotFound or AmbiguousSymbolError.
Address resolve_symbol(std::span<const LoadedObject> objects, std::string_view name,
                       std::optional<std::string_view> object_filter = std::nullopt);

std::optional<AddressInfo> resolve_address(std::span<const LoadedObject> objects,
                                           std::span<const MemoryMap> maps, Address addr);

// Reads `len` bytes of tracee memory or returns nullopt.
using MemoryPeek = std::function<std::optional<Bytes>(Address addr, std::size_t len)>;

// Frame-pointer walk. Stops at max_depth, a null or non-increasing frame
// pointer, one outside writable memory, or an unreadable slot. The walk
// understands a thread stopped inside a function prologue.
std::vector<StackFrame> walk_frames(const RegisterFile& regs, std::span<const MemoryMap> maps,
                                    std::span<const LoadedObject> objects,
                                    const MemoryPeek& peek, std::size_t max_depth);

}  // namespace scriptdbg
