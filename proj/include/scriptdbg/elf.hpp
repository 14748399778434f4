#pragma once

#include <scriptdbg/arch.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace scriptdbg {

enum class SymbolKind { Func, Object, Other };
enum class SymbolTable { Dynsym, Symtab };

struct SymbolEntry {
  std::string name;
  // Link-time value: absolute for ET_EXEC, relative to load bias otherwise.
  std::uint64_t value = 0;
  std::uint64_t size = 0;
  SymbolKind kind = SymbolKind::Other;
  SymbolTable source_table = SymbolTable::Symtab;
};

struct Segment {
  std::uint32_t type = 0;
  std::uint32_t flags = 0;
  std::uint64_t offset = 0;
  std::uint64_t vaddr = 0;
  std::uint64_t filesz = 0;
  std::uint64_t memsz = 0;
};

// Parsed view of an ELF64 little-endian image. Only the pieces the engine
// consumes are kept: header, program headers and symbol tables.
class ElfImage {
 public:
  // Throws ElfParseError on malformed input, UnsupportedTarget on the wrong
  // class or machine.
  static ElfImage parse(std::span<const std::uint8_t> bytes);
  static ElfImage load(const std::filesystem::path& path);

  Arch arch() const { return arch_; }
  bool is_pie() const { return type_ == 3; }  // ET_DYN
  bool is_exec() const { return type_ == 2; }  // ET_EXEC
  std::uint64_t entry() const { return entry_; }
  const std::vector<Segment>& segments() const { return segments_; }
  const std::vector<SymbolEntry>& symbols() const { return symbols_; }

  // Page-aligned lowest PT_LOAD virtual address.
  std::uint64_t linked_base() const;
  // File offset backing a virtual address, if a PT_LOAD covers it on disk.
  std::optional<std::uint64_t> file_offset_of(std::uint64_t vaddr) const;

 private:
  Arch arch_ = Arch::Amd64;
  std::uint16_t type_ = 0;
  std::uint64_t entry_ = 0;
  std::vector<Segment> segments_;
  std::vector<SymbolEntry> symbols_;
};

// Union of .dynsym and .symtab; SYMTAB wins on name collisions and within a
// table the sized entry wins.
std::vector<SymbolEntry> parse_symbols(const std::filesystem::path& path);

// Architecture of an executable, or nullopt when the file is not ELF.
std::optional<Arch> probe_arch(const std::filesystem::path& path);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);

}  // namespace scriptdbg
