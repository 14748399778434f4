#include <scriptdbg/elf.hpp>
#include <scriptdbg/error.hpp>

#include <elf.h>

#include <cstring>
#include <fstream>
#include <limits>
#include <unordered_map>

namespace scriptdbg {

namespace {

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  template <typename T>
  T read(std::uint64_t offset, const char* what) const {
    require(offset, sizeof(T), what);
    T out;
    std::memcpy(&out, bytes_.data() + offset, sizeof(T));
    return out;
  }

  void require(std::uint64_t offset, std::uint64_t len, const char* what) const {
    if (offset > bytes_.size() || len > bytes_.size() - offset) {
      throw ElfParseError(offset, std::string(what) + " extends past end of file");
    }
  }

  std::string string_at(std::uint64_t table_off, std::uint64_t table_size,
                        std::uint64_t index) const {
    if (index >= table_size) throw ElfParseError(table_off + index, "string index out of range");
    require(table_off, table_size, "string table");
    const auto* begin = bytes_.data() + table_off + index;
    const auto* end = bytes_.data() + table_off + table_size;
    const auto* nul = static_cast<const std::uint8_t*>(std::memchr(begin, 0, end - begin));
    if (!nul) throw ElfParseError(table_off + index, "unterminated string");
    return std::string(reinterpret_cast<const char*>(begin), nul - begin);
  }

  std::size_t size() const { return bytes_.size(); }

 private:
  std::span<const std::uint8_t> bytes_;
};

SymbolKind kind_of(unsigned char info) {
  switch (ELF64_ST_TYPE(info)) {
    case STT_FUNC:
    case STT_GNU_IFUNC:
      return SymbolKind::Func;
    case STT_OBJECT:
      return SymbolKind::Object;
    default:
      return SymbolKind::Other;
  }
}

void read_symbol_table(const Reader& r, const Elf64_Shdr& sh, const Elf64_Shdr& strtab,
                       SymbolTable which, std::vector<SymbolEntry>& out) {
  std::uint64_t entsize = sh.sh_entsize ? sh.sh_entsize : sizeof(Elf64_Sym);
  if (entsize < sizeof(Elf64_Sym)) throw ElfParseError(sh.sh_offset, "bad symbol entry size");
  r.require(sh.sh_offset, sh.sh_size, "symbol table");
  r.require(strtab.sh_offset, strtab.sh_size, "string table");
  std::uint64_t count = sh.sh_size / entsize;
  for (std::uint64_t i = 1; i < count; ++i) {
    std::uint64_t off = sh.sh_offset + i * entsize;
    auto sym = r.read<Elf64_Sym>(off, "symbol");
    if (sym.st_shndx == SHN_UNDEF || sym.st_name == 0) continue;
    auto type = ELF64_ST_TYPE(sym.st_info);
    if (type == STT_SECTION || type == STT_FILE) continue;
    auto name = r.string_at(strtab.sh_offset, strtab.sh_size, sym.st_name);
    if (name.empty()) continue;
    if (sym.st_size > 0 && sym.st_value > std::numeric_limits<std::uint64_t>::max() - sym.st_size) {
      throw ElfParseError(off, "symbol '" + name + "' overflows the address space");
    }
    out.push_back({std::move(name), sym.st_value, sym.st_size, kind_of(sym.st_info), which});
  }
}

// SYMTAB beats DYNSYM; within one table a sized entry beats an unsized one.
bool better(const SymbolEntry& candidate, const SymbolEntry& current) {
  if (candidate.source_table != current.source_table) {
    return candidate.source_table == SymbolTable::Symtab;
  }
  return candidate.size > 0 && current.size == 0;
}

}  // namespace

ElfImage ElfImage::parse(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  if (bytes.size() < EI_NIDENT) throw ElfParseError(bytes.size(), "file too small for ELF ident");
  if (std::memcmp(bytes.data(), ELFMAG, SELFMAG) != 0) throw ElfParseError(0, "bad ELF magic");
  if (bytes[EI_CLASS] == ELFCLASS32) {
    Error::raise(ErrorCode::UnsupportedTarget, "32-bit ELF targets are not supported");
  }
  if (bytes[EI_CLASS] != ELFCLASS64) throw ElfParseError(EI_CLASS, "unknown ELF class");
  if (bytes[EI_DATA] != ELFDATA2LSB) {
    Error::raise(ErrorCode::UnsupportedTarget, "only little-endian ELF is supported");
  }
  auto eh = r.read<Elf64_Ehdr>(0, "ELF header");

  ElfImage img;
  switch (eh.e_machine) {
    case EM_X86_64: img.arch_ = Arch::Amd64; break;
    case EM_AARCH64: img.arch_ = Arch::Aarch64; break;
    default:
      Error::raise(ErrorCode::UnsupportedTarget,
                   "unsupported ELF machine " + std::to_string(eh.e_machine));
  }
  img.type_ = eh.e_type;
  img.entry_ = eh.e_entry;

  if (eh.e_phnum > 0) {
    if (eh.e_phentsize < sizeof(Elf64_Phdr)) throw ElfParseError(0, "bad program header size");
    r.require(eh.e_phoff, std::uint64_t{eh.e_phnum} * eh.e_phentsize, "program headers");
    for (unsigned i = 0; i < eh.e_phnum; ++i) {
      auto ph = r.read<Elf64_Phdr>(eh.e_phoff + std::uint64_t{i} * eh.e_phentsize, "program header");
      img.segments_.push_back({ph.p_type, ph.p_flags, ph.p_offset, ph.p_vaddr, ph.p_filesz, ph.p_memsz});
    }
  }

  if (eh.e_shnum == 0) return img;
  if (eh.e_shentsize < sizeof(Elf64_Shdr)) throw ElfParseError(0, "bad section header size");
  r.require(eh.e_shoff, std::uint64_t{eh.e_shnum} * eh.e_shentsize, "section headers");
  std::vector<Elf64_Shdr> sections;
  sections.reserve(eh.e_shnum);
  for (unsigned i = 0; i < eh.e_shnum; ++i) {
    sections.push_back(
        r.read<Elf64_Shdr>(eh.e_shoff + std::uint64_t{i} * eh.e_shentsize, "section header"));
  }

  std::vector<SymbolEntry> raw;
  for (const auto& sh : sections) {
    if (sh.sh_type != SHT_SYMTAB && sh.sh_type != SHT_DYNSYM) continue;
    if (sh.sh_link >= sections.size()) throw ElfParseError(sh.sh_offset, "bad string table link");
    const auto& strtab = sections[sh.sh_link];
    if (strtab.sh_type != SHT_STRTAB) throw ElfParseError(strtab.sh_offset, "linked section is not a string table");
    read_symbol_table(r, sh, strtab,
                      sh.sh_type == SHT_SYMTAB ? SymbolTable::Symtab : SymbolTable::Dynsym, raw);
  }

  std::unordered_map<std::string, std::size_t> by_name;
  for (auto& entry : raw) {
    auto [it, inserted] = by_name.try_emplace(entry.name, img.symbols_.size());
    if (inserted) {
      img.symbols_.push_back(std::move(entry));
    } else if (better(entry, img.symbols_[it->second])) {
      img.symbols_[it->second] = std::move(entry);
    }
  }
  return img;
}

ElfImage ElfImage::load(const std::filesystem::path& path) { return parse(read_file(path)); }

std::uint64_t ElfImage::linked_base() const {
  std::optional<std::uint64_t> lowest;
  for (const auto& seg : segments_) {
    if (seg.type != PT_LOAD) continue;
    if (!lowest || seg.vaddr < *lowest) lowest = seg.vaddr;
  }
  return lowest.value_or(0) & ~std::uint64_t{0xFFF};
}

std::optional<std::uint64_t> ElfImage::file_offset_of(std::uint64_t vaddr) const {
  for (const auto& seg : segments_) {
    if (seg.type != PT_LOAD) continue;
    if (vaddr >= seg.vaddr && vaddr - seg.vaddr < seg.filesz) return seg.offset + (vaddr - seg.vaddr);
  }
  return std::nullopt;
}

std::vector<SymbolEntry> parse_symbols(const std::filesystem::path& path) {
  return ElfImage::load(path).symbols();
}

std::optional<Arch> probe_arch(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::uint8_t ident[20] = {};
  in.read(reinterpret_cast<char*>(ident), sizeof(ident));
  if (in.gcount() < static_cast<std::streamsize>(sizeof(ident)) ||
      std::memcmp(ident, ELFMAG, SELFMAG) != 0) {
    return std::nullopt;
  }
  if (ident[EI_CLASS] != ELFCLASS64) {
    Error::raise(ErrorCode::UnsupportedTarget, path.string() + " is not a 64-bit ELF");
  }
  std::uint16_t machine = static_cast<std::uint16_t>(ident[18] | (ident[19] << 8));
  if (machine == EM_X86_64) return Arch::Amd64;
  if (machine == EM_AARCH64) return Arch::Aarch64;
  Error::raise(ErrorCode::UnsupportedTarget, path.string() + " has an unsupported machine type");
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) Error::raise(ErrorCode::SystemError, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace scriptdbg
