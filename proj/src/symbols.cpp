#include <scriptdbg/error.hpp>
#include <scriptdbg/symbols.hpp>

#include <sys/stat.h>

#include <algorithm>
#include <filesystem>
#include <map>
#include <mutex>
#include <tuple>

namespace scriptdbg {

namespace {

const std::vector<SymbolEntry> kNoSymbols;

std::string_view basename_of(std::string_view path) {
  auto slash = path.rfind('/');
  return slash == std::string_view::npos ? path : path.substr(slash + 1);
}

std::uint64_t load_u64(const Bytes& b) {
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | b[static_cast<std::size_t>(i)];
  return v;
}

const LoadedObject* object_for(std::span<const LoadedObject> objects, const MemoryMap& m) {
  if (!m.file_backed()) return nullptr;
  for (const auto& o : objects) {
    if (o.path == *m.path) return &o;
  }
  return nullptr;
}

// Sized FUNC symbol containing addr, or the one starting exactly there.
const SymbolEntry* function_at(const LoadedObject& o, Address addr) {
  const SymbolEntry* exact = nullptr;
  const SymbolEntry* best = nullptr;
  for (const auto& s : o.symbols()) {
    if (s.kind != SymbolKind::Func) continue;
    Address start = s.value + o.load_bias;
    if (start == addr && (!exact || (exact->size == 0 && s.size != 0))) exact = &s;
    if (s.size == 0 || addr < start || addr - start >= s.size) continue;
    if (!best || s.size < best->size) best = &s;
  }
  return exact ? exact : best;
}

}  // namespace

const std::vector<SymbolEntry>& LoadedObject::symbols() const {
  return image ? image->symbols() : kNoSymbols;
}

std::shared_ptr<const ElfImage> cached_image(const std::string& path) {
  using Key = std::tuple<std::string, long long, long long, long long>;
  static std::mutex mu;
  static std::map<Key, std::shared_ptr<const ElfImage>> cache;

  struct stat st{};
  if (::stat(path.c_str(), &st) != 0 || !S_ISREG(st.st_mode)) return nullptr;
  Key key{path, static_cast<long long>(st.st_size), static_cast<long long>(st.st_mtim.tv_sec),
          static_cast<long long>(st.st_mtim.tv_nsec)};
  {
    std::lock_guard lock(mu);
    if (auto it = cache.find(key); it != cache.end()) return it->second;
  }
  std::shared_ptr<const ElfImage> image;
  try {
    image = std::make_shared<const ElfImage>(ElfImage::load(path));
  } catch (const Error&) {
    image = nullptr;
  }
  std::lock_guard lock(mu);
  cache.emplace(key, image);
  return image;
}

std::vector<LoadedObject> enumerate_objects(std::span<const MemoryMap> maps) {
  std::vector<LoadedObject> out;
  std::map<std::string, std::size_t> index;
  for (const auto& m : maps) {
    if (!m.file_backed()) continue;
    auto [it, fresh] = index.emplace(*m.path, out.size());
    if (!fresh) {
      auto& o = out[it->second];
      o.base = std::min(o.base, m.start);
      continue;
    }
    LoadedObject o;
    o.path = *m.path;
    o.base = m.start;
    out.push_back(std::move(o));
  }
  for (auto& o : out) {
    o.image = cached_image(o.path);
    if (!o.image) continue;
    o.is_pie = o.image->is_pie();
    if (o.is_pie) o.load_bias = o.base - o.image->linked_base();
  }
  return out;
}

bool object_matches(const LoadedObject& object, std::string_view filter) {
  if (object.path == filter) return true;
  auto base = basename_of(object.path);
  if (base == filter) return true;
  // "libc" matches "libc.so.6"
  return base.size() > filter.size() && base.substr(0, filter.size()) == filter &&
         base[filter.size()] == '.';
}

Address resolve_symbol(std::span<const LoadedObject> objects, std::string_view name,
                       std::optional<std::string_view> object_filter) {
  struct Hit {
    const LoadedObject* object;
    Address address;
  };
  std::vector<Hit> hits;
  bool any_object = false;
  for (const auto& o : objects) {
    if (object_filter && !object_matches(o, *object_filter)) continue;
    any_object = true;
    for (const auto& s : o.symbols()) {
      if (s.name == name) {
        hits.push_back({&o, s.value + o.load_bias});
        break;
      }
    }
  }
  if (hits.empty()) {
    std::string where = object_filter && !any_object
                            ? " (no loaded object matches '" + std::string(*object_filter) + "')"
                            : "";
    Error::raise(ErrorCode::SymbolNotFound, "symbol '" + std::string(name) + "' not found" + where);
  }
  if (hits.size() > 1) {
    std::vector<std::string> candidates;
    for (const auto& h : hits) candidates.push_back(h.object->path);
    throw AmbiguousSymbolError(std::string(name), std::move(candidates));
  }
  return hits.front().address;
}

std::optional<AddressInfo> resolve_address(std::span<const LoadedObject> objects,
                                           std::span<const MemoryMap> maps, Address addr) {
  auto m = find_map(maps, addr);
  if (!m) return std::nullopt;
  const LoadedObject* o = object_for(objects, *m);
  if (!o) return AddressInfo{m->path.value_or(""), std::nullopt, addr - m->start};
  if (const SymbolEntry* s = function_at(*o, addr)) {
    return AddressInfo{o->path, s->name, addr - (s->value + o->load_bias)};
  }
  return AddressInfo{o->path, std::nullopt, addr - o->base};
}

std::vector<StackFrame> walk_frames(const RegisterFile& regs, std::span<const MemoryMap> maps,
                                    std::span<const LoadedObject> objects, const MemoryPeek& peek,
                                    std::size_t max_depth) {
  std::vector<StackFrame> frames;
  if (max_depth == 0) return frames;

  // Outer frames hold return addresses, which may sit one past the end of a
  // function that ends in a call; look up the call instruction instead.
  auto symbolize = [&](StackFrame& f, bool is_return) {
    Address probe = is_return ? f.return_address - 1 : f.return_address;
    if (auto info = resolve_address(objects, maps, probe); info && info->symbol) {
      f.symbol = info->symbol;
      f.offset = info->offset + (is_return ? 1 : 0);
    }
  };
  auto on_stack = [&](Address a) {
    auto m = find_map(maps, a);
    return m && m->writable && m->readable;
  };
  auto read_word = [&](Address a) -> std::optional<Address> {
    auto b = peek(a, 8);
    if (!b || b->size() != 8) return std::nullopt;
    return load_u64(*b);
  };

  Address pc = regs.pc();
  Address fp = regs.fp();
  Address sp = regs.sp();
  StackFrame top{pc, sp, std::nullopt, 0};
  symbolize(top, false);
  frames.push_back(top);

  // Before the prologue has built the frame, the return address is still at
  // (or just above) sp and fp still belongs to the caller.
  std::optional<Address> return_slot;
  std::optional<Address> link_register;
  if (top.symbol) {
    Address entry = pc - top.offset;
    auto code = peek(entry, 8);
    if (code && code->size() == 8) {
      const auto& c = *code;
      if (regs.arch() == Arch::Amd64) {
        std::size_t push = (c[0] == 0xf3 && c[1] == 0x0f && c[2] == 0x1e && c[3] == 0xfa) ? 4 : 0;
        if (c[push] == 0x55 && top.offset <= push) {
          return_slot = sp;
        } else if (c[push] == 0x55 && top.offset == push + 1) {
          return_slot = sp + 8;
        }
      } else if (top.offset == 0) {
        link_register = regs.get("x30");
      }
    }
  }
  if (return_slot || link_register) {
    if (frames.size() >= max_depth) return frames;
    std::optional<Address> ret = link_register;
    Address base = sp;
    if (return_slot) {
      ret = read_word(*return_slot);
      base = *return_slot + 8;
    }
    if (!ret || *ret == 0) return frames;
    StackFrame caller{*ret, base, std::nullopt, 0};
    symbolize(caller, true);
    frames.push_back(caller);
  }

  while (frames.size() < max_depth) {
    if (fp == 0 || !on_stack(fp)) break;
    auto saved_fp = read_word(fp);
    auto ret = read_word(fp + 8);
    if (!saved_fp || !ret || *ret == 0) break;
    Address base = fp + 16;
    if (base <= frames.back().frame_base) break;
    StackFrame f{*ret, base, std::nullopt, 0};
    symbolize(f, true);
    frames.push_back(f);
    if (*saved_fp <= fp) break;
    fp = *saved_fp;
  }
  return frames;
}

}  // namespace scriptdbg
