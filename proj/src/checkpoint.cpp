#include "slnk/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace slnk {

namespace {

void put_u32(std::string& out, uint32_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
  out.push_back(static_cast<char>((v >> 16) & 0xff));
  out.push_back(static_cast<char>((v >> 24) & 0xff));
}

void put_f32(std::string& out, float f) {
  uint32_t v;
  std::memcpy(&v, &f, 4);
  put_u32(out, v);
}

struct Reader {
  const std::string& buf;
  size_t pos = 0;
  std::string where;

  uint32_t u32() {
    if (pos + 4 > buf.size()) throw IoError(concat(where, ": truncated container"));
    uint32_t v = static_cast<uint8_t>(buf[pos]) |
                 (static_cast<uint32_t>(static_cast<uint8_t>(buf[pos + 1])) << 8) |
                 (static_cast<uint32_t>(static_cast<uint8_t>(buf[pos + 2])) << 16) |
                 (static_cast<uint32_t>(static_cast<uint8_t>(buf[pos + 3])) << 24);
    pos += 4;
    return v;
  }
  float f32() {
    uint32_t v = u32();
    float f;
    std::memcpy(&f, &v, 4);
    return f;
  }
  std::string bytes(size_t n) {
    if (pos + n > buf.size()) throw IoError(concat(where, ": truncated container"));
    std::string s = buf.substr(pos, n);
    pos += n;
    return s;
  }
};

}  // namespace

void Checkpoint::add(const std::string& name, Shape dims, std::vector<float> data) {
  if (numel(dims) != static_cast<int64_t>(data.size()))
    throw ContractError(concat("entry '", name, "': payload size ", data.size(),
                               " does not match dims ", shape_str(dims)));
  entries.push_back(CheckpointEntry{name, std::move(dims), std::move(data)});
}

const CheckpointEntry* Checkpoint::find(const std::string& name) const {
  for (const auto& e : entries)
    if (e.name == name) return &e;
  return nullptr;
}

const CheckpointEntry& Checkpoint::require(const std::string& name) const {
  const CheckpointEntry* e = find(name);
  if (!e) throw IoError(concat("checkpoint is missing entry '", name, "'"));
  return *e;
}

void Checkpoint::save(const std::string& path) const {
  std::string out;
  out += "SLNK";
  put_u32(out, kVersion);
  put_u32(out, static_cast<uint32_t>(entries.size()));
  for (const auto& e : entries) {
    put_u32(out, static_cast<uint32_t>(e.name.size()));
    out += e.name;
    put_u32(out, static_cast<uint32_t>(e.dims.size()));
    for (int64_t d : e.dims) put_u32(out, static_cast<uint32_t>(d));
    for (float f : e.data) put_f32(out, f);
  }
  put_u32(out, static_cast<uint32_t>(config_text.size()));
  out += config_text;

  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError(concat("cannot write checkpoint: ", path));
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw IoError(concat("short write to ", path));
}

Checkpoint Checkpoint::load(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError(concat("cannot open checkpoint: ", path));
  std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  Reader r{buf, 0, path};
  if (r.bytes(4) != "SLNK") throw IoError(concat(path, ": bad magic, not an SLNK container"));
  uint32_t version = r.u32();
  if (version != kVersion)
    throw IoError(concat(path, ": unsupported container version ", version,
                         " (expected ", kVersion, ")"));
  uint32_t count = r.u32();
  Checkpoint ck;
  ck.entries.reserve(count);
  for (uint32_t i = 0; i < count; ++i) {
    CheckpointEntry e;
    uint32_t name_len = r.u32();
    e.name = r.bytes(name_len);
    uint32_t rank = r.u32();
    e.dims.resize(rank);
    for (uint32_t d = 0; d < rank; ++d) e.dims[d] = static_cast<int64_t>(r.u32());
    int64_t n = numel(e.dims);
    e.data.resize(static_cast<size_t>(n));
    for (int64_t j = 0; j < n; ++j) e.data[static_cast<size_t>(j)] = r.f32();
    ck.entries.push_back(std::move(e));
  }
  uint32_t cfg_len = r.u32();
  ck.config_text = r.bytes(cfg_len);
  return ck;
}

}  // namespace slnk
