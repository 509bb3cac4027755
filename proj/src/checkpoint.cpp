#include "lhdff/checkpoint.hpp"

#include <array>
#include <cstring>
#include <fstream>

namespace lhdff {

namespace {

void append_u16(std::vector<uint8_t>& out, uint16_t v) {
  out.push_back(static_cast<uint8_t>(v));
  out.push_back(static_cast<uint8_t>(v >> 8));
}

void append_u32(std::vector<uint8_t>& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<uint8_t>(v >> (8 * i)));
}

void append_u64(std::vector<uint8_t>& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<uint8_t>(v >> (8 * i)));
}

uint16_t take_u16(const std::vector<uint8_t>& b, size_t& pos, const std::string& path) {
  require<IoError>(pos + 2 <= b.size(),
                   "checkpoint '" + path + "' truncated at byte " + std::to_string(pos));
  uint16_t v = static_cast<uint16_t>(b[pos] | (b[pos + 1] << 8));
  pos += 2;
  return v;
}

uint32_t take_u32(const std::vector<uint8_t>& b, size_t& pos, const std::string& path) {
  require<IoError>(pos + 4 <= b.size(),
                   "checkpoint '" + path + "' truncated at byte " + std::to_string(pos));
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(b[pos + i]) << (8 * i);
  pos += 4;
  return v;
}

uint64_t read_u64le(const uint8_t* p) {
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(p[i]) << (8 * i);
  return v;
}

}  // namespace

uint32_t crc32_bytes(const uint8_t* data, size_t len, uint32_t seed) {
  static const auto table = [] {
    std::array<uint32_t, 256> t{};
    for (uint32_t i = 0; i < 256; ++i) {
      uint32_t c = i;
      for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
      t[i] = c;
    }
    return t;
  }();
  uint32_t c = seed ^ 0xFFFFFFFFu;
  for (size_t i = 0; i < len; ++i) c = table[(c ^ data[i]) & 0xFF] ^ (c >> 8);
  return c ^ 0xFFFFFFFFu;
}

CheckpointEntry CheckpointEntry::from_floats(const std::string& name, const Shape& shape,
                                             const float* data, size_t count) {
  require<ShapeError>(numel(shape) == count, "checkpoint entry '" + name + "' shape mismatch");
  CheckpointEntry e;
  e.name = name;
  e.shape = shape;
  e.dtype = kDtypeF32;
  e.bytes.resize(count * 4);
  static_assert(sizeof(float) == 4);
  std::memcpy(e.bytes.data(), data, count * 4);
  return e;
}

CheckpointEntry CheckpointEntry::from_bytes(const std::string& name,
                                            std::vector<uint8_t> payload) {
  CheckpointEntry e;
  e.name = name;
  e.shape = {std::max<size_t>(payload.size(), 1)};
  e.dtype = kDtypeBytes;
  e.bytes = std::move(payload);
  if (e.bytes.empty()) e.bytes.push_back(0);
  return e;
}

std::vector<float> CheckpointEntry::floats() const {
  require<DataError>(dtype == kDtypeF32, "checkpoint entry '" + name + "' is not f32");
  std::vector<float> out(bytes.size() / 4);
  std::memcpy(out.data(), bytes.data(), bytes.size());
  return out;
}

const CheckpointEntry* CheckpointFile::find(const std::string& name) const {
  for (const auto& e : entries)
    if (e.name == name) return &e;
  return nullptr;
}

const CheckpointEntry& CheckpointFile::at(const std::string& name) const {
  const auto* e = find(name);
  require<DataError>(e != nullptr, "checkpoint is missing entry '" + name + "'");
  return *e;
}

void write_checkpoint_file(const std::string& path,
                           const std::vector<CheckpointEntry>& entries) {
  std::vector<uint8_t> out;
  out.insert(out.end(), {'L', 'H', 'D', 'F'});
  append_u16(out, kCheckpointVersion);
  append_u32(out, static_cast<uint32_t>(entries.size()));
  for (const auto& e : entries) {
    require<DataError>(e.name.size() <= 0xFFFF, "checkpoint entry name too long");
    append_u16(out, static_cast<uint16_t>(e.name.size()));
    out.insert(out.end(), e.name.begin(), e.name.end());
    require<DataError>(e.shape.size() <= 0xFF, "checkpoint entry rank too large");
    out.push_back(static_cast<uint8_t>(e.shape.size()));
    for (size_t d : e.shape) append_u32(out, static_cast<uint32_t>(d));
    out.push_back(e.dtype);
    out.insert(out.end(), e.bytes.begin(), e.bytes.end());
  }
  append_u32(out, crc32_bytes(out.data(), out.size()));

  std::ofstream f(path, std::ios::binary);
  require<IoError>(f.good(), "cannot create checkpoint '" + path + "'");
  f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
  require<IoError>(f.good(), "short write on checkpoint '" + path + "'");
}

CheckpointFile read_checkpoint_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  require<IoError>(f.good(), "cannot open checkpoint '" + path + "'");
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                             std::istreambuf_iterator<char>());
  require<IoError>(bytes.size() >= 14, "checkpoint '" + path + "' truncated at byte " +
                                           std::to_string(bytes.size()));
  require<DataError>(std::memcmp(bytes.data(), "LHDF", 4) == 0,
                     "'" + path + "' is not a checkpoint file");

  uint32_t stored_crc = 0;
  for (int i = 0; i < 4; ++i)
    stored_crc |= static_cast<uint32_t>(bytes[bytes.size() - 4 + i]) << (8 * i);
  uint32_t actual = crc32_bytes(bytes.data(), bytes.size() - 4);
  require<IoError>(stored_crc == actual,
                   "checkpoint '" + path + "' integrity error: CRC mismatch at byte " +
                       std::to_string(bytes.size() - 4));

  size_t pos = 4;
  CheckpointFile ckpt;
  ckpt.version = take_u16(bytes, pos, path);
  require<DataError>(ckpt.version == kCheckpointVersion,
                     "unsupported checkpoint version " + std::to_string(ckpt.version) +
                         " in '" + path + "' (expected " + std::to_string(kCheckpointVersion) +
                         ")");
  uint32_t count = take_u32(bytes, pos, path);
  size_t payload_end = bytes.size() - 4;
  for (uint32_t i = 0; i < count; ++i) {
    CheckpointEntry e;
    uint16_t name_len = take_u16(bytes, pos, path);
    require<IoError>(pos + name_len <= payload_end,
                     "checkpoint '" + path + "' truncated at byte " + std::to_string(pos));
    e.name.assign(reinterpret_cast<const char*>(bytes.data() + pos), name_len);
    pos += name_len;
    require<IoError>(pos + 1 <= payload_end,
                     "checkpoint '" + path + "' truncated at byte " + std::to_string(pos));
    uint8_t rank = bytes[pos++];
    for (uint8_t r = 0; r < rank; ++r) e.shape.push_back(take_u32(bytes, pos, path));
    require<IoError>(pos + 1 <= payload_end,
                     "checkpoint '" + path + "' truncated at byte " + std::to_string(pos));
    e.dtype = bytes[pos++];
    size_t payload = numel(e.shape) * (e.dtype == kDtypeF32 ? 4 : 1);
    require<IoError>(pos + payload <= payload_end,
                     "checkpoint '" + path + "' truncated at byte " + std::to_string(pos));
    e.bytes.assign(bytes.begin() + static_cast<long>(pos),
                   bytes.begin() + static_cast<long>(pos + payload));
    pos += payload;
    ckpt.entries.push_back(std::move(e));
  }
  require<IoError>(pos == payload_end, "checkpoint '" + path + "' has " +
                                           std::to_string(payload_end - pos) +
                                           " trailing bytes at offset " + std::to_string(pos));
  return ckpt;
}

void save_train_checkpoint(const std::string& path, LhdffModel& model,
                           const AdamOptimizer<float>* opt, const TrainCounters& counters,
                           uint64_t vocab_hash, const std::string& config_text) {
  std::vector<CheckpointEntry> entries;
  for (auto& [name, t] : model.registry().params)
    entries.push_back(
        CheckpointEntry::from_floats("param/" + name, t.shape(), t.data().data(), t.size()));
  for (auto& [name, t] : model.registry().buffers)
    entries.push_back(
        CheckpointEntry::from_floats("buffer/" + name, t.shape(), t.data().data(), t.size()));
  if (opt) {
    for (const auto& slot : opt->slots()) {
      entries.push_back(CheckpointEntry::from_floats("adam/m/" + slot.name, slot.param.shape(),
                                                     slot.m.data(), slot.m.size()));
      entries.push_back(CheckpointEntry::from_floats("adam/v/" + slot.name, slot.param.shape(),
                                                     slot.v.data(), slot.v.size()));
    }
  }
  std::vector<uint8_t> counter_bytes;
  append_u64(counter_bytes, static_cast<uint64_t>(counters.next_epoch));
  append_u64(counter_bytes, static_cast<uint64_t>(counters.global_step));
  append_u64(counter_bytes, static_cast<uint64_t>(counters.adam_t));
  entries.push_back(CheckpointEntry::from_bytes("meta/counters", counter_bytes));
  std::vector<uint8_t> hash_bytes;
  append_u64(hash_bytes, vocab_hash);
  entries.push_back(CheckpointEntry::from_bytes("meta/vocab_hash", hash_bytes));
  entries.push_back(CheckpointEntry::from_bytes(
      "meta/config", std::vector<uint8_t>(config_text.begin(), config_text.end())));
  write_checkpoint_file(path, entries);
}

namespace {

RestoredCheckpoint extract_meta(const CheckpointFile& ckpt, const std::string& path) {
  RestoredCheckpoint out;
  const auto& counters = ckpt.at("meta/counters");
  require<DataError>(counters.bytes.size() == 24, "malformed counters in '" + path + "'");
  out.counters.next_epoch = static_cast<int64_t>(read_u64le(counters.bytes.data()));
  out.counters.global_step = static_cast<int64_t>(read_u64le(counters.bytes.data() + 8));
  out.counters.adam_t = static_cast<int64_t>(read_u64le(counters.bytes.data() + 16));
  const auto& hash = ckpt.at("meta/vocab_hash");
  require<DataError>(hash.bytes.size() == 8, "malformed vocab hash in '" + path + "'");
  out.vocab_hash = read_u64le(hash.bytes.data());
  const auto& cfg = ckpt.at("meta/config");
  out.config_text.assign(cfg.bytes.begin(), cfg.bytes.end());
  return out;
}

}  // namespace

RestoredCheckpoint peek_checkpoint(const std::string& path) {
  return extract_meta(read_checkpoint_file(path), path);
}

RestoredCheckpoint restore_train_checkpoint(const std::string& path, LhdffModel& model,
                                            AdamOptimizer<float>* opt,
                                            uint64_t expected_vocab_hash) {
  auto ckpt = read_checkpoint_file(path);
  auto meta = extract_meta(ckpt, path);
  if (expected_vocab_hash != 0)
    require<DataError>(meta.vocab_hash == expected_vocab_hash,
                       "checkpoint '" + path + "' was trained with a different vocabulary");

  auto copy_into = [&](const std::string& key, TensorT<float>& dst) {
    const auto& e = ckpt.at(key);
    require<ShapeError>(e.shape == dst.shape(),
                        "checkpoint entry '" + key + "' has shape " + shape_str(e.shape) +
                            ", model expects " + shape_str(dst.shape()));
    auto vals = e.floats();
    std::copy(vals.begin(), vals.end(), dst.mutable_data().begin());
  };
  for (auto& [name, t] : model.registry().params) copy_into("param/" + name, t);
  for (auto& [name, t] : model.registry().buffers) copy_into("buffer/" + name, t);
  if (opt) {
    for (auto& slot : opt->slots()) {
      auto m = ckpt.at("adam/m/" + slot.name).floats();
      auto v = ckpt.at("adam/v/" + slot.name).floats();
      require<ShapeError>(m.size() == slot.m.size() && v.size() == slot.v.size(),
                          "optimizer state size mismatch for '" + slot.name + "'");
      slot.m = std::move(m);
      slot.v = std::move(v);
    }
    opt->set_step_count(meta.counters.adam_t);
  }
  return meta;
}

}  // namespace lhdff
