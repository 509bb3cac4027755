#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lhdff/adam.hpp"
#include "lhdff/common.hpp"
#include "lhdff/model.hpp"

namespace lhdff {

// Checkpoint container file:
//   header  {magic "LHDF", version u16, tensor count u32}
//   tensor  {name length u16, name bytes, rank u8, extents u32 x rank,
//            dtype u8, payload little-endian}
//   footer  CRC32 of all preceding bytes
// dtype 0 = f32 (parameters, buffers, optimizer moments); dtype 1 = raw bytes
// (counters, vocabulary hash, config snapshot).
constexpr uint16_t kCheckpointVersion = 1;
constexpr uint8_t kDtypeF32 = 0;
constexpr uint8_t kDtypeBytes = 1;

struct CheckpointEntry {
  std::string name;
  Shape shape;
  uint8_t dtype = kDtypeF32;
  std::vector<uint8_t> bytes;

  static CheckpointEntry from_floats(const std::string& name, const Shape& shape,
                                     const float* data, size_t count);
  static CheckpointEntry from_bytes(const std::string& name, std::vector<uint8_t> payload);
  std::vector<float> floats() const;
};

struct CheckpointFile {
  uint16_t version = kCheckpointVersion;
  std::vector<CheckpointEntry> entries;

  const CheckpointEntry* find(const std::string& name) const;
  const CheckpointEntry& at(const std::string& name) const;
};

void write_checkpoint_file(const std::string& path, const std::vector<CheckpointEntry>& entries);
CheckpointFile read_checkpoint_file(const std::string& path);

uint32_t crc32_bytes(const uint8_t* data, size_t len, uint32_t seed = 0);

// -- training-state checkpoints ---------------------------------------------

struct TrainCounters {
  int64_t next_epoch = 0;   // first epoch not yet run
  int64_t global_step = 0;  // optimizer steps taken
  int64_t adam_t = 0;
};

void save_train_checkpoint(const std::string& path, LhdffModel& model,
                           const AdamOptimizer<float>* opt, const TrainCounters& counters,
                           uint64_t vocab_hash, const std::string& config_text);

struct RestoredCheckpoint {
  TrainCounters counters;
  uint64_t vocab_hash = 0;
  std::string config_text;
};

// Restores parameters/buffers into an already-constructed model (and Adam
// moments into the optimizer when given). A nonzero expected_vocab_hash must
// match the stored one.
RestoredCheckpoint restore_train_checkpoint(const std::string& path, LhdffModel& model,
                                            AdamOptimizer<float>* opt,
                                            uint64_t expected_vocab_hash = 0);

// Reads only the embedded metadata (config snapshot, counters, vocab hash).
RestoredCheckpoint peek_checkpoint(const std::string& path);

}  // namespace lhdff
