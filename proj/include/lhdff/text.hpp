#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "lhdff/common.hpp"

namespace lhdff {

// Lowercase, keep only [a-z0-9'] and spaces, split on whitespace.
// Throws DataError when nothing survives.
std::vector<std::string> normalize_caption(const std::string& text);

class Vocabulary {
 public:
  static constexpr int32_t kPad = 0;
  static constexpr int32_t kSos = 1;
  static constexpr int32_t kEos = 2;
  static constexpr int32_t kUnk = 3;
  static constexpr int32_t kReserved = 4;

  // Ids are dense; non-reserved tokens ordered by frequency desc, then
  // lexicographic. Tokens below min_count map to <unk>.
  static Vocabulary build(const std::vector<std::vector<std::string>>& corpus,
                          size_t min_count = 1);

  size_t size() const { return tokens_.size(); }
  int32_t id(const std::string& token) const;
  const std::string& token(int32_t id) const;
  bool is_special(int32_t id) const { return id >= 0 && id < kReserved; }

  void save(const std::string& path) const;
  static Vocabulary load(const std::string& path);

  // FNV-1a over the token list; used to pair checkpoints with vocabularies.
  uint64_t hash() const;

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int32_t> index_;

  void rebuild_index();
};

// [<sos>, ids..., <eos>, <pad>...] of length l_max. Over-long captions are
// truncated to fit; *truncations is bumped when that happens.
std::vector<int32_t> encode_caption(const std::vector<std::string>& tokens,
                                    const Vocabulary& vocab, size_t l_max,
                                    size_t* truncations = nullptr);

// Inverse of encode for in-vocabulary tokens; specials are dropped.
std::vector<std::string> decode_tokens(const std::vector<int32_t>& ids, const Vocabulary& vocab);

struct CaptionBatch {
  size_t batch = 0;
  size_t length = 0;              // padded row length
  std::vector<int32_t> ids;       // batch x length, row-major
  std::vector<int32_t> lengths;   // tokens incl. <sos>/<eos>, per row
  const Vocabulary* vocab = nullptr;

  int32_t at(size_t b, size_t l) const { return ids[b * length + l]; }

  static CaptionBatch from_token_lists(const std::vector<std::vector<std::string>>& captions,
                                       const Vocabulary& vocab, size_t l_max,
                                       size_t* truncations = nullptr);
};

struct ManifestItem {
  std::string audio_path;
  std::vector<std::string> captions;  // raw reference strings, >= 1
};

struct DatasetManifest {
  std::vector<ManifestItem> items;
  std::string split;
  std::vector<std::string> skipped;  // audio paths that failed to resolve
  size_t empty_caption_warnings = 0;

  // (item, caption index) pairs: each clip pairs with each of its captions.
  std::vector<std::pair<size_t, size_t>> training_pairs() const;
};

// Header must be file_name,caption_1[,...,caption_5]. Rows whose audio file is
// missing land in the skip list; empty caption cells are dropped with a
// warning count.
DatasetManifest load_clotho_csv(const std::string& csv_path, const std::string& audio_dir);

// Minimal CSV reader: quoted fields, embedded commas/newlines, "" escapes.
std::vector<std::vector<std::string>> parse_csv(const std::string& content);

}  // namespace lhdff
