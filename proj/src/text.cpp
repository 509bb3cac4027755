#include "lhdff/text.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

namespace lhdff {

std::vector<std::string> normalize_caption(const std::string& text) {
  std::string cleaned;
  cleaned.reserve(text.size());
  for (unsigned char c : text) {
    if (c >= 'A' && c <= 'Z')
      cleaned.push_back(static_cast<char>(c - 'A' + 'a'));
    else if ((c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == '\'')
      cleaned.push_back(static_cast<char>(c));
    else if (c == ' ' || c == '\t' || c == '\n' || c == '\r')
      cleaned.push_back(' ');
    // anything else is stripped
  }
  std::vector<std::string> tokens;
  std::istringstream is(cleaned);
  std::string tok;
  while (is >> tok) tokens.push_back(tok);
  require<DataError>(!tokens.empty(), "caption '" + text + "' is empty after normalization");
  return tokens;
}

Vocabulary Vocabulary::build(const std::vector<std::vector<std::string>>& corpus,
                             size_t min_count) {
  require<DataError>(!corpus.empty(), "cannot build a vocabulary from an empty corpus");
  std::map<std::string, size_t> freq;
  for (const auto& caption : corpus)
    for (const auto& tok : caption) ++freq[tok];

  std::vector<std::pair<std::string, size_t>> kept(freq.begin(), freq.end());
  std::erase_if(kept, [&](const auto& p) { return p.second < min_count; });
  std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });

  Vocabulary v;
  v.tokens_ = {"<pad>", "<sos>", "<eos>", "<unk>"};
  for (auto& [tok, n] : kept) v.tokens_.push_back(tok);
  v.rebuild_index();
  return v;
}

void Vocabulary::rebuild_index() {
  index_.clear();
  for (size_t i = 0; i < tokens_.size(); ++i) index_[tokens_[i]] = static_cast<int32_t>(i);
}

int32_t Vocabulary::id(const std::string& token) const {
  auto it = index_.find(token);
  return it == index_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::token(int32_t id) const {
  require<IndexError>(id >= 0 && static_cast<size_t>(id) < tokens_.size(),
                      "vocabulary id " + std::to_string(id) + " out of range");
  return tokens_[static_cast<size_t>(id)];
}

void Vocabulary::save(const std::string& path) const {
  std::ofstream f(path, std::ios::binary);
  require<IoError>(f.good(), "cannot create '" + path + "'");
  // one non-reserved token per line; line number == id - 4
  for (size_t i = kReserved; i < tokens_.size(); ++i) f << tokens_[i] << '\n';
  require<IoError>(f.good(), "short write on '" + path + "'");
}

Vocabulary Vocabulary::load(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  require<IoError>(f.good(), "cannot open '" + path + "'");
  Vocabulary v;
  v.tokens_ = {"<pad>", "<sos>", "<eos>", "<unk>"};
  std::string line;
  while (std::getline(f, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) v.tokens_.push_back(line);
  }
  v.rebuild_index();
  return v;
}

uint64_t Vocabulary::hash() const {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& tok : tokens_) {
    for (char c : tok) {
      h ^= static_cast<uint8_t>(c);
      h *= 0x100000001b3ULL;
    }
    h ^= static_cast<uint8_t>('\n');
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::vector<int32_t> encode_caption(const std::vector<std::string>& tokens,
                                    const Vocabulary& vocab, size_t l_max, size_t* truncations) {
  require<DataError>(!tokens.empty(), "cannot encode an empty caption");
  require<ConfigError>(l_max >= 3, "encode_caption: l_max must allow <sos>, one token, <eos>");
  size_t keep = tokens.size();
  if (keep > l_max - 2) {
    keep = l_max - 2;
    if (truncations) ++*truncations;
  }
  std::vector<int32_t> row(l_max, Vocabulary::kPad);
  row[0] = Vocabulary::kSos;
  for (size_t i = 0; i < keep; ++i) row[i + 1] = vocab.id(tokens[i]);
  row[keep + 1] = Vocabulary::kEos;
  return row;
}

std::vector<std::string> decode_tokens(const std::vector<int32_t>& ids, const Vocabulary& vocab) {
  std::vector<std::string> out;
  for (int32_t id : ids) {
    if (vocab.is_special(id)) continue;
    out.push_back(vocab.token(id));
  }
  return out;
}

CaptionBatch CaptionBatch::from_token_lists(const std::vector<std::vector<std::string>>& captions,
                                            const Vocabulary& vocab, size_t l_max,
                                            size_t* truncations) {
  CaptionBatch batch;
  batch.batch = captions.size();
  batch.length = l_max;
  batch.vocab = &vocab;
  batch.ids.reserve(captions.size() * l_max);
  for (const auto& caption : captions) {
    auto row = encode_caption(caption, vocab, l_max, truncations);
    batch.lengths.push_back(
        static_cast<int32_t>(std::min(caption.size(), l_max - 2) + 2));
    batch.ids.insert(batch.ids.end(), row.begin(), row.end());
  }
  return batch;
}

std::vector<std::pair<size_t, size_t>> DatasetManifest::training_pairs() const {
  std::vector<std::pair<size_t, size_t>> pairs;
  for (size_t i = 0; i < items.size(); ++i)
    for (size_t c = 0; c < items[i].captions.size(); ++c) pairs.emplace_back(i, c);
  return pairs;
}

std::vector<std::vector<std::string>> parse_csv(const std::string& content) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string field;
  bool quoted = false;
  bool field_started = false;
  size_t i = 0;
  auto end_field = [&]() {
    row.push_back(field);
    field.clear();
    field_started = false;
  };
  auto end_row = [&]() {
    end_field();
    if (row.size() > 1 || !row[0].empty()) rows.push_back(row);
    row.clear();
  };
  while (i < content.size()) {
    char c = content[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < content.size() && content[i + 1] == '"') {
          field.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field.push_back(c);
      }
    } else if (c == '"' && !field_started) {
      quoted = true;
      field_started = true;
    } else if (c == ',') {
      end_field();
    } else if (c == '\n') {
      if (!field.empty() && field.back() == '\r') field.pop_back();
      end_row();
    } else {
      field.push_back(c);
      field_started = true;
    }
    ++i;
  }
  if (!field.empty() && field.back() == '\r') field.pop_back();
  if (!field.empty() || !row.empty()) end_row();
  require<DataError>(!quoted, "CSV ends inside a quoted field");
  return rows;
}

DatasetManifest load_clotho_csv(const std::string& csv_path, const std::string& audio_dir) {
  std::ifstream f(csv_path, std::ios::binary);
  require<IoError>(f.good(), "cannot open '" + csv_path + "'");
  std::stringstream buf;
  buf << f.rdbuf();
  auto rows = parse_csv(buf.str());
  require<DataError>(!rows.empty(), "'" + csv_path + "' is empty");

  const auto& header = rows[0];
  bool ok = !header.empty() && header[0] == "file_name" && header.size() >= 2 &&
            header.size() <= 6;
  for (size_t c = 1; ok && c < header.size(); ++c)
    ok = header[c] == "caption_" + std::to_string(c);
  require<DataError>(ok, "'" + csv_path +
                             "' header mismatch: expected file_name,caption_1[,...,caption_5]");

  DatasetManifest manifest;
  for (size_t r = 1; r < rows.size(); ++r) {
    const auto& row = rows[r];
    require<DataError>(row.size() == header.size(),
                       "'" + csv_path + "' row " + std::to_string(r) + " has " +
                           std::to_string(row.size()) + " fields, header has " +
                           std::to_string(header.size()));
    ManifestItem item;
    item.audio_path = (std::filesystem::path(audio_dir) / row[0]).string();
    for (size_t c = 1; c < row.size(); ++c) {
      if (row[c].empty()) {
        ++manifest.empty_caption_warnings;
        continue;
      }
      item.captions.push_back(row[c]);
    }
    if (!std::filesystem::exists(item.audio_path)) {
      manifest.skipped.push_back(item.audio_path);
      continue;
    }
    require<DataError>(!item.captions.empty(),
                       "row " + std::to_string(r) + " of '" + csv_path + "' has no captions");
    manifest.items.push_back(std::move(item));
  }
  return manifest;
}

}  // namespace lhdff
