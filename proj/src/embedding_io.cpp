#include "lhdff/embedding_io.hpp"

#include <cstring>
#include <fstream>

#include "lhdff/common.hpp"

namespace lhdff {

namespace {
constexpr uint16_t kWembVersion = 1;
}

void write_embedding_table(const std::string& path, const std::vector<float>& values,
                           uint32_t vocab, uint32_t d) {
  require<ShapeError>(values.size() == static_cast<size_t>(vocab) * d,
                      "embedding table payload does not match V x d");
  std::ofstream f(path, std::ios::binary);
  require<IoError>(f.good(), "cannot create '" + path + "'");
  f.write("WEMB", 4);
  uint8_t hdr[10];
  hdr[0] = static_cast<uint8_t>(kWembVersion);
  hdr[1] = static_cast<uint8_t>(kWembVersion >> 8);
  for (int i = 0; i < 4; ++i) hdr[2 + i] = static_cast<uint8_t>(vocab >> (8 * i));
  for (int i = 0; i < 4; ++i) hdr[6 + i] = static_cast<uint8_t>(d >> (8 * i));
  f.write(reinterpret_cast<char*>(hdr), 10);
  f.write(reinterpret_cast<const char*>(values.data()),
          static_cast<std::streamsize>(values.size() * 4));
  require<IoError>(f.good(), "short write on '" + path + "'");
}

std::vector<float> read_embedding_table(const std::string& path, uint32_t* vocab, uint32_t* d) {
  std::ifstream f(path, std::ios::binary);
  require<IoError>(f.good(), "cannot open '" + path + "'");
  char magic[4];
  uint8_t hdr[10];
  f.read(magic, 4);
  f.read(reinterpret_cast<char*>(hdr), 10);
  require<DataError>(f.good() && std::memcmp(magic, "WEMB", 4) == 0,
                     "'" + path + "' is not an embedding table file");
  uint16_t version = static_cast<uint16_t>(hdr[0] | (hdr[1] << 8));
  require<DataError>(version == kWembVersion,
                     "unsupported embedding table version " + std::to_string(version));
  uint32_t v = 0, dd = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(hdr[2 + i]) << (8 * i);
  for (int i = 0; i < 4; ++i) dd |= static_cast<uint32_t>(hdr[6 + i]) << (8 * i);
  std::vector<float> values(static_cast<size_t>(v) * dd);
  f.read(reinterpret_cast<char*>(values.data()),
         static_cast<std::streamsize>(values.size() * 4));
  require<IoError>(f.good(), "truncated embedding table '" + path + "'");
  *vocab = v;
  *d = dd;
  return values;
}

}  // namespace lhdff
