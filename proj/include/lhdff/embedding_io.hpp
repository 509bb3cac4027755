#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace lhdff {

// External embedding table: {magic "WEMB", version u16, V u32, d u32} followed
// by a row-major little-endian f32 payload. Row i embeds token id i.
void write_embedding_table(const std::string& path, const std::vector<float>& values,
                           uint32_t vocab, uint32_t d);
std::vector<float> read_embedding_table(const std::string& path, uint32_t* vocab, uint32_t* d);

}  // namespace lhdff
