#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "lhdff/micro_dataset.hpp"
#include "lhdff/text.hpp"

using namespace lhdff;

namespace {

std::string temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / name;
  std::filesystem::create_directories(p);
  return p.string();
}

std::string file_bytes(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(f)), {});
}

}  // namespace

TEST_CASE("normalize_caption examples") {
  CHECK(normalize_caption("A Dog Barks!") == std::vector<std::string>{"a", "dog", "barks"});
  CHECK(normalize_caption("rain, rain,   RAIN.") ==
        std::vector<std::string>{"rain", "rain", "rain"});
  CHECK(normalize_caption("it's 3 o'clock") ==
        std::vector<std::string>{"it's", "3", "o'clock"});
  CHECK_THROWS_AS(normalize_caption("!!! ..."), DataError);
}

TEST_CASE("build_vocab: counts, reserved ids, determinism") {
  std::vector<std::vector<std::string>> corpus{{"a", "dog"}, {"a", "cat"}};
  auto v = Vocabulary::build(corpus, 1);
  CHECK(v.size() == 7);  // 4 reserved + {a, dog, cat}
  CHECK(v.token(Vocabulary::kPad) == "<pad>");
  CHECK(v.token(Vocabulary::kSos) == "<sos>");
  CHECK(v.token(Vocabulary::kEos) == "<eos>");
  CHECK(v.token(Vocabulary::kUnk) == "<unk>");
  CHECK(v.id("a") == 4);    // most frequent first
  CHECK(v.id("cat") == 5);  // then lexicographic among ties
  CHECK(v.id("dog") == 6);
  CHECK(v.id("zebra") == Vocabulary::kUnk);

  auto high_min = Vocabulary::build(corpus, 10);
  CHECK(high_min.size() == 4);

  auto rebuilt = Vocabulary::build(corpus, 1);
  CHECK(rebuilt.hash() == v.hash());
  for (const char* tok : {"a", "cat", "dog"}) CHECK(rebuilt.id(tok) == v.id(tok));

  CHECK_THROWS_AS(Vocabulary::build({}, 1), DataError);
}

TEST_CASE("encode_caption layout, unk, truncation") {
  auto v = Vocabulary::build({{"a", "dog"}}, 1);
  auto row = encode_caption({"a", "dog"}, v, 6);
  CHECK(row == std::vector<int32_t>{1, v.id("a"), v.id("dog"), 2, 0, 0});

  auto unk_row = encode_caption({"unseen"}, v, 5);
  CHECK(unk_row == std::vector<int32_t>{1, 3, 2, 0, 0});

  size_t truncations = 0;
  auto trunc = encode_caption({"a", "dog", "a", "dog", "a"}, v, 4, &truncations);
  CHECK(truncations == 1);
  CHECK(trunc == std::vector<int32_t>{1, v.id("a"), v.id("dog"), 2});

  CHECK_THROWS_AS(encode_caption({}, v, 6), DataError);
}

TEST_CASE("round trip: decode(encode(tokens)) == tokens for in-vocab tokens") {
  auto v = Vocabulary::build({{"a", "dog", "barks", "loudly"}}, 1);
  RngStream rng(5);
  std::vector<std::string> pool{"a", "dog", "barks", "loudly"};
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<std::string> tokens;
    size_t n = 1 + rng.below(8);
    for (size_t i = 0; i < n; ++i) tokens.push_back(pool[rng.below(pool.size())]);
    auto row = encode_caption(tokens, v, 12);
    CHECK(decode_tokens(row, v) == tokens);
  }
}

TEST_CASE("caption batch rows satisfy the sos/eos/pad invariant") {
  auto v = Vocabulary::build({{"a", "dog", "cat"}}, 1);
  auto batch = CaptionBatch::from_token_lists({{"a", "dog"}, {"cat"}}, v, 8);
  CHECK(batch.batch == 2);
  CHECK(batch.length == 8);
  for (size_t b = 0; b < batch.batch; ++b) {
    CHECK(batch.at(b, 0) == Vocabulary::kSos);
    int eos_count = 0;
    bool after_eos = false;
    for (size_t l = 0; l < batch.length; ++l) {
      if (batch.at(b, l) == Vocabulary::kEos) {
        ++eos_count;
        after_eos = true;
      } else if (after_eos) {
        CHECK(batch.at(b, l) == Vocabulary::kPad);
      }
      CHECK(batch.at(b, l) < static_cast<int32_t>(v.size()));
    }
    CHECK(eos_count == 1);
    CHECK(batch.lengths[b] <= static_cast<int32_t>(batch.length));
  }
}

TEST_CASE("vocabulary file round trip, one token per line") {
  auto v = Vocabulary::build({{"rain", "on", "a", "roof"}}, 1);
  auto path = temp_dir("vocab_test") + "/vocab.txt";
  v.save(path);
  auto loaded = Vocabulary::load(path);
  CHECK(loaded.size() == v.size());
  CHECK(loaded.hash() == v.hash());
  // line number == id - 4
  std::ifstream f(path);
  std::string line;
  int32_t id = Vocabulary::kReserved;
  while (std::getline(f, line)) {
    CHECK(v.token(id) == line);
    ++id;
  }
}

TEST_CASE("clotho csv: 5 captions, training pairs expand 3x5") {
  auto dir = temp_dir("csv_test");
  for (int i = 0; i < 3; ++i) {
    std::ofstream w(dir + "/a" + std::to_string(i) + ".wav");
    w << "stub";
  }
  std::ofstream c(dir + "/caps.csv");
  c << "file_name,caption_1,caption_2,caption_3,caption_4,caption_5\n";
  for (int i = 0; i < 3; ++i)
    c << "a" << i << ".wav,one,two,three,four,five\n";
  c.close();
  auto manifest = load_clotho_csv(dir + "/caps.csv", dir);
  CHECK(manifest.items.size() == 3);
  CHECK(manifest.training_pairs().size() == 15);
  CHECK(manifest.skipped.empty());
}

TEST_CASE("clotho csv: empty caption cell keeps 4 refs with a warning") {
  auto dir = temp_dir("csv_test2");
  {
    std::ofstream w(dir + "/x.wav");
    w << "stub";
  }
  std::ofstream c(dir + "/caps.csv");
  c << "file_name,caption_1,caption_2,caption_3,caption_4,caption_5\n";
  c << "x.wav,one,two,three,,five\n";
  c.close();
  auto manifest = load_clotho_csv(dir + "/caps.csv", dir);
  CHECK(manifest.items.size() == 1);
  CHECK(manifest.items[0].captions.size() == 4);
  CHECK(manifest.empty_caption_warnings == 1);
}

TEST_CASE("clotho csv: missing audio goes to the skip list, bad header is fatal") {
  auto dir = temp_dir("csv_test3");
  {
    std::ofstream c(dir + "/caps.csv");
    c << "file_name,caption_1\n";
    c << "gone.wav,something\n";
  }
  auto manifest = load_clotho_csv(dir + "/caps.csv", dir);
  CHECK(manifest.items.empty());
  CHECK(manifest.skipped.size() == 1);

  {
    std::ofstream c(dir + "/bad.csv");
    c << "filename,text\n";
    c << "a.wav,something\n";
  }
  CHECK_THROWS_AS(load_clotho_csv(dir + "/bad.csv", dir), DataError);
}

TEST_CASE("csv parser: quoting, escapes, embedded commas") {
  auto rows = parse_csv("a,\"b, with comma\",\"quote \"\" inside\"\nnext,1,2\n");
  REQUIRE(rows.size() == 2);
  CHECK(rows[0][1] == "b, with comma");
  CHECK(rows[0][2] == "quote \" inside");
  CHECK(rows[1][0] == "next");
}

TEST_CASE("micro dataset: count, csv shape, loadable") {
  auto dir = temp_dir("micro_a");
  auto ds = generate_micro_dataset(dir, 7, 8);
  CHECK(ds.wav_paths.size() == 8);
  CHECK(ds.captions.size() == 8);
  auto manifest = load_clotho_csv(ds.csv_path, dir);
  CHECK(manifest.items.size() == 8);
  CHECK(manifest.skipped.empty());
  for (const auto& item : manifest.items) CHECK(item.captions.size() == 1);
}

TEST_CASE("micro dataset: same seed gives byte-identical outputs") {
  auto dir1 = temp_dir("micro_b1");
  auto dir2 = temp_dir("micro_b2");
  auto d1 = generate_micro_dataset(dir1, 7, 6);
  auto d2 = generate_micro_dataset(dir2, 7, 6);
  CHECK(file_bytes(d1.csv_path) == file_bytes(d2.csv_path));
  for (size_t i = 0; i < d1.wav_paths.size(); ++i)
    CHECK(file_bytes(d1.wav_paths[i]) == file_bytes(d2.wav_paths[i]));
}

TEST_CASE("micro dataset: different seeds differ but share vocabulary") {
  auto a = generate_micro_dataset(temp_dir("micro_c1"), 7, 12);
  auto b = generate_micro_dataset(temp_dir("micro_c2"), 8, 12);
  CHECK(a.captions != b.captions);
  std::vector<std::vector<std::string>> ca, cb;
  for (auto& s : a.captions) ca.push_back(normalize_caption(s));
  for (auto& s : b.captions) cb.push_back(normalize_caption(s));
  auto va = Vocabulary::build(ca), vb = Vocabulary::build(cb);
  size_t shared = 0;
  for (size_t id = Vocabulary::kReserved; id < va.size(); ++id)
    if (vb.id(va.token(static_cast<int32_t>(id))) != Vocabulary::kUnk) ++shared;
  CHECK(shared >= 4);
}

TEST_CASE("vocabulary is split-isolated") {
  // tokens only in a held-out split must not influence training ids
  std::vector<std::vector<std::string>> train{{"rain", "falls"}, {"wind", "blows"}};
  auto v1 = Vocabulary::build(train);
  std::vector<std::vector<std::string>> train_plus_test = train;
  train_plus_test.push_back({"thunder", "rolls"});
  auto v2 = Vocabulary::build(train);  // rebuilt from the same training split
  CHECK(v1.hash() == v2.hash());
  CHECK(v1.id("thunder") == Vocabulary::kUnk);
}
