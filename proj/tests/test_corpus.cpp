// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <filesystem>
#include <numeric>

#include "arec/corpus.hpp"
#include "arec/error.hpp"

namespace corpus = arec::corpus;
using arec::events::EventSequence;

namespace {

EventSequence iota_tokens(std::size_t n) {
  EventSequence t(n);
  std::iota(t.begin(), t.end(), 0);
  for (auto& v : t) v %= 388;
  return t;
}

}  // namespace

TEST(Windows, DropsRemainder) {
  const auto w = corpus::make_training_windows(iota_tokens(600), 256);
  ASSERT_EQ(w.size(), 2u);
  EXPECT_EQ(w[0].size(), 256u);
  EXPECT_EQ(w[1].front(), 256);
  EXPECT_EQ(corpus::make_training_windows(iota_tokens(256), 256).size(), 1u);
}

TEST(Windows, Errors) {
  try {
    corpus::make_training_windows(iota_tokens(10), 256);
    FAIL();
  } catch (const arec::Error& e) {
    EXPECT_EQ(e.code(), arec::ErrorCode::EmptyInput);
  }
  EXPECT_THROW(corpus::make_training_windows(iota_tokens(10), 1), arec::Error);
}

TEST(BuildCorpus, WorksAndLimits) {
  std::vector<corpus::Source> sources = {{"dir/a.mid", "rh1", iota_tokens(100)},
                                         {"b.mid", "rh2", iota_tokens(5)},
                                         {"c.mid", "rh1", iota_tokens(64)}};
  const auto c = corpus::build_corpus(sources, 16, 3);
  ASSERT_EQ(c.size(), 6u);
  EXPECT_EQ(c.works[0].work_id, "a:0");
  EXPECT_EQ(c.works[2].offset, 32u);
  EXPECT_EQ(c.works[3].work_id, "c:0");
  EXPECT_EQ(c.works[3].rightsholder_id, "rh1");
  EXPECT_THROW(corpus::build_corpus({{"x.mid", "r", iota_tokens(3)}}, 16), arec::Error);
}

TEST(TokenFile, RoundTripAndLayout) {
  const EventSequence tokens = {0, 387, 256, 60};
  const auto bytes = corpus::encode_tokens(tokens);
  ASSERT_EQ(bytes.size(), 5u + 8u + 2u * tokens.size());
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 5), "AREC1");
  EXPECT_EQ(bytes[5], 4);
  EXPECT_EQ(bytes[13 + 2], 387 & 0xff);
  EXPECT_EQ(bytes[13 + 3], 387 >> 8);
  EXPECT_EQ(corpus::decode_tokens(bytes), tokens);

  auto bad = bytes;
  bad[0] = 'X';
  EXPECT_THROW(corpus::decode_tokens(bad), arec::Error);
  auto short_file = bytes;
  short_file.pop_back();
  EXPECT_THROW(corpus::decode_tokens(short_file), arec::Error);
  EXPECT_THROW(corpus::encode_tokens(EventSequence{400}), arec::Error);
}

TEST(CorpusFile, SaveLoadAndSubset) {
  const auto c = corpus::build_corpus({{"a.mid", "rh1", iota_tokens(40)}, {"b.mid", "rh2", iota_tokens(30)}}, 10);
  const auto dir = std::filesystem::temp_directory_path() / "arec_corpus_test";
  std::filesystem::create_directories(dir);
  corpus::save_corpus(c, (dir / "c").string());
  const auto back = corpus::load_corpus((dir / "c").string());
  EXPECT_EQ(back.windows, c.windows);
  EXPECT_EQ(back.window_len, 10);
  ASSERT_EQ(back.works.size(), c.works.size());
  EXPECT_EQ(back.works[5].work_id, "b:1");
  EXPECT_EQ(back.works[5].rightsholder_id, "rh2");
  EXPECT_EQ(back.content_hash(), c.content_hash());

  std::vector<bool> keep(c.size(), false);
  keep[1] = keep[4] = true;
  const auto sub = c.subset(keep);
  ASSERT_EQ(sub.size(), 2u);
  EXPECT_EQ(sub.works[1].work_id, "b:0");
  EXPECT_NE(sub.content_hash(), c.content_hash());
  std::filesystem::remove_all(dir);
}
