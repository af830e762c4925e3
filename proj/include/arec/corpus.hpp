// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "arec/events.hpp"

namespace arec::corpus {

/// Non-overlapping consecutive windows; a short trailing remainder is dropped.
/// Throws EmptyInput when events.size() < window_len.
std::vector<events::EventSequence> make_training_windows(const events::EventSequence& events,
                                                         int window_len);

struct WorkInfo {
  std::string work_id;
  std::string rightsholder_id;
  std::string source_file;
  std::size_t offset = 0;  // token offset within the source's event stream
};

/// Training works: equal-length windows plus rightsholder metadata.
struct Corpus {
  int window_len = 0;
  std::vector<events::EventSequence> windows;
  std::vector<WorkInfo> works;

  std::size_t size() const noexcept { return windows.size(); }
  std::uint64_t content_hash() const;
  /// Works whose mask entry is true, in corpus order.
  Corpus subset(const std::vector<bool>& keep) const;
};

/// One tokenized source piece.
struct Source {
  std::string source_file;
  std::string rightsholder_id;
  events::EventSequence events;
};

/// Windows of every source in order, at most `max_windows_per_source` each
/// (0 = unlimited). Work ids are "<stem>:<window index>". Sources shorter
/// than one window are skipped; throws EmptyCorpus if nothing remains.
Corpus build_corpus(const std::vector<Source>& sources, int window_len, int max_windows_per_source = 0);

// AREC1 token file:
//   bytes 0..4   "AREC1"
//   bytes 5..12  token count, uint64 little-endian
//   then         tokens, uint16 little-endian each
std::vector<std::uint8_t> encode_tokens(std::span<const events::Token> tokens);
std::vector<events::Token> decode_tokens(std::span<const std::uint8_t> bytes);

/// Writes <stem>.arec (concatenated windows) and <stem>.json (manifest).
void save_corpus(const Corpus& corpus, const std::string& stem);
Corpus load_corpus(const std::string& stem);

}  // namespace arec::corpus
