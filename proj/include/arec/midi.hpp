// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace arec::midi {

struct Note {
  int pitch = 0;       // 0..127
  int velocity = 1;    // 1..127
  double onset = 0.0;  // seconds
  double offset = 0.0; // seconds, > onset

  bool operator==(const Note&) const = default;
};

/// Notes ordered by (onset, pitch).
struct NoteSequence {
  std::vector<Note> notes;
  int ticks_per_quarter = 480;
  std::string source_path;

  bool operator==(const NoteSequence&) const = default;
};

bool is_valid(const Note& note) noexcept;

/// Sorts by (onset, pitch, offset, velocity). Stable for equal keys.
void sort_notes(std::vector<Note>& notes);

struct ParseOptions {
  // Hold NOTE_OFFs while CC64 is down on the note's channel.
  bool sustain_pedal = false;
};

/// Non-fatal conditions met while parsing.
struct ParseReport {
  std::size_t dangling_note_ons = 0;  // closed at end of track
  std::size_t dropped_degenerate = 0; // zero or negative duration
  std::size_t orphan_note_offs = 0;
  std::size_t skipped_chunks = 0;
};

struct ParseResult {
  NoteSequence sequence;
  ParseReport report;
};

/// Parses a Standard MIDI File (format 0 or 1). Tracks are merged into one
/// timeline; tempo meta events from every track form a global tempo map.
/// Throws arec::Error with MalformedHeader, TruncatedChunk or UnsupportedFormat.
ParseResult parse_midi(std::span<const std::uint8_t> bytes, const ParseOptions& options = {});

/// Convenience overload returning only the notes.
NoteSequence parse_midi_notes(std::span<const std::uint8_t> bytes, const ParseOptions& options = {});

/// Renders notes as a format-0 file at a fixed tempo (default 120 BPM).
std::vector<std::uint8_t> write_midi(const NoteSequence& sequence, int ticks_per_quarter = 480,
                                     std::uint32_t tempo_us_per_quarter = 500000);

std::vector<std::uint8_t> read_file(const std::string& path);
void write_file(const std::string& path, std::span<const std::uint8_t> bytes);

}  // namespace arec::midi
