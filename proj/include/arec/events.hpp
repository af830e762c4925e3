// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "arec/midi.hpp"

namespace arec::events {

using Token = int;
using EventSequence = std::vector<Token>;

enum class EventKind { NoteOn, NoteOff, TimeShift, Velocity };

/// Index ranges of the 388-event performance vocabulary.
///
///   [0, 128)    NOTE_ON pitch
///   [128, 256)  NOTE_OFF pitch
///   [256, 356)  TIME_SHIFT (index - 256 + 1) * 10 ms, i.e. 10..1000 ms
///   [356, 388)  VELOCITY bin, bin = floor(velocity / 4)
struct VocabularyLayout {
  static constexpr int kNoteOnBegin = 0;
  static constexpr int kNoteOffBegin = 128;
  static constexpr int kTimeShiftBegin = 256;
  static constexpr int kVelocityBegin = 356;
  static constexpr int kSize = 388;

  static constexpr int kTimeShiftSteps = 100;
  static constexpr int kTimeShiftStepMs = 10;
  static constexpr int kVelocityBins = 32;
  static constexpr int kVelocityBinWidth = 4;
  // Velocity assumed for NOTE_ONs that precede any VELOCITY token.
  static constexpr int kDefaultVelocityBin = 16;

  int total_size() const noexcept { return kSize; }

  static constexpr Token note_on(int pitch) noexcept { return kNoteOnBegin + pitch; }
  static constexpr Token note_off(int pitch) noexcept { return kNoteOffBegin + pitch; }
  static constexpr Token time_shift_steps(int steps) noexcept { return kTimeShiftBegin + steps - 1; }
  static constexpr Token velocity_bin(int bin) noexcept { return kVelocityBegin + bin; }

  static constexpr int bin_of(int velocity) noexcept { return velocity / kVelocityBinWidth; }
  static constexpr int bin_midpoint(int bin) noexcept {
    const int v = bin * kVelocityBinWidth + kVelocityBinWidth / 2;
    return v < 1 ? 1 : (v > 127 ? 127 : v);
  }
};

struct Event {
  EventKind kind;
  int value;  // pitch, shift in ms, or velocity bin
};

bool is_valid_token(Token token) noexcept;

/// Total on [0, 388); throws arec::Error(InvalidToken) outside it.
Event decode(Token token);

struct TokenizeOptions {
  // When false, a VELOCITY token precedes every NOTE_ON.
  bool velocity_on_change = true;
};

/// Timeline-ordered events. Times are quantized on a 10 ms grid tracked
/// against the emitted clock, so the per-event error never exceeds 5 ms and
/// does not accumulate. A note whose quantized offset equals its quantized
/// onset is held for one 10 ms step.
EventSequence tokenize(const midi::NoteSequence& seq, const VocabularyLayout& layout = {},
                       const TokenizeOptions& options = {});

struct DetokenizeReport {
  std::size_t orphan_note_offs = 0;
  std::size_t closed_at_end = 0;
  std::size_t zero_length_dropped = 0;
};

midi::NoteSequence detokenize(const EventSequence& events, const VocabularyLayout& layout = {},
                              DetokenizeReport* report = nullptr);

}  // namespace arec::events
