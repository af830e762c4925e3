// SPDX-License-Identifier: Apache-2.0
#include "arec/events.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <deque>
#include <tuple>

#include "arec/error.hpp"

namespace arec::events {
namespace {

using Layout = VocabularyLayout;

// Time in 10 ms steps.
long long to_steps(double seconds) { return std::llround(seconds * 100.0); }

struct TimedEvent {
  long long step;
  int kind;  // 0 = off, 1 = on; offs first at equal steps
  int pitch;
  int velocity;
  std::size_t order;
};

}  // namespace

bool is_valid_token(Token token) noexcept { return token >= 0 && token < Layout::kSize; }

Event decode(Token token) {
  if (!is_valid_token(token)) throw Error(ErrorCode::InvalidToken, "token " + std::to_string(token));
  if (token < Layout::kNoteOffBegin) return {EventKind::NoteOn, token - Layout::kNoteOnBegin};
  if (token < Layout::kTimeShiftBegin) return {EventKind::NoteOff, token - Layout::kNoteOffBegin};
  if (token < Layout::kVelocityBegin)
    return {EventKind::TimeShift, (token - Layout::kTimeShiftBegin + 1) * Layout::kTimeShiftStepMs};
  return {EventKind::Velocity, token - Layout::kVelocityBegin};
}

EventSequence tokenize(const midi::NoteSequence& seq, const VocabularyLayout&, const TokenizeOptions& options) {
  std::vector<TimedEvent> timeline;
  timeline.reserve(seq.notes.size() * 2);
  std::size_t order = 0;
  for (const midi::Note& n : seq.notes) {
    const long long on = to_steps(n.onset);
    const long long off = std::max(on + 1, to_steps(n.offset));
    timeline.push_back({on, 1, n.pitch, n.velocity, order++});
    timeline.push_back({off, 0, n.pitch, 0, order++});
  }
  std::sort(timeline.begin(), timeline.end(), [](const TimedEvent& a, const TimedEvent& b) {
    return std::tie(a.step, a.kind, a.pitch, a.order) < std::tie(b.step, b.kind, b.pitch, b.order);
  });

  EventSequence out;
  out.reserve(timeline.size() * 2);
  long long clock = 0;
  int bin = -1;
  for (const TimedEvent& e : timeline) {
    long long gap = e.step - clock;
    while (gap > Layout::kTimeShiftSteps) {
      out.push_back(Layout::time_shift_steps(Layout::kTimeShiftSteps));
      gap -= Layout::kTimeShiftSteps;
    }
    if (gap > 0) out.push_back(Layout::time_shift_steps(static_cast<int>(gap)));
    clock = e.step;

    if (e.kind == 1) {
      const int b = Layout::bin_of(e.velocity);
      if (!options.velocity_on_change || b != bin) out.push_back(Layout::velocity_bin(b));
      bin = b;
      out.push_back(Layout::note_on(e.pitch));
    } else {
      out.push_back(Layout::note_off(e.pitch));
    }
  }
  return out;
}

midi::NoteSequence detokenize(const EventSequence& events, const VocabularyLayout&, DetokenizeReport* report) {
  DetokenizeReport local;
  DetokenizeReport& rep = report ? *report : local;
  rep = {};

  struct Open {
    long long step;
    int velocity;
  };
  std::array<std::deque<Open>, 128> open;
  midi::NoteSequence out;
  long long clock = 0;
  int velocity = Layout::bin_midpoint(Layout::kDefaultVelocityBin);

  auto close = [&](int pitch, const Open& o) {
    if (clock <= o.step) {
      ++rep.zero_length_dropped;
      return;
    }
    out.notes.push_back({pitch, o.velocity, o.step / 100.0, clock / 100.0});
  };

  for (Token t : events) {
    const Event e = decode(t);
    switch (e.kind) {
      case EventKind::TimeShift:
        clock += e.value / Layout::kTimeShiftStepMs;
        break;
      case EventKind::Velocity:
        velocity = Layout::bin_midpoint(e.value);
        break;
      case EventKind::NoteOn:
        open[e.value].push_back({clock, velocity});
        break;
      case EventKind::NoteOff:
        if (open[e.value].empty()) {
          ++rep.orphan_note_offs;
        } else {
          close(e.value, open[e.value].front());
          open[e.value].pop_front();
        }
        break;
    }
  }
  for (int pitch = 0; pitch < 128; ++pitch) {
    for (const Open& o : open[pitch]) {
      ++rep.closed_at_end;
      close(pitch, o);
    }
  }
  midi::sort_notes(out.notes);
  return out;
}

}  // namespace arec::events
