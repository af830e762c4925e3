// SPDX-License-Identifier: Apache-2.0
#include "arec/midi.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <deque>
#include <fstream>
#include <iterator>
#include <map>
#include <tuple>

#include "arec/error.hpp"

namespace arec::midi {
namespace {

constexpr std::uint32_t kDefaultTempo = 500000;  // us per quarter, 120 BPM

class Reader {
 public:
  Reader(std::span<const std::uint8_t> data, std::size_t begin, std::size_t end)
      : data_(data), pos_(begin), end_(end) {}

  bool done() const noexcept { return pos_ >= end_; }
  std::size_t pos() const noexcept { return pos_; }

  std::uint8_t u8() {
    need(1);
    return data_[pos_++];
  }
  std::uint8_t peek() {
    need(1);
    return data_[pos_];
  }
  std::uint16_t u16() {
    need(2);
    std::uint16_t v = static_cast<std::uint16_t>((data_[pos_] << 8) | data_[pos_ + 1]);
    pos_ += 2;
    return v;
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v = (v << 8) | data_[pos_ + i];
    pos_ += 4;
    return v;
  }
  // Variable-length quantity, at most 4 bytes.
  std::uint32_t vlq() {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
      const std::uint8_t b = u8();
      v = (v << 7) | (b & 0x7f);
      if ((b & 0x80) == 0) return v;
    }
    throw Error(ErrorCode::TruncatedChunk, "variable-length quantity longer than 4 bytes");
  }
  void skip(std::size_t n) {
    need(n);
    pos_ += n;
  }
  std::span<const std::uint8_t> take(std::size_t n) {
    need(n);
    auto s = data_.subspan(pos_, n);
    pos_ += n;
    return s;
  }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > end_) throw Error(ErrorCode::TruncatedChunk, "unexpected end of data");
  }

  std::span<const std::uint8_t> data_;
  std::size_t pos_;
  std::size_t end_;
};

struct TempoChange {
  std::uint64_t tick;
  std::uint32_t us_per_quarter;
};

struct TickNote {
  int pitch;
  int velocity;
  std::uint64_t on;
  std::uint64_t off;
};

// Pairs note on/off events of one track, FIFO per (channel, pitch).
class TrackNotes {
 public:
  TrackNotes(bool sustain, ParseReport& report) : sustain_(sustain), report_(report) {}

  void note_on(int channel, int pitch, int velocity, std::uint64_t tick) {
    if (sustain_) release_sustained(channel, pitch, tick);
    open_[key(channel, pitch)].push_back({pitch, velocity, tick, 0});
  }

  void note_off(int channel, int pitch, std::uint64_t tick) {
    auto it = open_.find(key(channel, pitch));
    if (it == open_.end() || it->second.empty()) {
      ++report_.orphan_note_offs;
      return;
    }
    TickNote n = it->second.front();
    it->second.pop_front();
    if (sustain_ && pedal_[channel]) {
      held_[channel].push_back(n);
      return;
    }
    n.off = tick;
    done_.push_back(n);
  }

  void pedal(int channel, int value, std::uint64_t tick) {
    if (!sustain_) return;
    const bool down = value >= 64;
    if (pedal_[channel] && !down) {
      for (TickNote& n : held_[channel]) {
        n.off = tick;
        done_.push_back(n);
      }
      held_[channel].clear();
    }
    pedal_[channel] = down;
  }

  void finish(std::uint64_t end_tick) {
    for (auto& [k, queue] : open_) {
      for (TickNote n : queue) {
        n.off = end_tick;
        done_.push_back(n);
        ++report_.dangling_note_ons;
      }
    }
    open_.clear();
    for (auto& held : held_) {
      for (TickNote n : held) {
        n.off = end_tick;
        done_.push_back(n);
      }
      held.clear();
    }
  }

  std::vector<TickNote>& notes() noexcept { return done_; }

 private:
  static int key(int channel, int pitch) noexcept { return channel * 128 + pitch; }

  // Re-striking a pitch that is only held by the pedal ends the held note.
  void release_sustained(int channel, int pitch, std::uint64_t tick) {
    auto& held = held_[channel];
    for (auto it = held.begin(); it != held.end();) {
      if (it->pitch == pitch) {
        TickNote n = *it;
        n.off = tick;
        done_.push_back(n);
        it = held.erase(it);
      } else {
        ++it;
      }
    }
  }

  bool sustain_;
  ParseReport& report_;
  std::map<int, std::deque<TickNote>> open_;
  std::array<bool, 16> pedal_{};
  std::array<std::vector<TickNote>, 16> held_;
  std::vector<TickNote> done_;
};

void parse_track(Reader& r, TrackNotes& notes, std::vector<TempoChange>& tempo) {
  std::uint64_t tick = 0;
  std::uint8_t running = 0;
  while (!r.done()) {
    tick += r.vlq();
    std::uint8_t status = r.peek();
    if (status & 0x80) {
      r.u8();
    } else {
      if (running == 0) throw Error(ErrorCode::TruncatedChunk, "data byte without running status");
      status = running;
    }

    if (status == 0xff) {
      const std::uint8_t type = r.u8();
      const std::uint32_t len = r.vlq();
      auto payload = r.take(len);
      if (type == 0x51 && len == 3) {
        const std::uint32_t us = (payload[0] << 16) | (payload[1] << 8) | payload[2];
        tempo.push_back({tick, us});
      } else if (type == 0x2f) {
        break;
      }
      continue;
    }
    if (status == 0xf0 || status == 0xf7) {
      r.skip(r.vlq());
      continue;
    }
    if (status >= 0xf0) {
      // System common/real-time bytes do not belong in files; skip their data.
      if (status == 0xf2) r.skip(2);
      else if (status == 0xf1 || status == 0xf3) r.skip(1);
      continue;
    }

    running = status;
    const int kind = status & 0xf0;
    const int channel = status & 0x0f;
    const int a = r.u8() & 0x7f;
    const bool two_bytes = kind != 0xc0 && kind != 0xd0;
    const int b = two_bytes ? (r.u8() & 0x7f) : 0;

    switch (kind) {
      case 0x90:
        if (b > 0) notes.note_on(channel, a, b, tick);
        else notes.note_off(channel, a, tick);
        break;
      case 0x80:
        notes.note_off(channel, a, tick);
        break;
      case 0xb0:
        if (a == 64) notes.pedal(channel, b, tick);
        break;
      default:
        break;
    }
  }
  notes.finish(tick);
}

// Maps absolute ticks to seconds through a merged tempo map.
class TickClock {
 public:
  TickClock(std::vector<TempoChange> changes, std::uint16_t division) {
    if (division & 0x8000) {
      const int fps = -static_cast<std::int8_t>(division >> 8);
      const int per_frame = division & 0xff;
      smpte_seconds_per_tick_ = 1.0 / (static_cast<double>(fps) * per_frame);
      return;
    }
    tpq_ = division;
    std::stable_sort(changes.begin(), changes.end(),
                     [](const TempoChange& x, const TempoChange& y) { return x.tick < y.tick; });
    segments_.push_back({0, 0.0, kDefaultTempo});
    for (const TempoChange& c : changes) {
      Segment& last = segments_.back();
      if (c.tick == last.tick) {
        last.us_per_quarter = c.us_per_quarter;
        continue;
      }
      const double start = last.seconds + span_seconds(c.tick - last.tick, last.us_per_quarter);
      segments_.push_back({c.tick, start, c.us_per_quarter});
    }
  }

  double seconds(std::uint64_t tick) const {
    if (smpte_seconds_per_tick_ > 0) return static_cast<double>(tick) * smpte_seconds_per_tick_;
    auto it = std::upper_bound(segments_.begin(), segments_.end(), tick,
                               [](std::uint64_t t, const Segment& s) { return t < s.tick; });
    const Segment& s = *std::prev(it);
    return s.seconds + span_seconds(tick - s.tick, s.us_per_quarter);
  }

 private:
  struct Segment {
    std::uint64_t tick;
    double seconds;
    std::uint32_t us_per_quarter;
  };

  double span_seconds(std::uint64_t ticks, std::uint32_t us_per_quarter) const {
    return static_cast<double>(ticks) * us_per_quarter / (1e6 * tpq_);
  }

  int tpq_ = 480;
  double smpte_seconds_per_tick_ = 0.0;
  std::vector<Segment> segments_;
};

bool has_tag(std::span<const std::uint8_t> bytes, std::size_t at, const char* tag) {
  return at + 4 <= bytes.size() && std::equal(tag, tag + 4, bytes.begin() + at);
}

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int shift = 24; shift >= 0; shift -= 8) out.push_back(static_cast<std::uint8_t>(v >> shift));
}

void put_vlq(std::vector<std::uint8_t>& out, std::uint32_t v) {
  std::array<std::uint8_t, 5> buf{};
  int n = 0;
  buf[n++] = v & 0x7f;
  while ((v >>= 7) != 0) buf[n++] = static_cast<std::uint8_t>((v & 0x7f) | 0x80);
  while (n > 0) out.push_back(buf[--n]);
}

}  // namespace

bool is_valid(const Note& note) noexcept {
  return note.pitch >= 0 && note.pitch <= 127 && note.velocity >= 1 && note.velocity <= 127 &&
         std::isfinite(note.onset) && std::isfinite(note.offset) && note.onset >= 0.0 &&
         note.offset > note.onset;
}

void sort_notes(std::vector<Note>& notes) {
  std::stable_sort(notes.begin(), notes.end(), [](const Note& a, const Note& b) {
    return std::tie(a.onset, a.pitch, a.offset, a.velocity) <
           std::tie(b.onset, b.pitch, b.offset, b.velocity);
  });
}

ParseResult parse_midi(std::span<const std::uint8_t> bytes, const ParseOptions& options) {
  if (!has_tag(bytes, 0, "MThd")) throw Error(ErrorCode::MalformedHeader, "missing MThd chunk");
  if (bytes.size() < 14) throw Error(ErrorCode::MalformedHeader, "header chunk shorter than 14 bytes");

  Reader header(bytes, 4, bytes.size());
  const std::uint32_t header_len = header.u32();
  if (header_len < 6) throw Error(ErrorCode::MalformedHeader, "header length < 6");
  const std::uint16_t format = header.u16();
  const std::uint16_t ntracks = header.u16();
  const std::uint16_t division = header.u16();
  if (format == 2) throw Error(ErrorCode::UnsupportedFormat, "format 2 files are not supported");
  if (format > 2) throw Error(ErrorCode::MalformedHeader, "unknown format " + std::to_string(format));
  if (format == 0 && ntracks != 1)
    throw Error(ErrorCode::MalformedHeader, "format 0 requires exactly one track");
  if (division == 0) throw Error(ErrorCode::MalformedHeader, "division is zero");
  if (8 + static_cast<std::size_t>(header_len) > bytes.size())
    throw Error(ErrorCode::TruncatedChunk, "header chunk extends past end of file");

  ParseResult result;
  result.sequence.ticks_per_quarter = (division & 0x8000) ? 0 : division;

  std::vector<TempoChange> tempo;
  std::vector<TickNote> tick_notes;
  std::size_t pos = 8 + header_len;
  int tracks_read = 0;
  while (tracks_read < ntracks) {
    if (pos + 8 > bytes.size())
      throw Error(ErrorCode::TruncatedChunk, "expected " + std::to_string(ntracks) + " tracks, found " +
                                                 std::to_string(tracks_read));
    Reader chunk(bytes, pos + 4, bytes.size());
    const std::uint32_t len = chunk.u32();
    const std::size_t body = pos + 8;
    if (body + len > bytes.size()) throw Error(ErrorCode::TruncatedChunk, "chunk extends past end of file");
    if (has_tag(bytes, pos, "MTrk")) {
      Reader track(bytes, body, body + len);
      TrackNotes notes(options.sustain_pedal, result.report);
      parse_track(track, notes, tempo);
      auto& done = notes.notes();
      tick_notes.insert(tick_notes.end(), done.begin(), done.end());
      ++tracks_read;
    } else {
      ++result.report.skipped_chunks;
    }
    pos = body + len;
  }

  const TickClock clock(std::move(tempo), division);
  auto& out = result.sequence.notes;
  out.reserve(tick_notes.size());
  for (const TickNote& n : tick_notes) {
    Note note{n.pitch, n.velocity, clock.seconds(n.on), clock.seconds(n.off)};
    if (!(note.offset > note.onset)) {
      ++result.report.dropped_degenerate;
      continue;
    }
    out.push_back(note);
  }
  sort_notes(out);
  return result;
}

NoteSequence parse_midi_notes(std::span<const std::uint8_t> bytes, const ParseOptions& options) {
  return parse_midi(bytes, options).sequence;
}

std::vector<std::uint8_t> write_midi(const NoteSequence& sequence, int ticks_per_quarter,
                                     std::uint32_t tempo_us_per_quarter) {
  const double ticks_per_second = ticks_per_quarter * 1e6 / tempo_us_per_quarter;
  auto to_tick = [&](double s) { return static_cast<std::uint64_t>(std::llround(s * ticks_per_second)); };

  // (tick, order, status, data1, data2); offs sort before ons at equal ticks.
  std::vector<std::tuple<std::uint64_t, int, int, int, int>> msgs;
  for (const Note& n : sequence.notes) {
    const std::uint64_t on = to_tick(n.onset);
    const std::uint64_t off = std::max(on + 1, to_tick(n.offset));
    msgs.emplace_back(on, 1, 0x90, n.pitch, n.velocity);
    msgs.emplace_back(off, 0, 0x80, n.pitch, 0);
  }
  std::stable_sort(msgs.begin(), msgs.end(), [](const auto& a, const auto& b) {
    return std::tie(std::get<0>(a), std::get<1>(a), std::get<3>(a)) <
           std::tie(std::get<0>(b), std::get<1>(b), std::get<3>(b));
  });

  std::vector<std::uint8_t> track;
  put_vlq(track, 0);
  track.insert(track.end(), {0xff, 0x51, 0x03});
  track.push_back(static_cast<std::uint8_t>(tempo_us_per_quarter >> 16));
  track.push_back(static_cast<std::uint8_t>(tempo_us_per_quarter >> 8));
  track.push_back(static_cast<std::uint8_t>(tempo_us_per_quarter));
  std::uint64_t now = 0;
  for (const auto& [tick, order, status, d1, d2] : msgs) {
    put_vlq(track, static_cast<std::uint32_t>(tick - now));
    now = tick;
    track.push_back(static_cast<std::uint8_t>(status));
    track.push_back(static_cast<std::uint8_t>(d1));
    track.push_back(static_cast<std::uint8_t>(d2));
  }
  put_vlq(track, 0);
  track.insert(track.end(), {0xff, 0x2f, 0x00});

  std::vector<std::uint8_t> out = {'M', 'T', 'h', 'd'};
  put_u32(out, 6);
  put_u16(out, 0);
  put_u16(out, 1);
  put_u16(out, static_cast<std::uint16_t>(ticks_per_quarter));
  out.insert(out.end(), {'M', 'T', 'r', 'k'});
  put_u32(out, static_cast<std::uint32_t>(track.size()));
  out.insert(out.end(), track.begin(), track.end());
  return out;
}

std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::string& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::Io, "write failed for " + path);
}

}  // namespace arec::midi
