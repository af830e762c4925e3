// SPDX-License-Identifier: Apache-2.0
// Test helpers: byte-level SMF assembly and a small, separately written
// reference reader used to cross-check the library parser.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace smf_test {

using Bytes = std::vector<std::uint8_t>;

Bytes vlq(std::uint32_t value);
Bytes be32(std::uint32_t v);
Bytes be16(std::uint16_t v);
Bytes chunk(const std::string& type, const Bytes& body);
Bytes header(std::uint16_t format, std::uint16_t tracks, std::uint16_t division);

/// Appends delta-time + raw event bytes.
struct TrackBuilder {
  Bytes body;
  TrackBuilder& event(std::uint32_t delta, std::initializer_list<std::uint8_t> bytes);
  TrackBuilder& note_on(std::uint32_t delta, int channel, int pitch, int velocity);
  TrackBuilder& note_off(std::uint32_t delta, int channel, int pitch, int velocity = 64);
  TrackBuilder& tempo(std::uint32_t delta, std::uint32_t us_per_quarter);
  TrackBuilder& end(std::uint32_t delta = 0);
  Bytes chunk() const;
};

Bytes file(std::uint16_t format, std::uint16_t division, const std::vector<Bytes>& track_chunks);

struct RefNote {
  int pitch;
  int velocity;
  double onset;
  double offset;
};

/// Reference reader: formats 0/1, PPQ division, running status, tempo map,
/// note-on velocity 0 as release, first-in-first-out pairing per
/// (channel, pitch). No sustain handling. Notes sorted by (onset, pitch).
std::vector<RefNote> reference_read(const Bytes& bytes);

}  // namespace smf_test
