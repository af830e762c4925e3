// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <random>

#include "arec/error.hpp"
#include "arec/midi.hpp"
#include "support/smf.hpp"

using arec::Error;
using arec::ErrorCode;
using namespace smf_test;
namespace midi = arec::midi;

namespace {

ErrorCode code_of(const Bytes& bytes) {
  try {
    midi::parse_midi(bytes);
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected an error";
  return ErrorCode::Format;
}

void expect_matches_reference(const Bytes& bytes) {
  const auto ours = midi::parse_midi(bytes).sequence.notes;
  const auto ref = reference_read(bytes);
  ASSERT_EQ(ours.size(), ref.size());
  for (std::size_t i = 0; i < ref.size(); ++i) {
    EXPECT_EQ(ours[i].pitch, ref[i].pitch) << i;
    EXPECT_EQ(ours[i].velocity, ref[i].velocity) << i;
    EXPECT_NEAR(ours[i].onset, ref[i].onset, 1e-9) << i;
    EXPECT_NEAR(ours[i].offset, ref[i].offset, 1e-9) << i;
  }
}

}  // namespace

TEST(MidiParse, SingleNoteAt120Bpm) {
  TrackBuilder t;
  t.tempo(0, 500000).note_on(0, 0, 60, 80).note_off(480, 0, 60).end();
  const Bytes bytes = file(0, 480, {t.chunk()});
  const auto seq = midi::parse_midi(bytes).sequence;
  ASSERT_EQ(seq.notes.size(), 1u);
  EXPECT_EQ(seq.notes[0], (midi::Note{60, 80, 0.0, 0.5}));
  EXPECT_EQ(seq.ticks_per_quarter, 480);
  expect_matches_reference(bytes);
}

TEST(MidiParse, EndOfTrackOnlyIsEmpty) {
  TrackBuilder t;
  t.end();
  const auto result = midi::parse_midi(file(0, 96, {t.chunk()}));
  EXPECT_TRUE(result.sequence.notes.empty());
}

TEST(MidiParse, VelocityZeroReleases) {
  TrackBuilder t;
  t.note_on(0, 0, 64, 100).note_on(240, 0, 64, 0).note_on(0, 0, 65, 90).note_off(240, 0, 65).end();
  const Bytes bytes = file(0, 480, {t.chunk()});
  const auto notes = midi::parse_midi(bytes).sequence.notes;
  ASSERT_EQ(notes.size(), 2u);
  EXPECT_DOUBLE_EQ(notes[0].offset, 0.25);
  EXPECT_DOUBLE_EQ(notes[1].onset, 0.25);
  expect_matches_reference(bytes);
}

TEST(MidiParse, RunningStatus) {
  TrackBuilder t;
  t.event(0, {0x90, 60, 70}).event(0, {64, 70}).event(120, {60, 0}).event(0, {64, 0}).end();
  const Bytes bytes = file(0, 480, {t.chunk()});
  const auto notes = midi::parse_midi(bytes).sequence.notes;
  ASSERT_EQ(notes.size(), 2u);
  EXPECT_EQ(notes[0].pitch, 60);
  EXPECT_EQ(notes[1].pitch, 64);
  EXPECT_DOUBLE_EQ(notes[1].offset, 0.125);
  expect_matches_reference(bytes);
}

TEST(MidiParse, Format1MergesTracksWithSharedTempoMap) {
  TrackBuilder conductor;
  conductor.tempo(0, 500000).tempo(960, 250000).end();
  TrackBuilder a;
  a.note_on(0, 0, 60, 80).note_off(960, 0, 60).note_on(0, 0, 62, 80).note_off(480, 0, 62).end();
  TrackBuilder b;
  b.note_on(480, 1, 48, 50).note_off(960, 1, 48).end();
  const Bytes bytes = file(1, 480, {conductor.chunk(), a.chunk(), b.chunk()});
  const auto notes = midi::parse_midi(bytes).sequence.notes;
  ASSERT_EQ(notes.size(), 3u);
  // 960 ticks at 0.5 s/quarter = 1.0 s, then 480 ticks at 0.25 s/quarter.
  EXPECT_EQ(notes[0], (midi::Note{60, 80, 0.0, 1.0}));
  EXPECT_EQ(notes[1], (midi::Note{48, 50, 0.5, 1.25}));
  EXPECT_EQ(notes[2], (midi::Note{62, 80, 1.0, 1.25}));
  expect_matches_reference(bytes);
}

TEST(MidiParse, HeaderErrors) {
  TrackBuilder t;
  t.end();
  Bytes bad_magic = file(0, 480, {t.chunk()});
  bad_magic[0] = 'X';
  EXPECT_EQ(code_of(bad_magic), ErrorCode::MalformedHeader);
  EXPECT_EQ(code_of(file(2, 480, {t.chunk()})), ErrorCode::UnsupportedFormat);
  EXPECT_EQ(code_of(file(5, 480, {t.chunk()})), ErrorCode::MalformedHeader);
  EXPECT_EQ(code_of(Bytes{'M', 'T', 'h'}), ErrorCode::MalformedHeader);
  EXPECT_EQ(code_of(file(0, 0, {t.chunk()})), ErrorCode::MalformedHeader);
}

TEST(MidiParse, TruncatedTrack) {
  TrackBuilder t;
  t.note_on(0, 0, 60, 80).note_off(480, 0, 60).end();
  Bytes bytes = file(0, 480, {t.chunk()});
  bytes.resize(bytes.size() - 4);
  EXPECT_EQ(code_of(bytes), ErrorCode::TruncatedChunk);
  // Header promises two tracks but only one follows.
  Bytes missing = header(1, 2, 480);
  const Bytes one = t.chunk();
  missing.insert(missing.end(), one.begin(), one.end());
  EXPECT_EQ(code_of(missing), ErrorCode::TruncatedChunk);
}

TEST(MidiParse, DanglingNoteClosedAtTrackEnd) {
  TrackBuilder t;
  t.note_on(0, 0, 60, 80).end(960);
  const auto result = midi::parse_midi(file(0, 480, {t.chunk()}));
  ASSERT_EQ(result.sequence.notes.size(), 1u);
  EXPECT_DOUBLE_EQ(result.sequence.notes[0].offset, 1.0);
  EXPECT_EQ(result.report.dangling_note_ons, 1u);
}

TEST(MidiParse, OrphanOffAndZeroLengthAreCounted) {
  TrackBuilder t;
  t.note_off(0, 0, 70).note_on(0, 0, 60, 80).note_off(0, 0, 60).end(10);
  const auto result = midi::parse_midi(file(0, 480, {t.chunk()}));
  EXPECT_TRUE(result.sequence.notes.empty());
  EXPECT_EQ(result.report.orphan_note_offs, 1u);
  EXPECT_EQ(result.report.dropped_degenerate, 1u);
}

TEST(MidiParse, UnknownChunksAreSkipped) {
  TrackBuilder t;
  t.note_on(0, 0, 60, 80).note_off(480, 0, 60).end();
  Bytes bytes = header(0, 1, 480);
  const Bytes junk = chunk("XFIH", {1, 2, 3});
  const Bytes track = t.chunk();
  bytes.insert(bytes.end(), junk.begin(), junk.end());
  bytes.insert(bytes.end(), track.begin(), track.end());
  const auto result = midi::parse_midi(bytes);
  EXPECT_EQ(result.sequence.notes.size(), 1u);
  EXPECT_EQ(result.report.skipped_chunks, 1u);
}

TEST(MidiParse, SustainPedalIsOptIn) {
  TrackBuilder t;
  t.event(0, {0xb0, 64, 127}).note_on(0, 0, 60, 80).note_off(240, 0, 60).event(720, {0xb0, 64, 0}).end();
  const Bytes bytes = file(0, 480, {t.chunk()});
  EXPECT_DOUBLE_EQ(midi::parse_midi(bytes).sequence.notes.at(0).offset, 0.25);
  midi::ParseOptions pedal;
  pedal.sustain_pedal = true;
  EXPECT_DOUBLE_EQ(midi::parse_midi(bytes, pedal).sequence.notes.at(0).offset, 1.0);
}

TEST(MidiParse, SysexAndOtherMessagesIgnored) {
  TrackBuilder t;
  t.event(0, {0xf0, 0x03, 0x43, 0x12, 0xf7})
      .event(0, {0xc0, 5})
      .event(0, {0xe0, 0x00, 0x40})
      .note_on(0, 0, 60, 80)
      .event(0, {0xff, 0x01, 0x02, 'h', 'i'})
      .note_off(480, 0, 60)
      .end();
  const Bytes bytes = file(0, 480, {t.chunk()});
  EXPECT_EQ(midi::parse_midi(bytes).sequence.notes.size(), 1u);
  expect_matches_reference(bytes);
}

TEST(MidiParse, RandomFilesMatchReference) {
  std::mt19937 rng(7);
  for (int trial = 0; trial < 60; ++trial) {
    const int ntracks = 1 + static_cast<int>(rng() % 3);
    std::vector<Bytes> tracks;
    for (int k = 0; k < ntracks; ++k) {
      TrackBuilder t;
      if (k == 0) t.tempo(0, 300000 + rng() % 400000);
      int open_pitch = -1;
      for (int e = 0; e < 30; ++e) {
        const std::uint32_t delta = rng() % 300;
        const int pitch = 40 + static_cast<int>(rng() % 40);
        switch (rng() % 4) {
          case 0:
            if (k == 0) t.tempo(delta, 200000 + rng() % 600000);
            break;
          case 1:
            if (open_pitch < 0) {
              t.note_on(delta, k, pitch, 1 + static_cast<int>(rng() % 127));
              open_pitch = pitch;
            }
            break;
          default:
            if (open_pitch >= 0) {
              if (rng() % 2) {
                t.note_off(delta, k, open_pitch);
              } else {
                t.note_on(delta, k, open_pitch, 0);
              }
              open_pitch = -1;
            }
        }
      }
      if (open_pitch >= 0) t.note_off(1 + rng() % 100, k, open_pitch);
      t.end();
      tracks.push_back(t.chunk());
    }
    const Bytes bytes = file(ntracks == 1 ? 0 : 1, static_cast<std::uint16_t>(96 + rng() % 900), tracks);
    SCOPED_TRACE(trial);
    expect_matches_reference(bytes);
  }
}

TEST(MidiParse, Deterministic) {
  TrackBuilder t;
  t.note_on(0, 0, 60, 80).note_on(10, 0, 64, 70).note_off(480, 0, 60).note_off(3, 0, 64).end();
  const Bytes bytes = file(0, 480, {t.chunk()});
  EXPECT_EQ(midi::parse_midi(bytes).sequence, midi::parse_midi(bytes).sequence);
}

TEST(MidiWrite, RoundTripsThroughParser) {
  midi::NoteSequence seq;
  seq.notes = {{60, 80, 0.0, 0.5}, {64, 30, 0.25, 1.0}, {67, 127, 1.5, 1.75}};
  const auto back = midi::parse_midi(midi::write_midi(seq)).sequence.notes;
  ASSERT_EQ(back.size(), seq.notes.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    EXPECT_EQ(back[i].pitch, seq.notes[i].pitch);
    EXPECT_EQ(back[i].velocity, seq.notes[i].velocity);
    EXPECT_NEAR(back[i].onset, seq.notes[i].onset, 1.0 / 960);
    EXPECT_NEAR(back[i].offset, seq.notes[i].offset, 1.0 / 960);
  }
}
