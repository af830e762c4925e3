// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

#include "arec/midi.hpp"

namespace arec::synth {

/// Parameters of a generated monophonic line built from a repeated motif.
struct PieceStyle {
  int tonic = 60;             // MIDI pitch of scale degree 0
  bool minor = false;
  int velocity = 80;          // mean velocity
  int velocity_jitter = 6;    // uniform +- jitter per note
  double beat_seconds = 0.25; // base inter-onset interval
  double legato = 0.8;        // sounding fraction of each interval
  int motif_length = 4;
  int degree_span = 7;        // motif degrees drawn from [-span/2, span/2]
};

/// Deterministic piece of `notes` notes. Motifs repeat with small scale-step
/// transpositions so that windows share learnable structure.
midi::NoteSequence make_piece(const PieceStyle& style, int notes, std::uint64_t seed);

/// The eight styles used for the bundled toy MIDI set.
std::vector<PieceStyle> toy_styles();

/// A style drawn around one of two well separated clusters (0 or 1) that
/// differ in register, loudness and tempo.
PieceStyle cluster_style(int cluster, std::uint64_t seed);

}  // namespace arec::synth
