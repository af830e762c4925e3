// SPDX-License-Identifier: Apache-2.0
#include "arec/synth.hpp"

#include <algorithm>
#include <array>
#include <random>

#include "arec/error.hpp"

namespace arec::synth {

namespace {

constexpr std::array<int, 7> kMajor = {0, 2, 4, 5, 7, 9, 11};
constexpr std::array<int, 7> kMinor = {0, 2, 3, 5, 7, 8, 10};

int degree_to_pitch(const PieceStyle& s, int degree) {
  const auto& scale = s.minor ? kMinor : kMajor;
  const int octave = degree >= 0 ? degree / 7 : -((-degree + 6) / 7);
  const int step = degree - octave * 7;
  return std::clamp(s.tonic + 12 * octave + scale[static_cast<std::size_t>(step)], 0, 127);
}

int uniform_int(std::mt19937_64& rng, int lo, int hi) {
  return std::uniform_int_distribution<int>(lo, hi)(rng);
}

}  // namespace

midi::NoteSequence make_piece(const PieceStyle& style, int notes, std::uint64_t seed) {
  if (notes < 1 || style.motif_length < 1 || style.beat_seconds <= 0.0 || style.legato <= 0.0 ||
      style.legato > 1.0)
    throw Error(ErrorCode::InvalidConfig, "invalid piece style");
  std::mt19937_64 rng(seed);
  const int half = style.degree_span / 2;

  std::vector<int> motif(static_cast<std::size_t>(style.motif_length));
  for (auto& d : motif) d = uniform_int(rng, -half, half);
  // Rhythm pattern in beats, one entry per motif note.
  std::vector<double> rhythm(motif.size());
  for (auto& r : rhythm) r = uniform_int(rng, 0, 3) == 0 ? 2.0 : 1.0;

  midi::NoteSequence seq;
  double t = 0.0;
  int shift = 0;
  for (int i = 0; i < notes; ++i) {
    const auto k = static_cast<std::size_t>(i) % motif.size();
    if (k == 0 && i > 0) shift = std::clamp(shift + uniform_int(rng, -1, 1), -2, 2);
    const double ioi = style.beat_seconds * rhythm[k];
    midi::Note n;
    n.pitch = degree_to_pitch(style, motif[k] + shift);
    n.velocity = std::clamp(style.velocity + uniform_int(rng, -style.velocity_jitter, style.velocity_jitter), 1, 127);
    n.onset = t;
    n.offset = t + ioi * style.legato;
    seq.notes.push_back(n);
    t += ioi;
  }
  return seq;
}

std::vector<PieceStyle> toy_styles() {
  std::vector<PieceStyle> styles;
  const std::array<int, 8> tonics = {60, 62, 55, 67, 57, 64, 52, 69};
  const std::array<int, 8> velocities = {48, 96, 64, 80, 40, 104, 72, 56};
  const std::array<double, 8> beats = {0.25, 0.2, 0.3, 0.15, 0.35, 0.2, 0.25, 0.3};
  for (std::size_t i = 0; i < tonics.size(); ++i) {
    PieceStyle s;
    s.tonic = tonics[i];
    s.minor = i % 2 == 1;
    s.velocity = velocities[i];
    s.beat_seconds = beats[i];
    s.legato = i % 3 == 0 ? 0.9 : 0.6;
    s.motif_length = 3 + static_cast<int>(i % 3);
    styles.push_back(s);
  }
  return styles;
}

PieceStyle cluster_style(int cluster, std::uint64_t seed) {
  if (cluster != 0 && cluster != 1) throw Error(ErrorCode::InvalidConfig, "cluster must be 0 or 1");
  std::mt19937_64 rng(seed);
  PieceStyle s;
  if (cluster == 0) {
    s.tonic = uniform_int(rng, 48, 56);
    s.velocity = uniform_int(rng, 36, 56);
    s.beat_seconds = 0.3 + 0.05 * uniform_int(rng, 0, 2);
    s.minor = true;
  } else {
    s.tonic = uniform_int(rng, 68, 76);
    s.velocity = uniform_int(rng, 92, 112);
    s.beat_seconds = 0.12 + 0.02 * uniform_int(rng, 0, 2);
    s.minor = false;
  }
  s.legato = 0.5 + 0.1 * uniform_int(rng, 0, 4);
  s.motif_length = uniform_int(rng, 3, 5);
  s.velocity_jitter = 4;
  return s;
}

}  // namespace arec::synth
