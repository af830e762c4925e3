// SPDX-License-Identifier: Apache-2.0
// Regenerates the bundled toy MIDI set and usage log.
#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>

#include "arec/hash.hpp"
#include "arec/midi.hpp"
#include "arec/synth.hpp"

namespace fs = std::filesystem;

int main(int argc, char** argv) {
  CLI::App app{"Write the toy MIDI pieces and a matching usage log", "make_toy_midi"};
  std::string out_dir = "data/toy_midi";
  std::string usage_path = "data/toy_usage.jsonl";
  int notes = 120;
  int tracks = 24;
  std::uint64_t seed = 2024;
  app.add_option("--out", out_dir, "directory for the .mid files");
  app.add_option("--usage", usage_path, "usage log to write");
  app.add_option("--notes", notes, "notes per piece")->check(CLI::PositiveNumber);
  app.add_option("--tracks", tracks, "generated tracks referenced by the usage log")->check(CLI::PositiveNumber);
  app.add_option("--seed", seed, "seed");
  CLI11_PARSE(app, argc, argv);

  fs::create_directories(out_dir);
  const auto styles = arec::synth::toy_styles();
  for (std::size_t i = 0; i < styles.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "piece_%02zu.mid", i);
    const auto seq = arec::synth::make_piece(styles[i], notes, arec::derive_seed(seed, static_cast<std::uint64_t>(i)));
    arec::midi::write_file((fs::path(out_dir) / name).string(), arec::midi::write_midi(seq));
  }

  // Plays spread over January 2026; some fall under the 30 s threshold.
  if (fs::path(usage_path).has_parent_path()) fs::create_directories(fs::path(usage_path).parent_path());
  std::ofstream usage(usage_path, std::ios::binary);
  std::mt19937_64 rng(arec::derive_seed(seed, "usage"));
  for (int day = 1; day <= 28; ++day) {
    for (int play = 0; play < 12; ++play) {
      // Skewed popularity: low track numbers are played more often.
      const int a = static_cast<int>(rng() % static_cast<std::uint64_t>(tracks));
      const int b = static_cast<int>(rng() % static_cast<std::uint64_t>(tracks));
      const int track = std::min(a, b);
      const int seconds = 5 + static_cast<int>(rng() % 200);
      char line[160];
      std::snprintf(line, sizeof line,
                    "{\"track_id\": \"gen-%03d\", \"timestamp\": \"2026-01-%02dT%02d:%02d:00Z\", \"seconds_played\": %d}\n",
                    track, day, play * 2, static_cast<int>(rng() % 60), seconds);
      usage << line;
    }
  }
  if (!usage) {
    std::cerr << "cannot write " << usage_path << "\n";
    return 1;
  }
  std::cout << "wrote " << styles.size() << " pieces to " << out_dir << " and usage to " << usage_path << "\n";
  return 0;
}
