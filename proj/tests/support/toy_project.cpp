// SPDX-License-Identifier: Apache-2.0
#include "toy_project.hpp"

#include <fstream>

#include "arec/hash.hpp"
#include "arec/midi.hpp"
#include "arec/synth.hpp"

namespace toy_project {

nlohmann::json small_config() {
  return nlohmann::json::parse(R"({
    "seed": 7,
    "paths": {"midi_dir": "midi", "artifact_dir": "out", "usage_log": "usage.jsonl"},
    "ingest": {"window_len": 16, "max_windows_per_file": 2,
               "rightsholders": {"a.mid": "alpha", "b.mid": "beta"}},
    "model": {"context_length": 16, "embed_dim": 8, "num_layers": 1, "num_heads": 2,
              "hidden_dim": 16, "precision": "float64"},
    "train": {"epochs": 2, "batch_size": 4, "learning_rate": 0.01},
    "generate": {"targets": 3, "prompt_len": 4, "length": 4},
    "attribution": {"members": 2, "fraction": 0.5, "projection_dim": 8},
    "evaluation": {"subsets": 4, "fraction": 0.5, "targets": 2, "buckets": 2},
    "royalty": {"sources": ["subscription", "advertisement"],
                "revenue": [{"source": "subscription", "period": "2026-01", "amount_cents": 8801},
                            {"source": "advertisement", "period": "2026-01", "amount_cents": 1203}],
                "platform_cut": 0.3}
  })");
}

std::filesystem::path write(const std::filesystem::path& dir, const nlohmann::json& config) {
  std::filesystem::create_directories(dir / "midi");
  const char* names[] = {"a.mid", "b.mid", "c.mid", "d.mid"};
  const auto styles = arec::synth::toy_styles();
  for (int i = 0; i < 4; ++i) {
    const auto bytes = arec::midi::write_midi(arec::synth::make_piece(styles[i], 30, arec::derive_seed(std::uint64_t{1}, i)));
    std::ofstream(dir / "midi" / names[i], std::ios::binary)
        .write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  }
  std::ofstream usage(dir / "usage.jsonl");
  for (int i = 0; i < 20; ++i)
    usage << R"({"track_id":"gen-00)" << i % 3 << R"(","timestamp":"2026-01-0)" << 1 + i % 9
          << R"(T12:00:00Z","seconds_played":)" << 10 + 7 * i << "}\n";
  const auto path = dir / "config.json";
  std::ofstream(path) << config.dump(2);
  return path;
}

}  // namespace toy_project
