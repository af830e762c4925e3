// SPDX-License-Identifier: Apache-2.0
#include "arec/corpus.hpp"

#include <filesystem>

#include <json.hpp>

#include "arec/error.hpp"
#include "arec/hash.hpp"
#include "arec/midi.hpp"

namespace arec::corpus {

using events::EventSequence;
using events::Token;
using json = nlohmann::json;

namespace {
constexpr char kMagic[] = "AREC1";
constexpr std::size_t kMagicLen = 5;
}  // namespace

std::vector<EventSequence> make_training_windows(const EventSequence& events, int window_len) {
  if (window_len < 2) throw Error(ErrorCode::InvalidConfig, "window_len must be >= 2");
  const auto len = static_cast<std::size_t>(window_len);
  if (events.size() < len)
    throw Error(ErrorCode::EmptyInput, std::to_string(events.size()) + " tokens is shorter than one window of " +
                                           std::to_string(window_len));
  std::vector<EventSequence> windows;
  for (std::size_t start = 0; start + len <= events.size(); start += len)
    windows.emplace_back(events.begin() + static_cast<std::ptrdiff_t>(start),
                         events.begin() + static_cast<std::ptrdiff_t>(start + len));
  return windows;
}

std::uint64_t Corpus::content_hash() const {
  Fnv1a h;
  h.value(window_len);
  for (const auto& w : windows) h.values(std::span<const Token>(w));
  for (const auto& info : works) h.text(info.work_id).text("\x1f");
  return h.digest();
}

Corpus Corpus::subset(const std::vector<bool>& keep) const {
  if (keep.size() != windows.size()) throw Error(ErrorCode::DimensionMismatch, "subset mask length");
  Corpus out;
  out.window_len = window_len;
  for (std::size_t i = 0; i < windows.size(); ++i) {
    if (!keep[i]) continue;
    out.windows.push_back(windows[i]);
    if (i < works.size()) out.works.push_back(works[i]);
  }
  return out;
}

Corpus build_corpus(const std::vector<Source>& sources, int window_len, int max_windows_per_source) {
  if (window_len < 2) throw Error(ErrorCode::InvalidConfig, "window_len must be >= 2");
  Corpus out;
  out.window_len = window_len;
  for (const Source& src : sources) {
    if (src.events.size() < static_cast<std::size_t>(window_len)) continue;
    auto windows = make_training_windows(src.events, window_len);
    if (max_windows_per_source > 0 && windows.size() > static_cast<std::size_t>(max_windows_per_source))
      windows.resize(static_cast<std::size_t>(max_windows_per_source));
    const std::string stem = std::filesystem::path(src.source_file).stem().string();
    for (std::size_t i = 0; i < windows.size(); ++i) {
      out.works.push_back({stem + ":" + std::to_string(i), src.rightsholder_id, src.source_file,
                           i * static_cast<std::size_t>(window_len)});
      out.windows.push_back(std::move(windows[i]));
    }
  }
  if (out.windows.empty()) throw Error(ErrorCode::EmptyCorpus, "no source is long enough for one window");
  return out;
}

std::vector<std::uint8_t> encode_tokens(std::span<const Token> tokens) {
  std::vector<std::uint8_t> out(kMagic, kMagic + kMagicLen);
  const std::uint64_t n = tokens.size();
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(n >> (8 * i)));
  for (Token t : tokens) {
    if (!events::is_valid_token(t)) throw Error(ErrorCode::InvalidToken, "token " + std::to_string(t));
    out.push_back(static_cast<std::uint8_t>(t & 0xff));
    out.push_back(static_cast<std::uint8_t>(t >> 8));
  }
  return out;
}

std::vector<Token> decode_tokens(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kMagicLen + 8 || !std::equal(kMagic, kMagic + kMagicLen, bytes.begin()))
    throw Error(ErrorCode::Format, "not an AREC1 token file");
  std::uint64_t n = 0;
  for (int i = 0; i < 8; ++i) n |= static_cast<std::uint64_t>(bytes[kMagicLen + i]) << (8 * i);
  const std::size_t body = kMagicLen + 8;
  if ((bytes.size() - body) / 2 < n) throw Error(ErrorCode::Format, "AREC1 token file truncated");
  std::vector<Token> tokens(n);
  for (std::uint64_t i = 0; i < n; ++i) {
    const Token t = bytes[body + 2 * i] | (bytes[body + 2 * i + 1] << 8);
    if (!events::is_valid_token(t)) throw Error(ErrorCode::InvalidToken, "token " + std::to_string(t));
    tokens[i] = t;
  }
  return tokens;
}

void save_corpus(const Corpus& corpus, const std::string& stem) {
  std::vector<Token> flat;
  flat.reserve(corpus.size() * static_cast<std::size_t>(corpus.window_len));
  for (const auto& w : corpus.windows) {
    if (static_cast<int>(w.size()) != corpus.window_len)
      throw Error(ErrorCode::DimensionMismatch, "window length differs from corpus window_len");
    flat.insert(flat.end(), w.begin(), w.end());
  }
  midi::write_file(stem + ".arec", encode_tokens(flat));

  json manifest;
  manifest["format"] = "AREC1";
  manifest["window_len"] = corpus.window_len;
  manifest["window_count"] = corpus.size();
  manifest["windows"] = json::array();
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const WorkInfo& w = corpus.works.at(i);
    manifest["windows"].push_back({{"index", i},
                                   {"work_id", w.work_id},
                                   {"rightsholder_id", w.rightsholder_id},
                                   {"source_file", w.source_file},
                                   {"offset", w.offset}});
  }
  const std::string text = manifest.dump(2) + "\n";
  midi::write_file(stem + ".json", std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

Corpus load_corpus(const std::string& stem) {
  const auto tokens = decode_tokens(midi::read_file(stem + ".arec"));
  const auto raw = midi::read_file(stem + ".json");
  json manifest;
  try {
    manifest = json::parse(raw.begin(), raw.end());
  } catch (const json::exception& e) {
    throw Error(ErrorCode::Format, stem + ".json: " + e.what());
  }
  Corpus c;
  c.window_len = manifest.at("window_len").get<int>();
  const std::size_t count = manifest.at("window_count").get<std::size_t>();
  if (c.window_len < 2 || tokens.size() != count * static_cast<std::size_t>(c.window_len))
    throw Error(ErrorCode::Format, "manifest does not match token file");
  for (std::size_t i = 0; i < count; ++i) {
    const auto begin = tokens.begin() + static_cast<std::ptrdiff_t>(i * c.window_len);
    c.windows.emplace_back(begin, begin + c.window_len);
    const json& w = manifest.at("windows").at(i);
    c.works.push_back({w.at("work_id").get<std::string>(), w.at("rightsholder_id").get<std::string>(),
                       w.at("source_file").get<std::string>(), w.at("offset").get<std::size_t>()});
  }
  return c;
}

}  // namespace arec::corpus
