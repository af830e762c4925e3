// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "arec/corpus.hpp"

namespace arec::royalty {

using Cents = std::int64_t;

struct UsageEvent {
  std::string track_id;
  std::string timestamp;  // RFC 3339
  double seconds_played = 0.0;
};

/// One JSON object per non-blank line: {track_id, timestamp, seconds_played}.
/// Throws InvalidUsage naming the line on malformed input.
std::vector<UsageEvent> parse_usage_jsonl(std::string_view text);
std::vector<UsageEvent> load_usage(const std::string& path);

/// "YYYY-MM" of an RFC 3339 timestamp; throws InvalidUsage if malformed.
std::string period_of(const std::string& timestamp);

using StreamCounts = std::map<std::string, std::int64_t>;

/// Plays with seconds_played >= min_seconds, per track.
StreamCounts count_eligible_streams(std::span<const UsageEvent> events, double min_seconds = 30.0);

enum class Source { subscription, advertisement, licensing, custom };
std::string to_string(Source s);
Source source_from_string(const std::string& s);

struct RevenueRecord {
  Source source = Source::subscription;
  std::string region;  // empty when no regions are configured
  std::string period;  // YYYY-MM
  Cents amount = 0;
};

struct PoolConfig {
  std::vector<Source> sources = {Source::subscription, Source::advertisement, Source::licensing, Source::custom};
  std::vector<std::string> regions;  // empty = a single region-less pool per source
};

struct RevenuePool {
  std::string pool_id;  // period/source[/region]
  Source source = Source::subscription;
  std::string region;
  Cents amount = 0;
  std::string period;
};

/// One pool per configured (source, region) for every period present in the
/// records, amounts summed. Throws NegativeAmount, or UnconfiguredBucket for a
/// record whose source or region is not configured.
std::vector<RevenuePool> build_pools(std::span<const RevenueRecord> records, const PoolConfig& config);

/// One audited apportionment of an amount over named shares.
struct RoundingStep {
  struct Share {
    std::string id;
    double quota = 0.0;  // exact share before rounding
    Cents floor = 0;
    Cents bonus = 0;     // 0 or 1 leftover cent
  };
  std::string scope;
  Cents amount = 0;
  std::vector<Share> shares;
};

/// Largest-remainder apportionment of `amount` by non-negative integer
/// weights; leftover cents go to the largest remainders, ties by ascending
/// id. Returns nullopt when the weights sum to zero.
std::optional<std::map<std::string, Cents>> apportion(Cents amount, const std::map<std::string, std::int64_t>& weights,
                                                      RoundingStep* audit = nullptr);
/// Same with real weights; quotas within 1e-9 of an integer count as exact.
std::optional<std::map<std::string, Cents>> apportion(Cents amount, const std::map<std::string, double>& weights,
                                                      RoundingStep* audit = nullptr);

/// Pro-rata split of a pool over stream counts. With a zero total the whole
/// amount is returned as `unallocated`.
struct Allocation {
  std::map<std::string, Cents> tracks;
  Cents unallocated = 0;
};
Allocation pro_rata_allocation(Cents pool_amount, const StreamCounts& counts, RoundingStep* audit = nullptr);

struct WeightPolicy {
  bool clip_negative = true;
  std::optional<int> top_k;         // keep the k largest (ties by index)
  std::optional<double> min_share;  // drop normalized weights below this, then renormalize
};

/// Normalized per-work weights for one track; nullopt marks it unattributed.
/// Throws InvalidConfig on non-finite scores, or on negative scores when
/// clip_negative is disabled.
std::optional<std::vector<double>> attribution_weights(std::span<const double> scores, const WeightPolicy& policy);

struct WeightEntry {
  std::string work_id;
  std::string rightsholder_id;
  double weight = 0.0;
};

/// Empty entries mark the track unattributed.
struct TrackWeights {
  std::vector<WeightEntry> entries;
  bool unattributed() const noexcept { return entries.empty(); }
};

using WeightTable = std::map<std::string, TrackWeights>;

/// Weights for one track from a score row over the corpus works.
TrackWeights track_weights(std::span<const double> scores, const std::vector<corpus::WorkInfo>& works,
                           const WeightPolicy& policy);

struct PoolBreakdown {
  std::string pool_id;
  Cents amount = 0;
  Cents platform = 0;
  Cents unattributed = 0;
  std::map<std::string, Cents> rightsholders;
};

struct RoyaltyStatement {
  std::string period;
  std::vector<PoolBreakdown> pools;
  std::map<std::string, Cents> lines;  // per rightsholder, over all pools
  Cents platform_amount = 0;
  Cents unattributed_amount = 0;
  Cents pool_total = 0;
  std::vector<RoundingStep> audit;

  bool conserved() const;
};

/// Two-step settlement: pro rata over tracks per pool, then per track the
/// platform cut and the rightsholder split, both by largest remainder.
/// Tracks without weights keep the platform cut and report the rest as
/// unattributed. All pools must share one period.
RoyaltyStatement settle(std::span<const RevenuePool> pools, const StreamCounts& counts, const WeightTable& weights,
                        double platform_cut);

inline constexpr char kPlatformLine[] = "__platform__";
inline constexpr char kUnattributedLine[] = "__unattributed__";

/// CSV: period,pool_id,rightsholder_id,amount_cents. Zero rightsholder lines
/// are omitted; every pool has a platform and an unattributed line.
std::string statement_csv(const RoyaltyStatement& s);
nlohmann::json audit_json(const RoyaltyStatement& s);

}  // namespace arec::royalty
