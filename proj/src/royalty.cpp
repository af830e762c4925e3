// SPDX-License-Identifier: Apache-2.0
#include "arec/royalty.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <regex>
#include <set>
#include <sstream>
#include <tuple>

#include "arec/error.hpp"
#include "arec/midi.hpp"

namespace arec::royalty {

using json = nlohmann::json;

namespace {

struct Quota {
  std::string id;
  long double exact;
};

// Shared largest-remainder core. Quotas must sum to `amount`.
std::map<std::string, Cents> largest_remainder(Cents amount, std::vector<Quota> quotas, RoundingStep* audit) {
  struct Row {
    std::string id;
    long double exact;
    Cents floor;
    long double remainder;
  };
  std::vector<Row> rows;
  Cents assigned = 0;
  for (auto& q : quotas) {
    long double exact = q.exact;
    const long double nearest = std::round(exact);
    if (std::fabs(exact - nearest) <= 1e-9L * std::max<long double>(1.0L, std::fabs(exact))) exact = nearest;
    const auto fl = static_cast<Cents>(std::floor(exact));
    rows.push_back({q.id, q.exact, fl, exact - static_cast<long double>(fl)});
    assigned += fl;
  }
  const Cents leftover = amount - assigned;
  if (leftover < 0 || leftover > static_cast<Cents>(rows.size()))
    throw Error(ErrorCode::Format, "apportionment leftover " + std::to_string(leftover) + " out of range");
  std::vector<std::size_t> order(rows.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (rows[a].remainder != rows[b].remainder) return rows[a].remainder > rows[b].remainder;
    return rows[a].id < rows[b].id;
  });
  std::vector<Cents> bonus(rows.size(), 0);
  for (Cents i = 0; i < leftover; ++i) bonus[order[static_cast<std::size_t>(i)]] = 1;

  std::map<std::string, Cents> out;
  if (audit) audit->amount = amount;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out[rows[i].id] = rows[i].floor + bonus[i];
    if (audit) audit->shares.push_back({rows[i].id, static_cast<double>(rows[i].exact), rows[i].floor, bonus[i]});
  }
  return out;
}

void require_nonnegative(Cents amount, const std::string& what) {
  if (amount < 0) throw Error(ErrorCode::NegativeAmount, what + " is negative: " + std::to_string(amount));
}

json step_json(const RoundingStep& step) {
  json shares = json::array();
  for (const auto& s : step.shares)
    shares.push_back({{"id", s.id}, {"quota", s.quota}, {"floor", s.floor}, {"bonus", s.bonus},
                      {"final", s.floor + s.bonus}});
  return {{"scope", step.scope}, {"amount_cents", step.amount}, {"shares", shares}};
}

}  // namespace

// ---------------------------------------------------------------------------
// Usage

std::string period_of(const std::string& timestamp) {
  static const std::regex kRfc3339(
      R"(^(\d{4})-(\d{2})-(\d{2})[Tt ](\d{2}):(\d{2}):(\d{2})(\.\d+)?([Zz]|([+-])(\d{2}):(\d{2}))$)");
  std::smatch m;
  if (!std::regex_match(timestamp, m, kRfc3339))
    throw Error(ErrorCode::InvalidUsage, "timestamp is not RFC 3339: " + timestamp);
  auto num = [&](int i) { return std::stoi(m[i].str()); };
  using namespace std::chrono;
  const year_month_day ymd{year{num(1)}, month{static_cast<unsigned>(num(2))}, day{static_cast<unsigned>(num(3))}};
  if (!ymd.ok() || num(4) > 23 || num(5) > 59 || num(6) > 60)
    throw Error(ErrorCode::InvalidUsage, "timestamp out of range: " + timestamp);
  // Shift to UTC so the period does not depend on the writer's offset.
  minutes local = hours{num(4)} + minutes{num(5)};
  if (m[9].matched) {
    const minutes offset = hours{num(10)} + minutes{num(11)};
    local -= m[9].str() == "+" ? offset : -offset;
  }
  const auto utc = sys_days{ymd} + local;
  const year_month_day day_utc{floor<days>(utc)};
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d-%02u", static_cast<int>(day_utc.year()),
                static_cast<unsigned>(day_utc.month()));
  return buf;
}

std::vector<UsageEvent> parse_usage_jsonl(std::string_view text) {
  std::vector<UsageEvent> out;
  std::size_t line_no = 0, pos = 0;
  while (pos <= text.size()) {
    const std::size_t end = std::min(text.find('\n', pos), text.size());
    const std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;
    const std::string where = "usage line " + std::to_string(line_no) + ": ";
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw Error(ErrorCode::InvalidUsage, where + e.what());
    }
    if (!j.is_object() || !j.contains("track_id") || !j.contains("timestamp") || !j.contains("seconds_played") ||
        !j["track_id"].is_string() || !j["timestamp"].is_string() || !j["seconds_played"].is_number())
      throw Error(ErrorCode::InvalidUsage, where + "expected {track_id, timestamp, seconds_played}");
    UsageEvent e{j["track_id"].get<std::string>(), j["timestamp"].get<std::string>(),
                 j["seconds_played"].get<double>()};
    if (!std::isfinite(e.seconds_played) || e.seconds_played < 0.0)
      throw Error(ErrorCode::InvalidUsage, where + "seconds_played must be finite and >= 0");
    try {
      period_of(e.timestamp);
    } catch (const Error& err) {
      throw Error(ErrorCode::InvalidUsage, where + err.what());
    }
    out.push_back(std::move(e));
  }
  return out;
}

std::vector<UsageEvent> load_usage(const std::string& path) {
  const auto bytes = midi::read_file(path);
  return parse_usage_jsonl(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
}

StreamCounts count_eligible_streams(std::span<const UsageEvent> events, double min_seconds) {
  if (!(min_seconds >= 0.0)) throw Error(ErrorCode::InvalidConfig, "min_seconds must be >= 0");
  StreamCounts counts;
  for (const auto& e : events)
    if (e.seconds_played >= min_seconds) ++counts[e.track_id];
  return counts;
}

// ---------------------------------------------------------------------------
// Pools

std::string to_string(Source s) {
  switch (s) {
    case Source::subscription: return "subscription";
    case Source::advertisement: return "advertisement";
    case Source::licensing: return "licensing";
    case Source::custom: return "custom";
  }
  return "unknown";
}

Source source_from_string(const std::string& s) {
  for (Source src : {Source::subscription, Source::advertisement, Source::licensing, Source::custom})
    if (to_string(src) == s) return src;
  throw Error(ErrorCode::InvalidConfig, "unknown revenue source: " + s);
}

std::vector<RevenuePool> build_pools(std::span<const RevenueRecord> records, const PoolConfig& config) {
  const std::vector<std::string> regions = config.regions.empty() ? std::vector<std::string>{""} : config.regions;
  std::map<std::tuple<std::string, Source, std::string>, Cents> sums;
  std::set<std::string> periods;
  for (const auto& r : records) {
    require_nonnegative(r.amount, "revenue record " + r.period + "/" + to_string(r.source));
    if (std::find(config.sources.begin(), config.sources.end(), r.source) == config.sources.end())
      throw Error(ErrorCode::UnconfiguredBucket, "source " + to_string(r.source) + " is not configured");
    if (std::find(regions.begin(), regions.end(), r.region) == regions.end())
      throw Error(ErrorCode::UnconfiguredBucket, "region '" + r.region + "' is not configured");
    sums[{r.period, r.source, r.region}] += r.amount;
    periods.insert(r.period);
  }
  std::vector<RevenuePool> pools;
  for (const auto& period : periods)
    for (Source src : config.sources)
      for (const auto& region : regions) {
        RevenuePool p;
        p.pool_id = period + "/" + to_string(src) + (region.empty() ? "" : "/" + region);
        p.source = src;
        p.region = region;
        p.period = period;
        if (auto it = sums.find({period, src, region}); it != sums.end()) p.amount = it->second;
        pools.push_back(std::move(p));
      }
  return pools;
}

// ---------------------------------------------------------------------------
// Apportionment

std::optional<std::map<std::string, Cents>> apportion(Cents amount, const std::map<std::string, std::int64_t>& weights,
                                                      RoundingStep* audit) {
  require_nonnegative(amount, "amount");
  __int128 total = 0;
  for (const auto& [id, w] : weights) {
    if (w < 0) throw Error(ErrorCode::InvalidConfig, "negative weight for " + id);
    total += w;
  }
  if (total == 0) return std::nullopt;
  // Exact integer floors and remainders; quotas only feed the audit.
  std::vector<Quota> quotas;
  std::map<std::string, Cents> floors;
  std::vector<std::tuple<__int128, std::string>> rems;
  Cents assigned = 0;
  for (const auto& [id, w] : weights) {
    const __int128 num = static_cast<__int128>(amount) * w;
    floors[id] = static_cast<Cents>(num / total);
    rems.emplace_back(num % total, id);
    assigned += floors[id];
    quotas.push_back({id, static_cast<long double>(amount) * static_cast<long double>(w) / static_cast<long double>(total)});
  }
  std::stable_sort(rems.begin(), rems.end(), [](const auto& a, const auto& b) {
    if (std::get<0>(a) != std::get<0>(b)) return std::get<0>(a) > std::get<0>(b);
    return std::get<1>(a) < std::get<1>(b);
  });
  std::map<std::string, Cents> out = floors;
  const Cents leftover = amount - assigned;
  for (Cents i = 0; i < leftover; ++i) ++out[std::get<1>(rems[static_cast<std::size_t>(i)])];
  if (audit) {
    audit->amount = amount;
    for (const auto& q : quotas)
      audit->shares.push_back({q.id, static_cast<double>(q.exact), floors[q.id], out[q.id] - floors[q.id]});
  }
  return out;
}

std::optional<std::map<std::string, Cents>> apportion(Cents amount, const std::map<std::string, double>& weights,
                                                      RoundingStep* audit) {
  require_nonnegative(amount, "amount");
  long double total = 0.0L;
  for (const auto& [id, w] : weights) {
    if (!std::isfinite(w) || w < 0.0) throw Error(ErrorCode::InvalidConfig, "invalid weight for " + id);
    total += w;
  }
  if (total <= 0.0L) return std::nullopt;
  std::vector<Quota> quotas;
  for (const auto& [id, w] : weights)
    quotas.push_back({id, static_cast<long double>(amount) * static_cast<long double>(w) / total});
  return largest_remainder(amount, std::move(quotas), audit);
}

Allocation pro_rata_allocation(Cents pool_amount, const StreamCounts& counts, RoundingStep* audit) {
  Allocation a;
  auto shares = apportion(pool_amount, counts, audit);
  if (!shares) {
    a.unallocated = pool_amount;
    if (audit) audit->amount = pool_amount;
    return a;
  }
  a.tracks = std::move(*shares);
  return a;
}

// ---------------------------------------------------------------------------
// Weights

std::optional<std::vector<double>> attribution_weights(std::span<const double> scores, const WeightPolicy& policy) {
  std::vector<double> w(scores.begin(), scores.end());
  for (double& v : w) {
    if (!std::isfinite(v)) throw Error(ErrorCode::InvalidConfig, "attribution scores must be finite");
    if (v < 0.0) {
      if (!policy.clip_negative) throw Error(ErrorCode::InvalidConfig, "negative score with clip_negative disabled");
      v = 0.0;
    }
  }
  if (policy.top_k) {
    if (*policy.top_k < 1) throw Error(ErrorCode::InvalidConfig, "top_k must be >= 1");
    std::vector<std::size_t> order(w.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return w[a] > w[b]; });
    for (std::size_t r = static_cast<std::size_t>(*policy.top_k); r < order.size(); ++r) w[order[r]] = 0.0;
  }
  auto normalize = [&]() {
    const double sum = std::accumulate(w.begin(), w.end(), 0.0);
    if (!(sum > 0.0)) return false;
    for (double& v : w) v /= sum;
    return true;
  };
  if (!normalize()) return std::nullopt;
  if (policy.min_share) {
    for (double& v : w)
      if (v < *policy.min_share) v = 0.0;
    if (!normalize()) return std::nullopt;
  }
  return w;
}

TrackWeights track_weights(std::span<const double> scores, const std::vector<corpus::WorkInfo>& works,
                           const WeightPolicy& policy) {
  if (scores.size() != works.size())
    throw Error(ErrorCode::DimensionMismatch, "score row has " + std::to_string(scores.size()) + " entries for " +
                                                  std::to_string(works.size()) + " works");
  TrackWeights tw;
  const auto w = attribution_weights(scores, policy);
  if (!w) return tw;
  for (std::size_t i = 0; i < works.size(); ++i)
    if ((*w)[i] > 0.0) tw.entries.push_back({works[i].work_id, works[i].rightsholder_id, (*w)[i]});
  return tw;
}

// ---------------------------------------------------------------------------
// Settlement

bool RoyaltyStatement::conserved() const {
  Cents sum = platform_amount + unattributed_amount;
  for (const auto& [id, c] : lines) sum += c;
  Cents pools_sum = 0;
  for (const auto& p : pools) {
    Cents s = p.platform + p.unattributed;
    for (const auto& [id, c] : p.rightsholders) s += c;
    if (s != p.amount) return false;
    pools_sum += p.amount;
  }
  return sum == pool_total && pools_sum == pool_total;
}

RoyaltyStatement settle(std::span<const RevenuePool> pools, const StreamCounts& counts, const WeightTable& weights,
                        double platform_cut) {
  if (!(platform_cut >= 0.0 && platform_cut <= 1.0))
    throw Error(ErrorCode::InvalidConfig, "platform_cut must be in [0, 1]");
  RoyaltyStatement st;
  if (!pools.empty()) st.period = pools.front().period;
  for (const auto& pool : pools) {
    require_nonnegative(pool.amount, "pool " + pool.pool_id);
    if (pool.period != st.period)
      throw Error(ErrorCode::InvalidConfig, "pools span several periods: " + st.period + ", " + pool.period);

    PoolBreakdown pb;
    pb.pool_id = pool.pool_id;
    pb.amount = pool.amount;
    RoundingStep step;
    step.scope = pool.pool_id;
    const Allocation alloc = pro_rata_allocation(pool.amount, counts, &step);
    st.audit.push_back(std::move(step));
    pb.unattributed += alloc.unallocated;

    for (const auto& [track, cents] : alloc.tracks) {
      RoundingStep cut;
      cut.scope = pool.pool_id + "/" + track + "/platform";
      const auto split = *apportion(cents, std::map<std::string, double>{{"platform", platform_cut},
                                                                         {"rights", 1.0 - platform_cut}},
                                    &cut);
      st.audit.push_back(std::move(cut));
      pb.platform += split.at("platform");
      const Cents rights = split.at("rights");

      const auto it = weights.find(track);
      if (it == weights.end() || it->second.unattributed()) {
        pb.unattributed += rights;
        continue;
      }
      std::map<std::string, double> by_holder;
      for (const auto& e : it->second.entries) by_holder[e.rightsholder_id] += e.weight;
      RoundingStep rs;
      rs.scope = pool.pool_id + "/" + track + "/rightsholders";
      const auto shares = apportion(rights, by_holder, &rs);
      st.audit.push_back(std::move(rs));
      if (!shares) {
        pb.unattributed += rights;
        continue;
      }
      for (const auto& [holder, c] : *shares) pb.rightsholders[holder] += c;
    }

    st.pool_total += pb.amount;
    st.platform_amount += pb.platform;
    st.unattributed_amount += pb.unattributed;
    for (const auto& [holder, c] : pb.rightsholders) st.lines[holder] += c;
    st.pools.push_back(std::move(pb));
  }
  if (!st.conserved()) throw Error(ErrorCode::Format, "settlement failed conservation");
  return st;
}

std::string statement_csv(const RoyaltyStatement& s) {
  std::ostringstream out;
  out << "period,pool_id,rightsholder_id,amount_cents\n";
  for (const auto& p : s.pools) {
    for (const auto& [holder, c] : p.rightsholders)
      if (c != 0) out << s.period << ',' << p.pool_id << ',' << holder << ',' << c << '\n';
    out << s.period << ',' << p.pool_id << ',' << kPlatformLine << ',' << p.platform << '\n';
    out << s.period << ',' << p.pool_id << ',' << kUnattributedLine << ',' << p.unattributed << '\n';
  }
  return out.str();
}

json audit_json(const RoyaltyStatement& s) {
  json pools = json::array();
  for (const auto& p : s.pools)
    pools.push_back({{"pool_id", p.pool_id}, {"amount_cents", p.amount}, {"platform_cents", p.platform},
                     {"unattributed_cents", p.unattributed}, {"rightsholders", p.rightsholders}});
  json steps = json::array();
  for (const auto& step : s.audit) steps.push_back(step_json(step));
  return {{"period", s.period},
          {"pool_total_cents", s.pool_total},
          {"platform_cents", s.platform_amount},
          {"unattributed_cents", s.unattributed_amount},
          {"lines", s.lines},
          {"conserved", s.conserved()},
          {"pools", pools},
          {"rounding_steps", steps}};
}

}  // namespace arec::royalty
