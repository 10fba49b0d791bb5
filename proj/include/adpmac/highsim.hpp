#pragma once

#include <cstdint>
#include <map>
#include <vector>

#include "adpmac/core.hpp"
#include "adpmac/traffic.hpp"

namespace adpmac::high {

/// Abstract single-hop model: an arrival array intersected with a poll array,
/// with byte-cost energy. No preambles, contention, collisions or retries.
struct HighLevelConfig {
  ArrivalModel arrival{ArrivalKind::CBR, 5.0};
  PollingDistribution polling{PollingKind::Deterministic, 1.0};
  double horizon_s = 5000.0;
  HighLevelEnergyModel energy;
  FrameSpec frames;
  std::uint64_t seed = 1;

  void validate() const {
    arrival.validate();
    polling.validate();
    energy.validate();
    frames.validate();
    if (polling.kind == PollingKind::Dynamic)
      throw ParameterError("the high-level model compares fixed polling distributions only");
    if (!(horizon_s > 0.0)) throw ParameterError("horizon must be positive");
  }
};

struct HighLevelResult {
  double total_energy_mJ = 0.0;
  double mean_delay_s = 0.0;
  std::int64_t poll_count = 0;
  std::int64_t packet_count = 0;  // delivered
  std::int64_t undelivered_count = 0;
  std::int64_t generated_count = 0;
  std::map<int, std::int64_t> superpacket_size_histogram;
};

/// Greedy split of the packets collected at one poll, largest groups first.
inline std::vector<int> group_into_superpackets(std::int64_t pending, int max_concat) {
  if (pending < 0 || max_concat < 1) throw ParameterError("invalid superpacket grouping request");
  std::vector<int> sizes(static_cast<std::size_t>(pending / max_concat), max_concat);
  if (const auto rest = static_cast<int>(pending % max_concat); rest > 0) sizes.push_back(rest);
  return sizes;
}

/// Data bytes of every super packet plus one block ACK each.
inline double superpacket_energy(const std::vector<int>& sizes, const HighLevelEnergyModel& energy,
                                 const FrameSpec& frames) {
  double total = 0.0;
  for (int k : sizes) {
    if (k < 1 || k > frames.max_concat) throw ParameterError("super packet size out of range");
    total += frames.superpacket_bytes(k) * energy.energy_per_byte_mJ + energy.energy_per_ack_mJ;
  }
  return total;
}

/// Poll instants in [0, horizon]. The first poll is at the first sampled gap;
/// generation stops at the first poll beyond the horizon, which is dropped.
/// Deterministic instants are k * interval so aligned cases stay exact.
inline std::vector<double> generate_polls(const PollingDistribution& polling, double horizon_s,
                                          RandomStream& rng) {
  std::vector<double> polls;
  if (polling.kind == PollingKind::Deterministic) {
    for (std::int64_t k = 1;; ++k) {
      const double t = static_cast<double>(k) * polling.mean_interval_s;
      if (t > horizon_s) break;
      polls.push_back(t);
    }
    return polls;
  }
  double t = 0.0;
  for (;;) {
    t += next_interval(polling, rng);
    if (t > horizon_s) break;
    polls.push_back(t);
  }
  return polls;
}

/// Core of the abstract model over given arrival and poll arrays (both sorted).
inline HighLevelResult intersect(const std::vector<double>& arrivals,
                                 const std::vector<double>& polls,
                                 const HighLevelEnergyModel& energy, const FrameSpec& frames) {
  HighLevelResult r;
  r.generated_count = static_cast<std::int64_t>(arrivals.size());
  r.poll_count = static_cast<std::int64_t>(polls.size());
  double energy_sum = static_cast<double>(r.poll_count) * energy.energy_per_poll_mJ;
  double delay_sum = 0.0;

  std::size_t next_arrival = 0;
  for (double p : polls) {
    std::int64_t collected = 0;
    // Arrival exactly at the poll instant is collected by that poll.
    while (next_arrival < arrivals.size() && arrivals[next_arrival] <= p) {
      delay_sum += p - arrivals[next_arrival];
      ++collected;
      ++next_arrival;
    }
    if (collected == 0) continue;
    const auto sizes = group_into_superpackets(collected, frames.max_concat);
    for (int k : sizes) ++r.superpacket_size_histogram[k];
    energy_sum += superpacket_energy(sizes, energy, frames);
    r.packet_count += collected;
  }
  r.undelivered_count = r.generated_count - r.packet_count;
  r.total_energy_mJ = energy_sum;
  r.mean_delay_s = r.packet_count > 0 ? delay_sum / static_cast<double>(r.packet_count) : 0.0;
  return r;
}

inline HighLevelResult run_high_level(const HighLevelConfig& config) {
  config.validate();
  auto arrival_rng = RandomStream::substream(config.seed, 1, StreamPurpose::Arrivals);
  auto poll_rng = RandomStream::substream(config.seed, 0, StreamPurpose::Polling);
  const auto timeline =
      generate_arrivals(config.arrival, config.horizon_s, std::nullopt, arrival_rng, 1);
  const auto polls = generate_polls(config.polling, config.horizon_s, poll_rng);
  return intersect(timeline.timestamps_s, polls, config.energy, config.frames);
}

}  // namespace adpmac::high
