#pragma once

#include <cmath>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>

#include "adpmac/random.hpp"

namespace adpmac {

/// Raised when a model parameter violates its invariants.
class ParameterError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when an estimator is asked for a value it cannot compute from the
/// data it was given (too few samples).
class InsufficientData : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

enum class PollingKind { Deterministic, Exponential, Dynamic };
enum class ArrivalKind { CBR, Poisson, Bursty };

inline std::string_view to_string(PollingKind k) {
  switch (k) {
    case PollingKind::Deterministic: return "deterministic";
    case PollingKind::Exponential: return "exponential";
    case PollingKind::Dynamic: return "dynamic";
  }
  return "?";
}

inline std::string_view to_string(ArrivalKind k) {
  switch (k) {
    case ArrivalKind::CBR: return "cbr";
    case ArrivalKind::Poisson: return "poisson";
    case ArrivalKind::Bursty: return "bursty";
  }
  return "?";
}

inline PollingKind parse_polling_kind(std::string_view s) {
  if (s == "deterministic") return PollingKind::Deterministic;
  if (s == "exponential") return PollingKind::Exponential;
  if (s == "dynamic") return PollingKind::Dynamic;
  throw ParameterError("unknown polling kind: " + std::string(s));
}

inline ArrivalKind parse_arrival_kind(std::string_view s) {
  if (s == "cbr") return ArrivalKind::CBR;
  if (s == "poisson") return ArrivalKind::Poisson;
  if (s == "bursty") return ArrivalKind::Bursty;
  throw ParameterError("unknown arrival kind: " + std::string(s));
}

/// Law that produces successive channel-poll gaps.
struct PollingDistribution {
  PollingKind kind = PollingKind::Deterministic;
  double mean_interval_s = 1.0;
  double dynamic_threshold = 0.8;
  double cycle_duration_s = 10.0;

  void validate() const {
    if (!(mean_interval_s > 0.0)) throw ParameterError("polling mean interval must be positive");
    if (!(cycle_duration_s > 0.0)) throw ParameterError("cycle duration must be positive");
    if (!(dynamic_threshold > 0.0)) throw ParameterError("Cv threshold must be positive");
  }
};

/// Packet generation process of a source.
///
/// Bursty is a two-state ON/OFF source: exponential dwell times, Poisson
/// generation at burst_rate_factor times the base rate while ON, silence while
/// OFF. The long-run rate equals 1 / mean_interval_s only when
/// burst_rate_factor * on / (on + off) == 1, which validate() enforces.
struct ArrivalModel {
  ArrivalKind kind = ArrivalKind::CBR;
  double mean_interval_s = 5.0;
  double burst_on_mean_s = 5.0;
  double burst_off_mean_s = 45.0;
  double burst_rate_factor = 10.0;

  void validate() const {
    if (!(mean_interval_s > 0.0)) throw ParameterError("arrival mean interval must be positive");
    if (kind != ArrivalKind::Bursty) return;
    if (!(burst_on_mean_s > 0.0) || !(burst_off_mean_s > 0.0) || !(burst_rate_factor > 0.0))
      throw ParameterError("bursty ON/OFF parameters must be positive");
    const double duty = burst_on_mean_s / (burst_on_mean_s + burst_off_mean_s);
    if (std::abs(duty * burst_rate_factor - 1.0) > 1e-9)
      throw ParameterError(
          "bursty model: burst_rate_factor * on / (on + off) must equal 1 so the long-run "
          "rate matches mean_interval_s");
  }
};

/// Frame sizes in bytes.
struct FrameSpec {
  int data_payload_bytes = 50;
  int data_overhead_bytes = 11;
  int ack_bytes = 10;
  int preamble_strobe_bytes = 2;
  int early_ack_bytes = 10;
  int max_concat = 5;

  constexpr int single_data_bytes() const { return data_payload_bytes + data_overhead_bytes; }

  /// k packets concatenated behind one header.
  constexpr int superpacket_bytes(int k) const {
    return k * data_payload_bytes + data_overhead_bytes;
  }

  void validate() const {
    if (data_payload_bytes < 1 || data_overhead_bytes < 0 || ack_bytes < 1 ||
        preamble_strobe_bytes < 1 || early_ack_bytes < 1 || max_concat < 1)
      throw ParameterError("frame sizes must be positive");
  }
};

/// Byte-cost energy constants of the abstract model.
struct HighLevelEnergyModel {
  double energy_per_byte_mJ = 0.5;
  double energy_per_poll_mJ = 1.0;
  double energy_per_ack_mJ = 5.0;
  double energy_single_data_mJ = 30.5;

  void validate() const {
    if (energy_per_byte_mJ < 0 || energy_per_poll_mJ < 0 || energy_per_ack_mJ < 0 ||
        energy_single_data_mJ < 0)
      throw ParameterError("energy constants must be non-negative");
  }
};

struct CvEstimate {
  std::size_t sample_count = 0;
  double mean_s = 0.0;
  double std_s = 0.0;
  double cv = 0.0;
};

namespace detail {

/// Mean and sample (n-1) standard deviation; two-pass for accuracy.
inline CvEstimate moments(std::span<const double> xs) {
  CvEstimate e;
  e.sample_count = xs.size();
  double sum = 0.0;
  for (double x : xs) sum += x;
  e.mean_s = sum / static_cast<double>(xs.size());
  double ss = 0.0;
  for (double x : xs) ss += (x - e.mean_s) * (x - e.mean_s);
  e.std_s = std::sqrt(ss / static_cast<double>(xs.size() - 1));
  e.cv = e.mean_s > 0.0 ? e.std_s / e.mean_s : 0.0;
  return e;
}

}  // namespace detail

/// Coefficient of variation of positive samples, using the n-1 divisor.
/// Throws InsufficientData for fewer than two samples.
inline CvEstimate coefficient_of_variation(std::span<const double> samples) {
  if (samples.size() < 2) throw InsufficientData("Cv needs at least two samples");
  for (double x : samples)
    if (!(x > 0.0)) throw ParameterError("Cv samples must be positive");
  return detail::moments(samples);
}

/// Exponential iff cv is strictly above the threshold.
constexpr PollingKind select_distribution(double cv, double threshold) noexcept {
  return cv > threshold ? PollingKind::Exponential : PollingKind::Deterministic;
}

/// Next poll gap drawn with an explicit fixed kind. Deterministic ignores rng.
inline double next_interval(PollingKind kind, double mean_s, RandomStream& rng) {
  if (!(mean_s > 0.0)) throw ParameterError("mean interval must be positive");
  switch (kind) {
    case PollingKind::Deterministic: return mean_s;
    case PollingKind::Exponential: return rng.exponential(mean_s);
    case PollingKind::Dynamic: break;
  }
  throw ParameterError("dynamic polling needs the currently selected kind");
}

/// Next poll gap. Dynamic distributions have no fixed law; callers use the
/// (kind, mean, rng) overload with the currently selected kind.
inline double next_interval(const PollingDistribution& dist, RandomStream& rng) {
  dist.validate();
  return next_interval(dist.kind, dist.mean_interval_s, rng);
}

/// Next inter-arrival gap for the memoryless arrival kinds. Bursty arrivals
/// carry ON/OFF state and are drawn through ArrivalProcess instead.
inline double next_interval(const ArrivalModel& model, RandomStream& rng) {
  model.validate();
  switch (model.kind) {
    case ArrivalKind::CBR: return model.mean_interval_s;
    case ArrivalKind::Poisson: return rng.exponential(model.mean_interval_s);
    case ArrivalKind::Bursty: break;
  }
  throw ParameterError("bursty arrivals are stateful; use ArrivalProcess");
}

/// Stateful inter-arrival generator covering every arrival kind.
class ArrivalProcess {
 public:
  ArrivalProcess(const ArrivalModel& model, RandomStream& rng) : model_(model), rng_(&rng) {
    model_.validate();
    if (model_.kind == ArrivalKind::Bursty) {
      const double p_on =
          model_.burst_on_mean_s / (model_.burst_on_mean_s + model_.burst_off_mean_s);
      on_ = rng_->uniform_open() < p_on;
      dwell_left_ = rng_->exponential(on_ ? model_.burst_on_mean_s : model_.burst_off_mean_s);
    }
  }

  double next_gap() {
    if (model_.kind != ArrivalKind::Bursty) return next_interval(model_, *rng_);
    const double on_gap_mean = model_.mean_interval_s / model_.burst_rate_factor;
    double elapsed = 0.0;
    for (;;) {
      if (on_) {
        // Memorylessness lets a gap be redrawn after each state change.
        const double g = rng_->exponential(on_gap_mean);
        if (g < dwell_left_) {
          dwell_left_ -= g;
          return elapsed + g;
        }
        elapsed += dwell_left_;
        on_ = false;
        dwell_left_ = rng_->exponential(model_.burst_off_mean_s);
      } else {
        elapsed += dwell_left_;
        on_ = true;
        dwell_left_ = rng_->exponential(model_.burst_on_mean_s);
      }
    }
  }

 private:
  ArrivalModel model_;
  RandomStream* rng_;
  bool on_ = true;
  double dwell_left_ = 0.0;
};

}  // namespace adpmac
