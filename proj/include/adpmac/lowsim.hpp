#pragma once

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <deque>
#include <limits>
#include <optional>
#include <ostream>
#include <queue>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "adpmac/core.hpp"
#include "adpmac/stats.hpp"
#include "adpmac/traffic.hpp"

namespace adpmac::low {

/// Implementation bug detected at run time (illegal event for a mode, time
/// going backwards, broken accounting). Never a modeled network condition.
class IntegrityFault : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// The run exceeded its event budget.
class EventCapExceeded : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Radio power draw per state. Defaults are representative of a Mica2-class
/// CC1000 radio; only trends are compared, so they are configuration.
struct RadioPowerProfile {
  double tx_mW = 65.0;
  double rx_mW = 29.0;
  double listen_mW = 29.0;
  double sleep_mW = 0.003;

  void validate() const {
    if (tx_mW < 0 || rx_mW < 0 || listen_mW < 0 || sleep_mW < 0)
      throw ParameterError("radio power must be non-negative");
  }
};

struct MacParams {
  double strobe_gap_s = 5e-3;      ///< sink listen margin after a block ACK, beyond the longest backoff
  double early_ack_wait_s = 2e-3;  ///< sender listen window after each strobe
  double cca_slot_s = 1e-3;        ///< CCA duration and backoff slot length
  int initial_backoff_slots = 16;
  int max_backoff_slots = 128;
  int max_retries = 5;
  std::optional<double> strobe_timeout_s;  ///< defaults to 2 x polling mean
  double poll_listen_s = 3e-3;             ///< sink channel check per poll; spans one strobe period
  int max_poll_extensions = 8;             ///< extra checks while energy is heard but nothing decodes

  void validate() const {
    if (!(strobe_gap_s > 0) || !(early_ack_wait_s > 0) || !(cca_slot_s > 0) ||
        !(poll_listen_s > 0) || initial_backoff_slots < 1 ||
        max_backoff_slots < initial_backoff_slots || max_retries < 1 || max_poll_extensions < 0)
      throw ParameterError("MAC parameters must be positive");
    if (strobe_timeout_s && !(*strobe_timeout_s > 0))
      throw ParameterError("strobe timeout must be positive");
  }
};

struct LowLevelConfig {
  int node_count = 10;  ///< node 0 is the sink, the rest are sources
  double bit_rate_bps = 18780.0;
  ArrivalModel arrival{ArrivalKind::CBR, 50.0};
  int packets_per_node = 20;
  PollingDistribution polling{PollingKind::Deterministic, 1.0};
  FrameSpec frames;
  RadioPowerProfile radio;
  MacParams mac;
  std::uint64_t seed = 1;

  /// Per-source boot offsets (size node_count - 1). Empty: uniform in
  /// [0, arrival mean) drawn from each source's phase stream.
  std::vector<double> start_offsets_s;
  /// Explicit arrival instants keyed by node_id; replaces generation when set.
  std::vector<ArrivalTimeline> timelines;
  /// The run lasts at least this long even if all packets resolve earlier.
  double min_duration_s = 0.0;
  PollingKind dynamic_initial_kind = PollingKind::Deterministic;
  std::uint64_t event_cap = 100'000'000;
  std::string label;

  double strobe_timeout() const {
    return mac.strobe_timeout_s.value_or(2.0 * polling.mean_interval_s);
  }

  void validate() const {
    if (node_count < 2) throw ParameterError("need at least one source and the sink");
    if (!(bit_rate_bps > 0)) throw ParameterError("bit rate must be positive");
    if (packets_per_node < 0) throw ParameterError("packets_per_node must be non-negative");
    arrival.validate();
    polling.validate();
    frames.validate();
    radio.validate();
    mac.validate();
    if (!start_offsets_s.empty() &&
        start_offsets_s.size() != static_cast<std::size_t>(node_count - 1))
      throw ParameterError("start_offsets_s needs one entry per source");
    for (const auto& tl : timelines)
      if (tl.node_id < 1 || tl.node_id >= node_count)
        throw ParameterError("timeline node_id must name a source");
    if (dynamic_initial_kind == PollingKind::Dynamic)
      throw ParameterError("dynamic polling must start from a fixed kind");
  }
};

inline double airtime(int bytes, double bit_rate_bps) {
  if (bytes < 1) throw ParameterError("airtime needs at least one byte");
  if (!(bit_rate_bps > 0)) throw ParameterError("bit rate must be positive");
  return bytes * 8.0 / bit_rate_bps;
}

enum class EventKind {
  PacketGenerated,
  PollStart,
  PollListenEnd,
  CcaEnd,
  StrobeTxEnd,
  EarlyAckWaitEnd,
  EarlyAckTxEnd,
  DataTxEnd,
  AckTxEnd,
  BlockAckTimeout,
  RxTimeout,
  BackoffExpired,
  CycleBoundary,
  StrobeTimeout,
};

inline std::string_view to_string(EventKind k) {
  switch (k) {
    case EventKind::PacketGenerated: return "PacketGenerated";
    case EventKind::PollStart: return "PollStart";
    case EventKind::PollListenEnd: return "PollListenEnd";
    case EventKind::CcaEnd: return "CcaEnd";
    case EventKind::StrobeTxEnd: return "StrobeTxEnd";
    case EventKind::EarlyAckWaitEnd: return "EarlyAckWaitEnd";
    case EventKind::EarlyAckTxEnd: return "EarlyAckTxEnd";
    case EventKind::DataTxEnd: return "DataTxEnd";
    case EventKind::AckTxEnd: return "AckTxEnd";
    case EventKind::BlockAckTimeout: return "BlockAckTimeout";
    case EventKind::RxTimeout: return "RxTimeout";
    case EventKind::BackoffExpired: return "BackoffExpired";
    case EventKind::CycleBoundary: return "CycleBoundary";
    case EventKind::StrobeTimeout: return "StrobeTimeout";
  }
  return "?";
}

struct Event {
  double time_s = 0.0;
  std::uint64_t seq = 0;
  int node_id = 0;
  EventKind kind = EventKind::PollStart;
  std::uint64_t token = 0;   ///< timer generation; stale timers are skipped
  std::int64_t payload = 0;  ///< frame id or packet id
};

struct EventLater {
  bool operator()(const Event& a, const Event& b) const {
    if (a.time_s != b.time_s) return a.time_s > b.time_s;
    return a.seq > b.seq;
  }
};

/// Min-queue in (time, seq) order.
class EventQueue {
 public:
  std::uint64_t push(Event e) {
    e.seq = next_seq_++;
    heap_.push(e);
    return e.seq;
  }
  Event pop() {
    Event e = heap_.top();
    heap_.pop();
    return e;
  }
  const Event& top() const { return heap_.top(); }
  bool empty() const { return heap_.empty(); }

 private:
  std::priority_queue<Event, std::vector<Event>, EventLater> heap_;
  std::uint64_t next_seq_ = 0;
};

enum class Mode {
  Sleep,
  Backoff,
  Cca,
  Polling,
  RxPending,
  StrobeSending,
  AwaitEarlyAck,
  DataSending,
  AwaitBlockAck,
  AckSending,
};
inline constexpr std::size_t kModeCount = 10;

inline std::string_view to_string(Mode m) {
  constexpr std::array<std::string_view, kModeCount> names{
      "Sleep",         "Backoff",     "Cca",           "Polling",       "RxPending",
      "StrobeSending", "AwaitEarlyAck", "DataSending", "AwaitBlockAck", "AckSending"};
  return names[static_cast<std::size_t>(m)];
}

constexpr bool is_listening(Mode m) {
  return m == Mode::Cca || m == Mode::Polling || m == Mode::RxPending ||
         m == Mode::AwaitEarlyAck || m == Mode::AwaitBlockAck;
}

constexpr bool is_transmitting(Mode m) {
  return m == Mode::StrobeSending || m == Mode::DataSending || m == Mode::AckSending;
}

inline double mode_power_mW(Mode m, const RadioPowerProfile& r) {
  switch (m) {
    case Mode::Sleep:
    case Mode::Backoff: return r.sleep_mW;
    case Mode::Cca:
    case Mode::Polling: return r.listen_mW;
    case Mode::RxPending:
    case Mode::AwaitEarlyAck:
    case Mode::AwaitBlockAck: return r.rx_mW;
    case Mode::StrobeSending:
    case Mode::DataSending:
    case Mode::AckSending: return r.tx_mW;
  }
  return 0.0;
}

/// Seconds spent in each mode. Sums are compensated so that the ledger of a
/// long run still closes on the simulation clock to well under a nanosecond.
struct EnergyLedger {
  std::array<double, kModeCount> seconds{};
  std::array<double, kModeCount> compensation{};

  void add(Mode m, double dt) {
    const auto i = static_cast<std::size_t>(m);
    const double t = seconds[i] + dt;
    if (std::abs(seconds[i]) >= std::abs(dt))
      compensation[i] += (seconds[i] - t) + dt;
    else
      compensation[i] += (dt - t) + seconds[i];
    seconds[i] = t;
  }

  void settle() {
    for (std::size_t i = 0; i < kModeCount; ++i) {
      seconds[i] += compensation[i];
      compensation[i] = 0.0;
    }
  }

  double total_seconds() const {
    long double s = 0.0L;
    for (std::size_t i = 0; i < kModeCount; ++i) s += static_cast<long double>(seconds[i]) + compensation[i];
    return static_cast<double>(s);
  }
  double energy_mJ(const RadioPowerProfile& r) const {
    double e = 0.0;
    for (std::size_t i = 0; i < kModeCount; ++i)
      e += seconds[i] * mode_power_mW(static_cast<Mode>(i), r);
    return e;
  }
  double operator[](Mode m) const { return seconds[static_cast<std::size_t>(m)]; }
};

struct NodeState {
  Mode mode = Mode::Sleep;
  double mode_since_s = 0.0;
  double listen_since_s = 0.0;
  std::deque<std::int64_t> tx_queue;  ///< packet ids, head first
  int retry_count = 0;
  int busy_streak = 0;
  EnergyLedger energy_ledger;
  PollingKind current_polling_kind = PollingKind::Deterministic;  ///< sink only

  std::uint64_t timer_token = 0;
  std::uint64_t deadline_token = 0;
  std::int64_t rx_frame = -1;
  int inflight = 0;
  bool strobe_expired = false;
  double cca_start_s = 0.0;
  int expected_sender = -1;
  double window_start_s = 0.0;
  int extensions = 0;
};

enum class FrameType { Strobe, EarlyAck, Data, BlockAck };

inline std::string_view to_string(FrameType t) {
  switch (t) {
    case FrameType::Strobe: return "strobe";
    case FrameType::EarlyAck: return "early_ack";
    case FrameType::Data: return "data";
    case FrameType::BlockAck: return "block_ack";
  }
  return "?";
}

struct Frame {
  std::int64_t id = -1;
  FrameType type = FrameType::Strobe;
  int sender = 0;
  int dest = 0;
  double start_s = 0.0;
  double end_s = 0.0;
  bool collided = false;
  std::vector<std::int64_t> packets;
};

enum class FrameOutcome { Delivered, Collided };

/// Shared half-duplex medium. Any overlap of [start, end) intervals destroys
/// every frame involved; no capture, zero propagation delay.
class ChannelState {
 public:
  std::int64_t transmit(Frame f) {
    f.id = next_id_++;
    for (auto& a : active_) {
      if (a.end_s > f.start_s && f.end_s > a.start_s) {
        a.collided = true;
        f.collided = true;
      }
    }
    active_.push_back(std::move(f));
    return active_.back().id;
  }

  /// Removes a finished frame and reports whether it survived.
  std::pair<Frame, FrameOutcome> resolve(std::int64_t id) {
    auto it = std::find_if(active_.begin(), active_.end(), [id](const Frame& f) { return f.id == id; });
    if (it == active_.end()) throw IntegrityFault("resolving a frame that is not on the channel");
    Frame f = std::move(*it);
    active_.erase(it);
    last_end_s_ = std::max(last_end_s_, f.end_s);
    return {std::move(f), f.collided ? FrameOutcome::Collided : FrameOutcome::Delivered};
  }

  /// Ideal energy detection: was anything on the air during (t0, now]?
  bool busy_since(double t0, double now) const {
    if (last_end_s_ > t0) return true;
    for (const auto& a : active_)
      if (std::min(a.end_s, now) > std::max(a.start_s, t0) || (a.start_s <= t0 && a.end_s > t0))
        return true;
    return false;
  }

  const Frame* find(std::int64_t id) const {
    for (const auto& a : active_)
      if (a.id == id) return &a;
    return nullptr;
  }

  const std::vector<Frame>& active() const { return active_; }

 private:
  std::vector<Frame> active_;
  std::int64_t next_id_ = 0;
  double last_end_s_ = -std::numeric_limits<double>::infinity();
};

/// One Cv evaluation at a cycle boundary (dynamic polling only).
struct CycleRecord {
  std::int64_t index = 0;
  double time_s = 0.0;
  std::size_t observations = 0;
  std::optional<double> cv;  ///< nullopt: insufficient data, kind kept
  PollingKind kind_after = PollingKind::Deterministic;
};

struct PollingSwitch {
  double time_s = 0.0;
  PollingKind from = PollingKind::Deterministic;
  PollingKind to = PollingKind::Deterministic;
  double cv = 0.0;
};

struct PacketRecord {
  int node_id = 0;
  double generated_s = 0.0;
  std::optional<double> delivered_s;
  bool dropped = false;
};

struct LowLevelResult {
  RunMetrics metrics;
  std::int64_t generated = 0;
  double end_time_s = 0.0;
  double strobe_energy_mJ = 0.0;
  std::int64_t strobes_sent = 0;
  std::int64_t polls = 0;
  std::int64_t events_processed = 0;
  double max_time_residual_s = 0.0;
  std::vector<EnergyLedger> ledgers;
  std::vector<CycleRecord> cycles;
  std::vector<PollingSwitch> switches;
  PollingKind final_polling_kind = PollingKind::Deterministic;
  std::vector<PacketRecord> packets;
};

/// Event-driven ADP-MAC over a star: sources strobe, the sink polls.
class Simulator {
 public:
  explicit Simulator(LowLevelConfig config, std::ostream* trace = nullptr)
      : cfg_(std::move(config)), trace_(trace) {
    cfg_.validate();
    const auto& f = cfg_.frames;
    t_strobe_ = airtime(f.preamble_strobe_bytes, cfg_.bit_rate_bps);
    t_early_ack_ = airtime(f.early_ack_bytes, cfg_.bit_rate_bps);
    t_block_ack_ = airtime(f.ack_bytes, cfg_.bit_rate_bps);
    nodes_.resize(static_cast<std::size_t>(cfg_.node_count));
    for (int n = 0; n < cfg_.node_count; ++n)
      backoff_rng_.push_back(RandomStream::substream(cfg_.seed, static_cast<std::uint64_t>(n),
                                                     StreamPurpose::Backoff));
    if (trace_) *trace_ << "time_s,seq,node_id,kind,detail\n";
  }

  LowLevelResult run() {
    setup();
    while (!queue_.empty()) {
      if (resolved_ == static_cast<std::int64_t>(packets_.size()) &&
          queue_.top().time_s > cfg_.min_duration_s)
        break;
      Event ev = queue_.pop();
      if (ev.time_s < now_) throw IntegrityFault("event processed out of time order");
      now_ = ev.time_s;
      if (++events_ > cfg_.event_cap)
        throw EventCapExceeded("event cap of " + std::to_string(cfg_.event_cap) + " exceeded");
      dispatch(ev);
    }
    return finish(std::max(now_, cfg_.min_duration_s));
  }

 private:
  static constexpr int kSink = 0;

  // ---- setup -------------------------------------------------------------

  void setup() {
    const int sources = cfg_.node_count - 1;
    std::vector<ArrivalTimeline> timelines;
    if (!cfg_.timelines.empty()) {
      timelines = cfg_.timelines;
    } else {
      for (int n = 1; n <= sources; ++n) {
        double offset;
        if (!cfg_.start_offsets_s.empty()) {
          offset = cfg_.start_offsets_s[static_cast<std::size_t>(n - 1)];
        } else {
          auto phase = RandomStream::substream(cfg_.seed, static_cast<std::uint64_t>(n),
                                               StreamPurpose::Phase);
          offset = phase.uniform_open() * cfg_.arrival.mean_interval_s;
        }
        auto rng = RandomStream::substream(cfg_.seed, static_cast<std::uint64_t>(n),
                                           StreamPurpose::Arrivals);
        timelines.push_back(generate_arrivals(
            cfg_.arrival, std::numeric_limits<double>::infinity(),
            static_cast<std::size_t>(cfg_.packets_per_node), rng, n, offset));
      }
    }
    for (const auto& tl : timelines) {
      for (double t : tl.timestamps_s) {
        const auto id = static_cast<std::int64_t>(packets_.size());
        packets_.push_back({tl.node_id, t, std::nullopt, false});
        schedule(t, tl.node_id, EventKind::PacketGenerated, 0, id);
      }
    }

    auto& sink = nodes_[kSink];
    sink.current_polling_kind = cfg_.polling.kind == PollingKind::Dynamic
                                    ? cfg_.dynamic_initial_kind
                                    : cfg_.polling.kind;
    poll_rng_ = RandomStream::substream(cfg_.seed, kSink, StreamPurpose::Polling);
    schedule(draw_poll_gap(), kSink, EventKind::PollStart);
    if (cfg_.polling.kind == PollingKind::Dynamic) {
      cv_window_.cycle_duration_s = cfg_.polling.cycle_duration_s;
      schedule(cfg_.polling.cycle_duration_s, kSink, EventKind::CycleBoundary);
    }
  }

  double post_rx_window() const {
    return cfg_.mac.strobe_gap_s +
           (cfg_.mac.max_backoff_slots + 1) * cfg_.mac.cca_slot_s + t_strobe_;
  }

  double draw_poll_gap() {
    return next_interval(nodes_[kSink].current_polling_kind, cfg_.polling.mean_interval_s,
                         poll_rng_);
  }

  // ---- plumbing ----------------------------------------------------------

  void schedule(double t, int node, EventKind kind, std::uint64_t token = 0,
                std::int64_t payload = 0) {
    queue_.push(Event{t, 0, node, kind, token, payload});
  }

  /// Arms the node's single cancellable timer, invalidating the previous one.
  void arm_timer(int n, double t, EventKind kind) {
    auto& s = nodes_[static_cast<std::size_t>(n)];
    schedule(t, n, kind, ++s.timer_token);
  }
  void cancel_timer(int n) { ++nodes_[static_cast<std::size_t>(n)].timer_token; }

  void set_mode(int n, Mode m) {
    auto& s = nodes_[static_cast<std::size_t>(n)];
    s.energy_ledger.add(s.mode, now_ - s.mode_since_s);
    if (is_listening(m) && !is_listening(s.mode)) s.listen_since_s = now_;
    if (!is_listening(m)) s.rx_frame = -1;
    s.mode = m;
    s.mode_since_s = now_;
  }

  NodeState& node(int n) { return nodes_[static_cast<std::size_t>(n)]; }

  [[noreturn]] void fault(const Event& ev) {
    throw IntegrityFault("event " + std::string(to_string(ev.kind)) + " illegal for node " +
                         std::to_string(ev.node_id) + " in mode " +
                         std::string(to_string(node(ev.node_id).mode)));
  }

  void transmit(int n, FrameType type, int dest, double duration, EventKind end_kind,
                std::vector<std::int64_t> packets = {}) {
    Frame f{-1, type, n, dest, now_, now_ + duration, false, std::move(packets)};
    if (type == FrameType::Strobe) ++strobes_sent_;
    const auto id = channel_.transmit(std::move(f));
    schedule(now_ + duration, n, end_kind, 0, id);
    on_frame_start(*channel_.find(id));
  }

  void on_frame_start(const Frame& f) {
    for (int n = 0; n < cfg_.node_count; ++n) {
      if (n == f.sender) continue;
      auto& s = node(n);
      if (!is_listening(s.mode) || s.rx_frame != -1) continue;
      const bool waits = n == kSink ? s.mode == Mode::RxPending
                                    : (s.mode == Mode::AwaitEarlyAck || s.mode == Mode::AwaitBlockAck);
      if (!waits) continue;
      s.rx_frame = f.id;
      cancel_timer(n);
    }
  }

  bool heard_whole(int n, const Frame& f) {
    const auto& s = node(n);
    return !f.collided && is_listening(s.mode) && s.listen_since_s <= f.start_s;
  }

  void trace(const Event& ev, std::string_view detail) {
    if (!trace_) return;
    char buf[64];
    auto [p, ec] = std::to_chars(buf, buf + sizeof buf, ev.time_s);
    *trace_ << std::string_view(buf, static_cast<std::size_t>(p - buf)) << ',' << ev.seq << ','
            << ev.node_id << ',' << to_string(ev.kind) << ',' << detail << '\n';
  }

  // ---- dispatch ----------------------------------------------------------

  void dispatch(const Event& ev) {
    switch (ev.kind) {
      case EventKind::StrobeTxEnd:
      case EventKind::EarlyAckTxEnd:
      case EventKind::DataTxEnd:
      case EventKind::AckTxEnd:
        on_tx_end(ev);
        return;
      case EventKind::PacketGenerated:
        trace(ev, "packet=" + std::to_string(ev.payload));
        sender_fsm_step(ev);
        return;
      default:
        break;
    }
    if (ev.kind == EventKind::StrobeTimeout) {
      if (ev.token != node(ev.node_id).deadline_token) return;
    } else if (ev.kind != EventKind::PollStart && ev.kind != EventKind::CycleBoundary) {
      if (ev.token != node(ev.node_id).timer_token) return;
    }
    trace(ev, to_string(node(ev.node_id).mode));
    if (ev.node_id == kSink)
      sink_fsm_step(ev);
    else
      sender_fsm_step(ev);
  }

  void on_tx_end(const Event& ev) {
    auto [f, outcome] = channel_.resolve(ev.payload);
    if (outcome == FrameOutcome::Collided) ++collisions_;
    if (trace_)
      trace(ev, std::string(to_string(f.type)) + (f.collided ? ":collided" : ":ok") +
                    " dest=" + std::to_string(f.dest));

    if (f.sender == kSink)
      sink_tx_done(f);
    else
      sender_tx_done(f);

    for (int n = 0; n < cfg_.node_count; ++n) {
      if (n == f.sender || node(n).rx_frame != f.id) continue;
      node(n).rx_frame = -1;
      if (n == kSink)
        sink_frame_end(f);
      else
        sender_frame_end(n, f);
    }

    // A polling sink locks onto a strobe it hears the tail of.
    if (f.type == FrameType::Strobe && !f.collided && f.dest == kSink &&
        node(kSink).mode == Mode::Polling)
      sink_answer_strobe(f.sender);
  }

  // ---- sender ------------------------------------------------------------

  void sender_fsm_step(const Event& ev) {
    const int n = ev.node_id;
    auto& s = node(n);
    switch (ev.kind) {
      case EventKind::PacketGenerated:
        s.tx_queue.push_back(ev.payload);
        if (s.mode == Mode::Sleep) start_cca(n);
        return;
      case EventKind::BackoffExpired:
        if (s.mode != Mode::Backoff) fault(ev);
        start_cca(n);
        return;
      case EventKind::CcaEnd:
        if (s.mode != Mode::Cca) fault(ev);
        if (channel_.busy_since(s.cca_start_s, now_)) {
          ++s.busy_streak;
          enter_backoff(n);
        } else {
          s.busy_streak = 0;
          s.strobe_expired = false;
          schedule(now_ + cfg_.strobe_timeout(), n, EventKind::StrobeTimeout, ++s.deadline_token);
          send_strobe(n);
        }
        return;
      case EventKind::EarlyAckWaitEnd:
        if (s.mode != Mode::AwaitEarlyAck) fault(ev);
        if (s.strobe_expired)
          strobe_failure(n);
        else
          send_strobe(n);
        return;
      case EventKind::StrobeTimeout:
        if (s.mode == Mode::StrobeSending) {
          s.strobe_expired = true;
        } else if (s.mode == Mode::AwaitEarlyAck) {
          if (s.rx_frame == -1) {
            cancel_timer(n);
            strobe_failure(n);
          } else {
            s.strobe_expired = true;
          }
        } else {
          fault(ev);
        }
        return;
      case EventKind::BlockAckTimeout:
        if (s.mode != Mode::AwaitBlockAck) fault(ev);
        ack_failure(n);
        return;
      default:
        fault(ev);
    }
  }

  void start_cca(int n) {
    set_mode(n, Mode::Cca);
    node(n).cca_start_s = now_;
    arm_timer(n, now_ + cfg_.mac.cca_slot_s, EventKind::CcaEnd);
  }

  void enter_backoff(int n) {
    auto& s = node(n);
    // Window doubles per failed attempt and per consecutive busy CCA.
    const int exponent = std::min(s.retry_count + std::max(s.busy_streak - 1, 0), 16);
    const std::int64_t window = std::min<std::int64_t>(
        static_cast<std::int64_t>(cfg_.mac.initial_backoff_slots) << exponent,
        cfg_.mac.max_backoff_slots);
    const auto slots = backoff_rng_[static_cast<std::size_t>(n)].uniform_below(
        static_cast<std::uint64_t>(window));
    set_mode(n, Mode::Backoff);
    arm_timer(n, now_ + static_cast<double>(slots) * cfg_.mac.cca_slot_s, EventKind::BackoffExpired);
  }

  void send_strobe(int n) {
    set_mode(n, Mode::StrobeSending);
    transmit(n, FrameType::Strobe, kSink, t_strobe_, EventKind::StrobeTxEnd);
  }

  void sender_tx_done(const Frame& f) {
    const int n = f.sender;
    auto& s = node(n);
    switch (f.type) {
      case FrameType::Strobe:
        if (s.mode != Mode::StrobeSending) throw IntegrityFault("strobe ended outside strobing");
        if (s.strobe_expired) {
          strobe_failure(n);
        } else {
          set_mode(n, Mode::AwaitEarlyAck);
          arm_timer(n, now_ + cfg_.mac.early_ack_wait_s, EventKind::EarlyAckWaitEnd);
        }
        return;
      case FrameType::Data:
        if (s.mode != Mode::DataSending) throw IntegrityFault("data ended outside sending");
        set_mode(n, Mode::AwaitBlockAck);
        arm_timer(n, now_ + cfg_.mac.early_ack_wait_s, EventKind::BlockAckTimeout);
        return;
      default:
        throw IntegrityFault("source transmitted a sink-only frame");
    }
  }

  void sender_frame_end(int n, const Frame& f) {
    auto& s = node(n);
    if (s.mode == Mode::AwaitEarlyAck) {
      if (f.type == FrameType::EarlyAck && f.dest == n && heard_whole(n, f)) {
        begin_data(n);
      } else if (f.type == FrameType::EarlyAck && f.collided && s.strobe_expired) {
        strobe_failure(n);
      } else if (f.type == FrameType::EarlyAck && f.collided) {
        send_strobe(n);
      } else {
        // Foreign traffic in the listen gap: the medium is taken, step aside.
        ++s.deadline_token;
        s.strobe_expired = false;
        ++s.busy_streak;
        enter_backoff(n);
      }
    } else if (s.mode == Mode::AwaitBlockAck) {
      if (f.type == FrameType::BlockAck && f.dest == n && heard_whole(n, f))
        ack_success(n);
      else
        ack_failure(n);
    }
  }

  void begin_data(int n) {
    auto& s = node(n);
    ++s.deadline_token;
    s.strobe_expired = false;
    s.inflight = std::min<int>(static_cast<int>(s.tx_queue.size()), cfg_.frames.max_concat);
    if (s.inflight == 0) throw IntegrityFault("handshake with an empty queue");
    std::vector<std::int64_t> pkts(s.tx_queue.begin(), s.tx_queue.begin() + s.inflight);
    set_mode(n, Mode::DataSending);
    transmit(n, FrameType::Data, kSink,
             airtime(cfg_.frames.superpacket_bytes(s.inflight), cfg_.bit_rate_bps),
             EventKind::DataTxEnd, std::move(pkts));
  }

  void ack_success(int n) {
    auto& s = node(n);
    for (int i = 0; i < s.inflight; ++i) s.tx_queue.pop_front();
    s.inflight = 0;
    s.retry_count = 0;
    s.busy_streak = 0;
    cancel_timer(n);
    if (s.tx_queue.empty())
      set_mode(n, Mode::Sleep);
    else
      start_cca(n);
  }

  void ack_failure(int n) {
    node(n).inflight = 0;
    cancel_timer(n);
    retry(n);
  }

  void strobe_failure(int n) {
    auto& s = node(n);
    ++s.deadline_token;
    s.strobe_expired = false;
    cancel_timer(n);
    retry(n);
  }

  void retry(int n) {
    auto& s = node(n);
    ++retransmissions_;
    if (++s.retry_count > cfg_.mac.max_retries) {
      const auto id = s.tx_queue.front();
      s.tx_queue.pop_front();
      auto& p = packets_[static_cast<std::size_t>(id)];
      if (!p.delivered_s && !p.dropped) {
        p.dropped = true;
        ++dropped_;
        ++resolved_;
      }
      s.retry_count = 0;
    }
    if (s.tx_queue.empty()) {
      s.busy_streak = 0;
      set_mode(n, Mode::Sleep);
    } else {
      enter_backoff(n);
    }
  }

  // ---- sink --------------------------------------------------------------

  void sink_fsm_step(const Event& ev) {
    auto& s = node(kSink);
    switch (ev.kind) {
      case EventKind::PollStart:
        schedule(now_ + draw_poll_gap(), kSink, EventKind::PollStart);
        if (s.mode != Mode::Sleep) return;  // already awake
        ++polls_;
        set_mode(kSink, Mode::Polling);
        s.window_start_s = now_;
        s.extensions = 0;
        arm_timer(kSink, now_ + cfg_.mac.poll_listen_s, EventKind::PollListenEnd);
        return;
      case EventKind::PollListenEnd:
        if (s.mode != Mode::Polling) fault(ev);
        if (channel_.busy_since(s.window_start_s, now_) && s.extensions < cfg_.mac.max_poll_extensions) {
          ++s.extensions;
          s.window_start_s = now_;
          arm_timer(kSink, now_ + cfg_.mac.poll_listen_s, EventKind::PollListenEnd);
        } else {
          set_mode(kSink, Mode::Sleep);
        }
        return;
      case EventKind::RxTimeout:
        if (s.mode != Mode::RxPending) fault(ev);
        set_mode(kSink, Mode::Sleep);
        return;
      case EventKind::CycleBoundary:
        cycle_boundary();
        schedule(now_ + cfg_.polling.cycle_duration_s, kSink, EventKind::CycleBoundary);
        return;
      default:
        fault(ev);
    }
  }

  void sink_answer_strobe(int sender) {
    auto& s = node(kSink);
    cancel_timer(kSink);
    s.expected_sender = sender;
    set_mode(kSink, Mode::AckSending);
    transmit(kSink, FrameType::EarlyAck, sender, t_early_ack_, EventKind::EarlyAckTxEnd);
  }

  void sink_tx_done(const Frame& f) {
    auto& s = node(kSink);
    if (s.mode != Mode::AckSending) throw IntegrityFault("sink frame ended outside AckSending");
    if (f.type == FrameType::EarlyAck) {
      set_mode(kSink, Mode::RxPending);
      arm_timer(kSink, now_ + cfg_.mac.early_ack_wait_s, EventKind::RxTimeout);
    } else {
      // Stay up long enough for sources that deferred during the exchange to
      // finish their longest backoff and strobe.
      set_mode(kSink, Mode::Polling);
      s.window_start_s = now_;
      s.extensions = cfg_.mac.max_poll_extensions;
      arm_timer(kSink, now_ + post_rx_window(), EventKind::PollListenEnd);
    }
  }

  void sink_frame_end(const Frame& f) {
    auto& s = node(kSink);
    if (s.mode != Mode::RxPending) return;
    if (f.type == FrameType::Data && f.sender == s.expected_sender && f.dest == kSink &&
        heard_whole(kSink, f)) {
      for (auto id : f.packets) {
        auto& p = packets_[static_cast<std::size_t>(id)];
        if (p.delivered_s || p.dropped) continue;
        p.delivered_s = now_;
        delay_sum_ += now_ - p.generated_s;
        ++delivered_;
        ++resolved_;
        if (cfg_.polling.kind == PollingKind::Dynamic) cv_window_.observe(p.generated_s);
      }
      set_mode(kSink, Mode::AckSending);
      transmit(kSink, FrameType::BlockAck, f.sender, t_block_ack_, EventKind::AckTxEnd);
    } else {
      set_mode(kSink, Mode::Sleep);
    }
  }

  void cycle_boundary() {
    auto& s = node(kSink);
    CycleRecord rec;
    rec.index = static_cast<std::int64_t>(cycles_.size());
    rec.time_s = now_;
    rec.observations = cv_window_.observations_s.size();
    if (auto est = cycle_cv(cv_window_)) {
      rec.cv = est->cv;
      const auto next = select_distribution(est->cv, cfg_.polling.dynamic_threshold);
      if (next != s.current_polling_kind) {
        switches_.push_back({now_, s.current_polling_kind, next, est->cv});
        s.current_polling_kind = next;
      }
    }
    rec.kind_after = s.current_polling_kind;
    cycles_.push_back(rec);
    cv_window_.clear();
  }

  // ---- results -----------------------------------------------------------

  LowLevelResult finish(double end) {
    now_ = end;
    LowLevelResult r;
    r.end_time_s = end;
    double total = 0.0;
    double strobe = 0.0;
    for (int n = 0; n < cfg_.node_count; ++n) {
      auto& s = node(n);
      s.energy_ledger.add(s.mode, end - s.mode_since_s);
      s.mode_since_s = end;
      s.energy_ledger.settle();
      const double residual = std::abs(s.energy_ledger.total_seconds() - end);
      r.max_time_residual_s = std::max(r.max_time_residual_s, residual);
      total += s.energy_ledger.energy_mJ(cfg_.radio);
      strobe += s.energy_ledger[Mode::StrobeSending] * cfg_.radio.tx_mW;
      r.ledgers.push_back(s.energy_ledger);
    }
    if (r.max_time_residual_s > 1e-9)
      throw IntegrityFault("energy ledger does not cover the simulated time");
    if (delivered_ + dropped_ != static_cast<std::int64_t>(packets_.size()))
      throw IntegrityFault("packet conservation violated");

    r.metrics.config_label = cfg_.label;
    r.metrics.seed = cfg_.seed;
    r.metrics.total_energy_mJ = total;
    r.metrics.mean_delay_s = delivered_ > 0 ? delay_sum_ / static_cast<double>(delivered_) : 0.0;
    r.metrics.delivered = delivered_;
    r.metrics.dropped = dropped_;
    r.metrics.collisions = collisions_;
    r.metrics.retransmissions = retransmissions_;
    r.generated = static_cast<std::int64_t>(packets_.size());
    r.strobe_energy_mJ = strobe;
    r.strobes_sent = strobes_sent_;
    r.polls = polls_;
    r.events_processed = events_;
    r.cycles = std::move(cycles_);
    r.switches = std::move(switches_);
    r.final_polling_kind = node(kSink).current_polling_kind;
    r.packets = std::move(packets_);
    return r;
  }

  LowLevelConfig cfg_;
  std::ostream* trace_;
  double t_strobe_ = 0, t_early_ack_ = 0, t_block_ack_ = 0;
  std::vector<NodeState> nodes_;
  std::vector<RandomStream> backoff_rng_;
  RandomStream poll_rng_{0};
  ChannelState channel_;
  EventQueue queue_;
  CvWindow cv_window_;
  double now_ = 0.0;
  std::vector<PacketRecord> packets_;
  std::vector<CycleRecord> cycles_;
  std::vector<PollingSwitch> switches_;
  std::int64_t resolved_ = 0, delivered_ = 0, dropped_ = 0;
  std::int64_t collisions_ = 0, retransmissions_ = 0, strobes_sent_ = 0, polls_ = 0;
  std::int64_t events_ = 0;
  double delay_sum_ = 0.0;
};

inline LowLevelResult run_low_level(const LowLevelConfig& config, std::ostream* trace = nullptr) {
  return Simulator(config, trace).run();
}

}  // namespace adpmac::low
