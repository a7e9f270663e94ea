#pragma once

#include <Eigen/Dense>

#include <deque>
#include <utility>
#include <vector>

#include "cdmp/rng.hpp"

namespace cdmp {

/// Static parameters of the clustered MF-TDMA network. A frame consists of
/// n_slots time slots on each of n_channels channels; each (channel, slot)
/// cell is one resource block assignable to a single node.
struct SimConfig {
  int n_nodes = 16;
  int n_slots = 10;
  int n_channels = 4;
  int rb_capacity = 1;       // packets per resource block
  int queue_capacity = 50;   // packets per node
  int packet_size = 1000;    // bits
  double rate_high = 3.0;    // mean packets generated per frame (Poisson)
  double rate_low = 1.0;
  double loss_age_penalty = 1.0;  // extra frames charged per dropped packet

  int state_dim() const { return 4 * n_nodes; }
  int rb_count() const { return n_channels * n_slots; }
  double node_rate(bool high) const { return high ? rate_high : rate_low; }

  void validate() const;

  /// Paper-scale network: 16 nodes, 10 slots, 4 channels.
  static SimConfig paper();
  /// Small network sized for CPU-budget experiments: 8 nodes, 6 slots, 2 channels.
  static SimConfig desk();
};

/// Traffic scenario: which nodes are high-rate over time, plus external
/// interference. The ratio schedule is a piecewise-constant map from frame
/// index to the set of high-rate nodes.
struct ScenarioSpec {
  std::vector<std::pair<int, std::vector<int>>> ratio_schedule;
  std::vector<int> interference_channels;
  double interference_duty = 0.0;  // per-slot jam probability on interfered channels

  const std::vector<int>& high_set_at(int frame) const;
  bool is_high(int node, int frame) const;
  bool is_interfered(int channel) const;

  void validate(const SimConfig& cfg) const;

  static ScenarioSpec static_high(std::vector<int> high_nodes);
};

struct Packet {
  long id = 0;
  int source = 0;
  int destination = 0;
  long created_slot = 0;  // global slot index
  int size = 0;           // bits
};

/// Per-node observation for one frame: packets generated, packets sent,
/// queue length at frame end, and maximum queue length during the frame.
struct NodeState {
  int gen = 0;
  int sen = 0;
  int queue_len = 0;
  int queue_max = 0;
};

/// The L x M resource-block assignment; entry (l, m) is the node that owns
/// slot m of channel l.
struct RbGrid {
  Eigen::MatrixXi assignment;

  int channels() const { return static_cast<int>(assignment.rows()); }
  int slots() const { return static_cast<int>(assignment.cols()); }
  void validate(const SimConfig& cfg) const;

  /// Row-major channel-then-slot flattening, the wire order used everywhere.
  std::vector<int> flatten() const;
  static RbGrid from_flat(const std::vector<int>& flat, int channels, int slots);

  bool operator==(const RbGrid& o) const { return assignment == o.assignment; }
};

/// QoS accounting for one frame. delay(i) is the summed delay (in frames) of
/// packets received by node i this frame plus drop charges against it;
/// throughput(i) counts packets delivered to node i.
struct FrameMetrics {
  Eigen::VectorXd delay;
  Eigen::VectorXd throughput;
  double loss_rate = 0.0;  // dropped / (dropped + delivered) this frame
  long generated = 0;      // this frame
  long delivered = 0;
  long dropped = 0;
  long cum_generated = 0;  // since construction
  long cum_delivered = 0;
  long cum_dropped = 0;
  long queued = 0;  // packets in queues at frame end
};

/// Single step-frame reward: negative total delay (drop charges included).
double reward(const FrameMetrics& m);

/// QoS-weighted reward: sum_i (lambda*u_i - d_i) - eta*loss_rate.
double reward_weighted(const FrameMetrics& m, double lambda, double eta);

enum class SimEvent : char {
  kArrive = 'a',
  kDeliver = 'd',
  kDrop = 'x',
  kRequeue = 'r',
};

struct EventRecord {
  int frame = 0;
  int slot = 0;     // slot within frame; -1 for events outside slot processing
  int channel = 0;  // -1 when not tied to a channel
  int node = 0;     // source for arrive/requeue, destination for deliver/drop
  SimEvent event = SimEvent::kArrive;
  long packet_id = 0;
};

std::string format_event(const EventRecord& e);

/// Deterministic discrete-event simulator of one cluster. Each instance owns
/// its state and RNG; distinct instances never share mutable state.
///
/// One step_frame call advances time by n_slots slots. Within a slot, packet
/// arrivals scheduled for that slot are enqueued first (nodes in index
/// order), then every channel's assigned node attempts to transmit up to
/// rb_capacity head-of-queue packets. A transmission on a jammed
/// (interfered-channel, slot) cell fails and the packets return to the queue
/// tail; otherwise the packets are delivered and their delay
/// (delivery_slot - created_slot) / n_slots frames is charged to the
/// destination. A packet arriving at a full queue is dropped and charges
/// loss_age_penalty plus its accrued age to the destination's delay.
class Simulator {
 public:
  Simulator(SimConfig cfg, ScenarioSpec scenario, std::uint64_t seed);

  /// Runs one frame under the given assignment. Returns the flattened
  /// [gen, sen, T, Tmax] per-node state (4N vector) and the frame metrics.
  std::pair<Eigen::VectorXd, FrameMetrics> step_frame(const RbGrid& action);

  int frame() const { return frame_; }
  const SimConfig& config() const { return cfg_; }
  const ScenarioSpec& scenario() const { return scen_; }
  long queued_total() const;

  /// Injects a packet directly into a node's queue (test and tooling hook).
  void enqueue_packet(int node, long created_slot, int destination);

  /// Optional event sink for cross-checking; not owned.
  void set_event_log(std::vector<EventRecord>* log) { log_ = log; }

 private:
  void record(int slot, int channel, int node, SimEvent ev, long packet_id);

  SimConfig cfg_;
  ScenarioSpec scen_;
  Rng rng_;
  int frame_ = 0;
  long next_packet_id_ = 0;
  std::vector<std::deque<Packet>> queues_;
  long cum_generated_ = 0;
  long cum_delivered_ = 0;
  long cum_dropped_ = 0;
  std::vector<EventRecord>* log_ = nullptr;
};

/// Proportional allocation with the true high/low split known in advance:
/// RB quotas by largest-remainder rounding of the per-node generation rates
/// (ties to the lowest node index), placed round-robin over row-major
/// (channel, slot) cells.
RbGrid oracle_policy(const SimConfig& cfg, const std::vector<int>& high_set);

/// Oracle allocation with every resource block independently reassigned to a
/// uniformly random node with probability swap_prob.
RbGrid behavior_policy(const SimConfig& cfg, const std::vector<int>& high_set,
                       double swap_prob, Rng& rng);

/// Equal-share allocation ignoring traffic classes.
RbGrid uniform_policy(const SimConfig& cfg);

/// Every resource block assigned to a uniformly random node.
RbGrid random_policy(const SimConfig& cfg, Rng& rng);

}  // namespace cdmp
