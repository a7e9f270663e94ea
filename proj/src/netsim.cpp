#include "cdmp/netsim.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace cdmp {

void SimConfig::validate() const {
  if (n_nodes < 2) throw std::invalid_argument("SimConfig: n_nodes must be >= 2");
  if (n_slots < 1) throw std::invalid_argument("SimConfig: n_slots must be >= 1");
  if (n_channels < 1) throw std::invalid_argument("SimConfig: n_channels must be >= 1");
  if (rb_capacity < 1) throw std::invalid_argument("SimConfig: rb_capacity must be >= 1");
  if (queue_capacity < 1) throw std::invalid_argument("SimConfig: queue_capacity must be >= 1");
  if (rate_high < 0.0 || rate_low < 0.0)
    throw std::invalid_argument("SimConfig: rates must be >= 0");
  if (loss_age_penalty < 0.0)
    throw std::invalid_argument("SimConfig: loss_age_penalty must be >= 0");
}

SimConfig SimConfig::paper() {
  SimConfig c;
  c.n_nodes = 16;
  c.n_slots = 10;
  c.n_channels = 4;
  c.rate_high = 3.0;
  c.rate_low = 1.0;
  return c;
}

SimConfig SimConfig::desk() {
  SimConfig c;
  c.n_nodes = 8;
  c.n_slots = 6;
  c.n_channels = 2;
  c.rate_high = 2.0;
  c.rate_low = 0.5;
  return c;
}

const std::vector<int>& ScenarioSpec::high_set_at(int frame) const {
  static const std::vector<int> kEmpty;
  const std::vector<int>* current = &kEmpty;
  for (const auto& [start, set] : ratio_schedule) {
    if (start <= frame) current = &set;
    else break;
  }
  return *current;
}

bool ScenarioSpec::is_high(int node, int frame) const {
  const auto& hs = high_set_at(frame);
  return std::binary_search(hs.begin(), hs.end(), node);
}

bool ScenarioSpec::is_interfered(int channel) const {
  return std::binary_search(interference_channels.begin(),
                            interference_channels.end(), channel);
}

void ScenarioSpec::validate(const SimConfig& cfg) const {
  if (ratio_schedule.empty())
    throw std::invalid_argument("ScenarioSpec: ratio_schedule must be nonempty");
  if (ratio_schedule.front().first != 0)
    throw std::invalid_argument("ScenarioSpec: ratio_schedule must start at frame 0");
  for (std::size_t i = 0; i < ratio_schedule.size(); ++i) {
    if (i > 0 && ratio_schedule[i].first <= ratio_schedule[i - 1].first)
      throw std::invalid_argument("ScenarioSpec: schedule frames must be strictly increasing");
    const auto& set = ratio_schedule[i].second;
    if (!std::is_sorted(set.begin(), set.end()))
      throw std::invalid_argument("ScenarioSpec: high sets must be sorted");
    for (int n : set)
      if (n < 0 || n >= cfg.n_nodes)
        throw std::invalid_argument("ScenarioSpec: high node index out of range");
  }
  if (interference_duty < 0.0 || interference_duty > 1.0)
    throw std::invalid_argument("ScenarioSpec: interference_duty must be in [0,1]");
  if (!std::is_sorted(interference_channels.begin(), interference_channels.end()))
    throw std::invalid_argument("ScenarioSpec: interference_channels must be sorted");
  for (int c : interference_channels)
    if (c < 0 || c >= cfg.n_channels)
      throw std::invalid_argument("ScenarioSpec: interference channel out of range");
}

ScenarioSpec ScenarioSpec::static_high(std::vector<int> high_nodes) {
  std::sort(high_nodes.begin(), high_nodes.end());
  ScenarioSpec s;
  s.ratio_schedule.emplace_back(0, std::move(high_nodes));
  return s;
}

void RbGrid::validate(const SimConfig& cfg) const {
  if (channels() != cfg.n_channels || slots() != cfg.n_slots)
    throw std::invalid_argument("RbGrid: shape mismatch");
  for (int l = 0; l < channels(); ++l)
    for (int m = 0; m < slots(); ++m)
      if (assignment(l, m) < 0 || assignment(l, m) >= cfg.n_nodes)
        throw std::invalid_argument("RbGrid: node index out of range");
}

std::vector<int> RbGrid::flatten() const {
  std::vector<int> out;
  out.reserve(static_cast<std::size_t>(assignment.size()));
  for (int l = 0; l < channels(); ++l)
    for (int m = 0; m < slots(); ++m) out.push_back(assignment(l, m));
  return out;
}

RbGrid RbGrid::from_flat(const std::vector<int>& flat, int channels, int slots) {
  if (static_cast<int>(flat.size()) != channels * slots)
    throw std::invalid_argument("RbGrid::from_flat: size mismatch");
  RbGrid g;
  g.assignment.resize(channels, slots);
  for (int l = 0; l < channels; ++l)
    for (int m = 0; m < slots; ++m)
      g.assignment(l, m) = flat[static_cast<std::size_t>(l * slots + m)];
  return g;
}

double reward(const FrameMetrics& m) { return -m.delay.sum(); }

double reward_weighted(const FrameMetrics& m, double lambda, double eta) {
  return lambda * m.throughput.sum() - m.delay.sum() - eta * m.loss_rate;
}

std::string format_event(const EventRecord& e) {
  std::ostringstream os;
  os << e.frame << " " << e.slot << " " << e.channel << " " << e.node << " "
     << static_cast<char>(e.event) << " " << e.packet_id;
  return os.str();
}

Simulator::Simulator(SimConfig cfg, ScenarioSpec scenario, std::uint64_t seed)
    : cfg_(std::move(cfg)), scen_(std::move(scenario)), rng_(seed) {
  cfg_.validate();
  scen_.validate(cfg_);
  queues_.resize(static_cast<std::size_t>(cfg_.n_nodes));
}

long Simulator::queued_total() const {
  long total = 0;
  for (const auto& q : queues_) total += static_cast<long>(q.size());
  return total;
}

void Simulator::enqueue_packet(int node, long created_slot, int destination) {
  if (node < 0 || node >= cfg_.n_nodes || destination < 0 ||
      destination >= cfg_.n_nodes || destination == node)
    throw std::invalid_argument("enqueue_packet: bad node indices");
  Packet p;
  p.id = next_packet_id_++;
  p.source = node;
  p.destination = destination;
  p.created_slot = created_slot;
  p.size = cfg_.packet_size;
  queues_[static_cast<std::size_t>(node)].push_back(p);
  ++cum_generated_;
}

void Simulator::record(int slot, int channel, int node, SimEvent ev, long packet_id) {
  if (log_) log_->push_back(EventRecord{frame_, slot, channel, node, ev, packet_id});
}

std::pair<Eigen::VectorXd, FrameMetrics> Simulator::step_frame(const RbGrid& action) {
  action.validate(cfg_);

  const int n = cfg_.n_nodes;
  const int slots = cfg_.n_slots;
  const int channels = cfg_.n_channels;
  const long frame_base_slot = static_cast<long>(frame_) * slots;

  FrameMetrics mx;
  mx.delay = Eigen::VectorXd::Zero(n);
  mx.throughput = Eigen::VectorXd::Zero(n);

  // All random draws for the frame happen up front in a fixed order:
  // jam decisions (sorted channels x slots), then per-node arrival counts,
  // then each packet's arrival slot and destination.
  std::vector<std::vector<bool>> jammed(static_cast<std::size_t>(channels));
  for (int l : scen_.interference_channels) {
    jammed[static_cast<std::size_t>(l)].resize(static_cast<std::size_t>(slots));
    for (int m = 0; m < slots; ++m)
      jammed[static_cast<std::size_t>(l)][static_cast<std::size_t>(m)] =
          rng_.bernoulli(scen_.interference_duty);
  }

  struct Arrival {
    int node;
    int destination;
  };
  std::vector<std::vector<Arrival>> arrivals(static_cast<std::size_t>(slots));
  std::vector<int> gen(static_cast<std::size_t>(n), 0);
  for (int i = 0; i < n; ++i) {
    const double rate = cfg_.node_rate(scen_.is_high(i, frame_));
    const int count = rng_.poisson(rate);
    for (int c = 0; c < count; ++c) {
      const int slot = rng_.uniform_int(slots);
      int dest = rng_.uniform_int(n - 1);
      if (dest >= i) ++dest;
      arrivals[static_cast<std::size_t>(slot)].push_back(Arrival{i, dest});
    }
  }

  std::vector<int> sen(static_cast<std::size_t>(n), 0);
  std::vector<int> qmax(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i)
    qmax[static_cast<std::size_t>(i)] = static_cast<int>(queues_[static_cast<std::size_t>(i)].size());

  auto bump_qmax = [&](int i) {
    qmax[static_cast<std::size_t>(i)] =
        std::max(qmax[static_cast<std::size_t>(i)],
                 static_cast<int>(queues_[static_cast<std::size_t>(i)].size()));
  };

  for (int m = 0; m < slots; ++m) {
    const long global_slot = frame_base_slot + m;

    // Arrivals scheduled for this slot. The per-slot buckets were filled by
    // ascending node index, so enqueue order is deterministic.
    for (const Arrival& a : arrivals[static_cast<std::size_t>(m)]) {
      ++gen[static_cast<std::size_t>(a.node)];
      ++cum_generated_;
      ++mx.generated;
      auto& q = queues_[static_cast<std::size_t>(a.node)];
      const long pid = next_packet_id_++;
      if (static_cast<int>(q.size()) >= cfg_.queue_capacity) {
        ++cum_dropped_;
        ++mx.dropped;
        // Age of a packet dropped on arrival is zero; the configured penalty
        // still applies so discarded traffic keeps its delay cost.
        mx.delay(a.destination) += cfg_.loss_age_penalty;
        record(m, -1, a.destination, SimEvent::kDrop, pid);
      } else {
        Packet p;
        p.id = pid;
        p.source = a.node;
        p.destination = a.destination;
        p.created_slot = global_slot;
        p.size = cfg_.packet_size;
        q.push_back(p);
        record(m, -1, a.node, SimEvent::kArrive, pid);
        bump_qmax(a.node);
      }
    }

    // Transmissions: each channel's assigned node services up to rb_capacity
    // head-of-queue packets.
    for (int l = 0; l < channels; ++l) {
      const int node = action.assignment(l, m);
      auto& q = queues_[static_cast<std::size_t>(node)];
      const bool jam = !jammed[static_cast<std::size_t>(l)].empty() &&
                       jammed[static_cast<std::size_t>(l)][static_cast<std::size_t>(m)];
      for (int c = 0; c < cfg_.rb_capacity && !q.empty(); ++c) {
        Packet p = q.front();
        q.pop_front();
        if (jam) {
          q.push_back(p);
          record(m, l, node, SimEvent::kRequeue, p.id);
        } else {
          const double delay_frames =
              static_cast<double>(global_slot - p.created_slot) / slots;
          mx.delay(p.destination) += delay_frames;
          mx.throughput(p.destination) += 1.0;
          ++sen[static_cast<std::size_t>(node)];
          ++cum_delivered_;
          ++mx.delivered;
          record(m, l, p.destination, SimEvent::kDeliver, p.id);
        }
      }
    }
  }

  mx.loss_rate = (mx.dropped + mx.delivered) > 0
                     ? static_cast<double>(mx.dropped) /
                           static_cast<double>(mx.dropped + mx.delivered)
                     : 0.0;
  mx.cum_generated = cum_generated_;
  mx.cum_delivered = cum_delivered_;
  mx.cum_dropped = cum_dropped_;
  mx.queued = queued_total();

  Eigen::VectorXd state(cfg_.state_dim());
  for (int i = 0; i < n; ++i) {
    state(4 * i + 0) = gen[static_cast<std::size_t>(i)];
    state(4 * i + 1) = sen[static_cast<std::size_t>(i)];
    state(4 * i + 2) = static_cast<double>(queues_[static_cast<std::size_t>(i)].size());
    state(4 * i + 3) = qmax[static_cast<std::size_t>(i)];
  }

  ++frame_;
  return {state, mx};
}

RbGrid oracle_policy(const SimConfig& cfg, const std::vector<int>& high_set) {
  const int n = cfg.n_nodes;
  const int total = cfg.rb_count();
  std::vector<double> weight(static_cast<std::size_t>(n));
  double sum = 0.0;
  for (int i = 0; i < n; ++i) {
    const bool high = std::find(high_set.begin(), high_set.end(), i) != high_set.end();
    weight[static_cast<std::size_t>(i)] = cfg.node_rate(high);
    sum += weight[static_cast<std::size_t>(i)];
  }
  if (sum <= 0.0) {
    std::fill(weight.begin(), weight.end(), 1.0);
    sum = static_cast<double>(n);
  }

  // Largest-remainder quotas, ties to the lowest node index.
  std::vector<int> quota(static_cast<std::size_t>(n));
  std::vector<std::pair<double, int>> remainder;
  int assigned = 0;
  for (int i = 0; i < n; ++i) {
    const double exact = total * weight[static_cast<std::size_t>(i)] / sum;
    quota[static_cast<std::size_t>(i)] = static_cast<int>(std::floor(exact));
    assigned += quota[static_cast<std::size_t>(i)];
    remainder.emplace_back(exact - std::floor(exact), i);
  }
  std::stable_sort(remainder.begin(), remainder.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  for (int r = 0; r < total - assigned; ++r)
    ++quota[static_cast<std::size_t>(remainder[static_cast<std::size_t>(r)].second)];

  // Round-robin over nodes with remaining quota, filling row-major cells so
  // each node's blocks spread across the frame.
  RbGrid grid;
  grid.assignment.resize(cfg.n_channels, cfg.n_slots);
  int cell = 0;
  while (cell < total) {
    for (int i = 0; i < n && cell < total; ++i) {
      if (quota[static_cast<std::size_t>(i)] > 0) {
        grid.assignment(cell / cfg.n_slots, cell % cfg.n_slots) = i;
        --quota[static_cast<std::size_t>(i)];
        ++cell;
      }
    }
  }
  return grid;
}

RbGrid behavior_policy(const SimConfig& cfg, const std::vector<int>& high_set,
                       double swap_prob, Rng& rng) {
  if (swap_prob < 0.0 || swap_prob > 1.0)
    throw std::invalid_argument("behavior_policy: swap_prob must be in [0,1]");
  RbGrid grid = oracle_policy(cfg, high_set);
  for (int l = 0; l < cfg.n_channels; ++l)
    for (int m = 0; m < cfg.n_slots; ++m)
      if (rng.bernoulli(swap_prob)) grid.assignment(l, m) = rng.uniform_int(cfg.n_nodes);
  return grid;
}

RbGrid uniform_policy(const SimConfig& cfg) { return oracle_policy(cfg, {}); }

RbGrid random_policy(const SimConfig& cfg, Rng& rng) {
  RbGrid grid;
  grid.assignment.resize(cfg.n_channels, cfg.n_slots);
  for (int l = 0; l < cfg.n_channels; ++l)
    for (int m = 0; m < cfg.n_slots; ++m)
      grid.assignment(l, m) = rng.uniform_int(cfg.n_nodes);
  return grid;
}

}  // namespace cdmp
