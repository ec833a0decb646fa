#pragma once

#include <cstdint>
#include <vector>

namespace perfcap {

/// Boykov-Kolmogorov augmenting-path max-flow on integer capacities, for
/// graphs with source and sink terminal links on every node.
class MaxFlowGraph {
 public:
  explicit MaxFlowGraph(int num_nodes);

  /// Adds capacity from the source and to the sink for node i.
  void add_terminal(int i, int64_t cap_source, int64_t cap_sink);
  /// Edge i->j with capacity `cap` and j->i with `rev_cap`.
  void add_edge(int i, int j, int64_t cap, int64_t rev_cap);

  int64_t maxflow();
  /// True when node i ends on the source side of the minimum cut.
  bool source_side(int i) const;
  int num_nodes() const { return static_cast<int>(nodes_.size()); }

 private:
  static constexpr int kNone = -1;
  static constexpr int kTerminal = -2;
  static constexpr int kOrphan = -3;

  struct Node {
    int first = -1;
    int parent = kNone;
    int64_t tr_cap = 0;
    bool sink = false;
    bool queued = false;
    long ts = 0;
    int dist = 0;
  };
  struct Arc {
    int head = 0;
    int next = -1;
    int64_t r_cap = 0;
  };

  static int sister(int a) { return a ^ 1; }
  void activate(int i);
  int next_active();
  void augment(int middle);
  void make_orphan(int i);
  void process_orphan(int i);

  std::vector<Node> nodes_;
  std::vector<Arc> arcs_;
  std::vector<int> queue_;
  size_t queue_head_ = 0;
  std::vector<int> orphans_;
  long time_ = 0;
  int64_t flow_ = 0;
};

}  // namespace perfcap
