#include "perfcap/maxflow.hpp"

#include <algorithm>
#include <limits>

namespace perfcap {

MaxFlowGraph::MaxFlowGraph(int num_nodes) : nodes_(static_cast<size_t>(num_nodes)) {}

void MaxFlowGraph::add_terminal(int i, int64_t cap_source, int64_t cap_sink) {
  Node& n = nodes_[static_cast<size_t>(i)];
  // Flow through both terminal links is pushed immediately.
  n.tr_cap += cap_source - cap_sink;
  flow_ += std::min(cap_source, cap_sink);
}

void MaxFlowGraph::add_edge(int i, int j, int64_t cap, int64_t rev_cap) {
  const int a = static_cast<int>(arcs_.size());
  arcs_.push_back({j, nodes_[static_cast<size_t>(i)].first, cap});
  arcs_.push_back({i, nodes_[static_cast<size_t>(j)].first, rev_cap});
  nodes_[static_cast<size_t>(i)].first = a;
  nodes_[static_cast<size_t>(j)].first = a + 1;
}

void MaxFlowGraph::activate(int i) {
  Node& n = nodes_[static_cast<size_t>(i)];
  if (n.queued) return;
  n.queued = true;
  queue_.push_back(i);
}

int MaxFlowGraph::next_active() {
  while (queue_head_ < queue_.size()) {
    const int i = queue_[queue_head_++];
    nodes_[static_cast<size_t>(i)].queued = false;
    if (nodes_[static_cast<size_t>(i)].parent != kNone) return i;
  }
  queue_.clear();
  queue_head_ = 0;
  return kNone;
}

void MaxFlowGraph::make_orphan(int i) {
  nodes_[static_cast<size_t>(i)].parent = kOrphan;
  orphans_.push_back(i);
}

void MaxFlowGraph::augment(int middle) {
  // Bottleneck along source tree, middle arc and sink tree.
  int64_t b = arcs_[static_cast<size_t>(middle)].r_cap;
  for (int i = arcs_[static_cast<size_t>(sister(middle))].head;;) {
    const int a = nodes_[static_cast<size_t>(i)].parent;
    if (a == kTerminal) {
      b = std::min(b, nodes_[static_cast<size_t>(i)].tr_cap);
      break;
    }
    b = std::min(b, arcs_[static_cast<size_t>(sister(a))].r_cap);
    i = arcs_[static_cast<size_t>(a)].head;
  }
  for (int i = arcs_[static_cast<size_t>(middle)].head;;) {
    const int a = nodes_[static_cast<size_t>(i)].parent;
    if (a == kTerminal) {
      b = std::min(b, -nodes_[static_cast<size_t>(i)].tr_cap);
      break;
    }
    b = std::min(b, arcs_[static_cast<size_t>(a)].r_cap);
    i = arcs_[static_cast<size_t>(a)].head;
  }

  arcs_[static_cast<size_t>(middle)].r_cap -= b;
  arcs_[static_cast<size_t>(sister(middle))].r_cap += b;
  for (int i = arcs_[static_cast<size_t>(sister(middle))].head;;) {
    const int a = nodes_[static_cast<size_t>(i)].parent;
    if (a == kTerminal) {
      nodes_[static_cast<size_t>(i)].tr_cap -= b;
      if (nodes_[static_cast<size_t>(i)].tr_cap == 0) make_orphan(i);
      break;
    }
    arcs_[static_cast<size_t>(a)].r_cap += b;
    arcs_[static_cast<size_t>(sister(a))].r_cap -= b;
    const int next = arcs_[static_cast<size_t>(a)].head;
    if (arcs_[static_cast<size_t>(sister(a))].r_cap == 0) make_orphan(i);
    i = next;
  }
  for (int i = arcs_[static_cast<size_t>(middle)].head;;) {
    const int a = nodes_[static_cast<size_t>(i)].parent;
    if (a == kTerminal) {
      nodes_[static_cast<size_t>(i)].tr_cap += b;
      if (nodes_[static_cast<size_t>(i)].tr_cap == 0) make_orphan(i);
      break;
    }
    arcs_[static_cast<size_t>(sister(a))].r_cap += b;
    arcs_[static_cast<size_t>(a)].r_cap -= b;
    const int next = arcs_[static_cast<size_t>(a)].head;
    if (arcs_[static_cast<size_t>(a)].r_cap == 0) make_orphan(i);
    i = next;
  }
  flow_ += b;
}

void MaxFlowGraph::process_orphan(int i) {
  constexpr int kInf = std::numeric_limits<int>::max();
  Node& ni = nodes_[static_cast<size_t>(i)];
  const bool sink = ni.sink;
  int best_arc = kNone;
  int d_min = kInf;
  for (int a0 = ni.first; a0 != -1; a0 = arcs_[static_cast<size_t>(a0)].next) {
    // Residual capacity from the candidate parent toward i (source tree) or from i toward it (sink tree).
    const int64_t cap = sink ? arcs_[static_cast<size_t>(a0)].r_cap : arcs_[static_cast<size_t>(sister(a0))].r_cap;
    if (cap == 0) continue;
    int j = arcs_[static_cast<size_t>(a0)].head;
    if (nodes_[static_cast<size_t>(j)].sink != sink || nodes_[static_cast<size_t>(j)].parent == kNone) continue;
    // Trace j back to a terminal.
    int d = 0;
    for (;;) {
      Node& nj = nodes_[static_cast<size_t>(j)];
      if (nj.ts == time_) {
        d += nj.dist;
        break;
      }
      const int a = nj.parent;
      ++d;
      if (a == kTerminal) {
        nj.ts = time_;
        nj.dist = 1;
        break;
      }
      if (a == kOrphan) {
        d = kInf;
        break;
      }
      j = arcs_[static_cast<size_t>(a)].head;
    }
    if (d == kInf) continue;
    if (d < d_min) {
      best_arc = a0;
      d_min = d;
    }
    for (j = arcs_[static_cast<size_t>(a0)].head; nodes_[static_cast<size_t>(j)].ts != time_;
         j = arcs_[static_cast<size_t>(nodes_[static_cast<size_t>(j)].parent)].head) {
      nodes_[static_cast<size_t>(j)].ts = time_;
      nodes_[static_cast<size_t>(j)].dist = d--;
    }
  }
  if (best_arc != kNone) {
    ni.parent = best_arc;
    ni.ts = time_;
    ni.dist = d_min + 1;
    return;
  }
  // No valid parent: i becomes free; neighbors may need re-growing.
  ni.parent = kNone;
  for (int a0 = ni.first; a0 != -1; a0 = arcs_[static_cast<size_t>(a0)].next) {
    const int j = arcs_[static_cast<size_t>(a0)].head;
    Node& nj = nodes_[static_cast<size_t>(j)];
    if (nj.sink != sink || nj.parent == kNone) continue;
    const int64_t cap = sink ? arcs_[static_cast<size_t>(a0)].r_cap : arcs_[static_cast<size_t>(sister(a0))].r_cap;
    if (cap > 0) activate(j);
    if (nj.parent != kTerminal && nj.parent != kOrphan && arcs_[static_cast<size_t>(nj.parent)].head == i) make_orphan(j);
  }
}

int64_t MaxFlowGraph::maxflow() {
  for (size_t i = 0; i < nodes_.size(); ++i) {
    Node& n = nodes_[i];
    if (n.tr_cap != 0) {
      n.sink = n.tr_cap < 0;
      n.parent = kTerminal;
      n.ts = 0;
      n.dist = 1;
      activate(static_cast<int>(i));
    } else {
      n.parent = kNone;
    }
  }
  int current = kNone;
  for (;;) {
    int i = current;
    if (i == kNone || nodes_[static_cast<size_t>(i)].parent == kNone) {
      i = next_active();
      if (i == kNone) break;
    }
    current = kNone;
    Node& ni = nodes_[static_cast<size_t>(i)];
    int middle = kNone;
    for (int a = ni.first; a != -1; a = arcs_[static_cast<size_t>(a)].next) {
      const int64_t cap = ni.sink ? arcs_[static_cast<size_t>(sister(a))].r_cap : arcs_[static_cast<size_t>(a)].r_cap;
      if (cap == 0) continue;
      const int j = arcs_[static_cast<size_t>(a)].head;
      Node& nj = nodes_[static_cast<size_t>(j)];
      if (nj.parent == kNone) {
        nj.sink = ni.sink;
        nj.parent = sister(a);
        nj.ts = ni.ts;
        nj.dist = ni.dist + 1;
        activate(j);
      } else if (nj.sink != ni.sink) {
        middle = ni.sink ? sister(a) : a;
        break;
      } else if (nj.ts <= ni.ts && nj.dist > ni.dist) {
        nj.parent = sister(a);
        nj.ts = ni.ts;
        nj.dist = ni.dist + 1;
      }
    }
    ++time_;
    if (middle == kNone) continue;
    current = i;
    augment(middle);
    while (!orphans_.empty()) {
      // Most recent orphans first, as in the reference implementation.
      const int o = orphans_.back();
      orphans_.pop_back();
      process_orphan(o);
    }
  }
  return flow_;
}

bool MaxFlowGraph::source_side(int i) const {
  const Node& n = nodes_[static_cast<size_t>(i)];
  return n.parent != kNone && !n.sink;
}

}  // namespace perfcap
