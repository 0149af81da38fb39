#pragma once
// Soft vertex-cut partitioning: entities are grouped by neighbourhood, groups
// may share entities, and each group induces a subgraph small enough to be
// written into one prompt.
//
//   0. Connected components no larger than max_group become groups as-is.
//   1. Primary grouping. Entities of the remaining components are visited in
//      a seeded order. For each still-ungrouped seed, its L-hop neighbourhood
//      (breadth-first, truncated at max_group) becomes a group and its
//      (L-1)-hop part leaves the ungrouped set. Neighbourhoods smaller than
//      min_group are held back.
//   2. Fine-tuning. Each entity left ungrouped merges its 1-hop neighbourhood
//      into the smallest group that already holds it, or failing that the
//      smallest group holding one of its neighbours (lowest index on ties).
//      Entities that never reach a group form one residual group.

#include <algorithm>
#include <cstdint>
#include <limits>
#include <map>
#include <ostream>
#include <random>
#include <set>
#include <string>
#include <unordered_set>
#include <vector>

#include "tsp/error.hpp"
#include "tsp/kg_store.hpp"
#include "tsp/rule.hpp"

namespace tsp {

struct PartitionConfig {
  unsigned hops = 2;
  std::size_t min_group = 10;
  std::size_t max_group = 60;
  std::uint64_t seed = 0;

  void validate() const {
    if (hops < 1) throw Error("partition hop radius must be >= 1");
    if (min_group == 0 || min_group > max_group) throw Error("partition requires 0 < min_group <= max_group");
  }
};

enum class GroupOrigin { Component, Neighborhood, Residual };

inline const char* to_string(GroupOrigin o) {
  switch (o) {
    case GroupOrigin::Component: return "component";
    case GroupOrigin::Neighborhood: return "neighborhood";
    case GroupOrigin::Residual: return "residual";
  }
  return "?";
}

struct EntityGroup {
  std::vector<EntityId> entities;  // ascending id
  GroupOrigin origin = GroupOrigin::Neighborhood;
  bool overflow = false;  // grew past max_group during fine-tuning
};

struct PartitionStats {
  std::size_t entities = 0;
  std::size_t multi_homed = 0;
  std::size_t triples_total = 0;
  std::size_t triples_covered = 0;  // in at least one subgraph
  std::size_t triple_loss = 0;      // endpoints never share a group
  std::map<std::size_t, std::size_t> size_histogram;
};

struct Partition {
  std::vector<EntityGroup> groups;
  PartitionStats stats;
};

namespace detail {

// Uniform draw in [0, bound) by rejection; mt19937_64 output is fully
// specified, so the permutation is identical across standard libraries.
inline std::uint64_t bounded(std::mt19937_64& rng, std::uint64_t bound) {
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % bound;
  std::uint64_t v;
  do v = rng(); while (v >= limit);
  return v % bound;
}

inline void seeded_shuffle(std::vector<EntityId>& v, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[bounded(rng, i)]);
}

class GroupBuilder {
 public:
  explicit GroupBuilder(std::size_t vocab) : membership_(vocab) {}

  std::size_t add(GroupOrigin origin) {
    groups_.push_back(EntityGroup{{}, origin, false});
    return groups_.size() - 1;
  }

  void insert(std::size_t g, EntityId e) {
    auto& m = membership_[e.value];
    if (std::find(m.begin(), m.end(), g) != m.end()) return;
    m.push_back(g);
    groups_[g].entities.push_back(e);
  }

  const std::vector<std::size_t>& groups_of(EntityId e) const { return membership_[e.value]; }
  std::size_t size(std::size_t g) const { return groups_[g].entities.size(); }

  std::vector<EntityGroup> finish() && {
    for (auto& g : groups_) std::sort(g.entities.begin(), g.entities.end());
    return std::move(groups_);
  }

 private:
  std::vector<EntityGroup> groups_;
  std::vector<std::vector<std::size_t>> membership_;
};

}  // namespace detail

inline PartitionStats partition_stats(const TripleStore& store, const std::vector<EntityGroup>& groups) {
  PartitionStats st;
  st.entities = store.entity_count();
  st.triples_total = store.size();

  std::vector<std::vector<std::uint32_t>> membership(store.vocabulary()->entities.size());
  for (std::uint32_t g = 0; g < groups.size(); ++g) {
    ++st.size_histogram[groups[g].entities.size()];
    for (EntityId e : groups[g].entities) membership[e.value].push_back(g);
  }
  for (const auto& m : membership)
    if (m.size() > 1) ++st.multi_homed;

  // Covered: union of induced triples, collected group by group.
  std::vector<bool> covered(store.size(), false);
  std::vector<bool> in_group(membership.size(), false);
  for (const auto& g : groups) {
    for (EntityId e : g.entities) in_group[e.value] = true;
    for (EntityId e : g.entities)
      for (auto idx : store.incident(e)) {
        const Triple& t = store.triples()[idx];
        if (in_group[t.head.value] && in_group[t.tail.value]) covered[idx] = true;
      }
    for (EntityId e : g.entities) in_group[e.value] = false;
  }
  st.triples_covered = static_cast<std::size_t>(std::count(covered.begin(), covered.end(), true));

  // Loss: triples whose endpoints share no group, from the membership lists.
  for (const Triple& t : store.triples()) {
    const auto& a = membership[t.head.value];
    const auto& b = membership[t.tail.value];
    bool shared = false;
    for (auto g : a)
      if (std::find(b.begin(), b.end(), g) != b.end()) {
        shared = true;
        break;
      }
    if (!shared) ++st.triple_loss;
  }
  return st;
}

inline Partition partition(const TripleStore& store, const PartitionConfig& config) {
  config.validate();
  if (store.empty()) throw Error("cannot partition an empty store");

  const std::size_t vocab = store.vocabulary()->entities.size();
  detail::GroupBuilder builder(vocab);
  std::vector<bool> ungrouped(vocab, false);
  for (EntityId e : store.entities()) ungrouped[e.value] = true;

  std::vector<EntityId> ordered(store.entities().begin(), store.entities().end());
  std::sort(ordered.begin(), ordered.end());

  // Stage 0: whole components that already fit.
  std::vector<bool> visited(vocab, false);
  for (EntityId root : ordered) {
    if (visited[root.value]) continue;
    std::vector<EntityId> component{root};
    visited[root.value] = true;
    for (std::size_t i = 0; i < component.size(); ++i)
      for (EntityId n : store.neighbors(component[i]))
        if (!visited[n.value]) {
          visited[n.value] = true;
          component.push_back(n);
        }
    if (component.size() <= config.max_group) {
      auto g = builder.add(GroupOrigin::Component);
      std::sort(component.begin(), component.end());
      for (EntityId e : component) {
        builder.insert(g, e);
        ungrouped[e.value] = false;
      }
    }
  }

  // Stage 1: primary grouping.
  std::vector<EntityId> order;
  for (EntityId e : ordered)
    if (ungrouped[e.value]) order.push_back(e);
  detail::seeded_shuffle(order, config.seed);

  for (EntityId seed : order) {
    if (!ungrouped[seed.value]) continue;
    auto layers = bfs_layers(store, seed, config.hops);
    if (layers.size() > config.max_group) layers.resize(config.max_group);
    if (layers.size() < config.min_group) continue;
    auto g = builder.add(GroupOrigin::Neighborhood);
    for (auto [e, dist] : layers) {
      builder.insert(g, e);
      if (dist + 1 <= config.hops) ungrouped[e.value] = false;
    }
  }

  // Stage 2: fine-tuning.
  auto smallest = [&](const std::vector<std::size_t>& candidates) {
    std::size_t best = candidates.front();
    for (auto g : candidates)
      if (builder.size(g) < builder.size(best) || (builder.size(g) == builder.size(best) && g < best)) best = g;
    return best;
  };

  std::vector<EntityId> pending;
  for (EntityId e : order)
    if (ungrouped[e.value]) pending.push_back(e);

  std::set<std::size_t> touched;
  while (!pending.empty()) {
    std::vector<EntityId> deferred;
    for (EntityId e : pending) {
      std::vector<std::size_t> candidates = builder.groups_of(e);
      if (candidates.empty()) {
        for (EntityId n : store.neighbors(e))
          for (auto g : builder.groups_of(n))
            if (std::find(candidates.begin(), candidates.end(), g) == candidates.end()) candidates.push_back(g);
      }
      if (candidates.empty()) {
        deferred.push_back(e);
        continue;
      }
      const auto g = smallest(candidates);
      builder.insert(g, e);
      for (EntityId n : store.neighbors(e)) builder.insert(g, n);
      ungrouped[e.value] = false;
      touched.insert(g);
    }
    if (deferred.size() == pending.size()) break;
    pending = std::move(deferred);
  }

  if (!pending.empty()) {
    auto g = builder.add(GroupOrigin::Residual);
    for (EntityId e : pending) builder.insert(g, e);
  }

  Partition out;
  out.groups = std::move(builder).finish();
  for (auto g : touched)
    if (out.groups[g].entities.size() > config.max_group) out.groups[g].overflow = true;
  out.stats = partition_stats(store, out.groups);
  return out;
}

struct Subgraph {
  std::size_t id = 0;
  EntityGroup group;
  TripleStore graph;
};

// Triples of `store` with both endpoints in `group`. Shares the vocabulary.
inline Subgraph build_subgraph(const TripleStore& store, const EntityGroup& group, std::size_t id = 0) {
  std::vector<bool> member(store.vocabulary()->entities.size(), false);
  for (EntityId e : group.entities) {
    if (!store.has_entity(e)) throw UnknownSymbol("group entity id " + std::to_string(e.value) + " not in store");
    member[e.value] = true;
  }
  Subgraph sub{id, group, TripleStore(store.vocabulary())};
  for (EntityId e : group.entities)
    for (auto idx : store.incident(e)) {
      const Triple& t = store.triples()[idx];
      if (t.head == e && member[t.tail.value]) sub.graph.insert(t);
    }
  return sub;
}

// Subgraph triples whose relation occurs in the rule body, in body order.
inline std::vector<Triple> rule_related_triples(const Subgraph& sub, const Rule& rule) {
  std::vector<Triple> out;
  std::vector<std::string> done;
  for (const auto& r : rule.body()) {
    if (std::find(done.begin(), done.end(), r) != done.end()) continue;
    done.push_back(r);
    if (auto id = sub.graph.find_relation(r)) {
      auto span = sub.graph.with_relation(*id);
      out.insert(out.end(), span.begin(), span.end());
    }
  }
  return out;
}

// `group_id<TAB>entity,entity,...` per group followed by a `#` stats block.
inline void write_manifest(std::ostream& out, const TripleStore& store, const Partition& p) {
  for (std::size_t g = 0; g < p.groups.size(); ++g) {
    out << g << '\t';
    const auto& ents = p.groups[g].entities;
    for (std::size_t i = 0; i < ents.size(); ++i) out << (i ? "," : "") << store.label(ents[i]);
    out << '\n';
  }
  const auto& st = p.stats;
  out << "# groups: " << p.groups.size() << '\n';
  out << "# size_histogram:";
  for (auto [size, count] : st.size_histogram) out << ' ' << size << 'x' << count;
  out << '\n';
  out << "# multi_homed_entities: " << st.multi_homed << '\n';
  out << "# triples_total: " << st.triples_total << '\n';
  out << "# triples_covered: " << st.triples_covered << '\n';
  out << "# triple_loss: " << st.triple_loss << '\n';
  out << "# flagged:";
  for (std::size_t g = 0; g < p.groups.size(); ++g) {
    if (p.groups[g].overflow) out << ' ' << g << ":overflow";
    if (p.groups[g].origin == GroupOrigin::Residual) out << ' ' << g << ":residual";
  }
  out << '\n';
}

}  // namespace tsp
