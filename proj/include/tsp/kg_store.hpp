#pragma once
// In-memory knowledge graph: interned (head, relation, tail) facts with the
// indices the rule engine and partitioner join on.
//
// Labels only appear at I/O boundaries. A Vocabulary may be shared between a
// store and the stores derived from it (inverse augmentation, subgraphs) so
// that ids stay comparable across them.

#include <algorithm>
#include <compare>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <fstream>
#include <functional>
#include <istream>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "tsp/error.hpp"

namespace tsp {

template <class Tag>
struct Id {
  std::uint32_t value = 0;
  friend constexpr auto operator<=>(Id, Id) = default;
};

using EntityId = Id<struct EntityTag>;
using RelationId = Id<struct RelationTag>;

inline constexpr std::string_view kInversePrefix = "inv_";

inline bool is_inverse_label(std::string_view relation) {
  return relation.starts_with(kInversePrefix);
}

// inv_r -> r and r -> inv_r.
inline std::string inverse_label(std::string_view relation) {
  if (is_inverse_label(relation)) return std::string(relation.substr(kInversePrefix.size()));
  return std::string(kInversePrefix) + std::string(relation);
}

struct StringHash {
  using is_transparent = void;
  std::size_t operator()(std::string_view s) const noexcept { return std::hash<std::string_view>{}(s); }
};

// Append-only bijection between labels and dense ids.
template <class IdT>
class SymbolTable {
 public:
  IdT intern(std::string_view label) {
    if (auto it = ids_.find(label); it != ids_.end()) return it->second;
    IdT id{static_cast<std::uint32_t>(labels_.size())};
    labels_.emplace_back(label);
    ids_.emplace(labels_.back(), id);
    return id;
  }

  std::optional<IdT> find(std::string_view label) const {
    if (auto it = ids_.find(label); it != ids_.end()) return it->second;
    return std::nullopt;
  }

  const std::string& label(IdT id) const { return labels_.at(id.value); }
  bool contains(IdT id) const noexcept { return id.value < labels_.size(); }
  std::size_t size() const noexcept { return labels_.size(); }

 private:
  std::vector<std::string> labels_;
  std::unordered_map<std::string, IdT, StringHash, std::equal_to<>> ids_;
};

struct Vocabulary {
  SymbolTable<EntityId> entities;
  SymbolTable<RelationId> relations;
};

struct Triple {
  EntityId head;
  RelationId relation;
  EntityId tail;
  friend constexpr auto operator<=>(const Triple&, const Triple&) = default;
};

// A triple spelled with labels. Used wherever text from outside the store
// (LLM responses, test splits) has to be compared against it.
struct LabeledTriple {
  std::string head;
  std::string relation;
  std::string tail;
  friend auto operator<=>(const LabeledTriple&, const LabeledTriple&) = default;
};

inline std::string to_string(const LabeledTriple& t) {
  return "(" + t.head + ", " + t.relation + ", " + t.tail + ")";
}

namespace detail {

inline std::uint64_t pack(std::uint32_t hi, std::uint32_t lo) noexcept {
  return (std::uint64_t{hi} << 32) | lo;
}

inline std::size_t hash_combine(std::size_t seed, std::size_t v) noexcept {
  return seed ^ (v + 0x9e3779b97f4a7c15ULL + (seed << 6) + (seed >> 2));
}

}  // namespace detail

}  // namespace tsp

template <class Tag>
struct std::hash<tsp::Id<Tag>> {
  std::size_t operator()(tsp::Id<Tag> id) const noexcept { return std::hash<std::uint32_t>{}(id.value); }
};

template <>
struct std::hash<tsp::Triple> {
  std::size_t operator()(const tsp::Triple& t) const noexcept {
    std::size_t h = std::hash<std::uint64_t>{}(tsp::detail::pack(t.head.value, t.relation.value));
    return tsp::detail::hash_combine(h, std::hash<std::uint32_t>{}(t.tail.value));
  }
};

template <>
struct std::hash<tsp::LabeledTriple> {
  std::size_t operator()(const tsp::LabeledTriple& t) const noexcept {
    std::hash<std::string> hs;
    return tsp::detail::hash_combine(tsp::detail::hash_combine(hs(t.head), hs(t.relation)), hs(t.tail));
  }
};

namespace tsp {

class TripleStore {
 public:
  TripleStore() : vocab_(std::make_shared<Vocabulary>()) {}
  explicit TripleStore(std::shared_ptr<Vocabulary> vocab) : vocab_(std::move(vocab)) {
    if (!vocab_) vocab_ = std::make_shared<Vocabulary>();
  }

  // Returns false when the triple was already present.
  bool insert(std::string_view head, std::string_view relation, std::string_view tail) {
    return insert(Triple{vocab_->entities.intern(head), vocab_->relations.intern(relation),
                         vocab_->entities.intern(tail)});
  }

  bool insert(const Triple& t) {
    if (!vocab_->entities.contains(t.head) || !vocab_->entities.contains(t.tail) ||
        !vocab_->relations.contains(t.relation)) {
      throw UnknownSymbol("triple references an id outside the vocabulary");
    }
    if (!set_.insert(t).second) return false;

    const auto index = static_cast<std::uint32_t>(triples_.size());
    triples_.push_back(t);
    grow(t);

    by_relation_[t.relation.value].push_back(t);
    out_[detail::pack(t.head.value, t.relation.value)].push_back(t.tail);
    in_[detail::pack(t.tail.value, t.relation.value)].push_back(t.head);

    touch(t.head);
    touch(t.tail);
    incident_[t.head.value].push_back(index);
    if (t.tail != t.head) {
      incident_[t.tail.value].push_back(index);
      auto [a, b] = std::minmax(t.head.value, t.tail.value);
      if (edges_.insert(detail::pack(a, b)).second) {
        adjacency_[t.head.value].push_back(t.tail);
        adjacency_[t.tail.value].push_back(t.head);
      }
    }
    return true;
  }

  bool contains(const Triple& t) const { return set_.contains(t); }

  // Unknown labels are simply absent.
  bool contains(std::string_view head, std::string_view relation, std::string_view tail) const {
    auto h = vocab_->entities.find(head);
    auto r = vocab_->relations.find(relation);
    auto t = vocab_->entities.find(tail);
    return h && r && t && contains(Triple{*h, *r, *t});
  }

  bool contains(const LabeledTriple& t) const { return contains(t.head, t.relation, t.tail); }

  std::optional<EntityId> find_entity(std::string_view label) const { return vocab_->entities.find(label); }
  std::optional<RelationId> find_relation(std::string_view label) const {
    return vocab_->relations.find(label);
  }

  std::span<const Triple> triples() const noexcept { return triples_; }

  std::span<const Triple> with_relation(RelationId r) const {
    if (r.value >= by_relation_.size()) return {};
    return by_relation_[r.value];
  }

  std::span<const EntityId> tails(EntityId head, RelationId r) const {
    auto it = out_.find(detail::pack(head.value, r.value));
    return it == out_.end() ? std::span<const EntityId>{} : std::span<const EntityId>{it->second};
  }

  std::span<const EntityId> heads(EntityId tail, RelationId r) const {
    auto it = in_.find(detail::pack(tail.value, r.value));
    return it == in_.end() ? std::span<const EntityId>{} : std::span<const EntityId>{it->second};
  }

  // Undirected, without duplicates or self loops.
  std::span<const EntityId> neighbors(EntityId e) const {
    if (e.value >= adjacency_.size()) return {};
    return adjacency_[e.value];
  }

  // Positions in triples() of every triple touching `e`.
  std::span<const std::uint32_t> incident(EntityId e) const {
    if (e.value >= incident_.size()) return {};
    return incident_[e.value];
  }

  // Entities that occur in at least one triple, in first-seen order.
  std::span<const EntityId> entities() const noexcept { return entities_; }

  bool has_entity(EntityId e) const noexcept { return e.value < present_.size() && present_[e.value]; }

  // Relations with at least one triple, ascending id.
  std::vector<RelationId> relations() const {
    std::vector<RelationId> out;
    for (std::uint32_t r = 0; r < by_relation_.size(); ++r)
      if (!by_relation_[r].empty()) out.push_back(RelationId{r});
    return out;
  }

  std::size_t size() const noexcept { return triples_.size(); }
  bool empty() const noexcept { return triples_.empty(); }
  std::size_t entity_count() const noexcept { return entities_.size(); }
  std::size_t relation_count() const { return relations().size(); }

  const std::string& label(EntityId e) const { return vocab_->entities.label(e); }
  const std::string& label(RelationId r) const { return vocab_->relations.label(r); }

  LabeledTriple labeled(const Triple& t) const { return {label(t.head), label(t.relation), label(t.tail)}; }

  bool is_inverse(RelationId r) const { return is_inverse_label(label(r)); }

  std::optional<RelationId> base_of(RelationId r) const {
    if (!is_inverse(r)) return std::nullopt;
    return find_relation(inverse_label(label(r)));
  }

  const std::shared_ptr<Vocabulary>& vocabulary() const noexcept { return vocab_; }

 private:
  void grow(const Triple& t) {
    const std::size_t n = std::max(t.head.value, t.tail.value) + std::size_t{1};
    if (adjacency_.size() < n) {
      adjacency_.resize(n);
      incident_.resize(n);
      present_.resize(n, false);
    }
    if (by_relation_.size() <= t.relation.value) by_relation_.resize(t.relation.value + std::size_t{1});
  }

  void touch(EntityId e) {
    if (!present_[e.value]) {
      present_[e.value] = true;
      entities_.push_back(e);
    }
  }

  std::shared_ptr<Vocabulary> vocab_;
  std::vector<Triple> triples_;
  std::unordered_set<Triple> set_;
  std::vector<std::vector<Triple>> by_relation_;
  std::unordered_map<std::uint64_t, std::vector<EntityId>> out_;
  std::unordered_map<std::uint64_t, std::vector<EntityId>> in_;
  std::vector<std::vector<EntityId>> adjacency_;
  std::vector<std::vector<std::uint32_t>> incident_;
  std::unordered_set<std::uint64_t> edges_;
  std::vector<bool> present_;
  std::vector<EntityId> entities_;
};

// Reads `head<TAB>relation<TAB>tail` lines into `store`. Blank lines and
// lines starting with '#' are skipped; duplicates collapse.
inline void read_triples(std::istream& in, TripleStore& store) {
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;

    std::string_view rest = line;
    std::string_view fields[3];
    std::size_t count = 0;
    while (true) {
      auto tab = rest.find('\t');
      if (count < 3) fields[count] = rest.substr(0, tab);
      ++count;
      if (tab == std::string_view::npos) break;
      rest.remove_prefix(tab + 1);
    }
    if (count != 3) {
      throw ParseError("expected 3 tab-separated fields, found " + std::to_string(count), line_no);
    }
    for (auto f : fields)
      if (f.empty()) throw ParseError("empty field", line_no);
    store.insert(fields[0], fields[1], fields[2]);
  }
}

inline TripleStore load_graph(const std::filesystem::path& path, std::shared_ptr<Vocabulary> vocab = nullptr) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open graph file " + path.string());
  TripleStore store(std::move(vocab));
  try {
    read_triples(in, store);
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  return store;
}

// Adds (t, inv_r, h) for every (h, r, t). The result shares the vocabulary.
inline TripleStore add_inverses(const TripleStore& store) {
  for (RelationId r : store.relations()) {
    if (store.is_inverse(r)) {
      throw AugmentationConflict("relation '" + store.label(r) + "' already carries the inverse prefix");
    }
  }
  TripleStore out(store.vocabulary());
  auto& relations = store.vocabulary()->relations;
  std::vector<RelationId> inverse_of;
  for (RelationId r : store.relations()) {
    if (inverse_of.size() <= r.value) inverse_of.resize(r.value + std::size_t{1});
    inverse_of[r.value] = relations.intern(inverse_label(store.label(r)));
  }
  for (const Triple& t : store.triples()) out.insert(t);
  for (const Triple& t : store.triples()) out.insert(Triple{t.tail, inverse_of[t.relation.value], t.head});
  return out;
}

// Entities within `hops` undirected steps of `seed`, each with its distance,
// in breadth-first order. The seed comes first at distance 0.
inline std::vector<std::pair<EntityId, unsigned>> bfs_layers(const TripleStore& store, EntityId seed,
                                                              unsigned hops) {
  if (!store.vocabulary()->entities.contains(seed)) {
    throw UnknownSymbol("unknown entity id " + std::to_string(seed.value));
  }
  std::vector<std::pair<EntityId, unsigned>> order{{seed, 0}};
  std::unordered_set<EntityId> seen{seed};
  for (std::size_t i = 0; i < order.size(); ++i) {
    auto [e, d] = order[i];
    if (d == hops) continue;
    for (EntityId n : store.neighbors(e)) {
      if (seen.insert(n).second) order.emplace_back(n, d + 1);
    }
  }
  return order;
}

// Sorted entity set reachable from `seed` in at most `hops` undirected steps,
// including `seed` itself.
inline std::vector<EntityId> khop_neighbors(const TripleStore& store, EntityId seed, unsigned hops) {
  std::vector<EntityId> out;
  for (auto [e, d] : bfs_layers(store, seed, hops)) out.push_back(e);
  std::sort(out.begin(), out.end());
  return out;
}

inline std::vector<EntityId> khop_neighbors(const TripleStore& store, std::string_view seed, unsigned hops) {
  auto id = store.find_entity(seed);
  if (!id) throw UnknownSymbol("unknown entity '" + std::string(seed) + "'");
  return khop_neighbors(store, *id, hops);
}

}  // namespace tsp
