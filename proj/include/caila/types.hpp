#pragma once

#include <cstdint>
#include <functional>

namespace caila {

/// The three concept streams every encoder layer is specialized for.
enum class ConceptKind : int { Attribute = 0, Object = 1, Composition = 2 };

inline constexpr int kNumConcepts = 3;

inline const char* concept_name(ConceptKind k) {
  switch (k) {
    case ConceptKind::Attribute: return "attr";
    case ConceptKind::Object: return "obj";
    case ConceptKind::Composition: return "comp";
  }
  return "?";
}

/// Candidate set used at evaluation time: seen+unseen pairs, or the full
/// attribute x object grid.
enum class World { Closed, Open };

inline const char* world_name(World w) { return w == World::Closed ? "closed" : "open"; }

/// An (attribute, object) composition label, by vocabulary index.
struct PairLabel {
  int attr = -1;
  int obj = -1;

  friend bool operator==(const PairLabel&, const PairLabel&) = default;
  friend auto operator<=>(const PairLabel&, const PairLabel&) = default;
};

struct PairLabelHash {
  std::size_t operator()(const PairLabel& p) const {
    return std::hash<std::int64_t>()((std::int64_t(p.attr) << 32) ^ std::uint32_t(p.obj));
  }
};

}  // namespace caila
