#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "atomkit/errors.hpp"

namespace atomkit {

enum class BondOrder : std::uint8_t { single = 1, double_ = 2, triple = 3, aromatic = 4 };

struct GraphAtom {
  int atomic_number = 6;  // 1, 6, 7 or 8
  bool aromatic = false;
  bool bracket = false;
  int hydrogens = 0;      // implicit (organic subset) or bracket H count
  bool in_ring = false;
};

struct GraphBond {
  std::size_t i = 0, j = 0;
  BondOrder order = BondOrder::single;
};

struct MoleculeGraph {
  std::vector<GraphAtom> atoms;
  std::vector<GraphBond> bonds;

  std::size_t heavy_atom_count() const;
  std::size_t count_element(int atomic_number) const;
  std::size_t hydrogen_count() const;  // attached H plus explicit [H] atoms
  std::size_t component_count() const;
  bool connected() const { return component_count() == 1; }
  /// Cycle rank: bonds - atoms + components.
  std::size_t ring_count() const;
  std::vector<std::vector<std::size_t>> neighbours() const;
};

enum class SmilesErrorKind { syntax, unbalanced_branch, ring_closure, valence, unsupported_element };

class SmilesError : public FormatError {
 public:
  SmilesError(SmilesErrorKind kind, std::size_t position, const std::string& message);
  SmilesErrorKind kind() const { return kind_; }
  std::size_t position() const { return position_; }

 private:
  SmilesErrorKind kind_;
  std::size_t position_;
};

/// Organic-subset SMILES: C N O, aromatic c n o, bracket atoms with H counts
/// ([nH], [CH2], [H]), branches, ring closures 1-9, bonds - = #, and '.'.
MoleculeGraph parse_smiles(const std::string& smiles);

class Fingerprint {
 public:
  explicit Fingerprint(std::size_t nbits = 2048);
  std::size_t size() const { return nbits_; }
  void set(std::size_t bit);
  bool test(std::size_t bit) const;
  std::size_t popcount() const;
  std::span<const std::uint64_t> words() const { return words_; }
  bool operator==(const Fingerprint& other) const = default;

 private:
  std::size_t nbits_;
  std::vector<std::uint64_t> words_;
};

std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes,
                      std::uint64_t seed = 0xcbf29ce484222325ULL);

/// Circular fingerprint: atom invariants (Z, degree, H count, ring, aromatic)
/// rehashed with sorted (bond order, neighbour code) pairs for `radius` rounds.
Fingerprint morgan_fingerprint(const MoleculeGraph& mol, std::size_t radius = 2,
                               std::size_t nbits = 2048);

/// |a & b| / |a | b|, 0 when both are empty.
double tanimoto(const Fingerprint& a, const Fingerprint& b);

struct SelectionConfig {
  double lower = 0.875;
  double upper = 0.925;
  std::optional<double> accepted_cap;  // required; see the presets
  std::size_t max_oxygen = 5;
  std::size_t max_nitrogen = 3;
  bool require_connected = true;
  std::size_t max_accepted = 0;  // 0: no limit
  std::size_t radius = 2;
  std::size_t nbits = 2048;

  void validate() const;
};

/// Cap 0.80 on similarity to already accepted molecules.
SelectionConfig selection_preset_main();
/// Cap 0.2 on similarity to already accepted molecules.
SelectionConfig selection_preset_strict();
/// "main" or "strict".
SelectionConfig selection_preset(const std::string& name);

struct CriteriaResult {
  bool pass = true;
  int criterion = 0;  // first violated criterion, 0 on pass
  std::string reason;
};

/// Criteria 2-6: heavy atoms <= seed, elements within C/H/O/N, oxygen and
/// nitrogen caps, single connected component.
CriteriaResult check_criteria(const MoleculeGraph& candidate, const MoleculeGraph& seed,
                              const SelectionConfig& config = selection_preset_main());

struct SmilesEntry {
  std::string smiles;
  std::string name;
};

struct AcceptedCandidate {
  std::size_t pool_index = 0;
  std::string smiles, name;
  std::size_t seed_index = 0;
  std::string matched_seed;
  double seed_similarity = 0.0;
};

struct RejectedCandidate {
  std::size_t pool_index = 0;
  std::string smiles, name;
  int criterion = 0;
  std::string reason;
};

struct SelectionResult {
  std::vector<AcceptedCandidate> accepted;
  std::vector<RejectedCandidate> rejected;
};

SelectionResult select_candidates(std::span<const SmilesEntry> seeds,
                                  std::span<const SmilesEntry> pool, const SelectionConfig& config);

/// One SMILES per line with an optional tab-separated name; blank lines and
/// lines starting with '#' are skipped.
std::vector<SmilesEntry> read_smiles(std::istream& in);
void write_selection_csv(std::ostream& out, const SelectionResult& result);
void write_rejection_log(std::ostream& out, const SelectionResult& result);

}  // namespace atomkit
