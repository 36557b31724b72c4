#include "atomkit/curation.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cctype>
#include <cstdio>
#include <istream>
#include <ostream>

namespace atomkit {

// ---- graph queries --------------------------------------------------------------

std::size_t MoleculeGraph::heavy_atom_count() const {
  return static_cast<std::size_t>(
      std::count_if(atoms.begin(), atoms.end(), [](const GraphAtom& a) { return a.atomic_number > 1; }));
}

std::size_t MoleculeGraph::count_element(int z) const {
  return static_cast<std::size_t>(
      std::count_if(atoms.begin(), atoms.end(), [z](const GraphAtom& a) { return a.atomic_number == z; }));
}

std::size_t MoleculeGraph::hydrogen_count() const {
  std::size_t h = 0;
  for (const auto& a : atoms) h += static_cast<std::size_t>(a.hydrogens) + (a.atomic_number == 1 ? 1 : 0);
  return h;
}

std::vector<std::vector<std::size_t>> MoleculeGraph::neighbours() const {
  std::vector<std::vector<std::size_t>> adj(atoms.size());
  for (const auto& b : bonds) {
    adj[b.i].push_back(b.j);
    adj[b.j].push_back(b.i);
  }
  return adj;
}

namespace {

// Component label per atom, optionally ignoring one bond.
std::vector<std::size_t> components(const MoleculeGraph& g, std::size_t skip_bond, std::size_t& count) {
  std::vector<std::vector<std::size_t>> adj(g.atoms.size());
  for (std::size_t k = 0; k < g.bonds.size(); ++k) {
    if (k == skip_bond) continue;
    adj[g.bonds[k].i].push_back(g.bonds[k].j);
    adj[g.bonds[k].j].push_back(g.bonds[k].i);
  }
  std::vector<std::size_t> label(g.atoms.size(), SIZE_MAX);
  count = 0;
  for (std::size_t s = 0; s < g.atoms.size(); ++s) {
    if (label[s] != SIZE_MAX) continue;
    std::vector<std::size_t> stack{s};
    label[s] = count;
    while (!stack.empty()) {
      const std::size_t u = stack.back();
      stack.pop_back();
      for (auto v : adj[u])
        if (label[v] == SIZE_MAX) {
          label[v] = count;
          stack.push_back(v);
        }
    }
    ++count;
  }
  return label;
}

}  // namespace

std::size_t MoleculeGraph::component_count() const {
  std::size_t count = 0;
  components(*this, SIZE_MAX, count);
  return count;
}

std::size_t MoleculeGraph::ring_count() const {
  return bonds.size() + component_count() - atoms.size();
}

// ---- SMILES ---------------------------------------------------------------------

SmilesError::SmilesError(SmilesErrorKind kind, std::size_t position, const std::string& message)
    : FormatError("SMILES position " + std::to_string(position) + ": " + message),
      kind_(kind),
      position_(position) {}

namespace {

int default_valence(int z) {
  switch (z) {
    case 1: return 1;
    case 6: return 4;
    case 7: return 3;
    case 8: return 2;
    default: return 0;
  }
}

int bond_value(BondOrder o) { return o == BondOrder::aromatic ? 1 : static_cast<int>(o); }

class SmilesParser {
 public:
  explicit SmilesParser(const std::string& s) : s_(s) {}

  MoleculeGraph run() {
    std::optional<BondOrder> pending;
    std::size_t pending_pos = 0;
    std::size_t prev = SIZE_MAX;
    std::vector<std::size_t> branches;
    std::vector<std::size_t> branch_pos;
    struct Ring {
      bool open = false;
      std::size_t atom = 0;
      std::optional<BondOrder> order;
      std::size_t pos = 0;
    };
    std::array<Ring, 10> rings{};
    bool just_opened = false;

    while (pos_ < s_.size()) {
      const char c = s_[pos_];
      const std::size_t here = pos_;
      if (c == '[' || is_atom_start(c)) {
        const std::size_t idx = c == '[' ? bracket_atom() : organic_atom();
        if (prev != SIZE_MAX) {
          add_bond(prev, idx, pending, here);
        } else if (pending) {
          throw SmilesError(SmilesErrorKind::syntax, pending_pos, "bond symbol without a preceding atom");
        }
        pending.reset();
        prev = idx;
        just_opened = false;
        continue;
      }
      ++pos_;
      switch (c) {
        case '-':
        case '=':
        case '#':
          if (prev == SIZE_MAX || pending)
            throw SmilesError(SmilesErrorKind::syntax, here, std::string("unexpected bond symbol '") + c + "'");
          pending = c == '-' ? BondOrder::single : c == '=' ? BondOrder::double_ : BondOrder::triple;
          pending_pos = here;
          break;
        case '(':
          if (prev == SIZE_MAX || pending)
            throw SmilesError(SmilesErrorKind::syntax, here, "branch must follow an atom");
          branches.push_back(prev);
          branch_pos.push_back(here);
          just_opened = true;
          break;
        case ')':
          if (branches.empty())
            throw SmilesError(SmilesErrorKind::unbalanced_branch, here, "')' without matching '('");
          if (pending) throw SmilesError(SmilesErrorKind::syntax, pending_pos, "bond symbol at end of branch");
          if (just_opened) throw SmilesError(SmilesErrorKind::syntax, here, "empty branch");
          prev = branches.back();
          branches.pop_back();
          branch_pos.pop_back();
          break;
        case '.':
          if (prev == SIZE_MAX || pending)
            throw SmilesError(SmilesErrorKind::syntax, here, "'.' must separate two fragments");
          if (!branches.empty())
            throw SmilesError(SmilesErrorKind::unbalanced_branch, here, "'.' inside a branch");
          prev = SIZE_MAX;
          break;
        default:
          if (c >= '1' && c <= '9') {
            if (prev == SIZE_MAX)
              throw SmilesError(SmilesErrorKind::syntax, here, "ring closure without a preceding atom");
            Ring& r = rings[static_cast<std::size_t>(c - '0')];
            if (!r.open) {
              r = Ring{true, prev, pending, here};
            } else {
              if (r.atom == prev)
                throw SmilesError(SmilesErrorKind::ring_closure, here, "ring bond closes on its own atom");
              if (r.order && pending && *r.order != *pending)
                throw SmilesError(SmilesErrorKind::ring_closure, here, "conflicting ring bond orders");
              add_bond(r.atom, prev, r.order ? r.order : pending, here);
              r.open = false;
            }
            pending.reset();
          } else if (c == '0') {
            throw SmilesError(SmilesErrorKind::ring_closure, here, "ring closure digit 0 is not supported");
          } else if (std::isalpha(static_cast<unsigned char>(c))) {
            throw SmilesError(SmilesErrorKind::unsupported_element, here,
                              "unsupported element starting with '" + std::string(1, c) + "'");
          } else {
            throw SmilesError(SmilesErrorKind::syntax, here, std::string("unsupported character '") + c + "'");
          }
      }
    }
    if (!branches.empty())
      throw SmilesError(SmilesErrorKind::unbalanced_branch, branch_pos.back(), "unclosed '('");
    if (pending) throw SmilesError(SmilesErrorKind::syntax, pending_pos, "dangling bond symbol");
    for (const auto& r : rings)
      if (r.open) throw SmilesError(SmilesErrorKind::ring_closure, r.pos, "unclosed ring bond");
    if (g_.atoms.empty()) throw SmilesError(SmilesErrorKind::syntax, 0, "no atoms");
    finish();
    return std::move(g_);
  }

 private:
  bool is_atom_start(char c) const {
    return c == 'C' || c == 'N' || c == 'O' || c == 'c' || c == 'n' || c == 'o';
  }

  std::size_t push_atom(int z, bool aromatic, bool bracket, int h, std::size_t at) {
    g_.atoms.push_back({z, aromatic, bracket, h, false});
    atom_pos_.push_back(at);
    return g_.atoms.size() - 1;
  }

  std::size_t organic_atom() {
    const std::size_t at = pos_;
    const char c = s_[pos_++];
    if (c == 'C' && pos_ < s_.size() && s_[pos_] == 'l')
      throw SmilesError(SmilesErrorKind::unsupported_element, at, "unsupported element 'Cl'");
    const bool aromatic = std::islower(static_cast<unsigned char>(c)) != 0;
    const char up = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    const int z = up == 'C' ? 6 : up == 'N' ? 7 : 8;
    return push_atom(z, aromatic, false, -1, at);
  }

  std::size_t bracket_atom() {
    const std::size_t at = pos_++;
    auto peek = [&]() { return pos_ < s_.size() ? s_[pos_] : '\0'; };
    if (std::isdigit(static_cast<unsigned char>(peek())))
      throw SmilesError(SmilesErrorKind::syntax, pos_, "isotopes are not supported");
    const char c = peek();
    if (!std::isalpha(static_cast<unsigned char>(c)))
      throw SmilesError(SmilesErrorKind::syntax, pos_, "expected an element symbol");
    std::string symbol(1, c);
    ++pos_;
    if (std::isupper(static_cast<unsigned char>(c)) && std::islower(static_cast<unsigned char>(peek())) &&
        peek() != 'H')
      symbol += s_[pos_++];
    int z = 0;
    bool aromatic = false;
    if (symbol == "C" || symbol == "c") z = 6;
    if (symbol == "N" || symbol == "n") z = 7;
    if (symbol == "O" || symbol == "o") z = 8;
    if (symbol == "H") z = 1;
    if (z == 0)
      throw SmilesError(SmilesErrorKind::unsupported_element, at + 1, "unsupported element '" + symbol + "'");
    aromatic = std::islower(static_cast<unsigned char>(symbol[0])) != 0;
    int h = 0;
    if (z != 1 && peek() == 'H') {
      ++pos_;
      h = 1;
      if (std::isdigit(static_cast<unsigned char>(peek()))) h = s_[pos_++] - '0';
    }
    const char tail = peek();
    if (tail == '@') throw SmilesError(SmilesErrorKind::syntax, pos_, "stereo centres are not supported");
    if (tail == '+' || tail == '-') throw SmilesError(SmilesErrorKind::syntax, pos_, "charges are not supported");
    if (tail != ']') throw SmilesError(SmilesErrorKind::syntax, pos_, "expected ']'");
    ++pos_;
    return push_atom(z, aromatic, true, h, at);
  }

  void add_bond(std::size_t a, std::size_t b, std::optional<BondOrder> order, std::size_t at) {
    for (const auto& e : g_.bonds)
      if ((e.i == a && e.j == b) || (e.i == b && e.j == a))
        throw SmilesError(SmilesErrorKind::ring_closure, at, "duplicate bond between the same atoms");
    BondOrder o = BondOrder::single;
    if (order) o = *order;
    else if (g_.atoms[a].aromatic && g_.atoms[b].aromatic) o = BondOrder::aromatic;
    g_.bonds.push_back({a, b, o});
  }

  void finish() {
    std::vector<int> used(g_.atoms.size(), 0);
    for (const auto& b : g_.bonds) {
      used[b.i] += bond_value(b.order);
      used[b.j] += bond_value(b.order);
    }
    for (std::size_t k = 0; k < g_.atoms.size(); ++k) {
      auto& a = g_.atoms[k];
      const int valence = default_valence(a.atomic_number);
      if (a.bracket) {
        if (used[k] + a.hydrogens > valence)
          throw SmilesError(SmilesErrorKind::valence, atom_pos_[k], "valence exceeded");
        continue;
      }
      if (used[k] > valence) throw SmilesError(SmilesErrorKind::valence, atom_pos_[k], "valence exceeded");
      a.hydrogens = std::max(0, valence - used[k] - (a.aromatic ? 1 : 0));
    }
    for (std::size_t k = 0; k < g_.bonds.size(); ++k) {
      std::size_t count = 0;
      const auto label = components(g_, k, count);
      if (label[g_.bonds[k].i] == label[g_.bonds[k].j]) {
        g_.atoms[g_.bonds[k].i].in_ring = true;
        g_.atoms[g_.bonds[k].j].in_ring = true;
      }
    }
  }

  const std::string& s_;
  std::size_t pos_ = 0;
  MoleculeGraph g_;
  std::vector<std::size_t> atom_pos_;
};

}  // namespace

MoleculeGraph parse_smiles(const std::string& smiles) { return SmilesParser(smiles).run(); }

// ---- fingerprints ---------------------------------------------------------------

Fingerprint::Fingerprint(std::size_t nbits) : nbits_(nbits), words_((nbits + 63) / 64, 0) {
  if (nbits == 0) throw ContractError("fingerprint width must be positive");
}

void Fingerprint::set(std::size_t bit) { words_.at(bit / 64) |= std::uint64_t{1} << (bit % 64); }

bool Fingerprint::test(std::size_t bit) const { return (words_.at(bit / 64) >> (bit % 64)) & 1U; }

std::size_t Fingerprint::popcount() const {
  std::size_t n = 0;
  for (auto w : words_) n += static_cast<std::size_t>(std::popcount(w));
  return n;
}

std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes, std::uint64_t seed) {
  std::uint64_t h = seed;
  for (auto b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int k = 0; k < 4; ++k) out.push_back(static_cast<std::uint8_t>(v >> (8 * k)));
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int k = 0; k < 8; ++k) out.push_back(static_cast<std::uint8_t>(v >> (8 * k)));
}

}  // namespace

Fingerprint morgan_fingerprint(const MoleculeGraph& mol, std::size_t radius, std::size_t nbits) {
  Fingerprint fp(nbits);
  const auto adj = mol.neighbours();
  const std::size_t n = mol.atoms.size();
  // Bond order lookup per neighbour list entry.
  std::vector<std::vector<std::uint32_t>> orders(n);
  for (std::size_t i = 0; i < n; ++i)
    for (auto j : adj[i])
      for (const auto& b : mol.bonds)
        if ((b.i == i && b.j == j) || (b.i == j && b.j == i))
          orders[i].push_back(static_cast<std::uint32_t>(b.order));

  std::vector<std::uint64_t> code(n);
  std::vector<std::uint8_t> buf;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& a = mol.atoms[i];
    std::size_t h = static_cast<std::size_t>(a.hydrogens);
    for (auto j : adj[i]) h += mol.atoms[j].atomic_number == 1 ? 1 : 0;
    buf.clear();
    put_u32(buf, static_cast<std::uint32_t>(a.atomic_number));
    put_u32(buf, static_cast<std::uint32_t>(adj[i].size()));
    put_u32(buf, static_cast<std::uint32_t>(h));
    put_u32(buf, a.in_ring ? 1U : 0U);
    put_u32(buf, a.aromatic ? 1U : 0U);
    code[i] = fnv1a64(buf);
    fp.set(code[i] % nbits);
  }
  std::vector<std::uint64_t> next(n);
  std::vector<std::pair<std::uint32_t, std::uint64_t>> env;
  for (std::size_t r = 1; r <= radius; ++r) {
    for (std::size_t i = 0; i < n; ++i) {
      env.clear();
      for (std::size_t k = 0; k < adj[i].size(); ++k) env.emplace_back(orders[i][k], code[adj[i][k]]);
      std::sort(env.begin(), env.end());
      buf.clear();
      put_u32(buf, static_cast<std::uint32_t>(r));
      put_u64(buf, code[i]);
      put_u32(buf, static_cast<std::uint32_t>(env.size()));
      for (const auto& [o, c] : env) {
        put_u32(buf, o);
        put_u64(buf, c);
      }
      next[i] = fnv1a64(buf);
      fp.set(next[i] % nbits);
    }
    code.swap(next);
  }
  return fp;
}

double tanimoto(const Fingerprint& a, const Fingerprint& b) {
  if (a.size() != b.size())
    throw ContractError("tanimoto: fingerprint widths differ (" + std::to_string(a.size()) + " vs " +
                        std::to_string(b.size()) + ")");
  std::size_t both = 0, either = 0;
  for (std::size_t w = 0; w < a.words().size(); ++w) {
    both += static_cast<std::size_t>(std::popcount(a.words()[w] & b.words()[w]));
    either += static_cast<std::size_t>(std::popcount(a.words()[w] | b.words()[w]));
  }
  return either == 0 ? 0.0 : static_cast<double>(both) / static_cast<double>(either);
}

// ---- selection --------------------------------------------------------------------

void SelectionConfig::validate() const {
  if (!(lower >= 0.0 && lower < upper && upper <= 1.0))
    throw ConfigError("seed similarity window must satisfy 0 <= lower < upper <= 1");
  if (!accepted_cap) throw ConfigError("accepted-similarity cap is required (presets: main = 0.80, strict = 0.2)");
  if (!(*accepted_cap >= 0.0 && *accepted_cap <= 1.0)) throw ConfigError("accepted-similarity cap must lie in [0, 1]");
  if (radius == 0 || nbits == 0) throw ConfigError("fingerprint radius and width must be positive");
}

SelectionConfig selection_preset_main() {
  SelectionConfig c;
  c.accepted_cap = 0.80;
  return c;
}

SelectionConfig selection_preset_strict() {
  SelectionConfig c;
  c.accepted_cap = 0.2;
  return c;
}

SelectionConfig selection_preset(const std::string& name) {
  if (name == "main") return selection_preset_main();
  if (name == "strict") return selection_preset_strict();
  throw ConfigError("unknown selection preset '" + name + "' (expected main or strict)");
}

namespace {

CriteriaResult fail(int criterion, std::string reason) { return {false, criterion, std::move(reason)}; }

CriteriaResult seed_independent(const MoleculeGraph& c, const SelectionConfig& cfg) {
  for (const auto& a : c.atoms)
    if (a.atomic_number != 1 && a.atomic_number != 6 && a.atomic_number != 7 && a.atomic_number != 8)
      return fail(3, "element outside C/H/O/N");
  if (const auto o = c.count_element(8); o > cfg.max_oxygen)
    return fail(4, std::to_string(o) + " oxygen atoms > " + std::to_string(cfg.max_oxygen));
  if (const auto n = c.count_element(7); n > cfg.max_nitrogen)
    return fail(5, std::to_string(n) + " nitrogen atoms > " + std::to_string(cfg.max_nitrogen));
  if (cfg.require_connected && !c.connected())
    return fail(6, std::to_string(c.component_count()) + " disconnected fragments");
  return {};
}

CriteriaResult heavy_atoms(const MoleculeGraph& c, const MoleculeGraph& seed) {
  if (c.heavy_atom_count() > seed.heavy_atom_count())
    return fail(2, std::to_string(c.heavy_atom_count()) + " heavy atoms > seed's " +
                       std::to_string(seed.heavy_atom_count()));
  return {};
}

std::string format_similarity(double s) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", s);
  return buf;
}

}  // namespace

CriteriaResult check_criteria(const MoleculeGraph& candidate, const MoleculeGraph& seed,
                              const SelectionConfig& config) {
  if (auto r = heavy_atoms(candidate, seed); !r.pass) return r;
  return seed_independent(candidate, config);
}

SelectionResult select_candidates(std::span<const SmilesEntry> seeds, std::span<const SmilesEntry> pool,
                                  const SelectionConfig& config) {
  config.validate();
  std::vector<MoleculeGraph> seed_graphs;
  std::vector<Fingerprint> seed_fps;
  for (const auto& s : seeds) {
    try {
      seed_graphs.push_back(parse_smiles(s.smiles));
    } catch (const SmilesError& e) {
      throw ConfigError("seed '" + s.smiles + "' does not parse: " + e.what());
    }
    seed_fps.push_back(morgan_fingerprint(seed_graphs.back(), config.radius, config.nbits));
  }

  SelectionResult out;
  std::vector<Fingerprint> accepted_fps;
  for (std::size_t k = 0; k < pool.size(); ++k) {
    if (config.max_accepted && out.accepted.size() >= config.max_accepted) break;
    const auto& entry = pool[k];
    auto reject = [&](int criterion, std::string reason) {
      out.rejected.push_back({k, entry.smiles, entry.name, criterion, std::move(reason)});
    };
    MoleculeGraph mol;
    try {
      mol = parse_smiles(entry.smiles);
    } catch (const SmilesError& e) {
      reject(e.kind() == SmilesErrorKind::unsupported_element ? 3 : 1, e.what());
      continue;
    }
    if (auto r = seed_independent(mol, config); !r.pass) {
      reject(r.criterion, r.reason);
      continue;
    }
    const Fingerprint fp = morgan_fingerprint(mol, config.radius, config.nbits);
    std::size_t best = SIZE_MAX;
    double best_sim = -1.0, max_sim = 0.0;
    for (std::size_t s = 0; s < seed_fps.size(); ++s) {
      const double sim = tanimoto(fp, seed_fps[s]);
      max_sim = std::max(max_sim, sim);
      if (sim > config.lower && sim < config.upper && sim > best_sim) {
        best = s;
        best_sim = sim;
      }
    }
    if (best == SIZE_MAX) {
      reject(7, "no seed similarity inside the window (max " + format_similarity(max_sim) + ")");
      continue;
    }
    if (auto r = heavy_atoms(mol, seed_graphs[best]); !r.pass) {
      reject(r.criterion, r.reason);
      continue;
    }
    double worst = 0.0;
    std::size_t worst_index = 0;
    for (std::size_t a = 0; a < accepted_fps.size(); ++a) {
      const double sim = tanimoto(fp, accepted_fps[a]);
      if (sim > worst) {
        worst = sim;
        worst_index = a;
      }
    }
    if (!accepted_fps.empty() && worst > *config.accepted_cap) {
      reject(8, "similarity " + format_similarity(worst) + " to accepted '" +
                    out.accepted[worst_index].smiles + "' exceeds cap " + format_similarity(*config.accepted_cap));
      continue;
    }
    accepted_fps.push_back(fp);
    out.accepted.push_back({k, entry.smiles, entry.name, best, seeds[best].smiles, best_sim});
  }
  return out;
}

std::vector<SmilesEntry> read_smiles(std::istream& in) {
  std::vector<SmilesEntry> out;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto first = line.find_first_not_of(" \t");
    if (first == std::string::npos || line[first] == '#') continue;
    SmilesEntry e;
    const auto tab = line.find('\t', first);
    e.smiles = line.substr(first, tab == std::string::npos ? std::string::npos : tab - first);
    while (!e.smiles.empty() && e.smiles.back() == ' ') e.smiles.pop_back();
    if (tab != std::string::npos) e.name = line.substr(tab + 1);
    out.push_back(std::move(e));
  }
  return out;
}

namespace {

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string q = "\"";
  for (char c : s) {
    if (c == '"') q += '"';
    q += c;
  }
  return q + "\"";
}

}  // namespace

void write_selection_csv(std::ostream& out, const SelectionResult& result) {
  out << "smiles,name,matched_seed,seed_similarity\n";
  for (const auto& a : result.accepted)
    out << csv_field(a.smiles) << ',' << csv_field(a.name) << ',' << csv_field(a.matched_seed) << ','
        << format_similarity(a.seed_similarity) << '\n';
}

void write_rejection_log(std::ostream& out, const SelectionResult& result) {
  out << "pool_index,smiles,name,criterion,reason\n";
  for (const auto& r : result.rejected)
    out << r.pool_index << ',' << csv_field(r.smiles) << ',' << csv_field(r.name) << ',' << r.criterion << ','
        << csv_field(r.reason) << '\n';
}

}  // namespace atomkit
