#include <doctest.h>

#include <algorithm>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

#include "atomkit/curation.hpp"

using namespace atomkit;

namespace {

std::vector<SmilesEntry> load(const std::string& name) {
  std::ifstream in(std::string(ATOMKIT_TEST_DATA) + "/curation/" + name);
  REQUIRE(in.good());
  return read_smiles(in);
}

SmilesErrorKind error_kind(const std::string& smiles) {
  try {
    parse_smiles(smiles);
  } catch (const SmilesError& e) {
    return e.kind();
  }
  FAIL("parsed without error: " << smiles);
  return SmilesErrorKind::syntax;
}

struct Expected {
  std::string decision;
  int detail = 0;
  double similarity = -1.0;
};

std::map<std::size_t, Expected> read_expected(const std::string& name) {
  std::ifstream in(std::string(ATOMKIT_TEST_DATA) + "/curation/" + name);
  REQUIRE(in.good());
  std::string line;
  std::getline(in, line);
  CHECK(line == "pool_index,name,decision,detail,seed_similarity");
  std::map<std::size_t, Expected> out;
  while (std::getline(in, line)) {
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string tok;
    while (std::getline(ss, tok, ',')) f.push_back(tok);
    Expected e;
    e.decision = f.at(2);
    e.detail = std::stoi(f.at(3));
    if (f.size() > 4 && !f[4].empty()) e.similarity = std::stod(f[4]);
    out[std::stoul(f.at(0))] = e;
  }
  return out;
}

void check_against(const SelectionResult& r, const std::map<std::size_t, Expected>& expected) {
  CHECK(r.accepted.size() + r.rejected.size() == expected.size());
  for (const auto& a : r.accepted) {
    INFO("pool index " << a.pool_index);
    const auto& e = expected.at(a.pool_index);
    CHECK(e.decision == "accept");
    CHECK(static_cast<int>(a.seed_index) == e.detail);
    CHECK(a.seed_similarity == doctest::Approx(e.similarity).epsilon(1e-6));
  }
  for (const auto& x : r.rejected) {
    INFO("pool index " << x.pool_index << ": " << x.reason);
    const auto& e = expected.at(x.pool_index);
    CHECK(e.decision == "reject");
    CHECK(x.criterion == e.detail);
  }
}

}  // namespace

TEST_CASE("parse_smiles examples") {
  const auto methane = parse_smiles("C");
  CHECK(methane.heavy_atom_count() == 1);
  CHECK(methane.hydrogen_count() == 4);

  const auto ethanol = parse_smiles("CCO");
  CHECK(ethanol.heavy_atom_count() == 3);
  CHECK(ethanol.count_element(8) == 1);
  CHECK(ethanol.bonds.size() == 2);

  const auto ring = parse_smiles("C1CC1");
  CHECK(ring.bonds.size() == 3);
  CHECK(ring.ring_count() == 1);
  for (const auto& a : ring.atoms) CHECK(a.in_ring);

  CHECK_THROWS_AS(parse_smiles("C("), SmilesError);
}

TEST_CASE("parse_smiles composition table") {
  struct Row {
    const char* smiles;
    std::size_t heavy, c, n, o, h, rings;
  };
  // Counted by hand from the structural formulas.
  const Row rows[] = {
      {"C", 1, 1, 0, 0, 4, 0},
      {"CCO", 3, 2, 0, 1, 6, 0},
      {"C1CC1", 3, 3, 0, 0, 6, 1},
      {"c1ccccc1", 6, 6, 0, 0, 6, 1},
      {"O=C=O", 3, 1, 0, 2, 0, 0},
      {"C#N", 2, 1, 1, 0, 1, 0},
      {"CC(=O)O", 4, 2, 0, 2, 4, 0},
      {"OCC(O)CO", 6, 3, 0, 3, 8, 0},
      {"c1ccncc1", 6, 5, 1, 0, 5, 1},
      {"[nH]1cccc1", 5, 4, 1, 0, 5, 1},
      {"c1ccoc1", 5, 4, 0, 1, 4, 1},
      {"C1CCC2CCCCC2C1", 10, 10, 0, 0, 18, 2},
      {"c1ccc2ccccc2c1", 10, 10, 0, 0, 8, 2},
      {"N#CC#N", 4, 2, 2, 0, 0, 0},
      {"CN(C)C", 4, 3, 1, 0, 9, 0},
      {"C1CC2CCC1C2", 7, 7, 0, 0, 12, 2},
      {"OC(=O)c1ccccc1C(=O)O", 12, 8, 0, 4, 6, 1},
      {"CC.O", 3, 2, 0, 1, 8, 0},
      {"[H][H]", 0, 0, 0, 0, 2, 0},
      {"C=CC=C", 4, 4, 0, 0, 6, 0},
  };
  for (const auto& r : rows) {
    INFO(r.smiles);
    const auto g = parse_smiles(r.smiles);
    CHECK(g.heavy_atom_count() == r.heavy);
    CHECK(g.count_element(6) == r.c);
    CHECK(g.count_element(7) == r.n);
    CHECK(g.count_element(8) == r.o);
    CHECK(g.hydrogen_count() == r.h);
    CHECK(g.ring_count() == r.rings);
  }
  CHECK(parse_smiles("CC.O").component_count() == 2);
}

TEST_CASE("parse_smiles error kinds") {
  CHECK(error_kind("C(") == SmilesErrorKind::unbalanced_branch);
  CHECK(error_kind("C)C") == SmilesErrorKind::unbalanced_branch);
  CHECK(error_kind("C1CC") == SmilesErrorKind::ring_closure);
  CHECK(error_kind("C11") == SmilesErrorKind::ring_closure);
  CHECK(error_kind("C(C)(C)(C)(C)C") == SmilesErrorKind::valence);
  CHECK(error_kind("O=C=O=C") == SmilesErrorKind::valence);
  CHECK(error_kind("CCl") == SmilesErrorKind::unsupported_element);
  CHECK(error_kind("C[Si](C)(C)C") == SmilesErrorKind::unsupported_element);
  CHECK(error_kind("S") == SmilesErrorKind::unsupported_element);
  CHECK(error_kind("=C") == SmilesErrorKind::syntax);
  CHECK(error_kind("CC=") == SmilesErrorKind::syntax);
  CHECK(error_kind("C()") == SmilesErrorKind::syntax);
  CHECK(error_kind("[C@H](C)(O)N") == SmilesErrorKind::syntax);
  CHECK(error_kind("") == SmilesErrorKind::syntax);
  try {
    parse_smiles("CC(C");
    FAIL("expected an error");
  } catch (const SmilesError& e) {
    CHECK(e.position() == 2);
  }
}

TEST_CASE("fingerprint examples") {
  CHECK(morgan_fingerprint(parse_smiles("OCC")) == morgan_fingerprint(parse_smiles("CCO")));
  CHECK_FALSE(morgan_fingerprint(parse_smiles("C")) == morgan_fingerprint(parse_smiles("CCO")));
  CHECK(morgan_fingerprint(parse_smiles("CCO")).size() == 2048);
  CHECK(morgan_fingerprint(parse_smiles("CCO"), 2, 4096).size() == 4096);
  // Different spellings of benzoic acid.
  CHECK(morgan_fingerprint(parse_smiles("OC(=O)c1ccccc1")) ==
        morgan_fingerprint(parse_smiles("c1ccc(cc1)C(O)=O")));
}

TEST_CASE("tanimoto examples") {
  Fingerprint a(64), b(64), empty(64);
  for (std::size_t bit : {0, 1, 2}) a.set(bit);
  for (std::size_t bit : {1, 2, 3}) b.set(bit);
  CHECK(tanimoto(a, b) == 0.5);
  CHECK(tanimoto(a, a) == 1.0);
  CHECK(tanimoto(empty, empty) == 0.0);
  Fingerprint c(64);
  c.set(40);
  CHECK(tanimoto(a, c) == 0.0);
  CHECK_THROWS_AS(tanimoto(a, Fingerprint(128)), ContractError);
}

TEST_CASE("fingerprints are isomorphism invariant") {
  std::mt19937_64 rng(21);
  std::uniform_int_distribution<int> z(0, 2), hs(0, 3), coin(0, 1);
  static constexpr int kZ[3] = {6, 7, 8};
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = std::uniform_int_distribution<std::size_t>(2, 12)(rng);
    MoleculeGraph g;
    for (std::size_t i = 0; i < n; ++i) {
      GraphAtom a;
      a.atomic_number = kZ[z(rng)];
      a.hydrogens = hs(rng);
      a.in_ring = coin(rng) == 1;
      a.aromatic = coin(rng) == 1 && a.in_ring;
      g.atoms.push_back(a);
    }
    for (std::size_t i = 1; i < n; ++i) {
      GraphBond b;
      b.i = std::uniform_int_distribution<std::size_t>(0, i - 1)(rng);
      b.j = i;
      b.order = coin(rng) ? BondOrder::single : BondOrder::double_;
      g.bonds.push_back(b);
    }
    // Close one ring unless that would duplicate a tree bond.
    if (n > 3 && g.bonds.back().i != 0) g.bonds.push_back({0, n - 1, BondOrder::aromatic});

    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    MoleculeGraph h;
    h.atoms.resize(n);
    for (std::size_t i = 0; i < n; ++i) h.atoms[perm[i]] = g.atoms[i];
    for (const auto& b : g.bonds) {
      GraphBond nb{perm[b.i], perm[b.j], b.order};
      if (coin(rng)) std::swap(nb.i, nb.j);
      h.bonds.push_back(nb);
    }
    std::shuffle(h.bonds.begin(), h.bonds.end(), rng);
    CHECK(morgan_fingerprint(h) == morgan_fingerprint(g));
    CHECK(morgan_fingerprint(h, 2, 4096) == morgan_fingerprint(g, 2, 4096));
  }
}

TEST_CASE("check_criteria examples") {
  const auto seed = parse_smiles("CCCCCCCCCCCCCCC");
  const auto main = selection_preset_main();
  const auto six_o = check_criteria(parse_smiles("OCC(O)C(O)C(O)C(O)CO"), seed, main);
  CHECK_FALSE(six_o.pass);
  CHECK(six_o.criterion == 4);
  CHECK(check_criteria(parse_smiles("NCC(N)C(N)CN"), seed, main).criterion == 5);
  CHECK(check_criteria(parse_smiles("C.C"), seed, main).criterion == 6);
  CHECK(check_criteria(parse_smiles("CCCCCCCCCCCCCCCC"), seed, main).criterion == 2);
  const auto same = check_criteria(seed, seed, main);
  CHECK(same.pass);
  CHECK(same.criterion == 0);
  // The caps are inclusive.
  CHECK(check_criteria(parse_smiles("OCC(O)C(O)C(O)CO"), seed, main).pass);
  CHECK(check_criteria(parse_smiles("NCC(N)CN"), seed, main).pass);
}

TEST_CASE("select_candidates examples") {
  const auto seeds = load("seeds.smi");
  const auto pool = load("pool.smi");
  const auto main = selection_preset_main();

  const auto none = select_candidates(seeds, {}, main);
  CHECK(none.accepted.empty());
  CHECK(none.rejected.empty());

  const std::vector<SmilesEntry> self{seeds[0]};
  const auto s = select_candidates(seeds, self, main);
  REQUIRE(s.rejected.size() == 1);
  CHECK(s.rejected[0].criterion == 7);

  // A duplicate of an accepted molecule is caught by the cap.
  const std::vector<SmilesEntry> twice{pool[0], pool[0]};
  const auto d = select_candidates(seeds, twice, main);
  REQUIRE(d.accepted.size() == 1);
  REQUIRE(d.rejected.size() == 1);
  CHECK(d.rejected[0].pool_index == 1);
  CHECK(d.rejected[0].criterion == 8);

  SelectionConfig no_cap = main;
  no_cap.accepted_cap.reset();
  CHECK_THROWS_AS(select_candidates(seeds, pool, no_cap), ConfigError);
  SelectionConfig inverted = main;
  inverted.lower = 0.95;
  CHECK_THROWS_AS(select_candidates(seeds, pool, inverted), ConfigError);
  const std::vector<SmilesEntry> bad_seed{{"C(", "broken"}};
  CHECK_THROWS_AS(select_candidates(bad_seed, pool, main), ConfigError);
}

TEST_CASE("seed similarities match the committed table") {
  const auto seeds = load("seeds.smi");
  const auto pool = load("pool.smi");
  std::ifstream in(std::string(ATOMKIT_TEST_DATA) + "/curation/seed_similarities.csv");
  REQUIRE(in.good());
  std::string line;
  std::getline(in, line);
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    std::size_t p = 0, s = 0;
    double sim = 0.0;
    char comma = 0;
    std::stringstream ss(line);
    ss >> p >> comma >> s >> comma >> sim;
    const double got = tanimoto(morgan_fingerprint(parse_smiles(pool.at(p).smiles)),
                                morgan_fingerprint(parse_smiles(seeds.at(s).smiles)));
    INFO(pool[p].name << " vs seed " << s);
    CHECK(std::abs(got - sim) < 1e-11);
    ++rows;
  }
  CHECK(rows > 0);
}

TEST_CASE("committed corpus: both cap presets") {
  const auto seeds = load("seeds.smi");
  const auto pool = load("pool.smi");
  CHECK(seeds.size() + pool.size() == 30);
  SUBCASE("main") { check_against(select_candidates(seeds, pool, selection_preset_main()), read_expected("expected_main.csv")); }
  SUBCASE("strict") {
    check_against(select_candidates(seeds, pool, selection_preset_strict()), read_expected("expected_strict.csv"));
  }
}

TEST_CASE("selection CSV and rejection log") {
  const auto seeds = load("seeds.smi");
  const auto pool = load("pool.smi");
  const auto r = select_candidates(seeds, pool, selection_preset_main());
  std::ostringstream a, b;
  write_selection_csv(a, r);
  write_rejection_log(b, r);
  const std::string sa = a.str(), sb = b.str();
  CHECK(sa.rfind("smiles,name,matched_seed,seed_similarity\n", 0) == 0);
  CHECK(std::count(sa.begin(), sa.end(), '\n') == static_cast<long>(r.accepted.size() + 1));
  CHECK(sb.rfind("pool_index,smiles,name,criterion,reason\n", 0) == 0);
  CHECK(std::count(sb.begin(), sb.end(), '\n') == static_cast<long>(r.rejected.size() + 1));

  std::istringstream in("# comment\n\nCCO\tethanol\nC\n");
  const auto entries = read_smiles(in);
  REQUIRE(entries.size() == 2);
  CHECK(entries[0].name == "ethanol");
  CHECK(entries[1].smiles == "C");
}

TEST_CASE("selection decisions survive doubling the fingerprint width") {
  const auto seeds = load("seeds.smi");
  // Similarities here sit at least 0.01 away from every threshold at both widths.
  const std::vector<SmilesEntry> suite{
      {"CCC(CC)COC(=O)c1ccccc1C(=O)OCC(CC)CCCCC", "shifted-branch"},
      {"CCCCCC(CC)COC(=O)c1ccccc1C(=O)OCC(CC)CC", "shifted-branch-mirror"},
      {"CCO", "ethanol"},
      {"c1ccccc1", "benzene"},
      {"OC(=O)c1ccccc1C(=O)O", "phthalic-acid"},
      {"CCCCCCCCOC(=O)c1ccccc1C(=O)OCCCCCCCC", "seed-copy"},
      {"CCCCCCCC.OC(=O)c1ccccc1C(=O)OCCCCCCCC", "two-fragments"},
      {"C(", "open-branch"},
  };
  for (const auto& preset : {selection_preset_main(), selection_preset_strict()}) {
    SelectionConfig wide = preset;
    wide.nbits = 4096;
    for (const auto& cfg : {preset, wide}) {
      std::vector<Fingerprint> seed_fp;
      for (const auto& s : seeds) seed_fp.push_back(morgan_fingerprint(parse_smiles(s.smiles), 2, cfg.nbits));
      std::vector<Fingerprint> fps;
      std::vector<bool> in_window;
      for (const auto& e : suite) {
        try {
          fps.push_back(morgan_fingerprint(parse_smiles(e.smiles), 2, cfg.nbits));
        } catch (const SmilesError&) {
          continue;
        }
        in_window.push_back(false);
        for (const auto& s : seed_fp) {
          const double t = tanimoto(fps.back(), s);
          if (t > cfg.lower && t < cfg.upper) in_window.back() = true;
          INFO(e.name << " at " << cfg.nbits << " bits: " << t);
          if (t < 1.0) CHECK(std::min(std::abs(t - cfg.lower), std::abs(t - cfg.upper)) >= 0.01);
        }
      }
      // The cap only ever compares candidates that made it into the window.
      for (std::size_t i = 0; i < fps.size(); ++i)
        for (std::size_t j = i + 1; j < fps.size(); ++j) {
          if (!in_window[i] || !in_window[j]) continue;
          const double t = tanimoto(fps[i], fps[j]);
          INFO("pair " << i << "," << j << " at " << cfg.nbits << " bits: " << t);
          CHECK(std::abs(t - *cfg.accepted_cap) >= 0.01);
        }
    }
    const auto narrow = select_candidates(seeds, suite, preset);
    const auto doubled = select_candidates(seeds, suite, wide);
    REQUIRE(narrow.accepted.size() == doubled.accepted.size());
    REQUIRE(narrow.rejected.size() == doubled.rejected.size());
    CHECK_FALSE(narrow.accepted.empty());
    for (std::size_t k = 0; k < narrow.accepted.size(); ++k) {
      CHECK(narrow.accepted[k].pool_index == doubled.accepted[k].pool_index);
      CHECK(narrow.accepted[k].seed_index == doubled.accepted[k].seed_index);
    }
    for (std::size_t k = 0; k < narrow.rejected.size(); ++k) {
      CHECK(narrow.rejected[k].pool_index == doubled.rejected[k].pool_index);
      CHECK(narrow.rejected[k].criterion == doubled.rejected[k].criterion);
    }
  }
}
