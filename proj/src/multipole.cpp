#include "wick/multipole.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "wick/kernels.hpp"

namespace wick {

namespace {

bool same_point(const PointD& a, const PointD& b) {
  return a.t == b.t && a.x1 == b.x1 && a.x2 == b.x2;
}

// parabolic-norm r point in the gaussian direction drawn from rng
PointD random_offset(std::mt19937_64& rng, double r) {
  std::normal_distribution<double> gauss;
  for (;;) {
    PointD g{gauss(rng), gauss(rng), gauss(rng)};
    const double n = parabolic_norm(g);
    if (n > 1e-12) return parabolic_scale(g, r / n);
  }
}

int label_with_sign(const ChargeConfiguration& cfg, const OrientedPair& e, int sign) {
  if (cfg.charges.at(static_cast<std::size_t>(e.up)).sign == sign) return e.up;
  return e.down;
}

}  // namespace

int ChargeConfiguration::plus_label(int e) const {
  return label_with_sign(*this, renorm.at(static_cast<std::size_t>(e)), 1);
}

int ChargeConfiguration::minus_label(int e) const {
  return label_with_sign(*this, renorm.at(static_cast<std::size_t>(e)), -1);
}

void ChargeConfiguration::validate() const {
  const int n = static_cast<int>(charges.size());
  int plus = 0;
  for (const Charge& c : charges) {
    if (c.sign != 1 && c.sign != -1)
      throw std::invalid_argument("ChargeConfiguration: signs must be +-1");
    plus += c.sign == 1;
  }
  if (2 * plus != n) throw std::invalid_argument("ChargeConfiguration: unbalanced signs");
  if (renorm.empty()) throw std::invalid_argument("ChargeConfiguration: no renorm pairs");
  if (2 * static_cast<int>(renorm.size()) != n)
    throw std::invalid_argument("ChargeConfiguration: renorm pairs must cover every label");
  std::vector<char> used(static_cast<std::size_t>(n), 0);
  int up_plus = 0;
  for (const OrientedPair& e : renorm) {
    if (e.up < 0 || e.up >= n || e.down < 0 || e.down >= n || e.up == e.down)
      throw std::invalid_argument("ChargeConfiguration: bad pair labels");
    if (used[static_cast<std::size_t>(e.up)] || used[static_cast<std::size_t>(e.down)])
      throw std::invalid_argument("ChargeConfiguration: renorm pairs overlap");
    used[static_cast<std::size_t>(e.up)] = used[static_cast<std::size_t>(e.down)] = 1;
    if (charges[static_cast<std::size_t>(e.up)].sign ==
        charges[static_cast<std::size_t>(e.down)].sign)
      throw std::invalid_argument("ChargeConfiguration: renorm pair of equal signs");
    up_plus += charges[static_cast<std::size_t>(e.up)].sign == 1;
  }
  const int m = static_cast<int>(renorm.size());
  if (std::abs(2 * up_plus - m) > m % 2)
    throw std::invalid_argument("ChargeConfiguration: orientations must split evenly");
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j)
      if (same_point(charges[static_cast<std::size_t>(i)].z,
                     charges[static_cast<std::size_t>(j)].z))
        throw std::invalid_argument("ChargeConfiguration: duplicate positions");
}

ChargeConfiguration random_charge_configuration(int m, std::uint64_t seed, double spread,
                                                double min_sep) {
  if (m < 1) throw std::invalid_argument("random_charge_configuration: need m >= 1");
  if (4 * min_sep >= spread)
    throw std::invalid_argument("random_charge_configuration: min_sep too close to spread");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> ut(-spread * spread, spread * spread);
  std::uniform_real_distribution<double> ux(-spread, spread);
  std::uniform_real_distribution<double> uscale(std::log(4 * min_sep), std::log(spread));
  ChargeConfiguration cfg;
  auto clear_of_others = [&](const PointD& z) {
    for (const Charge& c : cfg.charges)
      if (parabolic_dist(c.z, z) < min_sep) return false;
    return true;
  };
  for (int e = 0; e < m; ++e) {
    PointD plus;
    for (int tries = 0;; ++tries) {
      plus = {ut(rng), ux(rng), ux(rng)};
      if (clear_of_others(plus)) break;
      if (tries > 10000) throw std::runtime_error("random_charge_configuration: box too tight");
    }
    cfg.charges.push_back({plus, 1, 1});
    PointD minus;
    for (int tries = 0;; ++tries) {
      minus = plus + random_offset(rng, std::exp(uscale(rng)));
      if (clear_of_others(minus)) break;
      if (tries > 10000) throw std::runtime_error("random_charge_configuration: box too tight");
    }
    cfg.charges.push_back({minus, -1, 1});
    if (e % 2 == 0)
      cfg.renorm.push_back({2 * e, 2 * e + 1});
    else
      cfg.renorm.push_back({2 * e + 1, 2 * e});
  }
  cfg.validate();
  return cfg;
}

ChargeConfiguration random_chain_configuration(int m, std::uint64_t seed, double spread) {
  if (m < 1) throw std::invalid_argument("random_chain_configuration: need m >= 1");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uscale(std::log(spread / 2), std::log(spread));
  std::uniform_real_distribution<double> ugap(0.6, 1.0);
  const int n = 2 * m;
  const double g = std::exp(uscale(rng)) * ugap(rng);
  const bool along_time = (rng() & 1) != 0;
  std::vector<int> signs(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) signs[static_cast<std::size_t>(i)] = i < m ? 1 : -1;
  std::shuffle(signs.begin(), signs.end(), rng);
  ChargeConfiguration cfg;
  for (int i = 0; i < n; ++i) {
    const PointD z = along_time ? PointD{i * g * g, 0, 0} : PointD{0, i * g, 0};
    cfg.charges.push_back({z, signs[static_cast<std::size_t>(i)], 1});
  }
  std::vector<int> plus, minus;
  for (int i = 0; i < n; ++i)
    (cfg.charges[static_cast<std::size_t>(i)].sign == 1 ? plus : minus).push_back(i);
  for (int e = 0; e < m; ++e) {
    if (e % 2 == 0)
      cfg.renorm.push_back({plus[static_cast<std::size_t>(e)], minus[static_cast<std::size_t>(e)]});
    else
      cfg.renorm.push_back({minus[static_cast<std::size_t>(e)], plus[static_cast<std::size_t>(e)]});
  }
  cfg.validate();
  return cfg;
}

ChargeConfiguration random_multipole_configuration(int m, std::uint64_t seed, double spread) {
  if (m < 1) throw std::invalid_argument("random_multipole_configuration: need m >= 1");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> ut(-spread * spread, spread * spread);
  std::uniform_real_distribution<double> ux(-spread, spread);
  const double sep = 0.2 * spread;
  std::uniform_real_distribution<double> usize(std::log(5e-3 * spread), std::log(sep / 4));
  std::vector<PointD> centre;
  for (int e = 0; e < m; ++e) {
    for (int tries = 0;; ++tries) {
      PointD c{ut(rng), ux(rng), ux(rng)};
      bool ok = true;
      for (const PointD& o : centre) ok = ok && parabolic_dist(c, o) >= sep;
      if (ok) {
        centre.push_back(c);
        break;
      }
      if (tries > 10000)
        throw std::runtime_error("random_multipole_configuration: box too tight");
    }
  }
  ChargeConfiguration cfg;
  for (int e = 0; e < m; ++e) {
    const PointD plus = centre[static_cast<std::size_t>(e)];
    cfg.charges.push_back({plus, 1, 1});
    cfg.charges.push_back({plus + random_offset(rng, std::exp(usize(rng))), -1, 1});
    if (e % 2 == 0)
      cfg.renorm.push_back({2 * e, 2 * e + 1});
    else
      cfg.renorm.push_back({2 * e + 1, 2 * e});
  }
  cfg.validate();
  return cfg;
}

PotentialFunction power_law_potential(double alpha) {
  if (alpha < 0) throw std::invalid_argument("power_law_potential: need alpha >= 0");
  PotentialFunction jay;
  jay.eval = [alpha](const PointD& z) { return std::pow(parabolic_norm(z), alpha); };
  jay.ball_sup = [alpha](double r) { return std::pow(r, alpha); };
  char buf[32];
  std::snprintf(buf, sizeof buf, "||z||^%g", alpha);
  jay.name = buf;
  return jay;
}

PotentialFunction covariance_potential(const MollifiedCovariance& cov, double beta2, int k) {
  const double a = static_cast<double>(k) * k * beta2;
  PotentialFunction jay;
  jay.eval = [&cov, a](const PointD& z) { return std::exp(-a * cov.value(z)); };
  // sampled sup: fixed direction set, a few radii guarding non-monotone spots
  auto dirs = std::make_shared<std::vector<PointD>>();
  std::mt19937_64 rng(0x9e3779b97f4a7c15ull);
  for (int i = 0; i < 64; ++i) dirs->push_back(random_offset(rng, 1.0));
  auto eval = jay.eval;
  jay.ball_sup = [dirs, eval](double r) {
    double best = 0;
    for (double s : {1.0, 0.5, 0.25, 0.125})
      for (const PointD& d : *dirs) best = std::max(best, eval(parabolic_scale(d, s * r)));
    return best;
  };
  char buf[48];
  std::snprintf(buf, sizeof buf, "table:a=%g,eps=%g", a, cov.eps());
  jay.name = buf;
  return jay;
}

double doubling_constant(const PotentialFunction& jay, double c, int samples,
                         std::uint64_t seed) {
  if (c <= 0 || samples < 1) throw std::invalid_argument("doubling_constant: bad arguments");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> ulog(std::log(1e-3), std::log(1.0));
  double worst = 0;
  for (int i = 0; i < samples; ++i) {
    const double rbar = std::exp(ulog(rng));
    std::uniform_real_distribution<double> ur(0.0, c * rbar);
    const PointD xbar = random_offset(rng, rbar);
    const PointD x = random_offset(rng, ur(rng));
    const double den = jay.eval(xbar);
    if (den > 0) worst = std::max(worst, jay.eval(x) / den);
  }
  return worst;
}

namespace {

// single-linkage merge of the previous level's blocks at threshold 2^n
std::vector<std::vector<int>> merge_blocks(const std::vector<std::vector<int>>& prev,
                                           const std::vector<std::vector<double>>& dist,
                                           double threshold) {
  const int nb = static_cast<int>(prev.size());
  std::vector<int> root(static_cast<std::size_t>(nb));
  std::iota(root.begin(), root.end(), 0);
  std::function<int(int)> find = [&](int a) {
    while (root[static_cast<std::size_t>(a)] != a) {
      root[static_cast<std::size_t>(a)] = root[static_cast<std::size_t>(root[static_cast<std::size_t>(a)])];
      a = root[static_cast<std::size_t>(a)];
    }
    return a;
  };
  for (int a = 0; a < nb; ++a)
    for (int b = a + 1; b < nb; ++b) {
      bool close = false;
      for (int i : prev[static_cast<std::size_t>(a)]) {
        for (int j : prev[static_cast<std::size_t>(b)])
          if (dist[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] <= threshold) {
            close = true;
            break;
          }
        if (close) break;
      }
      if (close) root[find(a)] = find(b);
    }
  std::vector<std::vector<int>> out(static_cast<std::size_t>(nb));
  for (int a = 0; a < nb; ++a) {
    auto& dst = out[static_cast<std::size_t>(find(a))];
    dst.insert(dst.end(), prev[static_cast<std::size_t>(a)].begin(),
               prev[static_cast<std::size_t>(a)].end());
  }
  std::vector<std::vector<int>> blocks;
  for (auto& b : out)
    if (!b.empty()) {
      std::sort(b.begin(), b.end());
      blocks.push_back(std::move(b));
    }
  std::sort(blocks.begin(), blocks.end(),
            [](const auto& a, const auto& b) { return a.front() < b.front(); });
  return blocks;
}

void check_level(const ChargeConfiguration& cfg, const HierarchyLevel& lv) {
  for (std::size_t b = 0; b < lv.blocks.size(); ++b) {
    const auto& block = lv.blocks[b];
    std::vector<char> paired(cfg.charges.size(), 0);
    for (const auto& p : lv.pairs[b]) {
      if (!std::binary_search(block.begin(), block.end(), p[0]) ||
          !std::binary_search(block.begin(), block.end(), p[1]))
        throw std::logic_error("hierarchy: pair leaves its block");
      if (cfg.charges[static_cast<std::size_t>(p[0])].sign ==
          cfg.charges[static_cast<std::size_t>(p[1])].sign)
        throw std::logic_error("hierarchy: pair of equal signs");
      if (paired[static_cast<std::size_t>(p[0])] || paired[static_cast<std::size_t>(p[1])])
        throw std::logic_error("hierarchy: pairs overlap");
      paired[static_cast<std::size_t>(p[0])] = paired[static_cast<std::size_t>(p[1])] = 1;
    }
    int sign = 0;
    for (int i : block) {
      if (paired[static_cast<std::size_t>(i)]) continue;
      const int s = cfg.charges[static_cast<std::size_t>(i)].sign;
      if (sign == 0) sign = s;
      if (s != sign) throw std::logic_error("hierarchy: leftover labels of mixed sign");
    }
  }
}

}  // namespace

const HierarchyLevel& DyadicHierarchy::level(int n) const {
  if (n < n_min || n > n_max) throw std::out_of_range("DyadicHierarchy: level outside ladder");
  return levels[static_cast<std::size_t>(n - n_min)];
}

std::vector<std::array<int, 2>> DyadicHierarchy::final_pairing() const {
  const HierarchyLevel& top = levels.back();
  if (top.blocks.size() != 1) throw std::logic_error("DyadicHierarchy: top level not a single block");
  return top.pairs.front();
}

DyadicHierarchy build_hierarchy(const ChargeConfiguration& cfg) {
  const int n = static_cast<int>(cfg.charges.size());
  if (n < 1) throw std::invalid_argument("build_hierarchy: empty configuration");
  std::vector<std::vector<double>> dist(static_cast<std::size_t>(n),
                                        std::vector<double>(static_cast<std::size_t>(n), 0.0));
  double dmin = std::numeric_limits<double>::infinity(), dmax = 0;
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) {
      if (same_point(cfg.charges[static_cast<std::size_t>(i)].z,
                     cfg.charges[static_cast<std::size_t>(j)].z))
        throw std::invalid_argument("build_hierarchy: degenerate configuration");
      const double d = parabolic_dist(cfg.charges[static_cast<std::size_t>(i)].z,
                                      cfg.charges[static_cast<std::size_t>(j)].z);
      dist[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = d;
      dist[static_cast<std::size_t>(j)][static_cast<std::size_t>(i)] = d;
      dmin = std::min(dmin, d);
      dmax = std::max(dmax, d);
    }

  DyadicHierarchy hy;
  if (n == 1) {
    hy.n_min = hy.n_max = 0;
    hy.levels.push_back({0, {{0}}, {{}}});
    return hy;
  }
  hy.n_min = static_cast<int>(std::floor(std::log2(dmin))) - 1;
  hy.n_max = static_cast<int>(std::ceil(std::log2(dmax))) + 1;

  HierarchyLevel base;
  base.n = hy.n_min;
  for (int i = 0; i < n; ++i) {
    base.blocks.push_back({i});
    base.pairs.push_back({});
  }
  hy.levels.push_back(std::move(base));

  for (int lvl = hy.n_min + 1; lvl <= hy.n_max; ++lvl) {
    const HierarchyLevel& prev = hy.levels.back();
    HierarchyLevel cur;
    cur.n = lvl;
    cur.blocks = merge_blocks(prev.blocks, dist, std::ldexp(1.0, lvl));
    cur.pairs.resize(cur.blocks.size());
    for (std::size_t b = 0; b < cur.blocks.size(); ++b) {
      const auto& block = cur.blocks[b];
      auto& pairs = cur.pairs[b];
      // inherit from every previous block that landed inside this one
      for (std::size_t pb = 0; pb < prev.blocks.size(); ++pb)
        if (std::binary_search(block.begin(), block.end(), prev.blocks[pb].front()))
          pairs.insert(pairs.end(), prev.pairs[pb].begin(), prev.pairs[pb].end());
      std::vector<char> paired(static_cast<std::size_t>(n), 0);
      for (const auto& p : pairs)
        paired[static_cast<std::size_t>(p[0])] = paired[static_cast<std::size_t>(p[1])] = 1;
      std::vector<int> plus, minus;
      for (int i : block) {
        if (paired[static_cast<std::size_t>(i)]) continue;
        (cfg.charges[static_cast<std::size_t>(i)].sign > 0 ? plus : minus).push_back(i);
      }
      for (std::size_t q = 0; q < std::min(plus.size(), minus.size()); ++q)
        pairs.push_back({std::min(plus[q], minus[q]), std::max(plus[q], minus[q])});
      std::sort(pairs.begin(), pairs.end());
    }
    check_level(cfg, cur);
    hy.levels.push_back(std::move(cur));
  }
  if (hy.levels.back().blocks.size() != 1)
    throw std::logic_error("build_hierarchy: top level failed to merge");
  return hy;
}

BoundReport hierarchical_bound_report(const ChargeConfiguration& cfg,
                                      const DyadicHierarchy& hier,
                                      const PotentialFunction& jay) {
  const int n = static_cast<int>(cfg.charges.size());
  std::vector<std::vector<double>> logj(static_cast<std::size_t>(n),
                                        std::vector<double>(static_cast<std::size_t>(n), 0.0));
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) {
      const double v = std::log(jay.eval(cfg.charges[static_cast<std::size_t>(i)].z -
                                         cfg.charges[static_cast<std::size_t>(j)].z));
      logj[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = v;
      logj[static_cast<std::size_t>(j)][static_cast<std::size_t>(i)] = v;
    }
  BoundReport rep;
  for (const HierarchyLevel& lv : hier.levels) {
    const double logsup = std::log(jay.ball_sup(std::ldexp(1.0, lv.n)));
    for (std::size_t b = 0; b < lv.blocks.size(); ++b) {
      const auto& block = lv.blocks[b];
      if (block.size() < 2) continue;
      double lhs = 0;
      for (std::size_t i = 0; i < block.size(); ++i)
        for (std::size_t j = i + 1; j < block.size(); ++j) {
          const int a = block[i], c = block[j];
          const double s = cfg.charges[static_cast<std::size_t>(a)].sign *
                           cfg.charges[static_cast<std::size_t>(c)].sign;
          lhs += s * logj[static_cast<std::size_t>(a)][static_cast<std::size_t>(c)];
        }
      double rhs = 0;
      for (const auto& p : lv.pairs[b])
        rhs -= logj[static_cast<std::size_t>(p[0])][static_cast<std::size_t>(p[1])];
      const int t = static_cast<int>(block.size()) - 2 * static_cast<int>(lv.pairs[b].size());
      rhs += 0.5 * t * (t - 1) * logsup;
      const double ratio = std::exp(lhs - rhs);
      if (ratio > rep.max_ratio) {
        rep.max_ratio = ratio;
        rep.level = lv.n;
        rep.block = static_cast<int>(b);
      }
    }
  }
  return rep;
}

double pairing_value(const ChargeConfiguration& cfg, const PotentialFunction& jay,
                     const std::vector<std::array<int, 2>>& pairing) {
  double v = 1.0;
  for (const auto& p : pairing)
    v /= jay.eval(cfg.charges[static_cast<std::size_t>(p[0])].z -
                  cfg.charges[static_cast<std::size_t>(p[1])].z);
  return v;
}

BestPairing brute_force_best_pairing(const ChargeConfiguration& cfg,
                                     const PotentialFunction& jay) {
  std::vector<int> plus, minus;
  for (int i = 0; i < static_cast<int>(cfg.charges.size()); ++i)
    (cfg.charges[static_cast<std::size_t>(i)].sign > 0 ? plus : minus).push_back(i);
  if (plus.size() != minus.size())
    throw std::invalid_argument("brute_force_best_pairing: unbalanced signs");
  if (plus.size() > 6) throw std::length_error("brute_force_best_pairing: more than 6 pairs");
  BestPairing best;
  if (plus.empty()) {
    best.value = 1.0;
    return best;
  }
  std::sort(minus.begin(), minus.end());
  std::vector<int> perm = minus;
  do {
    std::vector<std::array<int, 2>> pairing;
    for (std::size_t q = 0; q < plus.size(); ++q)
      pairing.push_back({std::min(plus[q], perm[q]), std::max(plus[q], perm[q])});
    const double v = pairing_value(cfg, jay, pairing);
    if (best.pairing.empty() || v > best.value) {
      std::sort(pairing.begin(), pairing.end());
      best.pairing = std::move(pairing);
      best.value = v;
    }
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

namespace {

// shared J table over charge pairs; the expansion identity is algebraic in
// these values, so every route below consumes the same table
struct PairTable {
  int n = 0;
  std::vector<long double> v;     // row-major n x n, diagonal unused
  std::vector<int> sig;           // sign products
  long double at(int i, int j) const { return v[static_cast<std::size_t>(i * n + j)]; }
  int s(int i, int j) const { return sig[static_cast<std::size_t>(i * n + j)]; }
};

PairTable pair_table(const ChargeConfiguration& cfg, const PotentialFunction& jay) {
  PairTable t;
  t.n = static_cast<int>(cfg.charges.size());
  t.v.assign(static_cast<std::size_t>(t.n) * static_cast<std::size_t>(t.n), 1.0L);
  t.sig.assign(t.v.size(), 1);
  for (int i = 0; i < t.n; ++i)
    for (int j = i + 1; j < t.n; ++j) {
      const long double v = jay.eval(cfg.charges[static_cast<std::size_t>(i)].z -
                                     cfg.charges[static_cast<std::size_t>(j)].z);
      t.v[static_cast<std::size_t>(i * t.n + j)] = v;
      t.v[static_cast<std::size_t>(j * t.n + i)] = v;
      const int s = cfg.charges[static_cast<std::size_t>(i)].sign *
                    cfg.charges[static_cast<std::size_t>(j)].sign;
      t.sig[static_cast<std::size_t>(i * t.n + j)] = s;
      t.sig[static_cast<std::size_t>(j * t.n + i)] = s;
    }
  return t;
}

long double h_subset_impl(const ChargeConfiguration& cfg, const PairTable& t,
                          std::uint32_t pmask) {
  const int m = cfg.pair_count();
  std::vector<char> removed(static_cast<std::size_t>(t.n), 0);
  long double prod = 1.0L;
  for (int e = 0; e < m; ++e)
    if (pmask >> e & 1u) {
      const int p = cfg.plus_label(e), q = cfg.minus_label(e);
      prod /= t.at(p, q);
      removed[static_cast<std::size_t>(p)] = removed[static_cast<std::size_t>(q)] = 1;
    }
  for (int i = 0; i < t.n; ++i) {
    if (removed[static_cast<std::size_t>(i)]) continue;
    for (int j = i + 1; j < t.n; ++j) {
      if (removed[static_cast<std::size_t>(j)]) continue;
      if (t.s(i, j) > 0)
        prod *= t.at(i, j);
      else
        prod /= t.at(i, j);
    }
  }
  return prod;
}

}  // namespace

double h_subset(const ChargeConfiguration& cfg, const PotentialFunction& jay,
                std::uint32_t pmask) {
  cfg.validate();
  if (cfg.pair_count() > 20) throw std::length_error("h_subset: too many pairs");
  if (pmask >> cfg.pair_count()) throw std::invalid_argument("h_subset: mask out of range");
  return static_cast<double>(h_subset_impl(cfg, pair_table(cfg, jay), pmask));
}

double h_total(const ChargeConfiguration& cfg, const PotentialFunction& jay) {
  cfg.validate();
  if (cfg.pair_count() > 20) throw std::length_error("h_total: too many pairs");
  const PairTable t = pair_table(cfg, jay);
  const std::uint32_t full = (1u << cfg.pair_count()) - 1u;
  long double sum = 0.0L;
  for (std::uint32_t p = 0;; ++p) {
    const long double term = h_subset_impl(cfg, t, p);
    sum += (std::popcount(p) % 2 ? -term : term);
    if (p == full) break;
  }
  return static_cast<double>(sum);
}

double delta_ef(const PotentialFunction& jay, const Dipole& e, const Dipole& f) {
  if (same_point(e.plus, e.minus) || same_point(f.plus, f.minus)) return 0.0;
  if (same_point(e.plus, f.minus) || same_point(e.minus, f.plus) ||
      same_point(e.plus, f.plus) || same_point(e.minus, f.minus))
    throw std::invalid_argument("delta_ef: coincident points across dipoles");
  const long double num =
      static_cast<long double>(jay.eval(e.plus - f.plus)) * jay.eval(e.minus - f.minus);
  const long double den =
      static_cast<long double>(jay.eval(e.plus - f.minus)) * jay.eval(e.minus - f.plus);
  return static_cast<double>(num / den - 1.0L);
}

double a_ef(const Dipole& e, const Dipole& f) {
  if (same_point(e.plus, e.minus) || same_point(f.plus, f.minus)) return 0.0;
  if (same_point(e.plus, f.minus) || same_point(e.minus, f.plus) ||
      same_point(e.plus, f.plus) || same_point(e.minus, f.minus))
    throw std::invalid_argument("a_ef: coincident points across dipoles");
  return parabolic_norm(e.plus - e.minus) * parabolic_norm(f.plus - f.minus) /
         (parabolic_norm(e.plus - f.minus) * parabolic_norm(f.plus - e.minus));
}

std::pair<Dipole, Dipole> random_dipole_pair_condef(std::mt19937_64& rng, double spread) {
  std::uniform_real_distribution<double> ut(-spread * spread, spread * spread);
  std::uniform_real_distribution<double> ux(-spread, spread);
  std::uniform_real_distribution<double> uscale(std::log(1e-4 * spread), std::log(spread));
  for (;;) {
    Dipole e, f;
    e.plus = {ut(rng), ux(rng), ux(rng)};
    e.minus = e.plus + random_offset(rng, std::exp(uscale(rng)));
    f.plus = {ut(rng), ux(rng), ux(rng)};
    f.minus = f.plus + random_offset(rng, std::exp(uscale(rng)));
    const double se = parabolic_norm(e.plus - e.minus);
    const double sf = parabolic_norm(f.plus - f.minus);
    const double c1 = parabolic_norm(e.plus - f.minus);
    const double c2 = parabolic_norm(e.minus - f.plus);
    if (c1 <= 0 || c2 <= 0) continue;
    if (std::min(se, sf) <= std::min(c1, c2)) return {e, f};
  }
}

namespace {

struct CancelContext {
  int m = 0;
  int ell = 0;
  const std::vector<int>* order = nullptr;
  std::uint32_t full = 0;
  std::vector<long double> hp;          // H_P per mask
  std::vector<long double> delta;       // m x m quadrupole ratios minus one
  long double rhs = 0.0L;
  std::size_t terms = 0;

  long double d(int e, int f) const { return delta[static_cast<std::size_t>(e * m + f)]; }

  // partial alternating sum over P away from the forbidden set, P joined to A
  long double h_ab(std::uint32_t amask, std::uint32_t umask) const {
    const std::uint32_t comp = full & ~umask;
    long double sum = 0.0L;
    std::uint32_t p = comp;
    for (;;) {
      const long double term = hp[amask | p];
      sum += (std::popcount(p) % 2 ? -term : term);
      if (p == 0) break;
      p = (p - 1) & comp;
    }
    return sum;
  }

  void walk(int k, std::uint32_t amask, std::uint32_t umask, long double dprod) {
    if (k == ell) {
      rhs += dprod * h_ab(amask, umask);
      ++terms;
      return;
    }
    const int e = (*order)[static_cast<std::size_t>(k)];
    if (umask >> e & 1u) {
      walk(k + 1, amask, umask, dprod);
      return;
    }
    // e joins A; its partner set draws from pairs not yet committed to A
    const std::uint32_t cand = full & ~(amask | (1u << e));
    for (std::uint32_t s = cand; s; s = (s - 1) & cand) {
      long double dp = dprod;
      for (int f = 0; f < m; ++f)
        if (s >> f & 1u) dp *= d(e, f);
      walk(k + 1, amask | (1u << e), umask | (1u << e) | s, dp);
    }
  }
};

}  // namespace

CancellationReport cancellation_identity_check(const ChargeConfiguration& cfg,
                                               const PotentialFunction& jay, int ell,
                                               const std::vector<int>& ordering) {
  cfg.validate();
  const int m = cfg.pair_count();
  if (m > 6) throw std::length_error("cancellation_identity_check: more than 6 pairs");
  if (ell < 0 || ell > m)
    throw std::invalid_argument("cancellation_identity_check: depth outside 0..m");
  if (static_cast<int>(ordering.size()) != m)
    throw std::invalid_argument("cancellation_identity_check: ordering size mismatch");
  std::vector<char> seen(static_cast<std::size_t>(m), 0);
  for (int e : ordering) {
    if (e < 0 || e >= m || seen[static_cast<std::size_t>(e)])
      throw std::invalid_argument("cancellation_identity_check: ordering not a permutation");
    seen[static_cast<std::size_t>(e)] = 1;
  }

  const PairTable t = pair_table(cfg, jay);
  CancelContext ctx;
  ctx.m = m;
  ctx.ell = ell;
  ctx.order = &ordering;
  ctx.full = (1u << m) - 1u;
  ctx.hp.resize(1u << m);
  long double lhs = 0.0L, scale = 0.0L;
  for (std::uint32_t p = 0; p <= ctx.full; ++p) {
    ctx.hp[p] = h_subset_impl(cfg, t, p);
    scale = std::max(scale, std::abs(ctx.hp[p]));
    lhs += (std::popcount(p) % 2 ? -ctx.hp[p] : ctx.hp[p]);
  }
  ctx.delta.assign(static_cast<std::size_t>(m) * static_cast<std::size_t>(m), 0.0L);
  for (int e = 0; e < m; ++e)
    for (int f = 0; f < m; ++f) {
      if (e == f) continue;
      const long double num = t.at(cfg.plus_label(e), cfg.plus_label(f)) *
                              t.at(cfg.minus_label(e), cfg.minus_label(f));
      const long double den = t.at(cfg.plus_label(e), cfg.minus_label(f)) *
                              t.at(cfg.minus_label(e), cfg.plus_label(f));
      ctx.delta[static_cast<std::size_t>(e * m + f)] = num / den - 1.0L;
    }

  ctx.walk(0, 0, 0, 1.0L);

  CancellationReport rep;
  rep.lhs = static_cast<double>(lhs);
  rep.rhs = static_cast<double>(ctx.rhs);
  rep.scale = static_cast<double>(scale);
  rep.rel = scale > 0 ? static_cast<double>(std::abs(lhs - ctx.rhs) / scale)
                      : (lhs == ctx.rhs ? 0.0 : std::numeric_limits<double>::infinity());
  rep.terms = ctx.terms;
  return rep;
}

PairClasses classify_pairs(const ChargeConfiguration& cfg, const DyadicHierarchy& hier) {
  cfg.validate();
  const auto final_pairs = hier.final_pairing();
  auto selected = [&](int lo, int hi) {
    return std::find(final_pairs.begin(), final_pairs.end(), std::array<int, 2>{lo, hi}) !=
           final_pairs.end();
  };
  PairClasses out;
  const int m = cfg.pair_count();
  for (int e = 0; e < m; ++e) {
    const int ep = cfg.plus_label(e), em = cfg.minus_label(e);
    if (!selected(std::min(ep, em), std::max(ep, em))) continue;
    const PointD zep = cfg.charges[static_cast<std::size_t>(ep)].z;
    const PointD zem = cfg.charges[static_cast<std::size_t>(em)].z;
    const double se = parabolic_norm(zep - zem);
    bool bad = false;
    for (int f = 0; f < m && !bad; ++f) {
      if (f == e) continue;
      const PointD zfp = cfg.charges[static_cast<std::size_t>(cfg.plus_label(f))].z;
      const PointD zfm = cfg.charges[static_cast<std::size_t>(cfg.minus_label(f))].z;
      const double cross = std::min(parabolic_norm(zep - zfm), parabolic_norm(zem - zfp));
      bad = cross < std::min(se, parabolic_norm(zfp - zfm));
    }
    (bad ? out.bad : out.good).push_back(e);
  }
  return out;
}

double telescope_expansion(const std::vector<double>& a) {
  if (a.size() > 20) throw std::length_error("telescope_expansion: too many factors");
  const std::uint32_t full = (1u << a.size()) - 1u;
  double sum = 0.0;
  for (std::uint32_t p = 1; p <= full; ++p) {
    double prod = 1.0;
    for (std::size_t i = 0; i < a.size(); ++i)
      if (p >> i & 1u) prod *= a[i] - 1.0;
    sum += prod;
  }
  return sum;
}

}  // namespace wick
