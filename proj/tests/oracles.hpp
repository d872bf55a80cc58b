#pragma once

// Independent reference implementations used to cross-check the library.
// Everything here is written against the documented behaviour, not the
// production code, and deliberately uses different algorithms where one
// exists (winding numbers vs crossing counts, pairwise AUC vs rank AUC).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <vector>

namespace oracles {

struct Pt {
  double x, y;
};

inline bool on_segment(double px, double py, const Pt& a, const Pt& b) {
  const double cross = (b.x - a.x) * (py - a.y) - (b.y - a.y) * (px - a.x);
  if (cross != 0.0) return false;
  return px >= std::min(a.x, b.x) && px <= std::max(a.x, b.x) && py >= std::min(a.y, b.y) &&
         py <= std::max(a.y, b.y);
}

// Winding-number point-in-polygon with an exact boundary pre-check;
// boundary points count as inside.
inline bool point_in_polygon(double px, double py, const std::vector<Pt>& poly) {
  const std::size_t n = poly.size();
  for (std::size_t i = 0; i < n; ++i) {
    if (on_segment(px, py, poly[i], poly[(i + 1) % n])) return true;
  }
  double angle = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const Pt& a = poly[i];
    const Pt& b = poly[(i + 1) % n];
    angle += std::atan2((a.x - px) * (b.y - py) - (a.y - py) * (b.x - px),
                        (a.x - px) * (b.x - px) + (a.y - py) * (b.y - py));
  }
  return std::abs(angle) > 1.0;  // ~2*pi inside, ~0 outside
}

// Mann-Whitney AUC by explicit pairwise comparison, ties worth 1/2.
inline double pairwise_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
  double wins = 0.0;
  std::int64_t pairs = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] != 1) continue;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (labels[j] != 0) continue;
      ++pairs;
      if (scores[i] > scores[j]) wins += 1.0;
      else if (scores[i] == scores[j]) wins += 0.5;
    }
  }
  if (pairs == 0) throw std::runtime_error("pairwise_auc needs both classes");
  return wins / static_cast<double>(pairs);
}

// First index holding the maximum, mirroring the documented vote rule.
inline int first_argmax(const std::vector<double>& p) {
  int best = 0;
  for (int c = 1; c < static_cast<int>(p.size()); ++c)
    if (p[c] > p[best]) best = c;
  return best;
}

struct VoteOutcome {
  std::vector<std::int64_t> votes;  // per class 0..3
  int subtype = 0;
  bool tie_break = false;
  bool fallback = false;
};

// Recount of the slide vote: majority over per-patch argmax classes with
// normal excluded; ties resolved by the larger probability mass summed
// over all patches, then by class order; all-normal falls back to the
// largest mean subtype probability.
inline VoteOutcome recount_votes(const std::vector<std::vector<double>>& rows) {
  VoteOutcome out;
  out.votes.assign(4, 0);
  std::vector<double> mass(4, 0.0);
  for (const auto& p : rows) {
    ++out.votes[first_argmax(p)];
    for (int c = 0; c < 4; ++c) mass[c] += p[c];
  }
  std::int64_t top = std::max({out.votes[1], out.votes[2], out.votes[3]});
  if (top == 0) {
    out.fallback = true;
    out.subtype = 1;
    for (int c = 2; c <= 3; ++c)
      if (mass[c] > mass[out.subtype]) out.subtype = c;
    return out;
  }
  std::vector<int> tied;
  for (int c = 1; c <= 3; ++c)
    if (out.votes[c] == top) tied.push_back(c);
  out.subtype = tied[0];
  if (tied.size() > 1) {
    out.tie_break = true;
    for (int c : tied)
      if (mass[c] > mass[out.subtype]) out.subtype = c;
  }
  return out;
}

inline double entropy(const std::vector<double>& p) {
  double h = 0.0;
  for (double v : p)
    if (v > 0.0) h -= v * std::log(v);
  return h;
}

// Random point on the probability simplex via normalized exponentials.
inline std::vector<double> random_simplex(std::mt19937_64& gen, int n) {
  std::exponential_distribution<double> exp1(1.0);
  std::vector<double> p(n);
  double sum = 0.0;
  for (double& v : p) {
    v = exp1(gen);
    sum += v;
  }
  for (double& v : p) v /= sum;
  return p;
}

// Central finite difference of a scalar function of one flat coordinate
// vector, evaluated coordinate by coordinate.
template <typename F>
std::vector<double> central_diff(F&& f, std::vector<double> x, double h) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + h;
    const double up = f(x);
    x[i] = keep - h;
    const double down = f(x);
    x[i] = keep;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

inline double shoelace_area(const std::vector<Pt>& poly) {
  double s = 0.0;
  const std::size_t n = poly.size();
  for (std::size_t i = 0; i < n; ++i) {
    const Pt& a = poly[i];
    const Pt& b = poly[(i + 1) % n];
    s += a.x * b.y - b.x * a.y;
  }
  return std::abs(s) / 2.0;
}

}  // namespace oracles
