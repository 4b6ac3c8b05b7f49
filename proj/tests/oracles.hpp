#pragma once

// Reference implementations written independently of the library, used to
// check it. Deliberately naive.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <vector>

namespace cimate::oracle {

// Ranks via a stable sort, tied runs get the mean of their positions.
inline std::vector<double> ranks(const std::vector<double>& v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    double total = 0;
    for (std::size_t k = i; k <= j; ++k) total += static_cast<double>(k + 1);
    for (std::size_t k = i; k <= j; ++k) r[order[k]] = total / static_cast<double>(j - i + 1);
    i = j + 1;
  }
  return r;
}

inline double pearson(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  return sxy / std::sqrt(sxx * syy);
}

inline double spearman(const std::vector<double>& x, const std::vector<double>& y) {
  return pearson(ranks(x), ranks(y));
}

inline double mse(const std::vector<double>& p, const std::vector<double>& t) {
  double s = 0;
  for (std::size_t i = 0; i < p.size(); ++i) s += (p[i] - t[i]) * (p[i] - t[i]);
  return s / static_cast<double>(p.size());
}

// Random vector drawn from a small pool of values so ties are frequent.
inline std::vector<double> tied_vector(std::size_t n, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> pool(1, static_cast<int>(std::max<std::size_t>(2, n / 3)));
  std::normal_distribution<double> noise(0.0, 1.0);
  std::bernoulli_distribution use_pool(0.5);
  std::vector<double> v(n);
  for (auto& x : v) x = use_pool(rng) ? pool(rng) : noise(rng);
  return v;
}

}  // namespace cimate::oracle
