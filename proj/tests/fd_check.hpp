#pragma once

// Central finite-difference oracle for gradient tests. Rebuilds the graph
// per probe so it stays independent of the backward pass it checks.

#include <cmath>
#include <functional>
#include <vector>

#include "flowface/autodiff.hpp"

namespace fdcheck {

struct Report {
  double max_rel = 0.0;
  int checked = 0;
  bool ok(double tol) const { return checked > 0 && max_rel <= tol; }
};

// build() must construct a fresh scalar graph from the leaves' current
// values. Probes up to max_coords coordinates per leaf.
template <typename T, typename BuildFn>
Report fd_check(std::vector<flowface::ad::Value<T>> leaves, BuildFn build,
                double h = 1e-5, int max_coords = 24,
                double abs_floor = 1e-9, flowface::Rng* rng = nullptr) {
  Report rep;
  // a leaf may be absent from this graph; clear stale grads first
  for (auto& l : leaves) l.zero_grad();
  flowface::ad::Value<T> root = build();
  root.backward();

  std::vector<flowface::Tensor<T>> grads;
  grads.reserve(leaves.size());
  for (auto& l : leaves) grads.push_back(l.grad());

  flowface::Rng fallback(1234);
  flowface::Rng& r = rng ? *rng : fallback;

  for (size_t li = 0; li < leaves.size(); ++li) {
    auto& leaf = leaves[li];
    const size_t n = leaf.val().numel();
    std::vector<size_t> coords;
    if (int(n) <= max_coords) {
      for (size_t i = 0; i < n; ++i) coords.push_back(i);
    } else {
      for (int i = 0; i < max_coords; ++i) coords.push_back(size_t(r.uniform_int(int(n))));
    }
    for (size_t ci : coords) {
      T& x = leaf.mutable_val()[ci];
      const T orig = x;
      x = orig + T(h);
      const double fp = double(build().val()[0]);
      x = orig - T(h);
      const double fm = double(build().val()[0]);
      x = orig;
      const double fd = (fp - fm) / (2.0 * h);
      const double ad = double(grads[li][ci]);
      const double denom = std::max(std::abs(ad), std::abs(fd));
      const double err = std::abs(ad - fd);
      const double rel = (err <= abs_floor) ? 0.0 : err / std::max(denom, 1e-300);
      rep.max_rel = std::max(rep.max_rel, rel);
      ++rep.checked;
    }
  }
  return rep;
}

}  // namespace fdcheck
