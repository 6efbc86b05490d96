#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "cq/graph.hpp"
#include "cq/rng.hpp"
#include "cq/tensor.hpp"

namespace cq {

struct GradCheckResult {
  std::string name;
  std::size_t probes = 0;        // finite-difference evaluations performed
  double max_rel_err = 0.0;      // worst |analytic - central| / max(|a|,|fd|,1e-3)
  double tolerance = 1e-4;
  bool pass = false;
};

// Rebuilds the graph from scratch for every probe: the builder receives the
// recording graph and one node per input tensor and returns the scalar loss.
using GraphBuilderD =
    std::function<Graph<double>::NodeId(Graph<double>&, const std::vector<Graph<double>::NodeId>&)>;

// Verifies reverse-mode gradients of `build` against central finite
// differences in 64-bit arithmetic. Every element of every input is probed
// unless `max_probes_per_input` caps it, in which case probes are spread
// evenly (or sampled through `sampler` when given).
GradCheckResult check_gradients(const std::string& name, std::vector<TensorD> inputs,
                                const GraphBuilderD& build, double eps = 1e-5,
                                double tolerance = 1e-4, std::size_t max_probes_per_input = 0,
                                Rng* sampler = nullptr);

// The named checks behind the `gradcheck` CLI command: one entry per tensor
// operation plus the composed losses and reduced end-to-end networks.
std::vector<GradCheckResult> run_gradcheck_suite(std::uint64_t seed);

}  // namespace cq
