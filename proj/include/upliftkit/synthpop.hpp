#pragma once

#include <string>
#include <vector>

#include "upliftkit/dataset.hpp"

namespace upliftkit::synthpop {

/// Generates a synthetic population with hidden truth attached. Bit-identical
/// output for identical specs: every draw comes from a counter-based stream
/// keyed by (seed, customer_id, purpose), so records are independent of
/// generation order.
ExperimentDataset generate(const DgpSpec& spec);

/// Fully populated specs mirroring the three campaign scenarios:
/// "retention" (binary outcome, a sleeping-dogs segment), "reward" (net
/// revenue with a costly generous arm), "threshold" (lower-threshold arm with
/// a small negative average net-revenue gap, about -0.3% relative).
DgpSpec scenario_preset(const std::string& name);

/// Piecewise DGPs label each customer with the segment that drives their
/// effects. Exposed so tests can aggregate by true segment.
int segment_of(double score_feature, std::size_t n_segments);

/// Resolved segment tables (defaults applied) for a piecewise spec.
struct SegmentTables {
  std::vector<double> base;                  // control expected outcome
  std::vector<std::vector<double>> effects;  // [arm-1][segment]
};
SegmentTables resolve_segment_tables(const DgpSpec& spec);

/// Logging propensities for one customer under the configured logging policy.
std::vector<double> logging_propensities(const DgpSpec& spec,
                                         const std::vector<double>& features);

}  // namespace upliftkit::synthpop
