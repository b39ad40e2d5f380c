#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "incrprobe/metrics.hpp"
#include "incrprobe/scan.hpp"

namespace incrprobe::analysis {

/// Sample Pearson correlation. Throws DomainError for unequal lengths, fewer
/// than two points, or a constant input.
double pearson(std::span<const double> xs, std::span<const double> ys);

struct CorrelationMatrix {
  std::vector<std::string> names;
  Matrix rho;                 // NaN where undefined
  std::vector<char> defined;  // row-major, names.size()²
  std::size_t samples = 0;

  bool is_defined(std::size_t i, std::size_t j) const { return defined[i * names.size() + j] != 0; }
};

/// Pairwise ρ over all reports pooled (both architectures together).
CorrelationMatrix correlation_matrix(const std::vector<metrics::MetricReport>& reports,
                                     const std::vector<std::string>& names =
                                         metrics::MetricReport::metric_names());

/// Most frequent full sequence; ties go to the candidate that appears first
/// (lowest seed index). Returns the index of the winner in `decodings`.
std::size_t majority_vote_index(const std::vector<scan::Tokens>& decodings);
scan::Tokens majority_vote(const std::vector<scan::Tokens>& decodings);

/// Per-timestep integration ratios of one command for one architecture,
/// summarized over seeds.
struct TraceRecord {
  std::string arch;
  scan::Tokens input;
  std::vector<std::size_t> positions;  // t = 2..T
  std::vector<double> mean;
  std::vector<double> stddev;
  std::vector<std::vector<double>> per_seed;
  scan::Tokens majority_decoding;
  scan::Tokens target;
};

/// Summarizes per-seed traces (all of the same length) into mean and
/// population standard deviation per timestep.
TraceRecord summarize_traces(const std::string& arch, const scan::Tokens& input,
                             const std::vector<std::vector<std::pair<std::size_t, double>>>& traces);

/// Writes metrics.csv (arch,seed,metric,value), correlations.csv (pooled
/// matrix), correlations_<arch>.csv per architecture, and traces.json.
void emit_report(const std::vector<metrics::MetricReport>& reports,
                 const CorrelationMatrix& matrix, const std::vector<TraceRecord>& traces,
                 const std::filesystem::path& out_dir);

std::vector<metrics::MetricReport> read_metrics_csv(const std::filesystem::path& path);
void write_correlations_csv(const CorrelationMatrix& m, const std::filesystem::path& path);

}  // namespace incrprobe::analysis
