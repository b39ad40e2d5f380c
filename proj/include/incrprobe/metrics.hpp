#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "incrprobe/activations.hpp"
#include "incrprobe/kernels.hpp"
#include "incrprobe/model.hpp"

namespace incrprobe::metrics {

// ---------------------------------------------------------------------------
// Diagnostic classifier accuracy
// ---------------------------------------------------------------------------

struct DcConfig {
  std::size_t k_top = 5;
  bool weighted = true;
  std::size_t epochs = 50;
  double lr = 0.01;
  std::size_t batch_size = 64;
  bool class_weighting = true;
  double train_fraction = 0.8;
  std::uint64_t seed = 0;

  void validate() const;
};

/// The k most frequent input tokens over all positions of the dump; ties go
/// to the smaller token index.
std::vector<std::size_t> top_k_tokens(const ActivationDump& dump, std::size_t k);

/// Binary probing task: from h_t, did `token` occur at position t_prime?
/// Positions are 1-based. `examples` lists the dump examples of length ≥ t.
struct ProbeTask {
  std::size_t t = 0;
  std::size_t t_prime = 0;
  std::size_t token = 0;
  std::vector<std::size_t> examples;
  std::vector<char> labels;
};

/// All tasks for t ≥ 2, 1 ≤ t′ < t and each top-k token, in (t, t′, token)
/// order.
std::vector<ProbeTask> build_probe_tasks(const ActivationDump& dump,
                                         const std::vector<std::size_t>& tokens);

/// Example-level train/test assignment (1 = train) shared by every probe.
std::vector<char> probe_split(std::size_t n_examples, double train_fraction, std::uint64_t seed);

/// Logistic probe weights (hidden) followed by the bias.
struct LogisticProbe {
  std::vector<double> weights;
  double bias = 0.0;

  double logit(std::span<const double> x) const;
  bool predict(std::span<const double> x) const { return logit(x) > 0.0; }
};

/// Trains a class-weighted logistic regression with minibatch AMSGrad.
LogisticProbe train_probe(const std::vector<std::span<const double>>& xs,
                          const std::vector<char>& ys, const DcConfig& cfg, std::uint64_t seed);

struct ProbeResult {
  std::size_t t = 0;
  std::size_t t_prime = 0;
  std::size_t token = 0;
  std::size_t n_train = 0;
  std::size_t n_test = 0;
  double accuracy = 0.0;
  bool skipped = false;
  std::string skip_reason;
};

struct DcResult {
  double dc_acc = 0.0;
  double wdc_acc = 0.0;
  std::vector<ProbeResult> probes;
  std::size_t n_skipped = 0;
};

/// Distance weights (t − t′)/Σ(t − t′) over the given (non-skipped) probes.
std::vector<double> distance_weights(const std::vector<ProbeResult>& probes);

DcResult dc_accuracy(const ActivationDump& dump, const DcConfig& cfg);

// ---------------------------------------------------------------------------
// Integration ratio
// ---------------------------------------------------------------------------

inline constexpr double kIntegrationEps = 1e-12;

struct IntegrationTerm {
  std::size_t t = 0;  // 1-based, t ≥ 2
  double delta_x = 0.0;
  double delta_h = 0.0;
  double ratio = 0.0;
  bool excluded = false;  // delta_h < eps
};

/// Δx_t = ‖h_t − f(x_t, 0, 0)‖ and Δh_t = ‖h_t − f(0, h_{t−1}, c_{t−1})‖ for
/// t = 2..T, where f is one encoder step (cell state zeroed together with h
/// in the first, zero input embedding in the second).
std::vector<IntegrationTerm> integration_terms(const Seq2Seq& model, const EncoderTrace& trace);

/// Per-example score from its terms: plain mean of included ratios, or the
/// (T−t)/t weighted mean. Returns false when nothing contributes.
bool example_integration_ratio(const std::vector<IntegrationTerm>& terms, std::size_t length,
                               bool weighted, double& out);

struct IntegrationResult {
  double value = 0.0;
  std::size_t examples_used = 0;
  std::size_t terms = 0;
  std::size_t excluded_terms = 0;
};

/// Corpus integration ratio: mean of per-example scores over sequences with
/// T ≥ 2. Throws DomainError("degenerate recurrence") when every term is
/// excluded.
IntegrationResult integration_ratio(const Seq2Seq& model, const ActivationDump& dump,
                                    bool weighted);

/// (t, Δx_t/Δh_t) for t = 2..T, excluded terms omitted.
std::vector<std::pair<std::size_t, double>> integration_trace(const Seq2Seq& model,
                                                              const EncoderTrace& trace);

// ---------------------------------------------------------------------------
// Representational similarity
// ---------------------------------------------------------------------------

struct RepSimConfig {
  std::size_t order = 2;
  std::size_t n_hist = 5;
  kernels::Distance distance = kernels::Distance::euclidean;

  void validate() const;
};

kernels::Distance parse_distance(const std::string& name);
std::string to_string(kernels::Distance d);

struct HistoryGroup {
  std::vector<std::size_t> history;
  Matrix states;  // one row per collected h_{t+1}
  double mean_distance = 0.0;
};

/// Collected states for the n_hist most frequent histories of length
/// `order`. Only occurrences followed by at least one more token count.
std::vector<HistoryGroup> collect_histories(const ActivationDump& dump, const RepSimConfig& cfg);

struct RepSimResult {
  double value = 0.0;
  std::vector<HistoryGroup> groups;
};

RepSimResult repr_similarity(const ActivationDump& dump, const RepSimConfig& cfg);

// ---------------------------------------------------------------------------

/// Named metric values of one trained model.
struct MetricReport {
  std::string arch;
  std::uint64_t seed = 0;
  double seq_acc = 0.0;
  double dc_acc = 0.0;
  double wdc_acc = 0.0;
  double int_ratio = 0.0;
  double weighted_int_ratio = 0.0;
  double repr_sim = 0.0;

  static const std::vector<std::string>& metric_names();
  double get(const std::string& metric) const;
  void set(const std::string& metric, double value);
  void validate() const;
};

void to_json(nlohmann::json& j, const MetricReport& r);
void from_json(const nlohmann::json& j, MetricReport& r);

}  // namespace incrprobe::metrics
