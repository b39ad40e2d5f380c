#include "incrprobe/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "incrprobe/error.hpp"
#include "incrprobe/parameter.hpp"
#include "incrprobe/rng.hpp"

namespace incrprobe::metrics {

void DcConfig::validate() const {
  if (k_top < 1) throw ConfigError("k_top must be >= 1");
  if (epochs < 1 || batch_size < 1) throw ConfigError("probe epochs and batch size must be >= 1");
  if (!(lr > 0.0)) throw ConfigError("probe learning rate must be positive");
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw ConfigError("probe train fraction must lie in (0, 1)");
  }
}

std::vector<std::size_t> top_k_tokens(const ActivationDump& dump, std::size_t k) {
  std::map<std::size_t, std::size_t> counts;
  for (const auto& ex : dump.examples)
    for (std::size_t tok : ex.tokens) ++counts[tok];
  std::vector<std::pair<std::size_t, std::size_t>> ranked(counts.begin(), counts.end());
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < std::min(k, ranked.size()); ++i) out.push_back(ranked[i].first);
  return out;
}

std::vector<ProbeTask> build_probe_tasks(const ActivationDump& dump,
                                         const std::vector<std::size_t>& tokens) {
  std::size_t max_len = 0;
  for (const auto& ex : dump.examples) max_len = std::max(max_len, ex.length());
  std::vector<ProbeTask> tasks;
  for (std::size_t t = 2; t <= max_len; ++t) {
    std::vector<std::size_t> members;
    for (std::size_t e = 0; e < dump.examples.size(); ++e)
      if (dump.examples[e].length() >= t) members.push_back(e);
    for (std::size_t tp = 1; tp < t; ++tp) {
      for (std::size_t tok : tokens) {
        ProbeTask task{t, tp, tok, members, {}};
        task.labels.reserve(members.size());
        for (std::size_t e : members)
          task.labels.push_back(dump.examples[e].tokens[tp - 1] == tok ? 1 : 0);
        tasks.push_back(std::move(task));
      }
    }
  }
  return tasks;
}

std::vector<char> probe_split(std::size_t n_examples, double train_fraction, std::uint64_t seed) {
  std::vector<std::size_t> order(n_examples);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  rng.shuffle(std::span<std::size_t>(order));
  const auto n_train = static_cast<std::size_t>(std::llround(train_fraction * n_examples));
  std::vector<char> is_train(n_examples, 0);
  for (std::size_t i = 0; i < n_train; ++i) is_train[order[i]] = 1;
  return is_train;
}

double LogisticProbe::logit(std::span<const double> x) const {
  double z = bias;
  for (std::size_t i = 0; i < weights.size(); ++i) z += weights[i] * x[i];
  return z;
}

LogisticProbe train_probe(const std::vector<std::span<const double>>& xs,
                          const std::vector<char>& ys, const DcConfig& cfg, std::uint64_t seed) {
  if (xs.empty() || xs.size() != ys.size()) throw DomainError("probe training set is empty");
  const std::size_t dim = xs.front().size();
  const auto n = static_cast<double>(xs.size());
  const auto n_pos = static_cast<double>(std::count(ys.begin(), ys.end(), 1));
  double class_weight[2] = {1.0, 1.0};
  if (cfg.class_weighting && n_pos > 0 && n_pos < n) {
    class_weight[0] = n / (2.0 * (n - n_pos));
    class_weight[1] = n / (2.0 * n_pos);
  }
  Parameter w("probe.weight", Matrix(1, dim));
  Parameter b("probe.bias", Matrix(1, 1));
  Parameter* params[] = {&w, &b};
  const AdamConfig adam{cfg.lr};
  Rng rng(seed);
  std::vector<std::size_t> order(xs.size());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(std::span<std::size_t>(order));
    for (std::size_t begin = 0; begin < order.size(); begin += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), begin + cfg.batch_size);
      const double inv = 1.0 / static_cast<double>(end - begin);
      for (std::size_t k = begin; k < end; ++k) {
        const std::size_t i = order[k];
        double z = b.value[0];
        for (std::size_t d = 0; d < dim; ++d) z += w.value[d] * xs[i][d];
        const double p = 1.0 / (1.0 + std::exp(-z));
        // d/dz of the weighted binary cross-entropy.
        const double g = class_weight[ys[i] ? 1 : 0] * (p - (ys[i] ? 1.0 : 0.0)) * inv;
        for (std::size_t d = 0; d < dim; ++d) w.grad[d] += g * xs[i][d];
        b.grad[0] += g;
      }
      adam_amsgrad_step(params, adam);
    }
  }
  LogisticProbe probe;
  probe.weights.assign(w.value.values().begin(), w.value.values().end());
  probe.bias = b.value[0];
  return probe;
}

std::vector<double> distance_weights(const std::vector<ProbeResult>& probes) {
  double total = 0.0;
  for (const auto& p : probes)
    if (!p.skipped) total += static_cast<double>(p.t - p.t_prime);
  std::vector<double> out(probes.size(), 0.0);
  if (total == 0.0) return out;
  for (std::size_t i = 0; i < probes.size(); ++i)
    if (!probes[i].skipped) out[i] = static_cast<double>(probes[i].t - probes[i].t_prime) / total;
  return out;
}

DcResult dc_accuracy(const ActivationDump& dump, const DcConfig& cfg) {
  cfg.validate();
  if (dump.examples.empty()) throw DomainError("dc_accuracy: empty activation dump");
  const auto tasks = build_probe_tasks(dump, top_k_tokens(dump, cfg.k_top));
  const auto is_train = probe_split(dump.size(), cfg.train_fraction, cfg.seed);
  DcResult result;
  result.probes.resize(tasks.size());
  const long n_tasks = static_cast<long>(tasks.size());
#pragma omp parallel for schedule(dynamic)
  for (long k = 0; k < n_tasks; ++k) {
    const ProbeTask& task = tasks[static_cast<std::size_t>(k)];
    ProbeResult& res = result.probes[static_cast<std::size_t>(k)];
    res.t = task.t;
    res.t_prime = task.t_prime;
    res.token = task.token;
    std::vector<std::span<const double>> train_x, test_x;
    std::vector<char> train_y, test_y;
    for (std::size_t i = 0; i < task.examples.size(); ++i) {
      const std::size_t e = task.examples[i];
      const std::span<const double> x = dump.examples[e].hidden[task.t - 1];
      if (is_train[e]) {
        train_x.push_back(x);
        train_y.push_back(task.labels[i]);
      } else {
        test_x.push_back(x);
        test_y.push_back(task.labels[i]);
      }
    }
    res.n_train = train_x.size();
    res.n_test = test_x.size();
    const auto positives = std::count(task.labels.begin(), task.labels.end(), 1);
    const auto train_pos = std::count(train_y.begin(), train_y.end(), 1);
    if (positives == 0 || positives == static_cast<long>(task.labels.size())) {
      res.skipped = true;
      res.skip_reason = "single-class dataset";
      continue;
    }
    if (train_pos == 0 || train_pos == static_cast<long>(train_y.size()) || test_x.empty()) {
      res.skipped = true;
      res.skip_reason = "single-class training split";
      continue;
    }
    const LogisticProbe probe =
        train_probe(train_x, train_y, cfg, splitmix64(cfg.seed ^ splitmix64(static_cast<std::uint64_t>(k) + 1)));
    std::size_t correct = 0;
    for (std::size_t i = 0; i < test_x.size(); ++i)
      if (probe.predict(test_x[i]) == (test_y[i] != 0)) ++correct;
    res.accuracy = static_cast<double>(correct) / static_cast<double>(test_x.size());
  }
  std::size_t used = 0;
  double sum = 0.0;
  for (const auto& p : result.probes) {
    if (p.skipped) {
      ++result.n_skipped;
      continue;
    }
    sum += p.accuracy;
    ++used;
  }
  if (used == 0) throw DomainError("dc_accuracy: no probe had both classes present");
  result.dc_acc = sum / static_cast<double>(used);
  const auto weights = distance_weights(result.probes);
  for (std::size_t i = 0; i < result.probes.size(); ++i)
    result.wdc_acc += weights[i] * result.probes[i].accuracy;
  return result;
}

std::vector<IntegrationTerm> integration_terms(const Seq2Seq& model, const EncoderTrace& trace) {
  const std::size_t hd = model.config().hidden_dim;
  const std::vector<double> zero_h(hd, 0.0);
  const std::vector<double> zero_x(model.config().embedding_dim, 0.0);
  std::vector<IntegrationTerm> out;
  for (std::size_t t = 2; t <= trace.length(); ++t) {
    const auto& h = trace.hidden[t - 1];
    const LstmState only_input = model.encoder_cell(model.input_embedding(trace.tokens[t - 1]),
                                                    zero_h, zero_h);
    const LstmState only_history =
        model.encoder_cell(zero_x, trace.hidden[t - 2], trace.cell[t - 2]);
    IntegrationTerm term;
    term.t = t;
    term.delta_x = l2_distance(h, only_input.h);
    term.delta_h = l2_distance(h, only_history.h);
    term.excluded = term.delta_h < kIntegrationEps;
    term.ratio = term.excluded ? 0.0 : term.delta_x / term.delta_h;
    out.push_back(term);
  }
  return out;
}

bool example_integration_ratio(const std::vector<IntegrationTerm>& terms, std::size_t length,
                               bool weighted, double& out) {
  double num = 0.0, den = 0.0;
  const auto T = static_cast<double>(length);
  for (const auto& term : terms) {
    if (term.excluded) continue;
    const double t = static_cast<double>(term.t);
    const double alpha = weighted ? (T - t) / t : 1.0;
    num += alpha * term.ratio;
    den += alpha;
  }
  if (den == 0.0) return false;
  out = num / den;
  return true;
}

IntegrationResult integration_ratio(const Seq2Seq& model, const ActivationDump& dump,
                                    bool weighted) {
  const std::size_t n = dump.examples.size();
  std::vector<double> scores(n, 0.0);
  std::vector<char> used(n, 0);
  std::vector<std::size_t> n_terms(n, 0), n_excluded(n, 0);
  const long count = static_cast<long>(n);
#pragma omp parallel for schedule(dynamic, 32)
  for (long k = 0; k < count; ++k) {
    const auto e = static_cast<std::size_t>(k);
    const auto& trace = dump.examples[e];
    if (trace.length() < 2) continue;
    const auto terms = integration_terms(model, trace);
    n_terms[e] = terms.size();
    n_excluded[e] = static_cast<std::size_t>(
        std::count_if(terms.begin(), terms.end(), [](const auto& x) { return x.excluded; }));
    used[e] = example_integration_ratio(terms, trace.length(), weighted, scores[e]) ? 1 : 0;
  }
  IntegrationResult res;
  double sum = 0.0;
  for (std::size_t e = 0; e < n; ++e) {
    res.terms += n_terms[e];
    res.excluded_terms += n_excluded[e];
    if (!used[e]) continue;
    sum += scores[e];
    ++res.examples_used;
  }
  if (res.terms > 0 && res.terms == res.excluded_terms) {
    throw DomainError("integration ratio: degenerate recurrence (every delta_h below eps)");
  }
  if (res.examples_used == 0) {
    throw DomainError("integration ratio: no sequence contributes (need T >= 2" +
                      std::string(weighted ? ", T >= 3 for the weighted form)" : ")"));
  }
  res.value = sum / static_cast<double>(res.examples_used);
  return res;
}

std::vector<std::pair<std::size_t, double>> integration_trace(const Seq2Seq& model,
                                                              const EncoderTrace& trace) {
  if (trace.length() < 2) throw DomainError("integration trace needs T >= 2");
  const auto terms = integration_terms(model, trace);
  if (std::all_of(terms.begin(), terms.end(), [](const auto& x) { return x.excluded; })) {
    throw DomainError("integration trace: degenerate recurrence");
  }
  std::vector<std::pair<std::size_t, double>> out;
  for (const auto& term : terms)
    if (!term.excluded) out.emplace_back(term.t, term.ratio);
  return out;
}

void RepSimConfig::validate() const {
  if (order < 1) throw ConfigError("representational similarity order must be >= 1");
  if (n_hist < 1) throw ConfigError("number of histories must be >= 1");
}

kernels::Distance parse_distance(const std::string& name) {
  if (name == "euclidean") return kernels::Distance::euclidean;
  if (name == "cosine" || name == "cosine_distance") return kernels::Distance::cosine;
  throw ConfigError("unknown distance '" + name + "' (expected euclidean or cosine)");
}

std::string to_string(kernels::Distance d) {
  return d == kernels::Distance::euclidean ? "euclidean" : "cosine";
}

std::vector<HistoryGroup> collect_histories(const ActivationDump& dump, const RepSimConfig& cfg) {
  cfg.validate();
  std::map<std::vector<std::size_t>, std::vector<std::pair<std::size_t, std::size_t>>> found;
  for (std::size_t e = 0; e < dump.examples.size(); ++e) {
    const auto& tokens = dump.examples[e].tokens;
    // History occupies [s, s + order); the state after one more token is
    // h at 0-based index s + order.
    for (std::size_t s = 0; s + cfg.order < tokens.size(); ++s) {
      std::vector<std::size_t> hist(tokens.begin() + static_cast<long>(s),
                                    tokens.begin() + static_cast<long>(s + cfg.order));
      found[hist].emplace_back(e, s + cfg.order);
    }
  }
  std::vector<std::pair<std::vector<std::size_t>, std::size_t>> ranked;
  for (const auto& [hist, occ] : found)
    if (occ.size() >= 2) ranked.emplace_back(hist, occ.size());
  if (ranked.empty()) {
    throw DomainError("representational similarity: no history of order " +
                      std::to_string(cfg.order) + " occurs twice with a following token");
  }
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  ranked.resize(std::min(ranked.size(), cfg.n_hist));
  std::vector<HistoryGroup> out;
  for (const auto& [hist, count] : ranked) {
    const auto& occ = found.at(hist);
    HistoryGroup g;
    g.history = hist;
    g.states = Matrix(occ.size(), dump.hidden_dim);
    for (std::size_t i = 0; i < occ.size(); ++i) {
      const auto& h = dump.examples[occ[i].first].hidden[occ[i].second];
      std::copy(h.begin(), h.end(), g.states.row(i).begin());
    }
    out.push_back(std::move(g));
  }
  return out;
}

RepSimResult repr_similarity(const ActivationDump& dump, const RepSimConfig& cfg) {
  RepSimResult res;
  res.groups = collect_histories(dump, cfg);
  double sum = 0.0;
  for (auto& g : res.groups) {
    g.mean_distance = kernels::omp::mean_pairwise_distance(g.states, cfg.distance);
    sum += g.mean_distance;
  }
  res.value = sum / static_cast<double>(res.groups.size());
  return res;
}

const std::vector<std::string>& MetricReport::metric_names() {
  static const std::vector<std::string> names = {"seq_acc",   "dc_acc",
                                                 "wdc_acc",   "int_ratio",
                                                 "weighted_int_ratio", "repr_sim"};
  return names;
}

double MetricReport::get(const std::string& metric) const {
  if (metric == "seq_acc") return seq_acc;
  if (metric == "dc_acc") return dc_acc;
  if (metric == "wdc_acc") return wdc_acc;
  if (metric == "int_ratio") return int_ratio;
  if (metric == "weighted_int_ratio") return weighted_int_ratio;
  if (metric == "repr_sim") return repr_sim;
  throw ConfigError("unknown metric '" + metric + "'");
}

void MetricReport::set(const std::string& metric, double value) {
  if (metric == "seq_acc") seq_acc = value;
  else if (metric == "dc_acc") dc_acc = value;
  else if (metric == "wdc_acc") wdc_acc = value;
  else if (metric == "int_ratio") int_ratio = value;
  else if (metric == "weighted_int_ratio") weighted_int_ratio = value;
  else if (metric == "repr_sim") repr_sim = value;
  else throw ConfigError("unknown metric '" + metric + "'");
}

void MetricReport::validate() const {
  for (const auto& name : metric_names())
    if (!std::isfinite(get(name))) throw NumericError("metric " + name + " is not finite");
  for (double v : {seq_acc, dc_acc, wdc_acc})
    if (v < 0.0 || v > 1.0) throw NumericError("accuracy metric outside [0, 1]");
}

void to_json(nlohmann::json& j, const MetricReport& r) {
  j = nlohmann::json{{"arch", r.arch}, {"seed", r.seed}};
  for (const auto& name : MetricReport::metric_names()) j[name] = r.get(name);
}

void from_json(const nlohmann::json& j, MetricReport& r) {
  r.arch = j.at("arch").get<std::string>();
  r.seed = j.at("seed").get<std::uint64_t>();
  for (const auto& name : MetricReport::metric_names()) r.set(name, j.at(name).get<double>());
}

}  // namespace incrprobe::metrics
