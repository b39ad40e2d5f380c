#include "incrprobe/analysis.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

#include "incrprobe/error.hpp"

namespace incrprobe::analysis {

namespace {

std::string format_double(double v) {
  if (std::isnan(v)) return "NA";
  std::ostringstream s;
  s.precision(17);
  s << v;
  return s.str();
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  return out;
}

}  // namespace

double pearson(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size()) throw DomainError("pearson: inputs differ in length");
  if (xs.size() < 2) throw DomainError("pearson: need at least two points");
  const auto n = static_cast<double>(xs.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    mx += xs[i];
    my += ys[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double dx = xs[i] - mx, dy = ys[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) throw DomainError("pearson: correlation undefined for constant input");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

CorrelationMatrix correlation_matrix(const std::vector<metrics::MetricReport>& reports,
                                     const std::vector<std::string>& names) {
  if (reports.size() < 2) throw DomainError("correlation matrix needs at least two reports");
  CorrelationMatrix m;
  m.names = names;
  m.samples = reports.size();
  const std::size_t k = names.size();
  m.rho = Matrix(k, k, std::numeric_limits<double>::quiet_NaN());
  m.defined.assign(k * k, 0);
  std::vector<std::vector<double>> columns(k);
  for (std::size_t i = 0; i < k; ++i)
    for (const auto& r : reports) columns[i].push_back(r.get(names[i]));
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = i; j < k; ++j) {
      try {
        const double rho = i == j ? (pearson(columns[i], columns[i]), 1.0)
                                  : pearson(columns[i], columns[j]);
        m.rho(i, j) = m.rho(j, i) = rho;
        m.defined[i * k + j] = m.defined[j * k + i] = 1;
      } catch (const DomainError&) {
        // Left undefined (NaN).
      }
    }
  }
  return m;
}

std::size_t majority_vote_index(const std::vector<scan::Tokens>& decodings) {
  if (decodings.empty()) throw DomainError("majority vote over no decodings");
  std::size_t best = 0, best_count = 0;
  for (std::size_t i = 0; i < decodings.size(); ++i) {
    const auto count = static_cast<std::size_t>(
        std::count(decodings.begin(), decodings.end(), decodings[i]));
    if (count > best_count) {
      best = i;
      best_count = count;
    }
  }
  return best;
}

scan::Tokens majority_vote(const std::vector<scan::Tokens>& decodings) {
  return decodings[majority_vote_index(decodings)];
}

TraceRecord summarize_traces(const std::string& arch, const scan::Tokens& input,
                             const std::vector<std::vector<std::pair<std::size_t, double>>>& traces) {
  TraceRecord rec;
  rec.arch = arch;
  rec.input = input;
  if (traces.empty()) return rec;
  // Only timesteps present in every seed's trace are summarized.
  std::map<std::size_t, std::vector<double>> by_t;
  for (const auto& tr : traces)
    for (const auto& [t, ratio] : tr) by_t[t].push_back(ratio);
  for (const auto& [t, values] : by_t) {
    if (values.size() != traces.size()) continue;
    double mean = 0.0;
    for (double v : values) mean += v;
    mean /= static_cast<double>(values.size());
    double var = 0.0;
    for (double v : values) var += (v - mean) * (v - mean);
    rec.positions.push_back(t);
    rec.mean.push_back(mean);
    rec.stddev.push_back(std::sqrt(var / static_cast<double>(values.size())));
  }
  for (const auto& tr : traces) {
    std::vector<double> values;
    for (const auto& p : tr) values.push_back(p.second);
    rec.per_seed.push_back(std::move(values));
  }
  return rec;
}

void write_correlations_csv(const CorrelationMatrix& m, const std::filesystem::path& path) {
  auto out = open_out(path);
  out << "metric";
  for (const auto& n : m.names) out << ',' << n;
  out << '\n';
  for (std::size_t i = 0; i < m.names.size(); ++i) {
    out << m.names[i];
    for (std::size_t j = 0; j < m.names.size(); ++j) out << ',' << format_double(m.rho(i, j));
    out << '\n';
  }
}

void emit_report(const std::vector<metrics::MetricReport>& reports,
                 const CorrelationMatrix& matrix, const std::vector<TraceRecord>& traces,
                 const std::filesystem::path& out_dir) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());
  {
    auto out = open_out(out_dir / "metrics.csv");
    out << "arch,seed,metric,value\n";
    for (const auto& r : reports)
      for (const auto& name : metrics::MetricReport::metric_names())
        out << r.arch << ',' << r.seed << ',' << name << ',' << format_double(r.get(name)) << '\n';
  }
  write_correlations_csv(matrix, out_dir / "correlations.csv");
  std::set<std::string> archs;
  for (const auto& r : reports) archs.insert(r.arch);
  for (const auto& arch : archs) {
    std::vector<metrics::MetricReport> subset;
    for (const auto& r : reports)
      if (r.arch == arch) subset.push_back(r);
    if (subset.size() < 2) continue;
    write_correlations_csv(correlation_matrix(subset, matrix.names),
                           out_dir / ("correlations_" + arch + ".csv"));
  }
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& t : traces) {
    arr.push_back({{"input", scan::join_words(t.input)},
                   {"tokens", t.input},
                   {"arch", t.arch},
                   {"positions", t.positions},
                   {"mean", t.mean},
                   {"stddev", t.stddev},
                   {"per_seed", t.per_seed},
                   {"majority_decoding", scan::join_words(t.majority_decoding)},
                   {"target", scan::join_words(t.target)}});
  }
  auto out = open_out(out_dir / "traces.json");
  out << arr.dump(2) << '\n';
}

std::vector<metrics::MetricReport> read_metrics_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != "arch,seed,metric,value") {
    throw ParseError(path.string() + ": unexpected header");
  }
  std::vector<metrics::MetricReport> out;
  std::map<std::pair<std::string, std::uint64_t>, std::size_t> index;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string f;
    while (std::getline(ss, f, ',')) fields.push_back(f);
    if (fields.size() != 4) {
      throw ParseError(path.string() + ": line " + std::to_string(line_no) + ": expected 4 fields");
    }
    try {
      const auto key = std::make_pair(fields[0], static_cast<std::uint64_t>(std::stoull(fields[1])));
      auto it = index.find(key);
      if (it == index.end()) {
        it = index.emplace(key, out.size()).first;
        metrics::MetricReport r;
        r.arch = key.first;
        r.seed = key.second;
        out.push_back(r);
      }
      const double value =
          fields[3] == "NA" ? std::numeric_limits<double>::quiet_NaN() : std::stod(fields[3]);
      out[it->second].set(fields[2], value);
    } catch (const std::logic_error& e) {
      throw ParseError(path.string() + ": line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace incrprobe::analysis
