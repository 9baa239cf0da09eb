#pragma once

// Plain-text artifacts: sample CSV, stage statistics as JSON lines, data and
// profile CSV.

#include "mtmcmc/diagnostics.hpp"
#include "mtmcmc/tmcmc_engine.hpp"

#include <nlohmann/json.hpp>

#include <cstdio>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

namespace mtmcmc {

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// 17 significant digits ("%.17g"); non-finite values are written as inf,
/// -inf or nan.
inline std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

using Json = nlohmann::ordered_json;

inline Json vector_json(const Eigen::Ref<const Vector>& v) { return Json(std::vector<double>(v.data(), v.data() + v.size())); }

inline Json matrix_json(const Eigen::Ref<const Matrix>& m) {
  Json rows = Json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) rows.push_back(vector_json(m.row(i).transpose()));
  return rows;
}

/// Samples as CSV with header theta_0,...,theta_{d-1},loglike.
inline void write_samples_csv(std::ostream& os, const Eigen::Ref<const Matrix>& samples,
                              const Eigen::Ref<const Vector>& loglikes) {
  require_dims(static_cast<std::size_t>(loglikes.size()), static_cast<std::size_t>(samples.rows()), "samples csv");
  for (Eigen::Index j = 0; j < samples.cols(); ++j) os << "theta_" << j << ',';
  os << "loglike\n";
  for (Eigen::Index i = 0; i < samples.rows(); ++i) {
    for (Eigen::Index j = 0; j < samples.cols(); ++j) os << format_double(samples(i, j)) << ',';
    os << format_double(loglikes[i]) << '\n';
  }
}

inline Json to_json(const StageStats& s) {
  Json corrections = Json::object();
  for (std::size_t k = 0; k < kCorrectionStatusCount; ++k) {
    corrections[std::string(to_string(static_cast<CorrectionStatus>(k)))] = s.correction_counts[k];
  }
  return Json{{"stage", s.stage},
              {"zeta", s.zeta},
              {"zeta_prev", s.zeta_prev},
              {"log_s", s.log_s},
              {"weight_cov", s.weight_cov},
              {"acceptance_rate", s.acceptance_rate},
              {"epsilon", s.epsilon_used},
              {"corrections", corrections},
              {"corrected_fraction", s.corrected_fraction()},
              {"downgraded", s.downgraded},
              {"proposals", s.proposals},
              {"model_evaluations", s.model_evaluations},
              {"unique_resampled", s.unique_resampled},
              {"sample_cov", matrix_json(s.sample_cov)}};
}

inline void write_stages_jsonl(std::ostream& os, const std::vector<StageStats>& stages) {
  for (const auto& s : stages) os << to_json(s).dump() << '\n';
}

inline void write_data_csv(std::ostream& os, const DataSet& data) {
  os << "t,d\n";
  for (Eigen::Index i = 0; i < data.inputs().size(); ++i) {
    os << format_double(data.inputs()[i]) << ',' << format_double(data.observations()[i]) << '\n';
  }
}

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream ss(line);
  while (std::getline(ss, cur, ',')) out.push_back(cur);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline double parse_double(const std::string& s, std::size_t line_no) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw IoError("line " + std::to_string(line_no) + ": not a number: '" + s + "'");
  }
}

}  // namespace detail

/// Reads a `t,d` CSV (header required).
inline DataSet read_data_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw IoError("data csv: empty input");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "t,d") throw IoError("data csv: expected header 't,d'");
  std::vector<double> t, d;
  std::size_t line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto cols = detail::split_csv_line(line);
    if (cols.size() != 2) throw IoError("data csv line " + std::to_string(line_no) + ": expected 2 columns");
    t.push_back(detail::parse_double(cols[0], line_no));
    d.push_back(detail::parse_double(cols[1], line_no));
  }
  return DataSet(Eigen::Map<Vector>(t.data(), static_cast<Eigen::Index>(t.size())),
                 Eigen::Map<Vector>(d.data(), static_cast<Eigen::Index>(d.size())));
}

inline DataSet read_data_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open " + path);
  return read_data_csv(f);
}

/// Reads a samples CSV written by write_samples_csv.
inline std::pair<Matrix, Vector> read_samples_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw IoError("samples csv: empty input");
  const auto header = detail::split_csv_line(line);
  if (header.size() < 2 || header.back() != "loglike") throw IoError("samples csv: bad header");
  const std::size_t d = header.size() - 1;
  std::vector<double> vals;
  std::vector<double> ll;
  std::size_t line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto cols = detail::split_csv_line(line);
    if (cols.size() != d + 1) throw IoError("samples csv line " + std::to_string(line_no) + ": wrong column count");
    for (std::size_t j = 0; j < d; ++j) vals.push_back(detail::parse_double(cols[j], line_no));
    ll.push_back(detail::parse_double(cols[d], line_no));
  }
  const auto n = static_cast<Eigen::Index>(ll.size());
  Matrix m = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
      vals.data(), n, static_cast<Eigen::Index>(d));
  return {m, Eigen::Map<Vector>(ll.data(), n)};
}

inline void write_profile_csv(std::ostream& os, const std::vector<ProfilePoint>& pts) {
  os << "theta_i,PL\n";
  for (const auto& p : pts) os << format_double(p.value) << ',' << format_double(p.profile) << '\n';
}

/// 64-bit FNV-1a hash, hex encoded.
inline std::string fnv1a_hex(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace mtmcmc
