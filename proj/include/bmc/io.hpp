#pragma once

#include "bmc/common.hpp"
#include "bmc/errors.hpp"
#include "bmc/graph.hpp"
#include "bmc/selection.hpp"
#include "bmc/simulate.hpp"
#include "bmc/system.hpp"

#include "json.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <optional>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <vector>

namespace bmc::io {

using Json = nlohmann::ordered_json;

/// Shortest text that reads back to the same double.
inline std::string format_double(double v) {
  if (std::isnan(v)) return "NaN";
  if (std::isinf(v)) return v > 0 ? "Inf" : "-Inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

namespace detail {

inline std::string trim(std::string_view s) {
  std::size_t a = 0, b = s.size();
  while (a < b && (s[a] == ' ' || s[a] == '\t' || s[a] == '\r')) ++a;
  while (b > a && (s[b - 1] == ' ' || s[b - 1] == '\t' || s[b - 1] == '\r')) --b;
  return std::string(s.substr(a, b - a));
}

inline std::string lower(std::string s) {
  for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

inline std::optional<double> parse_number(const std::string& field) {
  const std::string t = trim(field);
  if (t.empty()) return std::nullopt;
  double v = 0.0;
  const char* first = t.data();
  if (*first == '+') ++first;
  const auto res = std::from_chars(first, t.data() + t.size(), v);
  if (res.ec == std::errc() && res.ptr == t.data() + t.size()) return v;
  const std::string l = lower(t);
  if (l == "inf" || l == "+inf" || l == "infinity") return std::numeric_limits<double>::infinity();
  if (l == "-inf" || l == "-infinity") return -std::numeric_limits<double>::infinity();
  if (l == "nan" || l == "na") return std::numeric_limits<double>::quiet_NaN();
  throw InvalidArgument("not a number: '" + t + "'");
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "' for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << text;
  if (!out) throw IoError("write failed for '" + path + "'");
}

}  // namespace detail

struct CsvRow {
  std::vector<std::string> fields;
  std::size_t line = 0;  // 1-based line where the record starts
};

/// RFC 4180 records: quoted fields may contain commas, doubled quotes and
/// line breaks. Blank lines are skipped.
inline std::vector<CsvRow> parse_csv(const std::string& text) {
  std::vector<CsvRow> rows;
  CsvRow cur;
  std::string field;
  std::size_t line = 1;
  cur.line = 1;
  bool quoted = false, field_started = false, after_quote = false;
  auto end_field = [&] {
    cur.fields.push_back(std::move(field));
    field.clear();
    field_started = after_quote = false;
  };
  auto end_record = [&] {
    const bool blank = cur.fields.empty() && !field_started && field.empty();
    if (!blank) {
      end_field();
      rows.push_back(std::move(cur));
    }
    cur = CsvRow{};
    cur.line = line;
  };
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          quoted = false;
          after_quote = true;
        }
      } else {
        if (c == '\n') ++line;
        field += c;
      }
      continue;
    }
    if (c == '"') {
      if (!field.empty() || after_quote) throw ParseError("unexpected quote", line);
      quoted = true;
      field_started = true;
    } else if (c == ',') {
      end_field();
      field_started = true;  // a trailing comma still opens an (empty) field
    } else if (c == '\n' || c == '\r') {
      if (c == '\r' && i + 1 < text.size() && text[i + 1] == '\n') ++i;
      ++line;
      end_record();
    } else {
      if (after_quote && c != ' ' && c != '\t') throw ParseError("text after closing quote", line);
      field += c;
      field_started = true;
    }
  }
  if (quoted) throw ParseError("unterminated quoted field", cur.line);
  ++line;
  end_record();
  return rows;
}

inline std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

/// Dense numeric CSV; NaN or empty cells are missing.
inline ObservedMatrix parse_observed_csv(const std::string& text) {
  const auto rows = parse_csv(text);
  if (rows.empty()) throw ParseError("empty matrix file", 1);
  const std::size_t p = rows.front().fields.size();
  const auto n = static_cast<Index>(rows.size());
  Matrix values(n, static_cast<Index>(p));
  std::vector<unsigned char> flags(static_cast<std::size_t>(n) * p, 0);
  for (Index i = 0; i < n; ++i) {
    const auto& r = rows[static_cast<std::size_t>(i)];
    if (r.fields.size() != p)
      throw ParseError("expected " + std::to_string(p) + " fields, found " + std::to_string(r.fields.size()), r.line);
    for (std::size_t j = 0; j < p; ++j) {
      std::optional<double> v;
      try {
        v = detail::parse_number(r.fields[j]);
      } catch (const InvalidArgument& e) {
        throw ParseError(e.what(), r.line);
      }
      const std::size_t k = static_cast<std::size_t>(i) + static_cast<std::size_t>(n) * j;
      if (v && !std::isnan(*v)) {
        if (!std::isfinite(*v)) throw ParseError("infinite value", r.line);
        values(i, static_cast<Index>(j)) = *v;
        flags[k] = 1;
      } else {
        values(i, static_cast<Index>(j)) = 0.0;
      }
    }
  }
  if (std::find(flags.begin(), flags.end(), 1) == flags.end()) throw ParseError("matrix has no observed entries", 1);
  return ObservedMatrix(std::move(values), ObservationMask::from_flags(n, static_cast<Index>(p), std::move(flags)));
}

inline std::string format_observed_csv(const ObservedMatrix& m) {
  std::string out;
  for (Index i = 0; i < m.rows(); ++i) {
    for (Index j = 0; j < m.cols(); ++j) {
      if (j) out += ',';
      out += m.mask.observed(i, j) ? format_double(m.values(i, j)) : "NaN";
    }
    out += '\n';
  }
  return out;
}

inline std::string format_matrix_csv(const Matrix& m) {
  std::string out;
  for (Index i = 0; i < m.rows(); ++i) {
    for (Index j = 0; j < m.cols(); ++j) {
      if (j) out += ',';
      out += format_double(m(i, j));
    }
    out += '\n';
  }
  return out;
}

/// Numeric table with an optional header row (detected when the first row
/// has a non-numeric cell). Missing cells are rejected.
inline Matrix parse_numeric_csv(const std::string& text) {
  auto rows = parse_csv(text);
  if (rows.empty()) throw ParseError("empty table", 1);
  bool header = false;
  for (const auto& f : rows.front().fields) {
    try {
      detail::parse_number(f);
    } catch (const InvalidArgument&) {
      header = true;
    }
  }
  if (header) rows.erase(rows.begin());
  if (rows.empty()) throw ParseError("table has a header but no data", 1);
  const std::size_t d = rows.front().fields.size();
  Matrix out(static_cast<Index>(rows.size()), static_cast<Index>(d));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].fields.size() != d) throw ParseError("ragged row", rows[i].line);
    for (std::size_t j = 0; j < d; ++j) {
      std::optional<double> v;
      try {
        v = detail::parse_number(rows[i].fields[j]);
      } catch (const InvalidArgument& e) {
        throw ParseError(e.what(), rows[i].line);
      }
      if (!v || !std::isfinite(*v)) throw ParseError("missing or non-finite value", rows[i].line);
      out(static_cast<Index>(i), static_cast<Index>(j)) = *v;
    }
  }
  return out;
}

struct MatrixMarketHeader {
  std::string format;    // coordinate | array
  std::string field;     // real | integer | pattern
  std::string symmetry;  // general | symmetric
};

struct MatrixMarketEntries {
  MatrixMarketHeader header;
  Index rows = 0, cols = 0;
  struct Entry {
    Index row, col;  // zero-based
    double value;
    std::size_t line;
  };
  std::vector<Entry> entries;
};

inline MatrixMarketEntries parse_matrix_market(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  MatrixMarketEntries mm;
  if (!std::getline(in, line)) throw ParseError("empty MatrixMarket file", 1);
  ++lineno;
  {
    std::istringstream hs(line);
    std::string banner, object;
    hs >> banner >> object >> mm.header.format >> mm.header.field >> mm.header.symmetry;
    if (banner != "%%MatrixMarket" || detail::lower(object) != "matrix")
      throw ParseError("missing %%MatrixMarket matrix banner", lineno);
    mm.header.format = detail::lower(mm.header.format);
    mm.header.field = detail::lower(mm.header.field);
    mm.header.symmetry = detail::lower(mm.header.symmetry);
    if (mm.header.format != "coordinate") throw ParseError("only coordinate format is supported", lineno);
    if (mm.header.field != "real" && mm.header.field != "integer" && mm.header.field != "pattern")
      throw ParseError("unsupported field '" + mm.header.field + "'", lineno);
    if (mm.header.symmetry != "general" && mm.header.symmetry != "symmetric")
      throw ParseError("unsupported symmetry '" + mm.header.symmetry + "'", lineno);
  }
  long long nnz = -1;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = detail::trim(line);
    if (t.empty() || t[0] == '%') continue;
    std::istringstream ls(t);
    if (nnz < 0) {
      long long r = 0, c = 0;
      if (!(ls >> r >> c >> nnz) || r < 1 || c < 1 || nnz < 0) throw ParseError("bad size line", lineno);
      mm.rows = static_cast<Index>(r);
      mm.cols = static_cast<Index>(c);
      continue;
    }
    long long i = 0, j = 0;
    double v = 1.0;
    if (!(ls >> i >> j)) throw ParseError("bad entry line", lineno);
    if (mm.header.field != "pattern") {
      std::string vs;
      if (!(ls >> vs)) throw ParseError("missing value", lineno);
      try {
        const auto parsed = detail::parse_number(vs);
        v = parsed.value_or(std::numeric_limits<double>::quiet_NaN());
      } catch (const InvalidArgument& e) {
        throw ParseError(e.what(), lineno);
      }
      if (!std::isfinite(v)) throw ParseError("non-finite value", lineno);
    }
    std::string extra;
    if (ls >> extra) throw ParseError("trailing text on entry line", lineno);
    if (i < 1 || j < 1 || i > mm.rows || j > mm.cols) throw ParseError("index out of range", lineno);
    mm.entries.push_back({static_cast<Index>(i - 1), static_cast<Index>(j - 1), v, lineno});
  }
  if (nnz < 0) throw ParseError("missing size line", lineno);
  if (static_cast<long long>(mm.entries.size()) != nnz)
    throw ParseError("expected " + std::to_string(nnz) + " entries, found " + std::to_string(mm.entries.size()), lineno);
  return mm;
}

/// Coordinate file listing the observed entries (1-based).
inline ObservedMatrix parse_observed_matrix_market(const std::string& text) {
  const auto mm = parse_matrix_market(text);
  if (mm.header.symmetry != "general") throw ParseError("observed matrices must be 'general'", 1);
  if (mm.entries.empty()) throw ParseError("matrix has no observed entries", 1);
  Matrix values = Matrix::Zero(mm.rows, mm.cols);
  std::vector<unsigned char> flags(static_cast<std::size_t>(mm.rows * mm.cols), 0);
  for (const auto& e : mm.entries) {
    const auto k = static_cast<std::size_t>(e.row + mm.rows * e.col);
    if (flags[k]) throw ParseError("duplicate entry (" + std::to_string(e.row + 1) + ", " + std::to_string(e.col + 1) + ")", e.line);
    flags[k] = 1;
    values(e.row, e.col) = e.value;
  }
  return ObservedMatrix(std::move(values), ObservationMask::from_flags(mm.rows, mm.cols, std::move(flags)));
}

inline std::string format_observed_matrix_market(const ObservedMatrix& m) {
  std::string out = "%%MatrixMarket matrix coordinate real general\n";
  out += std::to_string(m.rows()) + " " + std::to_string(m.cols()) + " " + std::to_string(m.mask.observed_count()) + "\n";
  for (Index k : m.mask.observed_indices()) {
    const Index i = k % m.rows(), j = k / m.rows();
    out += std::to_string(i + 1) + " " + std::to_string(j + 1) + " " + format_double(m.values(i, j)) + "\n";
  }
  return out;
}

/// Square coordinate file. 'symmetric' stores each edge once; 'general'
/// must list both orientations with equal weights. Diagonal entries must be zero.
inline WeightedGraph parse_graph_matrix_market(const std::string& text) {
  const auto mm = parse_matrix_market(text);
  if (mm.rows != mm.cols) throw ParseError("graph matrix must be square", 1);
  std::map<std::pair<Index, Index>, std::pair<double, int>> seen;
  for (const auto& e : mm.entries) {
    if (e.row == e.col) {
      if (e.value != 0.0) throw ParseError("self-loop weight must be zero", e.line);
      continue;
    }
    if (e.value < 0.0) throw ParseError("negative weight", e.line);
    const auto key = std::minmax(e.row, e.col);
    auto [it, fresh] = seen.try_emplace(key, e.value, 0);
    if (!fresh && (mm.header.symmetry == "symmetric" || it->second.first != e.value))
      throw ParseError(mm.header.symmetry == "symmetric" ? "duplicate edge" : "asymmetric weights", e.line);
    if (!fresh && it->second.second >= 2) throw ParseError("duplicate edge", e.line);
    it->second.second += 1;
  }
  std::vector<Edge> edges;
  for (const auto& [key, val] : seen) {
    if (mm.header.symmetry == "general" && val.second != 2)
      throw ParseError("general graph file must list both (i,j) and (j,i)", 1);
    if (val.first > 0.0) edges.push_back({key.first, key.second, val.first});
  }
  return WeightedGraph(mm.rows, std::move(edges));
}

inline std::string format_graph_matrix_market(const WeightedGraph& g) {
  std::string out = "%%MatrixMarket matrix coordinate real symmetric\n";
  out += std::to_string(g.vertex_count()) + " " + std::to_string(g.vertex_count()) + " " + std::to_string(g.edge_count()) + "\n";
  for (const auto& e : g.edges())
    out += std::to_string(e.tail + 1) + " " + std::to_string(e.head + 1) + " " + format_double(e.weight) + "\n";
  return out;
}

enum class MatrixFormat { csv_nan, mm_coord };

inline MatrixFormat format_from_path(const std::string& path) {
  const auto dot = path.rfind('.');
  const std::string ext = dot == std::string::npos ? "" : detail::lower(path.substr(dot + 1));
  return ext == "mtx" || ext == "mm" ? MatrixFormat::mm_coord : MatrixFormat::csv_nan;
}

inline ObservedMatrix read_observed_matrix(const std::string& path, MatrixFormat format) {
  const std::string text = detail::read_file(path);
  return format == MatrixFormat::csv_nan ? parse_observed_csv(text) : parse_observed_matrix_market(text);
}

inline ObservedMatrix read_observed_matrix(const std::string& path) { return read_observed_matrix(path, format_from_path(path)); }

inline void write_observed_matrix(const std::string& path, const ObservedMatrix& m, MatrixFormat format) {
  detail::write_file(path, format == MatrixFormat::csv_nan ? format_observed_csv(m) : format_observed_matrix_market(m));
}

inline WeightedGraph read_graph(const std::string& path) { return parse_graph_matrix_market(detail::read_file(path)); }
inline void write_graph(const std::string& path, const WeightedGraph& g) { detail::write_file(path, format_graph_matrix_market(g)); }
inline Matrix read_features(const std::string& path) { return parse_numeric_csv(detail::read_file(path)); }
inline void write_matrix_csv(const std::string& path, const Matrix& m) { detail::write_file(path, format_matrix_csv(m)); }

inline std::string format_trace_csv(const SelectionTrace& trace, bool timing) {
  std::string out = "iteration,gamma_row,gamma_col,value,grad_inf_norm,solves,evaluations";
  out += timing ? ",wall_seconds\n" : "\n";
  for (const auto& r : trace.iterates) {
    out += std::to_string(r.iteration) + "," + format_double(r.gamma.row) + "," + format_double(r.gamma.col) + "," +
           format_double(r.value) + "," + format_double(r.grad_inf_norm) + "," + std::to_string(r.solves) + "," +
           std::to_string(r.evaluations);
    if (timing) out += "," + format_double(r.wall_seconds);
    out += "\n";
  }
  return out;
}

/// Long format: one row per grid cell, row-major over (gamma_row, gamma_col).
inline std::string format_surface_csv(const GridResult& g, const std::string& value_name) {
  std::string out = "i,j,gamma_row,gamma_col," + value_name + "\n";
  for (Index i = 0; i < g.surface.rows(); ++i)
    for (Index j = 0; j < g.surface.cols(); ++j)
      out += std::to_string(i) + "," + std::to_string(j) + "," + format_double(g.row_values[i]) + "," +
             format_double(g.col_values[j]) + "," + format_double(g.surface(i, j)) + "\n";
  return out;
}

inline Json gamma_json(PenaltyParams g) { return Json{{"row", g.row}, {"col", g.col}}; }

inline std::string dump(const Json& j) { return j.dump(2) + "\n"; }

inline std::string format_results_csv(const std::vector<MethodRecord>& records, bool timing) {
  std::string out = "method,replicate,gamma_row,gamma_col,bic,mse_missing,mse_observed,mse_observed_data,solves,iterations,status";
  out += timing ? ",wall_seconds\n" : "\n";
  for (const auto& r : records) {
    out += csv_escape(r.method) + "," + std::to_string(r.replicate) + "," + format_double(r.gamma.row) + "," +
           format_double(r.gamma.col) + "," + format_double(r.bic) + "," + format_double(r.mse_missing) + "," +
           format_double(r.mse_observed) + "," + format_double(r.mse_observed_data) + "," + std::to_string(r.solves) +
           "," + std::to_string(r.iterations) + "," + csv_escape(r.status);
    if (timing) out += "," + format_double(r.wall_seconds);
    out += "\n";
  }
  return out;
}

inline Json summary_json(const std::vector<MethodSummary>& summary, bool timing) {
  Json methods = Json::array();
  for (const auto& s : summary) {
    Json m{{"method", s.method},
           {"replicates", s.count},
           {"bic", {{"mean", s.mean_bic}, {"sd", s.sd_bic}}},
           {"mse_missing", {{"mean", s.mean_mse_missing}, {"sd", s.sd_mse_missing}}},
           {"mse_observed", {{"mean", s.mean_mse_observed}, {"sd", s.sd_mse_observed}}},
           {"solves", {{"mean", s.mean_solves}}}};
    if (timing) m["wall_seconds"] = {{"mean", s.mean_wall_seconds}, {"sd", s.sd_wall_seconds}};
    methods.push_back(std::move(m));
  }
  return Json{{"schema", 1}, {"methods", std::move(methods)}};
}

struct ExperimentFile {
  CheckerboardSpec spec;
  std::vector<MethodSpec> methods;
  Index replicates = 30;
  std::uint64_t seed = 0;
};

/// {"row_blocks": [..], "col_blocks": [..], "block_means": [[..], ..],
///  "noise_sd": s, "missing_fraction": f, "replicates": r, "seed": s,
///  "methods": ["ims_exact", ...], "within_weight": w, "cross_weight": w}
inline ExperimentFile parse_experiment(const std::string& text) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw ParseError(std::string("invalid JSON: ") + e.what(), 1);
  }
  ExperimentFile ex;
  try {
    if (j.contains("row_blocks")) ex.spec.row_blocks = j.at("row_blocks").get<std::vector<Index>>();
    if (j.contains("col_blocks")) ex.spec.col_blocks = j.at("col_blocks").get<std::vector<Index>>();
    if (j.contains("block_means")) {
      const auto rows = j.at("block_means").get<std::vector<std::vector<double>>>();
      if (rows.empty()) throw InvalidArgument("block_means is empty");
      ex.spec.block_means.resize(static_cast<Index>(rows.size()), static_cast<Index>(rows.front().size()));
      for (std::size_t r = 0; r < rows.size(); ++r) {
        if (rows[r].size() != rows.front().size()) throw InvalidArgument("block_means rows differ in length");
        for (std::size_t c = 0; c < rows[r].size(); ++c)
          ex.spec.block_means(static_cast<Index>(r), static_cast<Index>(c)) = rows[r][c];
      }
    }
    ex.spec.noise_sd = j.value("noise_sd", ex.spec.noise_sd);
    ex.spec.missing_fraction = j.value("missing_fraction", ex.spec.missing_fraction);
    ex.spec.within_weight = j.value("within_weight", ex.spec.within_weight);
    ex.spec.cross_weight = j.value("cross_weight", ex.spec.cross_weight);
    ex.replicates = j.value("replicates", ex.replicates);
    ex.seed = j.value("seed", ex.seed);
    const auto names = j.value("methods", std::vector<std::string>{"ims_exact", "ims_hutchinson:5"});
    for (const auto& n : names) ex.methods.push_back(MethodSpec::parse(n));
  } catch (const Json::exception& e) {
    throw ParseError(std::string("bad experiment field: ") + e.what(), 1);
  }
  if (ex.methods.empty()) throw InvalidArgument("experiment lists no methods");
  ex.spec.validate();
  return ex;
}

}  // namespace bmc::io
