#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <istream>
#include <numeric>
#include <optional>
#include <ostream>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "vrhmc/potential.hpp"
#include "vrhmc/random.hpp"

namespace vrhmc {

/// How raw LIBSVM labels map onto {-1, +1}.
enum class LabelPolicy {
  Auto,          // inferred from the set of labels present
  PlusMinusOne,  // -1/+1 passthrough
  ZeroOne,       // 0 -> -1, 1 -> +1
  OneTwo,        // 1 -> -1, 2 -> +1
};

inline LabelPolicy parse_label_policy(const std::string& s) {
  if (s == "auto") return LabelPolicy::Auto;
  if (s == "pm1" || s == "+-1" || s == "plusminus") return LabelPolicy::PlusMinusOne;
  if (s == "01" || s == "zero-one") return LabelPolicy::ZeroOne;
  if (s == "12" || s == "one-two") return LabelPolicy::OneTwo;
  throw std::invalid_argument("unknown label policy '" + s + "'");
}

inline std::string to_string(LabelPolicy p) {
  switch (p) {
    case LabelPolicy::Auto: return "auto";
    case LabelPolicy::PlusMinusOne: return "pm1";
    case LabelPolicy::ZeroOne: return "01";
    case LabelPolicy::OneTwo: return "12";
  }
  return "?";
}

using SparseRow = std::vector<std::pair<std::uint32_t, double>>;

/// Binary-labelled sparse dataset. Indices are 0-based and strictly
/// increasing within a row; `row_ids` are positions in the originally parsed
/// file (preserved through splits).
struct Dataset {
  std::size_t d = 0;
  std::vector<SparseRow> rows;
  std::vector<int> labels;
  std::vector<std::size_t> row_ids;
  std::string source;
  std::string parse_options;

  std::size_t n() const noexcept { return rows.size(); }

  /// Dense N x d feature matrix.
  Matrix dense() const {
    Matrix a = Matrix::Zero(static_cast<Eigen::Index>(n()), static_cast<Eigen::Index>(d));
    for (std::size_t i = 0; i < rows.size(); ++i) {
      for (const auto& [j, v] : rows[i]) a(static_cast<Eigen::Index>(i), j) = v;
    }
    return a;
  }

  std::vector<double> signed_labels() const {
    return {labels.begin(), labels.end()};
  }

  friend bool operator==(const Dataset& a, const Dataset& b) {
    return a.d == b.d && a.rows == b.rows && a.labels == b.labels;
  }
};

class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::size_t line, std::size_t column)
      : std::runtime_error("line " + std::to_string(line) + ", column " +
                           std::to_string(column) + ": " + what),
        line_(line),
        column_(column) {}
  std::size_t line() const noexcept { return line_; }
  std::size_t column() const noexcept { return column_; }

 private:
  std::size_t line_;
  std::size_t column_;
};

namespace detail {

inline bool parse_double(std::string_view s, double& out) {
  if (s.empty()) return false;
  if (s.front() == '+') s.remove_prefix(1);
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && p == s.data() + s.size() && std::isfinite(out);
}

inline int map_label(double raw, LabelPolicy policy) {
  switch (policy) {
    case LabelPolicy::PlusMinusOne:
      if (raw == 1.0) return 1;
      if (raw == -1.0) return -1;
      break;
    case LabelPolicy::ZeroOne:
      if (raw == 1.0) return 1;
      if (raw == 0.0) return -1;
      break;
    case LabelPolicy::OneTwo:
      if (raw == 2.0) return 1;
      if (raw == 1.0) return -1;
      break;
    case LabelPolicy::Auto:
      break;
  }
  return 0;
}

inline LabelPolicy infer_policy(const std::set<double>& seen) {
  auto subset = [&](std::initializer_list<double> allowed) {
    return std::all_of(seen.begin(), seen.end(), [&](double v) {
      return std::find(allowed.begin(), allowed.end(), v) != allowed.end();
    });
  };
  if (subset({-1.0, 1.0})) return LabelPolicy::PlusMinusOne;
  if (subset({0.0, 1.0})) return LabelPolicy::ZeroOne;
  if (subset({1.0, 2.0})) return LabelPolicy::OneTwo;
  return LabelPolicy::Auto;
}

}  // namespace detail

/// Parses "<label> <idx>:<val> ..." lines with 1-based indices. d is the
/// largest index seen unless `dim_override` is given (which must cover it).
inline Dataset parse_libsvm(std::istream& in, LabelPolicy policy = LabelPolicy::Auto,
                            std::optional<std::size_t> dim_override = std::nullopt,
                            std::string source = "<stream>") {
  struct RawRow {
    double label;
    std::size_t line;
    SparseRow features;
  };
  std::vector<RawRow> raw;
  std::set<double> seen;
  std::size_t max_index = 0;
  std::string line;
  std::size_t lineno = 0;

  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);

    std::size_t pos = 0;
    auto next_token = [&](std::size_t& col) -> std::string_view {
      while (pos < line.size() && std::isspace(static_cast<unsigned char>(line[pos]))) ++pos;
      const std::size_t start = pos;
      while (pos < line.size() && !std::isspace(static_cast<unsigned char>(line[pos]))) ++pos;
      col = start + 1;
      return std::string_view(line).substr(start, pos - start);
    };

    std::size_t col = 0;
    const std::string_view label_tok = next_token(col);
    if (label_tok.empty()) continue;
    RawRow row{0.0, lineno, {}};
    if (!detail::parse_double(label_tok, row.label)) {
      throw ParseError("malformed label '" + std::string(label_tok) + "'", lineno, col);
    }
    std::int64_t last = 0;
    for (;;) {
      const std::string_view tok = next_token(col);
      if (tok.empty()) break;
      const auto colon = tok.find(':');
      if (colon == std::string_view::npos || colon == 0 || colon + 1 == tok.size()) {
        throw ParseError("malformed feature token '" + std::string(tok) + "'", lineno, col);
      }
      std::int64_t idx = 0;
      const auto [p, ec] = std::from_chars(tok.data(), tok.data() + colon, idx);
      if (ec != std::errc() || p != tok.data() + colon || idx < 1) {
        throw ParseError("malformed feature index in '" + std::string(tok) + "'", lineno, col);
      }
      double value = 0.0;
      if (!detail::parse_double(tok.substr(colon + 1), value)) {
        throw ParseError("malformed feature value in '" + std::string(tok) + "'", lineno, col);
      }
      if (idx <= last) {
        throw ParseError("feature indices must be strictly increasing", lineno, col);
      }
      if (idx > static_cast<std::int64_t>(UINT32_MAX)) {
        throw ParseError("feature index too large", lineno, col);
      }
      last = idx;
      row.features.emplace_back(static_cast<std::uint32_t>(idx - 1), value);
      max_index = std::max(max_index, static_cast<std::size_t>(idx));
    }
    seen.insert(row.label);
    raw.push_back(std::move(row));
  }
  if (raw.empty()) throw std::invalid_argument("parse_libsvm: no rows");

  LabelPolicy effective = policy;
  if (policy == LabelPolicy::Auto) {
    effective = detail::infer_policy(seen);
    if (effective == LabelPolicy::Auto) {
      throw ParseError("cannot infer a binary label mapping", raw.front().line, 1);
    }
  }

  Dataset ds;
  ds.d = max_index;
  if (dim_override) {
    if (*dim_override < max_index) {
      throw std::invalid_argument("parse_libsvm: dimension override " +
                                  std::to_string(*dim_override) + " below max index " +
                                  std::to_string(max_index));
    }
    ds.d = *dim_override;
  }
  if (ds.d == 0) ds.d = 1;
  ds.source = std::move(source);
  ds.parse_options = "labels=" + to_string(effective) +
                     (dim_override ? ",dim=" + std::to_string(*dim_override) : "");
  ds.rows.reserve(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) {
    const int y = detail::map_label(raw[i].label, effective);
    if (y == 0) {
      std::ostringstream os;
      os << "label " << raw[i].label << " not mappable under policy " << to_string(effective);
      throw ParseError(os.str(), raw[i].line, 1);
    }
    ds.labels.push_back(y);
    ds.rows.push_back(std::move(raw[i].features));
    ds.row_ids.push_back(i);
  }
  return ds;
}

inline Dataset parse_libsvm_string(const std::string& text, LabelPolicy policy = LabelPolicy::Auto,
                                   std::optional<std::size_t> dim_override = std::nullopt) {
  std::istringstream in(text);
  return parse_libsvm(in, policy, dim_override, "<string>");
}

/// Emits LIBSVM text with +1/-1 labels and round-trip precision values.
inline void write_libsvm(std::ostream& out, const Dataset& ds) {
  char buf[64];
  for (std::size_t i = 0; i < ds.rows.size(); ++i) {
    out << (ds.labels[i] > 0 ? "+1" : "-1");
    for (const auto& [j, v] : ds.rows[i]) {
      const auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
      out << ' ' << (j + 1) << ':' << std::string_view(buf, static_cast<std::size_t>(p - buf));
    }
    out << '\n';
  }
}

/// Seeded shuffle followed by a prefix split; the train side gets
/// round(ratio * n) rows.
inline std::pair<Dataset, Dataset> split(const Dataset& ds, double ratio, std::uint64_t seed) {
  if (!(ratio > 0.0 && ratio < 1.0)) {
    throw std::invalid_argument("split: ratio must lie in (0, 1)");
  }
  const std::size_t n = ds.n();
  const auto n_train = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(n)));
  if (n_train == 0 || n_train >= n) {
    throw std::invalid_argument("split: degenerate split (" + std::to_string(n_train) + " of " +
                                std::to_string(n) + " rows in train)");
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Engine rng = make_engine(seed, 0, Stream::Data);
  for (std::size_t i = n - 1; i > 0; --i) {
    std::uniform_int_distribution<std::size_t> pick(0, i);
    std::swap(order[i], order[pick(rng)]);
  }
  auto take = [&](std::size_t from, std::size_t to) {
    Dataset part;
    part.d = ds.d;
    part.source = ds.source;
    part.parse_options = ds.parse_options;
    for (std::size_t k = from; k < to; ++k) {
      part.rows.push_back(ds.rows[order[k]]);
      part.labels.push_back(ds.labels[order[k]]);
      part.row_ids.push_back(ds.row_ids.empty() ? order[k] : ds.row_ids[order[k]]);
    }
    return part;
  };
  return {take(0, n_train), take(n_train, n)};
}

/// Per-feature affine map x -> (x - mean) / scale fitted on a training set.
/// Zero-variance features keep mean 0 and scale 1 (identity).
struct FeatureTransform {
  std::vector<double> mean;
  std::vector<double> scale;

  double apply(std::size_t j, double v) const { return (v - mean[j]) / scale[j]; }
  double invert(std::size_t j, double v) const { return v * scale[j] + mean[j]; }

  Vector apply(const Vector& x) const {
    Vector y(x.size());
    for (Eigen::Index j = 0; j < x.size(); ++j) y(j) = apply(static_cast<std::size_t>(j), x(j));
    return y;
  }
  Vector invert(const Vector& y) const {
    Vector x(y.size());
    for (Eigen::Index j = 0; j < y.size(); ++j) x(j) = invert(static_cast<std::size_t>(j), y(j));
    return x;
  }

  nlohmann::json to_json() const { return {{"mean", mean}, {"scale", scale}}; }
  static FeatureTransform from_json(const nlohmann::json& j) {
    return {j.at("mean").get<std::vector<double>>(), j.at("scale").get<std::vector<double>>()};
  }
};

inline Dataset apply_transform(const Dataset& ds, const FeatureTransform& t) {
  Dataset out = ds;
  for (std::size_t i = 0; i < ds.rows.size(); ++i) {
    std::vector<double> dense(ds.d, 0.0);
    for (const auto& [j, v] : ds.rows[i]) dense[j] = v;
    SparseRow row;
    for (std::size_t j = 0; j < ds.d; ++j) {
      const double y = t.apply(j, dense[j]);
      if (y != 0.0) row.emplace_back(static_cast<std::uint32_t>(j), y);
    }
    out.rows[i] = std::move(row);
  }
  out.parse_options += ",standardized";
  return out;
}

struct Standardized {
  Dataset train;
  Dataset test;
  FeatureTransform transform;
};

/// Fits mean/population-std per feature on `train` (dense interpretation) and
/// applies the transform to both sets.
inline Standardized standardize(const Dataset& train, const Dataset& test) {
  if (train.n() == 0) throw std::invalid_argument("standardize: empty training set");
  const std::size_t d = train.d;
  std::vector<double> sum(d, 0.0), sumsq(d, 0.0);
  for (const auto& row : train.rows) {
    for (const auto& [j, v] : row) sum[j] += v;
  }
  const double n = static_cast<double>(train.n());
  FeatureTransform t;
  t.mean.resize(d);
  t.scale.resize(d);
  for (std::size_t j = 0; j < d; ++j) t.mean[j] = sum[j] / n;
  // Two-pass variance; implicit zeros contribute mean^2 each.
  std::vector<std::size_t> nnz(d, 0);
  for (const auto& row : train.rows) {
    for (const auto& [j, v] : row) {
      const double c = v - t.mean[j];
      sumsq[j] += c * c;
      ++nnz[j];
    }
  }
  for (std::size_t j = 0; j < d; ++j) {
    const double var =
        (sumsq[j] + static_cast<double>(train.n() - nnz[j]) * t.mean[j] * t.mean[j]) / n;
    if (var > 1e-24 * std::max(1.0, t.mean[j] * t.mean[j])) {
      t.scale[j] = std::sqrt(var);
    } else {
      t.mean[j] = 0.0;
      t.scale[j] = 1.0;
    }
  }
  return {apply_transform(train, t), apply_transform(test, t), t};
}

/// Logistic potential over a dataset with prior precision m.
inline LogisticPotential make_logistic(const Dataset& ds, double prior_precision) {
  return LogisticPotential(ds.dense(), ds.signed_labels(), prior_precision);
}

}  // namespace vrhmc
