#include "pigeonhole/data.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <sstream>
#include <unordered_map>

#include "pigeonhole/error.hpp"

namespace pigeonhole {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '"' || s.front() == '\''))
    s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r' || s.back() == '"' ||
                        s.back() == '\''))
    s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split(std::string_view line, std::string_view delim) {
  std::vector<std::string_view> out;
  std::size_t pos = 0;
  for (;;) {
    const auto next = line.find(delim, pos);
    if (next == std::string_view::npos) {
      out.push_back(trim(line.substr(pos)));
      return out;
    }
    out.push_back(trim(line.substr(pos, next - pos)));
    pos = next + delim.size();
  }
}

std::optional<double> to_double(std::string_view s) {
  double v = 0.0;
  if (s.empty()) return std::nullopt;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

std::optional<std::int64_t> to_int(std::string_view s) {
  std::int64_t v = 0;
  if (s.empty()) return std::nullopt;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

bool all_digits(const std::string& s) {
  return !s.empty() && std::all_of(s.begin(), s.end(), [](unsigned char ch) { return std::isdigit(ch); });
}

std::string detect_delimiter(std::string_view line) {
  if (line.find("::") != std::string_view::npos) return "::";
  if (line.find(',') != std::string_view::npos) return ",";
  if (line.find('\t') != std::string_view::npos) return "\t";
  return " ";
}

// Position of a column reference, or -1.
int resolve_column(const std::string& ref, const std::vector<std::string_view>& header) {
  if (ref.empty()) return -1;
  for (std::size_t k = 0; k < header.size(); ++k)
    if (header[k] == ref) return static_cast<int>(k);
  if (all_digits(ref)) return std::stoi(ref);
  return -1;
}

enum class GenreCategory { Children, Comedy, Drama, Action };

GenreCategory category_of(const std::string& genre) {
  static const std::map<std::string, GenreCategory> table = {
      {"Action", GenreCategory::Action},       {"Adventure", GenreCategory::Action},
      {"Fantasy", GenreCategory::Action},      {"Horror", GenreCategory::Action},
      {"Sci-Fi", GenreCategory::Action},       {"Thriller", GenreCategory::Action},
      {"Animation", GenreCategory::Children},  {"Children", GenreCategory::Children},
      {"Children's", GenreCategory::Children}, {"Comedy", GenreCategory::Comedy},
      {"Crime", GenreCategory::Drama},         {"Documentary", GenreCategory::Drama},
      {"Drama", GenreCategory::Drama},         {"Film-Noir", GenreCategory::Drama},
      {"Musical", GenreCategory::Drama},       {"Mystery", GenreCategory::Drama},
      {"Romance", GenreCategory::Drama},       {"War", GenreCategory::Drama},
      {"Western", GenreCategory::Drama},
  };
  const auto it = table.find(genre);
  if (it == table.end()) throw InvalidArgument("genre '" + genre + "' belongs to no category");
  return it->second;
}

std::array<double, 3> category_code(GenreCategory c) {
  switch (c) {
    case GenreCategory::Children: return {1.0, 0.0, 0.0};
    case GenreCategory::Comedy: return {0.0, 1.0, 0.0};
    case GenreCategory::Drama: return {0.0, 0.0, 1.0};
    case GenreCategory::Action: return {-1.0, -1.0, -1.0};
  }
  return {0.0, 0.0, 0.0};
}

// item id -> genre list, from an id::title::genres file.
std::unordered_map<std::int64_t, std::vector<std::string>> load_item_genres(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open item metadata file '" + path + "'");
  std::unordered_map<std::int64_t, std::vector<std::string>> out;
  std::string line;
  std::size_t lineno = 0;
  std::string delim;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    if (delim.empty()) delim = detect_delimiter(line);
    const auto fields = split(line, delim);
    if (fields.size() < 2) throw ParseError("item metadata needs id and genres", lineno);
    const auto id = to_int(fields.front());
    if (!id) {
      if (lineno == 1) continue;  // header
      throw ParseError("non-integer item id '" + std::string(fields.front()) + "'", lineno);
    }
    std::vector<std::string> genres;
    for (auto g : split(fields.back(), "|"))
      if (!g.empty()) genres.emplace_back(g);
    out[*id] = std::move(genres);
  }
  return out;
}

struct Record {
  std::int64_t user;
  std::int64_t item;
  double rating;
  double time;
  std::size_t order;
  std::size_t line;
  std::vector<double> covariates;
};

// Popularity per record, using the recency window over each item's ratings.
std::vector<double> popularity_feature(const std::vector<Record>& recs, const RatingsSchema& schema) {
  std::unordered_map<std::int64_t, std::vector<std::size_t>> by_item;
  for (std::size_t k = 0; k < recs.size(); ++k) by_item[recs[k].item].push_back(k);
  std::vector<double> out(recs.size());
  for (auto& [item, idx] : by_item) {
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
      if (recs[a].time != recs[b].time) return recs[a].time < recs[b].time;
      return recs[a].order < recs[b].order;
    });
    const int W = schema.recency_window;
    for (std::size_t pos = 0; pos < idx.size(); ++pos) {
      const std::size_t end = schema.popularity_includes_current ? pos + 1 : pos;
      const std::size_t begin = end > static_cast<std::size_t>(W) ? end - W : 0;
      int l = 0;
      for (std::size_t q = begin; q < end; ++q) l += recs[idx[q]].rating > schema.positive_cutoff;
      out[idx[pos]] = popularity(l, static_cast<int>(end - begin));
    }
  }
  return out;
}

}  // namespace

// ------------------------------------------------------------ synthetic

void GeneratorSpec::validate() const {
  if (R < 2 || C < 2) throw InvalidArgument("generator needs R >= 2 and C >= 2");
  if (b.size() < 1) throw InvalidArgument("generator needs at least one coefficient");
  if (!(s2_alpha >= 0.0) || !(s2_beta >= 0.0) || !(s2_e >= 0.0))
    throw InvalidArgument("generator variances must be non-negative");
  if ((x_mean.size() != 0 && x_mean.size() != b.size()) || (x_var.size() != 0 && x_var.size() != b.size()))
    throw InvalidArgument("covariate mean/variance must have one entry per coefficient");
  if (x_var.size() > 0 && (x_var.array() < 0.0).any()) throw InvalidArgument("covariate variances must be >= 0");
}

GeneratedData generate_balanced(const GeneratorSpec& spec) {
  spec.validate();
  const int R = spec.R, C = spec.C, p = static_cast<int>(spec.b.size());
  const Vector mean = spec.x_mean.size() ? spec.x_mean : Vector::Zero(p);
  const Vector sd = (spec.x_var.size() ? spec.x_var : Vector::Constant(p, 0.5)).cwiseSqrt();

  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  GeneratedData out;
  out.alpha.resize(R);
  out.beta.resize(C);
  for (int i = 0; i < R; ++i) out.alpha[i] = std::sqrt(spec.s2_alpha) * normal(rng);
  for (int j = 0; j < C; ++j) out.beta[j] = std::sqrt(spec.s2_beta) * normal(rng);

  const auto N = static_cast<std::size_t>(R) * C;
  std::vector<int> row(N), col(N);
  Vector y(N);
  RowMatrix X(N, p);
  const double sd_e = std::sqrt(spec.s2_e);
  std::size_t k = 0;
  for (int i = 0; i < R; ++i)
    for (int j = 0; j < C; ++j, ++k) {
      row[k] = i;
      col[k] = j;
      for (int q = 0; q < p; ++q) X(k, q) = mean[q] + sd[q] * normal(rng);
      y[k] = X.row(k).dot(spec.b) + out.alpha[i] + out.beta[j] + sd_e * normal(rng);
    }
  out.table = ObservedTable(R, C, std::move(row), std::move(col), std::move(y), std::move(X));
  return out;
}

ObservedTable select_cells(const ObservedTable& table, const std::vector<bool>& keep) {
  if (keep.size() != static_cast<std::size_t>(table.N())) throw InvalidArgument("keep mask has wrong length");
  // Dropping empty rows/columns removes no cells, so one pass over the kept
  // cells already reaches the fixpoint.
  std::vector<int> row_map(table.R(), -1), col_map(table.C(), -1);
  std::int64_t n = 0;
  for (std::int64_t k = 0; k < table.N(); ++k)
    if (keep[k]) {
      row_map[table.row_of(k)] = 0;
      col_map[table.col_of(k)] = 0;
      ++n;
    }
  if (n == 0) throw EmptyTable("no observed cells left");

  std::vector<std::int64_t> row_labels, col_labels;
  for (int i = 0; i < table.R(); ++i)
    if (row_map[i] == 0) {
      row_map[i] = static_cast<int>(row_labels.size());
      row_labels.push_back(table.row_labels()[i]);
    }
  for (int j = 0; j < table.C(); ++j)
    if (col_map[j] == 0) {
      col_map[j] = static_cast<int>(col_labels.size());
      col_labels.push_back(table.col_labels()[j]);
    }

  std::vector<int> row, col;
  row.reserve(n);
  col.reserve(n);
  Vector y(n);
  RowMatrix X(n, table.p());
  std::int64_t out = 0;
  for (std::int64_t k = 0; k < table.N(); ++k) {
    if (!keep[k]) continue;
    row.push_back(row_map[table.row_of(k)]);
    col.push_back(col_map[table.col_of(k)]);
    y[out] = table.y(k);
    X.row(out) = table.X().row(k);
    ++out;
  }
  ObservedTable result(static_cast<int>(row_labels.size()), static_cast<int>(col_labels.size()), std::move(row),
                       std::move(col), std::move(y), std::move(X));
  result.set_labels(std::move(row_labels), std::move(col_labels));
  return result;
}

ObservedTable prune_empty(const ObservedTable& table) {
  return select_cells(table, std::vector<bool>(table.N(), true));
}

ObservedTable apply_mcar(const ObservedTable& table, double p, std::uint64_t seed) {
  if (!(p >= 0.0 && p < 1.0)) throw InvalidArgument("missing fraction must lie in [0, 1)");
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution keep_cell(1.0 - p);
  std::vector<bool> keep(table.N());
  for (std::int64_t k = 0; k < table.N(); ++k) keep[k] = keep_cell(rng);
  return select_cells(table, keep);
}

// --------------------------------------------------------------- features

std::array<double, 3> genera_code(const std::vector<std::string>& genres) {
  if (genres.empty()) throw InvalidArgument("genre set is empty");
  std::array<double, 3> code{0.0, 0.0, 0.0};
  const double weight = 1.0 / static_cast<double>(genres.size());
  for (const auto& g : genres) {
    const auto c = category_code(category_of(g));
    for (int k = 0; k < 3; ++k) code[k] += weight * c[k];
  }
  return code;
}

double popularity(int l, int L) {
  if (l < 0 || L < 0 || l > L) throw InvalidArgument("popularity needs 0 <= l <= L");
  const double q = (l + 0.5) / (L + 1.0);
  return std::log(q) - std::log1p(-q);
}

int positive_flag(const std::vector<double>& scores, double cutoff) {
  if (scores.empty()) throw InvalidArgument("positive flag needs at least one score");
  const auto high = std::count_if(scores.begin(), scores.end(), [cutoff](double s) { return s > cutoff; });
  return 2 * high > static_cast<std::ptrdiff_t>(scores.size()) ? 1 : 0;
}

// --------------------------------------------------------------- ratings

void RatingsSchema::validate() const {
  if (user_column.empty() || item_column.empty() || rating_column.empty())
    throw InvalidArgument("user, item and rating columns are required");
  if (!(positive_cutoff > 0.0) || recency_window < 1)
    throw InvalidArgument("positive cutoff and recency window must be positive");
  if (min_item_count < 0 || min_user_count < 0) throw InvalidArgument("minimum counts must be >= 0");
  if (features == FeatureSet::MovieLens && item_metadata_path.empty())
    throw InvalidArgument("MovieLens features need an item metadata file");
  if (features == FeatureSet::Columns && covariate_columns.empty())
    throw InvalidArgument("column features need at least one covariate column");
}

ObservedTable load_ratings(const std::string& path, const RatingsSchema& schema, IngestReport* report) {
  schema.validate();
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open ratings file '" + path + "'");

  std::vector<Record> recs;
  std::string line, first;
  std::size_t lineno = 0;
  std::string delim;
  int user_col = -1, item_col = -1, rating_col = -1, time_col = -1;
  std::vector<int> cov_cols;
  std::map<std::pair<std::int64_t, std::int64_t>, std::size_t> seen;

  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    if (delim.empty()) {
      delim = schema.delimiter.value_or(detect_delimiter(line));
      first = line;
      const auto fields = split(first, delim);
      const auto numeric_rating = [&] {
        const int k = all_digits(schema.rating_column) ? std::stoi(schema.rating_column) : -1;
        return k >= 0 && k < static_cast<int>(fields.size()) && to_double(fields[k]).has_value();
      };
      const bool header = schema.header.value_or(!numeric_rating());
      const std::vector<std::string_view> names = header ? fields : std::vector<std::string_view>{};
      user_col = resolve_column(schema.user_column, names);
      item_col = resolve_column(schema.item_column, names);
      rating_col = resolve_column(schema.rating_column, names);
      time_col = resolve_column(schema.timestamp_column, names);
      if (time_col >= static_cast<int>(fields.size())) time_col = -1;
      for (const auto& ref : schema.covariate_columns) {
        const int k = resolve_column(ref, names);
        if (k < 0) throw ParseError("unknown covariate column '" + ref + "'", lineno);
        cov_cols.push_back(k);
      }
      if (user_col < 0 || item_col < 0 || rating_col < 0)
        throw ParseError("cannot resolve user/item/rating columns", lineno);
      if (header) continue;
    }

    const auto fields = split(line, delim);
    const auto field = [&](int k, const char* what) {
      if (k >= static_cast<int>(fields.size()))
        throw ParseError(std::string("missing ") + what + " field", lineno);
      return fields[k];
    };
    Record rec;
    const auto user = to_int(field(user_col, "user"));
    const auto item = to_int(field(item_col, "item"));
    const auto rating = to_double(field(rating_col, "rating"));
    if (!user || !item) throw ParseError("user and item ids must be integers", lineno);
    if (!rating || !std::isfinite(*rating)) throw ParseError("rating is not a number", lineno);
    rec.user = *user;
    rec.item = *item;
    rec.rating = *rating;
    rec.order = recs.size();
    rec.line = lineno;
    rec.time = static_cast<double>(rec.order);
    if (time_col >= 0) {
      const auto t = to_double(field(time_col, "timestamp"));
      if (!t) throw ParseError("timestamp is not a number", lineno);
      rec.time = *t;
    }
    for (int k : cov_cols) {
      const auto v = to_double(field(k, "covariate"));
      if (!v) throw ParseError("covariate is not a number", lineno);
      rec.covariates.push_back(*v);
    }
    const auto [it, fresh] = seen.emplace(std::make_pair(rec.user, rec.item), lineno);
    if (!fresh)
      throw ParseError("duplicate rating of item " + std::to_string(rec.item) + " by user " +
                           std::to_string(rec.user) + " (first seen on line " + std::to_string(it->second) + ")",
                       lineno);
    recs.push_back(std::move(rec));
  }

  IngestReport rep;
  rep.raw_rows = static_cast<std::int64_t>(recs.size());
  if (recs.empty()) throw EmptyTable("ratings file '" + path + "' has no data rows");

  const auto filter = [&recs](auto key, int min_count) {
    if (min_count <= 0) return std::int64_t{0};
    std::unordered_map<std::int64_t, int> counts;
    for (const auto& r : recs) ++counts[key(r)];
    const auto before = recs.size();
    std::erase_if(recs, [&](const Record& r) { return counts[key(r)] < min_count; });
    return static_cast<std::int64_t>(before - recs.size());
  };
  rep.dropped_by_item_filter = filter([](const Record& r) { return r.item; }, schema.min_item_count);
  rep.dropped_by_user_filter = filter([](const Record& r) { return r.user; }, schema.min_user_count);
  if (recs.empty()) throw EmptyTable("no ratings survive the minimum-count filters");

  std::map<std::int64_t, int> users, items;
  for (const auto& r : recs) {
    users.emplace(r.user, 0);
    items.emplace(r.item, 0);
  }
  std::vector<std::int64_t> row_labels, col_labels;
  for (auto& [id, idx] : users) {
    idx = static_cast<int>(row_labels.size());
    row_labels.push_back(id);
  }
  for (auto& [id, idx] : items) {
    idx = static_cast<int>(col_labels.size());
    col_labels.push_back(id);
  }

  const auto N = static_cast<std::int64_t>(recs.size());
  int p = 1;
  if (schema.features == FeatureSet::MovieLens) p = 6;
  if (schema.features == FeatureSet::Columns) p = 1 + static_cast<int>(cov_cols.size());
  RowMatrix X(N, p);
  X.col(0).setOnes();

  if (schema.features == FeatureSet::MovieLens) {
    const auto genres = load_item_genres(schema.item_metadata_path);
    std::unordered_map<std::int64_t, std::vector<double>> user_scores;
    for (const auto& r : recs) user_scores[r.user].push_back(r.rating);
    std::unordered_map<std::int64_t, int> positive;
    for (const auto& [u, scores] : user_scores) positive[u] = positive_flag(scores, schema.positive_cutoff);
    std::unordered_map<std::int64_t, std::array<double, 3>> codes;
    for (const auto& [item, idx] : items) {
      const auto it = genres.find(item);
      if (it == genres.end()) throw InvalidArgument("item " + std::to_string(item) + " has no genre metadata");
      codes[item] = genera_code(it->second);
    }
    const auto pop = popularity_feature(recs, schema);
    for (std::int64_t k = 0; k < N; ++k) {
      const auto& code = codes[recs[k].item];
      X(k, 1) = positive[recs[k].user];
      X(k, 2) = code[0];
      X(k, 3) = code[1];
      X(k, 4) = code[2];
      X(k, 5) = pop[k];
    }
  } else if (schema.features == FeatureSet::Columns) {
    for (std::int64_t k = 0; k < N; ++k)
      for (std::size_t q = 0; q < cov_cols.size(); ++q) X(k, 1 + q) = recs[k].covariates[q];
  }

  std::vector<int> row(N), col(N);
  Vector y(N);
  for (std::int64_t k = 0; k < N; ++k) {
    row[k] = users[recs[k].user];
    col[k] = items[recs[k].item];
    y[k] = recs[k].rating;
  }
  ObservedTable table(static_cast<int>(row_labels.size()), static_cast<int>(col_labels.size()), std::move(row),
                      std::move(col), std::move(y), std::move(X));
  table.set_labels(std::move(row_labels), std::move(col_labels));
  ObservedTable pruned = prune_empty(table);
  rep.dropped_by_pruning = table.N() - pruned.N();
  rep.kept = pruned.N();
  if (report) *report = rep;
  return pruned;
}

// ------------------------------------------------------------------ dump

void write_table_csv(std::ostream& out, const ObservedTable& table) {
  out << "row,col,y";
  for (int q = 0; q < table.p(); ++q) out << ",x_" << q + 1;
  out << '\n';
  out.precision(17);
  for (std::int64_t k = 0; k < table.N(); ++k) {
    out << table.row_labels()[table.row_of(k)] << ',' << table.col_labels()[table.col_of(k)] << ',' << table.y(k);
    for (int q = 0; q < table.p(); ++q) out << ',' << table.X()(k, q);
    out << '\n';
  }
}

void write_table_csv(const std::string& path, const ObservedTable& table) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write table to '" + path + "'");
  write_table_csv(out, table);
}

ObservedTable read_table_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open table file '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) throw EmptyTable("table file '" + path + "' is empty");
  const auto header = split(line, ",");
  if (header.size() < 4 || header[0] != "row" || header[1] != "col" || header[2] != "y")
    throw ParseError("table header must be row,col,y,x_1..x_p", 1);
  const int p = static_cast<int>(header.size()) - 3;

  std::vector<std::int64_t> rows, cols;
  std::vector<double> ys, xs;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    const auto fields = split(line, ",");
    if (static_cast<int>(fields.size()) != p + 3) throw ParseError("wrong number of fields", lineno);
    const auto i = to_int(fields[0]), j = to_int(fields[1]);
    const auto yv = to_double(fields[2]);
    if (!i || !j || !yv) throw ParseError("malformed cell", lineno);
    rows.push_back(*i);
    cols.push_back(*j);
    ys.push_back(*yv);
    for (int q = 0; q < p; ++q) {
      const auto v = to_double(fields[3 + q]);
      if (!v) throw ParseError("malformed covariate", lineno);
      xs.push_back(*v);
    }
  }
  if (ys.empty()) throw EmptyTable("table file '" + path + "' has no cells");

  const auto index = [](const std::vector<std::int64_t>& ids, std::vector<std::int64_t>& labels) {
    labels = ids;
    std::sort(labels.begin(), labels.end());
    labels.erase(std::unique(labels.begin(), labels.end()), labels.end());
    std::vector<int> out(ids.size());
    for (std::size_t k = 0; k < ids.size(); ++k)
      out[k] = static_cast<int>(std::lower_bound(labels.begin(), labels.end(), ids[k]) - labels.begin());
    return out;
  };
  std::vector<std::int64_t> row_labels, col_labels;
  auto row = index(rows, row_labels);
  auto col = index(cols, col_labels);
  const auto N = static_cast<Eigen::Index>(ys.size());
  Vector y = Eigen::Map<const Vector>(ys.data(), N);
  RowMatrix X = Eigen::Map<const RowMatrix>(xs.data(), N, p);
  ObservedTable table(static_cast<int>(row_labels.size()), static_cast<int>(col_labels.size()), std::move(row),
                      std::move(col), std::move(y), std::move(X));
  table.set_labels(std::move(row_labels), std::move(col_labels));
  return table;
}

}  // namespace pigeonhole
