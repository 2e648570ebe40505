#ifndef PIGEONHOLE_DATA_HPP
#define PIGEONHOLE_DATA_HPP

#include <array>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "pigeonhole/model.hpp"

namespace pigeonhole {

// ------------------------------------------------------------ synthetic

/// Balanced synthetic design. Variances are given on the sigma^2 scale;
/// zero is accepted and gives a degenerate (constant) effect.
struct GeneratorSpec {
  int R = 200;
  int C = 200;
  Vector b;
  double s2_alpha = 9.0;
  double s2_beta = 4.0;
  double s2_e = 1.0;
  /// Covariates are i.i.d. N(mean[k], var[k]); empty means N(0, 0.5).
  Vector x_mean;
  Vector x_var;
  std::uint64_t seed = 1;

  void validate() const;
};

struct GeneratedData {
  ObservedTable table;
  Vector alpha;
  Vector beta;
};

/// Fully observed table from the crossed model. Cells are row-major.
GeneratedData generate_balanced(const GeneratorSpec& spec);

/// Keep each cell independently with probability 1 - p, then prune.
ObservedTable apply_mcar(const ObservedTable& table, double p, std::uint64_t seed);

/// Drop rows and columns without cells until none are left, reindexing
/// contiguously. Original labels are carried over. Throws EmptyTable when
/// no cell remains.
ObservedTable prune_empty(const ObservedTable& table);

/// Sub-table on the cells with keep[k] true, pruned.
ObservedTable select_cells(const ObservedTable& table, const std::vector<bool>& keep);

// --------------------------------------------------------------- ratings

enum class FeatureSet {
  /// Intercept only.
  Intercept,
  /// Intercept, Positive, Genera (3), Popularity. Needs item metadata.
  MovieLens,
  /// Intercept plus the numeric columns listed in covariate_columns.
  Columns,
};

/// Column roles and feature options for delimited ratings files.
///
/// Column references are header names when the file has a header and
/// zero-based positions otherwise (a header name that is all digits is
/// also read as a position).
struct RatingsSchema {
  std::string user_column = "0";
  std::string item_column = "1";
  std::string rating_column = "2";
  /// Empty, or absent from the file, means no timestamp: file order is time.
  std::string timestamp_column = "3";
  std::vector<std::string> covariate_columns;

  /// "::", ",", "\t" ...; auto-detected from the first line when unset.
  std::optional<std::string> delimiter;
  /// Auto-detected (non-numeric rating field on line 1) when unset.
  std::optional<bool> header;

  FeatureSet features = FeatureSet::Intercept;
  /// item::title::genres file (ml-1m movies.dat layout).
  std::string item_metadata_path;

  double positive_cutoff = 3.0;
  int recency_window = 30;
  /// Count the rating itself among the recent ratings of its item.
  bool popularity_includes_current = false;

  int min_item_count = 0;
  int min_user_count = 0;

  void validate() const;
};

/// Row bookkeeping for one ingestion.
struct IngestReport {
  std::int64_t raw_rows = 0;
  std::int64_t dropped_by_item_filter = 0;
  std::int64_t dropped_by_user_filter = 0;
  std::int64_t dropped_by_pruning = 0;
  std::int64_t kept = 0;
};

/// Parse a ratings file into a table with engineered covariates. Users
/// become rows and items columns, each indexed in ascending id order. The
/// item filter runs before the user filter; both run once, then the table
/// is pruned.
ObservedTable load_ratings(const std::string& path, const RatingsSchema& schema, IngestReport* report = nullptr);

/// Category codes: Children (1,0,0), Comedy (0,1,0), Drama (0,0,1),
/// Action (-1,-1,-1). Each genre contributes 1/|genres| of its category code.
std::array<double, 3> genera_code(const std::vector<std::string>& genres);

/// logit((l + 0.5) / (L + 1)).
double popularity(int l, int L);

/// 1 iff strictly more than half the scores exceed cutoff.
int positive_flag(const std::vector<double>& scores, double cutoff = 3.0);

/// CSV dump `row,col,y,x_1..x_p` with original row/column labels.
void write_table_csv(std::ostream& out, const ObservedTable& table);
void write_table_csv(const std::string& path, const ObservedTable& table);
/// Inverse of write_table_csv; labels are indexed in ascending order.
ObservedTable read_table_csv(const std::string& path);

}  // namespace pigeonhole

#endif  // PIGEONHOLE_DATA_HPP
