#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include <unistd.h>

#include "pigeonhole/data.hpp"
#include "pigeonhole/error.hpp"

using namespace pigeonhole;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir() {
  const fs::path dir = fs::temp_directory_path() / ("pigeonhole_data_" + std::to_string(::getpid()));
  fs::create_directories(dir);
  return dir;
}

std::string write_file(const std::string& name, const std::string& text) {
  const fs::path path = scratch_dir() / name;
  std::ofstream(path) << text;
  return path.string();
}

GeneratorSpec paper_spec(int R, int C, std::uint64_t seed) {
  GeneratorSpec g;
  g.R = R;
  g.C = C;
  g.b = (Vector(5) << 3, 2, 4, 6, 5).finished();
  g.seed = seed;
  return g;
}

}  // namespace

TEST_CASE("generator degenerate limit reproduces x'b") {
  GeneratorSpec g = paper_spec(5, 4, 1);
  g.s2_alpha = g.s2_beta = g.s2_e = 0.0;
  const auto d = generate_balanced(g);
  CHECK(d.table.fully_observed());
  CHECK((d.table.y() - d.table.X() * g.b).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("generator is deterministic and validates") {
  const auto a = generate_balanced(paper_spec(6, 7, 9)), b = generate_balanced(paper_spec(6, 7, 9));
  CHECK(a.table.y() == b.table.y());
  CHECK(a.table.X() == b.table.X());
  CHECK(generate_balanced(paper_spec(6, 7, 10)).table.y() != a.table.y());
  GeneratorSpec bad = paper_spec(6, 7, 1);
  bad.s2_alpha = -1.0;
  CHECK_THROWS_AS(generate_balanced(bad), InvalidArgument);
}

TEST_CASE("generated data obeys the variance decomposition") {
  const auto d = generate_balanced(paper_spec(1000, 1000, 3));
  const ObservedTable& t = d.table;
  const Vector resid = t.y() - t.X() * (Vector(5) << 3, 2, 4, 6, 5).finished();
  const int R = t.R(), C = t.C();

  // Row means of the residual: variance s2a + (s2b + s2e)/C, but the column
  // effects are shared by all rows, so condition on them via the realized beta.
  Vector row_mean = Vector::Zero(R);
  for (std::int64_t k = 0; k < t.N(); ++k) row_mean[t.row_of(k)] += resid[k] / C;
  const double mu = row_mean.mean();
  const double v = (row_mean.array() - mu).square().sum() / (R - 1);
  const double want = 9.0 + 1.0 / C;  // beta average is common to all rows
  CHECK(std::abs(v - want) < 4.0 * want * std::sqrt(2.0 / (R - 1)));

  const double total_mean = resid.mean();
  const double total = (resid.array() - total_mean).square().sum() / (t.N() - 1);
  // Var over cells of alpha_i + beta_j + e_ij; sd of the estimate is driven
  // by R and C effects.
  const double tol = 4.0 * std::sqrt(2.0 * 81.0 / R + 2.0 * 16.0 / C + 2.0 / t.N());
  CHECK(std::abs(total - 14.0) < tol);
}

TEST_CASE("mcar thinning") {
  const auto d = generate_balanced(paper_spec(1000, 1000, 4));
  CHECK(apply_mcar(d.table, 0.0, 1).N() == d.table.N());
  const ObservedTable half = apply_mcar(d.table, 0.5, 2);
  const double n = 1e6, sd = std::sqrt(n * 0.25);
  CHECK(std::abs(static_cast<double>(half.N()) - 5e5) < 4.0 * sd);
  CHECK(half.pruned());

  const auto small = generate_balanced(paper_spec(6, 6, 5));
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    try {
      const ObservedTable t = apply_mcar(small.table, 0.99, seed);
      CHECK(t.pruned());
      CHECK(t.R() <= 6);
    } catch (const EmptyTable&) {
    }
  }
  CHECK_THROWS_AS(apply_mcar(small.table, 1.0, 1), InvalidArgument);
}

TEST_CASE("pruning") {
  const auto d = generate_balanced(paper_spec(4, 4, 6));
  CHECK(prune_empty(d.table).N() == d.table.N());

  // Remove every cell of row 3 except (3, 0) and every other cell of column 0:
  // the lone cell keeps both alive.
  std::vector<bool> keep(d.table.N(), true);
  for (std::int64_t k = 0; k < d.table.N(); ++k) {
    const int i = d.table.row_of(k), j = d.table.col_of(k);
    keep[k] = (i == 3) == (j == 0);
  }
  const ObservedTable lone = select_cells(d.table, keep);
  CHECK(lone.R() == 4);
  CHECK(lone.C() == 4);

  // Dropping the lone cell removes both the row and the column.
  for (std::int64_t k = 0; k < d.table.N(); ++k)
    if (d.table.row_of(k) == 3 && d.table.col_of(k) == 0) keep[k] = false;
  const ObservedTable gone = select_cells(d.table, keep);
  CHECK(gone.R() == 3);
  CHECK(gone.C() == 3);
  CHECK(gone.pruned());
  CHECK(gone.row_labels() == std::vector<std::int64_t>{0, 1, 2});
  CHECK(gone.col_labels() == std::vector<std::int64_t>{1, 2, 3});
  CHECK(prune_empty(gone).N() == gone.N());

  CHECK_THROWS_AS(select_cells(d.table, std::vector<bool>(d.table.N(), false)), EmptyTable);
}

TEST_CASE("genera codes") {
  const auto comedy = genera_code({"Comedy"});
  CHECK(comedy == std::array<double, 3>{0, 1, 0});
  const auto action = genera_code({"Action", "Sci-Fi"});
  CHECK(action == std::array<double, 3>{-1, -1, -1});
  const auto mix = genera_code({"Comedy", "Drama"});
  CHECK(mix[0] == 0.0);
  CHECK(mix[1] == doctest::Approx(0.5));
  CHECK(mix[2] == doctest::Approx(0.5));
  const auto kids = genera_code({"Children's", "Animation", "Drama"});
  CHECK(kids[0] == doctest::Approx(2.0 / 3.0));
  CHECK(kids[2] == doctest::Approx(1.0 / 3.0));
  CHECK_THROWS_AS(genera_code({"Polka"}), InvalidArgument);
}

TEST_CASE("popularity and positive flag") {
  CHECK(popularity(0, 0) == 0.0);
  CHECK(popularity(15, 30) == doctest::Approx(0.0));
  CHECK(popularity(29, 30) == doctest::Approx(std::log(29.5 / 1.5)).epsilon(1e-14));
  CHECK(popularity(29, 30) == doctest::Approx(2.9789).epsilon(1e-4));
  CHECK_THROWS_AS(popularity(3, 2), InvalidArgument);

  CHECK(positive_flag({5, 5, 5}) == 1);
  CHECK(positive_flag({4, 2}) == 0);
  CHECK(positive_flag({4, 4, 2}) == 1);
  CHECK(positive_flag({3, 3, 3}) == 0);
}

TEST_CASE("ratings ingestion with movielens features") {
  const std::string ratings = write_file("ratings.dat",
                                         "1::10::5::300\n"
                                         "1::20::2::100\n"
                                         "2::10::2::100\n"
                                         "2::20::4::200\n"
                                         "3::10::4::200\n"
                                         "3::30::5::50\n");
  const std::string items = write_file("movies.dat",
                                       "10::A (1990)::Comedy\n"
                                       "20::B (1991)::Action|Thriller\n"
                                       "30::C (1992)::Drama|Comedy\n");
  RatingsSchema schema;
  schema.features = FeatureSet::MovieLens;
  schema.item_metadata_path = items;
  IngestReport rep;
  const ObservedTable t = load_ratings(ratings, schema, &rep);
  CHECK(t.R() == 3);
  CHECK(t.C() == 3);
  CHECK(t.N() == 6);
  CHECK(t.p() == 6);
  CHECK(rep.raw_rows == 6);
  CHECK(rep.kept == 6);
  CHECK(t.row_labels() == std::vector<std::int64_t>{1, 2, 3});
  CHECK(t.col_labels() == std::vector<std::int64_t>{10, 20, 30});

  // Item 10 rated 2 at t=100, 4 at t=200, 5 at t=300.
  const auto pop = [&](int user, int item) { return t.X()(t.find(user, item), 5); };
  CHECK(pop(1, 0) == doctest::Approx(0.0));
  CHECK(pop(2, 0) == doctest::Approx(std::log(0.5 / 1.5)));
  CHECK(pop(0, 0) == doctest::Approx(0.0));
  const auto cell = t.find(0, 1);
  CHECK(t.X()(cell, 1) == 0.0);  // user 1: {5, 2}, not more than half positive
  CHECK(t.X()(t.find(2, 2), 1) == 1.0);
  CHECK(t.X()(cell, 2) == -1.0);
  CHECK(t.X()(t.find(2, 2), 3) == doctest::Approx(0.5));
  CHECK(t.X()(cell, 0) == 1.0);

  schema.popularity_includes_current = true;
  const ObservedTable inc = load_ratings(ratings, schema);
  CHECK(inc.X()(inc.find(1, 0), 5) == doctest::Approx(std::log(0.5 / 1.5)));
}

TEST_CASE("ratings ingestion filters and errors") {
  const std::string csv = write_file("ratings.csv",
                                     "user,item,score\n"
                                     "1,10,3\n"
                                     "1,20,4\n"
                                     "2,10,5\n"
                                     "3,10,1\n"
                                     "3,30,2\n");
  RatingsSchema schema;
  schema.user_column = "user";
  schema.item_column = "item";
  schema.rating_column = "score";
  schema.min_item_count = 2;
  IngestReport rep;
  const ObservedTable t = load_ratings(csv, schema, &rep);
  CHECK(t.N() == 3);
  CHECK(t.C() == 1);
  CHECK(rep.dropped_by_item_filter == 2);
  CHECK(rep.raw_rows == rep.kept + rep.dropped_by_item_filter + rep.dropped_by_user_filter + rep.dropped_by_pruning);

  schema.min_user_count = 2;
  schema.min_item_count = 0;
  const ObservedTable u = load_ratings(csv, schema, &rep);
  CHECK(u.R() == 2);
  CHECK(rep.dropped_by_user_filter == 1);

  CHECK_THROWS_AS(load_ratings(write_file("empty.csv", ""), RatingsSchema{}), EmptyTable);
  const std::string dup = write_file("dup.csv", "1,2,3\n1,2,4\n");
  try {
    load_ratings(dup, RatingsSchema{});
    FAIL("duplicate accepted");
  } catch (const ParseError& e) {
    CHECK(e.line() == 2);
  }
  CHECK_THROWS_AS(load_ratings(write_file("bad.csv", "1,2,3\n1,3,x\n"), RatingsSchema{}), ParseError);

  RatingsSchema cols;
  cols.features = FeatureSet::Columns;
  cols.covariate_columns = {"3"};
  const ObservedTable c = load_ratings(write_file("cov.tsv", "1\t2\t3\t0.5\n2\t2\t4\t1.5\n"), cols);
  CHECK(c.p() == 2);
  CHECK(c.X()(c.find(1, 0), 1) == 1.5);
}

TEST_CASE("table csv round trip") {
  GeneratorSpec g = paper_spec(5, 6, 7);
  const ObservedTable t = apply_mcar(generate_balanced(g).table, 0.3, 8);
  std::ostringstream out;
  write_table_csv(out, t);
  CHECK(out.str().rfind("row,col,y,x_1,x_2,x_3,x_4,x_5\n", 0) == 0);
  const std::string path = write_file("table.csv", out.str());
  const ObservedTable back = read_table_csv(path);
  REQUIRE(back.N() == t.N());
  CHECK(back.R() == t.R());
  for (std::int64_t k = 0; k < t.N(); ++k) {
    const auto j = back.find(t.row_of(k), t.col_of(k));
    REQUIRE(j >= 0);
    CHECK(back.y(j) == t.y(k));
    CHECK(back.X().row(j) == t.X().row(k));
  }
}
