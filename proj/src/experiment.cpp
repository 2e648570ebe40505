#include "pigeonhole/experiment.hpp"

#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <future>
#include <iomanip>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "pigeonhole/chain_io.hpp"
#include "pigeonhole/diagnostics.hpp"
#include "pigeonhole/error.hpp"

namespace pigeonhole {

namespace fs = std::filesystem;
using boost::property_tree::ptree;

namespace {

// Step sizes for N around 1e6, used when a config gives none.
const Vector kPsgldEtaSteps = (Vector(3) << 9.97e-5, 8.97e-3, 6.62e-8).finished();
const Vector kSgldEtaSteps = (Vector(3) << 4.43e-8, 6.77e-6, 2.33e-8).finished();
constexpr double kDefaultBStep = 1e-10;

const std::map<std::string, std::set<std::string>> kSchema = {
    {"experiment",
     {"mode", "samplers", "replications", "seed", "out", "trace_window", "grid_size", "threads", "traces",
      "benchmark"}},
    {"generator", {"R", "C", "b", "sigma2", "x_mean", "x_var", "missing"}},
    {"data",
     {"ratings", "table", "items", "features", "covariates", "delimiter", "header", "user", "item", "rating",
      "timestamp", "min_item_count", "min_user_count", "positive_cutoff", "recency_window",
      "popularity_includes_current"}},
    {"prior", {"a1", "b1", "a2", "b2", "a3", "b3"}},
};

const std::set<std::string> kSamplerKeys = {
    "r",        "c",          "m",          "T",          "burn_in",   "thin",         "init_b",
    "init_sigma2", "steps_b", "steps_eta",  "phase_boundary", "steps2_b", "steps2_eta", "precondition",
    "window_begin", "window_end", "sieve", "max_redraws", "max_sieve_redraws", "hold_variances"};

std::string trim_copy(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim_copy(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

// Typed access to one INI section with field-path error messages.
class Section {
public:
  Section(std::string name, const ptree* tree) : name_(std::move(name)), tree_(tree) {}

  bool has(const std::string& key) const { return tree_ && tree_->get_child_optional(key); }

  std::string str(const std::string& key, const std::string& fallback) const {
    if (!has(key)) return fallback;
    return trim_copy(tree_->get<std::string>(key));
  }

  double real(const std::string& key, double fallback) const {
    if (!has(key)) return fallback;
    return parse_real(key, str(key, ""));
  }

  std::int64_t integer(const std::string& key, std::int64_t fallback) const {
    if (!has(key)) return fallback;
    const auto text = str(key, "");
    try {
      std::size_t used = 0;
      const auto v = std::stoll(text, &used);
      if (used == text.size()) return v;
    } catch (const std::exception&) {
    }
    throw ConfigError(path(key) + ": expected an integer, got '" + text + "'");
  }

  bool boolean(const std::string& key, bool fallback) const {
    if (!has(key)) return fallback;
    const auto text = str(key, "");
    if (text == "true" || text == "1" || text == "yes") return true;
    if (text == "false" || text == "0" || text == "no") return false;
    throw ConfigError(path(key) + ": expected true or false, got '" + text + "'");
  }

  Vector reals(const std::string& key) const {
    const auto items = split_list(str(key, ""));
    Vector v(static_cast<Eigen::Index>(items.size()));
    for (std::size_t k = 0; k < items.size(); ++k) v[k] = parse_real(key, items[k]);
    return v;
  }

  /// List of length n; a single value is broadcast.
  Vector reals(const std::string& key, Eigen::Index n, const Vector& fallback) const {
    if (!has(key)) return fallback;
    Vector v = reals(key);
    if (v.size() == 1 && n > 1) v = Vector::Constant(n, v[0]);
    if (v.size() != n)
      throw ConfigError(path(key) + ": expected " + std::to_string(n) + " values, got " + std::to_string(v.size()));
    return v;
  }

  std::string path(const std::string& key) const { return name_ + "." + key; }

  void check_keys(const std::set<std::string>& allowed) const {
    if (!tree_) return;
    for (const auto& [key, child] : *tree_)
      if (!allowed.count(key)) throw ConfigError(path(key) + ": unknown key");
  }

private:
  double parse_real(const std::string& key, const std::string& text) const {
    try {
      std::size_t used = 0;
      const double v = std::stod(text, &used);
      if (used == text.size() && std::isfinite(v)) return v;
    } catch (const std::exception&) {
    }
    throw ConfigError(path(key) + ": expected a number, got '" + text + "'");
  }

  std::string name_;
  const ptree* tree_;
};

Section section(const ptree& root, const std::string& name) {
  const auto child = root.get_child_optional(name);
  return Section(name, child ? &*child : nullptr);
}

ExperimentMode parse_mode(const std::string& text) {
  if (text == "simulate-balanced") return ExperimentMode::SimulateBalanced;
  if (text == "simulate-mcar") return ExperimentMode::SimulateMcar;
  if (text == "real-data") return ExperimentMode::RealData;
  throw ConfigError("experiment.mode: expected simulate-balanced, simulate-mcar or real-data, got '" + text + "'");
}

FeatureSet parse_features(const std::string& text) {
  if (text == "intercept") return FeatureSet::Intercept;
  if (text == "movielens") return FeatureSet::MovieLens;
  if (text == "columns") return FeatureSet::Columns;
  throw ConfigError("data.features: expected intercept, movielens or columns, got '" + text + "'");
}

std::string to_string(FeatureSet f) {
  switch (f) {
    case FeatureSet::Intercept: return "intercept";
    case FeatureSet::MovieLens: return "movielens";
    case FeatureSet::Columns: return "columns";
  }
  return "intercept";
}

// Covariate count of a table dump, from its header.
int table_file_p(const std::string& path) {
  std::ifstream in(path);
  std::string line;
  if (!in || !std::getline(in, line)) throw ConfigError("data.table: cannot read '" + path + "'");
  return static_cast<int>(split_list(line).size()) - 3;
}

int covariate_count(const ExperimentConfig& cfg) {
  if (cfg.mode != ExperimentMode::RealData) return static_cast<int>(cfg.generator.b.size());
  if (!cfg.data.table_path.empty()) return table_file_p(cfg.data.table_path);
  switch (cfg.data.schema.features) {
    case FeatureSet::Intercept: return 1;
    case FeatureSet::MovieLens: return 6;
    case FeatureSet::Columns: return 1 + static_cast<int>(cfg.data.schema.covariate_columns.size());
  }
  return 1;
}

SamplerSetup parse_sampler(const ptree& root, SamplerKind kind, const ExperimentConfig& cfg, int p) {
  const Section s = section(root, to_string(kind));
  s.check_keys(kSamplerKeys);
  SamplerSetup setup;
  setup.kind = kind;
  SamplerConfig& c = setup.config;
  const int default_rc = cfg.mode == ExperimentMode::RealData ? 200 : 20;
  c.r = static_cast<int>(s.integer("r", default_rc));
  c.c = static_cast<int>(s.integer("c", default_rc));
  c.m = static_cast<int>(s.integer("m", 50));
  c.T = s.integer("T", 20000);
  c.burn_in = s.integer("burn_in", c.T / 2);
  c.thin = s.integer("thin", 1);
  c.max_redraws = static_cast<int>(s.integer("max_redraws", 100));
  c.max_sieve_redraws = static_cast<int>(s.integer("max_sieve_redraws", 1000));
  c.hold_variances = s.boolean("hold_variances", false);
  if (c.T < 1) throw ConfigError(s.path("T") + ": must be >= 1");
  if (c.burn_in < 0 || c.burn_in > c.T) throw ConfigError(s.path("burn_in") + ": must lie in [0, T]");
  if (c.thin < 1) throw ConfigError(s.path("thin") + ": must be >= 1");
  if (kind != SamplerKind::Gibbs) {
    if (c.r < 2 || c.c < 2) throw ConfigError(s.path("r") + ": batch needs r >= 2 and c >= 2");
    if (c.m < 1) throw ConfigError(s.path("m") + ": must be >= 1");
  }

  const Vector init_b = s.reals("init_b", p, Vector::Ones(p));
  const Vector init_s2 = s.reals("init_sigma2", 3, Vector::Ones(3));
  if ((init_s2.array() <= 0.0).any()) throw ConfigError(s.path("init_sigma2") + ": variances must be positive");
  c.init = Theta::from_variances(init_b, init_s2[0], init_s2[1], init_s2[2]);

  if (s.has("sieve")) {
    const Vector v = s.reals("sieve", 4, Vector());
    c.sieve = SieveBounds{v[0], v[1], v[2], v[3], 3};
    if ((v.array() <= 0.0).any()) throw ConfigError(s.path("sieve") + ": bounds must be positive");
  }

  if (kind == SamplerKind::Gibbs) return setup;

  const Vector& eta_default = kind == SamplerKind::Psgld ? kPsgldEtaSteps : kSgldEtaSteps;
  auto steps = [&](const std::string& bkey, const std::string& ekey, const Vector& b_fb, const Vector& e_fb) {
    Vector v(p + 3);
    v.head(p) = s.reals(bkey, p, b_fb);
    v.tail(3) = s.reals(ekey, 3, e_fb);
    if ((v.array() < 0.0).any()) {
      const bool b_bad = (v.head(p).array() < 0.0).any();
      throw ConfigError(s.path(b_bad ? bkey : ekey) + ": step sizes must be non-negative");
    }
    return v;
  };
  StepSchedule& sched = setup.schedule;
  sched.phase1_steps = steps("steps_b", "steps_eta", Vector::Constant(p, kDefaultBStep), eta_default);
  if (s.has("phase_boundary")) {
    sched.phase_boundary = s.integer("phase_boundary", 0);
    if (*sched.phase_boundary < 0) throw ConfigError(s.path("phase_boundary") + ": must be >= 0");
    sched.phase2_steps = steps("steps2_b", "steps2_eta", sched.phase1_steps.head(p), sched.phase1_steps.tail(3));
  } else if (s.has("steps2_b") || s.has("steps2_eta")) {
    throw ConfigError(s.path("phase_boundary") + ": required when phase-2 steps are given");
  }
  const std::string mode = s.str("precondition", "none");
  if (mode == "covariance") {
    if (!sched.phase_boundary) throw ConfigError(s.path("precondition") + ": covariance mode needs phase_boundary");
    sched.mode = PreconditionMode::EmpiricalCovariance;
    sched.window_begin = s.integer("window_begin", *sched.phase_boundary / 2 + 1);
    sched.window_end = s.integer("window_end", *sched.phase_boundary + 1);
  } else if (mode != "none") {
    throw ConfigError(s.path("precondition") + ": expected none or covariance, got '" + mode + "'");
  }
  try {
    sched.validate(p + 3);
  } catch (const InvalidArgument& e) {
    throw ConfigError(to_string(kind) + ": " + e.what());
  }
  return setup;
}

std::string order_of(double v) {
  if (v == 0.0) return "0";
  std::ostringstream os;
  os << "1e" << static_cast<int>(std::floor(std::log10(std::abs(v))));
  return os.str();
}

// Shortest text that reads back to the same double.
std::string shortest(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::string join(const Vector& v) {
  std::string out;
  for (Eigen::Index k = 0; k < v.size(); ++k) out += (k ? ", " : "") + shortest(v[k]);
  return out;
}

std::string join_orders(const Vector& v) {
  std::string out;
  for (Eigen::Index k = 0; k < v.size(); ++k) out += (k ? ", " : "") + order_of(v[k]);
  return out;
}

struct RepResult {
  std::vector<std::optional<Chain>> chains;
  std::vector<std::uint64_t> seeds;
  std::uint64_t data_seed = 0;
  std::string error;
  std::int64_t N = 0;
  int R = 0, C = 0;
};

void write_wide(std::ostream& out, const std::vector<std::string>& names) {
  for (std::size_t k = 0; k < names.size(); ++k) out << ',' << names[k];
  out << '\n';
}

}  // namespace

std::string to_string(ExperimentMode mode) {
  switch (mode) {
    case ExperimentMode::SimulateBalanced: return "simulate-balanced";
    case ExperimentMode::SimulateMcar: return "simulate-mcar";
    case ExperimentMode::RealData: return "real-data";
  }
  return "simulate-balanced";
}

ExperimentConfig parse_config(const std::string& ini_text) {
  ptree root;
  try {
    std::istringstream in(ini_text);
    boost::property_tree::ini_parser::read_ini(in, root);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError(std::string("config syntax: ") + e.what());
  }
  for (const auto& [name, child] : root) {
    if (kSchema.count(name) || name == "psgld" || name == "sgld" || name == "gibbs") continue;
    throw ConfigError(name + ": unknown section");
  }
  for (const auto& [name, keys] : kSchema) section(root, name).check_keys(keys);

  ExperimentConfig cfg;
  const Section exp = section(root, "experiment");
  if (!exp.has("mode")) throw ConfigError("experiment.mode: required");
  cfg.mode = parse_mode(exp.str("mode", ""));
  cfg.replications = static_cast<int>(exp.integer("replications", 1));
  cfg.seed = static_cast<std::uint64_t>(exp.integer("seed", 1));
  cfg.out_dir = exp.str("out", "results");
  cfg.trace_window = static_cast<int>(exp.integer("trace_window", 500));
  cfg.grid_size = static_cast<int>(exp.integer("grid_size", 1000));
  cfg.threads = static_cast<int>(exp.integer("threads", 1));
  cfg.traces = exp.boolean("traces", true);
  cfg.benchmark_path = exp.str("benchmark", "");
  if (cfg.replications < 1) throw ConfigError("experiment.replications: must be >= 1");
  if (cfg.trace_window < 1) throw ConfigError("experiment.trace_window: must be >= 1");
  if (cfg.grid_size < 1) throw ConfigError("experiment.grid_size: must be >= 1");
  if (cfg.threads < 1) throw ConfigError("experiment.threads: must be >= 1");

  const Section gen = section(root, "generator");
  cfg.generator.R = static_cast<int>(gen.integer("R", 200));
  cfg.generator.C = static_cast<int>(gen.integer("C", 200));
  cfg.generator.b = gen.has("b") ? gen.reals("b") : (Vector(5) << 3, 2, 4, 6, 5).finished();
  const Vector s2 = gen.reals("sigma2", 3, (Vector(3) << 9, 4, 1).finished());
  cfg.generator.s2_alpha = s2[0];
  cfg.generator.s2_beta = s2[1];
  cfg.generator.s2_e = s2[2];
  const auto p_gen = cfg.generator.b.size();
  cfg.generator.x_mean = gen.reals("x_mean", p_gen, Vector::Zero(p_gen));
  cfg.generator.x_var = gen.reals("x_var", p_gen, Vector::Constant(p_gen, 0.5));
  cfg.missing = gen.real("missing", cfg.mode == ExperimentMode::SimulateMcar ? 0.5 : 0.0);
  if (cfg.mode != ExperimentMode::RealData) {
    try {
      cfg.generator.validate();
    } catch (const InvalidArgument& e) {
      throw ConfigError(std::string("generator: ") + e.what());
    }
    if (cfg.mode == ExperimentMode::SimulateMcar && !(cfg.missing >= 0.0 && cfg.missing < 1.0))
      throw ConfigError("generator.missing: must lie in [0, 1)");
    if (cfg.mode == ExperimentMode::SimulateBalanced && cfg.missing != 0.0)
      throw ConfigError("generator.missing: only valid with mode = simulate-mcar");
  }

  const Section data = section(root, "data");
  cfg.data.ratings_path = data.str("ratings", "");
  cfg.data.table_path = data.str("table", "");
  RatingsSchema& schema = cfg.data.schema;
  schema.features = parse_features(data.str("features", "intercept"));
  schema.item_metadata_path = data.str("items", "");
  schema.covariate_columns = split_list(data.str("covariates", ""));
  if (data.has("delimiter")) {
    std::string d = data.str("delimiter", ",");
    if (d == "tab" || d == "\\t") d = "\t";
    schema.delimiter = d;
  }
  if (data.has("header")) schema.header = data.boolean("header", false);
  schema.user_column = data.str("user", "0");
  schema.item_column = data.str("item", "1");
  schema.rating_column = data.str("rating", "2");
  schema.timestamp_column = data.str("timestamp", "3");
  schema.min_item_count = static_cast<int>(data.integer("min_item_count", 0));
  schema.min_user_count = static_cast<int>(data.integer("min_user_count", 0));
  schema.positive_cutoff = data.real("positive_cutoff", 3.0);
  schema.recency_window = static_cast<int>(data.integer("recency_window", 30));
  schema.popularity_includes_current = data.boolean("popularity_includes_current", false);
  if (cfg.mode == ExperimentMode::RealData) {
    if (cfg.data.ratings_path.empty() == cfg.data.table_path.empty())
      throw ConfigError("data: give exactly one of data.ratings or data.table");
    const std::string& path = cfg.data.ratings_path.empty() ? cfg.data.table_path : cfg.data.ratings_path;
    const std::string key = cfg.data.ratings_path.empty() ? "data.table" : "data.ratings";
    if (!fs::exists(path)) throw ConfigError(key + ": file '" + path + "' does not exist");
    if (!cfg.data.ratings_path.empty()) {
      try {
        schema.validate();
      } catch (const InvalidArgument& e) {
        throw ConfigError(std::string("data: ") + e.what());
      }
      if (schema.features == FeatureSet::MovieLens && !fs::exists(schema.item_metadata_path))
        throw ConfigError("data.items: file '" + schema.item_metadata_path + "' does not exist");
    }
  }

  const Section prior = section(root, "prior");
  cfg.prior.a1 = prior.real("a1", 1.0);
  cfg.prior.b1 = prior.real("b1", 1.0);
  cfg.prior.a2 = prior.real("a2", 1.0);
  cfg.prior.b2 = prior.real("b2", 1.0);
  cfg.prior.a3 = prior.real("a3", 0.01);
  cfg.prior.b3 = prior.real("b3", 0.01);
  try {
    cfg.prior.validate();
  } catch (const InvalidArgument& e) {
    throw ConfigError(std::string("prior: ") + e.what());
  }

  const auto names = split_list(exp.str("samplers", "psgld, gibbs"));
  if (names.empty()) throw ConfigError("experiment.samplers: at least one sampler is required");
  const int p = covariate_count(cfg);
  std::set<std::string> seen;
  for (const auto& name : names) {
    SamplerKind kind;
    try {
      kind = parse_sampler_kind(name);
    } catch (const InvalidArgument& e) {
      throw ConfigError(std::string("experiment.samplers: ") + e.what());
    }
    if (!seen.insert(name).second) throw ConfigError("experiment.samplers: '" + name + "' listed twice");
    if (kind == SamplerKind::Sgld && cfg.mode != ExperimentMode::SimulateBalanced)
      throw ConfigError("experiment.samplers: sgld needs fully observed data; use psgld with mode = " +
                        to_string(cfg.mode));
    cfg.samplers.push_back(parse_sampler(root, kind, cfg, p));
    const auto& sc = cfg.samplers.back().config;
    if (kind != SamplerKind::Gibbs && cfg.mode != ExperimentMode::RealData &&
        (sc.r >= cfg.generator.R || sc.c >= cfg.generator.C))
      throw ConfigError(name + ".r: batch must be smaller than the table (r < R, c < C)");
  }
  for (const auto& [name, child] : root)
    if ((name == "psgld" || name == "sgld" || name == "gibbs") && !seen.count(name))
      throw ConfigError(name + ": section given but sampler not listed in experiment.samplers");
  return cfg;
}

ExperimentConfig validate_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file '" + path + "'");
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_config(buffer.str());
}

std::string describe(const ExperimentConfig& cfg) {
  std::ostringstream os;
  os.precision(17);
  os << "[experiment]\n"
     << "mode = " << to_string(cfg.mode) << '\n'
     << "samplers = ";
  for (std::size_t k = 0; k < cfg.samplers.size(); ++k) os << (k ? ", " : "") << to_string(cfg.samplers[k].kind);
  os << "\nreplications = " << cfg.replications << "\nseed = " << cfg.seed;
  if (!cfg.out_dir.empty()) os << "\nout = " << cfg.out_dir;
  os << "\ntrace_window = " << cfg.trace_window << "\ngrid_size = " << cfg.grid_size << "\nthreads = " << cfg.threads
     << "\ntraces = " << (cfg.traces ? "true" : "false") << "\nbenchmark = " << cfg.benchmark_path << "\n\n";
  if (cfg.mode == ExperimentMode::RealData) {
    const auto& s = cfg.data.schema;
    os << "[data]\nratings = " << cfg.data.ratings_path << "\ntable = " << cfg.data.table_path
       << "\nitems = " << s.item_metadata_path << "\nfeatures = " << to_string(s.features) << "\ncovariates = ";
    for (std::size_t k = 0; k < s.covariate_columns.size(); ++k) os << (k ? ", " : "") << s.covariate_columns[k];
    os << "\ndelimiter = " << (s.delimiter ? (*s.delimiter == "\t" ? "tab" : *s.delimiter) : "auto")
       << "\nheader = " << (s.header ? (*s.header ? "true" : "false") : "auto") << "\nuser = " << s.user_column
       << "\nitem = " << s.item_column << "\nrating = " << s.rating_column << "\ntimestamp = " << s.timestamp_column
       << "\nmin_item_count = " << s.min_item_count << "\nmin_user_count = " << s.min_user_count
       << "\npositive_cutoff = " << s.positive_cutoff << "\nrecency_window = " << s.recency_window
       << "\npopularity_includes_current = " << (s.popularity_includes_current ? "true" : "false") << "\n\n";
  } else {
    const auto& g = cfg.generator;
    os << "[generator]\nR = " << g.R << "\nC = " << g.C << "\nb = " << join(g.b) << "\nsigma2 = " << g.s2_alpha
       << ", " << g.s2_beta << ", " << g.s2_e << "\nx_mean = " << join(g.x_mean) << "\nx_var = " << join(g.x_var)
       << "\nmissing = " << cfg.missing << "\n\n";
  }
  const auto& pr = cfg.prior;
  os << "[prior]\na1 = " << pr.a1 << "\nb1 = " << pr.b1 << "\na2 = " << pr.a2 << "\nb2 = " << pr.b2
     << "\na3 = " << pr.a3 << "\nb3 = " << pr.b3 << "\n";
  for (const auto& s : cfg.samplers) {
    const auto& c = s.config;
    const int p = c.init->p();
    os << "\n[" << to_string(s.kind) << "]\n";
    if (s.kind != SamplerKind::Gibbs) os << "r = " << c.r << "\nc = " << c.c << "\nm = " << c.m << '\n';
    os << "T = " << c.T << "\nburn_in = " << c.burn_in << "\nthin = " << c.thin << "\ninit_b = " << join(c.init->b)
       << "\ninit_sigma2 = " << c.init->sigma2_alpha() << ", " << c.init->sigma2_beta() << ", "
       << c.init->sigma2_e() << '\n';
    if (c.hold_variances) os << "hold_variances = true\n";
    if (c.sieve) os << "sieve = " << c.sieve->B0 << ", " << c.sieve->A1 << ", " << c.sieve->B1 << ", " << c.sieve->E1 << '\n';
    if (s.kind == SamplerKind::Gibbs) continue;
    const auto& sch = s.schedule;
    os << "; steps_b order " << join_orders(sch.phase1_steps.head(p)) << "; steps_eta order "
       << join_orders(sch.phase1_steps.tail(3)) << '\n'
       << "steps_b = " << join(sch.phase1_steps.head(p)) << "\nsteps_eta = " << join(sch.phase1_steps.tail(3)) << '\n';
    if (sch.phase_boundary) {
      os << "phase_boundary = " << *sch.phase_boundary << "\nsteps2_b = " << join(sch.phase2_steps.head(p))
         << "\nsteps2_eta = " << join(sch.phase2_steps.tail(3)) << '\n';
    }
    os << "precondition = " << (sch.mode == PreconditionMode::EmpiricalCovariance ? "covariance" : "none") << '\n';
    if (sch.mode == PreconditionMode::EmpiricalCovariance)
      os << "window_begin = " << sch.window_begin << "\nwindow_end = " << sch.window_end << '\n';
    os << "max_redraws = " << c.max_redraws << "\nmax_sieve_redraws = " << c.max_sieve_redraws << '\n';
  }
  return os.str();
}

std::string config_hash(const ExperimentConfig& config) {
  ExperimentConfig located = config;
  located.out_dir.clear();
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : describe(located)) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

ObservedTable experiment_table(const ExperimentConfig& config, int rep) {
  switch (config.mode) {
    case ExperimentMode::RealData:
      if (!config.data.table_path.empty()) return read_table_csv(config.data.table_path);
      return load_ratings(config.data.ratings_path, config.data.schema);
    case ExperimentMode::SimulateBalanced:
    case ExperimentMode::SimulateMcar: {
      GeneratorSpec spec = config.generator;
      spec.seed = derive_seed(config.seed, static_cast<std::uint64_t>(rep) * 64);
      ObservedTable table = generate_balanced(spec).table;
      if (config.mode == ExperimentMode::SimulateMcar)
        table = apply_mcar(table, config.missing, derive_seed(config.seed, static_cast<std::uint64_t>(rep) * 64 + 63));
      return table;
    }
  }
  throw ConfigError("unknown experiment mode");
}

int run_experiment(const ExperimentConfig& config_in, const RunOptions& options) {
  ExperimentConfig config = config_in;
  if (options.seed) config.seed = *options.seed;
  if (options.out_dir) config.out_dir = *options.out_dir;
  if (options.benchmark_path) config.benchmark_path = *options.benchmark_path;
  const fs::path out = config.out_dir;
  fs::create_directories(out);

  std::optional<Chain> file_benchmark;
  if (!config.benchmark_path.empty()) file_benchmark = read_chain_csv(config.benchmark_path);

  std::optional<ObservedTable> shared;
  if (config.mode == ExperimentMode::RealData) {
    shared = experiment_table(config, 0);
    std::cerr << "loaded table R=" << shared->R() << " C=" << shared->C() << " N=" << shared->N() << '\n';
  }

  const auto S = config.samplers.size();
  auto run_rep = [&](int rep) {
    RepResult res;
    res.chains.resize(S);
    res.data_seed = derive_seed(config.seed, static_cast<std::uint64_t>(rep) * 64);
    try {
      const ObservedTable local = shared ? ObservedTable{} : experiment_table(config, rep);
      const ObservedTable& table = shared ? *shared : local;
      res.N = table.N();
      res.R = table.R();
      res.C = table.C();
      for (std::size_t s = 0; s < S; ++s) {
        SamplerConfig sc = config.samplers[s].config;
        sc.seed = derive_seed(config.seed, static_cast<std::uint64_t>(rep) * 64 + s + 1);
        res.seeds.push_back(sc.seed);
        res.chains[s] = run_chain(config.samplers[s].kind, table, sc, config.samplers[s].schedule, config.prior);
        if (res.chains[s]->size() < 2)
          throw InvalidArgument(to_string(config.samplers[s].kind) + " kept " + std::to_string(res.chains[s]->size()) +
                                " samples; summaries need at least 2 (check T, burn_in, thin)");
      }
    } catch (const std::exception& e) {
      res.error = e.what();
    }
    return res;
  };

  std::vector<RepResult> results;
  for (int first = 0; first < config.replications; first += config.threads) {
    std::vector<std::future<RepResult>> batch;
    for (int rep = first; rep < std::min(config.replications, first + config.threads); ++rep)
      batch.push_back(std::async(std::launch::async, run_rep, rep));
    for (auto& f : batch) {
      results.push_back(f.get());
      const int rep = static_cast<int>(results.size());
      if (results.back().error.empty())
        std::cerr << "replication " << rep << "/" << config.replications << " done\n";
      else
        std::cerr << "replication " << rep << "/" << config.replications << " failed: " << results.back().error
                  << '\n';
    }
  }

  // Collector: everything below runs on this thread only.
  const int p = config.samplers.front().config.init->p();
  const auto names = parameter_names(p);
  std::optional<std::size_t> gibbs_index;
  for (std::size_t s = 0; s < S; ++s)
    if (config.samplers[s].kind == SamplerKind::Gibbs) gibbs_index = s;

  std::vector<std::vector<std::vector<ParamSummary>>> summaries(S);
  std::vector<std::vector<std::vector<MarginalSamples>>> marginals(S);
  std::vector<std::vector<std::pair<int, std::vector<double>>>> w2_rows(S);
  bool any_failed = false;

  for (std::size_t rep = 0; rep < results.size(); ++rep) {
    const auto& res = results[rep];
    if (!res.error.empty()) {
      any_failed = true;
      continue;
    }
    const fs::path dir = out / ("rep" + std::to_string(rep + 1));
    fs::create_directories(dir);
    std::optional<std::vector<MarginalSamples>> reference, trace_bench;
    const Chain* ref_chain = file_benchmark ? &*file_benchmark : gibbs_index ? &*res.chains[*gibbs_index] : nullptr;
    if (ref_chain && ref_chain->size() > 0) {
      reference = chain_marginals(*ref_chain);
      trace_bench = chain_marginals(*ref_chain, 0, static_cast<std::size_t>(config.trace_window));
    }
    for (std::size_t s = 0; s < S; ++s) {
      const auto& chain = *res.chains[s];
      const auto name = to_string(config.samplers[s].kind);
      write_chain_csv((dir / ("chain_" + name + ".csv")).string(), chain, options.canonical);
      summaries[s].push_back(summarize(chain));
      {
        std::ofstream f(dir / ("summary_" + name + ".csv"));
        write_summary_csv(f, summaries[s].back());
      }
      marginals[s].push_back(chain_marginals(chain));
      if (reference && !(gibbs_index && s == *gibbs_index && !file_benchmark)) {
        std::vector<double> w2(names.size());
        for (std::size_t q = 0; q < names.size(); ++q) w2[q] = w2_empirical(marginals[s].back()[q], (*reference)[q]);
        w2_rows[s].emplace_back(static_cast<int>(rep + 1), std::move(w2));
      }
      if (trace_bench && config.traces) {
        auto trace = convergence_trace(chain, *trace_bench, config.trace_window);
        if (options.canonical)
          for (auto& point : trace) point.elapsed_s = 0.0;
        std::ofstream f(dir / ("trace_" + name + ".csv"));
        write_trace_csv(f, trace, names);
      }
    }
  }

  {
    std::ofstream f(out / "summary.csv");
    f << "method,stat";
    write_wide(f, names);
    f.precision(17);
    for (std::size_t s = 0; s < S; ++s) {
      if (summaries[s].empty()) continue;
      for (const char* stat : {"mean", "sd"}) {
        f << to_string(config.samplers[s].kind) << ',' << stat;
        for (std::size_t q = 0; q < names.size(); ++q) {
          double acc = 0.0;
          for (const auto& rep : summaries[s]) acc += std::string(stat) == "mean" ? rep[q].mean : rep[q].sd;
          f << ',' << acc / static_cast<double>(summaries[s].size());
        }
        f << '\n';
      }
    }
  }
  {
    std::ofstream f(out / "w2.csv");
    f << "method,replication";
    write_wide(f, names);
    f.precision(17);
    for (std::size_t s = 0; s < S; ++s) {
      if (w2_rows[s].empty()) continue;
      std::vector<double> mean(names.size(), 0.0);
      for (const auto& [rep, w2] : w2_rows[s]) {
        f << to_string(config.samplers[s].kind) << ',' << rep;
        for (std::size_t q = 0; q < w2.size(); ++q) {
          f << ',' << w2[q];
          mean[q] += w2[q] / static_cast<double>(w2_rows[s].size());
        }
        f << '\n';
      }
      f << to_string(config.samplers[s].kind) << ",mean";
      for (double v : mean) f << ',' << v;
      f << '\n';
    }
  }
  for (std::size_t s = 0; s < S; ++s) {
    if (marginals[s].empty()) continue;
    std::vector<MarginalSamples> bary;
    for (std::size_t q = 0; q < names.size(); ++q) {
      std::vector<MarginalSamples> reps;
      for (const auto& m : marginals[s]) reps.push_back(m[q]);
      bary.push_back(w2_barycenter(reps, config.grid_size));
    }
    std::ofstream f(out / ("barycenter_" + to_string(config.samplers[s].kind) + ".csv"));
    f << "k";
    write_wide(f, names);
    f.precision(17);
    for (int k = 0; k < config.grid_size; ++k) {
      f << k + 1;
      for (const auto& b : bary) f << ',' << b.values[k];
      f << '\n';
    }
  }

  {
    std::ofstream f(out / "manifest.txt");
    f << "config_hash = " << config_hash(config) << "\nseed = " << config.seed << "\nmode = " << to_string(config.mode)
      << "\nreplications = " << config.replications << "\ncanonical = " << (options.canonical ? "true" : "false")
      << "\nbenchmark = " << (file_benchmark ? config.benchmark_path : gibbs_index ? "in-run gibbs" : "none") << '\n';
    for (std::size_t rep = 0; rep < results.size(); ++rep) {
      const auto& res = results[rep];
      f << "replication " << rep + 1 << " data_seed=" << res.data_seed;
      for (std::size_t s = 0; s < res.seeds.size(); ++s)
        f << ' ' << to_string(config.samplers[s].kind) << "_seed=" << res.seeds[s];
      if (res.error.empty())
        f << " R=" << res.R << " C=" << res.C << " N=" << res.N << " status=ok\n";
      else
        f << " status=failed error=\"" << res.error << "\"\n";
    }
    ExperimentConfig recorded = config;
    recorded.out_dir.clear();
    f << "\n; normalized config\n" << describe(recorded);
  }
  return any_failed ? 1 : 0;
}

}  // namespace pigeonhole
