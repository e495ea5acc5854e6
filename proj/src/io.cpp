#include "cgdro/io.hpp"

#include "cgdro/error.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cerrno>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <string_view>

namespace cgdro {

namespace {

constexpr const char* kModule = "io";

[[noreturn]] void parse_fail(const std::string& name, std::size_t line, const std::string& msg) {
  throw ParseError(kModule, name + ":" + std::to_string(line) + ": " + msg);
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const std::size_t pos = line.find(',', start);
    out.push_back(trim(line.substr(start, pos == std::string_view::npos ? line.npos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

double parse_double(std::string_view s, const std::string& name, std::size_t line) {
  double v = 0.0;
  const char* first = s.data();
  if (!s.empty() && s.front() == '+') ++first;
  const auto [ptr, ec] = std::from_chars(first, s.data() + s.size(), v);
  if (s.empty() || ec != std::errc() || ptr != s.data() + s.size()) {
    parse_fail(name, line, "invalid number '" + std::string(s) + "'");
  }
  if (!std::isfinite(v)) parse_fail(name, line, "non-finite value '" + std::string(s) + "'");
  return v;
}

int parse_int(std::string_view s, const std::string& name, std::size_t line) {
  int v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc() || ptr != s.data() + s.size()) {
    parse_fail(name, line, "invalid integer '" + std::string(s) + "'");
  }
  return v;
}

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError(kModule, "cannot open " + path.string() + ": " + std::strerror(errno));
  return in;
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError(kModule, "cannot write " + path.string() + ": " + std::strerror(errno));
  return out;
}

// Header "x1,...,xd" starting at column `offset`; returns d.
int check_x_header(const std::vector<std::string_view>& cols, std::size_t offset,
                   const std::string& name) {
  if (cols.size() <= offset) parse_fail(name, 1, "header has no covariate columns");
  for (std::size_t k = offset; k < cols.size(); ++k) {
    const std::string expect = "x" + std::to_string(k - offset + 1);
    if (cols[k] != expect) {
      parse_fail(name, 1, "expected column '" + expect + "', found '" + std::string(cols[k]) + "'");
    }
  }
  return static_cast<int>(cols.size() - offset);
}

template <class RowFn>
void for_each_data_line(std::istream& in, RowFn&& fn) {
  std::string line;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    fn(split(line), lineno);
  }
}

std::vector<double> to_vec(const Vector& v) { return {v.data(), v.data() + v.size()}; }

Vector from_vec(const Json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Vector>(v.data(), static_cast<Index>(v.size()));
}

Json interval_json(const Interval& iv) { return Json::array({iv.lo, iv.hi}); }

Interval interval_from(const Json& j) {
  if (!j.is_array() || j.size() != 2) throw ValidationError(kModule, "interval must be [lo, hi]");
  return {j[0].get<double>(), j[1].get<double>()};
}

template <class T>
void set_field(const Json& j, const char* key, T& field) {
  try {
    field = j.get<T>();
  } catch (const Json::exception&) {
    throw ValidationError(kModule, std::string("config field '") + key + "' has the wrong type");
  }
}

Json scalar_from_text(const std::string& text) {
  try {
    return Json::parse(text);
  } catch (const Json::exception&) {
    std::string s = text;
    if (s.size() >= 2 && (s.front() == '"' || s.front() == '\'') && s.back() == s.front()) {
      s = s.substr(1, s.size() - 2);
    }
    return s;
  }
}

}  // namespace

std::vector<LabeledDataset> read_sources_csv(std::istream& in, const std::string& name) {
  std::string header;
  if (!std::getline(in, header)) parse_fail(name, 1, "empty file");
  const auto cols = split(header);
  if (cols.size() < 3 || cols[0] != "source" || cols[1] != "y") {
    parse_fail(name, 1, "header must be 'source,y,x1,...,xd'");
  }
  const int d = check_x_header(cols, 2, name);
  std::map<int, std::vector<double>> xs;
  std::map<int, std::vector<int>> ys;
  for_each_data_line(in, [&](const std::vector<std::string_view>& f, std::size_t line) {
    if (f.size() != static_cast<std::size_t>(d) + 2) {
      parse_fail(name, line, "expected " + std::to_string(d + 2) + " fields, found " +
                                 std::to_string(f.size()));
    }
    const int src = parse_int(f[0], name, line);
    if (src < 1) parse_fail(name, line, "source id must be positive");
    const int y = parse_int(f[1], name, line);
    if (y < 0) parse_fail(name, line, "label must be non-negative");
    ys[src].push_back(y);
    auto& row = xs[src];
    for (int k = 0; k < d; ++k) row.push_back(parse_double(f[k + 2], name, line));
  });
  if (ys.empty()) parse_fail(name, 2, "no data rows");
  std::vector<LabeledDataset> out;
  for (const auto& [src, labels] : ys) {
    LabeledDataset ds;
    ds.source_id = src;
    const Index n = static_cast<Index>(labels.size());
    ds.x = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
        xs[src].data(), n, d);
    ds.y = Eigen::Map<const Labels>(labels.data(), n);
    out.push_back(std::move(ds));
  }
  return out;
}

std::vector<LabeledDataset> load_sources(const std::filesystem::path& path) {
  auto in = open_in(path);
  return read_sources_csv(in, path.string());
}

UnlabeledDataset read_target_csv(std::istream& in, const std::string& name) {
  std::string header;
  if (!std::getline(in, header)) parse_fail(name, 1, "empty file");
  const int d = check_x_header(split(header), 0, name);
  std::vector<double> values;
  Index n = 0;
  for_each_data_line(in, [&](const std::vector<std::string_view>& f, std::size_t line) {
    if (f.size() != static_cast<std::size_t>(d)) {
      parse_fail(name, line, "expected " + std::to_string(d) + " fields, found " +
                                 std::to_string(f.size()));
    }
    for (int k = 0; k < d; ++k) values.push_back(parse_double(f[k], name, line));
    ++n;
  });
  if (n == 0) parse_fail(name, 2, "no data rows");
  UnlabeledDataset out;
  out.x = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
      values.data(), n, d);
  return out;
}

UnlabeledDataset load_target(const std::filesystem::path& path) {
  auto in = open_in(path);
  return read_target_csv(in, path.string());
}

std::string format_double(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

void write_sources_csv(std::ostream& out, const std::vector<LabeledDataset>& sources) {
  if (sources.empty()) throw ValidationError(kModule, "no sources to write");
  const int d = sources.front().dim();
  out << "source,y";
  for (int k = 1; k <= d; ++k) out << ",x" << k;
  out << '\n';
  for (const auto& s : sources) {
    if (s.dim() != d) throw ValidationError(kModule, "sources differ in dimension");
    for (Index i = 0; i < s.size(); ++i) {
      out << s.source_id << ',' << s.y[i];
      for (int k = 0; k < d; ++k) out << ',' << format_double(s.x(i, k));
      out << '\n';
    }
  }
}

void write_target_csv(std::ostream& out, const UnlabeledDataset& target) {
  const int d = target.dim();
  for (int k = 1; k <= d; ++k) out << (k > 1 ? "," : "") << 'x' << k;
  out << '\n';
  for (Index i = 0; i < target.size(); ++i) {
    for (int k = 0; k < d; ++k) out << (k ? "," : "") << format_double(target.x(i, k));
    out << '\n';
  }
}

void save_sources(const std::filesystem::path& path, const std::vector<LabeledDataset>& sources) {
  auto out = open_out(path);
  write_sources_csv(out, sources);
  if (!out) throw IoError(kModule, "write failed for " + path.string());
}

void save_target(const std::filesystem::path& path, const UnlabeledDataset& target) {
  auto out = open_out(path);
  write_target_csv(out, target);
  if (!out) throw IoError(kModule, "write failed for " + path.string());
}

Json to_json(const FitResult& fit) {
  Json j;
  j["method"] = fit.method;
  j["theta"] = to_vec(fit.theta);
  j["gamma"] = to_vec(fit.gamma);
  Json gaps = Json::array(), iters = Json::array();
  for (const auto& g : fit.gap_trace) {
    gaps.push_back(g.gap);
    iters.push_back(g.iteration);
  }
  j["gap_trace"] = gaps;
  j["gap_iterations"] = iters;
  j["iterations"] = fit.iterations;
  j["converged"] = fit.converged;
  Json diag = Json::array();
  for (const auto& d : fit.nuisance) {
    diag.push_back({{"source", d.source_id},
                    {"ridge_a", d.ridge_a},
                    {"ridge_b", d.ridge_b},
                    {"grad_norm_a", d.grad_norm_a},
                    {"grad_norm_b", d.grad_norm_b},
                    {"fallback_a", d.fallback_a},
                    {"fallback_b", d.fallback_b},
                    {"ratio_grad_norm", d.ratio_grad_norm}});
  }
  j["nuisance_diagnostics"] = diag;
  return j;
}

Json to_json(const InferenceResult& res) {
  Json j = to_json(res.fit);
  j["coord"] = res.coord;
  j["alpha"] = res.alpha;
  j["alpha0"] = res.alpha0;
  j["alpha_prime"] = res.alpha_prime;
  j["M"] = res.num_draws;
  j["filtered_m"] = res.filtered_m();
  Json ci = Json::array();
  for (const auto& iv : res.ci) ci.push_back(interval_json(iv));
  j["ci"] = ci;
  j["reject_zero"] = res.reject_zero();
  Json draws = Json::array();
  for (const auto& r : res.kept) {
    draws.push_back({{"m", r.m},
                     {"gamma", to_vec(r.gamma)},
                     {"theta_j", r.theta_j},
                     {"variance_jj", r.variance_jj},
                     {"interval", interval_json(r.interval)}});
  }
  j["draws"] = draws;
  return j;
}

FitResult fit_result_from_json(const Json& j) {
  try {
    FitResult fit;
    fit.method = j.value("method", std::string("cgdro"));
    fit.theta = from_vec(j.at("theta"));
    fit.gamma = from_vec(j.at("gamma"));
    const auto& gaps = j.at("gap_trace");
    const auto& iters = j.at("gap_iterations");
    if (gaps.size() != iters.size()) throw ValidationError(kModule, "gap trace lengths differ");
    for (std::size_t i = 0; i < gaps.size(); ++i) {
      fit.gap_trace.push_back({iters[i].get<int>(), gaps[i].get<double>()});
    }
    fit.iterations = j.at("iterations").get<int>();
    fit.converged = j.value("converged", false);
    for (const auto& d : j.value("nuisance_diagnostics", Json::array())) {
      NuisanceDiagnostics nd;
      nd.source_id = d.at("source").get<int>();
      nd.ridge_a = d.at("ridge_a").get<double>();
      nd.ridge_b = d.at("ridge_b").get<double>();
      nd.grad_norm_a = d.at("grad_norm_a").get<double>();
      nd.grad_norm_b = d.at("grad_norm_b").get<double>();
      nd.fallback_a = d.at("fallback_a").get<bool>();
      nd.fallback_b = d.at("fallback_b").get<bool>();
      nd.ratio_grad_norm = d.at("ratio_grad_norm").get<double>();
      fit.nuisance.push_back(nd);
    }
    return fit;
  } catch (const Json::exception& e) {
    throw ValidationError(kModule, std::string("malformed result JSON: ") + e.what());
  }
}

InferenceResult inference_result_from_json(const Json& j) {
  InferenceResult res;
  res.fit = fit_result_from_json(j);
  try {
    res.coord = j.at("coord").get<int>();
    res.alpha = j.at("alpha").get<double>();
    res.alpha0 = j.at("alpha0").get<double>();
    res.alpha_prime = j.at("alpha_prime").get<double>();
    res.num_draws = j.at("M").get<int>();
    for (const auto& iv : j.at("ci")) res.ci.push_back(interval_from(iv));
    for (const auto& d : j.at("draws")) {
      PerturbationRecord r;
      r.m = d.at("m").get<int>();
      r.gamma = from_vec(d.at("gamma"));
      r.theta_j = d.at("theta_j").get<double>();
      r.variance_jj = d.at("variance_jj").get<double>();
      r.interval = interval_from(d.at("interval"));
      res.kept.push_back(std::move(r));
    }
  } catch (const Json::exception& e) {
    throw ValidationError(kModule, std::string("malformed result JSON: ") + e.what());
  }
  return res;
}

Json load_json(const std::filesystem::path& path) {
  auto in = open_in(path);
  try {
    return Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw ParseError(kModule, path.string() + ": " + e.what());
  }
}

void save_json(const std::filesystem::path& path, const Json& j) {
  auto out = open_out(path);
  out << j.dump(2) << '\n';
  if (!out) throw IoError(kModule, "write failed for " + path.string());
}

void apply_config(const Json& j, ProblemConfig& cfg) {
  if (!j.is_object()) throw ValidationError(kModule, "config must be a key/value table");
  for (const auto& [key, v] : j.items()) {
    if (key == "alpha") set_field(v, "alpha", cfg.alpha);
    else if (key == "alpha0") set_field(v, "alpha0", cfg.alpha0);
    else if (key == "eta0") set_field(v, "eta0", cfg.eta0);
    else if (key == "M") set_field(v, "M", cfg.M);
    else if (key == "eta") set_field(v, "eta", cfg.eta);
    else if (key == "max_iter") set_field(v, "max_iter", cfg.max_iter);
    else if (key == "tol") set_field(v, "tol", cfg.tol);
    else if (key == "ridge") set_field(v, "ridge", cfg.ridge);
    else if (key == "seed") set_field(v, "seed", cfg.seed);
    else if (key == "no_shift") set_field(v, "no_shift", cfg.no_shift);
    else if (key == "cv_ridge") set_field(v, "cv_ridge", cfg.cv_ridge);
    else if (key == "gap_check_every") set_field(v, "gap_check_every", cfg.gap_check_every);
    else throw ValidationError(kModule, "unknown config field '" + key + "'");
  }
}

ProblemConfig load_config(const std::filesystem::path& path, ProblemConfig base) {
  Json j;
  if (path.extension() == ".json") {
    j = load_json(path);
  } else {
    auto in = open_in(path);
    std::vector<CLI::ConfigItem> items;
    try {
      items = CLI::ConfigTOML().from_config(in);
    } catch (const CLI::Error& e) {
      throw ParseError(kModule, path.string() + ": " + e.what());
    }
    j = Json::object();
    for (const auto& item : items) {
      if (item.name == "++" || item.name == "--") continue;
      if (!item.parents.empty()) {
        throw ValidationError(kModule, "config tables are not supported: " + item.fullname());
      }
      if (item.inputs.size() != 1) {
        throw ValidationError(kModule, "config field '" + item.name + "' must be a scalar");
      }
      j[item.name] = scalar_from_text(item.inputs.front());
    }
  }
  apply_config(j, base);
  base.validate();
  return base;
}

}  // namespace cgdro
