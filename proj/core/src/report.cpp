#include "rce/report.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <fmt/format.h>
#include <json.hpp>

namespace rce::eval {

using json = nlohmann::ordered_json;

namespace {

bool same(double a, double b) { return (std::isnan(a) && std::isnan(b)) || a == b; }

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string q = "\"";
  for (char c : s) {
    if (c == '"') q += '"';
    q += c;
  }
  return q + "\"";
}

json number(double v) { return std::isnan(v) ? json(nullptr) : json(v); }

double number_from(const json& j) {
  return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>();
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

}  // namespace

bool Measurement::operator==(const Measurement& o) const {
  return run_id == o.run_id && dataset == o.dataset && objective == o.objective && attack == o.attack &&
         metric == o.metric && same(epsilon, o.epsilon) && same(kappa, o.kappa) && same(value, o.value) && n == o.n;
}

std::string format_number(double v) {
  if (std::isnan(v)) return "";
  return fmt::format("{}", v);
}

std::string to_csv(const EvalReport& report) {
  std::string out = std::string(kCsvHeader) + "\n";
  for (const auto& m : report.rows) {
    out += fmt::format("{},{},{},{},{},{},{},{},{}\n", csv_field(m.run_id), csv_field(m.dataset), csv_field(m.objective),
                       csv_field(m.attack), csv_field(m.metric), format_number(m.epsilon), format_number(m.kappa),
                       format_number(m.value), m.n);
  }
  return out;
}

std::string to_json(const EvalReport& report) {
  json j;
  j["run_id"] = report.run_id;
  j["metadata"] = json::parse(report.metadata);
  j["rows"] = json::array();
  for (const auto& m : report.rows) {
    json r;
    r["run_id"] = m.run_id;
    r["dataset"] = m.dataset;
    r["objective"] = m.objective;
    r["attack"] = m.attack;
    r["metric"] = m.metric;
    r["epsilon"] = number(m.epsilon);
    r["kappa"] = number(m.kappa);
    r["value"] = number(m.value);
    r["n"] = m.n;
    j["rows"].push_back(std::move(r));
  }
  return j.dump(2) + "\n";
}

EvalReport report_from_json(const std::string& text) {
  const json j = json::parse(text);
  EvalReport r;
  r.run_id = j.at("run_id").get<std::string>();
  r.metadata = j.at("metadata").dump();
  for (const auto& row : j.at("rows")) {
    Measurement m;
    m.run_id = row.at("run_id").get<std::string>();
    m.dataset = row.at("dataset").get<std::string>();
    m.objective = row.at("objective").get<std::string>();
    m.attack = row.at("attack").get<std::string>();
    m.metric = row.at("metric").get<std::string>();
    m.epsilon = number_from(row.at("epsilon"));
    m.kappa = number_from(row.at("kappa"));
    m.value = number_from(row.at("value"));
    m.n = row.at("n").get<std::size_t>();
    r.rows.push_back(std::move(m));
  }
  return r;
}

void emit_report(const EvalReport& report, const std::filesystem::path& stem) {
  if (!json::accept(report.metadata)) throw std::invalid_argument("report metadata is not valid JSON");
  std::filesystem::path csv = stem, js = stem;
  csv += ".csv";
  js += ".json";
  write_file(csv, to_csv(report));
  write_file(js, to_json(report));
}

EvalReport load_report(const std::filesystem::path& json_path) {
  std::ifstream in(json_path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + json_path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return report_from_json(ss.str());
}

}  // namespace rce::eval
