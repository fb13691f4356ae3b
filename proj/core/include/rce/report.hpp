#pragma once

#include <cstddef>
#include <filesystem>
#include <limits>
#include <string>
#include <vector>

namespace rce::eval {

/// One CSV row. NaN epsilon / kappa / value are written as empty fields.
struct Measurement {
  std::string run_id;
  std::string dataset;
  std::string objective;
  std::string attack;
  std::string metric;
  double epsilon = std::numeric_limits<double>::quiet_NaN();
  double kappa = std::numeric_limits<double>::quiet_NaN();
  double value = std::numeric_limits<double>::quiet_NaN();
  std::size_t n = 0;

  bool operator==(const Measurement& other) const;
};

struct EvalReport {
  std::string run_id;
  std::vector<Measurement> rows;
  /// JSON object text with seeds and configs; "{}" when unset.
  std::string metadata = "{}";

  bool operator==(const EvalReport& other) const = default;
};

inline constexpr const char* kCsvHeader = "run_id,dataset,objective,attack,metric,epsilon,kappa,value,n";

std::string to_csv(const EvalReport& report);
std::string to_json(const EvalReport& report);
EvalReport report_from_json(const std::string& text);

/// Writes `<stem>.csv` and `<stem>.json`.
void emit_report(const EvalReport& report, const std::filesystem::path& stem);
EvalReport load_report(const std::filesystem::path& json_path);

/// Shortest round-trip decimal form; empty for NaN.
std::string format_number(double v);

}  // namespace rce::eval
