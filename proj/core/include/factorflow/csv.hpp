#pragma once

#include <string>
#include <vector>

namespace factorflow {

/// Minimal CSV writer/reader for the experiment records.  Numbers are
/// written with 17 significant digits so reloading reproduces aggregates
/// exactly.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

std::string format_double(double v);
void write_csv(const CsvTable& table, const std::string& path);
CsvTable read_csv(const std::string& path);

}  // namespace factorflow
