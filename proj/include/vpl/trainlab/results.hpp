#pragma once

#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace vpl {

struct ResultRow {
  std::string method;
  double total_params_multiplier = 0.0;
  std::string dataset;
  std::string split;
  double accuracy = 0.0;
  std::optional<double> auroc;
  std::uint64_t seed = 0;
};

inline constexpr const char* kResultsHeader =
    "method,total_params_multiplier,dataset,split,accuracy,auroc,seed";

void write_results_csv(std::ostream& out, const std::vector<ResultRow>& rows);
/// Aligned pipe table with the same columns.
void write_results_markdown(std::ostream& out, const std::vector<ResultRow>& rows);

/// printf-style formatting into a std::string.
std::string strfmt(const char* fmt, ...) __attribute__((format(printf, 1, 2)));

/// Pipe table with padded columns; the first row is the header.
void write_markdown_table(std::ostream& out, const std::vector<std::vector<std::string>>& rows);

}  // namespace vpl
