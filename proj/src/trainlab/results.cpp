#include "vpl/trainlab/results.hpp"

#include <algorithm>
#include <cstdarg>
#include <cstdio>

namespace vpl {

std::string strfmt(const char* fmt, ...) {
  va_list args;
  va_start(args, fmt);
  va_list copy;
  va_copy(copy, args);
  const int n = std::vsnprintf(nullptr, 0, fmt, copy);
  va_end(copy);
  std::string out(static_cast<std::size_t>(n > 0 ? n : 0), '\0');
  if (n > 0) std::vsnprintf(out.data(), out.size() + 1, fmt, args);
  va_end(args);
  return out;
}

namespace {

std::vector<std::string> cells(const ResultRow& r) {
  return {r.method,
          strfmt("%.4f", r.total_params_multiplier),
          r.dataset,
          r.split,
          strfmt("%.6f", r.accuracy),
          r.auroc ? strfmt("%.6f", *r.auroc) : std::string(),
          std::to_string(r.seed)};
}

}  // namespace

void write_results_csv(std::ostream& out, const std::vector<ResultRow>& rows) {
  out << kResultsHeader << '\n';
  for (const auto& r : rows) {
    const auto c = cells(r);
    for (std::size_t i = 0; i < c.size(); ++i) out << (i ? "," : "") << c[i];
    out << '\n';
  }
}

void write_markdown_table(std::ostream& out, const std::vector<std::vector<std::string>>& rows) {
  if (rows.empty()) return;
  std::vector<std::size_t> width(rows.front().size(), 3);
  for (const auto& r : rows) {
    for (std::size_t i = 0; i < r.size() && i < width.size(); ++i) {
      width[i] = std::max(width[i], r[i].size());
    }
  }
  auto line = [&](const std::vector<std::string>& r) {
    out << '|';
    for (std::size_t i = 0; i < width.size(); ++i) {
      const std::string& s = i < r.size() ? r[i] : std::string();
      out << ' ' << s << std::string(width[i] - s.size(), ' ') << " |";
    }
    out << '\n';
  };
  line(rows.front());
  out << '|';
  for (std::size_t w : width) out << std::string(w + 2, '-') << '|';
  out << '\n';
  for (std::size_t i = 1; i < rows.size(); ++i) line(rows[i]);
}

void write_results_markdown(std::ostream& out, const std::vector<ResultRow>& rows) {
  std::vector<std::vector<std::string>> table{
      {"method", "total_params_multiplier", "dataset", "split", "accuracy", "auroc", "seed"}};
  for (const auto& r : rows) table.push_back(cells(r));
  write_markdown_table(out, table);
}

}  // namespace vpl
