#include "vpl/numcore/grad_check.hpp"

#include <algorithm>
#include <cmath>

#include "vpl/numcore/error.hpp"

namespace vpl {

bool GradCheckReport::passed() const {
  return std::all_of(params.begin(), params.end(), [](const auto& e) { return e.passed; });
}

std::vector<std::string> GradCheckReport::failures() const {
  std::vector<std::string> ids;
  for (const auto& e : params) {
    if (!e.passed) ids.push_back(e.id);
  }
  return ids;
}

const GradCheckEntry* GradCheckReport::find(const std::string& id) const {
  auto it = std::find_if(params.begin(), params.end(), [&](const auto& e) { return e.id == id; });
  return it == params.end() ? nullptr : &*it;
}

double relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

namespace {

double eval_loss(const LossFn& loss) {
  Tape tape;
  Var l = loss(tape);
  if (l.value().size() != 1) throw DimensionError("grad_check: loss must be a scalar");
  return l.value()[0];
}

}  // namespace

GradCheckReport grad_check(ParameterSet& params, const LossFn& loss, double step, double tol) {
  if (!(step > 0.0)) throw ConfigError("grad_check: step must be positive");
  params.zero_grad();
  {
    Tape tape;
    Var l = loss(tape);
    tape.backward(l);
  }
  GradCheckReport report;
  report.tolerance = tol;
  for (auto& p : params) {
    if (!p.trainable) continue;
    GradCheckEntry entry;
    entry.id = p.id;
    entry.entries = p.value.size();
    const Tensor analytic = p.grad.empty() ? Tensor(p.value.shape()) : p.grad;
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double original = p.value[i];
      p.value[i] = original + step;
      const double up = eval_loss(loss);
      p.value[i] = original - step;
      const double down = eval_loss(loss);
      p.value[i] = original;
      const double numeric = (up - down) / (2.0 * step);
      entry.max_rel_error = std::max(entry.max_rel_error, relative_error(analytic[i], numeric));
    }
    entry.passed = entry.max_rel_error <= tol;
    report.params.push_back(std::move(entry));
  }
  params.zero_grad();
  return report;
}

}  // namespace vpl
