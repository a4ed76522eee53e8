#include "mslr/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "mslr/error.hpp"

namespace mslr {

double GradCheckReport::max_rel_err() const {
  double worst = 0.0;
  for (const auto& p : params) worst = std::max(worst, p.max_rel_err);
  return worst;
}

bool GradCheckReport::passed() const {
  return std::all_of(params.begin(), params.end(), [](const ParamCheck& p) { return p.flagged == 0; });
}

namespace {

double evaluate(const std::function<Tensor()>& f) {
  Tensor out = f();
  if (out.numel() != 1) throw InvalidCheckError("checked function must return a scalar");
  return out.item();
}

}  // namespace

GradCheckReport finite_diff_check(const std::function<Tensor()>& f, const std::vector<NamedTensor>& params,
                                  const GradCheckOptions& options) {
  if (!(options.step > 0.0)) throw InvalidCheckError("finite-difference step must be positive");
  for (const auto& p : params) {
    if (!p.tensor.requires_grad()) throw InvalidCheckError(p.name + " does not require gradients");
  }

  for (const auto& p : params) Tensor(p.tensor).zero_grad();
  double base = 0.0;
  {
    GradientTape tape;
    Tensor loss = f();
    if (loss.numel() != 1) throw InvalidCheckError("checked function must return a scalar");
    base = loss.item();
    tape.backward(loss);
  }
  if (evaluate(f) != base) throw InvalidCheckError("checked function is not deterministic");

  GradCheckReport report;
  report.tolerance = options.tolerance;
  const double h = options.step;
  const double floor = options.floor * std::max(1.0, std::abs(base));
  for (const auto& p : params) {
    Tensor t = p.tensor;
    const std::vector<double> analytic(t.grad().begin(), t.grad().end());
    ParamCheck pc;
    pc.name = p.name;
    auto values = t.mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double orig = values[i];
      values[i] = orig + h;
      const double plus = evaluate(f);
      values[i] = orig - h;
      const double minus = evaluate(f);
      values[i] = orig;

      const double right = (plus - base) / h;
      const double left = (base - minus) / h;
      const double central = (plus - minus) / (2.0 * h);
      if (std::abs(right - left) > options.kink_threshold * std::max(1.0, std::abs(central))) {
        ++pc.skipped;
        continue;
      }
      const double a = analytic[i];
      const double denom = std::max({std::abs(a), std::abs(central), floor});
      const double rel = std::abs(a - central) / denom;
      ++pc.checked;
      if (rel > pc.max_rel_err) {
        pc.max_rel_err = rel;
        pc.worst_index = i;
      }
      if (rel > options.tolerance) ++pc.flagged;
    }
    report.params.push_back(pc);
  }
  return report;
}

}  // namespace mslr
