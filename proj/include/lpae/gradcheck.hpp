#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "lpae/autograd.hpp"

namespace lpae {

struct GradCheckResult {
  bool ok = true;
  double max_rel_err = 0;
  std::string worst;  // "input 2, element 17" style location of the max error

  explicit operator bool() const { return ok; }
};

// Compares tape gradients against central finite differences. make_loss must
// rebuild the graph from the current values of the inputs on every call and
// return a scalar. Use double precision and inputs sampled away from
// non-differentiable points (e.g. |x| > 1e-3 for relu); with h = 1e-5 the
// agreement threshold of 1e-3 on the symmetric relative error
// |a - n| / max(1, |a| + |n|) is then comfortably met by correct gradients.
template <typename T, typename F>
GradCheckResult grad_check(F&& make_loss, const std::vector<Var<T>*>& inputs,
                           T h = T(1e-5), double tol = 1e-3) {
  static_assert(std::is_floating_point_v<T>, "grad_check needs a real scalar type");

  Tape<T> tape;
  Var<T> loss = make_loss(tape);
  for (Var<T>* v : inputs) v->zero_grad();
  backward(tape, loss);

  std::vector<Tensor<T>> analytic;
  analytic.reserve(inputs.size());
  for (Var<T>* v : inputs) {
    if (!v->has_grad())
      throw NumericError("grad_check: input never received a gradient");
    analytic.push_back(v->grad());
  }

  auto eval = [&]() -> T {
    Tape<T> t;
    t.set_recording(false);
    return make_loss(t).value()[0];
  };

  GradCheckResult res;
  for (std::size_t vi = 0; vi < inputs.size(); ++vi) {
    Tensor<T>& val = inputs[vi]->value();
    for (std::size_t i = 0; i < val.size(); ++i) {
      const T saved = val[i];
      val[i] = saved + h;
      const T up = eval();
      val[i] = saved - h;
      const T down = eval();
      val[i] = saved;
      const double numeric = (static_cast<double>(up) - down) / (2.0 * static_cast<double>(h));
      const double a = analytic[vi][i];
      const double rel = std::abs(a - numeric) / std::max(1.0, std::abs(a) + std::abs(numeric));
      if (rel > res.max_rel_err) {
        res.max_rel_err = rel;
        res.worst = "input " + std::to_string(vi) + ", element " + std::to_string(i);
      }
    }
  }
  res.ok = res.max_rel_err <= tol;
  return res;
}

}  // namespace lpae
