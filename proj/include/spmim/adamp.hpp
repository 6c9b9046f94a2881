#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>

#include "json.hpp"
#include "spmim/autodiff.hpp"

namespace spmim {

struct AdamPOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-2;
  double delta = 0.1;     // projection fires when max |cos(grad, w)| < delta / sqrt(dim)
  double wd_ratio = 0.1;  // weight-decay multiplier for projected tensors
  bool nesterov = false;
  bool projection = true;  // false: plain Adam with decoupled weight decay

  nlohmann::json to_json() const;
  static AdamPOptions from_json(const nlohmann::json& j);
};

// Adam with decoupled weight decay whose update, for multi-dimensional
// weights that look scale-invariant (gradient nearly orthogonal to the
// weight, per output channel or for the whole tensor), has its radial
// component removed.
class AdamP {
 public:
  struct Moments {
    Tensor m;
    Tensor v;
  };

  explicit AdamP(AdamPOptions options = {}) : options_(options) {}

  // One update of every parameter from its .grad. All gradients are checked
  // first; a non-finite gradient refuses the whole step (NumericalError).
  void step(std::span<Parameter* const> params);

  std::int64_t step_count() const { return step_; }
  const AdamPOptions& options() const { return options_; }
  void set_lr(double lr) { options_.lr = lr; }

  std::map<std::string, Moments>& state() { return state_; }
  const std::map<std::string, Moments>& state() const { return state_; }
  void set_step_count(std::int64_t t) { step_ = t; }

 private:
  AdamPOptions options_;
  std::map<std::string, Moments> state_;
  std::int64_t step_ = 0;
};

// Removes from `update` its component along `weight`, per row of a
// [rows, cols] view. The weight rows are normalized exactly (eps only guards
// zero norm).
void project_out_radial(std::span<double> update, std::span<const double> weight, int rows, double eps);

}  // namespace spmim
