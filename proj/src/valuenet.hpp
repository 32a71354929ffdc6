#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "tape.hpp"

namespace jfbctrl {

// A value function bound to one tape: expressions share one set of parameter
// leaves so reverse sweeps accumulate across every use on that tape.
class BoundValue {
 public:
  virtual ~BoundValue() = default;
  virtual Var phi(Var t, Var z) = 0;
  virtual Var grad_z(Var t, Var z) = 0;
  virtual const std::vector<Var>& param_leaves() const = 0;
  // Collects the parameter-leaf gradients of a sweep into flat layout.
  virtual Tensor flat_param_grad(const VjpResult& res) const = 0;
};

class ValueFunction {
 public:
  virtual ~ValueFunction() = default;
  virtual std::size_t param_count() const = 0;
  virtual std::size_t state_dim() const = 0;
  virtual std::unique_ptr<BoundValue> bind(Tape& tape) const = 0;

  virtual void get_params(std::vector<double>& out) const = 0;
  virtual void set_params(const std::vector<double>& in) = 0;

  // Plain (tape-free) evaluation for reporting.
  virtual double eval(double t, const std::vector<double>& z) const = 0;
  virtual std::vector<double> eval_grad_z(double t, const std::vector<double>& z) const = 0;
};

// Fully connected tanh network phi(t, z): input is time prepended to the
// state, output is a scalar. Parameters flatten layer by layer, weights
// row-major then bias.
class MlpValueNetwork final : public ValueFunction {
 public:
  enum class Init { Uniform, Zero };

  // widths = [1+n, hidden..., 1]
  MlpValueNetwork(std::vector<std::size_t> widths, std::uint64_t seed, Init init = Init::Uniform);

  static std::vector<std::size_t> default_widths(std::size_t state_dim) {
    return {1 + state_dim, 64, 64, 1};
  }

  std::size_t param_count() const override { return theta_.size(); }
  std::size_t state_dim() const override { return widths_.front() - 1; }
  const std::vector<std::size_t>& widths() const { return widths_; }
  std::uint64_t seed() const { return seed_; }

  std::unique_ptr<BoundValue> bind(Tape& tape) const override;

  void get_params(std::vector<double>& out) const override { out = theta_; }
  void set_params(const std::vector<double>& in) override;
  const std::vector<double>& params() const { return theta_; }
  double* param_data() { return theta_.data(); }

  double eval(double t, const std::vector<double>& z) const override;
  std::vector<double> eval_grad_z(double t, const std::vector<double>& z) const override;

  void save(const std::string& path) const;
  static MlpValueNetwork load(const std::string& path);

 private:
  std::vector<std::size_t> widths_;
  std::uint64_t seed_ = 0;
  std::vector<double> theta_;
};

// Quadratic value function 0.5 z' P(t) z with P linearly interpolated on a
// time grid. Carries no trainable parameters; used as a reference controller.
class QuadraticValueFunction final : public ValueFunction {
 public:
  QuadraticValueFunction(std::vector<double> times, std::vector<Tensor> p_matrices);

  std::size_t param_count() const override { return 0; }
  std::size_t state_dim() const override { return n_; }
  std::unique_ptr<BoundValue> bind(Tape& tape) const override;

  void get_params(std::vector<double>& out) const override { out.clear(); }
  void set_params(const std::vector<double>&) override {}

  double eval(double t, const std::vector<double>& z) const override;
  std::vector<double> eval_grad_z(double t, const std::vector<double>& z) const override;

  Tensor p_at(double t) const;

 private:
  std::vector<double> times_;
  std::vector<Tensor> p_;
  std::size_t n_ = 0;
};

}  // namespace jfbctrl
