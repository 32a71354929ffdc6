#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "tape.hpp"

namespace jfbctrl {

// Finite-horizon control problem: minimize integral of L plus terminal G
// subject to dz/dt = f(t, z, u). Dynamics and costs are tape expressions;
// the analytic control derivatives below feed the feedback operator and stay
// differentiable with respect to everything they touch.
class ControlProblem {
 public:
  virtual ~ControlProblem() = default;

  std::size_t state_dim() const { return n_; }
  std::size_t control_dim() const { return m_; }
  std::size_t agents() const { return agents_; }
  double horizon() const { return horizon_; }
  void set_horizon(double T) { horizon_ = T; }
  virtual std::string name() const = 0;

  virtual Var dynamics(Tape& tape, double t, Var z, Var u) const = 0;
  virtual Var running_cost(Tape& tape, double t, Var z, Var u) const = 0;
  virtual Var terminal_cost(Tape& tape, Var z) const = 0;

  // grad_u L and (df/du)^T p as tape expressions.
  virtual Var grad_u_running_cost(Tape& tape, double t, Var z, Var u) const = 0;
  virtual Var grad_u_dynamics_costate(Tape& tape, double t, Var z, Var u, Var p) const = 0;

  // Control-domain projection; identity unless a family overrides it.
  virtual Var project_control(Tape& tape, Var z, Var u) const;
  virtual std::vector<double> project_control_values(const std::vector<double>& z, std::vector<double> u) const;
  virtual bool admissible(const std::vector<double>& z, const std::vector<double>& u) const;

  // Starting control for a cold fixed-point solve. Zero works for box-like
  // domains; half-open domains must start strictly inside, away from any
  // boundary where the Hamiltonian gradient is singular.
  virtual std::vector<double> initial_control(const std::vector<double>& z) const {
    (void)z;
    return std::vector<double>(m_, 0.0);
  }

  // Deterministic initial-state distribution: draw `index` of stream `seed`.
  virtual std::vector<double> sample_initial_state(std::uint64_t seed, std::uint64_t index) const = 0;

  virtual bool has_exact_maximizer() const { return false; }
  virtual std::vector<double> exact_maximizer(double t, const std::vector<double>& z,
                                              const std::vector<double>& p) const;

 protected:
  ControlProblem(std::size_t n, std::size_t m, std::size_t agents) : n_(n), m_(m), agents_(agents) {}
  std::size_t n_ = 0, m_ = 0, agents_ = 1;
  double horizon_ = 1.0;
};

// ---------------------------------------------------------------------------

struct LqrParams {
  Tensor A, B, Q, R, QT;  // per-agent matrices; replicated block-diagonally
  static LqrParams scalar_default();
};

class LqrProblem final : public ControlProblem {
 public:
  LqrProblem(LqrParams params, std::size_t agents = 1);

  std::string name() const override { return "lqr"; }
  Var dynamics(Tape& tape, double t, Var z, Var u) const override;
  Var running_cost(Tape& tape, double t, Var z, Var u) const override;
  Var terminal_cost(Tape& tape, Var z) const override;
  Var grad_u_running_cost(Tape& tape, double t, Var z, Var u) const override;
  Var grad_u_dynamics_costate(Tape& tape, double t, Var z, Var u, Var p) const override;
  std::vector<double> sample_initial_state(std::uint64_t seed, std::uint64_t index) const override;
  bool has_exact_maximizer() const override { return true; }
  std::vector<double> exact_maximizer(double t, const std::vector<double>& z,
                                      const std::vector<double>& p) const override;

  const Tensor& a_full() const { return a_; }
  const Tensor& b_full() const { return b_; }
  const Tensor& q_full() const { return q_; }
  const Tensor& r_full() const { return r_; }
  const Tensor& qt_full() const { return qt_; }

 private:
  Tensor a_, b_, q_, r_, qt_;  // full (replicated) matrices
};

// Backward recursion for the continuous Riccati equation on the rollout grid,
// marched from the terminal condition with explicit first-order steps.
struct RiccatiSolution {
  std::vector<double> times;
  std::vector<Tensor> p;  // value Hessians P_k, symmetric PSD
  std::vector<Tensor> k;  // gains K_k = R^{-1} B' P_k

  double optimal_cost(const std::vector<double>& x) const;
  std::vector<double> feedback(std::size_t step, const std::vector<double>& x) const;
};

RiccatiSolution lqr_riccati(const LqrProblem& problem, std::size_t steps, double horizon);

// ---------------------------------------------------------------------------

struct QuadrotorParams {
  double mass = 1.0;
  double gravity = 9.81;
  std::array<double, 3> inertia = {0.02, 0.02, 0.04};
  double c_u = 0.1;      // quadratic control penalty
  double c_e = 0.01;     // exponential control penalty weight
  double kappa_e = 1.0;  // exponential control penalty rate
  double c_z = 1.0;      // running position penalty
  double c_t = 50.0;     // terminal position penalty
  std::array<double, 3> target = {0.0, 0.0, 0.0};
  bool interaction = false;  // pairwise soft-collision cost
  double c_int = 1.0;
  double sigma_int = 1.0;
};

// Rigid body with Euler angles: per agent 12 states (position, velocity,
// roll/pitch/yaw, body rates) and 4 controls (thrust, three torques). The
// Euler-rate map divides by a pitch cosine clamped away from zero, which is
// exact for small angles and degrades gracefully near the gimbal singularity.
class QuadrotorProblem final : public ControlProblem {
 public:
  explicit QuadrotorProblem(QuadrotorParams params, std::size_t agents = 1);

  std::string name() const override { return "quadrotor"; }
  Var dynamics(Tape& tape, double t, Var z, Var u) const override;
  Var running_cost(Tape& tape, double t, Var z, Var u) const override;
  Var terminal_cost(Tape& tape, Var z) const override;
  Var grad_u_running_cost(Tape& tape, double t, Var z, Var u) const override;
  Var grad_u_dynamics_costate(Tape& tape, double t, Var z, Var u, Var p) const override;
  std::vector<double> sample_initial_state(std::uint64_t seed, std::uint64_t index) const override;

  const QuadrotorParams& params() const { return prm_; }

 private:
  Var thrust_axis(Tape& tape, Var z, std::size_t agent) const;
  QuadrotorParams prm_;
};

// ---------------------------------------------------------------------------

struct BicycleParams {
  double wheelbase = 1.0;
  double c_u = 0.1;
  double c_z = 1.0;
  double c_t = 10.0;
  std::array<double, 2> target = {0.0, 0.0};
  double steer_limit = 1.2;  // radians; control domain clamps steering here
  bool interaction = false;
  double c_int = 1.0;
  double sigma_int = 1.0;
};

// Kinematic bicycle: per agent 4 states (x, y, heading, speed) and 2 controls
// (acceleration, steering angle).
class BicycleProblem final : public ControlProblem {
 public:
  explicit BicycleProblem(BicycleParams params, std::size_t agents = 1);

  std::string name() const override { return "bicycle"; }
  Var dynamics(Tape& tape, double t, Var z, Var u) const override;
  Var running_cost(Tape& tape, double t, Var z, Var u) const override;
  Var terminal_cost(Tape& tape, Var z) const override;
  Var grad_u_running_cost(Tape& tape, double t, Var z, Var u) const override;
  Var grad_u_dynamics_costate(Tape& tape, double t, Var z, Var u, Var p) const override;
  Var project_control(Tape& tape, Var z, Var u) const override;
  std::vector<double> project_control_values(const std::vector<double>& z, std::vector<double> u) const override;
  bool admissible(const std::vector<double>& z, const std::vector<double>& u) const override;
  std::vector<double> sample_initial_state(std::uint64_t seed, std::uint64_t index) const override;

  const BicycleParams& params() const { return prm_; }

 private:
  BicycleParams prm_;
};

// ---------------------------------------------------------------------------

struct ConsumptionParams {
  double r = 0.05;              // interest rate
  std::vector<double> a = {0.1};  // habit formation weights, diagonal
  std::vector<double> b = {0.1};  // habit decay weights, diagonal, nonnegative
  double eta = 0.8;             // habit formation exponent
  double theta = 1.0;           // habit decay exponent
  double delta = 0.05;          // utility discount rate
  double gamma = 2.0;           // relative risk aversion, positive, != 1
  double eps_term = 0.5;        // terminal wealth utility weight
  std::size_t m = 1;            // goods per agent
};

// Consumption-savings with habit formation: per agent one wealth state plus m
// habit states, m controls. Utilities enter negated so the problem minimizes.
// Controls must stay above habits; the domain projection enforces a margin.
class ConsumptionProblem final : public ControlProblem {
 public:
  explicit ConsumptionProblem(ConsumptionParams params, std::size_t agents = 1);

  std::string name() const override { return "consumption"; }
  Var dynamics(Tape& tape, double t, Var z, Var u) const override;
  Var running_cost(Tape& tape, double t, Var z, Var u) const override;
  Var terminal_cost(Tape& tape, Var z) const override;
  Var grad_u_running_cost(Tape& tape, double t, Var z, Var u) const override;
  Var grad_u_dynamics_costate(Tape& tape, double t, Var z, Var u, Var p) const override;
  Var project_control(Tape& tape, Var z, Var u) const override;
  std::vector<double> project_control_values(const std::vector<double>& z, std::vector<double> u) const override;
  bool admissible(const std::vector<double>& z, const std::vector<double>& u) const override;
  // Cold solves start one unit above the habit: the marginal utility is
  // singular at the domain boundary, so a boundary seed overshoots wildly.
  std::vector<double> initial_control(const std::vector<double>& z) const override;
  std::vector<double> sample_initial_state(std::uint64_t seed, std::uint64_t index) const override;

  const ConsumptionParams& params() const { return prm_; }
  static constexpr double kControlMargin = 1e-4;  // projected controls sit at least this far above habits
  // Terminal utility continues linearly below this wealth level. Optimal
  // paths keep terminal wealth well above it; the linearization only tames
  // the barrier gradient while the policy is still bad. The floor trades
  // barrier fidelity against the gradient scale (floor^-gamma) the trainer
  // has to absorb.
  static constexpr double kWealthFloor = 0.1;

 private:
  ConsumptionParams prm_;
};

// Stationarity residual of the consumption Hamiltonian in the sign convention
// where p_x prices wealth positively: e^{-dt}(u-h)^{-g} - p_x + A eta p_h u^(eta-1).
// Errors if any control does not exceed its habit.
std::vector<double> consumption_foc_residual(const ConsumptionParams& prm, double t, double x,
                                             const std::vector<double>& h, const std::vector<double>& u,
                                             double p_x, const std::vector<double>& p_h);

// ---------------------------------------------------------------------------

// Factory with per-family defaults: lqr, quadrotor, bicycle, consumption.
std::unique_ptr<ControlProblem> make_problem(const std::string& name, std::size_t agents);

}  // namespace jfbctrl
