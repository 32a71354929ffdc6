#include "problems.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <limits>

#include "rng.hpp"

namespace jfbctrl {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

Eigen::MatrixXd to_eigen(const Tensor& t) {
  Eigen::MatrixXd m(t.rows(), t.cols());
  for (std::size_t i = 0; i < t.rows(); ++i)
    for (std::size_t j = 0; j < t.cols(); ++j) m(i, j) = t.at(i, j);
  return m;
}

void require_square(const Tensor& t, std::size_t n, const char* what) {
  if (t.rank() != 2 || t.shape()[0] != n || t.shape()[1] != n)
    throw ConfigError(std::string("lqr: ") + what + " must be " + std::to_string(n) + "x" + std::to_string(n));
}

void require_symmetric_psd(const Tensor& t, const char* what) {
  Eigen::MatrixXd m = to_eigen(t);
  if ((m - m.transpose()).lpNorm<Eigen::Infinity>() > 1e-10)
    throw ConfigError(std::string("lqr: ") + what + " must be symmetric");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
  if (es.eigenvalues().minCoeff() < -1e-10)
    throw ConfigError(std::string("lqr: ") + what + " must be positive semidefinite");
}

Tensor block_replicate(const Tensor& base, std::size_t agents) {
  const std::size_t r = base.shape()[0], c = base.shape()[1];
  Tensor out = Tensor::zeros({r * agents, c * agents});
  for (std::size_t a = 0; a < agents; ++a)
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) out.at(a * r + i, a * c + j) = base.at(i, j);
  return out;
}

// Scalar view of a length-one slice.
Var scalar_at(Var v, std::size_t index) { return sum(slice(v, index, 1)); }

Var pairwise_interaction(Tape& tape, Var z, std::size_t agents, std::size_t block, std::size_t pos_dim,
                         double c_int, double sigma) {
  Var total = tape.constant(0.0);
  for (std::size_t i = 0; i < agents; ++i)
    for (std::size_t j = i + 1; j < agents; ++j) {
      Var d = sub(slice(z, i * block, pos_dim), slice(z, j * block, pos_dim));
      total = add(total, exp(affine(dot(d, d), -1.0 / (sigma * sigma), 0.0)));
    }
  return affine(total, c_int, 0.0);
}

}  // namespace

Var ControlProblem::project_control(Tape&, Var, Var u) const { return u; }

std::vector<double> ControlProblem::project_control_values(const std::vector<double>&, std::vector<double> u) const {
  return u;
}

bool ControlProblem::admissible(const std::vector<double>&, const std::vector<double>&) const { return true; }

std::vector<double> ControlProblem::exact_maximizer(double, const std::vector<double>&,
                                                    const std::vector<double>&) const {
  throw RuntimeError(name() + ": no closed-form maximizer");
}

// --------------------------------------------------------------------------- lqr

LqrParams LqrParams::scalar_default() {
  LqrParams p;
  p.A = Tensor::from({1, 1}, {0.0});
  p.B = Tensor::from({1, 1}, {1.0});
  p.Q = Tensor::from({1, 1}, {0.0});
  p.R = Tensor::from({1, 1}, {1.0});
  p.QT = Tensor::from({1, 1}, {1.0});
  return p;
}

LqrProblem::LqrProblem(LqrParams params, std::size_t agents)
    : ControlProblem(params.A.rows() * agents, params.B.cols() * agents, agents) {
  if (agents == 0) throw ConfigError("lqr: agents must be positive");
  const std::size_t n1 = params.A.rows(), m1 = params.B.cols();
  require_square(params.A, n1, "A");
  if (params.B.rank() != 2 || params.B.shape()[0] != n1)
    throw ConfigError("lqr: B must have one row per state");
  require_square(params.Q, n1, "Q");
  require_square(params.R, m1, "R");
  require_square(params.QT, n1, "Q_T");
  require_symmetric_psd(params.Q, "Q");
  require_symmetric_psd(params.QT, "Q_T");
  Eigen::MatrixXd r = to_eigen(params.R);
  if ((r - r.transpose()).lpNorm<Eigen::Infinity>() > 1e-10) throw ConfigError("lqr: R must be symmetric");
  Eigen::LLT<Eigen::MatrixXd> llt(r);
  if (llt.info() != Eigen::Success) throw ConfigError("lqr: R must be positive definite");
  a_ = block_replicate(params.A, agents);
  b_ = block_replicate(params.B, agents);
  q_ = block_replicate(params.Q, agents);
  r_ = block_replicate(params.R, agents);
  qt_ = block_replicate(params.QT, agents);
}

Var LqrProblem::dynamics(Tape& tape, double, Var z, Var u) const {
  return add(matmul(tape.constant(a_), z), matmul(tape.constant(b_), u));
}

Var LqrProblem::running_cost(Tape& tape, double, Var z, Var u) const {
  Var zq = dot(z, matmul(tape.constant(q_), z));
  Var ur = dot(u, matmul(tape.constant(r_), u));
  return affine(add(zq, ur), 0.5, 0.0);
}

Var LqrProblem::terminal_cost(Tape& tape, Var z) const {
  return affine(dot(z, matmul(tape.constant(qt_), z)), 0.5, 0.0);
}

Var LqrProblem::grad_u_running_cost(Tape& tape, double, Var, Var u) const {
  return matmul(tape.constant(r_), u);
}

Var LqrProblem::grad_u_dynamics_costate(Tape& tape, double, Var, Var, Var p) const {
  return matmul(tape.constant(b_), p, /*trans_a=*/true);
}

std::vector<double> LqrProblem::sample_initial_state(std::uint64_t seed, std::uint64_t index) const {
  auto rng = indexed_rng(seed, index);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> x(n_);
  for (auto& v : x) v = u(rng);
  return x;
}

std::vector<double> LqrProblem::exact_maximizer(double, const std::vector<double>&,
                                                const std::vector<double>& p) const {
  Eigen::VectorXd pe(n_);
  for (std::size_t i = 0; i < n_; ++i) pe[i] = p[i];
  Eigen::VectorXd rhs = -to_eigen(b_).transpose() * pe;
  Eigen::VectorXd u = Eigen::LLT<Eigen::MatrixXd>(to_eigen(r_)).solve(rhs);
  return std::vector<double>(u.data(), u.data() + u.size());
}

double RiccatiSolution::optimal_cost(const std::vector<double>& x) const {
  const Tensor& p0 = p.front();
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i)
    for (std::size_t j = 0; j < x.size(); ++j) s += x[i] * p0.at(i, j) * x[j];
  return 0.5 * s;
}

std::vector<double> RiccatiSolution::feedback(std::size_t step, const std::vector<double>& x) const {
  const Tensor& kk = k.at(step);
  std::vector<double> u(kk.shape()[0], 0.0);
  for (std::size_t i = 0; i < kk.shape()[0]; ++i)
    for (std::size_t j = 0; j < kk.shape()[1]; ++j) u[i] -= kk.at(i, j) * x[j];
  return u;
}

RiccatiSolution lqr_riccati(const LqrProblem& problem, std::size_t steps, double horizon) {
  if (steps == 0) throw ConfigError("riccati: need at least one step");
  const double dt = horizon / double(steps);
  Eigen::MatrixXd a = to_eigen(problem.a_full());
  Eigen::MatrixXd b = to_eigen(problem.b_full());
  Eigen::MatrixXd q = to_eigen(problem.q_full());
  Eigen::LLT<Eigen::MatrixXd> r_llt(to_eigen(problem.r_full()));
  Eigen::MatrixXd p = to_eigen(problem.qt_full());

  const std::size_t n = problem.state_dim(), m = problem.control_dim();
  RiccatiSolution sol;
  sol.times.resize(steps + 1);
  sol.p.resize(steps + 1);
  sol.k.resize(steps + 1);
  auto store = [&](std::size_t kidx, const Eigen::MatrixXd& pm) {
    sol.times[kidx] = dt * double(kidx);
    Tensor pt = Tensor::zeros({n, n});
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) pt.at(i, j) = pm(i, j);
    sol.p[kidx] = std::move(pt);
    Eigen::MatrixXd gain = r_llt.solve(b.transpose() * pm);
    Tensor kt = Tensor::zeros({m, n});
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) kt.at(i, j) = gain(i, j);
    sol.k[kidx] = std::move(kt);
  };

  store(steps, p);
  for (std::size_t kidx = steps; kidx-- > 0;) {
    Eigen::MatrixXd rinv_btp = r_llt.solve(b.transpose() * p);
    Eigen::MatrixXd dp = a.transpose() * p + p * a - p * b * rinv_btp + q;
    p = p + dt * dp;
    p = 0.5 * (p + p.transpose()).eval();
    store(kidx, p);
  }
  return sol;
}

// --------------------------------------------------------------------------- quadrotor

QuadrotorProblem::QuadrotorProblem(QuadrotorParams params, std::size_t agents)
    : ControlProblem(12 * agents, 4 * agents, agents), prm_(params) {
  if (agents == 0) throw ConfigError("quadrotor: agents must be positive");
  if (prm_.mass <= 0) throw ConfigError("quadrotor: mass must be positive");
  for (double j : prm_.inertia)
    if (j <= 0) throw ConfigError("quadrotor: inertia entries must be positive");
}

Var QuadrotorProblem::thrust_axis(Tape&, Var z, std::size_t agent) const {
  const std::size_t off = 12 * agent;
  Var roll = slice(z, off + 6, 1), pitch = slice(z, off + 7, 1), yaw = slice(z, off + 8, 1);
  Var sr = sin(roll), cr = cos(roll);
  Var sp = sin(pitch), cp = cos(pitch);
  Var sy = sin(yaw), cy = cos(yaw);
  std::array<Var, 3> comps{add(mul(mul(cr, sp), cy), mul(sr, sy)), sub(mul(mul(cr, sp), sy), mul(sr, cy)),
                           mul(cr, cp)};
  return concat(comps);
}

Var QuadrotorProblem::dynamics(Tape& tape, double, Var z, Var u) const {
  std::vector<Var> parts;
  for (std::size_t a = 0; a < agents_; ++a) {
    const std::size_t off = 12 * a, uoff = 4 * a;
    Var vel = slice(z, off + 3, 3);
    Var thrust = scalar_at(u, uoff);
    Var axis = thrust_axis(tape, z, a);
    Var gvec = tape.constant(Tensor::vec({0.0, 0.0, prm_.gravity}));
    Var veldot = sub(mul(affine(thrust, 1.0 / prm_.mass, 0.0), axis), gvec);

    Var roll = slice(z, off + 6, 1), pitch = slice(z, off + 7, 1);
    Var sr = sin(roll), cr = cos(roll);
    Var sp = sin(pitch), cp = cos(pitch);
    Var cp_safe = clamp(cp, 0.2, 1.0);
    Var sec = pow(cp_safe, -1.0);
    Var tp = mul(sp, sec);
    Var wx = slice(z, off + 9, 1), wy = slice(z, off + 10, 1), wz = slice(z, off + 11, 1);
    Var lateral = add(mul(sr, wy), mul(cr, wz));
    Var rolldot = add(wx, mul(tp, lateral));
    Var pitchdot = sub(mul(cr, wy), mul(sr, wz));
    Var yawdot = mul(sec, lateral);

    const auto& j = prm_.inertia;
    Var c0 = affine(mul(wy, wz), j[2] - j[1], 0.0);
    Var c1 = affine(mul(wz, wx), j[0] - j[2], 0.0);
    Var c2 = affine(mul(wx, wy), j[1] - j[0], 0.0);
    std::array<Var, 3> cross{c0, c1, c2};
    Var torque = slice(u, uoff + 1, 3);
    Var jinv = tape.constant(Tensor::vec({1.0 / j[0], 1.0 / j[1], 1.0 / j[2]}));
    Var ratedot = mul(sub(torque, concat(cross)), jinv);

    std::array<Var, 6> agent_parts{vel, veldot, rolldot, pitchdot, yawdot, ratedot};
    parts.push_back(concat(agent_parts));
  }
  return agents_ == 1 ? parts[0] : concat(parts);
}

Var QuadrotorProblem::running_cost(Tape& tape, double, Var z, Var u) const {
  Var cost = affine(dot(u, u), prm_.c_u, 0.0);
  cost = add(cost, affine(sum(exp(affine(u, prm_.kappa_e, 0.0))), prm_.c_e, 0.0));
  Var target = tape.constant(Tensor::vec({prm_.target[0], prm_.target[1], prm_.target[2]}));
  for (std::size_t a = 0; a < agents_; ++a) {
    Var d = sub(slice(z, 12 * a, 3), target);
    cost = add(cost, affine(dot(d, d), prm_.c_z, 0.0));
  }
  if (prm_.interaction && agents_ > 1)
    cost = add(cost, pairwise_interaction(tape, z, agents_, 12, 3, prm_.c_int, prm_.sigma_int));
  return cost;
}

Var QuadrotorProblem::terminal_cost(Tape& tape, Var z) const {
  Var target = tape.constant(Tensor::vec({prm_.target[0], prm_.target[1], prm_.target[2]}));
  Var cost = tape.constant(0.0);
  for (std::size_t a = 0; a < agents_; ++a) {
    Var d = sub(slice(z, 12 * a, 3), target);
    cost = add(cost, dot(d, d));
  }
  return affine(cost, prm_.c_t, 0.0);
}

Var QuadrotorProblem::grad_u_running_cost(Tape&, double, Var, Var u) const {
  Var quad = affine(u, 2.0 * prm_.c_u, 0.0);
  Var expo = affine(exp(affine(u, prm_.kappa_e, 0.0)), prm_.c_e * prm_.kappa_e, 0.0);
  return add(quad, expo);
}

Var QuadrotorProblem::grad_u_dynamics_costate(Tape& tape, double, Var z, Var, Var p) const {
  std::vector<Var> parts;
  for (std::size_t a = 0; a < agents_; ++a) {
    const std::size_t off = 12 * a;
    Var axis = thrust_axis(tape, z, a);
    Var p_vel = slice(p, off + 3, 3);
    Var thrust_term = affine(dot(axis, p_vel), 1.0 / prm_.mass, 0.0);
    const auto& j = prm_.inertia;
    Var jinv = tape.constant(Tensor::vec({1.0 / j[0], 1.0 / j[1], 1.0 / j[2]}));
    Var torque_term = mul(slice(p, off + 9, 3), jinv);
    std::array<Var, 2> agent_parts{thrust_term, torque_term};
    parts.push_back(concat(agent_parts));
  }
  return agents_ == 1 ? parts[0] : concat(parts);
}

std::vector<double> QuadrotorProblem::sample_initial_state(std::uint64_t seed, std::uint64_t index) const {
  auto rng = indexed_rng(seed, index);
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  std::vector<double> x(n_, 0.0);
  for (std::size_t a = 0; a < agents_; ++a)
    for (std::size_t i = 0; i < 3; ++i) x[12 * a + i] = u(rng);
  return x;
}

// --------------------------------------------------------------------------- bicycle

BicycleProblem::BicycleProblem(BicycleParams params, std::size_t agents)
    : ControlProblem(4 * agents, 2 * agents, agents), prm_(params) {
  if (agents == 0) throw ConfigError("bicycle: agents must be positive");
  if (prm_.wheelbase <= 0) throw ConfigError("bicycle: wheelbase must be positive");
  if (prm_.steer_limit <= 0 || prm_.steer_limit >= 1.5707)
    throw ConfigError("bicycle: steering limit must lie in (0, pi/2)");
}

Var BicycleProblem::dynamics(Tape&, double, Var z, Var u) const {
  std::vector<Var> parts;
  for (std::size_t a = 0; a < agents_; ++a) {
    const std::size_t off = 4 * a, uoff = 2 * a;
    Var heading = slice(z, off + 2, 1);
    Var speed = slice(z, off + 3, 1);
    Var accel = slice(u, uoff, 1);
    Var steer = slice(u, uoff + 1, 1);
    Var xdot = mul(speed, cos(heading));
    Var ydot = mul(speed, sin(heading));
    Var tan_steer = mul(sin(steer), pow(cos(steer), -1.0));
    Var headdot = affine(mul(speed, tan_steer), 1.0 / prm_.wheelbase, 0.0);
    std::array<Var, 4> agent_parts{xdot, ydot, headdot, accel};
    parts.push_back(concat(agent_parts));
  }
  return agents_ == 1 ? parts[0] : concat(parts);
}

Var BicycleProblem::running_cost(Tape& tape, double, Var z, Var u) const {
  Var cost = affine(dot(u, u), prm_.c_u, 0.0);
  Var target = tape.constant(Tensor::vec({prm_.target[0], prm_.target[1]}));
  for (std::size_t a = 0; a < agents_; ++a) {
    Var d = sub(slice(z, 4 * a, 2), target);
    cost = add(cost, affine(dot(d, d), prm_.c_z, 0.0));
  }
  if (prm_.interaction && agents_ > 1)
    cost = add(cost, pairwise_interaction(tape, z, agents_, 4, 2, prm_.c_int, prm_.sigma_int));
  return cost;
}

Var BicycleProblem::terminal_cost(Tape& tape, Var z) const {
  Var target = tape.constant(Tensor::vec({prm_.target[0], prm_.target[1]}));
  Var cost = tape.constant(0.0);
  for (std::size_t a = 0; a < agents_; ++a) {
    Var d = sub(slice(z, 4 * a, 2), target);
    cost = add(cost, dot(d, d));
  }
  return affine(cost, prm_.c_t, 0.0);
}

Var BicycleProblem::grad_u_running_cost(Tape&, double, Var, Var u) const {
  return affine(u, 2.0 * prm_.c_u, 0.0);
}

Var BicycleProblem::grad_u_dynamics_costate(Tape& tape, double, Var z, Var u, Var p) const {
  std::vector<Var> parts;
  for (std::size_t a = 0; a < agents_; ++a) {
    const std::size_t off = 4 * a, uoff = 2 * a;
    Var speed_s = scalar_at(z, off + 3);
    Var steer = slice(u, uoff + 1, 1);
    Var p_head = slice(p, off + 2, 1);
    Var p_speed = slice(p, off + 3, 1);
    Var sec2 = pow(cos(steer), -2.0);
    Var steer_term = affine(mul(speed_s, mul(sec2, p_head)), 1.0 / prm_.wheelbase, 0.0);
    std::array<Var, 2> agent_parts{p_speed, steer_term};
    parts.push_back(concat(agent_parts));
  }
  return agents_ == 1 ? parts[0] : concat(parts);
}

Var BicycleProblem::project_control(Tape& tape, Var, Var u) const {
  Tensor lo = Tensor::full({m_}, -kInf), hi = Tensor::full({m_}, kInf);
  for (std::size_t a = 0; a < agents_; ++a) {
    lo[2 * a + 1] = -prm_.steer_limit;
    hi[2 * a + 1] = prm_.steer_limit;
  }
  return clamp(u, std::move(lo), std::move(hi));
}

std::vector<double> BicycleProblem::project_control_values(const std::vector<double>&, std::vector<double> u) const {
  for (std::size_t a = 0; a < agents_; ++a) {
    double& s = u[2 * a + 1];
    s = std::min(std::max(s, -prm_.steer_limit), prm_.steer_limit);
  }
  return u;
}

bool BicycleProblem::admissible(const std::vector<double>&, const std::vector<double>& u) const {
  for (std::size_t a = 0; a < agents_; ++a)
    if (std::fabs(u[2 * a + 1]) > prm_.steer_limit) return false;
  return true;
}

std::vector<double> BicycleProblem::sample_initial_state(std::uint64_t seed, std::uint64_t index) const {
  auto rng = indexed_rng(seed, index);
  std::uniform_real_distribution<double> pos(-2.0, 2.0);
  std::uniform_real_distribution<double> head(-3.14159265358979323846, 3.14159265358979323846);
  std::uniform_real_distribution<double> speed(0.5, 1.5);
  std::vector<double> x(n_);
  for (std::size_t a = 0; a < agents_; ++a) {
    x[4 * a] = pos(rng);
    x[4 * a + 1] = pos(rng);
    x[4 * a + 2] = head(rng);
    x[4 * a + 3] = speed(rng);
  }
  return x;
}

// --------------------------------------------------------------------------- consumption

ConsumptionProblem::ConsumptionProblem(ConsumptionParams params, std::size_t agents)
    : ControlProblem((1 + params.m) * agents, params.m * agents, agents), prm_(std::move(params)) {
  if (agents == 0) throw ConfigError("consumption: agents must be positive");
  if (prm_.m == 0) throw ConfigError("consumption: need at least one good");
  if (prm_.a.size() != prm_.m || prm_.b.size() != prm_.m)
    throw ConfigError("consumption: habit weight vectors must have one entry per good");
  for (double b : prm_.b)
    if (b < 0) throw ConfigError("consumption: habit decay weights must be nonnegative");
  if (prm_.gamma <= 0 || std::fabs(prm_.gamma - 1.0) < 1e-9)
    throw ConfigError("consumption: risk aversion must be positive and different from 1");
  if (prm_.eta <= 0) throw ConfigError("consumption: habit formation exponent must be positive");
}

Var ConsumptionProblem::dynamics(Tape& tape, double, Var z, Var u) const {
  const std::size_t m = prm_.m, block = 1 + m;
  Var a_vec = tape.constant(Tensor::vec(prm_.a));
  Var b_vec = tape.constant(Tensor::vec(prm_.b));
  std::vector<Var> parts;
  for (std::size_t ag = 0; ag < agents_; ++ag) {
    const std::size_t off = block * ag, uoff = m * ag;
    Var wealth = scalar_at(z, off);
    Var habits = slice(z, off + 1, m);
    Var ua = slice(u, uoff, m);
    Var wealthdot = sub(affine(wealth, prm_.r, 0.0), sum(ua));
    Var habitdot = sub(mul(a_vec, pow(ua, prm_.eta)), mul(b_vec, pow(habits, prm_.theta)));
    std::array<Var, 2> agent_parts{wealthdot, habitdot};
    parts.push_back(concat(agent_parts));
  }
  return agents_ == 1 ? parts[0] : concat(parts);
}

Var ConsumptionProblem::running_cost(Tape& tape, double t, Var z, Var u) const {
  const std::size_t m = prm_.m, block = 1 + m;
  const double w = -std::exp(-prm_.delta * t) / (1.0 - prm_.gamma);
  Var cost = tape.constant(0.0);
  for (std::size_t ag = 0; ag < agents_; ++ag) {
    Var habits = slice(z, block * ag + 1, m);
    Var ua = slice(u, m * ag, m);
    cost = add(cost, sum(pow(sub(ua, habits), 1.0 - prm_.gamma)));
  }
  return affine(cost, w, 0.0);
}

Var ConsumptionProblem::terminal_cost(Tape& tape, Var z) const {
  const std::size_t block = 1 + prm_.m;
  const double w = -std::exp(-prm_.delta * horizon_) * prm_.eps_term / (1.0 - prm_.gamma);
  // Below the floor the utility continues linearly (a C1 extension), so a
  // wealth crash still produces the barrier gradient instead of a flat zone
  // the optimizer cannot escape.
  const double slope = (1.0 - prm_.gamma) * std::pow(kWealthFloor, -prm_.gamma);
  Var cost = tape.constant(0.0);
  for (std::size_t ag = 0; ag < agents_; ++ag) {
    Var raw = slice(z, block * ag, 1);
    Var above = clamp(raw, kWealthFloor, kInf);
    Var below = sub(raw, above);  // zero above the floor, negative under it
    cost = add(cost, sum(pow(above, 1.0 - prm_.gamma)));
    cost = add(cost, affine(sum(below), slope, 0.0));
  }
  return affine(cost, w, 0.0);
}

Var ConsumptionProblem::grad_u_running_cost(Tape& tape, double t, Var z, Var u) const {
  const std::size_t m = prm_.m, block = 1 + m;
  const double w = -std::exp(-prm_.delta * t);
  std::vector<Var> parts;
  for (std::size_t ag = 0; ag < agents_; ++ag) {
    Var habits = slice(z, block * ag + 1, m);
    Var ua = slice(u, m * ag, m);
    parts.push_back(affine(pow(sub(ua, habits), -prm_.gamma), w, 0.0));
  }
  return agents_ == 1 ? parts[0] : concat(parts);
}

Var ConsumptionProblem::grad_u_dynamics_costate(Tape& tape, double, Var z, Var u, Var p) const {
  const std::size_t m = prm_.m, block = 1 + m;
  std::vector<Var> parts;
  for (std::size_t ag = 0; ag < agents_; ++ag) {
    const std::size_t off = block * ag;
    Var p_wealth = scalar_at(p, off);
    Var p_habits = slice(p, off + 1, m);
    Var ua = slice(u, m * ag, m);
    Var ones = tape.constant(Tensor::full({m}, 1.0));
    Var wealth_term = mul(affine(p_wealth, -1.0, 0.0), ones);
    Tensor a_eta = Tensor::zeros({m});
    for (std::size_t i = 0; i < m; ++i) a_eta[i] = prm_.a[i] * prm_.eta;
    Var habit_term = mul(mul(tape.constant(std::move(a_eta)), pow(ua, prm_.eta - 1.0)), p_habits);
    parts.push_back(add(wealth_term, habit_term));
  }
  return agents_ == 1 ? parts[0] : concat(parts);
}

Var ConsumptionProblem::project_control(Tape& tape, Var z, Var u) const {
  const std::size_t m = prm_.m, block = 1 + m;
  std::vector<Var> floors;
  for (std::size_t ag = 0; ag < agents_; ++ag)
    floors.push_back(affine(slice(z, block * ag + 1, m), 1.0, kControlMargin));
  Var floor = agents_ == 1 ? floors[0] : concat(floors);
  Var excess = clamp(sub(u, floor), 0.0, kInf);
  return add(excess, floor);
}

std::vector<double> ConsumptionProblem::project_control_values(const std::vector<double>& z,
                                                               std::vector<double> u) const {
  const std::size_t m = prm_.m, block = 1 + m;
  for (std::size_t ag = 0; ag < agents_; ++ag)
    for (std::size_t i = 0; i < m; ++i) {
      const double floor = z[block * ag + 1 + i] + kControlMargin;
      u[m * ag + i] = std::max(u[m * ag + i], floor);
    }
  return u;
}

std::vector<double> ConsumptionProblem::initial_control(const std::vector<double>& z) const {
  const std::size_t m = prm_.m, block = 1 + m;
  std::vector<double> u(control_dim());
  for (std::size_t ag = 0; ag < agents_; ++ag)
    for (std::size_t i = 0; i < m; ++i)
      u[m * ag + i] = z[block * ag + 1 + i] + 1.0;
  return u;
}

bool ConsumptionProblem::admissible(const std::vector<double>& z, const std::vector<double>& u) const {
  const std::size_t m = prm_.m, block = 1 + m;
  for (std::size_t ag = 0; ag < agents_; ++ag)
    for (std::size_t i = 0; i < m; ++i)
      if (u[m * ag + i] <= z[block * ag + 1 + i]) return false;
  return true;
}

std::vector<double> ConsumptionProblem::sample_initial_state(std::uint64_t seed, std::uint64_t index) const {
  auto rng = indexed_rng(seed, index);
  std::uniform_real_distribution<double> wealth(1.0, 2.0);
  std::uniform_real_distribution<double> habit(0.1, 0.3);
  const std::size_t block = 1 + prm_.m;
  std::vector<double> x(n_);
  for (std::size_t ag = 0; ag < agents_; ++ag) {
    x[block * ag] = wealth(rng);
    for (std::size_t i = 0; i < prm_.m; ++i) x[block * ag + 1 + i] = habit(rng);
  }
  return x;
}

std::vector<double> consumption_foc_residual(const ConsumptionParams& prm, double t, double,
                                             const std::vector<double>& h, const std::vector<double>& u,
                                             double p_x, const std::vector<double>& p_h) {
  if (h.size() != prm.m || u.size() != prm.m || p_h.size() != prm.m)
    throw RuntimeError("consumption residual: vector lengths must equal the number of goods");
  std::vector<double> res(prm.m);
  for (std::size_t i = 0; i < prm.m; ++i) {
    if (u[i] <= h[i])
      throw NumericError("consumption residual: control " + std::to_string(i) + " does not exceed its habit");
    res[i] = std::exp(-prm.delta * t) * std::pow(u[i] - h[i], -prm.gamma) - p_x +
             prm.a[i] * prm.eta * p_h[i] * std::pow(u[i], prm.eta - 1.0);
  }
  return res;
}

// ---------------------------------------------------------------------------

std::unique_ptr<ControlProblem> make_problem(const std::string& name, std::size_t agents) {
  if (name == "lqr") return std::make_unique<LqrProblem>(LqrParams::scalar_default(), agents);
  if (name == "quadrotor") return std::make_unique<QuadrotorProblem>(QuadrotorParams{}, agents);
  if (name == "bicycle") return std::make_unique<BicycleProblem>(BicycleParams{}, agents);
  if (name == "consumption") return std::make_unique<ConsumptionProblem>(ConsumptionParams{}, agents);
  throw ConfigError("unknown problem '" + name + "'; expected one of lqr, quadrotor, bicycle, consumption");
}

}  // namespace jfbctrl
