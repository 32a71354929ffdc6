#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <vector>

#include "errors.hpp"
#include "support.hpp"
#include "tape.hpp"
#include "valuenet.hpp"

using namespace jfbctrl;
using test::central_diff;
using test::max_abs_diff;
using test::pattern;
using test::to_vec;

namespace {

// Straight-line reimplementation of the network forward pass, written
// against the documented flat layout only: per layer, weights row-major
// then bias. Everything here is plain loops so it cannot share a bug with
// the tape path.
double reference_forward(const std::vector<std::size_t>& widths,
                         const std::vector<double>& theta, double t,
                         const std::vector<double>& z) {
  std::vector<double> x(widths[0]);
  x[0] = t;
  for (std::size_t i = 0; i + 1 < widths[0]; ++i) x[i + 1] = z[i];

  std::size_t off = 0;
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    const std::size_t in = widths[l], out = widths[l + 1];
    std::vector<double> y(out, 0.0);
    for (std::size_t r = 0; r < out; ++r) {
      double acc = 0.0;
      for (std::size_t c = 0; c < in; ++c) acc += theta[off + r * in + c] * x[c];
      y[r] = acc;
    }
    off += out * in;
    for (std::size_t r = 0; r < out; ++r) y[r] += theta[off + r];
    off += out;
    const bool last = (l + 2 == widths.size());
    if (!last)
      for (double& v : y) v = std::tanh(v);
    x = std::move(y);
  }
  return x[0];
}

}  // namespace

TEST_CASE("parameter count follows the flat layout") {
  MlpValueNetwork net({3, 5, 1}, 42);
  // (3+1)*5 + (5+1)*1 = 26
  CHECK(net.param_count() == 26);
  CHECK(net.state_dim() == 2);
}

TEST_CASE("forward pass matches a straight-line reimplementation") {
  MlpValueNetwork net({4, 7, 5, 1}, 2024);
  std::vector<double> z = pattern(3, 1.0, 0.2);
  for (double t : {0.0, 0.37, 1.0}) {
    double expect = reference_forward(net.widths(), net.params(), t, z);
    CHECK(net.eval(t, z) == doctest::Approx(expect).epsilon(1e-14));

    Tape tape;
    auto bound = net.bind(tape);
    Var tv = tape.constant(Tensor::scalar(t));
    Var zv = tape.constant(Tensor::vec(z));
    CHECK(bound->phi(tv, zv).value()[0] == doctest::Approx(expect).epsilon(1e-14));
  }
}

TEST_CASE("grad_z agrees with finite differences of eval") {
  MlpValueNetwork net({4, 6, 1}, 7);
  std::vector<double> z = pattern(3, 0.8, -0.1);
  const double t = 0.42;

  auto f = [&](const std::vector<double>& q) { return net.eval(t, q); };
  std::vector<double> fd = central_diff(f, z);

  CHECK(max_abs_diff(net.eval_grad_z(t, z), fd) < 1e-8);

  Tape tape;
  auto bound = net.bind(tape);
  Var tv = tape.constant(Tensor::scalar(t));
  Var zv = tape.constant(Tensor::vec(z));
  CHECK(max_abs_diff(to_vec(bound->grad_z(tv, zv).value()), fd) < 1e-8);
}

TEST_CASE("grad_z expression differentiates through theta like phi does") {
  // The costate p = grad_z phi is itself a tape expression; pulling a
  // cotangent through it must produce d/dtheta of <c, grad_z phi>, which we
  // check against finite differences over the flat parameters.
  MlpValueNetwork net({3, 5, 1}, 99);
  std::vector<double> z = pattern(2, 0.9, 0.3);
  std::vector<double> c = {0.7, -0.4};
  const double t = 0.25;

  auto f = [&](const std::vector<double>& th) {
    MlpValueNetwork probe({3, 5, 1}, 99);
    probe.set_params(th);
    std::vector<double> g = probe.eval_grad_z(t, z);
    return c[0] * g[0] + c[1] * g[1];
  };
  std::vector<double> fd = central_diff(f, net.params(), 1e-6);

  Tape tape;
  auto bound = net.bind(tape);
  Var tv = tape.constant(Tensor::scalar(t));
  Var zv = tape.constant(Tensor::vec(z));
  Var p = bound->grad_z(tv, zv);
  auto res = tape.vjp(p, Tensor::vec(c), bound->param_leaves());
  std::vector<double> ad = to_vec(bound->flat_param_grad(res));

  REQUIRE(ad.size() == fd.size());
  CHECK(max_abs_diff(ad, fd) < 5e-6);
}

TEST_CASE("phi parameter gradient matches finite differences") {
  MlpValueNetwork net({3, 4, 1}, 11);
  std::vector<double> z = pattern(2, 1.1, 0.0);
  const double t = 0.6;

  auto f = [&](const std::vector<double>& th) {
    MlpValueNetwork probe({3, 4, 1}, 11);
    probe.set_params(th);
    return probe.eval(t, z);
  };
  std::vector<double> fd = central_diff(f, net.params(), 1e-6);

  Tape tape;
  auto bound = net.bind(tape);
  Var phi = bound->phi(tape.constant(Tensor::scalar(t)),
                       tape.constant(Tensor::vec(z)));
  auto res = tape.vjp(phi, Tensor::scalar(1.0), bound->param_leaves());
  std::vector<double> ad = to_vec(bound->flat_param_grad(res));
  CHECK(max_abs_diff(ad, fd) < 5e-6);
}

TEST_CASE("initialization is deterministic in the seed") {
  MlpValueNetwork a({5, 8, 8, 1}, 1234);
  MlpValueNetwork b({5, 8, 8, 1}, 1234);
  MlpValueNetwork c({5, 8, 8, 1}, 1235);
  CHECK(a.params() == b.params());
  CHECK(a.params() != c.params());

  MlpValueNetwork zeroed({5, 8, 1}, 0, MlpValueNetwork::Init::Zero);
  for (double v : zeroed.params()) CHECK(v == 0.0);
}

TEST_CASE("checkpoint round-trips bitwise") {
  MlpValueNetwork net({4, 9, 1}, 77);
  const char* path = "valuenet_roundtrip.bin";
  net.save(path);
  MlpValueNetwork back = MlpValueNetwork::load(path);
  CHECK(back.widths() == net.widths());
  CHECK(back.seed() == net.seed());
  CHECK(back.params() == net.params());
  std::remove(path);
}

TEST_CASE("checkpoint loader rejects malformed files") {
  const char* path = "valuenet_bad.bin";
  FILE* fp = std::fopen(path, "wb");
  const char junk[] = "NOTANETWORKFILE_____";
  std::fwrite(junk, 1, sizeof(junk), fp);
  std::fclose(fp);
  CHECK_THROWS_AS(MlpValueNetwork::load(path), Error);
  std::remove(path);
  CHECK_THROWS_AS(MlpValueNetwork::load("does_not_exist.bin"), IoError);
}

TEST_CASE("width validation") {
  CHECK_THROWS_AS(MlpValueNetwork({1, 4, 1}, 0), ConfigError);  // no state input
  CHECK_THROWS_AS(MlpValueNetwork({3, 4, 2}, 0), ConfigError);  // non-scalar output
  CHECK_THROWS_AS(MlpValueNetwork({3}, 0), ConfigError);
}

TEST_CASE("quadratic value function evaluates 0.5 z'Pz with interpolation") {
  Tensor p0 = Tensor::from({2, 2}, {2.0, 0.0, 0.0, 4.0});
  Tensor p1 = Tensor::from({2, 2}, {4.0, 0.0, 0.0, 8.0});
  QuadraticValueFunction q({0.0, 1.0}, {p0, p1});

  std::vector<double> z{1.0, 2.0};
  // at t=0.5, P = diag(3, 6): 0.5*(3*1 + 6*4) = 13.5
  CHECK(q.eval(0.5, z) == doctest::Approx(13.5).epsilon(1e-12));
  // grad = P z = (3, 12)
  std::vector<double> g = q.eval_grad_z(0.5, z);
  CHECK(g[0] == doctest::Approx(3.0).epsilon(1e-12));
  CHECK(g[1] == doctest::Approx(12.0).epsilon(1e-12));

  // endpoints clamp
  CHECK(q.eval(-1.0, z) == doctest::Approx(q.eval(0.0, z)).epsilon(1e-12));
  CHECK(q.eval(2.0, z) == doctest::Approx(q.eval(1.0, z)).epsilon(1e-12));

  // tape path agrees
  Tape tape;
  auto bound = q.bind(tape);
  Var tv = tape.constant(Tensor::scalar(0.5));
  Var zv = tape.constant(Tensor::vec(z));
  CHECK(bound->phi(tv, zv).value()[0] == doctest::Approx(13.5).epsilon(1e-12));
  CHECK(to_vec(bound->grad_z(tv, zv).value()) == std::vector<double>{3.0, 12.0});
}
