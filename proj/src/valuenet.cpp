#include "valuenet.hpp"

#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>

namespace jfbctrl {

namespace {

std::size_t count_params(const std::vector<std::size_t>& widths) {
  std::size_t p = 0;
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) p += (widths[l] + 1) * widths[l + 1];
  return p;
}

void check_widths(const std::vector<std::size_t>& widths) {
  if (widths.size() < 2) throw ConfigError("network: need at least input and output widths");
  if (widths.front() < 2) throw ConfigError("network: input width must be 1 + state_dim >= 2");
  if (widths.back() != 1) throw ConfigError("network: output width must be 1");
  for (std::size_t w : widths)
    if (w == 0) throw ConfigError("network: zero layer width");
}

class BoundMlp final : public BoundValue {
 public:
  BoundMlp(Tape& tape, const std::vector<std::size_t>& widths, const std::vector<double>& theta) : widths_(widths) {
    std::size_t off = 0;
    for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
      const std::size_t in = widths[l], out = widths[l + 1];
      Tensor w = Tensor::zeros(out == 1 && l + 2 == widths.size() ? std::vector<std::size_t>{in}
                                                                  : std::vector<std::size_t>{out, in});
      for (std::size_t i = 0; i < out * in; ++i) w[i] = theta[off + i];
      off += out * in;
      Tensor b = out == 1 && l + 2 == widths.size() ? Tensor::scalar(theta[off]) : Tensor::zeros({out});
      if (!(out == 1 && l + 2 == widths.size()))
        for (std::size_t i = 0; i < out; ++i) b[i] = theta[off + i];
      off += out;
      leaves_.push_back(tape.leaf(std::move(w)));
      leaves_.push_back(tape.leaf(std::move(b)));
    }
  }

  Var phi(Var t, Var z) override {
    std::array<Var, 2> in{t, z};
    Var x = concat(in);
    const std::size_t layers = widths_.size() - 1;
    for (std::size_t l = 0; l + 1 < layers; ++l)
      x = tanh(add(matmul(leaves_[2 * l], x), leaves_[2 * l + 1]));
    return add(dot(leaves_[2 * (layers - 1)], x), leaves_[2 * (layers - 1) + 1]);
  }

  // Analytic backward pass written in tape primitives, so a reverse sweep of
  // the result yields exact parameter derivatives of the gradient itself.
  Var grad_z(Var t, Var z) override {
    std::array<Var, 2> in{t, z};
    Var x = concat(in);
    const std::size_t layers = widths_.size() - 1;
    std::vector<Var> hidden;
    Var h = x;
    for (std::size_t l = 0; l + 1 < layers; ++l) {
      h = tanh(add(matmul(leaves_[2 * l], h), leaves_[2 * l + 1]));
      hidden.push_back(h);
    }
    Var g = leaves_[2 * (layers - 1)];
    for (std::size_t l = layers - 1; l-- > 0;) {
      Var dact = affine(mul(hidden[l], hidden[l]), -1.0, 1.0);
      g = matmul(leaves_[2 * l], mul(g, dact), /*trans_a=*/true);
    }
    return slice(g, 1, widths_.front() - 1);
  }

  const std::vector<Var>& param_leaves() const override { return leaves_; }

  Tensor flat_param_grad(const VjpResult& res) const override {
    Tensor flat = Tensor::zeros({count_params(widths_)});
    std::size_t off = 0;
    for (Var leaf : leaves_) {
      auto it = res.leaf_grads.find(leaf.id);
      const std::size_t sz = leaf.value().size();
      if (it != res.leaf_grads.end())
        for (std::size_t i = 0; i < sz; ++i) flat[off + i] = it->second[i];
      off += sz;
    }
    return flat;
  }

 private:
  std::vector<std::size_t> widths_;
  std::vector<Var> leaves_;
};

void write_bytes(std::ofstream& f, const void* p, std::size_t n) { f.write(static_cast<const char*>(p), n); }

void write_u32(std::ofstream& f, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  write_bytes(f, b, 4);
}

void write_u64(std::ofstream& f, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  write_bytes(f, b, 8);
}

void write_f64(std::ofstream& f, double d) {
  std::uint64_t v;
  std::memcpy(&v, &d, 8);
  write_u64(f, v);
}

bool read_bytes(std::ifstream& f, void* p, std::size_t n) {
  f.read(static_cast<char*>(p), n);
  return static_cast<std::size_t>(f.gcount()) == n;
}

std::uint32_t read_u32(std::ifstream& f) {
  unsigned char b[4];
  if (!read_bytes(f, b, 4)) throw IoError("checkpoint: truncated file");
  return std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) | (std::uint32_t(b[2]) << 16) | (std::uint32_t(b[3]) << 24);
}

std::uint64_t read_u64(std::ifstream& f) {
  unsigned char b[8];
  if (!read_bytes(f, b, 8)) throw IoError("checkpoint: truncated file");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= std::uint64_t(b[i]) << (8 * i);
  return v;
}

double read_f64(std::ifstream& f) {
  std::uint64_t v = read_u64(f);
  double d;
  std::memcpy(&d, &v, 8);
  return d;
}

constexpr char kMagic[8] = {'J', 'F', 'B', 'N', 'E', 'T', '0', '1'};

}  // namespace

MlpValueNetwork::MlpValueNetwork(std::vector<std::size_t> widths, std::uint64_t seed, Init init)
    : widths_(std::move(widths)), seed_(seed) {
  check_widths(widths_);
  theta_.assign(count_params(widths_), 0.0);
  if (init == Init::Zero) return;
  std::mt19937_64 rng(seed);
  std::size_t off = 0;
  for (std::size_t l = 0; l + 1 < widths_.size(); ++l) {
    const std::size_t in = widths_[l], out = widths_[l + 1];
    const double a = std::sqrt(6.0 / double(in + out));
    std::uniform_real_distribution<double> u(-a, a);
    for (std::size_t i = 0; i < out * in; ++i) theta_[off + i] = u(rng);
    off += out * in + out;  // biases stay zero
  }
}

void MlpValueNetwork::set_params(const std::vector<double>& in) {
  if (in.size() != theta_.size()) throw RuntimeError("network: parameter vector has wrong length");
  theta_ = in;
}

std::unique_ptr<BoundValue> MlpValueNetwork::bind(Tape& tape) const {
  return std::make_unique<BoundMlp>(tape, widths_, theta_);
}

double MlpValueNetwork::eval(double t, const std::vector<double>& z) const {
  if (z.size() != state_dim()) throw RuntimeError("network: state has wrong dimension");
  std::vector<double> h(1 + z.size());
  h[0] = t;
  for (std::size_t i = 0; i < z.size(); ++i) h[1 + i] = z[i];
  std::size_t off = 0;
  for (std::size_t l = 0; l + 1 < widths_.size(); ++l) {
    const std::size_t in = widths_[l], out = widths_[l + 1];
    std::vector<double> a(out);
    for (std::size_t r = 0; r < out; ++r) {
      double s = theta_[off + out * in + r];
      for (std::size_t c = 0; c < in; ++c) s += theta_[off + r * in + c] * h[c];
      a[r] = (l + 2 < widths_.size()) ? std::tanh(s) : s;
    }
    off += (in + 1) * out;
    h = std::move(a);
  }
  return h[0];
}

std::vector<double> MlpValueNetwork::eval_grad_z(double t, const std::vector<double>& z) const {
  Tape tape;
  auto bound = bind(tape);
  Var tv = tape.constant(t);
  Var zv = tape.leaf(Tensor::vec(z));
  Var g = bound->grad_z(tv, zv);
  const Tensor& gv = tape.value(g);
  return std::vector<double>(gv.data(), gv.data() + gv.size());
}

void MlpValueNetwork::save(const std::string& path) const {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("checkpoint: cannot open '" + path + "' for writing");
  write_bytes(f, kMagic, 8);
  write_u32(f, 1);  // format version
  write_u32(f, static_cast<std::uint32_t>(widths_.size()));
  for (std::size_t w : widths_) write_u32(f, static_cast<std::uint32_t>(w));
  write_u64(f, seed_);
  write_u64(f, theta_.size());
  for (double v : theta_) write_f64(f, v);
  if (!f) throw IoError("checkpoint: write to '" + path + "' failed");
}

MlpValueNetwork MlpValueNetwork::load(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("checkpoint: cannot open '" + path + "'");
  char magic[8];
  if (!read_bytes(f, magic, 8) || std::memcmp(magic, kMagic, 8) != 0)
    throw IoError("checkpoint: '" + path + "' has the wrong magic");
  const std::uint32_t version = read_u32(f);
  if (version != 1) throw IoError("checkpoint: unsupported format version " + std::to_string(version));
  const std::uint32_t nw = read_u32(f);
  if (nw < 2 || nw > 64) throw IoError("checkpoint: implausible layer count");
  std::vector<std::size_t> widths(nw);
  for (auto& w : widths) w = read_u32(f);
  const std::uint64_t seed = read_u64(f);
  const std::uint64_t p = read_u64(f);
  MlpValueNetwork net(widths, seed, Init::Zero);
  if (p != net.theta_.size()) throw IoError("checkpoint: parameter count does not match widths");
  for (auto& v : net.theta_) v = read_f64(f);
  return net;
}

QuadraticValueFunction::QuadraticValueFunction(std::vector<double> times, std::vector<Tensor> p_matrices)
    : times_(std::move(times)), p_(std::move(p_matrices)) {
  if (times_.size() != p_.size() || times_.empty()) throw RuntimeError("quadratic value: grid/matrix mismatch");
  n_ = p_.front().shape()[0];
}

Tensor QuadraticValueFunction::p_at(double t) const {
  if (t <= times_.front()) return p_.front();
  if (t >= times_.back()) return p_.back();
  std::size_t k = 0;
  while (k + 1 < times_.size() && times_[k + 1] < t) ++k;
  const double span = times_[k + 1] - times_[k];
  const double s = span > 0 ? (t - times_[k]) / span : 0.0;
  Tensor out = p_[k];
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = (1.0 - s) * out[i] + s * p_[k + 1][i];
  return out;
}

namespace {

class BoundQuadratic final : public BoundValue {
 public:
  BoundQuadratic(Tape& tape, const QuadraticValueFunction& vf) : tape_(&tape), vf_(&vf) {}

  Var phi(Var t, Var z) override {
    Var p = tape_->constant(vf_->p_at(t.value()[0]));
    return affine(dot(z, matmul(p, z)), 0.5, 0.0);
  }
  Var grad_z(Var t, Var z) override {
    Var p = tape_->constant(vf_->p_at(t.value()[0]));
    return matmul(p, z);
  }
  const std::vector<Var>& param_leaves() const override { return none_; }
  Tensor flat_param_grad(const VjpResult&) const override { return Tensor::zeros({0}); }

 private:
  Tape* tape_;
  const QuadraticValueFunction* vf_;
  std::vector<Var> none_;
};

}  // namespace

std::unique_ptr<BoundValue> QuadraticValueFunction::bind(Tape& tape) const {
  return std::make_unique<BoundQuadratic>(tape, *this);
}

double QuadraticValueFunction::eval(double t, const std::vector<double>& z) const {
  Tensor p = p_at(t);
  double s = 0.0;
  for (std::size_t i = 0; i < n_; ++i)
    for (std::size_t j = 0; j < n_; ++j) s += z[i] * p.at(i, j) * z[j];
  return 0.5 * s;
}

std::vector<double> QuadraticValueFunction::eval_grad_z(double t, const std::vector<double>& z) const {
  Tensor p = p_at(t);
  std::vector<double> g(n_, 0.0);
  for (std::size_t i = 0; i < n_; ++i)
    for (std::size_t j = 0; j < n_; ++j) g[i] += p.at(i, j) * z[j];
  return g;
}

}  // namespace jfbctrl
