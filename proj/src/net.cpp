#include "nproj/net.hpp"

#include "nproj/rng.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace nproj {

void NetArch::validate() const {
  if (widths.size() < 2) throw std::invalid_argument("arch: need at least input and output widths");
  for (int w : widths) {
    if (w < 1) throw std::invalid_argument("arch: widths must be positive");
  }
  if (lrelu_slope < 0) throw std::invalid_argument("arch: negative slope must be >= 0");
}

NetArch NetArch::parse(const std::string& comma_separated, double slope) {
  NetArch arch;
  arch.lrelu_slope = slope;
  std::istringstream is(comma_separated);
  std::string tok;
  while (std::getline(is, tok, ',')) {
    if (!tok.empty()) arch.widths.push_back(std::stoi(tok));
  }
  arch.validate();
  return arch;
}

std::string NetArch::describe() const {
  std::ostringstream os;
  for (std::size_t i = 0; i < widths.size(); ++i) {
    if (i) os << ',';
    os << widths[i];
  }
  return os.str();
}

long ConstraintNet::parameter_count() const {
  long n = 0;
  for (std::size_t l = 0; l < weights.size(); ++l) {
    n += weights[l].size() + biases[l].size();
  }
  return n;
}

void ConstraintNet::validate() const {
  arch.validate();
  if (static_cast<int>(weights.size()) != arch.layer_count() || biases.size() != weights.size())
    throw std::invalid_argument("net: layer count mismatch");
  for (int l = 0; l < arch.layer_count(); ++l) {
    const auto lu = static_cast<std::size_t>(l);
    if (weights[lu].rows() != arch.widths[lu + 1] || weights[lu].cols() != arch.widths[lu] ||
        biases[lu].size() != arch.widths[lu + 1])
      throw std::invalid_argument("net: parameter shape mismatch");
  }
}

double kaiming_uniform_bound(int fan_in, double slope) {
  return std::sqrt(6.0 / ((1.0 + slope * slope) * fan_in));
}

ConstraintNet net_init(const NetArch& arch, std::uint64_t seed) {
  arch.validate();
  Rng rng(seed);
  ConstraintNet net;
  net.arch = arch;
  for (int l = 0; l < arch.layer_count(); ++l) {
    const int in = arch.widths[static_cast<std::size_t>(l)];
    const int out = arch.widths[static_cast<std::size_t>(l) + 1];
    const double bound = kaiming_uniform_bound(in, arch.lrelu_slope);
    Mat W(out, in);
    for (int r = 0; r < out; ++r) {
      for (int c = 0; c < in; ++c) W(r, c) = rng.uniform(-bound, bound);
    }
    net.weights.push_back(std::move(W));
    net.biases.push_back(VectorXd::Zero(out));
  }
  return net;
}

VectorXd net_forward_vec(const ConstraintNet& net, const VectorXd& x) {
  if (x.size() != net.arch.input_width())
    throw std::invalid_argument("net_forward: input width mismatch");
  VectorXd a = x;
  const int layers = net.arch.layer_count();
  for (int l = 0; l < layers; ++l) {
    const auto lu = static_cast<std::size_t>(l);
    VectorXd z = net.weights[lu] * a + net.biases[lu];
    if (l + 1 < layers) {
      a = z.array().max(0.0) + net.arch.lrelu_slope * z.array().min(0.0);
    } else {
      a = std::move(z);
    }
  }
  return a;
}

double net_forward(const ConstraintNet& net, const VectorXd& x) {
  if (net.arch.output_width() != 1)
    throw std::invalid_argument("net_forward: scalar output expected");
  return net_forward_vec(net, x)[0];
}

double net_value_and_input_grad(const ConstraintNet& net, const VectorXd& x, VectorXd& grad_out) {
  if (net.arch.output_width() != 1)
    throw std::invalid_argument("net_value_and_input_grad: scalar output expected");
  if (x.size() != net.arch.input_width())
    throw std::invalid_argument("net_value_and_input_grad: input width mismatch");
  const int layers = net.arch.layer_count();
  std::vector<VectorXd> preacts(static_cast<std::size_t>(layers));
  VectorXd a = x;
  for (int l = 0; l < layers; ++l) {
    const auto lu = static_cast<std::size_t>(l);
    preacts[lu] = net.weights[lu] * a + net.biases[lu];
    if (l + 1 < layers) {
      a = preacts[lu].array().max(0.0) + net.arch.lrelu_slope * preacts[lu].array().min(0.0);
    } else {
      a = preacts[lu];
    }
  }
  // Reverse sweep for dC/dx; masks use the stored preactivations.
  VectorXd u = VectorXd::Ones(1);
  for (int l = layers - 1; l >= 0; --l) {
    const auto lu = static_cast<std::size_t>(l);
    VectorXd v = net.weights[lu].transpose() * u;
    if (l > 0) {
      const VectorXd& z = preacts[lu - 1];
      u = (z.array() > 0).select(v, net.arch.lrelu_slope * v);
    } else {
      grad_out = std::move(v);
    }
  }
  return a[0];
}

NetVars net_to_tape(Tape& tape, const ConstraintNet& net, bool requires_grad) {
  NetVars vars;
  for (std::size_t l = 0; l < net.weights.size(); ++l) {
    vars.weights.push_back(tape.leaf(net.weights[l], requires_grad));
    vars.biases.push_back(tape.leaf(net.biases[l], requires_grad));
  }
  return vars;
}

NetTapeForward net_forward_tape(Tape& tape, const NetVars& vars, const NetArch& arch, Var x) {
  NetTapeForward out;
  const int layers = arch.layer_count();
  Var a = x;
  for (int l = 0; l < layers; ++l) {
    const auto lu = static_cast<std::size_t>(l);
    Var z = tape.linear(vars.weights[lu], a, vars.biases[lu]);
    out.preactivations.push_back(z);
    a = (l + 1 < layers) ? tape.lrelu(z, arch.lrelu_slope) : z;
  }
  out.output = a;
  return out;
}

Var net_input_grad_tape(Tape& tape, const NetVars& vars, const NetArch& arch,
                        const NetTapeForward& fwd) {
  if (arch.output_width() != 1)
    throw std::invalid_argument("net_input_grad_tape: scalar output expected");
  const int layers = arch.layer_count();
  const Eigen::Index batch = tape.value(fwd.output).cols();
  Var u = tape.leaf(Mat::Ones(1, batch));
  Var g{-1};
  for (int l = layers - 1; l >= 0; --l) {
    const auto lu = static_cast<std::size_t>(l);
    Var v = tape.mat_t_vec(vars.weights[lu], u);
    if (l > 0) {
      u = tape.lrelu_grad_mul(fwd.preactivations[lu - 1], v, arch.lrelu_slope);
    } else {
      g = v;
    }
  }
  return g;
}

void collect_param_grads(const Tape& tape, const NetVars& vars, std::vector<Mat>& grad_w,
                         std::vector<VectorXd>& grad_b) {
  grad_w.resize(vars.weights.size());
  grad_b.resize(vars.biases.size());
  for (std::size_t l = 0; l < vars.weights.size(); ++l) {
    const Var w = vars.weights[l];
    const Var b = vars.biases[l];
    grad_w[l] = tape.has_grad(w) ? tape.grad(w) : Mat::Zero(tape.value(w).rows(), tape.value(w).cols());
    grad_b[l] = tape.has_grad(b) ? VectorXd(tape.grad(b).col(0))
                                 : VectorXd::Zero(tape.value(b).rows());
  }
}

double LrSchedule::at_epoch(int epoch) const {
  return init_lr * std::pow(gamma, epoch / step_epochs);
}

AdamState AdamState::like(const ConstraintNet& net) {
  AdamState s;
  for (std::size_t l = 0; l < net.weights.size(); ++l) {
    s.m_w.push_back(Mat::Zero(net.weights[l].rows(), net.weights[l].cols()));
    s.v_w.push_back(Mat::Zero(net.weights[l].rows(), net.weights[l].cols()));
    s.m_b.push_back(VectorXd::Zero(net.biases[l].size()));
    s.v_b.push_back(VectorXd::Zero(net.biases[l].size()));
  }
  return s;
}

void adam_step(ConstraintNet& net, const std::vector<Mat>& grad_w,
               const std::vector<VectorXd>& grad_b, AdamState& state, double lr) {
  if (grad_w.size() != net.weights.size() || grad_b.size() != net.biases.size())
    throw std::invalid_argument("adam_step: gradient layer count mismatch");
  state.step_count += 1;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step_count));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step_count));
  for (std::size_t l = 0; l < net.weights.size(); ++l) {
    if (grad_w[l].rows() != net.weights[l].rows() || grad_w[l].cols() != net.weights[l].cols() ||
        grad_b[l].size() != net.biases[l].size())
      throw std::invalid_argument("adam_step: gradient shape mismatch");
    state.m_w[l] = state.beta1 * state.m_w[l] + (1.0 - state.beta1) * grad_w[l];
    state.v_w[l] = state.beta2 * state.v_w[l].array() +
                   (1.0 - state.beta2) * grad_w[l].array().square();
    state.m_b[l] = state.beta1 * state.m_b[l] + (1.0 - state.beta1) * grad_b[l];
    state.v_b[l] = state.beta2 * state.v_b[l].array() +
                   (1.0 - state.beta2) * grad_b[l].array().square();
    net.weights[l].array() -=
        lr * (state.m_w[l].array() / bc1) / ((state.v_w[l].array() / bc2).sqrt() + state.eps);
    net.biases[l].array() -=
        lr * (state.m_b[l].array() / bc1) / ((state.v_b[l].array() / bc2).sqrt() + state.eps);
  }
}

namespace {

constexpr char kMagic[6] = {'N', 'P', 'R', 'J', 'M', '1'};

void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(b), 4);
}

void put_f64(std::ostream& os, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((bits >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(b), 8);
}

std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

double get_f64(std::istream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  double v;
  std::memcpy(&v, &bits, 8);
  return v;
}

}  // namespace

void write_checkpoint(const std::string& path, const ConstraintNet& net,
                      const std::map<std::string, std::string>& metadata) {
  net.validate();
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);
  os.write(kMagic, 6);
  put_u32(os, static_cast<std::uint32_t>(net.arch.widths.size()));
  for (int w : net.arch.widths) put_u32(os, static_cast<std::uint32_t>(w));
  put_f64(os, net.arch.lrelu_slope);
  for (std::size_t l = 0; l < net.weights.size(); ++l) {
    const Mat& W = net.weights[l];
    for (Eigen::Index r = 0; r < W.rows(); ++r) {
      for (Eigen::Index c = 0; c < W.cols(); ++c) put_f64(os, W(r, c));
    }
    for (Eigen::Index i = 0; i < net.biases[l].size(); ++i) put_f64(os, net.biases[l][i]);
  }
  if (!os) throw std::runtime_error("write failed: " + path);

  std::ofstream meta(path + ".meta");
  if (!meta) throw std::runtime_error("cannot open for writing: " + path + ".meta");
  for (const auto& [k, v] : metadata) meta << k << "=" << v << "\n";
}

ConstraintNet read_checkpoint(const std::string& path,
                              std::map<std::string, std::string>* metadata_out) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open: " + path);
  char magic[6];
  is.read(magic, 6);
  if (!is || std::memcmp(magic, kMagic, 6) != 0)
    throw std::runtime_error("not an NPRJM1 checkpoint: " + path);

  ConstraintNet net;
  const auto n_widths = get_u32(is);
  net.arch.widths.resize(n_widths);
  for (auto& w : net.arch.widths) w = static_cast<int>(get_u32(is));
  net.arch.lrelu_slope = get_f64(is);
  net.arch.validate();
  for (int l = 0; l < net.arch.layer_count(); ++l) {
    const int in = net.arch.widths[static_cast<std::size_t>(l)];
    const int out = net.arch.widths[static_cast<std::size_t>(l) + 1];
    Mat W(out, in);
    for (int r = 0; r < out; ++r) {
      for (int c = 0; c < in; ++c) W(r, c) = get_f64(is);
    }
    VectorXd b(out);
    for (int i = 0; i < out; ++i) b[i] = get_f64(is);
    net.weights.push_back(std::move(W));
    net.biases.push_back(std::move(b));
  }
  if (!is) throw std::runtime_error("truncated checkpoint: " + path);

  if (metadata_out) {
    metadata_out->clear();
    std::ifstream meta(path + ".meta");
    std::string line;
    while (meta && std::getline(meta, line)) {
      const auto eq = line.find('=');
      if (eq != std::string::npos) (*metadata_out)[line.substr(0, eq)] = line.substr(eq + 1);
    }
  }
  net.validate();
  return net;
}

}  // namespace nproj
