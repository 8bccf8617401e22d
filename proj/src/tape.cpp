#include "nproj/tape.hpp"

namespace nproj {

Var Tape::push(Node n) {
  n.stop_grad = stop_depth_ > 0;
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

Var Tape::leaf(Mat value, bool requires_grad) {
  Node n;
  n.op = Op::leaf;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  return push(std::move(n));
}

Var Tape::linear(Var W, Var x, Var b) {
  Node n;
  n.op = Op::linear;
  n.a = W.id;
  n.b = x.id;
  n.c = b.id;
  n.value = (node(W.id).value * node(x.id).value).colwise() +
            Eigen::VectorXd(node(b.id).value.col(0));
  return push(std::move(n));
}

Var Tape::mat_t_vec(Var W, Var u) {
  Node n;
  n.op = Op::mat_t_vec;
  n.a = W.id;
  n.b = u.id;
  n.value = node(W.id).value.transpose() * node(u.id).value;
  return push(std::move(n));
}

Mat Tape::lrelu_mask(const Mat& z, double slope) {
  return (z.array() > 0).select(Mat::Ones(z.rows(), z.cols()),
                                Mat::Constant(z.rows(), z.cols(), slope));
}

Var Tape::lrelu(Var z, double slope) {
  Node n;
  n.op = Op::lrelu;
  n.a = z.id;
  n.aux = slope;
  const Mat& v = node(z.id).value;
  n.value = v.array().max(0.0) + slope * v.array().min(0.0);
  return push(std::move(n));
}

Var Tape::lrelu_grad_mul(Var z, Var g, double slope) {
  Node n;
  n.op = Op::lrelu_grad_mul;
  n.a = z.id;
  n.b = g.id;
  n.aux = slope;
  n.value = lrelu_mask(node(z.id).value, slope).array() * node(g.id).value.array();
  return push(std::move(n));
}

Var Tape::add(Var a, Var b) {
  Node n;
  n.op = Op::add;
  n.a = a.id;
  n.b = b.id;
  n.value = node(a.id).value + node(b.id).value;
  return push(std::move(n));
}

Var Tape::sub(Var a, Var b) {
  Node n;
  n.op = Op::sub;
  n.a = a.id;
  n.b = b.id;
  n.value = node(a.id).value - node(b.id).value;
  return push(std::move(n));
}

Var Tape::col_scale(Var x, Var s) {
  Node n;
  n.op = Op::col_scale;
  n.a = x.id;
  n.b = s.id;
  n.value = node(x.id).value.array().rowwise() *
            Eigen::RowVectorXd(node(s.id).value.row(0)).array();
  return push(std::move(n));
}

Var Tape::col_dot(Var a, Var b) {
  Node n;
  n.op = Op::col_dot;
  n.a = a.id;
  n.b = b.id;
  n.value = (node(a.id).value.array() * node(b.id).value.array()).colwise().sum();
  return push(std::move(n));
}

Var Tape::ew_mul(Var a, Var b) {
  Node n;
  n.op = Op::ew_mul;
  n.a = a.id;
  n.b = b.id;
  n.value = node(a.id).value.array() * node(b.id).value.array();
  return push(std::move(n));
}

Var Tape::ew_div(Var a, Var b) {
  Node n;
  n.op = Op::ew_div;
  n.a = a.id;
  n.b = b.id;
  n.value = node(a.id).value.array() / node(b.id).value.array();
  return push(std::move(n));
}

Var Tape::cmul(Var x, Eigen::VectorXd row_mask) {
  Node n;
  n.op = Op::cmul;
  n.a = x.id;
  n.cvec = std::move(row_mask);
  n.value = node(x.id).value.array().colwise() * n.cvec.array();
  return push(std::move(n));
}

Mat Tape::centered(const Mat& x, int dim) {
  Mat out = x;
  const Eigen::Index particles = x.rows() / dim;
  for (int axis = 0; axis < dim; ++axis) {
    Eigen::RowVectorXd mean = Eigen::RowVectorXd::Zero(x.cols());
    for (Eigen::Index p = 0; p < particles; ++p) mean += x.row(p * dim + axis);
    mean /= static_cast<double>(particles);
    for (Eigen::Index p = 0; p < particles; ++p) out.row(p * dim + axis) -= mean;
  }
  return out;
}

Var Tape::center(Var x, int dim) {
  Node n;
  n.op = Op::center;
  n.a = x.id;
  n.aux_i = dim;
  n.value = centered(node(x.id).value, dim);
  return push(std::move(n));
}

Var Tape::scale(Var x, double factor) {
  Node n;
  n.op = Op::scale;
  n.a = x.id;
  n.aux = factor;
  n.value = factor * node(x.id).value;
  return push(std::move(n));
}

void Tape::add_grad(int id, const Mat& g) {
  Mat& slot = grads_[static_cast<std::size_t>(id)];
  if (slot.size() == 0) {
    slot = g;
  } else {
    slot += g;
  }
}

bool Tape::has_grad(Var v) const {
  return v.id >= 0 && v.id < static_cast<int>(grads_.size()) &&
         grads_[static_cast<std::size_t>(v.id)].size() != 0;
}

const Mat& Tape::grad(Var v) const {
  if (!has_grad(v)) throw std::logic_error("tape: no gradient recorded for var");
  return grads_[static_cast<std::size_t>(v.id)];
}

void Tape::backward(Var target, const Mat& seed) {
  grads_.assign(nodes_.size(), Mat());
  add_grad(target.id, seed);

  for (int id = target.id; id >= 0; --id) {
    Mat& g = grads_[static_cast<std::size_t>(id)];
    if (g.size() == 0) continue;
    const Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.stop_grad) continue;
    switch (n.op) {
      case Op::leaf:
        break;
      case Op::linear: {
        const Mat& x = nodes_[static_cast<std::size_t>(n.b)].value;
        const Mat& W = nodes_[static_cast<std::size_t>(n.a)].value;
        add_grad(n.a, g * x.transpose());
        add_grad(n.b, W.transpose() * g);
        add_grad(n.c, g.rowwise().sum());
        break;
      }
      case Op::mat_t_vec: {
        const Mat& u = nodes_[static_cast<std::size_t>(n.b)].value;
        const Mat& W = nodes_[static_cast<std::size_t>(n.a)].value;
        add_grad(n.a, u * g.transpose());
        add_grad(n.b, W * g);
        break;
      }
      case Op::lrelu: {
        const Mat& z = nodes_[static_cast<std::size_t>(n.a)].value;
        add_grad(n.a, lrelu_mask(z, n.aux).cwiseProduct(g));
        break;
      }
      case Op::lrelu_grad_mul: {
        // d/dz of the mask is zero almost everywhere; only the g path flows.
        const Mat& z = nodes_[static_cast<std::size_t>(n.a)].value;
        add_grad(n.b, lrelu_mask(z, n.aux).cwiseProduct(g));
        break;
      }
      case Op::add:
        add_grad(n.a, g);
        add_grad(n.b, g);
        break;
      case Op::sub:
        add_grad(n.a, g);
        add_grad(n.b, -g);
        break;
      case Op::col_scale: {
        const Mat& x = nodes_[static_cast<std::size_t>(n.a)].value;
        const Mat& s = nodes_[static_cast<std::size_t>(n.b)].value;
        add_grad(n.a, g.array().rowwise() * Eigen::RowVectorXd(s.row(0)).array());
        add_grad(n.b, (g.array() * x.array()).colwise().sum());
        break;
      }
      case Op::col_dot: {
        const Mat& a = nodes_[static_cast<std::size_t>(n.a)].value;
        const Mat& b = nodes_[static_cast<std::size_t>(n.b)].value;
        const Eigen::RowVectorXd grow = g.row(0);
        add_grad(n.a, b.array().rowwise() * grow.array());
        add_grad(n.b, a.array().rowwise() * grow.array());
        break;
      }
      case Op::ew_mul: {
        const Mat& a = nodes_[static_cast<std::size_t>(n.a)].value;
        const Mat& b = nodes_[static_cast<std::size_t>(n.b)].value;
        add_grad(n.a, g.cwiseProduct(b));
        add_grad(n.b, g.cwiseProduct(a));
        break;
      }
      case Op::ew_div: {
        const Mat& b = nodes_[static_cast<std::size_t>(n.b)].value;
        const Mat& q = n.value;
        const Mat ginv = g.cwiseQuotient(b);
        add_grad(n.a, ginv);
        add_grad(n.b, -ginv.cwiseProduct(q));
        break;
      }
      case Op::cmul:
        add_grad(n.a, g.array().colwise() * n.cvec.array());
        break;
      case Op::center:
        add_grad(n.a, centered(g, n.aux_i));
        break;
      case Op::scale:
        add_grad(n.a, n.aux * g);
        break;
    }
  }
}

void Tape::clear() {
  nodes_.clear();
  grads_.clear();
}

}  // namespace nproj
