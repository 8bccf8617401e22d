#pragma once

#include <Eigen/Dense>

#include <stdexcept>
#include <vector>

namespace nproj {

using Mat = Eigen::MatrixXd;

/// Handle to a tape node. Values are feature-major matrices whose columns are
/// independent batch elements; scalars are 1xB rows.
struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

/// Eager reverse-mode tape over a small set of dense ops.
///
/// Gradients that must themselves stay differentiable (the constraint
/// network's input gradient inside the projection loop) are built by emitting
/// further ops onto the tape; backward() is then a single non-recording
/// adjoint sweep over everything, which yields exact second-order parameter
/// gradients.
class Tape {
 public:
  enum class Op : std::uint8_t {
    leaf,
    linear,          // W*x + b (b broadcast over columns)
    mat_t_vec,       // W^T * u
    lrelu,           // leaky relu, slope aux
    lrelu_grad_mul,  // lrelu'(z) .* g  (derivative treated as piecewise constant)
    add,
    sub,
    col_scale,       // x .* s, s is 1xB applied per column
    col_dot,         // per-column dot -> 1xB
    ew_mul,
    ew_div,
    cmul,            // x .* c, c is a fixed per-row vector (pin masks)
    center,          // subtract per-axis mean over particles from each column
    scale,           // constant * x
  };

  Var leaf(Mat value, bool requires_grad = false);
  Var linear(Var W, Var x, Var b);
  Var mat_t_vec(Var W, Var u);
  Var lrelu(Var z, double slope);
  Var lrelu_grad_mul(Var z, Var g, double slope);
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var col_scale(Var x, Var s);
  Var col_dot(Var a, Var b);
  Var ew_mul(Var a, Var b);
  Var ew_div(Var a, Var b);
  Var cmul(Var x, Eigen::VectorXd row_mask);
  Var center(Var x, int dim);
  Var scale(Var x, double factor);

  const Mat& value(Var v) const { return node(v.id).value; }

  /// Nodes created while stopped propagate no adjoints (first-order ablation hook).
  void push_stop_gradient() { ++stop_depth_; }
  void pop_stop_gradient() { --stop_depth_; }

  /// Seeds `seed` into `target` and runs one adjoint sweep over the whole tape.
  void backward(Var target, const Mat& seed);

  bool has_grad(Var v) const;
  const Mat& grad(Var v) const;

  std::size_t size() const { return nodes_.size(); }
  void clear();

 private:
  struct Node {
    Op op = Op::leaf;
    int a = -1, b = -1, c = -1;
    Mat value;
    double aux = 0.0;
    int aux_i = 0;
    Eigen::VectorXd cvec;
    bool requires_grad = false;
    bool stop_grad = false;
  };

  const Node& node(int id) const {
    if (id < 0 || id >= static_cast<int>(nodes_.size()))
      throw std::logic_error("tape: invalid var");
    return nodes_[static_cast<std::size_t>(id)];
  }
  Var push(Node n);
  void add_grad(int id, const Mat& g);
  static Mat centered(const Mat& x, int dim);
  static Mat lrelu_mask(const Mat& z, double slope);

  std::vector<Node> nodes_;
  std::vector<Mat> grads_;
  int stop_depth_ = 0;
};

}  // namespace nproj
