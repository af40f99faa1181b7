#pragma once

#include <Eigen/Core>

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "rappie/util.hpp"

namespace rappie::nn {

using Mat = Eigen::MatrixXd;

struct Param {
  std::string name;
  Mat value;
  Mat grad;

  Param() = default;
  Param(std::string n, Mat v)
      : name(std::move(n)), value(std::move(v)), grad(Mat::Zero(value.rows(), value.cols())) {}

  void zero_grad() { grad.setZero(); }
  Eigen::Index size() const { return value.size(); }
};

// Reverse-mode tape over dense matrices. Every op records a pullback; after
// backward(), gradients of leaf() nodes are accumulated into their Param.
class Tape {
 public:
  struct Var {
    int id = -1;
    bool valid() const { return id >= 0; }
  };

  Var constant(Mat value);
  Var leaf(Param& p);

  Var matmul(Var a, Var b);
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var scale(Var a, double s);
  Var transpose(Var a);
  Var rows(Var a, Eigen::Index r0, Eigen::Index n);
  Var cols(Var a, Eigen::Index c0, Eigen::Index n);
  Var hstack(const std::vector<Var>& parts);
  Var vstack(const std::vector<Var>& parts);
  Var softmax_rows(Var a);
  Var sigmoid(Var a);
  Var hadamard(Var a, Var b);
  // m (r x c) plus a column vector (r x 1) replicated across the c columns
  Var add_col_broadcast(Var m, Var col);
  Var mean_cols(Var a);  // (r x c) -> (r x 1)
  Var log_clamped(Var a, double floor);
  Var pick(Var a, Eigen::Index r, Eigen::Index c);  // 1x1
  Var sum_all(Var a);                               // 1x1
  Var sumsq(Var a);                                 // 1x1

  // Escape hatch for structured ops (graph propagation). The pullback
  // receives the output gradient and mutable references to parent grads.
  Var custom(Mat value, std::vector<Var> parents,
             std::function<void(const Mat& g, std::vector<Mat*>& parent_grads)> pullback);

  const Mat& val(Var v) const { return nodes_.at(static_cast<std::size_t>(v.id)).value; }

  // Runs the reverse sweep from a 1x1 output node and accumulates leaf
  // gradients into their Params.
  void backward(Var out);

  // Gradient of the last backward() with respect to an arbitrary node.
  const Mat& grad(Var v) const;

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Mat value;
    std::vector<int> parents;
    std::function<void(Tape&, int)> back;  // pulls grads_[self] into parents
    Param* param = nullptr;
  };

  Var push(Mat value, std::vector<int> parents, std::function<void(Tape&, int)> back,
           Param* param = nullptr);
  Mat& grad_ref(int id);

  std::vector<Node> nodes_;
  std::vector<Mat> grads_;
};

// Deterministic Adam. Moments key off the parameter object.
class Adam {
 public:
  struct Options {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
  };

  Adam() : Adam(Options{}) {}
  explicit Adam(Options opts) : opts_(opts) {}

  void step(const std::vector<Param*>& params);
  void reset() { step_ = 0; m_.clear(); v_.clear(); }

  int steps_taken() const { return step_; }
  const Options& options() const { return opts_; }

  // Moment snapshot aligned with the given parameter order, for resumable
  // training checkpoints.
  struct State {
    int step = 0;
    std::vector<std::pair<Mat, Mat>> moments;  // (m, v) per param
  };
  State export_state(const std::vector<Param*>& params) const;
  void import_state(const State& state, const std::vector<Param*>& params);

 private:
  Options opts_;
  int step_ = 0;
  std::map<const Param*, Mat> m_, v_;
};

// Fills a matrix with uniform values in [-limit, limit] using the portable
// project RNG so runs are byte-stable across platforms.
Mat random_uniform(Eigen::Index rows, Eigen::Index cols, double limit, Rng& rng);

// Xavier-style limit sqrt(6 / (fan_in + fan_out)).
Mat glorot(Eigen::Index rows, Eigen::Index cols, Rng& rng);

}  // namespace rappie::nn
