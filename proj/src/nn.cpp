#include "rappie/nn.hpp"

#include <cmath>

#include "rappie/errors.hpp"

namespace rappie::nn {

Tape::Var Tape::push(Mat value, std::vector<int> parents, std::function<void(Tape&, int)> back,
                     Param* param) {
  Node n;
  n.value = std::move(value);
  n.parents = std::move(parents);
  n.back = std::move(back);
  n.param = param;
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

Mat& Tape::grad_ref(int id) {
  auto idx = static_cast<std::size_t>(id);
  if (grads_[idx].size() == 0)
    grads_[idx] = Mat::Zero(nodes_[idx].value.rows(), nodes_[idx].value.cols());
  return grads_[idx];
}

const Mat& Tape::grad(Var v) const { return grads_.at(static_cast<std::size_t>(v.id)); }

Tape::Var Tape::constant(Mat value) { return push(std::move(value), {}, nullptr); }

Tape::Var Tape::leaf(Param& p) { return push(p.value, {}, nullptr, &p); }

Tape::Var Tape::matmul(Var a, Var b) {
  const Mat& A = val(a);
  const Mat& B = val(b);
  if (A.cols() != B.rows())
    throw DimensionMismatch("matmul " + std::to_string(A.rows()) + "x" + std::to_string(A.cols()) +
                            " * " + std::to_string(B.rows()) + "x" + std::to_string(B.cols()));
  return push(A * B, {a.id, b.id}, [](Tape& t, int self) {
    const Mat& g = t.grads_[static_cast<std::size_t>(self)];
    const auto& n = t.nodes_[static_cast<std::size_t>(self)];
    const Mat& A = t.nodes_[static_cast<std::size_t>(n.parents[0])].value;
    const Mat& B = t.nodes_[static_cast<std::size_t>(n.parents[1])].value;
    t.grad_ref(n.parents[0]) += g * B.transpose();
    t.grad_ref(n.parents[1]) += A.transpose() * g;
  });
}

Tape::Var Tape::add(Var a, Var b) {
  const Mat& A = val(a);
  const Mat& B = val(b);
  if (A.rows() != B.rows() || A.cols() != B.cols()) throw DimensionMismatch("add shape mismatch");
  return push(A + B, {a.id, b.id}, [](Tape& t, int self) {
    const Mat& g = t.grads_[static_cast<std::size_t>(self)];
    const auto& n = t.nodes_[static_cast<std::size_t>(self)];
    t.grad_ref(n.parents[0]) += g;
    t.grad_ref(n.parents[1]) += g;
  });
}

Tape::Var Tape::sub(Var a, Var b) {
  const Mat& A = val(a);
  const Mat& B = val(b);
  if (A.rows() != B.rows() || A.cols() != B.cols()) throw DimensionMismatch("sub shape mismatch");
  return push(A - B, {a.id, b.id}, [](Tape& t, int self) {
    const Mat& g = t.grads_[static_cast<std::size_t>(self)];
    const auto& n = t.nodes_[static_cast<std::size_t>(self)];
    t.grad_ref(n.parents[0]) += g;
    t.grad_ref(n.parents[1]) -= g;
  });
}

Tape::Var Tape::scale(Var a, double s) {
  return push(val(a) * s, {a.id}, [s](Tape& t, int self) {
    const Mat& g = t.grads_[static_cast<std::size_t>(self)];
    const auto& n = t.nodes_[static_cast<std::size_t>(self)];
    t.grad_ref(n.parents[0]) += g * s;
  });
}

Tape::Var Tape::transpose(Var a) {
  return push(val(a).transpose(), {a.id}, [](Tape& t, int self) {
    const Mat& g = t.grads_[static_cast<std::size_t>(self)];
    const auto& n = t.nodes_[static_cast<std::size_t>(self)];
    t.grad_ref(n.parents[0]) += g.transpose();
  });
}

Tape::Var Tape::rows(Var a, Eigen::Index r0, Eigen::Index n) {
  const Mat& A = val(a);
  if (r0 < 0 || n < 1 || r0 + n > A.rows()) throw DimensionMismatch("row slice out of range");
  return push(A.middleRows(r0, n), {a.id}, [r0, n](Tape& t, int self) {
    const Mat& g = t.grads_[static_cast<std::size_t>(self)];
    const auto& nd = t.nodes_[static_cast<std::size_t>(self)];
    t.grad_ref(nd.parents[0]).middleRows(r0, n) += g;
  });
}

Tape::Var Tape::cols(Var a, Eigen::Index c0, Eigen::Index n) {
  const Mat& A = val(a);
  if (c0 < 0 || n < 1 || c0 + n > A.cols()) throw DimensionMismatch("col slice out of range");
  return push(A.middleCols(c0, n), {a.id}, [c0, n](Tape& t, int self) {
    const Mat& g = t.grads_[static_cast<std::size_t>(self)];
    const auto& nd = t.nodes_[static_cast<std::size_t>(self)];
    t.grad_ref(nd.parents[0]).middleCols(c0, n) += g;
  });
}

Tape::Var Tape::hstack(const std::vector<Var>& parts) {
  if (parts.empty()) throw EmptySet("hstack of nothing");
  Eigen::Index rows = val(parts[0]).rows();
  Eigen::Index cols = 0;
  std::vector<int> parents;
  std::vector<Eigen::Index> widths;
  for (Var p : parts) {
    if (val(p).rows() != rows) throw DimensionMismatch("hstack row mismatch");
    widths.push_back(val(p).cols());
    cols += val(p).cols();
    parents.push_back(p.id);
  }
  Mat out(rows, cols);
  Eigen::Index at = 0;
  for (Var p : parts) {
    out.middleCols(at, val(p).cols()) = val(p);
    at += val(p).cols();
  }
  return push(std::move(out), std::move(parents), [widths](Tape& t, int self) {
    const Mat& g = t.grads_[static_cast<std::size_t>(self)];
    const auto& nd = t.nodes_[static_cast<std::size_t>(self)];
    Eigen::Index at = 0;
    for (std::size_t i = 0; i < widths.size(); ++i) {
      t.grad_ref(nd.parents[i]) += g.middleCols(at, widths[i]);
      at += widths[i];
    }
  });
}

Tape::Var Tape::vstack(const std::vector<Var>& parts) {
  if (parts.empty()) throw EmptySet("vstack of nothing");
  Eigen::Index cols = val(parts[0]).cols();
  Eigen::Index rows = 0;
  std::vector<int> parents;
  std::vector<Eigen::Index> heights;
  for (Var p : parts) {
    if (val(p).cols() != cols) throw DimensionMismatch("vstack col mismatch");
    heights.push_back(val(p).rows());
    rows += val(p).rows();
    parents.push_back(p.id);
  }
  Mat out(rows, cols);
  Eigen::Index at = 0;
  for (Var p : parts) {
    out.middleRows(at, val(p).rows()) = val(p);
    at += val(p).rows();
  }
  return push(std::move(out), std::move(parents), [heights](Tape& t, int self) {
    const Mat& g = t.grads_[static_cast<std::size_t>(self)];
    const auto& nd = t.nodes_[static_cast<std::size_t>(self)];
    Eigen::Index at = 0;
    for (std::size_t i = 0; i < heights.size(); ++i) {
      t.grad_ref(nd.parents[i]) += g.middleRows(at, heights[i]);
      at += heights[i];
    }
  });
}

Tape::Var Tape::softmax_rows(Var a) {
  const Mat& A = val(a);
  Mat out(A.rows(), A.cols());
  for (Eigen::Index r = 0; r < A.rows(); ++r) {
    double mx = A.row(r).maxCoeff();
    Eigen::ArrayXd e = (A.row(r).array() - mx).exp();
    out.row(r) = (e / e.sum()).matrix();
  }
  return push(std::move(out), {a.id}, [](Tape& t, int self) {
    const Mat& g = t.grads_[static_cast<std::size_t>(self)];
    const auto& nd = t.nodes_[static_cast<std::size_t>(self)];
    const Mat& p = nd.value;
    Mat& ga = t.grad_ref(nd.parents[0]);
    for (Eigen::Index r = 0; r < p.rows(); ++r) {
      double dot = g.row(r).cwiseProduct(p.row(r)).sum();
      ga.row(r) += p.row(r).cwiseProduct((g.row(r).array() - dot).matrix());
    }
  });
}

Tape::Var Tape::sigmoid(Var a) {
  Mat out = val(a).unaryExpr([](double x) { return 1.0 / (1.0 + std::exp(-x)); });
  return push(std::move(out), {a.id}, [](Tape& t, int self) {
    const Mat& g = t.grads_[static_cast<std::size_t>(self)];
    const auto& nd = t.nodes_[static_cast<std::size_t>(self)];
    const Mat& s = nd.value;
    t.grad_ref(nd.parents[0]) +=
        g.cwiseProduct(s.cwiseProduct((1.0 - s.array()).matrix()));
  });
}

Tape::Var Tape::hadamard(Var a, Var b) {
  const Mat& A = val(a);
  const Mat& B = val(b);
  if (A.rows() != B.rows() || A.cols() != B.cols())
    throw DimensionMismatch("hadamard shape mismatch");
  return push(A.cwiseProduct(B), {a.id, b.id}, [](Tape& t, int self) {
    const Mat& g = t.grads_[static_cast<std::size_t>(self)];
    const auto& nd = t.nodes_[static_cast<std::size_t>(self)];
    const Mat& A = t.nodes_[static_cast<std::size_t>(nd.parents[0])].value;
    const Mat& B = t.nodes_[static_cast<std::size_t>(nd.parents[1])].value;
    t.grad_ref(nd.parents[0]) += g.cwiseProduct(B);
    t.grad_ref(nd.parents[1]) += g.cwiseProduct(A);
  });
}

Tape::Var Tape::add_col_broadcast(Var m, Var col) {
  const Mat& M = val(m);
  const Mat& C = val(col);
  if (C.cols() != 1 || C.rows() != M.rows())
    throw DimensionMismatch("broadcast column must be rows x 1");
  return push(M.colwise() + C.col(0), {m.id, col.id}, [](Tape& t, int self) {
    const Mat& g = t.grads_[static_cast<std::size_t>(self)];
    const auto& nd = t.nodes_[static_cast<std::size_t>(self)];
    t.grad_ref(nd.parents[0]) += g;
    t.grad_ref(nd.parents[1]) += g.rowwise().sum();
  });
}

Tape::Var Tape::mean_cols(Var a) {
  const Mat& A = val(a);
  Eigen::Index c = A.cols();
  return push(A.rowwise().mean(), {a.id}, [c](Tape& t, int self) {
    const Mat& g = t.grads_[static_cast<std::size_t>(self)];
    const auto& nd = t.nodes_[static_cast<std::size_t>(self)];
    t.grad_ref(nd.parents[0]) += g.replicate(1, c) / static_cast<double>(c);
  });
}

Tape::Var Tape::log_clamped(Var a, double floor) {
  const Mat& A = val(a);
  Mat out = A.unaryExpr([floor](double x) { return std::log(x < floor ? floor : x); });
  return push(std::move(out), {a.id}, [floor](Tape& t, int self) {
    const Mat& g = t.grads_[static_cast<std::size_t>(self)];
    const auto& nd = t.nodes_[static_cast<std::size_t>(self)];
    const Mat& A = t.nodes_[static_cast<std::size_t>(nd.parents[0])].value;
    t.grad_ref(nd.parents[0]) +=
        g.binaryExpr(A, [floor](double gv, double av) { return av < floor ? 0.0 : gv / av; });
  });
}

Tape::Var Tape::pick(Var a, Eigen::Index r, Eigen::Index c) {
  const Mat& A = val(a);
  if (r < 0 || c < 0 || r >= A.rows() || c >= A.cols())
    throw DimensionMismatch("pick out of range");
  Mat out(1, 1);
  out(0, 0) = A(r, c);
  return push(std::move(out), {a.id}, [r, c](Tape& t, int self) {
    const Mat& g = t.grads_[static_cast<std::size_t>(self)];
    const auto& nd = t.nodes_[static_cast<std::size_t>(self)];
    t.grad_ref(nd.parents[0])(r, c) += g(0, 0);
  });
}

Tape::Var Tape::sum_all(Var a) {
  Mat out(1, 1);
  out(0, 0) = val(a).sum();
  return push(std::move(out), {a.id}, [](Tape& t, int self) {
    const Mat& g = t.grads_[static_cast<std::size_t>(self)];
    const auto& nd = t.nodes_[static_cast<std::size_t>(self)];
    const Mat& A = t.nodes_[static_cast<std::size_t>(nd.parents[0])].value;
    t.grad_ref(nd.parents[0]) += Mat::Constant(A.rows(), A.cols(), g(0, 0));
  });
}

Tape::Var Tape::sumsq(Var a) {
  Mat out(1, 1);
  out(0, 0) = val(a).squaredNorm();
  return push(std::move(out), {a.id}, [](Tape& t, int self) {
    const Mat& g = t.grads_[static_cast<std::size_t>(self)];
    const auto& nd = t.nodes_[static_cast<std::size_t>(self)];
    const Mat& A = t.nodes_[static_cast<std::size_t>(nd.parents[0])].value;
    t.grad_ref(nd.parents[0]) += 2.0 * g(0, 0) * A;
  });
}

Tape::Var Tape::custom(Mat value, std::vector<Var> parents,
                       std::function<void(const Mat& g, std::vector<Mat*>& parent_grads)> pullback) {
  std::vector<int> ids;
  ids.reserve(parents.size());
  for (Var p : parents) ids.push_back(p.id);
  return push(std::move(value), std::move(ids),
              [pullback = std::move(pullback)](Tape& t, int self) {
                const Mat& g = t.grads_[static_cast<std::size_t>(self)];
                const auto& nd = t.nodes_[static_cast<std::size_t>(self)];
                std::vector<Mat*> pgrads;
                pgrads.reserve(nd.parents.size());
                for (int pid : nd.parents) pgrads.push_back(&t.grad_ref(pid));
                pullback(g, pgrads);
              });
}

void Tape::backward(Var out) {
  const Mat& o = val(out);
  if (o.rows() != 1 || o.cols() != 1)
    throw DimensionMismatch("backward() needs a 1x1 output node");
  grads_.assign(nodes_.size(), Mat());
  grads_[static_cast<std::size_t>(out.id)] = Mat::Ones(1, 1);
  for (int i = out.id; i >= 0; --i) {
    auto idx = static_cast<std::size_t>(i);
    if (grads_[idx].size() == 0) continue;
    if (nodes_[idx].back) nodes_[idx].back(*this, i);
    if (nodes_[idx].param) nodes_[idx].param->grad += grads_[idx];
  }
}

void Adam::step(const std::vector<Param*>& params) {
  ++step_;
  double b1t = 1.0 - std::pow(opts_.beta1, step_);
  double b2t = 1.0 - std::pow(opts_.beta2, step_);
  for (Param* p : params) {
    Mat& m = m_[p];
    Mat& v = v_[p];
    if (m.size() == 0) {
      m = Mat::Zero(p->value.rows(), p->value.cols());
      v = Mat::Zero(p->value.rows(), p->value.cols());
    }
    m = opts_.beta1 * m + (1.0 - opts_.beta1) * p->grad;
    v = opts_.beta2 * v + (1.0 - opts_.beta2) * p->grad.cwiseProduct(p->grad);
    Mat mhat = m / b1t;
    Mat vhat = v / b2t;
    p->value -=
        opts_.lr * mhat.cwiseQuotient((vhat.array().sqrt() + opts_.eps).matrix());
  }
}

Adam::State Adam::export_state(const std::vector<Param*>& params) const {
  State s;
  s.step = step_;
  s.moments.reserve(params.size());
  for (const Param* p : params) {
    auto mi = m_.find(p);
    auto vi = v_.find(p);
    Mat zero = Mat::Zero(p->value.rows(), p->value.cols());
    s.moments.emplace_back(mi == m_.end() ? zero : mi->second,
                           vi == v_.end() ? zero : vi->second);
  }
  return s;
}

void Adam::import_state(const State& state, const std::vector<Param*>& params) {
  if (state.moments.size() != params.size())
    throw DimensionMismatch("optimizer state does not match parameter list");
  reset();
  step_ = state.step;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& [m, v] = state.moments[i];
    if (m.rows() != params[i]->value.rows() || m.cols() != params[i]->value.cols())
      throw DimensionMismatch("optimizer moment shape mismatch for " + params[i]->name);
    m_[params[i]] = m;
    v_[params[i]] = v;
  }
}

Mat random_uniform(Eigen::Index rows, Eigen::Index cols, double limit, Rng& rng) {
  Mat m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = rng.symmetric() * limit;
  return m;
}

Mat glorot(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
  return random_uniform(rows, cols, limit, rng);
}

}  // namespace rappie::nn
