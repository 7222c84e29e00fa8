#include "bdt/autodiff.hpp"

#include <atomic>
#include <unordered_set>
#include <utility>

namespace bdt::ad {

namespace {

thread_local bool g_grad_enabled = true;
std::atomic<std::uint64_t> g_next_id{1};

std::shared_ptr<Node> make_node(Mat value, bool requires_grad) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = requires_grad;
  n->id = g_next_id.fetch_add(1, std::memory_order_relaxed);
  return n;
}

void check_finite(const char* op, const Mat& m) {
  if (debug_checks() && !m.allFinite()) {
    throw std::runtime_error(std::string("autodiff: non-finite values produced by op '") +
                             op + "'");
  }
}

std::string shape_str(const Tensor& t) {
  return "[" + std::to_string(t.rows()) + " x " + std::to_string(t.cols()) + "]";
}

[[noreturn]] void shape_error(const char* op, const Tensor& a, const Tensor& b) {
  throw std::invalid_argument(std::string(op) + ": incompatible shapes " + shape_str(a) +
                              " and " + shape_str(b));
}

bool track(const Tensor& a) { return g_grad_enabled && a.requires_grad(); }
bool track(const Tensor& a, const Tensor& b) {
  return g_grad_enabled && (a.requires_grad() || b.requires_grad());
}

Tensor op_node(const char* name, Mat value, std::vector<std::shared_ptr<Node>> parents,
               std::function<void(const Node&)> fn) {
  check_finite(name, value);
  auto n = make_node(std::move(value), true);
  n->parents = std::move(parents);
  n->backprop = std::move(fn);
  return Tensor(std::move(n));
}

Tensor const_node(const char* name, Mat value) {
  check_finite(name, value);
  return Tensor(make_node(std::move(value), false));
}

}  // namespace

Tensor::Tensor(const Mat& value, bool requires_grad)
    : node_(make_node(value, requires_grad)) {}

Tensor::Tensor(Eigen::Index rows, Eigen::Index cols, double fill, bool requires_grad)
    : node_(make_node(Mat::Constant(rows, cols, fill), requires_grad)) {}

double Tensor::item() const {
  if (rows() != 1 || cols() != 1) {
    throw std::invalid_argument("item: tensor is " + shape_str(*this) + ", expected [1 x 1]");
  }
  return node_->value(0, 0);
}

NoGradGuard::NoGradGuard() : saved_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = saved_; }
bool grad_enabled() { return g_grad_enabled; }

Tensor constant(const Mat& value) { return const_node("constant", value); }
Tensor scalar(double v) { return const_node("scalar", Mat::Constant(1, 1, v)); }

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows()) shape_error("matmul", a, b);
  Mat v = a.value() * b.value();
  if (!track(a, b)) return const_node("matmul", std::move(v));
  auto pa = a.node(), pb = b.node();
  return op_node("matmul", std::move(v), {pa, pb}, [pa, pb](const Node& self) {
    if (pa->requires_grad) pa->grad_ref().noalias() += self.grad * pb->value.transpose();
    if (pb->requires_grad) pb->grad_ref().noalias() += pa->value.transpose() * self.grad;
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) shape_error("add", a, b);
  Mat v = a.value() + b.value();
  if (!track(a, b)) return const_node("add", std::move(v));
  auto pa = a.node(), pb = b.node();
  return op_node("add", std::move(v), {pa, pb}, [pa, pb](const Node& self) {
    if (pa->requires_grad) pa->grad_ref() += self.grad;
    if (pb->requires_grad) pb->grad_ref() += self.grad;
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) shape_error("sub", a, b);
  Mat v = a.value() - b.value();
  if (!track(a, b)) return const_node("sub", std::move(v));
  auto pa = a.node(), pb = b.node();
  return op_node("sub", std::move(v), {pa, pb}, [pa, pb](const Node& self) {
    if (pa->requires_grad) pa->grad_ref() += self.grad;
    if (pb->requires_grad) pb->grad_ref() -= self.grad;
  });
}

Tensor cwise_mul(const Tensor& a, const Tensor& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) shape_error("cwise_mul", a, b);
  Mat v = a.value().cwiseProduct(b.value());
  if (!track(a, b)) return const_node("cwise_mul", std::move(v));
  auto pa = a.node(), pb = b.node();
  return op_node("cwise_mul", std::move(v), {pa, pb}, [pa, pb](const Node& self) {
    if (pa->requires_grad) pa->grad_ref() += self.grad.cwiseProduct(pb->value);
    if (pb->requires_grad) pb->grad_ref() += self.grad.cwiseProduct(pa->value);
  });
}

Tensor add_scalar(const Tensor& a, double c) {
  Mat v = a.value().array() + c;
  if (!track(a)) return const_node("add_scalar", std::move(v));
  auto pa = a.node();
  return op_node("add_scalar", std::move(v), {pa}, [pa](const Node& self) {
    if (pa->requires_grad) pa->grad_ref() += self.grad;
  });
}

Tensor mul_scalar(const Tensor& a, double c) {
  Mat v = a.value() * c;
  if (!track(a)) return const_node("mul_scalar", std::move(v));
  auto pa = a.node();
  return op_node("mul_scalar", std::move(v), {pa}, [pa, c](const Node& self) {
    if (pa->requires_grad) pa->grad_ref() += self.grad * c;
  });
}

Tensor div_scalar(const Tensor& a, double c) {
  Mat v = a.value() / c;
  if (!track(a)) return const_node("div_scalar", std::move(v));
  auto pa = a.node();
  return op_node("div_scalar", std::move(v), {pa}, [pa, c](const Node& self) {
    if (pa->requires_grad) pa->grad_ref() += self.grad / c;
  });
}

Tensor add_rowwise(const Tensor& x, const Tensor& row) {
  if (row.rows() != 1 || row.cols() != x.cols()) shape_error("add_rowwise", x, row);
  Mat v = x.value().rowwise() + row.value().row(0);
  if (!track(x, row)) return const_node("add_rowwise", std::move(v));
  auto px = x.node(), pr = row.node();
  return op_node("add_rowwise", std::move(v), {px, pr}, [px, pr](const Node& self) {
    if (px->requires_grad) px->grad_ref() += self.grad;
    if (pr->requires_grad) pr->grad_ref() += self.grad.colwise().sum();
  });
}

Tensor relu(const Tensor& x) {
  Mat v = x.value().cwiseMax(0.0);
  if (!track(x)) return const_node("relu", std::move(v));
  auto px = x.node();
  return op_node("relu", std::move(v), {px}, [px](const Node& self) {
    if (px->requires_grad) {
      px->grad_ref().array() +=
          self.grad.array() * (px->value.array() > 0.0).cast<double>();
    }
  });
}

Tensor tanh(const Tensor& x) {
  Mat v = x.value().array().tanh();
  if (!track(x)) return const_node("tanh", std::move(v));
  auto px = x.node();
  return op_node("tanh", std::move(v), {px}, [px](const Node& self) {
    if (px->requires_grad) {
      px->grad_ref().array() += self.grad.array() * (1.0 - self.value.array().square());
    }
  });
}

Tensor exp(const Tensor& x) {
  Mat v = x.value().array().exp();
  if (!track(x)) return const_node("exp", std::move(v));
  auto px = x.node();
  return op_node("exp", std::move(v), {px}, [px](const Node& self) {
    if (px->requires_grad) px->grad_ref().array() += self.grad.array() * self.value.array();
  });
}

Tensor log(const Tensor& x) {
  Mat v = x.value().array().log();
  if (!track(x)) return const_node("log", std::move(v));
  auto px = x.node();
  return op_node("log", std::move(v), {px}, [px](const Node& self) {
    if (px->requires_grad) px->grad_ref().array() += self.grad.array() / px->value.array();
  });
}

Tensor sigmoid(const Tensor& x) {
  Mat v = (1.0 / (1.0 + (-x.value().array()).exp())).matrix();
  if (!track(x)) return const_node("sigmoid", std::move(v));
  auto px = x.node();
  return op_node("sigmoid", std::move(v), {px}, [px](const Node& self) {
    if (px->requires_grad) {
      px->grad_ref().array() +=
          self.grad.array() * self.value.array() * (1.0 - self.value.array());
    }
  });
}

Tensor max_with_scalar(const Tensor& x, double c) {
  Mat v = x.value().cwiseMax(c);
  if (!track(x)) return const_node("max_with_scalar", std::move(v));
  auto px = x.node();
  return op_node("max_with_scalar", std::move(v), {px}, [px, c](const Node& self) {
    if (px->requires_grad) {
      px->grad_ref().array() +=
          self.grad.array() * (px->value.array() > c).cast<double>();
    }
  });
}

Tensor softmax(const Tensor& x, int axis) {
  if (axis != 0 && axis != 1) throw std::invalid_argument("softmax: axis must be 0 or 1");
  Mat v(x.rows(), x.cols());
  if (axis == 1) {
    using RowArr = Eigen::Array<double, 1, Eigen::Dynamic>;
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      RowArr e = (x.value().row(i).array() - x.value().row(i).maxCoeff()).exp();
      v.row(i) = (e / e.sum()).matrix();
    }
  } else {
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      Eigen::ArrayXd e = (x.value().col(j).array() - x.value().col(j).maxCoeff()).exp();
      v.col(j) = (e / e.sum()).matrix();
    }
  }
  if (!track(x)) return const_node("softmax", std::move(v));
  auto px = x.node();
  return op_node("softmax", std::move(v), {px}, [px, axis](const Node& self) {
    if (!px->requires_grad) return;
    Mat& gx = px->grad_ref();
    if (axis == 1) {
      for (Eigen::Index i = 0; i < self.value.rows(); ++i) {
        double dot = self.grad.row(i).cwiseProduct(self.value.row(i)).sum();
        gx.row(i).array() +=
            (self.grad.row(i).array() - dot) * self.value.row(i).array();
      }
    } else {
      for (Eigen::Index j = 0; j < self.value.cols(); ++j) {
        double dot = self.grad.col(j).cwiseProduct(self.value.col(j)).sum();
        gx.col(j).array() +=
            (self.grad.col(j).array() - dot) * self.value.col(j).array();
      }
    }
  });
}

Tensor sum(const Tensor& x) {
  Mat v = Mat::Constant(1, 1, x.value().sum());
  if (!track(x)) return const_node("sum", std::move(v));
  auto px = x.node();
  return op_node("sum", std::move(v), {px}, [px](const Node& self) {
    if (px->requires_grad) px->grad_ref().array() += self.grad(0, 0);
  });
}

Tensor mean(const Tensor& x) {
  Mat v = Mat::Constant(1, 1, x.value().mean());
  if (!track(x)) return const_node("mean", std::move(v));
  auto px = x.node();
  const double inv_n = 1.0 / static_cast<double>(x.size());
  return op_node("mean", std::move(v), {px}, [px, inv_n](const Node& self) {
    if (px->requires_grad) px->grad_ref().array() += self.grad(0, 0) * inv_n;
  });
}

Tensor transpose(const Tensor& x) {
  Mat v = x.value().transpose();
  if (!track(x)) return const_node("transpose", std::move(v));
  auto px = x.node();
  return op_node("transpose", std::move(v), {px}, [px](const Node& self) {
    if (px->requires_grad) px->grad_ref() += self.grad.transpose();
  });
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: empty input");
  Eigen::Index total = 0;
  const Eigen::Index c = parts.front().cols();
  for (const auto& p : parts) {
    if (p.cols() != c) shape_error("concat_rows", parts.front(), p);
    total += p.rows();
  }
  Mat v(total, c);
  Eigen::Index off = 0;
  for (const auto& p : parts) {
    v.middleRows(off, p.rows()) = p.value();
    off += p.rows();
  }
  bool req = false;
  for (const auto& p : parts) req = req || track(p);
  if (!req) return const_node("concat_rows", std::move(v));
  std::vector<std::shared_ptr<Node>> parents;
  parents.reserve(parts.size());
  for (const auto& p : parts) parents.push_back(p.node());
  auto ps = parents;
  return op_node("concat_rows", std::move(v), std::move(parents), [ps](const Node& self) {
    Eigen::Index off = 0;
    for (const auto& p : ps) {
      if (p->requires_grad) {
        p->grad_ref() += self.grad.middleRows(off, p->value.rows());
      }
      off += p->value.rows();
    }
  });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: empty input");
  Eigen::Index total = 0;
  const Eigen::Index r = parts.front().rows();
  for (const auto& p : parts) {
    if (p.rows() != r) shape_error("concat_cols", parts.front(), p);
    total += p.cols();
  }
  Mat v(r, total);
  Eigen::Index off = 0;
  for (const auto& p : parts) {
    v.middleCols(off, p.cols()) = p.value();
    off += p.cols();
  }
  bool req = false;
  for (const auto& p : parts) req = req || track(p);
  if (!req) return const_node("concat_cols", std::move(v));
  std::vector<std::shared_ptr<Node>> parents;
  parents.reserve(parts.size());
  for (const auto& p : parts) parents.push_back(p.node());
  auto ps = parents;
  return op_node("concat_cols", std::move(v), std::move(parents), [ps](const Node& self) {
    Eigen::Index off = 0;
    for (const auto& p : ps) {
      if (p->requires_grad) {
        p->grad_ref() += self.grad.middleCols(off, p->value.cols());
      }
      off += p->value.cols();
    }
  });
}

Tensor rows(const Tensor& x, Eigen::Index start, Eigen::Index n) {
  if (start < 0 || n < 1 || start + n > x.rows()) {
    throw std::invalid_argument("rows: range [" + std::to_string(start) + ", " +
                                std::to_string(start + n) + ") out of bounds for " +
                                shape_str(x));
  }
  Mat v = x.value().middleRows(start, n);
  if (!track(x)) return const_node("rows", std::move(v));
  auto px = x.node();
  return op_node("rows", std::move(v), {px}, [px, start, n](const Node& self) {
    if (px->requires_grad) px->grad_ref().middleRows(start, n) += self.grad;
  });
}

Tensor cols(const Tensor& x, Eigen::Index start, Eigen::Index n) {
  if (start < 0 || n < 1 || start + n > x.cols()) {
    throw std::invalid_argument("cols: range [" + std::to_string(start) + ", " +
                                std::to_string(start + n) + ") out of bounds for " +
                                shape_str(x));
  }
  Mat v = x.value().middleCols(start, n);
  if (!track(x)) return const_node("cols", std::move(v));
  auto px = x.node();
  return op_node("cols", std::move(v), {px}, [px, start, n](const Node& self) {
    if (px->requires_grad) px->grad_ref().middleCols(start, n) += self.grad;
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  if (gain.rows() != 1 || gain.cols() != x.cols()) shape_error("layer_norm", x, gain);
  if (bias.rows() != 1 || bias.cols() != x.cols()) shape_error("layer_norm", x, bias);
  const Eigen::Index n = x.rows(), d = x.cols();
  Mat xhat(n, d);
  Vec inv_std(n);
  Mat v(n, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double mu = x.value().row(i).mean();
    const double var = (x.value().row(i).array() - mu).square().mean();
    inv_std(i) = 1.0 / std::sqrt(var + eps);
    xhat.row(i) = (x.value().row(i).array() - mu) * inv_std(i);
    v.row(i) = (xhat.row(i).array() * gain.value().row(0).array() +
                bias.value().row(0).array())
                   .matrix();
  }
  bool req = track(x, gain) || track(bias);
  if (!req) return const_node("layer_norm", std::move(v));
  auto px = x.node(), pg = gain.node(), pb = bias.node();
  return op_node(
      "layer_norm", std::move(v), {px, pg, pb},
      [px, pg, pb, xhat = std::move(xhat), inv_std = std::move(inv_std)](const Node& self) {
        if (pb->requires_grad) pb->grad_ref() += self.grad.colwise().sum();
        if (pg->requires_grad) {
          pg->grad_ref() += self.grad.cwiseProduct(xhat).colwise().sum();
        }
        if (px->requires_grad) {
          using RowArr = Eigen::Array<double, 1, Eigen::Dynamic>;
          Mat& gx = px->grad_ref();
          for (Eigen::Index i = 0; i < self.value.rows(); ++i) {
            RowArr dxhat = self.grad.row(i).array() * pg->value.row(0).array();
            const double m1 = dxhat.mean();
            const double m2 = (dxhat * xhat.row(i).array()).mean();
            gx.row(i).array() +=
                inv_std(i) * (dxhat - m1 - xhat.row(i).array() * m2);
          }
        }
      });
}

Tensor dropout(const Tensor& x, double rate, RngStream& rng, bool training) {
  if (rate < 0.0 || rate >= 1.0) throw std::invalid_argument("dropout: rate must be in [0,1)");
  if (!training || rate == 0.0) return x;
  const double keep = 1.0 - rate;
  Mat mask(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      mask(i, j) = rng.bernoulli(keep) ? 1.0 / keep : 0.0;
    }
  }
  Mat v = x.value().cwiseProduct(mask);
  if (!track(x)) return const_node("dropout", std::move(v));
  auto px = x.node();
  return op_node("dropout", std::move(v), {px},
                 [px, mask = std::move(mask)](const Node& self) {
                   if (px->requires_grad) px->grad_ref() += self.grad.cwiseProduct(mask);
                 });
}

Tensor bernoulli_straight_through(const Tensor& q, RngStream& rng) {
  Mat v(q.rows(), q.cols());
  for (Eigen::Index i = 0; i < q.rows(); ++i) {
    for (Eigen::Index j = 0; j < q.cols(); ++j) {
      const double p = q.value()(i, j);
      if (debug_checks() && !(p >= 0.0 && p <= 1.0)) {
        throw std::runtime_error("bernoulli_straight_through: probability outside [0,1]");
      }
      v(i, j) = rng.bernoulli(p) ? 1.0 : 0.0;
    }
  }
  if (!track(q)) return const_node("bernoulli_st", std::move(v));
  auto pq = q.node();
  return op_node("bernoulli_st", std::move(v), {pq}, [pq](const Node& self) {
    if (pq->requires_grad) pq->grad_ref() += self.grad;
  });
}

namespace {

// Iterative postorder DFS; parents are emitted before children, so the
// reversed order is safe for backpropagation.
std::vector<Node*> topo_postorder(Node* root) {
  std::vector<Node*> out;
  std::unordered_set<const Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(root, 0);
  visited.insert(root);
  while (!stack.empty()) {
    auto& top = stack.back();
    if (top.second < top.first->parents.size()) {
      Node* p = top.first->parents[top.second++].get();
      if (visited.insert(p).second) stack.emplace_back(p, 0);
    } else {
      out.push_back(top.first);
      stack.pop_back();
    }
  }
  return out;
}

}  // namespace

void backward(const Tensor& loss) {
  if (loss.rows() != 1 || loss.cols() != 1) {
    throw std::invalid_argument("backward: loss must be [1 x 1], got " + shape_str(loss));
  }
  std::vector<Node*> order = topo_postorder(loss.node().get());
  // Interior gradients are scratch space for this pass; only leaf gradients
  // (parameters) accumulate across passes.
  for (Node* n : order) {
    if (n->backprop) n->grad.resize(0, 0);
  }
  loss.node()->grad_ref()(0, 0) += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backprop && n->grad.size() != 0) n->backprop(*n);
  }
}

std::vector<std::uint64_t> backward_order_ids(const Tensor& root) {
  std::vector<Node*> order = topo_postorder(root.node().get());
  std::vector<std::uint64_t> ids;
  ids.reserve(order.size());
  for (auto it = order.rbegin(); it != order.rend(); ++it) ids.push_back((*it)->id);
  return ids;
}

}  // namespace bdt::ad
