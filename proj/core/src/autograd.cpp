#include "rfhit/autograd.h"

#include <Eigen/Core>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <unordered_set>

#include "rfhit/cost_counter.h"

namespace rfhit::ag {
namespace {

thread_local bool tls_grad_enabled = true;

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

bool wants_grad(const Var& v) { return v.defined() && v.requires_grad(); }

}  // namespace

Tensor& Node::grad_buffer() {
  if (grad.empty() && !value.empty()) grad = Tensor(value.shape());
  return grad;
}

void Node::accumulate(const Tensor& g) { grad_buffer() += g; }

Var::Var(Tensor value, bool requires_grad) : node_(std::make_shared<Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

bool grad_enabled() { return tls_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(tls_grad_enabled) { tls_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { tls_grad_enabled = previous_; }

Var make_result(Tensor value, std::vector<Var> inputs, std::function<void(Node&)> fn) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  if (tls_grad_enabled) {
    bool any = false;
    for (const Var& in : inputs) any = any || wants_grad(in);
    if (any) {
      node->requires_grad = true;
      node->parents.reserve(inputs.size());
      for (const Var& in : inputs) node->parents.push_back(in.node());
      node->backward_fn = std::move(fn);
    }
  }
  return Var(std::move(node));
}

void backward(const Var& output) {
  if (!output.defined() || output.value().numel() != 1) {
    throw std::invalid_argument("backward: output must hold exactly one element");
  }
  if (!output.requires_grad()) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, size_t>> stack;
  stack.emplace_back(output.node().get(), 0);
  visited.insert(output.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next++].get();
      if (parent && parent->requires_grad && visited.insert(parent).second) {
        stack.emplace_back(parent, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  output.node()->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (node->backward_fn && !node->grad.empty()) node->backward_fn(*node);
  }
}

Var linear(const Var& x, const Var& weight, const Var& bias) {
  const Tensor& w = weight.value();
  if (w.rank() != 2) throw std::invalid_argument("linear: weight must be rank 2");
  const int64_t in = w.dim(0);
  const int64_t out = w.dim(1);
  const Tensor& xv = x.value();
  if (xv.rank() < 1 || xv.shape().back() != in) {
    throw std::invalid_argument("linear: input " + shape_string(xv.shape()) +
                                " does not end in " + std::to_string(in));
  }
  if (bias.defined() && bias.value().numel() != out) {
    throw std::invalid_argument("linear: bias size mismatch");
  }
  const int64_t rows = xv.numel() / in;
  Shape out_shape = xv.shape();
  out_shape.back() = out;
  Tensor y(out_shape);
  MutMap(y.data(), rows, out).noalias() =
      ConstMap(xv.data(), rows, in) * ConstMap(w.data(), in, out);
  if (bias.defined()) {
    const double* b = bias.value().data();
    for (int64_t r = 0; r < rows; ++r) {
      double* row = y.data() + r * out;
      for (int64_t j = 0; j < out; ++j) row[j] += b[j];
    }
  }
  if (CostCounter* c = active_cost_counter()) c->macs += rows * in * out;

  std::vector<Var> inputs{x, weight};
  if (bias.defined()) inputs.push_back(bias);
  return make_result(std::move(y), std::move(inputs), [rows, in, out](Node& self) {
    ConstMap dy(self.grad.data(), rows, out);
    Node& xn = *self.parents[0];
    Node& wn = *self.parents[1];
    if (xn.requires_grad) {
      MutMap(xn.grad_buffer().data(), rows, in).noalias() +=
          dy * ConstMap(wn.value.data(), in, out).transpose();
    }
    if (wn.requires_grad) {
      MutMap(wn.grad_buffer().data(), in, out).noalias() +=
          ConstMap(xn.value.data(), rows, in).transpose() * dy;
    }
    if (self.parents.size() > 2 && self.parents[2]->requires_grad) {
      Eigen::Map<Eigen::RowVectorXd>(self.parents[2]->grad_buffer().data(), out) +=
          dy.colwise().sum();
    }
  });
}

Var add(const Var& a, const Var& b) {
  require_same_shape(a.value(), b.value(), "add");
  return make_result(a.value() + b.value(), {a, b}, [](Node& self) {
    for (auto& p : self.parents)
      if (p->requires_grad) p->accumulate(self.grad);
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape(a.value(), b.value(), "sub");
  return make_result(a.value() - b.value(), {a, b}, [](Node& self) {
    if (self.parents[0]->requires_grad) self.parents[0]->accumulate(self.grad);
    if (self.parents[1]->requires_grad) self.parents[1]->grad_buffer() -= self.grad;
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape(a.value(), b.value(), "mul");
  Tensor y = a.value();
  for (int64_t i = 0; i < y.numel(); ++i) y[i] *= b.value()[i];
  return make_result(std::move(y), {a, b}, [](Node& self) {
    Node& an = *self.parents[0];
    Node& bn = *self.parents[1];
    if (an.requires_grad) {
      Tensor& g = an.grad_buffer();
      for (int64_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i] * bn.value[i];
    }
    if (bn.requires_grad) {
      Tensor& g = bn.grad_buffer();
      for (int64_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i] * an.value[i];
    }
  });
}

Var scale(const Var& a, double s) {
  return make_result(a.value() * s, {a}, [s](Node& self) {
    Tensor& g = self.parents[0]->grad_buffer();
    for (int64_t i = 0; i < g.numel(); ++i) g[i] += s * self.grad[i];
  });
}

double squash(double raw) { return 1.0 / (1.0 + std::exp(-raw)); }

Var lerp(const Var& x, const Var& y, const Var& raw) {
  require_same_shape(x.value(), y.value(), "lerp");
  if (raw.value().numel() != 1) throw std::invalid_argument("lerp: coefficient must be scalar");
  const double a = squash(raw.value()[0]);
  Tensor out(x.shape());
  for (int64_t i = 0; i < out.numel(); ++i) {
    out[i] = (1.0 - a) * x.value()[i] + a * y.value()[i];
  }
  return make_result(std::move(out), {x, y, raw}, [a](Node& self) {
    Node& xn = *self.parents[0];
    Node& yn = *self.parents[1];
    Node& rn = *self.parents[2];
    const Tensor& g = self.grad;
    if (xn.requires_grad) {
      Tensor& gx = xn.grad_buffer();
      for (int64_t i = 0; i < g.numel(); ++i) gx[i] += (1.0 - a) * g[i];
    }
    if (yn.requires_grad) {
      Tensor& gy = yn.grad_buffer();
      for (int64_t i = 0; i < g.numel(); ++i) gy[i] += a * g[i];
    }
    if (rn.requires_grad) {
      double acc = 0.0;
      for (int64_t i = 0; i < g.numel(); ++i) acc += g[i] * (yn.value[i] - xn.value[i]);
      rn.grad_buffer()[0] += acc * a * (1.0 - a);
    }
  });
}

namespace {
double gelu(double v) { return 0.5 * v * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0)); }
double gelu_grad(double v) {
  const double cdf = 0.5 * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0));
  const double pdf = std::exp(-0.5 * v * v) * std::numbers::inv_sqrtpi / std::numbers::sqrt2;
  return cdf + v * pdf;
}
}  // namespace

Var geglu(const Var& x) {
  const Tensor& xv = x.value();
  const int64_t two_h = xv.shape().back();
  if (two_h % 2 != 0) throw std::invalid_argument("geglu: last dim must be even");
  const int64_t h = two_h / 2;
  const int64_t rows = xv.numel() / two_h;
  Shape shape = xv.shape();
  shape.back() = h;
  Tensor y(shape);
  for (int64_t r = 0; r < rows; ++r) {
    const double* in = xv.data() + r * two_h;
    double* out = y.data() + r * h;
    for (int64_t j = 0; j < h; ++j) out[j] = in[j] * gelu(in[h + j]);
  }
  return make_result(std::move(y), {x}, [rows, h](Node& self) {
    Node& xn = *self.parents[0];
    Tensor& gx = xn.grad_buffer();
    for (int64_t r = 0; r < rows; ++r) {
      const double* in = xn.value.data() + r * 2 * h;
      const double* g = self.grad.data() + r * h;
      double* out = gx.data() + r * 2 * h;
      for (int64_t j = 0; j < h; ++j) {
        out[j] += g[j] * gelu(in[h + j]);
        out[h + j] += g[j] * in[j] * gelu_grad(in[h + j]);
      }
    }
  });
}

Var concat_channels(const Var& a, const Var& b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rank() != bv.rank() ||
      !std::equal(av.shape().begin(), av.shape().end() - 1, bv.shape().begin())) {
    throw std::invalid_argument("concat_channels: leading dims differ " +
                                shape_string(av.shape()) + " vs " + shape_string(bv.shape()));
  }
  const int64_t ca = av.shape().back();
  const int64_t cb = bv.shape().back();
  const int64_t rows = av.numel() / std::max<int64_t>(ca, 1);
  Shape shape = av.shape();
  shape.back() = ca + cb;
  Tensor y(shape);
  for (int64_t r = 0; r < rows; ++r) {
    std::copy_n(av.data() + r * ca, ca, y.data() + r * (ca + cb));
    std::copy_n(bv.data() + r * cb, cb, y.data() + r * (ca + cb) + ca);
  }
  return make_result(std::move(y), {a, b}, [rows, ca, cb](Node& self) {
    Node& an = *self.parents[0];
    Node& bn = *self.parents[1];
    for (int64_t r = 0; r < rows; ++r) {
      const double* g = self.grad.data() + r * (ca + cb);
      if (an.requires_grad) {
        double* d = an.grad_buffer().data() + r * ca;
        for (int64_t j = 0; j < ca; ++j) d[j] += g[j];
      }
      if (bn.requires_grad) {
        double* d = bn.grad_buffer().data() + r * cb;
        for (int64_t j = 0; j < cb; ++j) d[j] += g[ca + j];
      }
    }
  });
}

Tensor space_to_depth(const Tensor& x, int64_t fy, int64_t fx) {
  if (x.rank() != 4) throw std::invalid_argument("space_to_depth: rank-4 input required");
  const int64_t b = x.batch(), h = x.height(), w = x.width(), c = x.channels();
  if (fy <= 0 || fx <= 0 || h % fy != 0 || w % fx != 0) {
    throw std::invalid_argument("space_to_depth: " + std::to_string(h) + "x" +
                                std::to_string(w) + " not divisible by " +
                                std::to_string(fy) + "x" + std::to_string(fx));
  }
  const int64_t oh = h / fy, ow = w / fx, oc = fy * fx * c;
  Tensor y({b, oh, ow, oc});
  for (int64_t n = 0; n < b; ++n)
    for (int64_t i = 0; i < oh; ++i)
      for (int64_t j = 0; j < ow; ++j) {
        double* dst = y.data() + ((n * oh + i) * ow + j) * oc;
        for (int64_t dy = 0; dy < fy; ++dy)
          for (int64_t dx = 0; dx < fx; ++dx) {
            const double* src = x.data() + ((n * h + i * fy + dy) * w + j * fx + dx) * c;
            std::copy_n(src, c, dst + (dy * fx + dx) * c);
          }
      }
  return y;
}

Tensor depth_to_space(const Tensor& x, int64_t fy, int64_t fx) {
  if (x.rank() != 4) throw std::invalid_argument("depth_to_space: rank-4 input required");
  const int64_t b = x.batch(), h = x.height(), w = x.width(), ic = x.channels();
  if (fy <= 0 || fx <= 0 || ic % (fy * fx) != 0) {
    throw std::invalid_argument("depth_to_space: channels " + std::to_string(ic) +
                                " not divisible by " + std::to_string(fy * fx));
  }
  const int64_t c = ic / (fy * fx), oh = h * fy, ow = w * fx;
  Tensor y({b, oh, ow, c});
  for (int64_t n = 0; n < b; ++n)
    for (int64_t i = 0; i < h; ++i)
      for (int64_t j = 0; j < w; ++j) {
        const double* src = x.data() + ((n * h + i) * w + j) * ic;
        for (int64_t dy = 0; dy < fy; ++dy)
          for (int64_t dx = 0; dx < fx; ++dx) {
            double* dst = y.data() + ((n * oh + i * fy + dy) * ow + j * fx + dx) * c;
            std::copy_n(src + (dy * fx + dx) * c, c, dst);
          }
      }
  return y;
}

Var space_to_depth(const Var& x, int64_t fy, int64_t fx) {
  return make_result(space_to_depth(x.value(), fy, fx), {x}, [fy, fx](Node& self) {
    self.parents[0]->accumulate(depth_to_space(self.grad, fy, fx));
  });
}

Var depth_to_space(const Var& x, int64_t fy, int64_t fx) {
  return make_result(depth_to_space(x.value(), fy, fx), {x}, [fy, fx](Node& self) {
    self.parents[0]->accumulate(space_to_depth(self.grad, fy, fx));
  });
}

Var mse(const Var& pred, const Tensor& target) {
  require_same_shape(pred.value(), target, "mse");
  const int64_t n = target.numel();
  if (n == 0) throw std::invalid_argument("mse: empty input");
  double acc = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    const double d = pred.value()[i] - target[i];
    acc += d * d;
  }
  return make_result(Tensor::scalar(acc / static_cast<double>(n)), {pred},
                     [target, n](Node& self) {
                       Node& pn = *self.parents[0];
                       Tensor& g = pn.grad_buffer();
                       const double k = 2.0 * self.grad[0] / static_cast<double>(n);
                       for (int64_t i = 0; i < n; ++i) g[i] += k * (pn.value[i] - target[i]);
                     });
}

}  // namespace rfhit::ag
