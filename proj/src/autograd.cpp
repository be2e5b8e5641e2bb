#include "pdm/autograd.hpp"

#include <cmath>
#include <unordered_set>

#include "pdm/error.hpp"
#include "pdm/kernels.hpp"

namespace pdm {

namespace {

thread_local bool g_grad_enabled = true;

using BackwardFn = std::function<void(Node&)>;

Var make_result(Tensor value, std::vector<Var> inputs, BackwardFn fn) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  if (!g_grad_enabled) return Var(std::move(node));
  bool needs = false;
  for (const auto& in : inputs) needs = needs || in.requires_grad();
  if (!needs) return Var(std::move(node));
  node->requires_grad = true;
  node->parents.reserve(inputs.size());
  for (auto& in : inputs) node->parents.push_back(in.node());
  node->backward_fn = std::move(fn);
  return Var(std::move(node));
}

Node& parent(Node& self, std::size_t i) { return *self.parents[i]; }

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.shape() != b.shape())
    throw InvalidArgument(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                          shape_string(b.shape()));
}

template <typename F, typename D>
Var unary(const Var& a, F f, D dfdx) {
  Tensor out(a.shape());
  const auto& x = a.value();
  for (std::int64_t i = 0; i < x.numel(); ++i) out[i] = f(x[i]);
  return make_result(std::move(out), {a}, [dfdx](Node& self) {
    Node& p = parent(self, 0);
    if (!p.requires_grad) return;
    Tensor& g = p.ensure_grad();
    for (std::int64_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i] * dfdx(p.value[i], self.value[i]);
  });
}

// Maps each flat index of `big` onto the flat index of the broadcast operand.
std::vector<std::int64_t> broadcast_index(const Shape& big, const Shape& small) {
  if (big.size() != small.size()) throw InvalidArgument("broadcast: rank mismatch");
  const std::size_t r = big.size();
  std::vector<std::int64_t> stride(r, 0);
  std::int64_t s = 1;
  for (std::size_t k = r; k-- > 0;) {
    if (small[k] != big[k] && small[k] != 1)
      throw InvalidArgument("broadcast: incompatible shapes " + shape_string(big) + " and " + shape_string(small));
    stride[k] = small[k] == 1 ? 0 : s;
    s *= small[k];
  }
  const std::int64_t n = shape_numel(big);
  std::vector<std::int64_t> map(static_cast<std::size_t>(n));
  std::vector<std::int64_t> counter(r, 0);
  std::int64_t off = 0;
  for (std::int64_t i = 0; i < n; ++i) {
    map[static_cast<std::size_t>(i)] = off;
    for (std::size_t k = r; k-- > 0;) {
      ++counter[k];
      off += stride[k];
      if (counter[k] < big[k]) break;
      off -= stride[k] * counter[k];
      counter[k] = 0;
    }
  }
  return map;
}

}  // namespace

Tensor& Node::ensure_grad() {
  if (grad.shape() != value.shape()) grad = Tensor(value.shape());
  return grad;
}

Var::Var(Tensor value, bool requires_grad) : node_(std::make_shared<Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

const Tensor& Var::grad() const { return node_->ensure_grad(); }

void Var::zero_grad() {
  if (node_ && !node_->grad.empty()) node_->grad.fill(0.0);
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

void backward(const Var& root) {
  if (!root.defined() || root.value().numel() != 1)
    throw InvalidArgument("backward() needs a scalar root");
  if (!root.requires_grad()) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(root.node().get(), 0);
  seen.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->requires_grad && p->backward_fn && !seen.count(p)) {
        seen.insert(p);
        stack.emplace_back(p, 0);
      }
      continue;
    }
    order.push_back(node);
    stack.pop_back();
  }

  // Interior gradients are scratch; leaves keep accumulating.
  for (Node* n : order) n->grad = Tensor(n->value.shape());
  root.node()->grad[0] = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward_fn) n->backward_fn(*n);
  }
  for (Node* n : order)
    if (n != root.node().get()) n->grad = Tensor();
}

namespace ag {

Var add(const Var& a, const Var& b) {
  require_same_shape(a, b, "add");
  Tensor out = a.value();
  out += b.value();
  return make_result(std::move(out), {a, b}, [](Node& self) {
    for (std::size_t i = 0; i < 2; ++i)
      if (parent(self, i).requires_grad) parent(self, i).ensure_grad() += self.grad;
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape(a, b, "sub");
  Tensor out = a.value();
  out -= b.value();
  return make_result(std::move(out), {a, b}, [](Node& self) {
    if (parent(self, 0).requires_grad) parent(self, 0).ensure_grad() += self.grad;
    if (parent(self, 1).requires_grad) parent(self, 1).ensure_grad() -= self.grad;
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape(a, b, "mul");
  Tensor out(a.shape());
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] * b.value()[i];
  return make_result(std::move(out), {a, b}, [](Node& self) {
    Node& pa = parent(self, 0);
    Node& pb = parent(self, 1);
    if (pa.requires_grad) {
      Tensor& g = pa.ensure_grad();
      for (std::int64_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i] * pb.value[i];
    }
    if (pb.requires_grad) {
      Tensor& g = pb.ensure_grad();
      for (std::int64_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i] * pa.value[i];
    }
  });
}

Var scale(const Var& a, double s) {
  Tensor out = a.value();
  out *= s;
  return make_result(std::move(out), {a}, [s](Node& self) {
    if (parent(self, 0).requires_grad) parent(self, 0).ensure_grad().axpy(s, self.grad);
  });
}

Var add_scalar(const Var& a, double s) {
  Tensor out = a.value();
  for (auto& v : out.values()) v += s;
  return make_result(std::move(out), {a}, [](Node& self) {
    if (parent(self, 0).requires_grad) parent(self, 0).ensure_grad() += self.grad;
  });
}

Var add_bcast(const Var& a, const Var& b) {
  auto map = std::make_shared<std::vector<std::int64_t>>(broadcast_index(a.shape(), b.shape()));
  Tensor out = a.value();
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] += b.value()[(*map)[static_cast<std::size_t>(i)]];
  return make_result(std::move(out), {a, b}, [map](Node& self) {
    if (parent(self, 0).requires_grad) parent(self, 0).ensure_grad() += self.grad;
    if (parent(self, 1).requires_grad) {
      Tensor& g = parent(self, 1).ensure_grad();
      for (std::int64_t i = 0; i < self.grad.numel(); ++i) g[(*map)[static_cast<std::size_t>(i)]] += self.grad[i];
    }
  });
}

Var mul_bcast(const Var& a, const Var& b) {
  auto map = std::make_shared<std::vector<std::int64_t>>(broadcast_index(a.shape(), b.shape()));
  Tensor out(a.shape());
  for (std::int64_t i = 0; i < out.numel(); ++i)
    out[i] = a.value()[i] * b.value()[(*map)[static_cast<std::size_t>(i)]];
  return make_result(std::move(out), {a, b}, [map](Node& self) {
    Node& pa = parent(self, 0);
    Node& pb = parent(self, 1);
    if (pa.requires_grad) {
      Tensor& g = pa.ensure_grad();
      for (std::int64_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i] * pb.value[(*map)[static_cast<std::size_t>(i)]];
    }
    if (pb.requires_grad) {
      Tensor& g = pb.ensure_grad();
      for (std::int64_t i = 0; i < self.grad.numel(); ++i)
        g[(*map)[static_cast<std::size_t>(i)]] += self.grad[i] * pa.value[i];
    }
  });
}

Var div_bcast(const Var& a, const Var& b) {
  auto map = std::make_shared<std::vector<std::int64_t>>(broadcast_index(a.shape(), b.shape()));
  Tensor out(a.shape());
  for (std::int64_t i = 0; i < out.numel(); ++i)
    out[i] = a.value()[i] / b.value()[(*map)[static_cast<std::size_t>(i)]];
  return make_result(std::move(out), {a, b}, [map](Node& self) {
    Node& pa = parent(self, 0);
    Node& pb = parent(self, 1);
    if (pa.requires_grad) {
      Tensor& g = pa.ensure_grad();
      for (std::int64_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i] / pb.value[(*map)[static_cast<std::size_t>(i)]];
    }
    if (pb.requires_grad) {
      Tensor& g = pb.ensure_grad();
      for (std::int64_t i = 0; i < self.grad.numel(); ++i) {
        const auto j = (*map)[static_cast<std::size_t>(i)];
        g[j] -= self.grad[i] * self.value[i] / pb.value[j];
      }
    }
  });
}

Var silu(const Var& a) {
  return unary(
      a, [](double x) { return x / (1.0 + std::exp(-x)); },
      [](double x, double) {
        const double s = 1.0 / (1.0 + std::exp(-x));
        return s * (1.0 + x * (1.0 - s));
      });
}

Var relu(const Var& a) {
  return unary(
      a, [](double x) { return x > 0.0 ? x : 0.0; }, [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var tanh(const Var& a) {
  return unary(
      a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Var elu_plus_one(const Var& a) {
  return unary(
      a, [](double x) { return x > 0.0 ? x + 1.0 : std::exp(x); },
      [](double x, double y) { return x > 0.0 ? 1.0 : y; });
}

Var exp(const Var& a) {
  return unary(
      a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var square(const Var& a) {
  return unary(
      a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Var abs(const Var& a) {
  return unary(
      a, [](double x) { return std::abs(x); },
      [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

Var sum(const Var& a) {
  Tensor out({1}, a.value().sum());
  return make_result(std::move(out), {a}, [](Node& self) {
    Node& p = parent(self, 0);
    if (!p.requires_grad) return;
    const double g = self.grad[0];
    for (auto& v : p.ensure_grad().values()) v += g;
  });
}

Var mean(const Var& a) {
  const auto n = static_cast<double>(a.value().numel());
  return scale(sum(a), 1.0 / n);
}

Var reshape(const Var& a, Shape shape) {
  Tensor out = a.value().reshaped(std::move(shape));
  return make_result(std::move(out), {a}, [](Node& self) {
    Node& p = parent(self, 0);
    if (!p.requires_grad) return;
    Tensor& g = p.ensure_grad();
    for (std::int64_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i];
  });
}

Var conv2d(const Var& x, const Var& w, const Var& bias) {
  const auto fs = FeatureShape::of(x.value());
  if (w.value().rank() != 4 || w.dim(1) != fs.channels || w.dim(2) != w.dim(3) || w.dim(2) % 2 == 0)
    throw InvalidArgument("conv2d: weight " + shape_string(w.shape()) + " incompatible with input " +
                          shape_string(x.shape()));
  kernels::ConvDims d{fs.batch, fs.channels, w.dim(0), fs.height, fs.width, w.dim(2)};
  if (bias.defined() && bias.value().numel() != d.out_channels) throw InvalidArgument("conv2d: bias size");
  Tensor out({d.batch, d.out_channels, d.height, d.width});
  kernels::conv2d_forward(x.value().data(), w.value().data(), bias.defined() ? bias.value().data() : nullptr,
                          out.data(), d);
  std::vector<Var> inputs{x, w};
  if (bias.defined()) inputs.push_back(bias);
  return make_result(std::move(out), inputs, [d](Node& self) {
    Node& px = parent(self, 0);
    Node& pw = parent(self, 1);
    double* dx = px.requires_grad ? px.ensure_grad().data() : nullptr;
    double* dw = pw.requires_grad ? pw.ensure_grad().data() : nullptr;
    double* db = nullptr;
    if (self.parents.size() > 2 && parent(self, 2).requires_grad) db = parent(self, 2).ensure_grad().data();
    kernels::conv2d_backward(px.value.data(), pw.value.data(), self.grad.data(), dx, dw, db, d);
  });
}

Var group_norm(const Var& x, std::int64_t groups, double eps) {
  const auto& xv = x.value();
  if (xv.rank() < 2 || groups < 1 || xv.dim(1) % groups != 0)
    throw InvalidArgument("group_norm: channels must divide into groups");
  kernels::GroupNormDims d{xv.dim(0), xv.dim(1), groups, xv.numel() / (xv.dim(0) * xv.dim(1)), eps};
  Tensor out(xv.shape());
  auto mean = std::make_shared<std::vector<double>>(static_cast<std::size_t>(d.batch * groups));
  auto rstd = std::make_shared<std::vector<double>>(mean->size());
  kernels::group_norm_forward(xv.data(), out.data(), mean->data(), rstd->data(), d);
  return make_result(std::move(out), {x}, [d, rstd](Node& self) {
    Node& p = parent(self, 0);
    if (!p.requires_grad) return;
    kernels::group_norm_backward(self.value.data(), rstd->data(), self.grad.data(), p.ensure_grad().data(), d);
  });
}

Var avg_pool2(const Var& x) {
  const auto fs = FeatureShape::of(x.value());
  if (fs.height % 2 || fs.width % 2) throw InvalidArgument("avg_pool2: spatial dims must be even");
  Tensor out({fs.batch, fs.channels, fs.height / 2, fs.width / 2});
  kernels::avg_pool2_forward(x.value().data(), out.data(), fs.batch * fs.channels, fs.height, fs.width);
  return make_result(std::move(out), {x}, [fs](Node& self) {
    Node& p = parent(self, 0);
    if (!p.requires_grad) return;
    kernels::avg_pool2_backward(self.grad.data(), p.ensure_grad().data(), fs.batch * fs.channels, fs.height,
                                fs.width);
  });
}

Var upsample2(const Var& x) {
  const auto fs = FeatureShape::of(x.value());
  Tensor out({fs.batch, fs.channels, fs.height * 2, fs.width * 2});
  kernels::upsample2_forward(x.value().data(), out.data(), fs.batch * fs.channels, fs.height, fs.width);
  return make_result(std::move(out), {x}, [fs](Node& self) {
    Node& p = parent(self, 0);
    if (!p.requires_grad) return;
    kernels::upsample2_backward(self.grad.data(), p.ensure_grad().data(), fs.batch * fs.channels, fs.height,
                                fs.width);
  });
}

Var bmm(const Var& a, const Var& b, bool trans_a, bool trans_b) {
  const auto& av = a.value();
  const auto& bv = b.value();
  if (av.rank() != 3 || bv.rank() != 3) throw InvalidArgument("bmm: operands must be 3-D");
  const std::int64_t m = trans_a ? av.dim(2) : av.dim(1);
  const std::int64_t ka = trans_a ? av.dim(1) : av.dim(2);
  const std::int64_t kb = trans_b ? bv.dim(2) : bv.dim(1);
  const std::int64_t n = trans_b ? bv.dim(1) : bv.dim(2);
  if (ka != kb) throw InvalidArgument("bmm: inner dimensions differ");
  const std::int64_t batch = std::max(av.dim(0), bv.dim(0));
  if ((av.dim(0) != batch && av.dim(0) != 1) || (bv.dim(0) != batch && bv.dim(0) != 1))
    throw InvalidArgument("bmm: batch dimensions incompatible");
  kernels::GemmDims d{batch, m, n, ka, trans_a, trans_b, av.dim(0) == 1 && batch > 1, bv.dim(0) == 1 && batch > 1};
  Tensor out({batch, m, n});
  kernels::gemm(av.data(), bv.data(), out.data(), d);
  return make_result(std::move(out), {a, b}, [d](Node& self) {
    Node& pa = parent(self, 0);
    Node& pb = parent(self, 1);
    const double* g = self.grad.data();
    if (pa.requires_grad) {
      // dA = G B^T (or B G^T when A was transposed), summed over broadcast batch.
      Tensor tmp({d.batch, pa.value.dim(1), pa.value.dim(2)});
      if (!d.trans_a)
        kernels::gemm(g, pb.value.data(), tmp.data(),
                      {d.batch, d.m, d.k, d.n, false, !d.trans_b, false, d.broadcast_b});
      else
        kernels::gemm(pb.value.data(), g, tmp.data(),
                      {d.batch, d.k, d.m, d.n, d.trans_b, true, d.broadcast_b, false});
      Tensor& ga = pa.ensure_grad();
      if (d.broadcast_a) {
        const std::int64_t per = ga.numel();
        for (std::int64_t bi = 0; bi < d.batch; ++bi)
          for (std::int64_t i = 0; i < per; ++i) ga[i] += tmp[bi * per + i];
      } else {
        ga += tmp;
      }
    }
    if (pb.requires_grad) {
      Tensor tmp({d.batch, pb.value.dim(1), pb.value.dim(2)});
      if (!d.trans_b)
        kernels::gemm(pa.value.data(), g, tmp.data(),
                      {d.batch, d.k, d.n, d.m, !d.trans_a, false, d.broadcast_a, false});
      else
        kernels::gemm(g, pa.value.data(), tmp.data(),
                      {d.batch, d.n, d.k, d.m, true, d.trans_a, false, d.broadcast_a});
      Tensor& gb = pb.ensure_grad();
      if (d.broadcast_b) {
        const std::int64_t per = gb.numel();
        for (std::int64_t bi = 0; bi < d.batch; ++bi)
          for (std::int64_t i = 0; i < per; ++i) gb[i] += tmp[bi * per + i];
      } else {
        gb += tmp;
      }
    }
  });
}

Var matmul(const Var& a, const Var& b, bool trans_a, bool trans_b) {
  if (a.value().rank() != 2 || b.value().rank() != 2) throw InvalidArgument("matmul: operands must be 2-D");
  Var a3 = reshape(a, {1, a.dim(0), a.dim(1)});
  Var b3 = reshape(b, {1, b.dim(0), b.dim(1)});
  Var c = bmm(a3, b3, trans_a, trans_b);
  return reshape(c, {c.dim(1), c.dim(2)});
}

Var softmax_last(const Var& a) {
  const auto& av = a.value();
  const std::int64_t cols = av.dim(-1);
  const std::int64_t rows = av.numel() / cols;
  Tensor out(av.shape());
  kernels::softmax_forward(av.data(), out.data(), rows, cols);
  return make_result(std::move(out), {a}, [rows, cols](Node& self) {
    Node& p = parent(self, 0);
    if (!p.requires_grad) return;
    kernels::softmax_backward(self.value.data(), self.grad.data(), p.ensure_grad().data(), rows, cols);
  });
}

Var spectral_divide(const Var& w, const Tensor& u, const Tensor& v, double eps) {
  const std::int64_t rows = u.numel();
  const std::int64_t cols = v.numel();
  if (rows * cols != w.value().numel()) throw InvalidArgument("spectral_divide: u/v do not match weight");
  const double* wd = w.value().data();
  double sigma = 0.0;
  for (std::int64_t i = 0; i < rows; ++i) {
    double row = 0.0;
    for (std::int64_t j = 0; j < cols; ++j) row += wd[i * cols + j] * v[j];
    sigma += u[i] * row;
  }
  const bool degenerate = !(std::abs(sigma) > eps);
  const double denom = degenerate ? eps : sigma;
  Tensor out = w.value();
  out *= 1.0 / denom;
  auto uv = std::make_shared<std::pair<Tensor, Tensor>>(u, v);
  return make_result(std::move(out), {w}, [uv, denom, degenerate, rows, cols](Node& self) {
    Node& p = parent(self, 0);
    if (!p.requires_grad) return;
    Tensor& g = p.ensure_grad();
    // d(W/s) = dW/s - W (u^T dW v)/s^2  =>  grad_W = G/s - (<G, W>/s^2) u v^T
    double gw = 0.0;
    for (std::int64_t i = 0; i < g.numel(); ++i) gw += self.grad[i] * p.value[i];
    const double c = degenerate ? 0.0 : gw / (denom * denom);
    for (std::int64_t i = 0; i < rows; ++i)
      for (std::int64_t j = 0; j < cols; ++j)
        g[i * cols + j] += self.grad[i * cols + j] / denom - c * uv->first[i] * uv->second[j];
  });
}

}  // namespace ag
}  // namespace pdm
