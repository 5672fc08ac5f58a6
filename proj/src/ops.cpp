#include "mlrf/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mlrf/errors.hpp"

namespace mlrf {

using detail::Node;

namespace {

Tensor make_result(Shape shape, std::vector<double> value, std::initializer_list<const Tensor*> inputs,
                   std::function<void(Node&)> backward_fn) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  if (grad_mode_enabled()) {
    bool any = false;
    for (const Tensor* t : inputs) any = any || t->requires_grad();
    if (any) {
      node->requires_grad = true;
      for (const Tensor* t : inputs) node->inputs.push_back(t->node());
      node->backward_fn = std::move(backward_fn);
    }
  }
  return Tensor(std::move(node));
}

Tensor make_result_n(Shape shape, std::vector<double> value, std::span<const Tensor> inputs,
                     std::function<void(Node&)> backward_fn) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  if (grad_mode_enabled()) {
    bool any = std::any_of(inputs.begin(), inputs.end(), [](const Tensor& t) { return t.requires_grad(); });
    if (any) {
      node->requires_grad = true;
      for (const Tensor& t : inputs) node->inputs.push_back(t.node());
      node->backward_fn = std::move(backward_fn);
    }
  }
  return Tensor(std::move(node));
}

// Gradient buffer of input i, or nullptr when that input is not tracked.
std::vector<double>* input_grad(Node& n, std::size_t i) {
  Node& in = *n.inputs[i];
  return in.requires_grad ? &in.ensure_grad() : nullptr;
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_to_string(a.shape()) + " vs " +
                         shape_to_string(b.shape()));
  }
}

void require_rank(const Tensor& x, std::size_t rank, const char* op) {
  if (x.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                         shape_to_string(x.shape()));
  }
}

struct AxisSplit {
  std::size_t outer = 1, n = 1, inner = 1;
};

AxisSplit split_axis(const Shape& shape, std::size_t axis) {
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.n = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

// c[m x n] += a[m x k] . b[k x n]
void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      if (av == 0.0) continue;
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// c[m x k] += g[m x n] . b[k x n]^T
void gemm_nt(const double* g, const double* b, double* c, std::size_t m, std::size_t n, std::size_t k) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* grow = g + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double* brow = b + p * n;
      double acc = 0.0;
      for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
      c[i * k + p] += acc;
    }
  }
}

// c[k x n] += a[m x k]^T . g[m x n]
void gemm_tn(const double* a, const double* g, double* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* grow = g + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      if (av == 0.0) continue;
      double* crow = c + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * grow[j];
    }
  }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: cannot multiply " + shape_to_string(a.shape()) + " by " +
                         shape_to_string(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> out(m * n, 0.0);
  gemm_nn(a.values().data(), b.values().data(), out.data(), m, k, n);
  return make_result({m, n}, std::move(out), {&a, &b}, [m, k, n](Node& self) {
    const auto& g = self.grad;
    const auto& av = self.inputs[0]->value;
    const auto& bv = self.inputs[1]->value;
    if (auto* ga = input_grad(self, 0)) gemm_nt(g.data(), bv.data(), ga->data(), m, n, k);
    if (auto* gb = input_grad(self, 1)) gemm_tn(av.data(), g.data(), gb->data(), m, k, n);
  });
}

Tensor bmm(const Tensor& a, const Tensor& b) {
  if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(1)) {
    throw DimensionError("bmm: cannot multiply " + shape_to_string(a.shape()) + " by " +
                         shape_to_string(b.shape()));
  }
  const std::size_t batch = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(2);
  std::vector<double> out(batch * m * n, 0.0);
  for (std::size_t s = 0; s < batch; ++s) {
    gemm_nn(a.values().data() + s * m * k, b.values().data() + s * k * n, out.data() + s * m * n, m, k, n);
  }
  return make_result({batch, m, n}, std::move(out), {&a, &b}, [batch, m, k, n](Node& self) {
    const auto& g = self.grad;
    const auto& av = self.inputs[0]->value;
    const auto& bv = self.inputs[1]->value;
    auto* ga = input_grad(self, 0);
    auto* gb = input_grad(self, 1);
    for (std::size_t s = 0; s < batch; ++s) {
      const double* gs = g.data() + s * m * n;
      if (ga) gemm_nt(gs, bv.data() + s * k * n, ga->data() + s * m * k, m, n, k);
      if (gb) gemm_tn(av.data() + s * m * k, gs, gb->data() + s * k * n, m, k, n);
    }
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] + b.values()[i];
  return make_result(a.shape(), std::move(out), {&a, &b}, [](Node& self) {
    for (std::size_t k = 0; k < 2; ++k) {
      if (auto* gi = input_grad(self, k)) {
        for (std::size_t i = 0; i < self.grad.size(); ++i) (*gi)[i] += self.grad[i];
      }
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] - b.values()[i];
  return make_result(a.shape(), std::move(out), {&a, &b}, [](Node& self) {
    if (auto* ga = input_grad(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) (*ga)[i] += self.grad[i];
    }
    if (auto* gb = input_grad(self, 1)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) (*gb)[i] -= self.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * b.values()[i];
  return make_result(a.shape(), std::move(out), {&a, &b}, [](Node& self) {
    const auto& av = self.inputs[0]->value;
    const auto& bv = self.inputs[1]->value;
    if (auto* ga = input_grad(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) (*ga)[i] += self.grad[i] * bv[i];
    }
    if (auto* gb = input_grad(self, 1)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) (*gb)[i] += self.grad[i] * av[i];
    }
  });
}

Tensor scale(const Tensor& x, double c) {
  std::vector<double> out(x.values().begin(), x.values().end());
  for (auto& v : out) v *= c;
  return make_result(x.shape(), std::move(out), {&x}, [c](Node& self) {
    if (auto* gx = input_grad(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) (*gx)[i] += c * self.grad[i];
    }
  });
}

Tensor add_row(const Tensor& x, const Tensor& row) {
  require_rank(x, 2, "add_row");
  if (row.numel() != x.dim(1)) {
    throw DimensionError("add_row: row of " + std::to_string(row.numel()) + " values cannot extend " +
                         shape_to_string(x.shape()));
  }
  const std::size_t m = x.dim(0), n = x.dim(1);
  std::vector<double> out(x.values().begin(), x.values().end());
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] += row.values()[j];
  }
  return make_result(x.shape(), std::move(out), {&x, &row}, [m, n](Node& self) {
    if (auto* gx = input_grad(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) (*gx)[i] += self.grad[i];
    }
    if (auto* gr = input_grad(self, 1)) {
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) (*gr)[j] += self.grad[i * n + j];
      }
    }
  });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) { return add_row(matmul(x, w), b); }

Tensor relu(const Tensor& x) {
  std::vector<double> out(x.values().begin(), x.values().end());
  for (auto& v : out) v = v > 0.0 ? v : 0.0;
  return make_result(x.shape(), std::move(out), {&x}, [](Node& self) {
    if (auto* gx = input_grad(self, 0)) {
      const auto& xv = self.inputs[0]->value;
      for (std::size_t i = 0; i < self.grad.size(); ++i) {
        if (xv[i] > 0.0) (*gx)[i] += self.grad[i];
      }
    }
  });
}

Tensor tanh(const Tensor& x) {
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(x.values()[i]);
  return make_result(x.shape(), std::move(out), {&x}, [](Node& self) {
    if (auto* gx = input_grad(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) {
        const double y = self.value[i];
        (*gx)[i] += self.grad[i] * (1.0 - y * y);
      }
    }
  });
}

Tensor softmax(const Tensor& x, std::size_t axis) {
  if (axis >= x.rank()) {
    throw DimensionError("softmax: axis " + std::to_string(axis) + " out of range for " +
                         shape_to_string(x.shape()));
  }
  const AxisSplit s = split_axis(x.shape(), axis);
  std::vector<double> out(x.numel());
  const auto xv = x.values();
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = o * s.n * s.inner + in;
      double mx = xv[base];
      for (std::size_t k = 1; k < s.n; ++k) mx = std::max(mx, xv[base + k * s.inner]);
      double total = 0.0;
      for (std::size_t k = 0; k < s.n; ++k) {
        const double e = std::exp(xv[base + k * s.inner] - mx);
        out[base + k * s.inner] = e;
        total += e;
      }
      for (std::size_t k = 0; k < s.n; ++k) out[base + k * s.inner] /= total;
    }
  }
  return make_result(x.shape(), std::move(out), {&x}, [s](Node& self) {
    auto* gx = input_grad(self, 0);
    if (!gx) return;
    const auto& y = self.value;
    const auto& g = self.grad;
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t in = 0; in < s.inner; ++in) {
        const std::size_t base = o * s.n * s.inner + in;
        double dot = 0.0;
        for (std::size_t k = 0; k < s.n; ++k) dot += g[base + k * s.inner] * y[base + k * s.inner];
        for (std::size_t k = 0; k < s.n; ++k) {
          const std::size_t idx = base + k * s.inner;
          (*gx)[idx] += y[idx] * (g[idx] - dot);
        }
      }
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias) {
  const std::size_t d = x.shape().back();
  if (gain.numel() != d || bias.numel() != d) {
    throw DimensionError("layer_norm: last dimension of " + shape_to_string(x.shape()) +
                         " does not match gain " + shape_to_string(gain.shape()) + " / bias " +
                         shape_to_string(bias.shape()));
  }
  const std::size_t rows = x.numel() / d;
  std::vector<double> xhat(x.numel());
  std::vector<double> inv_std(rows);
  std::vector<double> out(x.numel());
  const auto xv = x.values();
  const auto gv = gain.values();
  const auto bv = bias.values();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = xv.data() + r * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += row[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var + kLayerNormEpsilon);
    inv_std[r] = inv;
    for (std::size_t j = 0; j < d; ++j) {
      const double h = (row[j] - mu) * inv;
      xhat[r * d + j] = h;
      out[r * d + j] = h * gv[j] + bv[j];
    }
  }
  return make_result(x.shape(), std::move(out), {&x, &gain, &bias},
                     [d, rows, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
                       const auto& g = self.grad;
                       const auto& gv = self.inputs[1]->value;
                       auto* gx = input_grad(self, 0);
                       auto* gg = input_grad(self, 1);
                       auto* gb = input_grad(self, 2);
                       const double inv_d = 1.0 / static_cast<double>(d);
                       for (std::size_t r = 0; r < rows; ++r) {
                         const double* gr = g.data() + r * d;
                         const double* hr = xhat.data() + r * d;
                         if (gg || gb) {
                           for (std::size_t j = 0; j < d; ++j) {
                             if (gg) (*gg)[j] += gr[j] * hr[j];
                             if (gb) (*gb)[j] += gr[j];
                           }
                         }
                         if (!gx) continue;
                         double mean_gh = 0.0, mean_ghh = 0.0;
                         for (std::size_t j = 0; j < d; ++j) {
                           const double gh = gr[j] * gv[j];
                           mean_gh += gh;
                           mean_ghh += gh * hr[j];
                         }
                         mean_gh *= inv_d;
                         mean_ghh *= inv_d;
                         for (std::size_t j = 0; j < d; ++j) {
                           const double gh = gr[j] * gv[j];
                           (*gx)[r * d + j] += inv_std[r] * (gh - mean_gh - hr[j] * mean_ghh);
                         }
                       }
                     });
}

Tensor concat(std::span<const Tensor> parts, std::size_t axis) {
  if (parts.empty()) throw DimensionError("concat: no tensors given");
  const Shape& first = parts[0].shape();
  if (axis >= first.size()) {
    throw DimensionError("concat: axis " + std::to_string(axis) + " out of range for " + shape_to_string(first));
  }
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const Tensor& p : parts) {
    Shape probe = p.shape();
    if (probe.size() != first.size()) throw DimensionError("concat: rank mismatch " + shape_to_string(probe));
    for (std::size_t i = 0; i < probe.size(); ++i) {
      if (i != axis && probe[i] != first[i]) {
        throw DimensionError("concat: shape mismatch " + shape_to_string(first) + " vs " + shape_to_string(probe));
      }
    }
    out_shape[axis] += probe[axis];
  }
  const AxisSplit s = split_axis(out_shape, axis);
  std::vector<std::size_t> widths;  // contiguous chunk per outer index
  for (const Tensor& p : parts) widths.push_back(p.dim(axis) * s.inner);
  const std::size_t row = s.n * s.inner;
  std::vector<double> out(shape_numel(out_shape));
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto pv = parts[k].values();
    for (std::size_t o = 0; o < s.outer; ++o) {
      std::copy_n(pv.data() + o * widths[k], widths[k], out.data() + o * row + offset);
    }
    offset += widths[k];
  }
  return make_result_n(std::move(out_shape), std::move(out), parts, [s, row, widths](Node& self) {
    std::size_t off = 0;
    for (std::size_t k = 0; k < widths.size(); ++k) {
      if (auto* gk = input_grad(self, k)) {
        for (std::size_t o = 0; o < s.outer; ++o) {
          const double* src = self.grad.data() + o * row + off;
          double* dst = gk->data() + o * widths[k];
          for (std::size_t i = 0; i < widths[k]; ++i) dst[i] += src[i];
        }
      }
      off += widths[k];
    }
  });
}

Tensor concat(std::initializer_list<Tensor> parts, std::size_t axis) {
  return concat(std::span<const Tensor>(parts.begin(), parts.size()), axis);
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length) {
  if (axis >= x.rank() || length == 0 || start + length > x.dim(axis)) {
    throw IndexError("slice: [" + std::to_string(start) + ", " + std::to_string(start + length) +
                     ") on axis " + std::to_string(axis) + " of " + shape_to_string(x.shape()));
  }
  const AxisSplit s = split_axis(x.shape(), axis);
  Shape out_shape = x.shape();
  out_shape[axis] = length;
  const std::size_t width = length * s.inner;
  const std::size_t row = s.n * s.inner;
  const std::size_t off = start * s.inner;
  std::vector<double> out(s.outer * width);
  const auto xv = x.values();
  for (std::size_t o = 0; o < s.outer; ++o) std::copy_n(xv.data() + o * row + off, width, out.data() + o * width);
  return make_result(std::move(out_shape), std::move(out), {&x}, [s, width, row, off](Node& self) {
    if (auto* gx = input_grad(self, 0)) {
      for (std::size_t o = 0; o < s.outer; ++o) {
        for (std::size_t i = 0; i < width; ++i) (*gx)[o * row + off + i] += self.grad[o * width + i];
      }
    }
  });
}

Tensor transpose(const Tensor& x) {
  if (x.rank() != 2 && x.rank() != 3) {
    throw DimensionError("transpose: expected rank 2 or 3, got " + shape_to_string(x.shape()));
  }
  const std::size_t batch = x.rank() == 3 ? x.dim(0) : 1;
  const std::size_t m = x.dim(x.rank() - 2), n = x.dim(x.rank() - 1);
  Shape out_shape = x.shape();
  std::swap(out_shape[out_shape.size() - 1], out_shape[out_shape.size() - 2]);
  std::vector<double> out(x.numel());
  const auto xv = x.values();
  for (std::size_t s = 0; s < batch; ++s) {
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) out[s * m * n + j * m + i] = xv[s * m * n + i * n + j];
    }
  }
  return make_result(std::move(out_shape), std::move(out), {&x}, [batch, m, n](Node& self) {
    if (auto* gx = input_grad(self, 0)) {
      for (std::size_t s = 0; s < batch; ++s) {
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t j = 0; j < n; ++j) (*gx)[s * m * n + i * n + j] += self.grad[s * m * n + j * m + i];
        }
      }
    }
  });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("reshape: cannot view " + shape_to_string(x.shape()) + " as " + shape_to_string(shape));
  }
  std::vector<double> out(x.values().begin(), x.values().end());
  return make_result(std::move(shape), std::move(out), {&x}, [](Node& self) {
    if (auto* gx = input_grad(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) (*gx)[i] += self.grad[i];
    }
  });
}

Tensor embedding_lookup(const Tensor& table, std::span<const int> ids) {
  require_rank(table, 2, "embedding_lookup");
  if (ids.empty()) throw DimensionError("embedding_lookup: empty id list");
  const std::size_t vocab = table.dim(0), d = table.dim(1);
  for (int id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= vocab) {
      throw IndexError("embedding_lookup: id " + std::to_string(id) + " outside table of " +
                       std::to_string(vocab) + " rows");
    }
  }
  std::vector<double> out(ids.size() * d);
  const auto tv = table.values();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    std::copy_n(tv.data() + static_cast<std::size_t>(ids[i]) * d, d, out.data() + i * d);
  }
  std::vector<int> kept(ids.begin(), ids.end());
  return make_result({ids.size(), d}, std::move(out), {&table}, [d, kept = std::move(kept)](Node& self) {
    if (auto* gt = input_grad(self, 0)) {
      for (std::size_t i = 0; i < kept.size(); ++i) {
        double* dst = gt->data() + static_cast<std::size_t>(kept[i]) * d;
        for (std::size_t j = 0; j < d; ++j) dst[j] += self.grad[i * d + j];
      }
    }
  });
}

Tensor sum(const Tensor& x) {
  const double total = std::accumulate(x.values().begin(), x.values().end(), 0.0);
  return make_result({1}, {total}, {&x}, [](Node& self) {
    if (auto* gx = input_grad(self, 0)) {
      for (auto& v : *gx) v += self.grad[0];
    }
  });
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

Tensor mask_fill(const Tensor& scores, std::span<const std::uint8_t> allowed, double penalty) {
  if (allowed.size() != scores.numel()) {
    throw DimensionError("mask_fill: mask of " + std::to_string(allowed.size()) + " entries for scores " +
                         shape_to_string(scores.shape()));
  }
  std::vector<double> out(scores.values().begin(), scores.values().end());
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (!allowed[i]) out[i] += penalty;
  }
  return make_result(scores.shape(), std::move(out), {&scores}, [](Node& self) {
    if (auto* gx = input_grad(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) (*gx)[i] += self.grad[i];
    }
  });
}

Tensor dropout(const Tensor& x, double p, std::mt19937_64& rng) {
  if (p < 0.0 || p >= 1.0) throw ContractError("dropout: rate must lie in [0, 1)");
  if (p == 0.0) return x;
  std::bernoulli_distribution keep(1.0 - p);
  const double factor = 1.0 / (1.0 - p);
  std::vector<double> mask(x.numel());
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    mask[i] = keep(rng) ? factor : 0.0;
    out[i] = x.values()[i] * mask[i];
  }
  return make_result(x.shape(), std::move(out), {&x}, [mask = std::move(mask)](Node& self) {
    if (auto* gx = input_grad(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) (*gx)[i] += self.grad[i] * mask[i];
    }
  });
}

std::vector<double> log_softmax_row(std::span<const double> logits) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  double total = 0.0;
  for (double v : logits) total += std::exp(v - mx);
  const double log_z = mx + std::log(total);
  std::vector<double> out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - log_z;
  return out;
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> targets, int pad_id) {
  require_rank(logits, 2, "cross_entropy");
  const std::size_t n = logits.dim(0), vocab = logits.dim(1);
  if (targets.size() != n) {
    throw DimensionError("cross_entropy: " + std::to_string(targets.size()) + " targets for logits " +
                         shape_to_string(logits.shape()));
  }
  std::size_t count = 0;
  double total = 0.0;
  std::vector<double> probs(n * vocab, 0.0);
  const auto lv = logits.values();
  for (std::size_t i = 0; i < n; ++i) {
    if (targets[i] == pad_id) continue;
    if (targets[i] < 0 || static_cast<std::size_t>(targets[i]) >= vocab) {
      throw IndexError("cross_entropy: target " + std::to_string(targets[i]) + " outside vocabulary of " +
                       std::to_string(vocab));
    }
    const auto lp = log_softmax_row(lv.subspan(i * vocab, vocab));
    total -= lp[static_cast<std::size_t>(targets[i])];
    for (std::size_t j = 0; j < vocab; ++j) probs[i * vocab + j] = std::exp(lp[j]);
    ++count;
  }
  if (count == 0) throw ContractError("cross_entropy: every target position is padding (empty loss)");
  const double inv = 1.0 / static_cast<double>(count);
  std::vector<int> kept(targets.begin(), targets.end());
  return make_result({1}, {total * inv}, {&logits},
                     [n, vocab, inv, pad_id, kept = std::move(kept), probs = std::move(probs)](Node& self) {
                       auto* gl = input_grad(self, 0);
                       if (!gl) return;
                       const double g = self.grad[0] * inv;
                       for (std::size_t i = 0; i < n; ++i) {
                         if (kept[i] == pad_id) continue;
                         for (std::size_t j = 0; j < vocab; ++j) (*gl)[i * vocab + j] += g * probs[i * vocab + j];
                         (*gl)[i * vocab + static_cast<std::size_t>(kept[i])] -= g;
                       }
                     });
}

}  // namespace mlrf
