#include "tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace ef {

std::size_t numel(const Shape& s) {
  std::size_t n = 1;
  for (auto d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "(";
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ")";
  return os.str();
}

const Shape& Tensor::shape() const { return tape_->node(id_).shape; }
std::size_t Tensor::size() const { return tape_->node(id_).val.size(); }
const std::vector<double>& Tensor::value() const { return tape_->node(id_).val; }
const std::vector<double>& Tensor::grad() const { return tape_->node(id_).grad; }

double Tensor::scalar() const {
  const auto& n = tape_->node(id_);
  if (n.val.size() != 1)
    throw std::invalid_argument("scalar() on tensor of shape " +
                                shape_str(n.shape));
  return n.val[0];
}

void Tape::require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

void Tape::check_finite(const Node& n, const char* op) const {
  for (double v : n.val) {
    if (!std::isfinite(v))
      throw NumericError(std::string("non-finite value in output of ") + op);
  }
}

Tensor Tape::make(const char* op, Shape shape, std::vector<double> val) {
  auto n = std::make_unique<Node>();
  n->shape = std::move(shape);
  n->val = std::move(val);
  n->op = op;
  if (n->val.size() != numel(n->shape))
    throw std::invalid_argument(std::string(op) + ": data/shape mismatch");
  check_finite(*n, op);
  nodes_.push_back(std::move(n));
  return Tensor(this, nodes_.size() - 1);
}

std::vector<double>& Tape::grad_of(std::size_t id) {
  Node& n = node(id);
  if (n.grad.empty()) n.grad.assign(n.val.size(), 0.0);
  return n.grad;
}

Tensor Tape::input(Shape shape, std::vector<double> data) {
  return make("input", std::move(shape), std::move(data));
}

Tensor Tape::param(Parameter& p) {
  for (const auto& [bp, id] : bound_)
    if (bp == &p) return Tensor(this, id);
  Tensor t = make("param", p.shape, p.value);
  node(t.id_).bound = &p;
  bound_.emplace_back(&p, t.id_);
  return t;
}

Tensor Tape::reshape(Tensor a, Shape shape) {
  require(numel(shape) == a.size(), "reshape: element count mismatch");
  Tensor out = make("reshape", std::move(shape), node(a.id_).val);
  node(out.id_).backfn = [aid = a.id_, oid = out.id_](Tape& t, Node& n) {
    auto& ga = t.grad_of(aid);
    for (std::size_t i = 0; i < n.grad.size(); ++i) ga[i] += n.grad[i];
  };
  return out;
}

Tensor Tape::transpose(Tensor a) {
  require(a.shape().size() == 2, "transpose: rank-2 only");
  const std::size_t r = a.shape()[0], c = a.shape()[1];
  const auto& av = node(a.id_).val;
  std::vector<double> out(r * c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = av[i * c + j];
  Tensor t = make("transpose", {c, r}, std::move(out));
  node(t.id_).backfn = [aid = a.id_, r, c](Tape& tp, Node& n) {
    auto& ga = tp.grad_of(aid);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += n.grad[j * r + i];
  };
  return t;
}

Tensor Tape::concat(const std::vector<Tensor>& parts, std::size_t axis) {
  require(!parts.empty(), "concat: no inputs");
  const auto& s0 = parts[0].shape();
  require(axis < std::max<std::size_t>(s0.size(), 1), "concat: invalid axis");
  if (s0.size() <= 1) {
    // rank-1 concatenation
    std::vector<double> out;
    std::vector<std::size_t> ids, offsets, sizes;
    for (const auto& p : parts) {
      require(p.shape().size() == s0.size(), "concat: rank mismatch");
      offsets.push_back(out.size());
      sizes.push_back(p.size());
      ids.push_back(p.id_);
      const auto& v = node(p.id_).val;
      out.insert(out.end(), v.begin(), v.end());
    }
    Tensor t = make("concat", {out.size()}, std::move(out));
    node(t.id_).backfn = [ids, offsets, sizes](Tape& tp, Node& n) {
      for (std::size_t k = 0; k < ids.size(); ++k) {
        auto& g = tp.grad_of(ids[k]);
        for (std::size_t i = 0; i < sizes[k]; ++i) g[i] += n.grad[offsets[k] + i];
      }
    };
    return t;
  }
  require(s0.size() == 2, "concat: rank-2 max");
  std::size_t rows = s0[0], cols = s0[1];
  std::vector<std::size_t> ids;
  if (axis == 0) {
    std::vector<double> out;
    std::vector<std::size_t> row_off;
    for (const auto& p : parts) {
      require(p.shape().size() == 2 && p.shape()[1] == cols,
              "concat: column mismatch");
      row_off.push_back(out.size() / cols);
      ids.push_back(p.id_);
      const auto& v = node(p.id_).val;
      out.insert(out.end(), v.begin(), v.end());
    }
    rows = out.size() / cols;
    Tensor t = make("concat", {rows, cols}, std::move(out));
    node(t.id_).backfn = [ids, row_off, cols](Tape& tp, Node& n) {
      for (std::size_t k = 0; k < ids.size(); ++k) {
        auto& g = tp.grad_of(ids[k]);
        const std::size_t base = row_off[k] * cols;
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[base + i];
      }
    };
    return t;
  }
  // axis == 1: rows equal, columns appended
  std::size_t total_cols = 0;
  std::vector<std::size_t> col_off, col_cnt;
  for (const auto& p : parts) {
    require(p.shape().size() == 2 && p.shape()[0] == rows,
            "concat: row mismatch");
    col_off.push_back(total_cols);
    col_cnt.push_back(p.shape()[1]);
    ids.push_back(p.id_);
    total_cols += p.shape()[1];
  }
  std::vector<double> out(rows * total_cols);
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto& v = node(ids[k]).val;
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < col_cnt[k]; ++j)
        out[i * total_cols + col_off[k] + j] = v[i * col_cnt[k] + j];
  }
  Tensor t = make("concat", {rows, total_cols}, std::move(out));
  node(t.id_).backfn = [ids, col_off, col_cnt, rows, total_cols](Tape& tp,
                                                                 Node& n) {
    for (std::size_t k = 0; k < ids.size(); ++k) {
      auto& g = tp.grad_of(ids[k]);
      for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < col_cnt[k]; ++j)
          g[i * col_cnt[k] + j] += n.grad[i * total_cols + col_off[k] + j];
    }
  };
  return t;
}

Tensor Tape::slice_cols(Tensor a, std::size_t start, std::size_t count) {
  require(a.shape().size() == 2, "slice_cols: rank-2 only");
  const std::size_t r = a.shape()[0], c = a.shape()[1];
  require(start + count <= c, "slice_cols: out of range");
  const auto& av = node(a.id_).val;
  std::vector<double> out(r * count);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < count; ++j)
      out[i * count + j] = av[i * c + start + j];
  Tensor t = make("slice_cols", {r, count}, std::move(out));
  node(t.id_).backfn = [aid = a.id_, start, count, r, c](Tape& tp, Node& n) {
    auto& g = tp.grad_of(aid);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < count; ++j)
        g[i * c + start + j] += n.grad[i * count + j];
  };
  return t;
}

Tensor Tape::row(Tensor a, std::size_t index) {
  require(a.shape().size() == 2, "row: rank-2 only");
  const std::size_t c = a.shape()[1];
  require(index < a.shape()[0], "row: out of range");
  const auto& av = node(a.id_).val;
  std::vector<double> out(av.begin() + index * c, av.begin() + (index + 1) * c);
  Tensor t = make("row", {1, c}, std::move(out));
  node(t.id_).backfn = [aid = a.id_, index, c](Tape& tp, Node& n) {
    auto& g = tp.grad_of(aid);
    for (std::size_t j = 0; j < c; ++j) g[index * c + j] += n.grad[j];
  };
  return t;
}

Tensor Tape::add(Tensor a, Tensor b) {
  require(a.shape() == b.shape(), "add: shape mismatch " +
                                      shape_str(a.shape()) + " vs " +
                                      shape_str(b.shape()));
  const auto& av = node(a.id_).val;
  const auto& bv = node(b.id_).val;
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  Tensor t = make("add", a.shape(), std::move(out));
  node(t.id_).backfn = [aid = a.id_, bid = b.id_](Tape& tp, Node& n) {
    auto& ga = tp.grad_of(aid);
    for (std::size_t i = 0; i < n.grad.size(); ++i) ga[i] += n.grad[i];
    auto& gb = tp.grad_of(bid);
    for (std::size_t i = 0; i < n.grad.size(); ++i) gb[i] += n.grad[i];
  };
  return t;
}

Tensor Tape::add_row(Tensor m, Tensor v) {
  require(m.shape().size() == 2, "add_row: matrix must be rank-2");
  const std::size_t r = m.shape()[0], c = m.shape()[1];
  require(v.size() == c, "add_row: width mismatch");
  const auto& mv = node(m.id_).val;
  const auto& vv = node(v.id_).val;
  std::vector<double> out(mv.size());
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = mv[i * c + j] + vv[j];
  Tensor t = make("add_row", m.shape(), std::move(out));
  node(t.id_).backfn = [mid = m.id_, vid = v.id_, r, c](Tape& tp, Node& n) {
    auto& gm = tp.grad_of(mid);
    for (std::size_t i = 0; i < n.grad.size(); ++i) gm[i] += n.grad[i];
    auto& gv = tp.grad_of(vid);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) gv[j] += n.grad[i * c + j];
  };
  return t;
}

Tensor Tape::mul(Tensor a, Tensor b) {
  require(a.shape() == b.shape(), "mul: shape mismatch");
  const auto& av = node(a.id_).val;
  const auto& bv = node(b.id_).val;
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  Tensor t = make("mul", a.shape(), std::move(out));
  node(t.id_).backfn = [aid = a.id_, bid = b.id_](Tape& tp, Node& n) {
    const auto& av = tp.node(aid).val;
    const auto& bv = tp.node(bid).val;
    auto& ga = tp.grad_of(aid);
    for (std::size_t i = 0; i < n.grad.size(); ++i) ga[i] += n.grad[i] * bv[i];
    auto& gb = tp.grad_of(bid);
    for (std::size_t i = 0; i < n.grad.size(); ++i) gb[i] += n.grad[i] * av[i];
  };
  return t;
}

Tensor Tape::scale(Tensor a, double s) {
  require(std::isfinite(s), "scale: non-finite factor");
  const auto& av = node(a.id_).val;
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * s;
  Tensor t = make("scale", a.shape(), std::move(out));
  node(t.id_).backfn = [aid = a.id_, s](Tape& tp, Node& n) {
    auto& ga = tp.grad_of(aid);
    for (std::size_t i = 0; i < n.grad.size(); ++i) ga[i] += n.grad[i] * s;
  };
  return t;
}

Tensor Tape::weighted_sum(
    const std::vector<std::pair<double, Tensor>>& terms) {
  require(!terms.empty(), "weighted_sum: no terms");
  const Shape shape = terms[0].second.shape();
  std::vector<double> out(numel(shape), 0.0);
  std::vector<std::pair<double, std::size_t>> ws;
  for (const auto& [w, t] : terms) {
    require(t.shape() == shape, "weighted_sum: shape mismatch");
    const auto& v = node(t.id_).val;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += w * v[i];
    ws.emplace_back(w, t.id_);
  }
  Tensor t = make("weighted_sum", shape, std::move(out));
  node(t.id_).backfn = [ws](Tape& tp, Node& n) {
    for (const auto& [w, id] : ws) {
      auto& g = tp.grad_of(id);
      for (std::size_t i = 0; i < n.grad.size(); ++i) g[i] += w * n.grad[i];
    }
  };
  return t;
}

Tensor Tape::matmul(Tensor a, Tensor b) {
  require(a.shape().size() == 2 && b.shape().size() == 2,
          "matmul: rank-2 only");
  const std::size_t r = a.shape()[0], k = a.shape()[1], c = b.shape()[1];
  require(b.shape()[0] == k, "matmul: inner dimension mismatch " +
                                 shape_str(a.shape()) + " x " +
                                 shape_str(b.shape()));
  const auto& av = node(a.id_).val;
  const auto& bv = node(b.id_).val;
  std::vector<double> out(r * c, 0.0);
  for (std::size_t i = 0; i < r; ++i) {
    const double* arow = &av[i * k];
    double* orow = &out[i * c];
    for (std::size_t kk = 0; kk < k; ++kk) {
      const double aik = arow[kk];
      const double* brow = &bv[kk * c];
      for (std::size_t j = 0; j < c; ++j) orow[j] += aik * brow[j];
    }
  }
  Tensor t = make("matmul", {r, c}, std::move(out));
  node(t.id_).backfn = [aid = a.id_, bid = b.id_, r, k, c](Tape& tp, Node& n) {
    const auto& av = tp.node(aid).val;
    const auto& bv = tp.node(bid).val;
    auto& ga = tp.grad_of(aid);
    // dA = dC * B^T
    for (std::size_t i = 0; i < r; ++i) {
      const double* grow = &n.grad[i * c];
      double* garow = &ga[i * k];
      for (std::size_t kk = 0; kk < k; ++kk) {
        const double* brow = &bv[kk * c];
        double acc = 0.0;
        for (std::size_t j = 0; j < c; ++j) acc += grow[j] * brow[j];
        garow[kk] += acc;
      }
    }
    // dB = A^T * dC
    auto& gb = tp.grad_of(bid);
    for (std::size_t i = 0; i < r; ++i) {
      const double* arow = &av[i * k];
      const double* grow = &n.grad[i * c];
      for (std::size_t kk = 0; kk < k; ++kk) {
        const double aik = arow[kk];
        double* gbrow = &gb[kk * c];
        for (std::size_t j = 0; j < c; ++j) gbrow[j] += aik * grow[j];
      }
    }
  };
  return t;
}

Tensor Tape::mean(Tensor a, std::size_t axis) {
  require(a.shape().size() == 2, "mean: rank-2 only");
  require(axis < 2, "mean: invalid axis");
  const std::size_t r = a.shape()[0], c = a.shape()[1];
  const auto& av = node(a.id_).val;
  if (axis == 0) {
    std::vector<double> out(c, 0.0);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) out[j] += av[i * c + j];
    for (auto& v : out) v /= static_cast<double>(r);
    Tensor t = make("mean", {c}, std::move(out));
    node(t.id_).backfn = [aid = a.id_, r, c](Tape& tp, Node& n) {
      auto& g = tp.grad_of(aid);
      const double inv = 1.0 / static_cast<double>(r);
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) g[i * c + j] += n.grad[j] * inv;
    };
    return t;
  }
  std::vector<double> out(r, 0.0);
  for (std::size_t i = 0; i < r; ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < c; ++j) acc += av[i * c + j];
    out[i] = acc / static_cast<double>(c);
  }
  Tensor t = make("mean", {r}, std::move(out));
  node(t.id_).backfn = [aid = a.id_, r, c](Tape& tp, Node& n) {
    auto& g = tp.grad_of(aid);
    const double inv = 1.0 / static_cast<double>(c);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) g[i * c + j] += n.grad[i] * inv;
  };
  return t;
}

Tensor Tape::mean_all(Tensor a) {
  const auto& av = node(a.id_).val;
  double acc = 0.0;
  for (double v : av) acc += v;
  Tensor t = make("mean_all", {1}, {acc / static_cast<double>(av.size())});
  node(t.id_).backfn = [aid = a.id_](Tape& tp, Node& n) {
    auto& g = tp.grad_of(aid);
    const double d = n.grad[0] / static_cast<double>(g.size());
    for (auto& v : g) v += d;
  };
  return t;
}

Tensor Tape::sum_all(Tensor a) {
  const auto& av = node(a.id_).val;
  double acc = 0.0;
  for (double v : av) acc += v;
  Tensor t = make("sum_all", {1}, {acc});
  node(t.id_).backfn = [aid = a.id_](Tape& tp, Node& n) {
    auto& g = tp.grad_of(aid);
    for (auto& v : g) v += n.grad[0];
  };
  return t;
}

Tensor Tape::embedding(Tensor table, const std::vector<int>& ids) {
  require(table.shape().size() == 2, "embedding: table must be rank-2");
  require(!ids.empty(), "embedding: empty id list");
  const std::size_t v = table.shape()[0], d = table.shape()[1];
  const auto& tv = node(table.id_).val;
  std::vector<double> out(ids.size() * d);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    require(ids[i] >= 0 && static_cast<std::size_t>(ids[i]) < v,
            "embedding: id out of range");
    std::copy_n(&tv[static_cast<std::size_t>(ids[i]) * d], d, &out[i * d]);
  }
  Tensor t = make("embedding", {ids.size(), d}, std::move(out));
  node(t.id_).backfn = [tid = table.id_, ids, d](Tape& tp, Node& n) {
    auto& g = tp.grad_of(tid);
    for (std::size_t i = 0; i < ids.size(); ++i) {
      double* grow = &g[static_cast<std::size_t>(ids[i]) * d];
      const double* nrow = &n.grad[i * d];
      for (std::size_t j = 0; j < d; ++j) grow[j] += nrow[j];
    }
  };
  return t;
}

Tensor Tape::tanh_op(Tensor a) {
  const auto& av = node(a.id_).val;
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(av[i]);
  Tensor t = make("tanh", a.shape(), std::move(out));
  node(t.id_).backfn = [aid = a.id_](Tape& tp, Node& n) {
    const auto& ov = n.val;
    auto& g = tp.grad_of(aid);
    for (std::size_t i = 0; i < n.grad.size(); ++i)
      g[i] += n.grad[i] * (1.0 - ov[i] * ov[i]);
  };
  return t;
}

Tensor Tape::relu(Tensor a) {
  const auto& av = node(a.id_).val;
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] > 0 ? av[i] : 0.0;
  Tensor t = make("relu", a.shape(), std::move(out));
  node(t.id_).backfn = [aid = a.id_](Tape& tp, Node& n) {
    const auto& av = tp.node(aid).val;
    auto& g = tp.grad_of(aid);
    for (std::size_t i = 0; i < n.grad.size(); ++i)
      if (av[i] > 0) g[i] += n.grad[i];
  };
  return t;
}

namespace {

// rows() interprets a as a stack of independent softmax problems along
// `axis`; returns (n_groups, group_size, stride within group).
struct AxisView {
  std::size_t groups, len, stride, group_stride;
};

AxisView axis_view(const Shape& s, std::size_t axis) {
  if (s.size() == 1) {
    if (axis != 0) throw std::invalid_argument("softmax: invalid axis");
    return {1, s[0], 1, 0};
  }
  if (s.size() != 2) throw std::invalid_argument("softmax: rank-2 max");
  if (axis >= 2) throw std::invalid_argument("softmax: invalid axis");
  if (axis == 1) return {s[0], s[1], 1, s[1]};
  return {s[1], s[0], s[1], 1};
}

}  // namespace

Tensor Tape::softmax(Tensor a, std::size_t axis) {
  const AxisView v = axis_view(a.shape(), axis);
  const auto& av = node(a.id_).val;
  std::vector<double> out(av.size());
  for (std::size_t gi = 0; gi < v.groups; ++gi) {
    const std::size_t base = gi * v.group_stride;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < v.len; ++i)
      mx = std::max(mx, av[base + i * v.stride]);
    double z = 0.0;
    for (std::size_t i = 0; i < v.len; ++i) {
      const double e = std::exp(av[base + i * v.stride] - mx);
      out[base + i * v.stride] = e;
      z += e;
    }
    for (std::size_t i = 0; i < v.len; ++i) out[base + i * v.stride] /= z;
  }
  Tensor t = make("softmax", a.shape(), std::move(out));
  node(t.id_).backfn = [aid = a.id_, v](Tape& tp, Node& n) {
    auto& g = tp.grad_of(aid);
    const auto& ov = n.val;
    for (std::size_t gi = 0; gi < v.groups; ++gi) {
      const std::size_t base = gi * v.group_stride;
      double dot = 0.0;
      for (std::size_t i = 0; i < v.len; ++i) {
        const std::size_t ix = base + i * v.stride;
        dot += n.grad[ix] * ov[ix];
      }
      for (std::size_t i = 0; i < v.len; ++i) {
        const std::size_t ix = base + i * v.stride;
        g[ix] += ov[ix] * (n.grad[ix] - dot);
      }
    }
  };
  return t;
}

Tensor Tape::log_softmax(Tensor a, std::size_t axis) {
  const AxisView v = axis_view(a.shape(), axis);
  const auto& av = node(a.id_).val;
  std::vector<double> out(av.size());
  for (std::size_t gi = 0; gi < v.groups; ++gi) {
    const std::size_t base = gi * v.group_stride;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < v.len; ++i)
      mx = std::max(mx, av[base + i * v.stride]);
    double z = 0.0;
    for (std::size_t i = 0; i < v.len; ++i)
      z += std::exp(av[base + i * v.stride] - mx);
    const double lz = mx + std::log(z);
    for (std::size_t i = 0; i < v.len; ++i) {
      const std::size_t ix = base + i * v.stride;
      out[ix] = av[ix] - lz;
    }
  }
  Tensor t = make("log_softmax", a.shape(), std::move(out));
  node(t.id_).backfn = [aid = a.id_, v](Tape& tp, Node& n) {
    auto& g = tp.grad_of(aid);
    const auto& ov = n.val;
    for (std::size_t gi = 0; gi < v.groups; ++gi) {
      const std::size_t base = gi * v.group_stride;
      double gsum = 0.0;
      for (std::size_t i = 0; i < v.len; ++i)
        gsum += n.grad[base + i * v.stride];
      for (std::size_t i = 0; i < v.len; ++i) {
        const std::size_t ix = base + i * v.stride;
        g[ix] += n.grad[ix] - std::exp(ov[ix]) * gsum;
      }
    }
  };
  return t;
}

Tensor Tape::layer_norm(Tensor x, Tensor gamma, Tensor beta, NormKind kind,
                        double eps) {
  const bool vec = x.shape().size() == 1;
  const std::size_t r = vec ? 1 : x.shape()[0];
  const std::size_t c = vec ? x.shape()[0] : x.shape()[1];
  require(gamma.size() == c, "layer_norm: gamma width mismatch");
  if (kind == NormKind::kStandard)
    require(beta.defined() && beta.size() == c,
            "layer_norm: beta required for standard norm");
  const auto& xv = node(x.id_).val;
  const auto& gv = node(gamma.id_).val;
  std::vector<double> out(xv.size());

  if (kind == NormKind::kScaleOnly) {
    std::vector<double> inv_rms(r);
    for (std::size_t i = 0; i < r; ++i) {
      double ms = 0.0;
      for (std::size_t j = 0; j < c; ++j) {
        const double v = xv[i * c + j];
        ms += v * v;
      }
      ms /= static_cast<double>(c);
      inv_rms[i] = 1.0 / std::sqrt(ms + eps);
      for (std::size_t j = 0; j < c; ++j)
        out[i * c + j] = xv[i * c + j] * inv_rms[i] * gv[j];
    }
    Tensor t = make("layer_norm", x.shape(), std::move(out));
    node(t.id_).backfn = [xid = x.id_, gid = gamma.id_, inv_rms, r, c,
                          eps](Tape& tp, Node& n) {
      const auto& xv = tp.node(xid).val;
      const auto& gv = tp.node(gid).val;
      auto& gx = tp.grad_of(xid);
      auto& gg = tp.grad_of(gid);
      for (std::size_t i = 0; i < r; ++i) {
        const double ir = inv_rms[i];
        double dot = 0.0;  // sum_j dy_j * g_j * x_j
        for (std::size_t j = 0; j < c; ++j) {
          const std::size_t ix = i * c + j;
          dot += n.grad[ix] * gv[j] * xv[ix];
          gg[j] += n.grad[ix] * xv[ix] * ir;
        }
        const double k = dot * ir * ir * ir / static_cast<double>(c);
        for (std::size_t j = 0; j < c; ++j) {
          const std::size_t ix = i * c + j;
          gx[ix] += n.grad[ix] * gv[j] * ir - xv[ix] * k;
        }
      }
    };
    return t;
  }

  const auto& bv = node(beta.id_).val;
  std::vector<double> mu(r), inv_sd(r);
  for (std::size_t i = 0; i < r; ++i) {
    double m = 0.0;
    for (std::size_t j = 0; j < c; ++j) m += xv[i * c + j];
    m /= static_cast<double>(c);
    double var = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      const double d = xv[i * c + j] - m;
      var += d * d;
    }
    var /= static_cast<double>(c);
    mu[i] = m;
    inv_sd[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < c; ++j)
      out[i * c + j] = (xv[i * c + j] - m) * inv_sd[i] * gv[j] + bv[j];
  }
  Tensor t = make("layer_norm", x.shape(), std::move(out));
  node(t.id_).backfn = [xid = x.id_, gid = gamma.id_, bid = beta.id_, mu,
                        inv_sd, r, c](Tape& tp, Node& n) {
    const auto& xv = tp.node(xid).val;
    const auto& gv = tp.node(gid).val;
    auto& gx = tp.grad_of(xid);
    auto& gg = tp.grad_of(gid);
    auto& gb = tp.grad_of(bid);
    const double cn = static_cast<double>(c);
    for (std::size_t i = 0; i < r; ++i) {
      double sum_dy = 0.0, sum_dy_xhat = 0.0;
      for (std::size_t j = 0; j < c; ++j) {
        const std::size_t ix = i * c + j;
        const double xhat = (xv[ix] - mu[i]) * inv_sd[i];
        const double dy = n.grad[ix] * gv[j];
        sum_dy += dy;
        sum_dy_xhat += dy * xhat;
        gg[j] += n.grad[ix] * xhat;
        gb[j] += n.grad[ix];
      }
      for (std::size_t j = 0; j < c; ++j) {
        const std::size_t ix = i * c + j;
        const double xhat = (xv[ix] - mu[i]) * inv_sd[i];
        const double dy = n.grad[ix] * gv[j];
        gx[ix] += inv_sd[i] * (dy - sum_dy / cn - xhat * sum_dy_xhat / cn);
      }
    }
  };
  return t;
}

Tensor Tape::masked_fill(Tensor a, const std::vector<std::uint8_t>& keep,
                         double fill) {
  require(keep.size() == a.size(), "masked_fill: mask size mismatch");
  const auto& av = node(a.id_).val;
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = keep[i] ? av[i] : fill;
  Tensor t = make("masked_fill", a.shape(), std::move(out));
  node(t.id_).backfn = [aid = a.id_, keep](Tape& tp, Node& n) {
    auto& g = tp.grad_of(aid);
    for (std::size_t i = 0; i < n.grad.size(); ++i)
      if (keep[i]) g[i] += n.grad[i];
  };
  return t;
}

Tensor Tape::cross_entropy(Tensor logits, const std::vector<int>& targets,
                           int ignore_index) {
  require(logits.shape().size() == 2, "cross_entropy: logits must be rank-2");
  const std::size_t t = logits.shape()[0], vocab = logits.shape()[1];
  require(targets.size() == t, "cross_entropy: target length mismatch");
  const auto& lv = node(logits.id_).val;

  std::vector<double> probs(lv.size());  // row softmax, kept for backward
  double loss = 0.0;
  std::size_t kept = 0;
  for (std::size_t i = 0; i < t; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < vocab; ++j) mx = std::max(mx, lv[i * vocab + j]);
    double z = 0.0;
    for (std::size_t j = 0; j < vocab; ++j) {
      const double e = std::exp(lv[i * vocab + j] - mx);
      probs[i * vocab + j] = e;
      z += e;
    }
    for (std::size_t j = 0; j < vocab; ++j) probs[i * vocab + j] /= z;
    if (targets[i] == ignore_index) continue;
    require(targets[i] >= 0 && static_cast<std::size_t>(targets[i]) < vocab,
            "cross_entropy: target id out of range");
    loss -= std::log(probs[i * vocab + static_cast<std::size_t>(targets[i])]);
    ++kept;
  }
  if (kept == 0) throw std::invalid_argument("cross_entropy: empty loss");
  loss /= static_cast<double>(kept);

  Tensor out = make("cross_entropy", {1}, {loss});
  node(out.id_).backfn = [lid = logits.id_, targets, ignore_index, probs, t,
                          vocab, kept](Tape& tp, Node& n) {
    auto& g = tp.grad_of(lid);
    const double up = n.grad[0] / static_cast<double>(kept);
    for (std::size_t i = 0; i < t; ++i) {
      if (targets[i] == ignore_index) continue;
      for (std::size_t j = 0; j < vocab; ++j)
        g[i * vocab + j] += up * probs[i * vocab + j];
      g[i * vocab + static_cast<std::size_t>(targets[i])] -= up;
    }
  };
  return out;
}

Tensor Tape::mse(Tensor pred, double target) {
  require(pred.size() == 1, "mse: prediction must be scalar");
  require(std::isfinite(target), "mse: non-finite target");
  const double p = node(pred.id_).val[0];
  const double d = p - target;
  Tensor out = make("mse", {1}, {d * d});
  node(out.id_).backfn = [pid = pred.id_, d](Tape& tp, Node& n) {
    tp.grad_of(pid)[0] += n.grad[0] * 2.0 * d;
  };
  return out;
}

void Tape::backward(Tensor loss, double seed) {
  require(loss.defined() && loss.tape_ == this, "backward: foreign tensor");
  if (loss.size() != 1)
    throw std::invalid_argument("backward: loss must be scalar, got shape " +
                                shape_str(loss.shape()));
  if (backward_done_)
    throw std::logic_error("backward: tape already differentiated");
  backward_done_ = true;
  grad_of(loss.id_)[0] += seed;
  for (std::size_t id = loss.id_ + 1; id-- > 0;) {
    Node& n = node(id);
    if (n.grad.empty()) continue;  // not reached by this loss
    if (n.backfn) n.backfn(*this, n);
    if (n.bound != nullptr && n.bound->trainable) {
      Parameter& p = *n.bound;
      p.ensure_grad();
      for (std::size_t i = 0; i < p.grad.size(); ++i) {
        p.grad[i] += n.grad[i];
        if (!std::isfinite(p.grad[i]))
          throw NumericError("non-finite gradient for parameter " + p.name);
      }
      p.grad_live = true;
    }
  }
}

void init_uniform_fan_in(Parameter& p, std::size_t fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (auto& v : p.value) v = rng.uniform(-bound, bound);
}

}  // namespace ef
