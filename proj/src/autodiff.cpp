#include "tidsit/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "tidsit/errors.hpp"

namespace tidsit {

namespace {

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b)) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a) +
                     " vs " + shape_string(b));
  }
}

}  // namespace

Tape::NodeId Tape::push(Tensor value, bool needs_grad,
                        std::function<void(Tape&)> pull) {
  Node n;
  n.value = std::move(value);
  n.needs_grad = needs_grad;
  n.pull = std::move(pull);
  nodes_.push_back(std::move(n));
  return static_cast<NodeId>(nodes_.size() - 1);
}

bool Tape::any_grad(std::initializer_list<NodeId> ids) const {
  for (NodeId id : ids) {
    if (nodes_[id].needs_grad) return true;
  }
  return false;
}

Tape::NodeId Tape::input(Tensor value) {
  return push(std::move(value), false, nullptr);
}

Tape::NodeId Tape::parameter(Tensor value) {
  return push(std::move(value), true, nullptr);
}

const Tensor& Tape::adjoint(NodeId id) const {
  if (!swept_) throw NumericError("adjoint requested before backward()");
  return nodes_[id].adjoint;
}

void Tape::backward(NodeId loss) {
  if (nodes_[loss].value.size() != 1) {
    throw NumericError("backward seed must be scalar, got " +
                       shape_string(nodes_[loss].value));
  }
  for (Node& n : nodes_) {
    n.adjoint = Tensor(n.value.rows(), n.value.cols(), 0.0);
  }
  nodes_[loss].adjoint[0] = 1.0;
  swept_ = true;
  for (std::size_t i = nodes_.size(); i-- > 0;) {
    Node& n = nodes_[i];
    if (n.pull && n.needs_grad) n.pull(*this);
  }
}

Tape::NodeId Tape::matmul(NodeId a, NodeId b) {
  const Tensor& A = value(a);
  const Tensor& B = value(b);
  if (A.cols() != B.rows()) {
    throw ShapeError("matmul: inner dimensions disagree, " + shape_string(A) +
                     " x " + shape_string(B));
  }
  const std::size_t m = A.rows(), k = A.cols(), n = B.cols();
  Tensor C(m, n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = A(i, p);
      if (aip == 0.0) continue;
      for (std::size_t j = 0; j < n; ++j) {
        C(i, j) += aip * B(p, j);
      }
    }
  }
  NodeId out = push(std::move(C), any_grad({a, b}), nullptr);
  nodes_[out].pull = [a, b, out, m, k, n](Tape& t) {
    const Tensor& dC = t.grad(out);
    if (t.nodes_[a].needs_grad) {
      Tensor& dA = t.grad(a);
      const Tensor& B2 = t.value(b);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
          const double d = dC(i, j);
          if (d == 0.0) continue;
          for (std::size_t p = 0; p < k; ++p) dA(i, p) += d * B2(p, j);
        }
    }
    if (t.nodes_[b].needs_grad) {
      Tensor& dB = t.grad(b);
      const Tensor& A2 = t.value(a);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const double aip = A2(i, p);
          if (aip == 0.0) continue;
          for (std::size_t j = 0; j < n; ++j) dB(p, j) += aip * dC(i, j);
        }
    }
  };
  return out;
}

Tape::NodeId Tape::transpose(NodeId a) {
  const Tensor& A = value(a);
  Tensor T(A.cols(), A.rows());
  for (std::size_t i = 0; i < A.rows(); ++i)
    for (std::size_t j = 0; j < A.cols(); ++j) T(j, i) = A(i, j);
  NodeId out = push(std::move(T), any_grad({a}), nullptr);
  nodes_[out].pull = [a, out](Tape& t) {
    const Tensor& dT = t.grad(out);
    Tensor& dA = t.grad(a);
    for (std::size_t i = 0; i < dA.rows(); ++i)
      for (std::size_t j = 0; j < dA.cols(); ++j) dA(i, j) += dT(j, i);
  };
  return out;
}

Tape::NodeId Tape::add(NodeId a, NodeId b) {
  const Tensor& A = value(a);
  const Tensor& B = value(b);
  check_same_shape(A, B, "add");
  Tensor C = A;
  for (std::size_t i = 0; i < C.size(); ++i) C[i] += B[i];
  NodeId out = push(std::move(C), any_grad({a, b}), nullptr);
  nodes_[out].pull = [a, b, out](Tape& t) {
    const Tensor& d = t.grad(out);
    if (t.nodes_[a].needs_grad) {
      Tensor& dA = t.grad(a);
      for (std::size_t i = 0; i < d.size(); ++i) dA[i] += d[i];
    }
    if (t.nodes_[b].needs_grad) {
      Tensor& dB = t.grad(b);
      for (std::size_t i = 0; i < d.size(); ++i) dB[i] += d[i];
    }
  };
  return out;
}

Tape::NodeId Tape::sub(NodeId a, NodeId b) {
  const Tensor& A = value(a);
  const Tensor& B = value(b);
  check_same_shape(A, B, "sub");
  Tensor C = A;
  for (std::size_t i = 0; i < C.size(); ++i) C[i] -= B[i];
  NodeId out = push(std::move(C), any_grad({a, b}), nullptr);
  nodes_[out].pull = [a, b, out](Tape& t) {
    const Tensor& d = t.grad(out);
    if (t.nodes_[a].needs_grad) {
      Tensor& dA = t.grad(a);
      for (std::size_t i = 0; i < d.size(); ++i) dA[i] += d[i];
    }
    if (t.nodes_[b].needs_grad) {
      Tensor& dB = t.grad(b);
      for (std::size_t i = 0; i < d.size(); ++i) dB[i] -= d[i];
    }
  };
  return out;
}

Tape::NodeId Tape::mul(NodeId a, NodeId b) {
  const Tensor& A = value(a);
  const Tensor& B = value(b);
  check_same_shape(A, B, "mul");
  Tensor C = A;
  for (std::size_t i = 0; i < C.size(); ++i) C[i] *= B[i];
  NodeId out = push(std::move(C), any_grad({a, b}), nullptr);
  nodes_[out].pull = [a, b, out](Tape& t) {
    const Tensor& d = t.grad(out);
    if (t.nodes_[a].needs_grad) {
      Tensor& dA = t.grad(a);
      const Tensor& B2 = t.value(b);
      for (std::size_t i = 0; i < d.size(); ++i) dA[i] += d[i] * B2[i];
    }
    if (t.nodes_[b].needs_grad) {
      Tensor& dB = t.grad(b);
      const Tensor& A2 = t.value(a);
      for (std::size_t i = 0; i < d.size(); ++i) dB[i] += d[i] * A2[i];
    }
  };
  return out;
}

Tape::NodeId Tape::scale(NodeId a, double s) {
  Tensor C = value(a);
  for (double& v : C.data()) v *= s;
  NodeId out = push(std::move(C), any_grad({a}), nullptr);
  nodes_[out].pull = [a, out, s](Tape& t) {
    const Tensor& d = t.grad(out);
    Tensor& dA = t.grad(a);
    for (std::size_t i = 0; i < d.size(); ++i) dA[i] += s * d[i];
  };
  return out;
}

Tape::NodeId Tape::add_scalar(NodeId a, double s) {
  Tensor C = value(a);
  for (double& v : C.data()) v += s;
  NodeId out = push(std::move(C), any_grad({a}), nullptr);
  nodes_[out].pull = [a, out](Tape& t) {
    const Tensor& d = t.grad(out);
    Tensor& dA = t.grad(a);
    for (std::size_t i = 0; i < d.size(); ++i) dA[i] += d[i];
  };
  return out;
}

Tape::NodeId Tape::add_row(NodeId a, NodeId row) {
  const Tensor& A = value(a);
  const Tensor& R = value(row);
  if (R.rows() != 1 || R.cols() != A.cols()) {
    throw ShapeError("add_row: row shape " + shape_string(R) +
                     " incompatible with " + shape_string(A));
  }
  Tensor C = A;
  for (std::size_t i = 0; i < C.rows(); ++i)
    for (std::size_t j = 0; j < C.cols(); ++j) C(i, j) += R(0, j);
  NodeId out = push(std::move(C), any_grad({a, row}), nullptr);
  nodes_[out].pull = [a, row, out](Tape& t) {
    const Tensor& d = t.grad(out);
    if (t.nodes_[a].needs_grad) {
      Tensor& dA = t.grad(a);
      for (std::size_t i = 0; i < d.size(); ++i) dA[i] += d[i];
    }
    if (t.nodes_[row].needs_grad) {
      Tensor& dR = t.grad(row);
      for (std::size_t i = 0; i < d.rows(); ++i)
        for (std::size_t j = 0; j < d.cols(); ++j) dR(0, j) += d(i, j);
    }
  };
  return out;
}

Tape::NodeId Tape::relu(NodeId a) {
  Tensor C = value(a);
  for (double& v : C.data()) v = v > 0.0 ? v : 0.0;
  NodeId out = push(std::move(C), any_grad({a}), nullptr);
  nodes_[out].pull = [a, out](Tape& t) {
    const Tensor& d = t.grad(out);
    const Tensor& A = t.value(a);
    Tensor& dA = t.grad(a);
    for (std::size_t i = 0; i < d.size(); ++i) {
      if (A[i] > 0.0) dA[i] += d[i];
    }
  };
  return out;
}

Tape::NodeId Tape::dropout(NodeId a, double rate, Mode mode,
                           RngStream& stream) {
  if (rate < 0.0 || rate >= 1.0) {
    throw ConfigError("dropout rate must be in [0, 1), got " +
                      std::to_string(rate));
  }
  if (mode == Mode::eval || rate == 0.0) return a;  // strict identity
  const Tensor& A = value(a);
  const double keep_scale = 1.0 / (1.0 - rate);
  std::vector<std::uint8_t> keep(A.size());
  Tensor C = A;
  for (std::size_t i = 0; i < C.size(); ++i) {
    keep[i] = stream.next_uniform() >= rate ? 1 : 0;
    C[i] = keep[i] ? C[i] * keep_scale : 0.0;
  }
  NodeId out = push(std::move(C), any_grad({a}), nullptr);
  nodes_[out].pull = [a, out, keep = std::move(keep), keep_scale](Tape& t) {
    const Tensor& d = t.grad(out);
    Tensor& dA = t.grad(a);
    for (std::size_t i = 0; i < d.size(); ++i) {
      if (keep[i]) dA[i] += d[i] * keep_scale;
    }
  };
  return out;
}

Tape::NodeId Tape::softmax_masked(NodeId a, const Mask& key_mask) {
  const Tensor& A = value(a);
  if (key_mask.size() != A.cols()) {
    throw ShapeError("softmax_masked: mask length " +
                     std::to_string(key_mask.size()) + " vs row width " +
                     std::to_string(A.cols()));
  }
  if (std::find(key_mask.begin(), key_mask.end(), std::uint8_t{1}) ==
      key_mask.end()) {
    throw NumericError("softmax_masked: degenerate mask with no valid keys");
  }
  const std::size_t m = A.rows(), n = A.cols();
  Tensor P(m, n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    double mx = -1e300;
    for (std::size_t j = 0; j < n; ++j) {
      const double l = A(i, j) + (key_mask[j] ? 0.0 : -1e9);
      if (l > mx) mx = l;
    }
    double denom = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double l = A(i, j) + (key_mask[j] ? 0.0 : -1e9);
      P(i, j) = std::exp(l - mx);
      denom += P(i, j);
    }
    for (std::size_t j = 0; j < n; ++j) {
      P(i, j) = key_mask[j] ? P(i, j) / denom : 0.0;  // re-zero masked keys
    }
  }
  NodeId out = push(std::move(P), any_grad({a}), nullptr);
  nodes_[out].pull = [a, out](Tape& t) {
    const Tensor& P2 = t.value(out);
    const Tensor& dP = t.grad(out);
    Tensor& dA = t.grad(a);
    for (std::size_t i = 0; i < P2.rows(); ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < P2.cols(); ++j) dot += dP(i, j) * P2(i, j);
      for (std::size_t j = 0; j < P2.cols(); ++j) {
        dA(i, j) += P2(i, j) * (dP(i, j) - dot);
      }
    }
  };
  return out;
}

Tape::NodeId Tape::layer_norm(NodeId a, NodeId gamma, NodeId beta,
                              double eps) {
  const Tensor& A = value(a);
  const Tensor& G = value(gamma);
  const Tensor& B = value(beta);
  const std::size_t m = A.rows(), n = A.cols();
  if (G.rows() != 1 || G.cols() != n || B.rows() != 1 || B.cols() != n) {
    throw ShapeError("layer_norm: gamma/beta must be 1x" + std::to_string(n));
  }
  Tensor Y(m, n);
  Tensor xhat(m, n);
  std::vector<double> inv_std(m);
  for (std::size_t i = 0; i < m; ++i) {
    double mean = 0.0;
    for (std::size_t j = 0; j < n; ++j) mean += A(i, j);
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double c = A(i, j) - mean;
      var += c * c;
    }
    var /= static_cast<double>(n);
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) {
      xhat(i, j) = (A(i, j) - mean) * inv_std[i];
      Y(i, j) = G(0, j) * xhat(i, j) + B(0, j);
    }
  }
  NodeId out = push(std::move(Y), any_grad({a, gamma, beta}), nullptr);
  nodes_[out].pull = [a, gamma, beta, out, xhat = std::move(xhat),
                      inv_std = std::move(inv_std)](Tape& t) {
    const Tensor& dY = t.grad(out);
    const Tensor& G2 = t.value(gamma);
    const std::size_t m2 = dY.rows(), n2 = dY.cols();
    if (t.nodes_[gamma].needs_grad) {
      Tensor& dG = t.grad(gamma);
      for (std::size_t i = 0; i < m2; ++i)
        for (std::size_t j = 0; j < n2; ++j)
          dG(0, j) += dY(i, j) * xhat(i, j);
    }
    if (t.nodes_[beta].needs_grad) {
      Tensor& dB = t.grad(beta);
      for (std::size_t i = 0; i < m2; ++i)
        for (std::size_t j = 0; j < n2; ++j) dB(0, j) += dY(i, j);
    }
    if (t.nodes_[a].needs_grad) {
      Tensor& dA = t.grad(a);
      for (std::size_t i = 0; i < m2; ++i) {
        // dxhat = dY * gamma; dx = inv_std * (dxhat - mean(dxhat)
        //                                      - xhat * mean(dxhat * xhat))
        double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
        for (std::size_t j = 0; j < n2; ++j) {
          const double dxh = dY(i, j) * G2(0, j);
          mean_dxhat += dxh;
          mean_dxhat_xhat += dxh * xhat(i, j);
        }
        mean_dxhat /= static_cast<double>(n2);
        mean_dxhat_xhat /= static_cast<double>(n2);
        for (std::size_t j = 0; j < n2; ++j) {
          const double dxh = dY(i, j) * G2(0, j);
          dA(i, j) += inv_std[i] *
                      (dxh - mean_dxhat - xhat(i, j) * mean_dxhat_xhat);
        }
      }
    }
  };
  return out;
}

Tape::NodeId Tape::concat_rows(NodeId a, NodeId b) {
  const Tensor& A = value(a);
  const Tensor& B = value(b);
  if (A.cols() != B.cols()) {
    throw ShapeError("concat_rows: width mismatch " + shape_string(A) +
                     " vs " + shape_string(B));
  }
  const std::size_t split = A.size();
  Tensor C(A.rows() + B.rows(), A.cols());
  std::copy(A.data().begin(), A.data().end(), C.data().begin());
  std::copy(B.data().begin(), B.data().end(),
            C.data().begin() + static_cast<std::ptrdiff_t>(split));
  NodeId out = push(std::move(C), any_grad({a, b}), nullptr);
  nodes_[out].pull = [a, b, out, split](Tape& t) {
    const Tensor& d = t.grad(out);
    if (t.nodes_[a].needs_grad) {
      Tensor& dA = t.grad(a);
      for (std::size_t i = 0; i < split; ++i) dA[i] += d[i];
    }
    if (t.nodes_[b].needs_grad) {
      Tensor& dB = t.grad(b);
      for (std::size_t i = split; i < d.size(); ++i) dB[i - split] += d[i];
    }
  };
  return out;
}

Tape::NodeId Tape::concat_cols(NodeId a, NodeId b) {
  const Tensor& A = value(a);
  const Tensor& B = value(b);
  if (A.rows() != B.rows()) {
    throw ShapeError("concat_cols: height mismatch " + shape_string(A) +
                     " vs " + shape_string(B));
  }
  const std::size_t ac = A.cols();
  Tensor C(A.rows(), ac + B.cols());
  for (std::size_t i = 0; i < A.rows(); ++i) {
    for (std::size_t j = 0; j < ac; ++j) C(i, j) = A(i, j);
    for (std::size_t j = 0; j < B.cols(); ++j) C(i, ac + j) = B(i, j);
  }
  NodeId out = push(std::move(C), any_grad({a, b}), nullptr);
  nodes_[out].pull = [a, b, out, ac](Tape& t) {
    const Tensor& d = t.grad(out);
    if (t.nodes_[a].needs_grad) {
      Tensor& dA = t.grad(a);
      for (std::size_t i = 0; i < dA.rows(); ++i)
        for (std::size_t j = 0; j < ac; ++j) dA(i, j) += d(i, j);
    }
    if (t.nodes_[b].needs_grad) {
      Tensor& dB = t.grad(b);
      for (std::size_t i = 0; i < dB.rows(); ++i)
        for (std::size_t j = 0; j < dB.cols(); ++j)
          dB(i, j) += d(i, ac + j);
    }
  };
  return out;
}

Tape::NodeId Tape::slice_cols(NodeId a, std::size_t first, std::size_t count) {
  const Tensor& A = value(a);
  if (first + count > A.cols()) {
    throw ShapeError("slice_cols: [" + std::to_string(first) + ", " +
                     std::to_string(first + count) + ") exceeds width " +
                     std::to_string(A.cols()));
  }
  Tensor C(A.rows(), count);
  for (std::size_t i = 0; i < A.rows(); ++i)
    for (std::size_t j = 0; j < count; ++j) C(i, j) = A(i, first + j);
  NodeId out = push(std::move(C), any_grad({a}), nullptr);
  nodes_[out].pull = [a, out, first, count](Tape& t) {
    const Tensor& d = t.grad(out);
    Tensor& dA = t.grad(a);
    for (std::size_t i = 0; i < d.rows(); ++i)
      for (std::size_t j = 0; j < count; ++j) dA(i, first + j) += d(i, j);
  };
  return out;
}

Tape::NodeId Tape::mean_rows(NodeId a) {
  return mean_rows(a, Mask(value(a).rows(), 1));
}

Tape::NodeId Tape::mean_rows(NodeId a, const Mask& row_mask) {
  const Tensor& A = value(a);
  if (row_mask.size() != A.rows()) {
    throw ShapeError("mean_rows: mask length " +
                     std::to_string(row_mask.size()) + " vs rows " +
                     std::to_string(A.rows()));
  }
  std::size_t k = 0;
  for (std::uint8_t v : row_mask) k += v ? 1 : 0;
  if (k == 0) throw NumericError("mean_rows: no valid rows selected");
  Tensor C(1, A.cols(), 0.0);
  for (std::size_t i = 0; i < A.rows(); ++i) {
    if (!row_mask[i]) continue;
    for (std::size_t j = 0; j < A.cols(); ++j) C(0, j) += A(i, j);
  }
  for (double& v : C.data()) v /= static_cast<double>(k);
  NodeId out = push(std::move(C), any_grad({a}), nullptr);
  nodes_[out].pull = [a, out, row_mask, k](Tape& t) {
    const Tensor& d = t.grad(out);
    Tensor& dA = t.grad(a);
    const double inv = 1.0 / static_cast<double>(k);
    for (std::size_t i = 0; i < dA.rows(); ++i) {
      if (!row_mask[i]) continue;
      for (std::size_t j = 0; j < dA.cols(); ++j) dA(i, j) += d(0, j) * inv;
    }
  };
  return out;
}

Tape::NodeId Tape::mean_all(NodeId a) {
  const Tensor& A = value(a);
  double s = 0.0;
  for (double v : A.data()) s += v;
  const double inv = 1.0 / static_cast<double>(A.size());
  NodeId out = push(Tensor::scalar(s * inv), any_grad({a}), nullptr);
  nodes_[out].pull = [a, out, inv](Tape& t) {
    const double d = t.grad(out)[0] * inv;
    Tensor& dA = t.grad(a);
    for (std::size_t i = 0; i < dA.size(); ++i) dA[i] += d;
  };
  return out;
}

Tape::NodeId Tape::sum_all(NodeId a) {
  const Tensor& A = value(a);
  double s = 0.0;
  for (double v : A.data()) s += v;
  NodeId out = push(Tensor::scalar(s), any_grad({a}), nullptr);
  nodes_[out].pull = [a, out](Tape& t) {
    const double d = t.grad(out)[0];
    Tensor& dA = t.grad(a);
    for (std::size_t i = 0; i < dA.size(); ++i) dA[i] += d;
  };
  return out;
}

}  // namespace tidsit
