#include "fusenet/graph.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "fusenet/kernels.hpp"

namespace fusenet {

namespace {
constexpr double kSigmoidClamp = 1e-12;

double sigmoid_scalar(double z) { return 1.0 / (1.0 + std::exp(-z)); }
}  // namespace

TensorRef Graph::new_node(std::size_t rows, std::size_t cols, bool requires_grad) {
    Node n;
    n.value = Matrix(rows, cols);
    n.grad = Matrix(rows, cols);
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return TensorRef{this, nodes_.size() - 1};
}

void Graph::check_same_graph(TensorRef t) const {
    if (t.g != this) throw ContractError("tensor belongs to a different graph");
}

TensorRef Graph::constant(Matrix m) {
    TensorRef t = new_node(m.rows, m.cols, false);
    node(t).value = std::move(m);
    tape_.push_back({OpKind::constant, t.id, {}, 0.0, {}, {}});
    return t;
}

TensorRef Graph::leaf(Param& p) {
    TensorRef t = new_node(p.value.rows, p.value.cols, true);
    node(t).value = p.value;
    node(t).param = &p;
    tape_.push_back({OpKind::leaf, t.id, {}, 0.0, {}, {}});
    return t;
}

TensorRef Graph::matmul(TensorRef a, TensorRef b) {
    check_same_graph(a);
    check_same_graph(b);
    const Node& na = node(a);
    const Node& nb = node(b);
    if (na.value.cols != nb.value.rows) {
        throw ShapeError("matmul: inner dimensions disagree, " + na.value.shape_str() + " vs " +
                         nb.value.shape_str());
    }
    TensorRef out = new_node(na.value.rows, nb.value.cols,
                             na.requires_grad || nb.requires_grad);
    kern::active().matmul_acc(na.value.data(), nb.value.data(), node(out).value.data(),
                              na.value.rows, na.value.cols, nb.value.cols);
    tape_.push_back({OpKind::matmul, out.id, {a.id, b.id}, 0.0, {}, {}});
    return out;
}

TensorRef Graph::add(TensorRef a, TensorRef b) {
    check_same_graph(a);
    check_same_graph(b);
    require_same_shape(node(a).value, node(b).value, "add");
    TensorRef out = new_node(node(a).value.rows, node(a).value.cols,
                             node(a).requires_grad || node(b).requires_grad);
    kern::active().add(node(a).value.data(), node(b).value.data(), node(out).value.data(),
                       node(a).value.size());
    tape_.push_back({OpKind::add, out.id, {a.id, b.id}, 0.0, {}, {}});
    return out;
}

TensorRef Graph::sub(TensorRef a, TensorRef b) {
    check_same_graph(a);
    check_same_graph(b);
    require_same_shape(node(a).value, node(b).value, "sub");
    TensorRef out = new_node(node(a).value.rows, node(a).value.cols,
                             node(a).requires_grad || node(b).requires_grad);
    kern::active().sub(node(a).value.data(), node(b).value.data(), node(out).value.data(),
                       node(a).value.size());
    tape_.push_back({OpKind::sub, out.id, {a.id, b.id}, 0.0, {}, {}});
    return out;
}

TensorRef Graph::mul(TensorRef a, TensorRef b) {
    check_same_graph(a);
    check_same_graph(b);
    require_same_shape(node(a).value, node(b).value, "mul");
    TensorRef out = new_node(node(a).value.rows, node(a).value.cols,
                             node(a).requires_grad || node(b).requires_grad);
    kern::active().mul(node(a).value.data(), node(b).value.data(), node(out).value.data(),
                       node(a).value.size());
    tape_.push_back({OpKind::mul, out.id, {a.id, b.id}, 0.0, {}, {}});
    return out;
}

TensorRef Graph::scale(TensorRef a, double s) {
    check_same_graph(a);
    TensorRef out = new_node(node(a).value.rows, node(a).value.cols, node(a).requires_grad);
    kern::active().scale(node(a).value.data(), s, node(out).value.data(), node(a).value.size());
    tape_.push_back({OpKind::scale, out.id, {a.id}, s, {}, {}});
    return out;
}

TensorRef Graph::smul(TensorRef scalar, TensorRef m) {
    check_same_graph(scalar);
    check_same_graph(m);
    if (node(scalar).value.size() != 1) {
        throw ShapeError("smul: scaling operand must be 1x1, got " +
                         node(scalar).value.shape_str());
    }
    TensorRef out = new_node(node(m).value.rows, node(m).value.cols,
                             node(scalar).requires_grad || node(m).requires_grad);
    kern::active().scale(node(m).value.data(), node(scalar).value.a[0], node(out).value.data(),
                         node(m).value.size());
    tape_.push_back({OpKind::smul, out.id, {scalar.id, m.id}, 0.0, {}, {}});
    return out;
}

TensorRef Graph::row_add(TensorRef x, TensorRef r) {
    check_same_graph(x);
    check_same_graph(r);
    const Matrix& xv = node(x).value;
    const Matrix& rv = node(r).value;
    if (rv.rows != 1 || rv.cols != xv.cols) {
        throw ShapeError("row_add: expected 1x" + std::to_string(xv.cols) + " row vector, got " +
                         rv.shape_str());
    }
    TensorRef out = new_node(xv.rows, xv.cols, node(x).requires_grad || node(r).requires_grad);
    for (std::size_t i = 0; i < xv.rows; ++i) {
        kern::active().add(xv.row(i), rv.data(), node(out).value.row(i), xv.cols);
    }
    tape_.push_back({OpKind::row_add, out.id, {x.id, r.id}, 0.0, {}, {}});
    return out;
}

TensorRef Graph::row_mul(TensorRef x, TensorRef r) {
    check_same_graph(x);
    check_same_graph(r);
    const Matrix& xv = node(x).value;
    const Matrix& rv = node(r).value;
    if (rv.rows != 1 || rv.cols != xv.cols) {
        throw ShapeError("row_mul: expected 1x" + std::to_string(xv.cols) + " row vector, got " +
                         rv.shape_str());
    }
    TensorRef out = new_node(xv.rows, xv.cols, node(x).requires_grad || node(r).requires_grad);
    for (std::size_t i = 0; i < xv.rows; ++i) {
        kern::active().mul(xv.row(i), rv.data(), node(out).value.row(i), xv.cols);
    }
    tape_.push_back({OpKind::row_mul, out.id, {x.id, r.id}, 0.0, {}, {}});
    return out;
}

TensorRef Graph::relu(TensorRef a) {
    check_same_graph(a);
    TensorRef out = new_node(node(a).value.rows, node(a).value.cols, node(a).requires_grad);
    kern::active().relu(node(a).value.data(), node(out).value.data(), node(a).value.size());
    tape_.push_back({OpKind::relu, out.id, {a.id}, 0.0, {}, {}});
    return out;
}

TensorRef Graph::sigmoid(TensorRef a) {
    check_same_graph(a);
    TensorRef out = new_node(node(a).value.rows, node(a).value.cols, node(a).requires_grad);
    const Matrix& av = node(a).value;
    Matrix& ov = node(out).value;
    for (std::size_t i = 0; i < av.size(); ++i) ov.a[i] = sigmoid_scalar(av.a[i]);
    tape_.push_back({OpKind::sigmoid, out.id, {a.id}, 0.0, {}, {}});
    return out;
}

TensorRef Graph::tanh(TensorRef a) {
    check_same_graph(a);
    TensorRef out = new_node(node(a).value.rows, node(a).value.cols, node(a).requires_grad);
    const Matrix& av = node(a).value;
    Matrix& ov = node(out).value;
    for (std::size_t i = 0; i < av.size(); ++i) ov.a[i] = std::tanh(av.a[i]);
    tape_.push_back({OpKind::tanh, out.id, {a.id}, 0.0, {}, {}});
    return out;
}

TensorRef Graph::sum_all(TensorRef a) {
    check_same_graph(a);
    TensorRef out = new_node(1, 1, node(a).requires_grad);
    const Matrix& av = node(a).value;
    double s = 0.0;
    for (std::size_t i = 0; i < av.size(); ++i) s += av.a[i];
    node(out).value.a[0] = s;
    tape_.push_back({OpKind::sum_all, out.id, {a.id}, 0.0, {}, {}});
    return out;
}

TensorRef Graph::concat_cols(std::span<const TensorRef> parts) {
    if (parts.empty()) throw ContractError("concat_cols: no inputs");
    std::size_t rows = node(parts[0]).value.rows;
    std::size_t cols = 0;
    bool rg = false;
    for (TensorRef p : parts) {
        check_same_graph(p);
        if (node(p).value.rows != rows) {
            throw ShapeError("concat_cols: row counts disagree, " +
                             node(parts[0]).value.shape_str() + " vs " +
                             node(p).value.shape_str());
        }
        cols += node(p).value.cols;
        rg = rg || node(p).requires_grad;
    }
    TensorRef out = new_node(rows, cols, rg);
    Matrix& ov = node(out).value;
    std::size_t off = 0;
    std::vector<std::size_t> ids;
    for (TensorRef p : parts) {
        const Matrix& pv = node(p).value;
        for (std::size_t i = 0; i < rows; ++i) {
            std::memcpy(ov.row(i) + off, pv.row(i), pv.cols * sizeof(double));
        }
        off += pv.cols;
        ids.push_back(p.id);
    }
    tape_.push_back({OpKind::concat_cols, out.id, std::move(ids), 0.0, {}, {}});
    return out;
}

TensorRef Graph::batchnorm_train(TensorRef x, TensorRef gamma, TensorRef beta, double epsilon,
                                 std::vector<double>* batch_mean_out,
                                 std::vector<double>* batch_var_out) {
    check_same_graph(x);
    check_same_graph(gamma);
    check_same_graph(beta);
    const Matrix& xv = node(x).value;
    const std::size_t m = xv.rows;
    const std::size_t d = xv.cols;
    if (m < 2) {
        throw ContractError("batchnorm_train: batch of " + std::to_string(m) +
                            " has undefined variance; need at least 2");
    }
    if (node(gamma).value.rows != 1 || node(gamma).value.cols != d ||
        node(beta).value.rows != 1 || node(beta).value.cols != d) {
        throw ShapeError("batchnorm_train: gamma/beta must be 1x" + std::to_string(d));
    }
    TensorRef out = new_node(m, d, true);
    Matrix xhat(m, d);
    std::vector<double> inv_std(d);
    std::vector<double> mean(d), var(d);
    for (std::size_t j = 0; j < d; ++j) {
        double mu = 0.0;
        for (std::size_t i = 0; i < m; ++i) mu += xv.at(i, j);
        mu /= static_cast<double>(m);
        double v = 0.0;
        for (std::size_t i = 0; i < m; ++i) {
            const double dlt = xv.at(i, j) - mu;
            v += dlt * dlt;
        }
        v /= static_cast<double>(m);  // biased, used for normalization
        mean[j] = mu;
        var[j] = v;
        inv_std[j] = 1.0 / std::sqrt(v + epsilon);
    }
    const Matrix& gv = node(gamma).value;
    const Matrix& bv = node(beta).value;
    Matrix& ov = node(out).value;
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < d; ++j) {
            const double xb = (xv.at(i, j) - mean[j]) * inv_std[j];
            xhat.at(i, j) = xb;
            ov.at(i, j) = gv.a[j] * xb + bv.a[j];
        }
    }
    if (batch_mean_out) *batch_mean_out = mean;
    if (batch_var_out) *batch_var_out = var;
    tape_.push_back(
        {OpKind::batchnorm, out.id, {x.id, gamma.id, beta.id}, epsilon, std::move(xhat),
         std::move(inv_std)});
    return out;
}

TensorRef Graph::softmax_cross_entropy(TensorRef logits, const Matrix& onehot) {
    check_same_graph(logits);
    const Matrix& zv = node(logits).value;
    require_same_shape(zv, onehot, "softmax_cross_entropy");
    TensorRef labels = constant(onehot);
    TensorRef out = new_node(1, 1, node(logits).requires_grad);
    const std::size_t m = zv.rows;
    const std::size_t c = zv.cols;
    Matrix probs(m, c);
    double total = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
        double mx = zv.at(i, 0);
        for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, zv.at(i, j));
        double z = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
            const double e = std::exp(zv.at(i, j) - mx);
            probs.at(i, j) = e;
            z += e;
        }
        const double logz = std::log(z);
        for (std::size_t j = 0; j < c; ++j) {
            probs.at(i, j) /= z;
            if (onehot.at(i, j) != 0.0) {
                total += onehot.at(i, j) * (logz - (zv.at(i, j) - mx));
            }
        }
    }
    node(out).value.a[0] = total / static_cast<double>(m);
    tape_.push_back(
        {OpKind::softmax_ce, out.id, {logits.id, labels.id}, 0.0, std::move(probs), {}});
    return out;
}

TensorRef Graph::weighted_bce(TensorRef logits, const Matrix& multihot, double pos_weight) {
    check_same_graph(logits);
    if (pos_weight <= 0.0) throw ContractError("weighted_bce: pos_weight must be > 0");
    const Matrix& zv = node(logits).value;
    require_same_shape(zv, multihot, "weighted_bce");
    TensorRef labels = constant(multihot);
    TensorRef out = new_node(1, 1, node(logits).requires_grad);
    Matrix sig(zv.rows, zv.cols);
    double total = 0.0;
    for (std::size_t i = 0; i < zv.size(); ++i) {
        const double s = sigmoid_scalar(zv.a[i]);
        sig.a[i] = s;
        const double sc = std::clamp(s, kSigmoidClamp, 1.0 - kSigmoidClamp);
        const double y = multihot.a[i];
        total += -y * std::log(pos_weight * sc) - (1.0 - y) * std::log(1.0 - sc);
    }
    node(out).value.a[0] = total / static_cast<double>(zv.size());
    tape_.push_back(
        {OpKind::weighted_bce, out.id, {logits.id, labels.id}, pos_weight, std::move(sig), {}});
    return out;
}

double Graph::scalar_value(TensorRef t) const {
    check_same_graph(t);
    if (node(t).value.size() != 1) {
        throw ContractError("scalar_value: node is " + node(t).value.shape_str() + ", not 1x1");
    }
    return node(t).value.a[0];
}

void Graph::backward(TensorRef loss) {
    check_same_graph(loss);
    if (node(loss).value.size() != 1) {
        throw ContractError("backward: loss must be a 1x1 scalar, got " +
                            node(loss).value.shape_str());
    }
    node(loss).grad.a[0] = 1.0;

    const kern::Ops& k = kern::active();
    for (auto it = tape_.rbegin(); it != tape_.rend(); ++it) {
        const Record& rec = *it;
        Node& out = node(rec.out);
        if (!out.requires_grad) continue;
        const Matrix& g = out.grad;
        switch (rec.kind) {
            case OpKind::leaf: {
                require_same_shape(out.param->grad, g, "leaf gradient");
                k.axpy(1.0, g.data(), out.param->grad.data(), g.size());
                break;
            }
            case OpKind::constant:
                break;
            case OpKind::matmul: {
                Node& a = node(rec.in[0]);
                Node& b = node(rec.in[1]);
                if (a.requires_grad) {
                    Matrix bt(b.value.cols, b.value.rows);
                    kern::transpose(b.value.data(), bt.data(), b.value.rows, b.value.cols);
                    k.matmul_acc(g.data(), bt.data(), a.grad.data(), g.rows, g.cols, bt.cols);
                }
                if (b.requires_grad) {
                    Matrix at(a.value.cols, a.value.rows);
                    kern::transpose(a.value.data(), at.data(), a.value.rows, a.value.cols);
                    k.matmul_acc(at.data(), g.data(), b.grad.data(), at.rows, at.cols, g.cols);
                }
                break;
            }
            case OpKind::add: {
                Node& a = node(rec.in[0]);
                Node& b = node(rec.in[1]);
                if (a.requires_grad) k.axpy(1.0, g.data(), a.grad.data(), g.size());
                if (b.requires_grad) k.axpy(1.0, g.data(), b.grad.data(), g.size());
                break;
            }
            case OpKind::sub: {
                Node& a = node(rec.in[0]);
                Node& b = node(rec.in[1]);
                if (a.requires_grad) k.axpy(1.0, g.data(), a.grad.data(), g.size());
                if (b.requires_grad) k.axpy(-1.0, g.data(), b.grad.data(), g.size());
                break;
            }
            case OpKind::mul: {
                Node& a = node(rec.in[0]);
                Node& b = node(rec.in[1]);
                if (a.requires_grad) k.mul_acc(g.data(), b.value.data(), a.grad.data(), g.size());
                if (b.requires_grad) k.mul_acc(g.data(), a.value.data(), b.grad.data(), g.size());
                break;
            }
            case OpKind::scale: {
                Node& a = node(rec.in[0]);
                if (a.requires_grad) k.axpy(rec.c0, g.data(), a.grad.data(), g.size());
                break;
            }
            case OpKind::smul: {
                Node& s = node(rec.in[0]);
                Node& m = node(rec.in[1]);
                if (s.requires_grad) {
                    double acc = 0.0;
                    for (std::size_t i = 0; i < g.size(); ++i) {
                        acc = std::fma(g.a[i], m.value.a[i], acc);
                    }
                    s.grad.a[0] += acc;
                }
                if (m.requires_grad) {
                    k.axpy(s.value.a[0], g.data(), m.grad.data(), g.size());
                }
                break;
            }
            case OpKind::row_add: {
                Node& x = node(rec.in[0]);
                Node& r = node(rec.in[1]);
                if (x.requires_grad) k.axpy(1.0, g.data(), x.grad.data(), g.size());
                if (r.requires_grad) {
                    for (std::size_t i = 0; i < g.rows; ++i) {
                        k.axpy(1.0, g.row(i), r.grad.data(), g.cols);
                    }
                }
                break;
            }
            case OpKind::row_mul: {
                Node& x = node(rec.in[0]);
                Node& r = node(rec.in[1]);
                if (x.requires_grad) {
                    for (std::size_t i = 0; i < g.rows; ++i) {
                        k.mul_acc(g.row(i), r.value.data(), x.grad.row(i), g.cols);
                    }
                }
                if (r.requires_grad) {
                    for (std::size_t i = 0; i < g.rows; ++i) {
                        k.mul_acc(g.row(i), x.value.row(i), r.grad.data(), g.cols);
                    }
                }
                break;
            }
            case OpKind::relu: {
                Node& a = node(rec.in[0]);
                if (a.requires_grad) {
                    k.relu_grad_acc(a.value.data(), g.data(), a.grad.data(), g.size());
                }
                break;
            }
            case OpKind::sigmoid: {
                Node& a = node(rec.in[0]);
                if (a.requires_grad) {
                    for (std::size_t i = 0; i < g.size(); ++i) {
                        const double s = out.value.a[i];
                        a.grad.a[i] += g.a[i] * s * (1.0 - s);
                    }
                }
                break;
            }
            case OpKind::tanh: {
                Node& a = node(rec.in[0]);
                if (a.requires_grad) {
                    for (std::size_t i = 0; i < g.size(); ++i) {
                        const double t = out.value.a[i];
                        a.grad.a[i] += g.a[i] * (1.0 - t * t);
                    }
                }
                break;
            }
            case OpKind::sum_all: {
                Node& a = node(rec.in[0]);
                if (a.requires_grad) {
                    const double gv = g.a[0];
                    for (std::size_t i = 0; i < a.grad.size(); ++i) a.grad.a[i] += gv;
                }
                break;
            }
            case OpKind::concat_cols: {
                std::size_t off = 0;
                for (std::size_t idx : rec.in) {
                    Node& p = node(idx);
                    if (p.requires_grad) {
                        for (std::size_t i = 0; i < g.rows; ++i) {
                            k.axpy(1.0, g.row(i) + off, p.grad.row(i), p.grad.cols);
                        }
                    }
                    off += p.value.cols;
                }
                break;
            }
            case OpKind::batchnorm: {
                Node& x = node(rec.in[0]);
                Node& gamma = node(rec.in[1]);
                Node& beta = node(rec.in[2]);
                const Matrix& xhat = rec.saved0;
                const std::vector<double>& inv_std = rec.saved1;
                const std::size_t m = g.rows;
                const std::size_t d = g.cols;
                const double inv_m = 1.0 / static_cast<double>(m);
                for (std::size_t j = 0; j < d; ++j) {
                    double sum_g = 0.0, sum_gx = 0.0;
                    for (std::size_t i = 0; i < m; ++i) {
                        sum_g += g.at(i, j);
                        sum_gx += g.at(i, j) * xhat.at(i, j);
                    }
                    if (beta.requires_grad) beta.grad.a[j] += sum_g;
                    if (gamma.requires_grad) gamma.grad.a[j] += sum_gx;
                    if (x.requires_grad) {
                        const double gj = gamma.value.a[j];
                        const double mean_g = sum_g * inv_m;
                        const double mean_gx = sum_gx * inv_m;
                        for (std::size_t i = 0; i < m; ++i) {
                            x.grad.at(i, j) += gj * inv_std[j] *
                                               (g.at(i, j) - mean_g - xhat.at(i, j) * mean_gx);
                        }
                    }
                }
                break;
            }
            case OpKind::softmax_ce: {
                Node& z = node(rec.in[0]);
                const Node& y = node(rec.in[1]);
                if (z.requires_grad) {
                    const double gs = g.a[0] / static_cast<double>(z.value.rows);
                    const Matrix& probs = rec.saved0;
                    for (std::size_t i = 0; i < z.grad.size(); ++i) {
                        z.grad.a[i] += gs * (probs.a[i] - y.value.a[i]);
                    }
                }
                break;
            }
            case OpKind::weighted_bce: {
                Node& z = node(rec.in[0]);
                const Node& y = node(rec.in[1]);
                if (z.requires_grad) {
                    const double gs = g.a[0] / static_cast<double>(z.value.size());
                    const Matrix& sig = rec.saved0;
                    for (std::size_t i = 0; i < z.grad.size(); ++i) {
                        const double s = sig.a[i];
                        // beyond the clamp the loss is locally constant in s
                        if (s > kSigmoidClamp && s < 1.0 - kSigmoidClamp) {
                            z.grad.a[i] += gs * (s - y.value.a[i]);
                        }
                    }
                }
                break;
            }
        }
    }
}

double grad_check(const std::function<double()>& loss_fn, std::span<Param* const> params,
                  double step) {
    if (!(step > 0.0)) throw ContractError("grad_check: step must be > 0");
    for (Param* p : params) p->zero_grad();
    const double base = loss_fn();
    std::vector<std::vector<double>> analytic;
    analytic.reserve(params.size());
    for (Param* p : params) analytic.push_back(p->grad.a);

    const double again = loss_fn();
    if (again != base) {
        throw ContractError("grad_check: loss function is not deterministic (" +
                            std::to_string(base) + " vs " + std::to_string(again) + ")");
    }

    double max_rel = 0.0;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        Param& p = *params[pi];
        for (std::size_t i = 0; i < p.value.size(); ++i) {
            const double orig = p.value.a[i];
            p.value.a[i] = orig + step;
            const double up = loss_fn();
            p.value.a[i] = orig - step;
            const double down = loss_fn();
            p.value.a[i] = orig;
            const double numeric = (up - down) / (2.0 * step);
            const double a = analytic[pi][i];
            const double rel =
                std::abs(a - numeric) / std::max(1e-8, std::abs(a) + std::abs(numeric));
            max_rel = std::max(max_rel, rel);
        }
    }
    for (Param* p : params) p->zero_grad();
    return max_rel;
}

}  // namespace fusenet
