#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <utility>
#include <vector>

#include "skiplab/rng.hpp"
#include "skiplab/tensor.hpp"

namespace skiplab {

// Handle to a node on a Tape. Only valid for the tape that created it.
struct Var {
    int id = -1;
    bool valid() const { return id >= 0; }
};

// Define-by-run reverse-mode tape. A fresh tape is built per forward pass;
// node creation order is a topological order, so backward() is a single
// reverse sweep with additive gradient accumulation.
//
// stop_gradient() creates a node with no parents: the forward value is a
// bitwise copy and no gradient ever crosses the edge.
class Tape {
public:
    Var leaf(Tensor value) {
        bool rg = value.requires_grad;
        return push(std::move(value), rg, {});
    }

    Var constant(Tensor value) {
        value.requires_grad = false;
        return push(std::move(value), false, {});
    }

    Var constant(double v) { return constant(Tensor::scalar(v)); }

    const Tensor& value(Var v) const { return nodes_[check(v)].value; }

    size_t size() const { return nodes_.size(); }

    // ---- ops ----

    Var stop_gradient(Var x) {
        Tensor copy = value(x); // forward identity, bitwise
        copy.requires_grad = false;
        return push(std::move(copy), false, {});
    }

    Var add(Var a, Var b) { return binary_broadcast(a, b, /*is_mul=*/false); }
    Var mul(Var a, Var b) { return binary_broadcast(a, b, /*is_mul=*/true); }

    Var scale(Var x, double c) {
        const Tensor& xv = value(x);
        Tensor out = xv;
        for (auto& v : out.data) v *= c;
        Var r = push(std::move(out), nodes_[x.id].requires_grad, {x.id});
        set_back(r, [x, c](Tape& t, const Tensor& g) {
            t.accum_scaled(x, g, c);
        });
        return r;
    }

    Var matmul(Var a, Var b) {
        const Tensor& av = value(a);
        const Tensor& bv = value(b);
        if (av.rank() != 2 || bv.rank() != 2 || av.cols() != bv.rows())
            throw config_error("matmul: shape mismatch " + av.shape_str() + " x " + bv.shape_str());
        int m = av.rows(), k = av.cols(), n = bv.cols();
        Tensor out({m, n});
        for (int i = 0; i < m; ++i)
            for (int p = 0; p < k; ++p) {
                double aip = av.at(i, p);
                if (aip == 0.0) continue;
                for (int j = 0; j < n; ++j) out.at(i, j) += aip * bv.at(p, j);
            }
        Var r = push(std::move(out), any_grad({a, b}), {a.id, b.id});
        set_back(r, [a, b, m, k, n](Tape& t, const Tensor& g) {
            const Tensor& av2 = t.value(a);
            const Tensor& bv2 = t.value(b);
            if (t.wants_grad(a)) {
                Tensor ga({m, k});
                for (int i = 0; i < m; ++i)
                    for (int j = 0; j < n; ++j) {
                        double gij = g.at(i, j);
                        if (gij == 0.0) continue;
                        for (int p = 0; p < k; ++p) ga.at(i, p) += gij * bv2.at(p, j);
                    }
                t.accum(a, ga);
            }
            if (t.wants_grad(b)) {
                Tensor gb({k, n});
                for (int i = 0; i < m; ++i)
                    for (int p = 0; p < k; ++p) {
                        double aip = av2.at(i, p);
                        if (aip == 0.0) continue;
                        for (int j = 0; j < n; ++j) gb.at(p, j) += aip * g.at(i, j);
                    }
                t.accum(b, gb);
            }
        });
        return r;
    }

    Var transpose(Var x) {
        const Tensor& xv = value(x);
        if (xv.rank() != 2) throw config_error("transpose: rank-2 required");
        int m = xv.rows(), n = xv.cols();
        Tensor out({n, m});
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j) out.at(j, i) = xv.at(i, j);
        Var r = push(std::move(out), nodes_[x.id].requires_grad, {x.id});
        set_back(r, [x, m, n](Tape& t, const Tensor& g) {
            Tensor gx({m, n});
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < n; ++j) gx.at(i, j) = g.at(j, i);
            t.accum(x, gx);
        });
        return r;
    }

    // Channel (last-axis) slice: columns [c0, c0+len).
    Var slice_channels(Var x, int c0, int len) {
        const Tensor& xv = value(x);
        if (c0 < 0 || len <= 0 || c0 + len > xv.cols())
            throw config_error("slice_channels: range out of bounds");
        int rows = xv.rows(), cols = xv.cols();
        Tensor out(xv.rank() == 1 ? std::vector<int>{len} : std::vector<int>{rows, len});
        for (int i = 0; i < rows; ++i)
            for (int j = 0; j < len; ++j)
                out.data[static_cast<size_t>(i) * len + j] = xv.at(i, c0 + j);
        Var r = push(std::move(out), nodes_[x.id].requires_grad, {x.id});
        set_back(r, [x, c0, len, rows, cols](Tape& t, const Tensor& g) {
            Tensor gx(t.value(x).shape);
            for (int i = 0; i < rows; ++i)
                for (int j = 0; j < len; ++j)
                    gx.data[static_cast<size_t>(i) * cols + c0 + j] = g.data[static_cast<size_t>(i) * len + j];
            t.accum(x, gx);
        });
        return r;
    }

    // Concatenate along the channel (last) axis. Rank-1 inputs concat to a
    // longer rank-1 vector; rank-2 inputs must share the row count.
    Var concat_channels(const std::vector<Var>& parts) {
        if (parts.empty()) throw config_error("concat_channels: no inputs");
        int rows = value(parts[0]).rows();
        int rank = value(parts[0]).rank();
        int total = 0;
        for (Var p : parts) {
            const Tensor& t = value(p);
            if (t.rank() != rank || t.rows() != rows)
                throw config_error("concat_channels: incompatible shapes");
            total += t.cols();
        }
        Tensor out(rank == 1 ? std::vector<int>{total} : std::vector<int>{rows, total});
        std::vector<int> offsets(parts.size());
        {
            int off = 0;
            for (size_t k = 0; k < parts.size(); ++k) {
                const Tensor& t = value(parts[k]);
                offsets[k] = off;
                for (int i = 0; i < rows; ++i)
                    for (int j = 0; j < t.cols(); ++j)
                        out.data[static_cast<size_t>(i) * total + off + j] = t.at(i, j);
                off += t.cols();
            }
        }
        std::vector<int> pids;
        bool rg = false;
        for (Var p : parts) {
            pids.push_back(p.id);
            rg = rg || nodes_[p.id].requires_grad;
        }
        Var r = push(std::move(out), rg, pids);
        std::vector<Var> parts_copy = parts;
        set_back(r, [parts_copy, offsets, rows, total](Tape& t, const Tensor& g) {
            for (size_t k = 0; k < parts_copy.size(); ++k) {
                Var p = parts_copy[k];
                if (!t.wants_grad(p)) continue;
                const Tensor& pv = t.value(p);
                Tensor gp(pv.shape);
                for (int i = 0; i < rows; ++i)
                    for (int j = 0; j < pv.cols(); ++j)
                        gp.data[static_cast<size_t>(i) * pv.cols() + j] =
                            g.data[static_cast<size_t>(i) * total + offsets[k] + j];
                t.accum(p, gp);
            }
        });
        return r;
    }

    // Stack two rank-2 tensors with equal column counts.
    Var concat_rows(Var a, Var b) {
        const Tensor& av = value(a);
        const Tensor& bv = value(b);
        if (av.rank() != 2 || bv.rank() != 2 || av.cols() != bv.cols())
            throw config_error("concat_rows: incompatible shapes");
        int ra = av.rows(), rb = bv.rows(), c = av.cols();
        Tensor out({ra + rb, c});
        std::copy(av.data.begin(), av.data.end(), out.data.begin());
        std::copy(bv.data.begin(), bv.data.end(), out.data.begin() + av.numel());
        Var r = push(std::move(out), any_grad({a, b}), {a.id, b.id});
        set_back(r, [a, b, ra, rb, c](Tape& t, const Tensor& g) {
            if (t.wants_grad(a)) {
                Tensor ga({ra, c});
                std::copy(g.data.begin(), g.data.begin() + ga.numel(), ga.data.begin());
                t.accum(a, ga);
            }
            if (t.wants_grad(b)) {
                Tensor gb({rb, c});
                std::copy(g.data.begin() + static_cast<long>(ra) * c, g.data.end(), gb.data.begin());
                t.accum(b, gb);
            }
        });
        return r;
    }

    // Rows [r0, r0+len) of a rank-2 tensor.
    Var slice_rows(Var x, int r0, int len) {
        const Tensor& xv = value(x);
        if (xv.rank() != 2 || r0 < 0 || len <= 0 || r0 + len > xv.rows())
            throw config_error("slice_rows: range out of bounds");
        int c = xv.cols();
        Tensor out({len, c});
        std::copy(xv.data.begin() + static_cast<long>(r0) * c,
                  xv.data.begin() + static_cast<long>(r0 + len) * c, out.data.begin());
        Var r = push(std::move(out), nodes_[x.id].requires_grad, {x.id});
        set_back(r, [x, r0, len, c](Tape& t, const Tensor& g) {
            Tensor gx(t.value(x).shape);
            std::copy(g.data.begin(), g.data.end(), gx.data.begin() + static_cast<long>(r0) * c);
            t.accum(x, gx);
        });
        return r;
    }

    // Exact (erf-based) gelu.
    Var gelu(Var x) {
        const Tensor& xv = value(x);
        Tensor out(xv.shape);
        for (size_t i = 0; i < xv.numel(); ++i) {
            double v = xv.data[i];
            out.data[i] = 0.5 * v * (1.0 + std::erf(v * M_SQRT1_2));
        }
        Var r = push(std::move(out), nodes_[x.id].requires_grad, {x.id});
        set_back(r, [x](Tape& t, const Tensor& g) {
            const Tensor& xv2 = t.value(x);
            Tensor gx(xv2.shape);
            for (size_t i = 0; i < xv2.numel(); ++i) {
                double v = xv2.data[i];
                double phi = std::exp(-0.5 * v * v) * 0.3989422804014326779399461;
                double Phi = 0.5 * (1.0 + std::erf(v * M_SQRT1_2));
                gx.data[i] = g.data[i] * (Phi + v * phi);
            }
            t.accum(x, gx);
        });
        return r;
    }

    Var sigmoid(Var x) {
        const Tensor& xv = value(x);
        Tensor out(xv.shape);
        for (size_t i = 0; i < xv.numel(); ++i) out.data[i] = 1.0 / (1.0 + std::exp(-xv.data[i]));
        Var r = push(std::move(out), nodes_[x.id].requires_grad, {x.id});
        int rid = r.id;
        set_back(r, [x, rid](Tape& t, const Tensor& g) {
            const Tensor& s = t.nodes_[rid].value;
            Tensor gx(s.shape);
            for (size_t i = 0; i < s.numel(); ++i) gx.data[i] = g.data[i] * s.data[i] * (1.0 - s.data[i]);
            t.accum(x, gx);
        });
        return r;
    }

    // Softmax over the last axis (each row independently).
    Var softmax(Var x) {
        const Tensor& xv = value(x);
        int rows = xv.rows(), cols = xv.cols();
        Tensor out(xv.shape);
        for (int i = 0; i < rows; ++i) {
            double mx = xv.data[static_cast<size_t>(i) * cols];
            for (int j = 1; j < cols; ++j) mx = std::max(mx, xv.data[static_cast<size_t>(i) * cols + j]);
            double z = 0.0;
            for (int j = 0; j < cols; ++j) {
                double e = std::exp(xv.data[static_cast<size_t>(i) * cols + j] - mx);
                out.data[static_cast<size_t>(i) * cols + j] = e;
                z += e;
            }
            for (int j = 0; j < cols; ++j) out.data[static_cast<size_t>(i) * cols + j] /= z;
        }
        Var r = push(std::move(out), nodes_[x.id].requires_grad, {x.id});
        int rid = r.id;
        set_back(r, [x, rid, rows, cols](Tape& t, const Tensor& g) {
            const Tensor& s = t.nodes_[rid].value;
            Tensor gx(s.shape);
            for (int i = 0; i < rows; ++i) {
                double gs = 0.0;
                for (int j = 0; j < cols; ++j)
                    gs += g.data[static_cast<size_t>(i) * cols + j] * s.data[static_cast<size_t>(i) * cols + j];
                for (int j = 0; j < cols; ++j) {
                    size_t k = static_cast<size_t>(i) * cols + j;
                    gx.data[k] = s.data[k] * (g.data[k] - gs);
                }
            }
            t.accum(x, gx);
        });
        return r;
    }

    // Layer norm over the last axis, no affine parameters.
    Var layer_norm(Var x, double eps = 1e-5) {
        const Tensor& xv = value(x);
        int rows = xv.rows(), cols = xv.cols();
        Tensor out(xv.shape);
        std::vector<double> inv_std(rows);
        for (int i = 0; i < rows; ++i) {
            double mu = 0.0;
            for (int j = 0; j < cols; ++j) mu += xv.data[static_cast<size_t>(i) * cols + j];
            mu /= cols;
            double var = 0.0;
            for (int j = 0; j < cols; ++j) {
                double d = xv.data[static_cast<size_t>(i) * cols + j] - mu;
                var += d * d;
            }
            var /= cols;
            double is = 1.0 / std::sqrt(var + eps);
            inv_std[i] = is;
            for (int j = 0; j < cols; ++j)
                out.data[static_cast<size_t>(i) * cols + j] = (xv.data[static_cast<size_t>(i) * cols + j] - mu) * is;
        }
        Var r = push(std::move(out), nodes_[x.id].requires_grad, {x.id});
        int rid = r.id;
        set_back(r, [x, rid, rows, cols, inv_std](Tape& t, const Tensor& g) {
            const Tensor& y = t.nodes_[rid].value;
            Tensor gx(y.shape);
            for (int i = 0; i < rows; ++i) {
                double gmean = 0.0, gymean = 0.0;
                for (int j = 0; j < cols; ++j) {
                    size_t k = static_cast<size_t>(i) * cols + j;
                    gmean += g.data[k];
                    gymean += g.data[k] * y.data[k];
                }
                gmean /= cols;
                gymean /= cols;
                for (int j = 0; j < cols; ++j) {
                    size_t k = static_cast<size_t>(i) * cols + j;
                    gx.data[k] = inv_std[i] * (g.data[k] - gmean - y.data[k] * gymean);
                }
            }
            t.accum(x, gx);
        });
        return r;
    }

    // Inverted dropout; the sampled mask is a constant in backward.
    Var dropout(Var x, double p, Rng& rng) {
        if (p < 0.0 || p >= 1.0) throw config_error("dropout: p must be in [0,1)");
        const Tensor& xv = value(x);
        double keep = 1.0 - p;
        std::vector<double> mask(xv.numel());
        for (auto& m : mask) m = (rng.uniform() < keep) ? 1.0 / keep : 0.0;
        Tensor out(xv.shape);
        for (size_t i = 0; i < xv.numel(); ++i) out.data[i] = xv.data[i] * mask[i];
        Var r = push(std::move(out), nodes_[x.id].requires_grad, {x.id});
        set_back(r, [x, mask](Tape& t, const Tensor& g) {
            Tensor gx(t.value(x).shape);
            for (size_t i = 0; i < gx.numel(); ++i) gx.data[i] = g.data[i] * mask[i];
            t.accum(x, gx);
        });
        return r;
    }

    // Mean squared error over all elements; scalar output.
    Var mse_loss(Var pred, Var target) {
        const Tensor& pv = value(pred);
        const Tensor& tv = value(target);
        if (!pv.same_shape(tv)) throw config_error("mse_loss: shape mismatch");
        double s = 0.0;
        for (size_t i = 0; i < pv.numel(); ++i) {
            double d = pv.data[i] - tv.data[i];
            s += d * d;
        }
        double n = static_cast<double>(pv.numel());
        Var r = push(Tensor::scalar(s / n), any_grad({pred, target}), {pred.id, target.id});
        set_back(r, [pred, target, n](Tape& t, const Tensor& g) {
            const Tensor& pv2 = t.value(pred);
            const Tensor& tv2 = t.value(target);
            double c = 2.0 * g.data[0] / n;
            if (t.wants_grad(pred)) {
                Tensor gp(pv2.shape);
                for (size_t i = 0; i < pv2.numel(); ++i) gp.data[i] = c * (pv2.data[i] - tv2.data[i]);
                t.accum(pred, gp);
            }
            if (t.wants_grad(target)) {
                Tensor gt(tv2.shape);
                for (size_t i = 0; i < tv2.numel(); ++i) gt.data[i] = -c * (pv2.data[i] - tv2.data[i]);
                t.accum(target, gt);
            }
        });
        return r;
    }

    // Mean over rows of -log softmax(logits)[label]; scalar output.
    Var cross_entropy(Var logits, const std::vector<int>& labels) {
        const Tensor& lv = value(logits);
        if (lv.rank() != 2 || static_cast<int>(labels.size()) != lv.rows())
            throw config_error("cross_entropy: logits (N,C) with N labels required");
        int rows = lv.rows(), cols = lv.cols();
        Tensor probs({rows, cols});
        double loss = 0.0;
        for (int i = 0; i < rows; ++i) {
            if (labels[i] < 0 || labels[i] >= cols) throw config_error("cross_entropy: label out of range");
            double mx = lv.at(i, 0);
            for (int j = 1; j < cols; ++j) mx = std::max(mx, lv.at(i, j));
            double z = 0.0;
            for (int j = 0; j < cols; ++j) {
                double e = std::exp(lv.at(i, j) - mx);
                probs.at(i, j) = e;
                z += e;
            }
            for (int j = 0; j < cols; ++j) probs.at(i, j) /= z;
            loss -= std::log(std::max(probs.at(i, labels[i]), 1e-300));
        }
        loss /= rows;
        Var r = push(Tensor::scalar(loss), nodes_[logits.id].requires_grad, {logits.id});
        set_back(r, [logits, labels, probs, rows, cols](Tape& t, const Tensor& g) {
            double c = g.data[0] / rows;
            Tensor gx({rows, cols});
            for (int i = 0; i < rows; ++i)
                for (int j = 0; j < cols; ++j)
                    gx.at(i, j) = c * (probs.at(i, j) - (j == labels[i] ? 1.0 : 0.0));
            t.accum(logits, gx);
        });
        return r;
    }

    // Gather rows of an embedding table; backward scatter-adds.
    Var embed_lookup(Var table, const std::vector<int>& ids) {
        const Tensor& tv = value(table);
        if (tv.rank() != 2) throw config_error("embed_lookup: table must be rank-2");
        int vocab = tv.rows(), dim = tv.cols();
        int n = static_cast<int>(ids.size());
        if (n == 0) throw config_error("embed_lookup: empty id list");
        Tensor out({n, dim});
        for (int i = 0; i < n; ++i) {
            if (ids[i] < 0 || ids[i] >= vocab) throw config_error("embed_lookup: id out of range");
            for (int j = 0; j < dim; ++j) out.at(i, j) = tv.at(ids[i], j);
        }
        Var r = push(std::move(out), nodes_[table.id].requires_grad, {table.id});
        set_back(r, [table, ids, dim](Tape& t, const Tensor& g) {
            Tensor gt(t.value(table).shape);
            for (size_t i = 0; i < ids.size(); ++i)
                for (int j = 0; j < dim; ++j) gt.at(ids[i], j) += g.at(static_cast<int>(i), j);
            t.accum(table, gt);
        });
        return r;
    }

    // Sum of all elements; scalar output.
    Var sum(Var x) {
        const Tensor& xv = value(x);
        double s = 0.0;
        for (double v : xv.data) s += v;
        Var r = push(Tensor::scalar(s), nodes_[x.id].requires_grad, {x.id});
        set_back(r, [x](Tape& t, const Tensor& g) {
            t.accum(x, Tensor::full(t.value(x).shape, g.data[0]));
        });
        return r;
    }

    // ---- backward ----

    // Runs the reverse sweep from a scalar loss; each node fires once.
    // A second call without a fresh tape is an error by contract.
    void backward(Var loss) {
        check(loss);
        if (ran_backward_) throw config_error("backward: tape already consumed (rebuild the tape)");
        const Tensor& lv = nodes_[loss.id].value;
        if (!lv.is_scalar()) throw config_error("backward: loss must be scalar, got " + lv.shape_str());
        if (!std::isfinite(lv.data[0])) throw numeric_error("backward: non-finite loss");
        ran_backward_ = true;
        grads_.assign(nodes_.size(), Tensor());
        grads_[loss.id] = Tensor::scalar(1.0);
        for (int i = loss.id; i >= 0; --i) {
            if (grads_[i].numel() == 0 || !nodes_[i].backprop) continue;
            if (!nodes_[i].requires_grad) continue;
            if (!grads_[i].all_finite()) throw numeric_error("backward: non-finite gradient at node " + std::to_string(i));
            nodes_[i].backprop(*this, grads_[i]);
        }
    }

    // Gradient of a node after backward(); zeros if it received none.
    Tensor grad(Var v) const {
        check(v);
        if (!ran_backward_) throw config_error("grad: backward() has not run");
        if (static_cast<size_t>(v.id) < grads_.size() && grads_[v.id].numel() > 0) return grads_[v.id];
        return Tensor::zeros(nodes_[v.id].value.shape);
    }

    bool wants_grad(Var v) const { return nodes_[check(v)].requires_grad; }

    void accum(Var v, const Tensor& g) { accum_scaled(v, g, 1.0); }

    void accum_scaled(Var v, const Tensor& g, double c) {
        if (!nodes_[v.id].requires_grad) return;
        Tensor& slot = grads_[v.id];
        if (slot.numel() == 0) slot = Tensor::zeros(nodes_[v.id].value.shape);
        for (size_t i = 0; i < slot.numel(); ++i) slot.data[i] += c * g.data[i];
    }

private:
    struct Node {
        Tensor value;
        bool requires_grad = false;
        std::function<void(Tape&, const Tensor&)> backprop;
    };

    std::vector<Node> nodes_;
    std::vector<Tensor> grads_;
    bool ran_backward_ = false;

    int check(Var v) const {
        if (v.id < 0 || static_cast<size_t>(v.id) >= nodes_.size())
            throw config_error("tape: invalid var handle");
        return v.id;
    }

    bool any_grad(std::initializer_list<Var> vs) const {
        for (Var v : vs)
            if (nodes_[v.id].requires_grad) return true;
        return false;
    }

    Var push(Tensor value, bool requires_grad, const std::vector<int>& parents) {
        for (int p : parents)
            if (p < 0 || p >= static_cast<int>(nodes_.size()))
                throw config_error("tape: op input created after output (cycle)");
        if (!value.all_finite()) throw numeric_error("forward: non-finite value " + value.shape_str());
        Node n;
        n.value = std::move(value);
        n.requires_grad = requires_grad;
        nodes_.push_back(std::move(n));
        return Var{static_cast<int>(nodes_.size()) - 1};
    }

    void set_back(Var v, std::function<void(Tape&, const Tensor&)> fn) {
        if (nodes_[v.id].requires_grad) nodes_[v.id].backprop = std::move(fn);
    }

    // add/mul with limited broadcasting: same shape, scalar on either side,
    // or rank-2 (+|*) rank-1 row vector matching the column count.
    Var binary_broadcast(Var a, Var b, bool is_mul) {
        const Tensor* av = &value(a);
        const Tensor* bv = &value(b);
        Var big = a, small = b;
        if (!av->same_shape(*bv)) {
            if (av->numel() < bv->numel()) {
                std::swap(big, small);
                std::swap(av, bv);
            }
            bool scalar_ok = bv->is_scalar();
            bool row_ok = av->rank() == 2 && bv->rank() == 1 && bv->cols() == av->cols();
            if (!scalar_ok && !row_ok)
                throw config_error(std::string(is_mul ? "mul" : "add") + ": incompatible shapes " +
                                   av->shape_str() + " vs " + bv->shape_str());
        }
        const Tensor& bigv = *av;
        const Tensor& smallv = *bv;
        size_t bn = bigv.numel(), sn = smallv.numel();
        Tensor out(bigv.shape);
        if (is_mul) {
            for (size_t i = 0; i < bn; ++i) out.data[i] = bigv.data[i] * smallv.data[i % sn];
        } else {
            for (size_t i = 0; i < bn; ++i) out.data[i] = bigv.data[i] + smallv.data[i % sn];
        }
        Var r = push(std::move(out), any_grad({a, b}), {a.id, b.id});
        Var bigc = big, smallc = small;
        set_back(r, [bigc, smallc, is_mul](Tape& t, const Tensor& g) {
            const Tensor& bv2 = t.value(bigc);
            const Tensor& sv2 = t.value(smallc);
            size_t bn2 = bv2.numel(), sn2 = sv2.numel();
            if (t.wants_grad(bigc)) {
                if (is_mul) {
                    Tensor gb(bv2.shape);
                    for (size_t i = 0; i < bn2; ++i) gb.data[i] = g.data[i] * sv2.data[i % sn2];
                    t.accum(bigc, gb);
                } else {
                    t.accum(bigc, g);
                }
            }
            if (t.wants_grad(smallc)) {
                Tensor gs(sv2.shape);
                if (is_mul) {
                    for (size_t i = 0; i < bn2; ++i) gs.data[i % sn2] += g.data[i] * bv2.data[i];
                } else {
                    for (size_t i = 0; i < bn2; ++i) gs.data[i % sn2] += g.data[i];
                }
                t.accum(smallc, gs);
            }
        });
        return r;
    }
};

// Named trainable parameter owned by a model; bound onto a fresh tape each
// forward pass, gradients pulled back out after backward().
struct Param {
    std::string name;
    Tensor value;
    Tensor grad;

    Param() = default;
    Param(std::string n, Tensor v) : name(std::move(n)), value(std::move(v)) {
        value.requires_grad = true;
        grad = Tensor::zeros(value.shape);
    }

    void zero_grad() { grad = Tensor::zeros(value.shape); }
};

// Records which tape node each Param was bound to, so gradients can be
// routed back after the reverse sweep.
class ParamBind {
public:
    Var bind(Tape& tape, Param& p) {
        Var v = tape.leaf(p.value);
        bound_.emplace_back(&p, v);
        return v;
    }

    // Accumulates tape gradients into Param::grad (additive).
    void pull_grads(const Tape& tape) const {
        for (auto& [p, v] : bound_) {
            Tensor g = tape.grad(v);
            for (size_t i = 0; i < g.numel(); ++i) p->grad.data[i] += g.data[i];
        }
    }

    const std::vector<std::pair<Param*, Var>>& entries() const { return bound_; }

private:
    std::vector<std::pair<Param*, Var>> bound_;
};

} // namespace skiplab
