#include "comrl/diffcompute.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include "comrl/detail/bytes.hpp"

namespace comrl::diffcompute {

void ApproximatorSpec::validate() const {
    if (input_dim <= 0) throw std::invalid_argument("ApproximatorSpec: input_dim must be positive");
    if (layer_widths.empty()) throw std::invalid_argument("ApproximatorSpec: needs >= 1 layer");
    for (int w : layer_widths)
        if (w <= 0) throw std::invalid_argument("ApproximatorSpec: widths must be positive");
}

ParamLayout ParamLayout::for_mlp(const ApproximatorSpec& spec) {
    spec.validate();
    ParamLayout layout;
    int in = spec.input_dim;
    std::size_t offset = 0;
    for (int out : spec.layer_widths) {
        LayerSlice s;
        s.in = in;
        s.out = out;
        s.weight_offset = offset;
        offset += static_cast<std::size_t>(in) * out;
        s.bias_offset = offset;
        offset += static_cast<std::size_t>(out);
        layout.layers.push_back(s);
        in = out;
    }
    layout.total = offset;
    return layout;
}

bool ParameterVector::all_finite() const {
    for (double x : values)
        if (!std::isfinite(x)) return false;
    return true;
}

ParameterVector init_params(const ApproximatorSpec& spec, Rng& rng) {
    ParameterVector p;
    p.layout = ParamLayout::for_mlp(spec);
    p.values.assign(p.layout.total, 0.0);
    for (const auto& layer : p.layout.layers) {
        const double bound = std::sqrt(1.0 / layer.in);
        for (int i = 0; i < layer.in * layer.out; ++i)
            p.values[layer.weight_offset + i] = rng.uniform(-bound, bound);
        for (int i = 0; i < layer.out; ++i)
            p.values[layer.bias_offset + i] = rng.uniform(-bound, bound);
    }
    return p;
}

ParameterVector zero_params(const ApproximatorSpec& spec) {
    ParameterVector p;
    p.layout = ParamLayout::for_mlp(spec);
    p.values.assign(p.layout.total, 0.0);
    return p;
}

namespace {

void apply_activation(std::vector<double>& v, Activation act) {
    if (act == Activation::relu) {
        for (double& x : v) x = x > 0.0 ? x : 0.0;
    } else {
        for (double& x : v) x = std::tanh(x);
    }
}

void apply_output_transform(std::vector<double>& v, const ApproximatorSpec& spec) {
    switch (spec.output_transform) {
        case OutputTransform::identity:
            break;
        case OutputTransform::tanh_scaled:
            for (double& x : v) x = spec.output_scale * std::tanh(x);
            break;
        case OutputTransform::softmax: {
            double m = v[0];
            for (double x : v) m = std::max(m, x);
            double total = 0.0;
            for (double& x : v) {
                x = std::exp(x - m);
                total += x;
            }
            for (double& x : v) x /= total;
            break;
        }
    }
}

}  // namespace

std::vector<double> forward(const ApproximatorSpec& spec, const ParameterVector& params,
                            const std::vector<double>& input) {
    const ParamLayout layout = ParamLayout::for_mlp(spec);
    if (params.values.size() != layout.total)
        throw std::invalid_argument("forward: parameter count does not match spec");
    if (static_cast<int>(input.size()) != spec.input_dim)
        throw std::invalid_argument("forward: input width does not match first layer");
    if (!params.all_finite())
        throw std::invalid_argument("forward: non-finite parameters");

    std::vector<double> x = input;
    for (std::size_t li = 0; li < layout.layers.size(); ++li) {
        const auto& layer = layout.layers[li];
        std::vector<double> y(static_cast<std::size_t>(layer.out));
        for (int j = 0; j < layer.out; ++j) {
            double acc = params.values[layer.bias_offset + j];
            for (int k = 0; k < layer.in; ++k)
                acc += x[static_cast<std::size_t>(k)] *
                       params.values[layer.weight_offset + static_cast<std::size_t>(k) * layer.out + j];
            y[static_cast<std::size_t>(j)] = acc;
        }
        if (li + 1 < layout.layers.size()) apply_activation(y, spec.activation);
        x = std::move(y);
    }
    apply_output_transform(x, spec);
    return x;
}

// ---------------------------------------------------------------------------
// Tape

Tape::Node Tape::push(Mat value, std::function<void()> back) {
    nodes_.push_back(Rec{std::move(value), Mat{}, std::move(back)});
    return static_cast<Node>(nodes_.size() - 1);
}

Tape::Node Tape::leaf(Mat value) { return push(std::move(value), {}); }

Tape::Node Tape::leaf(const std::vector<double>& row) {
    return leaf(Mat(1, static_cast<int>(row.size()), row));
}

Tape::Node Tape::param(const ParameterVector& p) {
    return leaf(Mat(1, static_cast<int>(p.values.size()), p.values));
}

Tape::Node Tape::slice(Node flat, std::size_t offset, int rows, int cols) {
    const Mat& src = value(flat);
    const std::size_t count = static_cast<std::size_t>(rows) * cols;
    if (src.rows != 1 || offset + count > src.v.size())
        throw std::invalid_argument("Tape::slice: out of range");
    Mat out(rows, cols);
    std::copy_n(src.v.begin() + static_cast<std::ptrdiff_t>(offset), count, out.v.begin());
    Node n = push(std::move(out), {});
    rec(n).back = [this, flat, n, offset, count] {
        auto& pg = rec(flat).grad.v;
        const auto& g = rec(n).grad.v;
        for (std::size_t i = 0; i < count; ++i) pg[offset + i] += g[i];
    };
    return n;
}

Tape::Node Tape::slice_cols(Node x, int col_begin, int col_end) {
    const Mat& src = value(x);
    if (col_begin < 0 || col_end > src.cols || col_begin >= col_end)
        throw std::invalid_argument("Tape::slice_cols: bad range");
    Mat out(src.rows, col_end - col_begin);
    for (int r = 0; r < src.rows; ++r)
        for (int c = col_begin; c < col_end; ++c) out.at(r, c - col_begin) = src.at(r, c);
    Node n = push(std::move(out), {});
    rec(n).back = [this, x, n, col_begin] {
        auto& pg = rec(x).grad;
        const auto& g = rec(n).grad;
        for (int r = 0; r < g.rows; ++r)
            for (int c = 0; c < g.cols; ++c) pg.at(r, col_begin + c) += g.at(r, c);
    };
    return n;
}

Tape::Node Tape::affine(Node input, Node weight, Node bias) {
    const Mat& x = value(input);
    const Mat& w = value(weight);
    const Mat& b = value(bias);
    if (x.cols != w.rows || b.rows != 1 || b.cols != w.cols)
        throw std::invalid_argument("Tape::affine: dimension mismatch");
    Mat out(x.rows, w.cols);
    for (int r = 0; r < x.rows; ++r)
        for (int j = 0; j < w.cols; ++j) {
            double acc = b.at(0, j);
            for (int k = 0; k < x.cols; ++k) acc += x.at(r, k) * w.at(k, j);
            out.at(r, j) = acc;
        }
    Node n = push(std::move(out), {});
    rec(n).back = [this, input, weight, bias, n] {
        const Mat& g = rec(n).grad;
        const Mat& xv = rec(input).value;
        const Mat& wv = rec(weight).value;
        Mat& gx = rec(input).grad;
        Mat& gw = rec(weight).grad;
        Mat& gb = rec(bias).grad;
        for (int r = 0; r < g.rows; ++r)
            for (int j = 0; j < g.cols; ++j) {
                const double gj = g.at(r, j);
                gb.at(0, j) += gj;
                for (int k = 0; k < xv.cols; ++k) {
                    gx.at(r, k) += gj * wv.at(k, j);
                    gw.at(k, j) += gj * xv.at(r, k);
                }
            }
    };
    return n;
}

Tape::Node Tape::relu(Node x) {
    Mat out = value(x);
    for (double& v : out.v) v = v > 0.0 ? v : 0.0;
    Node n = push(std::move(out), {});
    rec(n).back = [this, x, n] {
        const Mat& g = rec(n).grad;
        const Mat& xv = rec(x).value;
        Mat& gx = rec(x).grad;
        // Subgradient at the kink is fixed to 0.
        for (std::size_t i = 0; i < g.v.size(); ++i)
            if (xv.v[i] > 0.0) gx.v[i] += g.v[i];
    };
    return n;
}

Tape::Node Tape::tanh_(Node x) {
    Mat out = value(x);
    for (double& v : out.v) v = std::tanh(v);
    Node n = push(std::move(out), {});
    rec(n).back = [this, x, n] {
        const Mat& g = rec(n).grad;
        const Mat& yv = rec(n).value;
        Mat& gx = rec(x).grad;
        for (std::size_t i = 0; i < g.v.size(); ++i)
            gx.v[i] += g.v[i] * (1.0 - yv.v[i] * yv.v[i]);
    };
    return n;
}

Tape::Node Tape::exp_(Node x) {
    Mat out = value(x);
    for (double& v : out.v) v = std::exp(v);
    Node n = push(std::move(out), {});
    rec(n).back = [this, x, n] {
        const Mat& g = rec(n).grad;
        const Mat& yv = rec(n).value;
        Mat& gx = rec(x).grad;
        for (std::size_t i = 0; i < g.v.size(); ++i) gx.v[i] += g.v[i] * yv.v[i];
    };
    return n;
}

Tape::Node Tape::log_(Node x) {
    Mat out = value(x);
    for (double& v : out.v) v = std::log(v);
    Node n = push(std::move(out), {});
    rec(n).back = [this, x, n] {
        const Mat& g = rec(n).grad;
        const Mat& xv = rec(x).value;
        Mat& gx = rec(x).grad;
        for (std::size_t i = 0; i < g.v.size(); ++i) gx.v[i] += g.v[i] / xv.v[i];
    };
    return n;
}

Tape::Node Tape::square(Node x) {
    Mat out = value(x);
    for (double& v : out.v) v = v * v;
    Node n = push(std::move(out), {});
    rec(n).back = [this, x, n] {
        const Mat& g = rec(n).grad;
        const Mat& xv = rec(x).value;
        Mat& gx = rec(x).grad;
        for (std::size_t i = 0; i < g.v.size(); ++i) gx.v[i] += 2.0 * g.v[i] * xv.v[i];
    };
    return n;
}

namespace {
void check_same_shape(const Mat& a, const Mat& b, const char* op) {
    if (a.rows != b.rows || a.cols != b.cols)
        throw std::invalid_argument(std::string(op) + ": shape mismatch");
}
}  // namespace

Tape::Node Tape::add(Node x, Node y) {
    const Mat& a = value(x);
    const Mat& b = value(y);
    check_same_shape(a, b, "Tape::add");
    Mat out = a;
    for (std::size_t i = 0; i < out.v.size(); ++i) out.v[i] += b.v[i];
    Node n = push(std::move(out), {});
    rec(n).back = [this, x, y, n] {
        const Mat& g = rec(n).grad;
        Mat& gx = rec(x).grad;
        Mat& gy = rec(y).grad;
        for (std::size_t i = 0; i < g.v.size(); ++i) {
            gx.v[i] += g.v[i];
            gy.v[i] += g.v[i];
        }
    };
    return n;
}

Tape::Node Tape::sub(Node x, Node y) {
    const Mat& a = value(x);
    const Mat& b = value(y);
    check_same_shape(a, b, "Tape::sub");
    Mat out = a;
    for (std::size_t i = 0; i < out.v.size(); ++i) out.v[i] -= b.v[i];
    Node n = push(std::move(out), {});
    rec(n).back = [this, x, y, n] {
        const Mat& g = rec(n).grad;
        Mat& gx = rec(x).grad;
        Mat& gy = rec(y).grad;
        for (std::size_t i = 0; i < g.v.size(); ++i) {
            gx.v[i] += g.v[i];
            gy.v[i] -= g.v[i];
        }
    };
    return n;
}

Tape::Node Tape::mul(Node x, Node y) {
    const Mat& a = value(x);
    const Mat& b = value(y);
    check_same_shape(a, b, "Tape::mul");
    Mat out = a;
    for (std::size_t i = 0; i < out.v.size(); ++i) out.v[i] *= b.v[i];
    Node n = push(std::move(out), {});
    rec(n).back = [this, x, y, n] {
        const Mat& g = rec(n).grad;
        const Mat& av = rec(x).value;
        const Mat& bv = rec(y).value;
        Mat& gx = rec(x).grad;
        Mat& gy = rec(y).grad;
        for (std::size_t i = 0; i < g.v.size(); ++i) {
            gx.v[i] += g.v[i] * bv.v[i];
            gy.v[i] += g.v[i] * av.v[i];
        }
    };
    return n;
}

Tape::Node Tape::div_(Node x, Node y) {
    const Mat& a = value(x);
    const Mat& b = value(y);
    check_same_shape(a, b, "Tape::div_");
    Mat out = a;
    for (std::size_t i = 0; i < out.v.size(); ++i) out.v[i] /= b.v[i];
    Node n = push(std::move(out), {});
    rec(n).back = [this, x, y, n] {
        const Mat& g = rec(n).grad;
        const Mat& av = rec(x).value;
        const Mat& bv = rec(y).value;
        Mat& gx = rec(x).grad;
        Mat& gy = rec(y).grad;
        for (std::size_t i = 0; i < g.v.size(); ++i) {
            gx.v[i] += g.v[i] / bv.v[i];
            gy.v[i] -= g.v[i] * av.v[i] / (bv.v[i] * bv.v[i]);
        }
    };
    return n;
}

Tape::Node Tape::min_(Node x, Node y) {
    const Mat& a = value(x);
    const Mat& b = value(y);
    check_same_shape(a, b, "Tape::min_");
    Mat out = a;
    for (std::size_t i = 0; i < out.v.size(); ++i) out.v[i] = std::min(a.v[i], b.v[i]);
    Node n = push(std::move(out), {});
    rec(n).back = [this, x, y, n] {
        const Mat& g = rec(n).grad;
        const Mat& av = rec(x).value;
        const Mat& bv = rec(y).value;
        Mat& gx = rec(x).grad;
        Mat& gy = rec(y).grad;
        for (std::size_t i = 0; i < g.v.size(); ++i) {
            if (av.v[i] <= bv.v[i])
                gx.v[i] += g.v[i];
            else
                gy.v[i] += g.v[i];
        }
    };
    return n;
}

Tape::Node Tape::scale(Node x, double c) {
    Mat out = value(x);
    for (double& v : out.v) v *= c;
    Node n = push(std::move(out), {});
    rec(n).back = [this, x, n, c] {
        const Mat& g = rec(n).grad;
        Mat& gx = rec(x).grad;
        for (std::size_t i = 0; i < g.v.size(); ++i) gx.v[i] += c * g.v[i];
    };
    return n;
}

Tape::Node Tape::add_scalar(Node x, double c) {
    Mat out = value(x);
    for (double& v : out.v) v += c;
    Node n = push(std::move(out), {});
    rec(n).back = [this, x, n] {
        const Mat& g = rec(n).grad;
        Mat& gx = rec(x).grad;
        for (std::size_t i = 0; i < g.v.size(); ++i) gx.v[i] += g.v[i];
    };
    return n;
}

Tape::Node Tape::concat_cols(Node x, Node y) {
    const Mat& a = value(x);
    const Mat& b = value(y);
    if (a.rows != b.rows) throw std::invalid_argument("Tape::concat_cols: row mismatch");
    Mat out(a.rows, a.cols + b.cols);
    for (int r = 0; r < a.rows; ++r) {
        for (int c = 0; c < a.cols; ++c) out.at(r, c) = a.at(r, c);
        for (int c = 0; c < b.cols; ++c) out.at(r, a.cols + c) = b.at(r, c);
    }
    Node n = push(std::move(out), {});
    const int a_cols = a.cols;
    rec(n).back = [this, x, y, n, a_cols] {
        const Mat& g = rec(n).grad;
        Mat& gx = rec(x).grad;
        Mat& gy = rec(y).grad;
        for (int r = 0; r < g.rows; ++r) {
            for (int c = 0; c < a_cols; ++c) gx.at(r, c) += g.at(r, c);
            for (int c = a_cols; c < g.cols; ++c) gy.at(r, c - a_cols) += g.at(r, c);
        }
    };
    return n;
}

Tape::Node Tape::stack_rows(const std::vector<Node>& rows) {
    if (rows.empty()) throw std::invalid_argument("Tape::stack_rows: empty");
    const int cols = value(rows.front()).cols;
    Mat out(static_cast<int>(rows.size()), cols);
    for (std::size_t r = 0; r < rows.size(); ++r) {
        const Mat& m = value(rows[r]);
        if (m.rows != 1 || m.cols != cols)
            throw std::invalid_argument("Tape::stack_rows: rows must be 1 x d");
        std::copy(m.v.begin(), m.v.end(), out.v.begin() + static_cast<std::ptrdiff_t>(r) * cols);
    }
    Node n = push(std::move(out), {});
    rec(n).back = [this, rows, n, cols] {
        const Mat& g = rec(n).grad;
        for (std::size_t r = 0; r < rows.size(); ++r) {
            Mat& gr = rec(rows[r]).grad;
            for (int c = 0; c < cols; ++c) gr.at(0, c) += g.at(static_cast<int>(r), c);
        }
    };
    return n;
}

Tape::Node Tape::row_sum(Node x) {
    const Mat& a = value(x);
    Mat out(a.rows, 1);
    for (int r = 0; r < a.rows; ++r) {
        double acc = 0.0;
        for (int c = 0; c < a.cols; ++c) acc += a.at(r, c);
        out.at(r, 0) = acc;
    }
    Node n = push(std::move(out), {});
    rec(n).back = [this, x, n] {
        const Mat& g = rec(n).grad;
        Mat& gx = rec(x).grad;
        for (int r = 0; r < gx.rows; ++r)
            for (int c = 0; c < gx.cols; ++c) gx.at(r, c) += g.at(r, 0);
    };
    return n;
}

Tape::Node Tape::sum_all(Node x) {
    const Mat& a = value(x);
    double acc = 0.0;
    for (double v : a.v) acc += v;
    Mat out(1, 1);
    out.at(0, 0) = acc;
    Node n = push(std::move(out), {});
    rec(n).back = [this, x, n] {
        const double g = rec(n).grad.at(0, 0);
        Mat& gx = rec(x).grad;
        for (double& v : gx.v) v += g;
    };
    return n;
}

Tape::Node Tape::mean_all(Node x) {
    const Mat& a = value(x);
    const double inv = 1.0 / static_cast<double>(a.v.size());
    return scale(sum_all(x), inv);
}

double sorted_tree_sum(std::vector<double> values) {
    if (values.empty()) return 0.0;
    std::stable_sort(values.begin(), values.end());
    // Pairwise tree over sorted values: permutations of the inputs and exact
    // duplicates of the whole multiset reduce to bit-identical sums.
    while (values.size() > 1) {
        std::vector<double> next;
        next.reserve((values.size() + 1) / 2);
        std::size_t i = 0;
        for (; i + 1 < values.size(); i += 2) next.push_back(values[i] + values[i + 1]);
        if (i < values.size()) next.push_back(values[i]);
        values = std::move(next);
    }
    return values.front();
}

Tape::Node Tape::mean_rows(Node x) {
    const Mat& a = value(x);
    Mat out(1, a.cols);
    std::vector<double> column(static_cast<std::size_t>(a.rows));
    for (int c = 0; c < a.cols; ++c) {
        for (int r = 0; r < a.rows; ++r) column[static_cast<std::size_t>(r)] = a.at(r, c);
        out.at(0, c) = sorted_tree_sum(column) / static_cast<double>(a.rows);
    }
    Node n = push(std::move(out), {});
    rec(n).back = [this, x, n] {
        const Mat& g = rec(n).grad;
        Mat& gx = rec(x).grad;
        const double inv = 1.0 / static_cast<double>(gx.rows);
        for (int r = 0; r < gx.rows; ++r)
            for (int c = 0; c < gx.cols; ++c) gx.at(r, c) += g.at(0, c) * inv;
    };
    return n;
}

Tape::Node Tape::softmax_rows(Node x) {
    const Mat& a = value(x);
    Mat out(a.rows, a.cols);
    for (int r = 0; r < a.rows; ++r) {
        double m = a.at(r, 0);
        for (int c = 1; c < a.cols; ++c) m = std::max(m, a.at(r, c));
        double z = 0.0;
        for (int c = 0; c < a.cols; ++c) {
            const double e = std::exp(a.at(r, c) - m);
            out.at(r, c) = e;
            z += e;
        }
        for (int c = 0; c < a.cols; ++c) out.at(r, c) /= z;
    }
    Node n = push(std::move(out), {});
    rec(n).back = [this, x, n] {
        const Mat& g = rec(n).grad;
        const Mat& y = rec(n).value;
        Mat& gx = rec(x).grad;
        for (int r = 0; r < y.rows; ++r) {
            double dot = 0.0;
            for (int c = 0; c < y.cols; ++c) dot += g.at(r, c) * y.at(r, c);
            for (int c = 0; c < y.cols; ++c)
                gx.at(r, c) += y.at(r, c) * (g.at(r, c) - dot);
        }
    };
    return n;
}

Tape::Node Tape::softmax_cross_entropy(Node logits, const std::vector<int>& labels) {
    const Mat& l = value(logits);
    if (static_cast<std::size_t>(l.rows) != labels.size())
        throw std::invalid_argument("softmax_cross_entropy: label count mismatch");
    for (int y : labels)
        if (y < 0 || y >= l.cols)
            throw std::out_of_range("softmax_cross_entropy: label out of range");

    Mat probs(l.rows, l.cols);
    double total = 0.0;
    for (int r = 0; r < l.rows; ++r) {
        double m = l.at(r, 0);
        for (int c = 1; c < l.cols; ++c) m = std::max(m, l.at(r, c));
        double z = 0.0;
        for (int c = 0; c < l.cols; ++c) {
            const double e = std::exp(l.at(r, c) - m);
            probs.at(r, c) = e;
            z += e;
        }
        for (int c = 0; c < l.cols; ++c) probs.at(r, c) /= z;
        total += (m + std::log(z)) - l.at(r, labels[static_cast<std::size_t>(r)]);
    }
    Mat out(1, 1);
    out.at(0, 0) = total / static_cast<double>(l.rows);
    Node n = push(std::move(out), {});
    rec(n).back = [this, logits, n, labels, probs = std::move(probs)] {
        const double g = rec(n).grad.at(0, 0) / static_cast<double>(probs.rows);
        Mat& gx = rec(logits).grad;
        for (int r = 0; r < probs.rows; ++r)
            for (int c = 0; c < probs.cols; ++c) {
                double p = probs.at(r, c);
                if (c == labels[static_cast<std::size_t>(r)]) p -= 1.0;
                gx.at(r, c) += g * p;
            }
    };
    return n;
}

Tape::Node Tape::mse_against(Node pred, const Mat& target) {
    const Mat& p = value(pred);
    check_same_shape(p, target, "Tape::mse_against");
    double acc = 0.0;
    for (std::size_t i = 0; i < p.v.size(); ++i) {
        const double d = p.v[i] - target.v[i];
        acc += d * d;
    }
    Mat out(1, 1);
    out.at(0, 0) = acc / static_cast<double>(p.v.size());
    Node n = push(std::move(out), {});
    rec(n).back = [this, pred, n, target] {
        const Mat& pv = rec(pred).value;
        const double g = rec(n).grad.at(0, 0) * 2.0 / static_cast<double>(pv.v.size());
        Mat& gx = rec(pred).grad;
        for (std::size_t i = 0; i < pv.v.size(); ++i)
            gx.v[i] += g * (pv.v[i] - target.v[i]);
    };
    return n;
}

double Tape::scalar(Node n) const {
    const Mat& m = value(n);
    if (m.rows != 1 || m.cols != 1) throw std::invalid_argument("Tape::scalar: node is not 1x1");
    return m.at(0, 0);
}

void Tape::backward(Node loss) {
    const Mat& l = value(loss);
    if (l.rows != 1 || l.cols != 1) throw std::invalid_argument("Tape::backward: loss must be 1x1");
    if (!std::isfinite(l.at(0, 0)))
        throw std::runtime_error("Tape::backward: non-finite loss value");
    for (auto& r : nodes_) {
        r.grad = Mat(r.value.rows, r.value.cols);
    }
    rec(loss).grad.at(0, 0) = 1.0;
    for (Node n = loss; n >= 0; --n) {
        auto& r = rec(n);
        if (r.back) r.back();
    }
}

Tape::Node mlp_forward(Tape& tape, const ApproximatorSpec& spec, Tape::Node flat_params,
                       Tape::Node input) {
    const ParamLayout layout = ParamLayout::for_mlp(spec);
    if (tape.value(flat_params).v.size() != layout.total)
        throw std::invalid_argument("mlp_forward: parameter count does not match spec");
    if (tape.value(input).cols != spec.input_dim)
        throw std::invalid_argument("mlp_forward: input width does not match first layer");

    Tape::Node x = input;
    for (std::size_t li = 0; li < layout.layers.size(); ++li) {
        const auto& layer = layout.layers[li];
        Tape::Node w = tape.slice(flat_params, layer.weight_offset, layer.in, layer.out);
        Tape::Node b = tape.slice(flat_params, layer.bias_offset, 1, layer.out);
        x = tape.affine(x, w, b);
        if (li + 1 < layout.layers.size())
            x = spec.activation == Activation::relu ? tape.relu(x) : tape.tanh_(x);
    }
    switch (spec.output_transform) {
        case OutputTransform::identity:
            break;
        case OutputTransform::tanh_scaled:
            x = tape.scale(tape.tanh_(x), spec.output_scale);
            break;
        case OutputTransform::softmax:
            x = tape.softmax_rows(x);
            break;
    }
    return x;
}

std::vector<double> grad(const TapeLoss& loss, const ParameterVector& params) {
    Tape tape;
    Tape::Node p = tape.param(params);
    Tape::Node l = loss(tape, p);
    tape.backward(l);
    return tape.grad(p).v;
}

double loss_value(const TapeLoss& loss, const ParameterVector& params) {
    Tape tape;
    Tape::Node p = tape.param(params);
    Tape::Node l = loss(tape, p);
    return tape.scalar(l);
}

double finite_diff_check(const TapeLoss& loss, const ParameterVector& params, double step) {
    if (step <= 0.0) throw std::invalid_argument("finite_diff_check: step must be positive");
    const std::vector<double> analytic = grad(loss, params);
    ParameterVector probe = params;
    double worst = 0.0;
    for (std::size_t i = 0; i < params.values.size(); ++i) {
        const double orig = probe.values[i];
        probe.values[i] = orig + step;
        const double hi = loss_value(loss, probe);
        probe.values[i] = orig - step;
        const double lo = loss_value(loss, probe);
        probe.values[i] = orig;
        const double fd = (hi - lo) / (2.0 * step);
        const double err = std::abs(analytic[i] - fd) / (std::abs(analytic[i]) + 1e-8);
        worst = std::max(worst, err);
    }
    return worst;
}

OptimizerState OptimizerState::for_params(const ParameterVector& p, double lr) {
    OptimizerState st;
    st.first_moment.assign(p.values.size(), 0.0);
    st.second_moment.assign(p.values.size(), 0.0);
    st.learning_rate = lr;
    return st;
}

void adam_step(ParameterVector& params, const std::vector<double>& gradient,
               OptimizerState& state) {
    if (gradient.size() != params.values.size() ||
        state.first_moment.size() != params.values.size())
        throw std::invalid_argument("adam_step: length mismatch");
    for (double g : gradient)
        if (!std::isfinite(g)) throw std::runtime_error("adam_step: non-finite gradient");

    state.step_count += 1;
    const double b1 = state.beta1;
    const double b2 = state.beta2;
    const double b1c = 1.0 - std::pow(b1, static_cast<double>(state.step_count));
    const double b2c = 1.0 - std::pow(b2, static_cast<double>(state.step_count));
    for (std::size_t i = 0; i < params.values.size(); ++i) {
        double& m = state.first_moment[i];
        double& v = state.second_moment[i];
        m = b1 * m + (1.0 - b1) * gradient[i];
        v = b2 * v + (1.0 - b2) * gradient[i] * gradient[i];
        const double mhat = m / b1c;
        const double vhat = v / b2c;
        params.values[i] -= state.learning_rate * mhat / (std::sqrt(vhat) + state.epsilon);
    }
}

// ---------------------------------------------------------------------------
// Checkpoint I/O

void write_checkpoint(const std::string& path, const ParameterVector& params,
                      const OptimizerState* opt_state) {
    using detail::put_f64;
    using detail::put_u64;
    std::string buf;
    put_u64(buf, params.layout.layers.size());
    for (const auto& layer : params.layout.layers) {
        put_u64(buf, static_cast<std::uint64_t>(layer.in));
        put_u64(buf, static_cast<std::uint64_t>(layer.out));
    }
    put_u64(buf, params.values.size());
    for (double x : params.values) put_f64(buf, x);
    put_u64(buf, opt_state ? 1 : 0);
    if (opt_state) {
        put_u64(buf, static_cast<std::uint64_t>(opt_state->step_count));
        put_f64(buf, opt_state->learning_rate);
        put_f64(buf, opt_state->beta1);
        put_f64(buf, opt_state->beta2);
        put_f64(buf, opt_state->epsilon);
        for (double x : opt_state->first_moment) put_f64(buf, x);
        for (double x : opt_state->second_moment) put_f64(buf, x);
    }
    std::ofstream file(path, std::ios::binary | std::ios::trunc);
    if (!file) throw std::runtime_error("write_checkpoint: cannot open " + path);
    file.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!file) throw std::runtime_error("write_checkpoint: short write to " + path);
}

Checkpoint read_checkpoint(const std::string& path) {
    using detail::get_f64;
    using detail::get_u64;
    std::ifstream file(path, std::ios::binary);
    if (!file) throw std::runtime_error("read_checkpoint: cannot open " + path);
    std::string buf((std::istreambuf_iterator<char>(file)), std::istreambuf_iterator<char>());
    const char* p = buf.data();
    const char* end = buf.data() + buf.size();
    auto need = [&](std::size_t n) {
        if (p + n > end) throw std::runtime_error("read_checkpoint: truncated " + path);
    };

    Checkpoint ck;
    need(8);
    const std::uint64_t n_layers = get_u64(p); p += 8;
    std::size_t offset = 0;
    for (std::uint64_t i = 0; i < n_layers; ++i) {
        need(16);
        LayerSlice s;
        s.in = static_cast<int>(get_u64(p)); p += 8;
        s.out = static_cast<int>(get_u64(p)); p += 8;
        s.weight_offset = offset;
        offset += static_cast<std::size_t>(s.in) * s.out;
        s.bias_offset = offset;
        offset += static_cast<std::size_t>(s.out);
        ck.params.layout.layers.push_back(s);
    }
    ck.params.layout.total = offset;
    need(8);
    const std::uint64_t count = get_u64(p); p += 8;
    if (count != offset) throw std::runtime_error("read_checkpoint: layout/value mismatch");
    need(count * 8);
    ck.params.values.resize(count);
    for (auto& x : ck.params.values) { x = get_f64(p); p += 8; }
    need(8);
    const std::uint64_t has_opt = get_u64(p); p += 8;
    if (has_opt) {
        need(8 * 5 + count * 16);
        ck.has_opt_state = true;
        ck.opt_state.step_count = static_cast<long>(get_u64(p)); p += 8;
        ck.opt_state.learning_rate = get_f64(p); p += 8;
        ck.opt_state.beta1 = get_f64(p); p += 8;
        ck.opt_state.beta2 = get_f64(p); p += 8;
        ck.opt_state.epsilon = get_f64(p); p += 8;
        ck.opt_state.first_moment.resize(count);
        for (auto& x : ck.opt_state.first_moment) { x = get_f64(p); p += 8; }
        ck.opt_state.second_moment.resize(count);
        for (auto& x : ck.opt_state.second_moment) { x = get_f64(p); p += 8; }
    }
    return ck;
}

}  // namespace comrl::diffcompute
