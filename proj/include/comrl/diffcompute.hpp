#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "comrl/rng.hpp"

namespace comrl::diffcompute {

enum class Activation { relu, tanh_act };
enum class OutputTransform { identity, tanh_scaled, softmax };

// Feed-forward approximator description. layer_widths are the successive
// layer output widths; the last entry is the output dimension. The activation
// sits between layers, the output transform on the final layer only.
struct ApproximatorSpec {
    int input_dim = 0;
    std::vector<int> layer_widths;
    Activation activation = Activation::relu;
    OutputTransform output_transform = OutputTransform::identity;
    double output_scale = 1.0;  // used by tanh_scaled

    int output_dim() const { return layer_widths.empty() ? 0 : layer_widths.back(); }
    void validate() const;
};

struct LayerSlice {
    std::size_t weight_offset = 0;
    std::size_t bias_offset = 0;
    int in = 0;
    int out = 0;
};

// Binds slices of a flat parameter vector to MLP layers.
struct ParamLayout {
    std::vector<LayerSlice> layers;
    std::size_t total = 0;

    static ParamLayout for_mlp(const ApproximatorSpec& spec);
    bool operator==(const ParamLayout&) const = default;
};

// Flat parameter storage plus the layout interpreting it.
struct ParameterVector {
    std::vector<double> values;
    ParamLayout layout;

    std::size_t size() const { return values.size(); }
    bool all_finite() const;
};

// Fan-in scaled uniform initialization.
ParameterVector init_params(const ApproximatorSpec& spec, Rng& rng);

ParameterVector zero_params(const ApproximatorSpec& spec);

// Deterministic feed-forward evaluation of one input vector.
// Throws on dimension mismatch or non-finite parameters.
std::vector<double> forward(const ApproximatorSpec& spec, const ParameterVector& params,
                            const std::vector<double>& input);

// Row-major dense matrix; the only tensor shape the tape knows.
struct Mat {
    int rows = 0;
    int cols = 0;
    std::vector<double> v;

    Mat() = default;
    Mat(int r, int c) : rows(r), cols(c), v(static_cast<std::size_t>(r) * c, 0.0) {}
    Mat(int r, int c, std::vector<double> data) : rows(r), cols(c), v(std::move(data)) {}

    double& at(int r, int c) { return v[static_cast<std::size_t>(r) * cols + c]; }
    double at(int r, int c) const { return v[static_cast<std::size_t>(r) * cols + c]; }
    std::size_t size() const { return v.size(); }
};

// Reverse-mode tape over matrix-valued nodes. Nodes are appended in forward
// order; backward() walks them in reverse. Purpose-built for the feed-forward
// losses in this project, not a general graph engine.
class Tape {
public:
    using Node = int;

    Node leaf(Mat value);
    Node leaf(const std::vector<double>& row);                 // 1 x n
    Node param(const ParameterVector& p);                      // 1 x n flat leaf

    // Reads rows*cols values starting at offset from a 1 x n flat leaf.
    Node slice(Node flat, std::size_t offset, int rows, int cols);
    Node slice_cols(Node x, int col_begin, int col_end);

    Node affine(Node input, Node weight, Node bias);           // x*W + b, bias broadcast
    Node relu(Node x);
    Node tanh_(Node x);
    Node exp_(Node x);
    Node log_(Node x);
    Node square(Node x);
    Node add(Node x, Node y);
    Node sub(Node x, Node y);
    Node mul(Node x, Node y);                                  // elementwise
    Node div_(Node x, Node y);                                 // elementwise
    Node min_(Node x, Node y);                                 // elementwise, ties pick x
    Node scale(Node x, double c);
    Node add_scalar(Node x, double c);
    Node concat_cols(Node x, Node y);
    Node stack_rows(const std::vector<Node>& rows);            // each 1 x d
    Node row_sum(Node x);                                      // B x d -> B x 1
    Node sum_all(Node x);                                      // -> 1 x 1
    Node mean_all(Node x);                                     // -> 1 x 1
    // Column-wise mean over rows with a canonical (sorted, pairwise-tree)
    // summation order, making the result independent of row order.
    Node mean_rows(Node x);                                    // B x d -> 1 x d

    Node softmax_rows(Node x);                                 // row-wise softmax
    // Mean cross-entropy of row-wise softmax(logits) against integer labels.
    Node softmax_cross_entropy(Node logits, const std::vector<int>& labels);
    // Mean over all elements of (pred - target)^2 against a constant target.
    Node mse_against(Node pred, const Mat& target);

    const Mat& value(Node n) const { return nodes_[static_cast<std::size_t>(n)].value; }
    const Mat& grad(Node n) const { return nodes_[static_cast<std::size_t>(n)].grad; }
    double scalar(Node n) const;

    // Seeds d(loss)/d(loss) = 1 and accumulates gradients into every node.
    // The node must be 1 x 1. Throws if the loss value is not finite.
    void backward(Node loss);

private:
    struct Rec {
        Mat value;
        Mat grad;
        std::function<void()> back;  // empty for leaves
    };

    Node push(Mat value, std::function<void()> back);
    Rec& rec(Node n) { return nodes_[static_cast<std::size_t>(n)]; }

    std::vector<Rec> nodes_;
};

// Builds the full MLP graph for a batch of inputs (rows) against a flat
// parameter leaf; returns the transformed output node (B x out).
Tape::Node mlp_forward(Tape& tape, const ApproximatorSpec& spec, Tape::Node flat_params,
                       Tape::Node input);

// A scalar-valued differentiable function of one flat parameter leaf.
using TapeLoss = std::function<Tape::Node(Tape&, Tape::Node params)>;

// Reverse-mode gradient of loss at params; same length as params.
std::vector<double> grad(const TapeLoss& loss, const ParameterVector& params);

double loss_value(const TapeLoss& loss, const ParameterVector& params);

// Max over coordinates of |analytic - central difference| / (|analytic| + 1e-8).
double finite_diff_check(const TapeLoss& loss, const ParameterVector& params, double step);

// Adam optimizer state (one per trained ParameterVector).
struct OptimizerState {
    std::vector<double> first_moment;
    std::vector<double> second_moment;
    long step_count = 0;
    double learning_rate = 3e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;

    static OptimizerState for_params(const ParameterVector& p, double lr);
};

// Standard Adam update with bias correction; mutates params and state.
// Throws on non-finite gradient entries.
void adam_step(ParameterVector& params, const std::vector<double>& gradient,
               OptimizerState& state);

// Checkpoint format: layout descriptor, flat float64 parameters, optimizer
// moments. Optimizer part may be absent (step_count == -1 sentinel on read).
void write_checkpoint(const std::string& path, const ParameterVector& params,
                      const OptimizerState* opt_state = nullptr);

struct Checkpoint {
    ParameterVector params;
    OptimizerState opt_state;
    bool has_opt_state = false;
};

Checkpoint read_checkpoint(const std::string& path);

// Canonical order-independent mean used by mean_rows (exposed for reuse).
double sorted_tree_sum(std::vector<double> values);

}  // namespace comrl::diffcompute
