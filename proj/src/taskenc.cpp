#include "comrl/taskenc.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

namespace comrl::taskenc {

using diffcompute::ApproximatorSpec;
using diffcompute::Mat;
using diffcompute::ParameterVector;
using diffcompute::Tape;

std::string loss_kind_name(LossKind kind) {
    switch (kind) {
        case LossKind::classifier: return "classifier";
        case LossKind::focal_metric: return "focal_metric";
        case LossKind::reconstruction: return "reconstruction";
        case LossKind::classifier_plus_reconstruction: return "classifier_plus_reconstruction";
    }
    throw std::invalid_argument("loss_kind_name: unknown kind");
}

LossKind loss_kind_from_name(const std::string& name) {
    if (name == "classifier") return LossKind::classifier;
    if (name == "focal_metric") return LossKind::focal_metric;
    if (name == "reconstruction") return LossKind::reconstruction;
    if (name == "classifier_plus_reconstruction") return LossKind::classifier_plus_reconstruction;
    throw std::invalid_argument("loss_kind_from_name: unknown kind '" + name + "'");
}

void EncoderConfig::validate() const {
    if (d_z < 1) throw std::invalid_argument("EncoderConfig: d_z must be >= 1");
    if (update_frequency < 1)
        throw std::invalid_argument("EncoderConfig: update_frequency must be >= 1");
}

EncoderModel EncoderConfig::encoder_model(int state_dim, int action_dim) const {
    validate();
    EncoderModel model;
    model.net.input_dim = 2 * state_dim + action_dim + 1;
    model.net.layer_widths = hidden_widths;
    model.net.layer_widths.push_back(d_z);
    model.net.activation = diffcompute::Activation::tanh_act;
    model.net.output_transform = diffcompute::OutputTransform::identity;
    model.pooled_tanh = bound_latent;
    return model;
}

ApproximatorSpec EncoderConfig::decoder_spec(int state_dim, int action_dim) const {
    validate();
    ApproximatorSpec spec;
    spec.input_dim = state_dim + action_dim + d_z;
    spec.layer_widths = decoder_hidden;
    spec.layer_widths.push_back(state_dim + 1);
    spec.activation = diffcompute::Activation::relu;
    spec.output_transform = diffcompute::OutputTransform::identity;
    return spec;
}

ApproximatorSpec EncoderConfig::head_spec(int n_train) const {
    validate();
    if (n_train < 1) throw std::invalid_argument("EncoderConfig: n_train must be >= 1");
    ApproximatorSpec spec;
    spec.input_dim = d_z;
    spec.layer_widths = {n_train};
    spec.activation = diffcompute::Activation::relu;
    spec.output_transform = diffcompute::OutputTransform::identity;
    return spec;
}

namespace {

// Context rows as a (n x (2*state_dim + action_dim + 1)) matrix of
// (s, a, s', r) columns.
Mat context_matrix(const core::Context& context, int input_dim) {
    if (context.empty()) throw std::invalid_argument("encode: empty context");
    const auto& first = context.records.front();
    const int width = static_cast<int>(2 * first.state.size() + first.action.size() + 1);
    if (width != input_dim)
        throw std::invalid_argument("encode: context row width does not match encoder input");
    Mat m(static_cast<int>(context.size()), width);
    for (int r = 0; r < m.rows; ++r) {
        const auto& rec = context.records[static_cast<std::size_t>(r)];
        if (rec.state.size() != first.state.size() || rec.action.size() != first.action.size() ||
            rec.next_state.size() != first.state.size())
            throw std::invalid_argument("encode: inhomogeneous context rows");
        int c = 0;
        for (double x : rec.state) m.at(r, c++) = x;
        for (double x : rec.action) m.at(r, c++) = x;
        for (double x : rec.next_state) m.at(r, c++) = x;
        m.at(r, c) = rec.reward;
    }
    return m;
}

}  // namespace

core::LatentZ encode(const EncoderModel& model, const ParameterVector& params,
                     const core::Context& context) {
    const Mat rows = context_matrix(context, model.net.input_dim);
    const int d_z = model.net.output_dim();
    std::vector<std::vector<double>> embeddings;
    embeddings.reserve(static_cast<std::size_t>(rows.rows));
    std::vector<double> input(static_cast<std::size_t>(rows.cols));
    for (int r = 0; r < rows.rows; ++r) {
        for (int c = 0; c < rows.cols; ++c) input[static_cast<std::size_t>(c)] = rows.at(r, c);
        embeddings.push_back(diffcompute::forward(model.net, params, input));
    }
    core::LatentZ z;
    z.values.resize(static_cast<std::size_t>(d_z));
    std::vector<double> column(embeddings.size());
    for (int c = 0; c < d_z; ++c) {
        for (std::size_t r = 0; r < embeddings.size(); ++r)
            column[r] = embeddings[r][static_cast<std::size_t>(c)];
        double pooled =
            diffcompute::sorted_tree_sum(column) / static_cast<double>(embeddings.size());
        if (model.pooled_tanh) pooled = std::tanh(pooled);
        z.values[static_cast<std::size_t>(c)] = pooled;
    }
    return z;
}

core::LatentZ encode(const EncoderModel& model, const core::EncoderSnapshot& snapshot,
                     const core::Context& context) {
    ParameterVector params;
    params.layout = diffcompute::ParamLayout::for_mlp(model.net);
    if (snapshot.parameters.size() != params.layout.total)
        throw std::invalid_argument("encode: snapshot parameter count does not match spec");
    params.values = snapshot.parameters;
    return encode(model, params, context);
}

Tape::Node encode_node(Tape& tape, const EncoderModel& model, Tape::Node encoder_params,
                       const core::Context& context) {
    Tape::Node rows = tape.leaf(context_matrix(context, model.net.input_dim));
    Tape::Node embedded = diffcompute::mlp_forward(tape, model.net, encoder_params, rows);
    Tape::Node pooled = tape.mean_rows(embedded);
    return model.pooled_tanh ? tape.tanh_(pooled) : pooled;
}

Tape::Node classifier_loss_node(Tape& tape, const EncoderModel& encoder_model,
                                Tape::Node encoder_params, const ApproximatorSpec& head_spec,
                                Tape::Node head_params, const std::vector<core::Context>& contexts,
                                const std::vector<int>& labels) {
    if (contexts.size() != labels.size())
        throw std::invalid_argument("classifier_loss: context/label count mismatch");
    if (contexts.empty()) throw std::invalid_argument("classifier_loss: empty batch");
    std::vector<Tape::Node> zs;
    zs.reserve(contexts.size());
    for (const auto& c : contexts)
        zs.push_back(encode_node(tape, encoder_model, encoder_params, c));
    Tape::Node z_batch = tape.stack_rows(zs);
    Tape::Node logits = diffcompute::mlp_forward(tape, head_spec, head_params, z_batch);
    return tape.softmax_cross_entropy(logits, labels);
}

double classifier_loss(const TaskEncoder& encoder, const ClassifierHead& head,
                       const std::vector<core::Context>& contexts,
                       const std::vector<int>& labels) {
    Tape tape;
    Tape::Node enc = tape.param(encoder.params);
    Tape::Node hd = tape.param(head.params);
    return tape.scalar(
        classifier_loss_node(tape, encoder.model, enc, head.spec, hd, contexts, labels));
}

Tape::Node focal_metric_loss_node(Tape& tape, const EncoderModel& encoder_model,
                                  Tape::Node encoder_params,
                                  const std::vector<core::Context>& contexts,
                                  const std::vector<int>& labels, double beta, double eps) {
    if (contexts.size() != labels.size())
        throw std::invalid_argument("focal_metric_loss: context/label count mismatch");
    if (contexts.size() < 2) throw std::invalid_argument("focal_metric_loss: needs >= 2 contexts");
    bool has_distinct = false;
    for (std::size_t i = 1; i < labels.size(); ++i)
        if (labels[i] != labels[0]) has_distinct = true;
    if (!has_distinct)
        throw std::invalid_argument("focal_metric_loss: batch must contain >= 2 distinct labels");

    std::vector<Tape::Node> zs;
    zs.reserve(contexts.size());
    for (const auto& c : contexts)
        zs.push_back(encode_node(tape, encoder_model, encoder_params, c));

    Tape::Node one = tape.leaf(Mat(1, 1, {1.0}));
    Tape::Node same_acc = -1;
    Tape::Node diff_acc = -1;
    long n_same = 0;
    long n_diff = 0;
    for (std::size_t i = 0; i < zs.size(); ++i)
        for (std::size_t j = i + 1; j < zs.size(); ++j) {
            Tape::Node d2 = tape.sum_all(tape.square(tape.sub(zs[i], zs[j])));
            if (labels[i] == labels[j]) {
                same_acc = same_acc < 0 ? d2 : tape.add(same_acc, d2);
                ++n_same;
            } else {
                Tape::Node repulse = tape.div_(one, tape.add_scalar(d2, eps));
                diff_acc = diff_acc < 0 ? repulse : tape.add(diff_acc, repulse);
                ++n_diff;
            }
        }
    Tape::Node loss = tape.scale(diff_acc, beta / static_cast<double>(n_diff));
    if (same_acc >= 0)
        loss = tape.add(tape.scale(same_acc, 1.0 / static_cast<double>(n_same)), loss);
    return loss;
}

double focal_metric_loss(const TaskEncoder& encoder, const std::vector<core::Context>& contexts,
                         const std::vector<int>& labels, double beta, double eps) {
    Tape tape;
    Tape::Node enc = tape.param(encoder.params);
    return tape.scalar(
        focal_metric_loss_node(tape, encoder.model, enc, contexts, labels, beta, eps));
}

Tape::Node reconstruction_loss_node(Tape& tape, const EncoderModel& encoder_model,
                                    Tape::Node encoder_params,
                                    const ApproximatorSpec& decoder_spec,
                                    Tape::Node decoder_params,
                                    const std::vector<core::Context>& contexts) {
    if (contexts.empty()) throw std::invalid_argument("reconstruction_loss: empty batch");
    Tape::Node acc = -1;
    for (const auto& context : contexts) {
        const Mat rows = context_matrix(context, encoder_model.net.input_dim);
        const auto& first = context.records.front();
        const int sd = static_cast<int>(first.state.size());
        const int ad = static_cast<int>(first.action.size());
        if (decoder_spec.input_dim != sd + ad + encoder_model.net.output_dim())
            throw std::invalid_argument("reconstruction_loss: decoder input dim mismatch");

        Tape::Node z = encode_node(tape, encoder_model, encoder_params, context);
        // (s, a) inputs and (s', r) targets from the row matrix
        Mat sa(rows.rows, sd + ad);
        Mat target(rows.rows, sd + 1);
        for (int r = 0; r < rows.rows; ++r) {
            for (int c = 0; c < sd + ad; ++c) sa.at(r, c) = rows.at(r, c);
            for (int c = 0; c < sd; ++c) target.at(r, c) = rows.at(r, sd + ad + c);
            target.at(r, sd) = rows.at(r, 2 * sd + ad);
        }
        std::vector<Tape::Node> tiled(static_cast<std::size_t>(rows.rows), z);
        Tape::Node z_rows = tape.stack_rows(tiled);
        Tape::Node input = tape.concat_cols(tape.leaf(std::move(sa)), z_rows);
        Tape::Node pred = diffcompute::mlp_forward(tape, decoder_spec, decoder_params, input);
        Tape::Node mse = tape.mse_against(pred, target);
        acc = acc < 0 ? mse : tape.add(acc, mse);
    }
    return tape.scale(acc, 1.0 / static_cast<double>(contexts.size()));
}

double reconstruction_loss(const TaskEncoder& encoder, const ApproximatorSpec& decoder_spec,
                           const ParameterVector& decoder_params,
                           const std::vector<core::Context>& contexts) {
    Tape tape;
    Tape::Node enc = tape.param(encoder.params);
    Tape::Node dec = tape.param(decoder_params);
    return tape.scalar(
        reconstruction_loss_node(tape, encoder.model, enc, decoder_spec, dec, contexts));
}

bool gated_update(long step, const EncoderConfig& config,
                  const std::function<void()>& update_fn) {
    config.validate();
    if (step < 0) throw std::invalid_argument("gated_update: step must be >= 0");
    if (step % config.update_frequency != 0) return false;
    update_fn();
    return true;
}

double representation_shift(const EncoderModel& model,
                            const core::EncoderSnapshot& snapshot_prev,
                            const core::EncoderSnapshot& snapshot_curr,
                            const std::vector<core::Context>& probe_contexts) {
    if (snapshot_prev.parameters.size() != snapshot_curr.parameters.size())
        throw std::invalid_argument("representation_shift: snapshot parameter length mismatch");
    if (probe_contexts.empty())
        throw std::invalid_argument("representation_shift: probe set must be non-empty");
    double acc = 0.0;
    for (const auto& probe : probe_contexts) {
        const core::LatentZ before = encode(model, snapshot_prev, probe);
        const core::LatentZ after = encode(model, snapshot_curr, probe);
        double l1 = 0.0;
        for (std::size_t i = 0; i < before.values.size(); ++i)
            l1 += std::abs(after.values[i] - before.values[i]);
        acc += l1;
    }
    return acc / static_cast<double>(probe_contexts.size());
}

long ShiftLog::update_count() const {
    long n = 0;
    for (const auto& e : entries)
        if (e.encoder_updated) ++n;
    return n;
}

double ShiftLog::max_shift() const {
    double m = 0.0;
    for (const auto& e : entries) m = std::max(m, e.shift_value);
    return m;
}

double ShiftLog::mean_update_shift() const {
    double acc = 0.0;
    long n = 0;
    for (const auto& e : entries)
        if (e.encoder_updated) {
            acc += e.shift_value;
            ++n;
        }
    return n > 0 ? acc / static_cast<double>(n) : 0.0;
}

void ShiftLog::write_csv(const std::string& path, const std::string& config_digest) const {
    std::ofstream file(path, std::ios::trunc);
    if (!file) throw std::runtime_error("ShiftLog::write_csv: cannot open " + path);
    file << "# config_digest=" << config_digest << "\n";
    file << "step_index,shift_value,encoder_updated_flag\n";
    char buf[64];
    for (const auto& e : entries) {
        std::snprintf(buf, sizeof(buf), "%.17g", e.shift_value);
        file << e.step_index << "," << buf << "," << (e.encoder_updated ? 1 : 0) << "\n";
    }
}

}  // namespace comrl::taskenc
